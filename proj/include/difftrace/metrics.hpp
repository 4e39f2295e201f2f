#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "difftrace/graph.hpp"

namespace difftrace {

struct F1Result {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Set-overlap precision/recall/F1; the all-zero guard returns 0.
F1Result f1_score(const std::vector<int>& truth, const std::vector<int>& predicted);

/// Exact minimum-cost perfect matching on the Q x Q cost matrix.
double hungarian_min_cost(const Eigen::MatrixXd& cost);

/// Average error distance: mean hop distance between predicted and true
/// sources under the optimal one-to-one matching. Requires equal sizes
/// and throws on disconnected pairs.
double average_error_distance(const std::vector<int>& truth, const std::vector<int>& predicted,
                              const Graph& g);

/// Top-Z nodes by degree, ids breaking ties.
std::vector<int> degree_baseline(const Graph& g, int z);

/// Uniform sample of Z distinct nodes.
std::vector<int> random_baseline(const Graph& g, int z, std::uint64_t seed);

struct EpisodeMetrics {
    std::int64_t episode_id = 0;
    double f1 = 0.0, precision = 0.0, recall = 0.0, aed = 0.0;
};

struct MetricReport {
    double f1 = 0.0, precision = 0.0, recall = 0.0, aed = 0.0;
    int episode_count = 0;
    std::vector<EpisodeMetrics> per_episode;

    static MetricReport from_episodes(std::vector<EpisodeMetrics> rows);
};

}  // namespace difftrace
