#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "difftrace/graph.hpp"

namespace difftrace {

struct Snapshot;
struct Episode;

/// Learned per-edge activation probabilities. Entry (i, j) is the
/// probability that infected node i activates neighbor j; asymmetric,
/// zero wherever there is no edge.
class InfluenceMatrix {
public:
    struct Triplet {
        int row, col;
        double value;
    };

    InfluenceMatrix() = default;
    InfluenceMatrix(const Graph& g, double fill = 0.0);

    int node_count() const { return node_count_; }
    double at(int i, int j) const;
    void set(int i, int j, double value);  // throws off the edge mask
    bool edge(int i, int j) const;

    const std::vector<Triplet>& triplets() const { return triplets_; }
    Eigen::MatrixXd dense() const;

    /// clamp every stored value into [0, 1]
    void project_to_unit();

    std::string graph_checksum() const { return graph_checksum_; }

    /// Sparse triplet text file with the mask provenance in the header.
    void save(const std::string& path) const;
    static InfluenceMatrix load(const std::string& path, const Graph& g);

private:
    int node_count_ = 0;
    std::vector<Triplet> triplets_;               // both directions of every edge
    std::vector<std::vector<int>> slot_of_row_;   // node -> triplet indices with row==node
    std::vector<int> slot_lookup_dense_;          // row*n+col -> slot+1, 0 = no edge
    std::string graph_checksum_;

    int slot(int i, int j) const;
};

struct EstimatorConfig {
    enum class Mode { Mlp, FreeParams };
    Mode mode = Mode::Mlp;
    double learning_rate = 0.05;
    int epoch_budget = 300;
    double init_low = 0.05;   // free-parameter initialization range
    double init_high = 0.15;
    double tolerance = 1e-6;  // early exit when improvement stays below this
    int tolerance_window = 10;
    int mlp_hidden = 16;
    std::uint64_t seed = 1;

    void validate() const;
};

struct InfluenceFitResult {
    InfluenceMatrix matrix;
    std::vector<double> loss_history;
    int epochs_run = 0;
};

/// One-step infection probabilities: for each node i,
///   1 - prod_{j in N(i)} (1 - W_ji * (Y_j^s - Y_j^{s-1})).
/// Nodes with no newly infected neighbor map to 0.
Eigen::VectorXd predict_next_state(const InfluenceMatrix& w, const Graph& g,
                                   const Snapshot& y_s, const Snapshot& y_prev);

/// Fits the influence matrix by MSE between the one-step prediction over
/// consecutive available snapshots and the observed next snapshot.
/// The state before the first available snapshot is taken as all-zero.
InfluenceFitResult fit_influence(const Graph& g, const std::vector<Episode>& episodes,
                                 const EstimatorConfig& cfg);

}  // namespace difftrace
