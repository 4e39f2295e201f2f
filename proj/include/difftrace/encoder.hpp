#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "difftrace/graph.hpp"
#include "difftrace/influence.hpp"
#include "difftrace/simulate.hpp"

namespace difftrace {

struct EncoderConfig {
    int h_one = 32;          // GCN hidden size for the per-timestamp block
    double alpha = 1.0;      // residual weight on the raw state
    double l_eps = 0.95;     // Lipschitz bound for the GCN weight, < 1
    enum class Activation { ReLU, Tanh } activation = Activation::ReLU;
    int topology_width = 0;  // 0 = ceil(sqrt(|V|))
    // enough iterations to bring the norm estimate within ~1e-3 even for
    // near-degenerate singular values; 5 leaves the estimate several
    // percent low on adversarial matrices and the projection overshoots
    int power_iterations = 30;

    void validate() const;
    int resolve_topology_width(int node_count) const;
};

struct EncoderWeights {
    Eigen::MatrixXd w_gcn;    // 2 x h_one, spectrally bounded
    Eigen::VectorXd readout;  // h_one -> 1
    Eigen::MatrixXd w_topo;   // |V| x topology width

    void init(int node_count, const EncoderConfig& cfg, std::uint64_t seed);
};

/// Per-available-timestamp node embeddings, columns [H1 | H2 | H3 | H_G].
struct EmbeddingSequence {
    std::vector<int> timestamps;
    std::vector<Eigen::MatrixXd> features;  // |V| x (3 + topology width) each

    int zeta() const { return static_cast<int>(features.size()); }
};

double apply_activation(EncoderConfig::Activation a, double x);
Eigen::MatrixXd apply_activation(EncoderConfig::Activation a, const Eigen::MatrixXd& m);

/// Power-iteration estimate of the largest singular value.
double spectral_norm_estimate(const Eigen::MatrixXd& m, int iterations);

/// Rescales w_gcn in place whenever its spectral norm estimate exceeds
/// 0.98 * l_eps, keeping it strictly inside the configured bound. Called
/// after init and after every optimizer update.
void project_spectral(EncoderWeights& weights, const EncoderConfig& cfg);

/// H1: one-hot GCN over A+I+W with a linear readout, plus alpha * Y.
Eigen::VectorXd coarse_feature(const Snapshot& y, const Graph& g, const InfluenceMatrix& w,
                               const EncoderConfig& cfg, const EncoderWeights& weights);

/// H2: mean incoming influence from infected neighbors.
Eigen::VectorXd infected_feature(const Snapshot& y, const Graph& g, const InfluenceMatrix& w);

/// H3: mean incoming influence from uninfected neighbors.
Eigen::VectorXd uninfected_feature(const Snapshot& y, const Graph& g, const InfluenceMatrix& w);

/// H_G: one GCN layer over the identity features of A+I (no W term).
Eigen::MatrixXd topology_feature(const Graph& g, const EncoderConfig& cfg,
                                 const EncoderWeights& weights);

EmbeddingSequence encode_episode(const Episode& ep, const Graph& g, const InfluenceMatrix& w,
                                 const EncoderConfig& cfg, const EncoderWeights& weights);

}  // namespace difftrace
