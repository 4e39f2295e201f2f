#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "difftrace/decoder.hpp"
#include "difftrace/encoder.hpp"
#include "difftrace/graph.hpp"
#include "difftrace/influence.hpp"
#include "difftrace/loss.hpp"
#include "difftrace/optim.hpp"
#include "difftrace/simulate.hpp"

namespace difftrace {

enum class AblationVariant { None, NoCoarse, NoDynamic, NoTopology, NoAttention };

AblationVariant ablation_from_name(const std::string& name);
std::string ablation_name(AblationVariant v);

/// Fixed per-episode inputs for the end-to-end stage: everything that does
/// not depend on trainable weights is computed once up front.
struct EpisodeTensors {
    std::vector<Eigen::MatrixXd> propagated_onehot;  // N * X_j, |V| x 2
    std::vector<Eigen::VectorXd> infected;           // Y_j as doubles
    std::vector<Eigen::VectorXd> h2, h3;
    Eigen::VectorXd r_hot;
    std::vector<int> sources;
    int zeta = 0;
};

EpisodeTensors build_episode_tensors(const Episode& ep, const Graph& g,
                                     const Eigen::MatrixXd& norm_adj_w,
                                     const InfluenceMatrix& w);

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    AblationVariant variant = AblationVariant::None;
    LossOptions loss;
};

/// End-to-end trainable encoder + decoder. Forward passes are pure; the
/// training step accumulates hand-derived gradients and applies Adam,
/// re-projecting the GRN weight onto its spectral bound after each update.
class Model {
public:
    Model(int node_count, const Eigen::MatrixXd& norm_adj_plain, const ModelConfig& cfg,
          std::uint64_t seed);

    struct Forward {
        std::vector<Eigen::VectorXd> h1;
        std::vector<Eigen::MatrixXd> rhat_prime;
        LossBreakdown loss;
    };

    /// Intermediate activations kept alive for the backward pass.
    struct ForwardScratch {
        std::vector<Eigen::MatrixXd> embeddings;  // per-timestamp decoder inputs
        std::vector<Eigen::MatrixXd> gcn_pre;     // H1 pre-activations
        Eigen::MatrixXd topo_pre;
        std::vector<Eigen::MatrixXd> rhats;       // Bi-GRU outputs
        GruCache gru_f, gru_b;
        AttentionCache attn;
    };

    /// Forward + loss without touching gradients.
    Forward evaluate(const EpisodeTensors& ep) const;

    /// Forward + backward; gradients land in the buffers exposed by
    /// params() and no weights move.
    LossBreakdown forward_backward(const EpisodeTensors& ep);

    /// Adam update from the accumulated gradients, then the spectral
    /// re-projection of the GRN weight.
    void apply_step(double learning_rate);

    /// forward_backward + apply_step on one episode.
    LossBreakdown train_step(const EpisodeTensors& ep, double learning_rate);

    std::vector<int> predict_sources(const EpisodeTensors& ep, int z) const;

    const ModelConfig& config() const { return cfg_; }
    int node_count() const { return n_; }
    int input_width() const { return input_width_; }

    EncoderWeights& encoder_weights() { return enc_; }
    const EncoderWeights& encoder_weights() const { return enc_; }
    DecoderWeights& decoder_weights() { return dec_; }
    const DecoderWeights& decoder_weights() const { return dec_; }

    /// Named views over every trainable tensor, fixed order.
    struct ParamRef {
        std::string name;
        double* value;
        const double* grad;
        std::size_t size;
    };
    std::vector<ParamRef> params();

    /// Deep copies used by early stopping.
    struct Snapshot {
        EncoderWeights enc;
        DecoderWeights dec;
    };
    Snapshot snapshot() const { return {enc_, dec_}; }
    void restore(const Snapshot& s);

private:
    Forward run_forward(const EpisodeTensors& ep, ForwardScratch* scratch) const;
    void backward(const EpisodeTensors& ep, const Forward& fwd, const ForwardScratch& s);
    void zero_grads();

    int n_;
    int topo_width_;
    int input_width_;
    ModelConfig cfg_;
    Eigen::MatrixXd norm_adj_plain_;  // A + I normalization for H_G

    EncoderWeights enc_;
    DecoderWeights dec_;
    EncoderWeights enc_grad_;
    DecoderWeights dec_grad_;
    std::vector<Adam> opt_;
};

/// Central-difference check of d(loss)/d(parameter value).
struct GradCheckResult {
    std::string param;
    double analytic;
    double numeric;
    double rel_error;
};

GradCheckResult gradient_check(Model& model, const EpisodeTensors& ep, int tensor_index,
                               std::size_t flat_index, double step = 1e-5);

}  // namespace difftrace
