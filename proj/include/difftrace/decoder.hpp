#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace difftrace {

/// Recurrent hidden width per direction. The four-wide concatenation of
/// both directions is what the attention projection expects; this is a
/// structural constant, not a tunable.
inline constexpr int kGruHidden = 2;

struct DecoderConfig {
    int attention_heads = 4;
    enum class Aggregation { MeanOverTimestamps, LastTimestamp };
    Aggregation aggregation = Aggregation::MeanOverTimestamps;
    // Activation applied to the per-head combination before heads are
    // averaged and row-softmaxed. A rectifier there censors negative
    // class logits and measurably degrades the trained head below the
    // plain averaged-hidden readout; tanh keeps the sign information.
    enum class OutputActivation { Tanh, ReLU };
    OutputActivation output_activation = OutputActivation::Tanh;
    // What the attention coefficients weight. BandNeighbors mixes the
    // projected values of the band timestamps (standard attention, the
    // coefficients carry gradient); SameTimestamp reproduces the printed
    // combination where only timestamp i's values enter and the
    // coefficients collapse against their own normalization.
    enum class AttentionValues { BandNeighbors, SameTimestamp };
    AttentionValues attention_values = AttentionValues::BandNeighbors;

    void validate() const;
};

/// Gate layout follows the usual reset/update/new packing: rows
/// [0,h) reset, [h,2h) update, [2h,3h) candidate.
struct GruWeights {
    Eigen::MatrixXd w_ih;  // 3h x d
    Eigen::MatrixXd w_hh;  // 3h x h
    Eigen::VectorXd b_ih;  // 3h
    Eigen::VectorXd b_hh;  // 3h
};

struct AttentionHead {
    Eigen::MatrixXd w_a;  // 4 x 2 projection
    Eigen::VectorXd a;    // 4, scoring vector over a concatenated pair
};

struct DecoderWeights {
    GruWeights forward;
    GruWeights backward;
    std::vector<AttentionHead> heads;  // empty under the no-attention variant

    void init(int input_width, const DecoderConfig& cfg, std::uint64_t seed,
              bool with_attention = true);
};

struct PredictionResult {
    std::vector<Eigen::MatrixXd> per_timestamp;  // |V| x 2 row distributions
    Eigen::VectorXd aggregated;                  // source-class score per node
    std::vector<int> selected;                   // R*, ascending
};

/// Per-step caches kept for backpropagation through time.
struct GruCache {
    std::vector<Eigen::MatrixXd> reset, update, candidate;  // |V| x h
    std::vector<Eigen::MatrixXd> hidden;                    // h_0..h_T, |V| x h
    std::vector<Eigen::MatrixXd> gh_candidate;              // W_hn h_{t-1} + b_hn
};

struct AttentionCache {
    // [head][timestamp]
    std::vector<std::vector<Eigen::MatrixXd>> projected;      // |V| x 2
    std::vector<std::vector<Eigen::MatrixXd>> scores;         // pre-ReLU e, |V| x band width
    std::vector<std::vector<Eigen::MatrixXd>> phi;            // |V| x zeta band rows
    std::vector<std::vector<Eigen::MatrixXd>> combined;       // pre-activation S
    std::vector<Eigen::MatrixXd> pooled;                      // u, |V| x 2
    std::vector<Eigen::MatrixXd> out;                         // row softmax of u
};

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> band_mask(int zeta);

/// One direction of the recurrence over the timestamp axis; nodes are
/// independent batch rows. Returns hidden states per input step.
std::vector<Eigen::MatrixXd> gru_forward(const std::vector<Eigen::MatrixXd>& inputs,
                                         const GruWeights& w, bool reverse,
                                         GruCache* cache = nullptr);

/// Bidirectional decode: concatenates forward and backward hidden states
/// per timestamp into |V| x 4 blocks.
std::vector<Eigen::MatrixXd> bigru_decode(const std::vector<Eigen::MatrixXd>& seq,
                                          const DecoderWeights& w,
                                          GruCache* cache_f = nullptr,
                                          GruCache* cache_b = nullptr);

/// Band-restricted temporal attention over the Bi-GRU outputs, averaged
/// over heads and row-softmaxed into class distributions.
std::vector<Eigen::MatrixXd> temporal_attention(const std::vector<Eigen::MatrixXd>& rhats,
                                                const DecoderConfig& cfg,
                                                const DecoderWeights& w,
                                                AttentionCache* cache = nullptr);

/// No-attention variant: softmax((h_fwd + h_bwd) / 2) per timestamp.
std::vector<Eigen::MatrixXd> mean_pool_prediction(const std::vector<Eigen::MatrixXd>& rhats);

/// Aggregates source-class probabilities over timestamps and picks the
/// top Z nodes; ties break toward the smaller node id.
std::vector<int> select_sources(const std::vector<Eigen::MatrixXd>& per_timestamp, int z,
                                DecoderConfig::Aggregation agg =
                                    DecoderConfig::Aggregation::MeanOverTimestamps);

Eigen::VectorXd aggregate_source_scores(const std::vector<Eigen::MatrixXd>& per_timestamp,
                                        DecoderConfig::Aggregation agg);

}  // namespace difftrace
