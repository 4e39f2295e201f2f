#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "difftrace/checkpoint.hpp"
#include "difftrace/metrics.hpp"
#include "difftrace/model.hpp"
#include "json.hpp"

namespace difftrace {

struct TrainConfig {
    int folds = 10;
    int epoch_budget = 50;
    int patience = 5;
    double learning_rate = 1e-3;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;
    AblationVariant ablation = AblationVariant::None;
    LossSelector loss_selector = LossSelector::Full;
    bool graph_loss_literal = false;
    DecoderConfig::Aggregation aggregation = DecoderConfig::Aggregation::MeanOverTimestamps;
    int single_fold = -1;  // >= 0: train exactly one fold of the partition
    EncoderConfig encoder;
    DecoderConfig decoder;
    EstimatorConfig estimator;

    void validate() const;
    ModelConfig model_config() const;
};

struct EpochPoint {
    int fold = 0;
    int epoch = 0;  // 1-based
    double train_total = 0.0;
    double val_entropy = 0.0, val_mse = 0.0, val_graph = 0.0, val_total = 0.0;
};

struct FoldResult {
    int fold = 0;
    MetricReport test;
    double degree_f1 = 0.0;
    double random_f1 = 0.0;
    int best_epoch = 0;    // epoch whose weights were kept
    int stopped_epoch = 0; // last epoch run
    double best_val_loss = 0.0;
};

struct TrainResult {
    std::vector<FoldResult> folds;
    double mean_f1 = 0.0, mean_precision = 0.0, mean_recall = 0.0, mean_aed = 0.0;
    double mean_degree_f1 = 0.0, mean_random_f1 = 0.0;
    std::vector<EpochPoint> curves;
    Checkpoint checkpoint;  // best weights of the first trained fold
    InfluenceMatrix influence;
};

/// Stage 1 fits the influence matrix on the dataset snapshots (unless one
/// is supplied), stage 2 trains encoder + decoder fold by fold with early
/// stopping on validation loss; test metrics are averaged across folds.
TrainResult train(const Graph& g, const std::vector<Episode>& episodes, const TrainConfig& cfg,
                  const InfluenceMatrix* fitted = nullptr);

/// Same pipeline with one feature block disabled (or attention replaced).
TrainResult run_ablation(const Graph& g, const std::vector<Episode>& episodes,
                         AblationVariant variant, TrainConfig cfg);

struct TransferResult {
    MetricReport model;
    double degree_f1 = 0.0;
    double random_f1 = 0.0;
    InfluenceMatrix influence;  // re-fitted on the target snapshots
};

/// Applies a trained checkpoint to episodes from any graph: re-fits the
/// influence matrix on the target snapshots, adapts the topology weight
/// rows to the target node count (keeping the trained width), and runs
/// the frozen decoder.
TransferResult transfer_evaluate(const Checkpoint& ck, const Graph& target,
                                 const std::vector<Episode>& episodes);

nlohmann::json train_result_to_json(const TrainResult& r, const TrainConfig& cfg);
nlohmann::json transfer_result_to_json(const TransferResult& r);
std::string render_metrics_table(const nlohmann::json& metrics);

}  // namespace difftrace
