#include "difftrace/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "difftrace/rng.hpp"

namespace difftrace {

void TrainConfig::validate() const {
    if (folds < 2) throw std::invalid_argument("TrainConfig: folds must be >= 2");
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    if (epoch_budget < 1) throw std::invalid_argument("TrainConfig: epoch budget must be >= 1");
    if (learning_rate <= 0) throw std::invalid_argument("TrainConfig: learning rate must be > 0");
    if (!(validation_fraction > 0.0 && validation_fraction < 0.5))
        throw std::invalid_argument("TrainConfig: validation_fraction must be in (0, 0.5)");
    if (single_fold >= folds) throw std::invalid_argument("TrainConfig: single_fold out of range");
    encoder.validate();
    decoder.validate();
    estimator.validate();
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.encoder = encoder;
    m.decoder = decoder;
    m.variant = ablation;
    m.loss.selector = loss_selector;
    m.loss.graph_term_as_printed = graph_loss_literal;
    m.loss.aggregation = aggregation;
    return m;
}

namespace {

struct FoldSplit {
    std::vector<int> train, val, test;
};

FoldSplit make_split(int episode_count, int folds, int fold, double validation_fraction) {
    FoldSplit s;
    std::vector<int> pool;
    for (int i = 0; i < episode_count; ++i) {
        if (i % folds == fold)
            s.test.push_back(i);
        else
            pool.push_back(i);
    }
    const int n_val = std::max(1, static_cast<int>(std::ceil(validation_fraction * pool.size())));
    if (s.test.empty() || static_cast<int>(pool.size()) <= n_val)
        throw std::invalid_argument("train: fold too small");
    s.val.assign(pool.end() - n_val, pool.end());
    s.train.assign(pool.begin(), pool.end() - n_val);
    return s;
}

LossBreakdown mean_loss(const Model& model, const std::vector<EpisodeTensors>& tensors,
                        const std::vector<int>& idx) {
    LossBreakdown acc;
    for (int i : idx) {
        const auto l = model.evaluate(tensors[i]).loss;
        acc.entropy += l.entropy;
        acc.mse += l.mse;
        acc.graph += l.graph;
        acc.total += l.total;
    }
    const double n = static_cast<double>(idx.size());
    acc.entropy /= n;
    acc.mse /= n;
    acc.graph /= n;
    acc.total /= n;
    return acc;
}

MetricReport evaluate_test_set(const Model& model, const std::vector<EpisodeTensors>& tensors,
                               const std::vector<Episode>& episodes,
                               const std::vector<int>& idx, const Graph& g) {
    std::vector<EpisodeMetrics> rows;
    rows.reserve(idx.size());
    for (int i : idx) {
        const auto& ep = episodes[i];
        const int z = static_cast<int>(ep.sources.size());
        const auto predicted = model.predict_sources(tensors[i], z);
        const auto f = f1_score(ep.sources, predicted);
        EpisodeMetrics m;
        m.episode_id = ep.episode_id;
        m.f1 = f.f1;
        m.precision = f.precision;
        m.recall = f.recall;
        m.aed = average_error_distance(ep.sources, predicted, g);
        rows.push_back(m);
    }
    return MetricReport::from_episodes(std::move(rows));
}

double baseline_mean_f1(const std::vector<Episode>& episodes, const std::vector<int>& idx,
                        const Graph& g, bool random, std::uint64_t seed) {
    double acc = 0.0;
    for (int i : idx) {
        const auto& ep = episodes[i];
        const int z = static_cast<int>(ep.sources.size());
        const auto pred = random
                              ? random_baseline(g, z, derive_seed(seed, 0xBA5E + ep.episode_id))
                              : degree_baseline(g, z);
        acc += f1_score(ep.sources, pred).f1;
    }
    return idx.empty() ? 0.0 : acc / idx.size();
}

}  // namespace

TrainResult train(const Graph& g, const std::vector<Episode>& episodes, const TrainConfig& cfg,
                  const InfluenceMatrix* fitted) {
    cfg.validate();
    if (episodes.empty()) throw std::invalid_argument("train: empty dataset");
    const int n = g.node_count();

    TrainResult result;
    result.influence =
        fitted ? *fitted : fit_influence(g, episodes, cfg.estimator).matrix;

    const Eigen::MatrixXd norm_adj_w = normalized_adjacency(g, &result.influence);
    const Eigen::MatrixXd norm_adj_plain = normalized_adjacency(g, nullptr);

    std::vector<EpisodeTensors> tensors;
    tensors.reserve(episodes.size());
    for (const auto& ep : episodes)
        tensors.push_back(build_episode_tensors(ep, g, norm_adj_w, result.influence));

    std::vector<int> fold_ids;
    if (cfg.single_fold >= 0)
        fold_ids.push_back(cfg.single_fold);
    else
        for (int k = 0; k < cfg.folds; ++k) fold_ids.push_back(k);

    const ModelConfig mcfg = cfg.model_config();
    bool checkpoint_taken = false;

    for (int fold : fold_ids) {
        const auto split =
            make_split(static_cast<int>(episodes.size()), cfg.folds, fold, cfg.validation_fraction);

        Model model(n, norm_adj_plain, mcfg, derive_seed(cfg.seed, 0xF01D + fold));
        Model::Snapshot best = model.snapshot();
        double best_val = std::numeric_limits<double>::infinity();
        int best_epoch = 0, stopped_epoch = 0, since_best = 0;

        for (int epoch = 1; epoch <= cfg.epoch_budget; ++epoch) {
            std::vector<int> order = split.train;
            Rng shuffle_rng(derive_seed(cfg.seed, fold * 1000003ULL + epoch));
            shuffle_rng.shuffle(order);

            double train_total = 0.0;
            for (int i : order) train_total += model.train_step(tensors[i], cfg.learning_rate).total;
            train_total /= static_cast<double>(order.size());

            const LossBreakdown val = mean_loss(model, tensors, split.val);
            result.curves.push_back(
                {fold, epoch, train_total, val.entropy, val.mse, val.graph, val.total});

            if (!std::isfinite(val.total)) {
                std::ostringstream os;
                os << "train: divergence at fold " << fold << " epoch " << epoch
                   << " (val loss " << val.total << ")";
                throw std::runtime_error(os.str());
            }

            stopped_epoch = epoch;
            if (val.total < best_val - 1e-12) {
                best_val = val.total;
                best_epoch = epoch;
                best = model.snapshot();
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                break;
            }
        }
        model.restore(best);

        FoldResult fr;
        fr.fold = fold;
        fr.best_epoch = best_epoch;
        fr.stopped_epoch = stopped_epoch;
        fr.best_val_loss = best_val;
        fr.test = evaluate_test_set(model, tensors, episodes, split.test, g);
        fr.degree_f1 = baseline_mean_f1(episodes, split.test, g, false, cfg.seed);
        fr.random_f1 = baseline_mean_f1(episodes, split.test, g, true, cfg.seed);
        result.folds.push_back(std::move(fr));

        if (!checkpoint_taken) {
            checkpoint_taken = true;
            Checkpoint ck;
            ck.graph_checksum = g.checksum();
            ck.node_count = n;
            ck.topology_width = cfg.encoder.resolve_topology_width(n);
            ck.model = mcfg;
            ck.model.encoder.topology_width = ck.topology_width;  // pin the resolved width
            ck.estimator = cfg.estimator;
            ck.encoder = model.encoder_weights();
            ck.decoder = model.decoder_weights();
            ck.seed = cfg.seed;
            result.checkpoint = std::move(ck);
        }
    }

    const double nf = static_cast<double>(result.folds.size());
    for (const auto& fr : result.folds) {
        result.mean_f1 += fr.test.f1 / nf;
        result.mean_precision += fr.test.precision / nf;
        result.mean_recall += fr.test.recall / nf;
        result.mean_aed += fr.test.aed / nf;
        result.mean_degree_f1 += fr.degree_f1 / nf;
        result.mean_random_f1 += fr.random_f1 / nf;
    }
    return result;
}

TrainResult run_ablation(const Graph& g, const std::vector<Episode>& episodes,
                         AblationVariant variant, TrainConfig cfg) {
    cfg.ablation = variant;
    return train(g, episodes, cfg);
}

TransferResult transfer_evaluate(const Checkpoint& ck, const Graph& target,
                                 const std::vector<Episode>& episodes) {
    if (ck.version != kCheckpointVersion)
        throw std::runtime_error("transfer_evaluate: incompatible checkpoint version");
    if (episodes.empty()) throw std::invalid_argument("transfer_evaluate: empty dataset");
    const int n = target.node_count();

    TransferResult result;
    // the estimator is inference-time preprocessing: re-fit on the target snapshots
    result.influence = fit_influence(target, episodes, ck.estimator).matrix;

    const Eigen::MatrixXd norm_adj_w = normalized_adjacency(target, &result.influence);
    const Eigen::MatrixXd norm_adj_plain = normalized_adjacency(target, nullptr);

    ModelConfig mcfg = ck.model;
    mcfg.encoder.topology_width = ck.topology_width;  // keep the trained width
    Model model(n, norm_adj_plain, mcfg, ck.seed);

    // trained weights; the topology rows are truncated or zero-padded to
    // the target node count, everything else is node-count independent
    EncoderWeights enc = ck.encoder;
    Eigen::MatrixXd w_topo = Eigen::MatrixXd::Zero(n, ck.topology_width);
    const int copy_rows = std::min(n, ck.node_count);
    w_topo.topRows(copy_rows) = ck.encoder.w_topo.topRows(copy_rows);
    enc.w_topo = std::move(w_topo);
    model.encoder_weights() = enc;
    model.decoder_weights() = ck.decoder;

    std::vector<EpisodeTensors> tensors;
    std::vector<int> idx;
    tensors.reserve(episodes.size());
    for (int i = 0; i < static_cast<int>(episodes.size()); ++i) {
        tensors.push_back(build_episode_tensors(episodes[i], target, norm_adj_w, result.influence));
        idx.push_back(i);
    }
    result.model = evaluate_test_set(model, tensors, episodes, idx, target);
    result.degree_f1 = baseline_mean_f1(episodes, idx, target, false, ck.seed);
    result.random_f1 = baseline_mean_f1(episodes, idx, target, true, ck.seed);
    return result;
}

nlohmann::json train_result_to_json(const TrainResult& r, const TrainConfig& cfg) {
    nlohmann::json j;
    j["mean"] = {{"f1", r.mean_f1},
                 {"precision", r.mean_precision},
                 {"recall", r.mean_recall},
                 {"aed", r.mean_aed},
                 {"degree_f1", r.mean_degree_f1},
                 {"random_f1", r.mean_random_f1}};
    j["ablation"] = ablation_name(cfg.ablation);
    j["loss_selector"] = loss_selector_name(cfg.loss_selector);
    j["seed"] = cfg.seed;
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : r.folds) {
        folds.push_back({{"fold", f.fold},
                         {"f1", f.test.f1},
                         {"precision", f.test.precision},
                         {"recall", f.test.recall},
                         {"aed", f.test.aed},
                         {"degree_f1", f.degree_f1},
                         {"random_f1", f.random_f1},
                         {"best_epoch", f.best_epoch},
                         {"stopped_epoch", f.stopped_epoch},
                         {"best_val_loss", f.best_val_loss},
                         {"test_episodes", f.test.episode_count}});
    }
    j["folds"] = std::move(folds);
    return j;
}

nlohmann::json transfer_result_to_json(const TransferResult& r) {
    nlohmann::json j;
    j["mean"] = {{"f1", r.model.f1},
                 {"precision", r.model.precision},
                 {"recall", r.model.recall},
                 {"aed", r.model.aed},
                 {"degree_f1", r.degree_f1},
                 {"random_f1", r.random_f1}};
    j["episodes"] = r.model.episode_count;
    return j;
}

std::string render_metrics_table(const nlohmann::json& metrics) {
    std::ostringstream os;
    const auto& m = metrics.at("mean");
    os << "metric      value\n";
    os << "---------   --------\n";
    char buf[64];
    auto row = [&](const char* name, double v) {
        std::snprintf(buf, sizeof(buf), "%-11s %.4f\n", name, v);
        os << buf;
    };
    row("f1", m.at("f1").get<double>());
    row("precision", m.at("precision").get<double>());
    row("recall", m.at("recall").get<double>());
    row("aed", m.at("aed").get<double>());
    row("degree_f1", m.at("degree_f1").get<double>());
    row("random_f1", m.at("random_f1").get<double>());
    if (metrics.contains("folds")) {
        os << "\nfold  f1      aed     best_epoch  stopped\n";
        for (const auto& f : metrics["folds"]) {
            std::snprintf(buf, sizeof(buf), "%-5d %.4f  %.4f  %-11d %d\n",
                          f.at("fold").get<int>(), f.at("f1").get<double>(),
                          f.at("aed").get<double>(), f.at("best_epoch").get<int>(),
                          f.at("stopped_epoch").get<int>());
            os << buf;
        }
    }
    return os.str();
}

}  // namespace difftrace
