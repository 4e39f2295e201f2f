#include <cmath>
#include <filesystem>

#include "difftrace/checkpoint.hpp"
#include "difftrace/dataset.hpp"
#include "difftrace/serialize.hpp"
#include "difftrace/train.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace difftrace;

namespace {

std::vector<Eigen::MatrixXd> as_distribution(const std::vector<Eigen::VectorXd>& source_prob) {
    std::vector<Eigen::MatrixXd> out;
    for (const auto& p : source_prob) {
        Eigen::MatrixXd m(p.size(), 2);
        m.col(1) = p;
        m.col(0) = 1.0 - p.array();
        out.push_back(std::move(m));
    }
    return out;
}

struct SmallInstance {
    Graph g;
    std::vector<Episode> episodes;
    InfluenceMatrix influence;
    std::vector<EpisodeTensors> tensors;
    Eigen::MatrixXd norm_plain;
};

SmallInstance small_instance(int episode_count, std::uint64_t seed, int n_prime = 3) {
    SmallInstance s{Graph(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {1, 4}, {0, 2}}),
                    {},
                    {},
                    {},
                    {}};
    GenerateConfig gc;
    gc.model.low = 0.4;
    gc.model.high = 0.9;
    gc.episode_count = episode_count;
    gc.source_fraction = 0.2;
    gc.n_prime = n_prime;
    gc.master_seed = seed;
    gc.graph_id = "toy";
    s.episodes = generate_dataset(s.g, gc);
    EstimatorConfig est;
    est.seed = derive_seed(seed, 1);
    est.epoch_budget = 60;
    s.influence = fit_influence(s.g, s.episodes, est).matrix;
    const Eigen::MatrixXd norm_w = normalized_adjacency(s.g, &s.influence);
    s.norm_plain = normalized_adjacency(s.g, nullptr);
    for (const auto& ep : s.episodes)
        s.tensors.push_back(build_episode_tensors(ep, s.g, norm_w, s.influence));
    return s;
}

}  // namespace

TEST_CASE("perfect prediction floors every loss term") {
    Eigen::VectorXd r_hot(4);
    r_hot << 1, 0, 0, 1;
    std::vector<Eigen::VectorXd> probs(2, r_hot);
    std::vector<Eigen::VectorXd> h1(2, r_hot);
    LossOptions opts;
    auto l = compute_loss(r_hot, as_distribution(probs), h1, opts);
    CHECK(l.entropy == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(l.mse == 0.0);
    CHECK(l.graph == 0.0);
    CHECK(l.total == l.entropy + l.mse + l.graph);
}

TEST_CASE("uniform prediction costs ln 2 per node in the main term") {
    Eigen::VectorXd r_hot(5);
    r_hot << 1, 0, 0, 0, 1;
    std::vector<Eigen::VectorXd> probs(3, Eigen::VectorXd::Constant(5, 0.5));
    LossOptions opts;
    opts.selector = LossSelector::NoMse;
    auto l = compute_loss(r_hot, as_distribution(probs), {}, opts);
    CHECK(l.entropy == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("each loss term matches an independent hand computation") {
    // 6 nodes, sources {0, 4}, two timestamps
    Eigen::VectorXd r_hot(6);
    r_hot << 1, 0, 0, 0, 1, 0;
    Eigen::VectorXd p(6);
    p << 0.8, 0.3, 0.1, 0.2, 0.6, 0.4;  // aggregated prediction (both steps equal)
    std::vector<Eigen::VectorXd> probs(2, p);
    Eigen::VectorXd h1a(6), h1b(6);
    h1a << 0.9, 0.1, 0.0, 0.3, 0.5, 0.2;
    h1b << 0.7, 0.2, 0.1, 0.1, 0.8, 0.0;
    LossOptions opts;
    auto l = compute_loss(r_hot, as_distribution(probs), {h1a, h1b}, opts);

    double want_entropy = 0.0;
    for (int v = 0; v < 6; ++v)
        want_entropy -= r_hot(v) * std::log(p(v)) + (1 - r_hot(v)) * std::log(1 - p(v));
    want_entropy /= 6.0;
    CHECK(l.entropy == doctest::Approx(want_entropy).epsilon(1e-12));

    double want_mse = ((h1a - r_hot).squaredNorm() + (h1b - r_hot).squaredNorm()) / 12.0;
    CHECK(l.mse == doctest::Approx(want_mse).epsilon(1e-12));

    const double rho = 2.0 / 6.0;
    double want_graph = rho * (0.3 + 0.1 + 0.2 + 0.4) + (1 - rho) * ((1 - 0.8) + (1 - 0.6));
    CHECK(l.graph == doctest::Approx(want_graph).epsilon(1e-12));
    CHECK(l.total == doctest::Approx(l.entropy + l.mse + l.graph).epsilon(1e-12));
}

TEST_CASE("selectors zero or substitute the stated terms") {
    Eigen::VectorXd r_hot(4);
    r_hot << 1, 0, 0, 0;
    Eigen::VectorXd p = Eigen::VectorXd::Constant(4, 0.25);
    std::vector<Eigen::VectorXd> probs(2, p);
    std::vector<Eigen::VectorXd> h1(2, Eigen::VectorXd::Zero(4));

    LossOptions full;
    auto lf = compute_loss(r_hot, as_distribution(probs), h1, full);

    LossOptions no_mse;
    no_mse.selector = LossSelector::NoMse;
    auto lm = compute_loss(r_hot, as_distribution(probs), h1, no_mse);
    CHECK(lm.mse == 0.0);
    CHECK(lm.entropy == lf.entropy);
    CHECK(lm.graph == lf.graph);

    LossOptions no_g;
    no_g.selector = LossSelector::NoGraph;
    auto lg = compute_loss(r_hot, as_distribution(probs), h1, no_g);
    CHECK(lg.graph == 0.0);

    LossOptions e2m;
    e2m.selector = LossSelector::EntropyToMse;
    auto le = compute_loss(r_hot, as_distribution(probs), h1, e2m);
    CHECK(le.entropy == doctest::Approx((p - r_hot).squaredNorm() / 4.0).epsilon(1e-12));

    // printed-orientation switch rewards the same prediction instead
    LossOptions printed;
    printed.graph_term_as_printed = true;
    auto lp = compute_loss(r_hot, as_distribution(probs), h1, printed);
    const double rho = 0.25;
    CHECK(lp.graph ==
          doctest::Approx(rho * 3 * 0.75 + (1 - rho) * 0.25).epsilon(1e-12));
}

TEST_CASE("loss decomposition holds across random inputs") {
    Rng rng(90);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 5 + static_cast<int>(rng.next_below(6));
        Eigen::VectorXd r_hot(n);
        for (int i = 0; i < n; ++i) r_hot(i) = rng.bernoulli(0.3) ? 1.0 : 0.0;
        std::vector<Eigen::VectorXd> probs(3), h1(3);
        for (int j = 0; j < 3; ++j) {
            probs[j] = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) {
                return 0.05 + 0.9 * rng.next_double();
            });
            h1[j] = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) {
                return rng.uniform(-1.0, 1.0);
            });
        }
        LossOptions opts;
        auto l = compute_loss(r_hot, as_distribution(probs), h1, opts);
        CHECK(std::abs(l.total - (l.entropy + l.mse + l.graph)) < 1e-9);
    }
}

TEST_CASE("compute_loss rejects malformed input") {
    Eigen::VectorXd r_hot(3);
    r_hot << 1, 0, 0;
    CHECK_THROWS_AS(compute_loss(r_hot, {}, {}, LossOptions{}), std::invalid_argument);
    std::vector<Eigen::MatrixXd> bad = {Eigen::MatrixXd::Zero(3, 3)};
    CHECK_THROWS_AS(compute_loss(r_hot, bad, {}, LossOptions{}), std::invalid_argument);
    std::vector<Eigen::MatrixXd> nan_pred = {Eigen::MatrixXd::Constant(3, 2, NAN)};
    CHECK_THROWS_AS(compute_loss(r_hot, nan_pred, {}, LossOptions{}), std::invalid_argument);
}

TEST_CASE("model loss equals the standalone loss operation") {
    auto inst = small_instance(3, 5);
    ModelConfig mc;
    mc.encoder.h_one = 8;
    Model model(6, inst.norm_plain, mc, 77);
    for (const auto& t : inst.tensors) {
        auto fwd = model.evaluate(t);
        auto direct = compute_loss(t.r_hot, fwd.rhat_prime, fwd.h1, mc.loss);
        CHECK(fwd.loss.total == doctest::Approx(direct.total).epsilon(1e-15));
    }
}

TEST_CASE("end-to-end gradients match finite differences on a 6-node instance") {
    auto inst = small_instance(4, 21);
    // pick an episode with three available snapshots
    const EpisodeTensors* ep = nullptr;
    for (const auto& t : inst.tensors)
        if (t.zeta == 3) ep = &t;
    REQUIRE(ep != nullptr);

    for (int setup = 0; setup < 3; ++setup) {
        ModelConfig mc;
        mc.encoder.h_one = 8;
        if (setup == 1) mc.variant = AblationVariant::NoAttention;
        if (setup == 2)
            mc.decoder.attention_values = DecoderConfig::AttentionValues::SameTimestamp;
        Model model(6, inst.norm_plain, mc, 4242);
        auto ps = model.params();
        Rng rng(11);
        int checked = 0;
        while (checked < 5) {
            const int ti = static_cast<int>(rng.next_below(ps.size()));
            const std::size_t fi = rng.next_below(ps[ti].size);
            auto r = gradient_check(model, *ep, ti, fi, 1e-5);
            CHECK(r.rel_error < 1e-3);
            ++checked;
        }
    }
}

TEST_CASE("spectral bound and mask preservation hold while training") {
    auto inst = small_instance(6, 33);
    ModelConfig mc;
    mc.encoder.h_one = 8;
    Model model(6, inst.norm_plain, mc, 9);
    for (int step = 0; step < 30; ++step) {
        model.train_step(inst.tensors[step % inst.tensors.size()], 5e-3);
        CHECK(spectral_norm_estimate(model.encoder_weights().w_gcn, 50) <
              mc.encoder.l_eps);
    }
    // influence values never leak off the mask regardless of training
    Eigen::MatrixXd dense = inst.influence.dense();
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            if (!inst.g.has_edge(i, j)) CHECK(dense(i, j) == 0.0);
}

TEST_CASE("fold partitions are disjoint and cover the dataset") {
    auto inst = small_instance(23, 8);
    TrainConfig cfg;
    cfg.folds = 5;
    cfg.epoch_budget = 2;
    cfg.seed = 3;
    cfg.estimator.epoch_budget = 5;
    auto result = train(inst.g, inst.episodes, cfg, &inst.influence);
    REQUIRE(result.folds.size() == 5);
    std::vector<int> seen;
    for (const auto& f : result.folds)
        for (const auto& e : f.test.per_episode) seen.push_back(static_cast<int>(e.episode_id));
    std::sort(seen.begin(), seen.end());
    std::vector<int> want(23);
    std::iota(want.begin(), want.end(), 0);
    CHECK(seen == want);
}

TEST_CASE("training twice with the same seed is bit-identical") {
    auto inst = small_instance(12, 55);
    TrainConfig cfg;
    cfg.folds = 3;
    cfg.epoch_budget = 4;
    cfg.seed = 19;
    cfg.encoder.h_one = 8;
    cfg.estimator.epoch_budget = 10;
    auto a = train(inst.g, inst.episodes, cfg);
    auto b = train(inst.g, inst.episodes, cfg);
    CHECK(a.mean_f1 == b.mean_f1);
    CHECK(a.mean_aed == b.mean_aed);
    REQUIRE(a.curves.size() == b.curves.size());
    for (std::size_t i = 0; i < a.curves.size(); ++i) {
        CHECK(a.curves[i].train_total == b.curves[i].train_total);
        CHECK(a.curves[i].val_total == b.curves[i].val_total);
    }
    CHECK((a.checkpoint.encoder.w_gcn - b.checkpoint.encoder.w_gcn).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("early stopping restores the best validation weights") {
    auto inst = small_instance(16, 71);
    TrainConfig cfg;
    cfg.folds = 4;
    cfg.single_fold = 0;
    cfg.epoch_budget = 12;
    cfg.patience = 3;
    cfg.seed = 5;
    cfg.encoder.h_one = 8;
    auto result = train(inst.g, inst.episodes, cfg, &inst.influence);
    REQUIRE(result.folds.size() == 1);
    const auto& fold = result.folds[0];
    CHECK(fold.best_epoch <= fold.stopped_epoch);
    CHECK(fold.stopped_epoch <= cfg.epoch_budget);

    // the recorded best validation loss is the minimum of the curve
    double min_val = std::numeric_limits<double>::infinity();
    for (const auto& c : result.curves) min_val = std::min(min_val, c.val_total);
    CHECK(fold.best_val_loss == doctest::Approx(min_val).epsilon(1e-12));

    // rebuilding the checkpointed model reproduces that validation loss
    const Eigen::MatrixXd norm_w = normalized_adjacency(inst.g, &result.influence);
    ModelConfig mc = cfg.model_config();
    mc.encoder.topology_width = result.checkpoint.topology_width;
    Model model(6, inst.norm_plain, mc, 1);
    model.encoder_weights() = result.checkpoint.encoder;
    model.decoder_weights() = result.checkpoint.decoder;
    std::vector<int> val_idx;  // recompute the split the trainer used
    std::vector<int> pool;
    for (int i = 0; i < 16; ++i)
        if (i % cfg.folds != 0) pool.push_back(i);
    const int n_val = static_cast<int>(std::ceil(cfg.validation_fraction * pool.size()));
    val_idx.assign(pool.end() - n_val, pool.end());
    double acc = 0.0;
    for (int i : val_idx) acc += model.evaluate(inst.tensors[i]).loss.total;
    CHECK(acc / val_idx.size() == doctest::Approx(fold.best_val_loss).epsilon(1e-9));
}

TEST_CASE("ablation variants zero their feature blocks") {
    auto inst = small_instance(4, 99);
    const auto& t = inst.tensors.front();

    ModelConfig base;
    base.encoder.h_one = 8;

    ModelConfig no_h1 = base;
    no_h1.variant = AblationVariant::NoCoarse;
    Model m1(6, inst.norm_plain, no_h1, 3);
    auto f1 = m1.evaluate(t);
    for (const auto& h : f1.h1) CHECK(h.cwiseAbs().maxCoeff() == 0.0);

    ModelConfig no_attn = base;
    no_attn.variant = AblationVariant::NoAttention;
    Model m4(6, inst.norm_plain, no_attn, 3);
    CHECK(m4.decoder_weights().heads.empty());
    bool has_attention_params = false;
    for (const auto& p : m4.params())
        if (p.name.find("head") != std::string::npos) has_attention_params = true;
    CHECK(!has_attention_params);
}

TEST_CASE("checkpoints round-trip exactly") {
    auto inst = small_instance(8, 13);
    TrainConfig cfg;
    cfg.folds = 4;
    cfg.single_fold = 1;
    cfg.epoch_budget = 3;
    cfg.seed = 27;
    cfg.encoder.h_one = 8;
    auto result = train(inst.g, inst.episodes, cfg, &inst.influence);

    auto path = (std::filesystem::temp_directory_path() / "ck_rt.json").string();
    save_checkpoint(result.checkpoint, path);
    auto loaded = load_checkpoint(path);
    CHECK(loaded.graph_checksum == result.checkpoint.graph_checksum);
    CHECK(loaded.topology_width == result.checkpoint.topology_width);
    CHECK((loaded.encoder.w_gcn - result.checkpoint.encoder.w_gcn).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.encoder.w_topo - result.checkpoint.encoder.w_topo).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK((loaded.decoder.forward.w_ih - result.checkpoint.decoder.forward.w_ih)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    REQUIRE(loaded.decoder.heads.size() == result.checkpoint.decoder.heads.size());

    // version guard
    json j = json::parse(read_file(path));
    j["version"] = "difftrace-ckpt-0";
    auto bad_path = (std::filesystem::temp_directory_path() / "ck_bad.json").string();
    atomic_write(bad_path, j.dump());
    CHECK_THROWS_WITH_AS(load_checkpoint(bad_path), doctest::Contains("incompatible"),
                         std::runtime_error);
}

TEST_CASE("self-transfer reproduces the native evaluation exactly") {
    auto inst = small_instance(10, 41);
    TrainConfig cfg;
    cfg.folds = 5;
    cfg.single_fold = 0;
    cfg.epoch_budget = 4;
    cfg.seed = 7;
    cfg.encoder.h_one = 8;
    auto trained = train(inst.g, inst.episodes, cfg);

    // native evaluation path on the full dataset
    auto native = transfer_evaluate(trained.checkpoint, inst.g, inst.episodes);
    auto again = transfer_evaluate(trained.checkpoint, inst.g, inst.episodes);
    CHECK(native.model.f1 == again.model.f1);
    CHECK(native.model.aed == again.model.aed);
    REQUIRE(native.model.per_episode.size() == again.model.per_episode.size());
    for (std::size_t i = 0; i < native.model.per_episode.size(); ++i)
        CHECK(native.model.per_episode[i].f1 == again.model.per_episode[i].f1);
}

TEST_CASE("transfer adapts the topology rows to a different node count") {
    auto inst = small_instance(10, 101);
    TrainConfig cfg;
    cfg.folds = 5;
    cfg.single_fold = 0;
    cfg.epoch_budget = 3;
    cfg.seed = 31;
    cfg.encoder.h_one = 8;
    auto trained = train(inst.g, inst.episodes, cfg);

    // target: a bigger graph with its own episodes
    Graph target = oracles::random_graph(9, 0.4, 1234);
    GenerateConfig gc;
    gc.model.low = 0.4;
    gc.model.high = 0.9;
    gc.episode_count = 5;
    gc.source_fraction = 0.2;
    gc.master_seed = 77;
    gc.graph_id = "target";
    auto target_eps = generate_dataset(target, gc);
    auto result = transfer_evaluate(trained.checkpoint, target, target_eps);
    CHECK(result.model.episode_count == 5);
    CHECK(result.model.f1 >= 0.0);
    CHECK(result.influence.node_count() == 9);
}

TEST_CASE("train validates its configuration") {
    auto inst = small_instance(6, 3);
    TrainConfig cfg;
    cfg.folds = 1;
    CHECK_THROWS_AS(train(inst.g, inst.episodes, cfg), std::invalid_argument);
    cfg.folds = 10;
    cfg.patience = 0;
    CHECK_THROWS_AS(train(inst.g, inst.episodes, cfg), std::invalid_argument);
    cfg.patience = 2;
    CHECK_THROWS_AS(train(inst.g, {}, cfg), std::invalid_argument);
}
