#include "difftrace/encoder.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace difftrace;

namespace {

Snapshot make_snapshot(std::vector<std::uint8_t> state, int t = 0) {
    Snapshot s;
    s.t = t;
    s.state = std::move(state);
    return s;
}

EncoderWeights seeded_weights(int n, const EncoderConfig& cfg, std::uint64_t seed) {
    EncoderWeights w;
    w.init(n, cfg, seed);
    return w;
}

// scalar loops for H1 = act((N X) W) r + alpha * Y
Eigen::VectorXd coarse_oracle(const Snapshot& y, const Graph& g, const Eigen::MatrixXd& w_dense,
                              const EncoderConfig& cfg, const EncoderWeights& weights) {
    const int n = g.node_count();
    const Eigen::MatrixXd norm = oracles::dense_normalized(g, &w_dense);
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = y.state[i] ? 0.0 : 1.0;
        x(i, 1) = y.state[i] ? 1.0 : 0.0;
    }
    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = 0; k < cfg.h_one; ++k) {
            double z = 0.0;
            for (int c = 0; c < 2; ++c) {
                double nx = 0.0;
                for (int j = 0; j < n; ++j) nx += norm(i, j) * x(j, c);
                z += nx * weights.w_gcn(c, k);
            }
            acc += apply_activation(cfg.activation, z) * weights.readout(k);
        }
        out(i) = acc + cfg.alpha * y.state[i];
    }
    return out;
}

}  // namespace

TEST_CASE("coarse feature reduces to the residual with zero weights") {
    Graph g(4, {{0, 1}, {1, 2}, {2, 3}});
    InfluenceMatrix w(g, 0.3);
    EncoderConfig cfg;
    cfg.alpha = 1.0;
    EncoderWeights weights = seeded_weights(4, cfg, 1);
    weights.w_gcn.setZero();
    auto y = make_snapshot({1, 0, 1, 0});
    Eigen::VectorXd h1 = coarse_feature(y, g, w, cfg, weights);
    for (int i = 0; i < 4; ++i) CHECK(h1(i) == doctest::Approx(y.state[i]).epsilon(1e-15));
}

TEST_CASE("coarse feature separates all-infected from all-uninfected") {
    Graph g(4, {{0, 1}, {1, 2}, {2, 3}});
    InfluenceMatrix w(g, 0.2);
    EncoderConfig cfg;
    cfg.alpha = 0.0;  // isolate the convolution path
    EncoderWeights weights = seeded_weights(4, cfg, 3);
    auto all0 = coarse_feature(make_snapshot({0, 0, 0, 0}), g, w, cfg, weights);
    auto all1 = coarse_feature(make_snapshot({1, 1, 1, 1}), g, w, cfg, weights);
    CHECK((all0 - all1).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("coarse feature matches the dense scalar oracle") {
    Graph path3(3, {{0, 1}, {1, 2}});
    Rng rng(5);
    InfluenceMatrix w = oracles::random_influence(path3, rng);
    EncoderConfig cfg;
    cfg.h_one = 7;
    cfg.alpha = 0.37;
    EncoderWeights weights = seeded_weights(3, cfg, 11);
    auto y = make_snapshot({0, 1, 0});
    Eigen::VectorXd got = coarse_feature(y, path3, w, cfg, weights);
    Eigen::VectorXd want = coarse_oracle(y, path3, w.dense(), cfg, weights);
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("infection features: trivial cases") {
    Graph g(4, {{0, 1}, {1, 2}, {2, 3}});
    InfluenceMatrix w(g, 0.4);
    auto none = make_snapshot({0, 0, 0, 0});
    auto all = make_snapshot({1, 1, 1, 1});
    CHECK(infected_feature(none, g, w).cwiseAbs().maxCoeff() == 0.0);
    CHECK(uninfected_feature(all, g, w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("with unit influence H2 is exactly the infected-neighbor ratio") {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 5 + static_cast<int>(rng.next_below(8));
        Graph g = oracles::random_graph(n, 0.3, rng.next_u64());
        InfluenceMatrix ones(g, 1.0);
        Snapshot y = oracles::random_snapshot(n, 0.4, rng);
        Eigen::VectorXd h2 = infected_feature(y, g, ones);
        Eigen::VectorXd h3 = uninfected_feature(y, g, ones);
        for (int i = 0; i < n; ++i) {
            int infected = 0;
            for (int j : g.neighbors(i)) infected += y.state[j];
            const double deg = static_cast<double>(g.degree(i));
            CHECK(h2(i) == infected / deg);
            CHECK(h3(i) == (g.degree(i) - infected) / deg);
        }
    }
}

TEST_CASE("H2 and H3 match the per-node brute force and partition the neighborhood") {
    Rng rng(30);
    Graph g = oracles::random_graph(8, 0.4, 14);
    InfluenceMatrix w = oracles::random_influence(g, rng);
    Snapshot y = oracles::random_snapshot(8, 0.5, rng);
    Eigen::VectorXd h2 = infected_feature(y, g, w);
    Eigen::VectorXd h3 = uninfected_feature(y, g, w);
    for (int i = 0; i < 8; ++i) {
        double s2 = 0.0, s3 = 0.0, row = 0.0;
        for (int j = 0; j < 8; ++j) {
            if (!g.has_edge(i, j)) continue;
            (y.state[j] ? s2 : s3) += w.at(i, j);
            row += w.at(i, j);
        }
        CHECK(h2(i) == doctest::Approx(s2 / g.degree(i)).epsilon(1e-12));
        CHECK(h3(i) == doctest::Approx(s3 / g.degree(i)).epsilon(1e-12));
        CHECK(h2(i) + h3(i) == doctest::Approx(row / g.degree(i)).epsilon(1e-12));
    }
}

TEST_CASE("the H2 + H3 sum is snapshot independent") {
    Rng rng(41);
    Graph g = oracles::random_graph(9, 0.35, 50);
    InfluenceMatrix w = oracles::random_influence(g, rng);
    Snapshot a = oracles::random_snapshot(9, 0.3, rng);
    Snapshot b = oracles::random_snapshot(9, 0.7, rng);
    Eigen::VectorXd sum_a = infected_feature(a, g, w) + uninfected_feature(a, g, w);
    Eigen::VectorXd sum_b = infected_feature(b, g, w) + uninfected_feature(b, g, w);
    CHECK((sum_a - sum_b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("isolated nodes read zero dynamic features") {
    Graph g(3, {{0, 1}});  // node 2 isolated
    InfluenceMatrix w(g, 1.0);
    auto y = make_snapshot({1, 1, 1});
    CHECK(infected_feature(y, g, w)(2) == 0.0);
    CHECK(uninfected_feature(y, g, w)(2) == 0.0);
}

TEST_CASE("topology feature of a lone node is the activated weight row") {
    Graph lone(1, {});
    EncoderConfig cfg;
    cfg.topology_width = 3;
    EncoderWeights w = seeded_weights(1, cfg, 7);
    Eigen::MatrixXd h = topology_feature(lone, cfg, w);
    for (int k = 0; k < 3; ++k)
        CHECK(h(0, k) == doctest::Approx(std::max(0.0, w.w_topo(0, k))).epsilon(1e-12));
}

TEST_CASE("topology feature is permutation equivariant with permuted weights") {
    Graph g(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}, {1, 3}});
    EncoderConfig cfg;
    EncoderWeights w = seeded_weights(5, cfg, 19);

    std::vector<int> perm = {3, 0, 4, 1, 2};  // new id of each old id
    std::vector<std::pair<int, int>> relabeled;
    for (auto [u, v] : g.edges()) relabeled.emplace_back(perm[u], perm[v]);
    Graph gp(5, relabeled);
    EncoderWeights wp = w;
    for (int i = 0; i < 5; ++i) wp.w_topo.row(perm[i]) = w.w_topo.row(i);

    Eigen::MatrixXd h = topology_feature(g, cfg, w);
    Eigen::MatrixXd hp = topology_feature(gp, cfg, wp);
    for (int i = 0; i < 5; ++i)
        CHECK((hp.row(perm[i]) - h.row(i)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("topology feature matches the dense oracle") {
    Graph g(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {1, 4}});
    EncoderConfig cfg;
    EncoderWeights w = seeded_weights(5, cfg, 23);
    Eigen::MatrixXd norm = oracles::dense_normalized(g, nullptr);
    Eigen::MatrixXd want(5, cfg.resolve_topology_width(5));
    for (int i = 0; i < want.rows(); ++i)
        for (int k = 0; k < want.cols(); ++k) {
            double z = 0.0;
            for (int j = 0; j < 5; ++j) z += norm(i, j) * w.w_topo(j, k);
            want(i, k) = apply_activation(cfg.activation, z);
        }
    CHECK((topology_feature(g, cfg, w) - want).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("episode encoding has the documented shape and block layout") {
    Graph g = load_edge_list(std::string(DIFFTRACE_DATA_DIR) + "/karate.txt");
    GenerateConfig gc;
    gc.episode_count = 1;
    gc.master_seed = 12;
    gc.graph_id = "karate";
    auto eps = generate_dataset(g, gc);
    InfluenceMatrix w(g, 0.1);
    EncoderConfig cfg;
    EncoderWeights weights = seeded_weights(34, cfg, 2);

    auto seq = encode_episode(eps[0], g, w, cfg, weights);
    REQUIRE(seq.zeta() == eps[0].zeta());
    CHECK(cfg.resolve_topology_width(34) == 6);  // ceil(sqrt(34))
    for (int j = 0; j < seq.zeta(); ++j) {
        CHECK(seq.features[j].rows() == 34);
        CHECK(seq.features[j].cols() == 9);  // 3 + 6
    }

    // block-wise equality with the standalone operations
    Eigen::MatrixXd h_g = topology_feature(g, cfg, weights);
    for (int j = 0; j < seq.zeta(); ++j) {
        const auto& snap = eps[0].available[j];
        CHECK((seq.features[j].col(0) - coarse_feature(snap, g, w, cfg, weights))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
        CHECK((seq.features[j].col(1) - infected_feature(snap, g, w)).cwiseAbs().maxCoeff() ==
              0.0);
        CHECK((seq.features[j].col(2) - uninfected_feature(snap, g, w)).cwiseAbs().maxCoeff() ==
              0.0);
        CHECK((seq.features[j].rightCols(6) - h_g).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("identical snapshots produce identical embedding blocks") {
    Graph g(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}});
    InfluenceMatrix w(g, 0.2);
    EncoderConfig cfg;
    EncoderWeights weights = seeded_weights(6, cfg, 8);
    Episode ep;
    ep.available = {make_snapshot({1, 1, 0, 0, 0, 0}, 1), make_snapshot({1, 1, 0, 0, 0, 0}, 4)};
    auto seq = encode_episode(ep, g, w, cfg, weights);
    CHECK((seq.features[0] - seq.features[1]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("spectral projection keeps the GRN weight inside the bound") {
    EncoderConfig cfg;
    cfg.l_eps = 0.9;
    for (std::uint64_t seed : {1ULL, 5ULL, 9ULL}) {
        EncoderWeights w = seeded_weights(10, cfg, seed);
        w.w_gcn *= 40.0;  // blow the bound up on purpose
        project_spectral(w, cfg);
        // high-iteration estimate as the reference
        CHECK(spectral_norm_estimate(w.w_gcn, 50) < cfg.l_eps);
    }
}

TEST_CASE("encoder validates its configuration") {
    EncoderConfig cfg;
    cfg.l_eps = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.l_eps = 0.9;
    cfg.h_one = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
