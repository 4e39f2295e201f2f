#include "difftrace/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "difftrace/rng.hpp"

namespace difftrace {

void EncoderConfig::validate() const {
    if (h_one < 1) throw std::invalid_argument("EncoderConfig: h_one must be positive");
    if (!(l_eps > 0.0 && l_eps < 1.0))
        throw std::invalid_argument("EncoderConfig: l_eps must lie in (0,1)");
    if (topology_width < 0) throw std::invalid_argument("EncoderConfig: bad topology width");
    if (power_iterations < 1) throw std::invalid_argument("EncoderConfig: bad power iterations");
}

int EncoderConfig::resolve_topology_width(int node_count) const {
    if (topology_width > 0) return topology_width;
    return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(node_count))));
}

double apply_activation(EncoderConfig::Activation a, double x) {
    return a == EncoderConfig::Activation::ReLU ? std::max(0.0, x) : std::tanh(x);
}

Eigen::MatrixXd apply_activation(EncoderConfig::Activation a, const Eigen::MatrixXd& m) {
    if (a == EncoderConfig::Activation::ReLU) return m.cwiseMax(0.0);
    return m.array().tanh().matrix();
}

double spectral_norm_estimate(const Eigen::MatrixXd& m, int iterations) {
    if (m.size() == 0) return 0.0;
    // fixed start vector keeps the estimate deterministic
    Eigen::VectorXd v = Eigen::VectorXd::Ones(m.cols()).normalized();
    Eigen::VectorXd u;
    for (int it = 0; it < iterations; ++it) {
        u = m * v;
        double nu = u.norm();
        if (nu == 0.0) return 0.0;
        u /= nu;
        v = m.transpose() * u;
        double nv = v.norm();
        if (nv == 0.0) return 0.0;
        v /= nv;
    }
    return u.dot(m * v);
}

void project_spectral(EncoderWeights& weights, const EncoderConfig& cfg) {
    // the margin absorbs whatever the estimate still under-reports
    const double target = 0.97 * cfg.l_eps;
    const double sigma = spectral_norm_estimate(weights.w_gcn, cfg.power_iterations);
    if (sigma > target) weights.w_gcn *= target / sigma;
}

void EncoderWeights::init(int node_count, const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const int width = cfg.resolve_topology_width(node_count);
    auto glorot = [](int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); };

    w_gcn.resize(2, cfg.h_one);
    const double s_gcn = glorot(2, cfg.h_one);
    for (int i = 0; i < w_gcn.rows(); ++i)
        for (int j = 0; j < w_gcn.cols(); ++j) w_gcn(i, j) = rng.uniform(-s_gcn, s_gcn);

    readout.resize(cfg.h_one);
    const double s_r = glorot(cfg.h_one, 1);
    for (int i = 0; i < readout.size(); ++i) readout(i) = rng.uniform(-s_r, s_r);

    w_topo.resize(node_count, width);
    const double s_t = glorot(node_count, width);
    for (int i = 0; i < w_topo.rows(); ++i)
        for (int j = 0; j < w_topo.cols(); ++j) w_topo(i, j) = rng.uniform(-s_t, s_t);

    project_spectral(*this, cfg);
}

namespace {

Eigen::MatrixXd one_hot_states(const Snapshot& y) {
    const int n = static_cast<int>(y.state.size());
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = y.state[i] ? 0.0 : 1.0;
        x(i, 1) = y.state[i] ? 1.0 : 0.0;
    }
    return x;
}

void check_snapshot(const Snapshot& y, const Graph& g) {
    if (static_cast<int>(y.state.size()) != g.node_count())
        throw std::invalid_argument("encoder: snapshot/graph size mismatch");
}

}  // namespace

Eigen::VectorXd coarse_feature(const Snapshot& y, const Graph& g, const InfluenceMatrix& w,
                               const EncoderConfig& cfg, const EncoderWeights& weights) {
    check_snapshot(y, g);
    if (w.node_count() != g.node_count())
        throw std::invalid_argument("coarse_feature: influence matrix mismatch");
    const Eigen::MatrixXd norm_adj = normalized_adjacency(g, &w);
    const Eigen::MatrixXd x = one_hot_states(y);
    const Eigen::MatrixXd hidden =
        apply_activation(cfg.activation, Eigen::MatrixXd((norm_adj * x) * weights.w_gcn));
    Eigen::VectorXd out = hidden * weights.readout;
    for (int i = 0; i < out.size(); ++i) out(i) += cfg.alpha * static_cast<double>(y.state[i]);
    return out;
}

Eigen::VectorXd infected_feature(const Snapshot& y, const Graph& g, const InfluenceMatrix& w) {
    check_snapshot(y, g);
    const int n = g.node_count();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        const auto& nbrs = g.neighbors(i);
        if (nbrs.empty()) continue;  // isolated node: 0 by convention
        double sum = 0.0;
        for (int j : nbrs)
            if (y.state[j]) sum += w.at(i, j);
        out(i) = sum / static_cast<double>(nbrs.size());
    }
    return out;
}

Eigen::VectorXd uninfected_feature(const Snapshot& y, const Graph& g, const InfluenceMatrix& w) {
    check_snapshot(y, g);
    const int n = g.node_count();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        const auto& nbrs = g.neighbors(i);
        if (nbrs.empty()) continue;
        double sum = 0.0;
        for (int j : nbrs)
            if (!y.state[j]) sum += w.at(i, j);
        out(i) = sum / static_cast<double>(nbrs.size());
    }
    return out;
}

Eigen::MatrixXd topology_feature(const Graph& g, const EncoderConfig& cfg,
                                 const EncoderWeights& weights) {
    const int width = cfg.resolve_topology_width(g.node_count());
    if (weights.w_topo.rows() != g.node_count() || weights.w_topo.cols() != width)
        throw std::invalid_argument("topology_feature: weight shape mismatch");
    // identity input features make N * I * W collapse to N * W
    const Eigen::MatrixXd norm_adj = normalized_adjacency(g, nullptr);
    return apply_activation(cfg.activation, Eigen::MatrixXd(norm_adj * weights.w_topo));
}

EmbeddingSequence encode_episode(const Episode& ep, const Graph& g, const InfluenceMatrix& w,
                                 const EncoderConfig& cfg, const EncoderWeights& weights) {
    if (w.node_count() != g.node_count())
        throw std::invalid_argument("encode_episode: missing or mismatched influence matrix");
    const int n = g.node_count();
    const int width = cfg.resolve_topology_width(n);
    const Eigen::MatrixXd h_g = topology_feature(g, cfg, weights);

    EmbeddingSequence seq;
    for (const auto& snap : ep.available) {
        check_snapshot(snap, g);
        Eigen::MatrixXd h(n, 3 + width);
        h.col(0) = coarse_feature(snap, g, w, cfg, weights);
        h.col(1) = infected_feature(snap, g, w);
        h.col(2) = uninfected_feature(snap, g, w);
        h.rightCols(width) = h_g;
        seq.timestamps.push_back(snap.t);
        seq.features.push_back(std::move(h));
    }
    return seq;
}

}  // namespace difftrace
