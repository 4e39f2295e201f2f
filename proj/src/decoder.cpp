#include "difftrace/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "difftrace/rng.hpp"

namespace difftrace {

void DecoderConfig::validate() const {
    if (attention_heads < 1)
        throw std::invalid_argument("DecoderConfig: attention_heads must be positive");
}

namespace {

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& m) {
    return (1.0 / (1.0 + (-m.array()).exp())).matrix();
}

Eigen::MatrixXd rand_matrix(Rng& rng, int rows, int cols, double scale) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-scale, scale);
    return m;
}

GruWeights init_gru(Rng& rng, int input_width) {
    const int h = kGruHidden;
    GruWeights w;
    const double s_i = std::sqrt(6.0 / (input_width + h));
    const double s_h = std::sqrt(6.0 / (h + h));
    w.w_ih = rand_matrix(rng, 3 * h, input_width, s_i);
    w.w_hh = rand_matrix(rng, 3 * h, h, s_h);
    w.b_ih = Eigen::VectorXd::Zero(3 * h);
    w.b_hh = Eigen::VectorXd::Zero(3 * h);
    return w;
}

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        Eigen::ArrayXd e = (m.row(i).array() - mx).exp();
        out.row(i) = (e / e.sum()).matrix();
    }
    return out;
}

}  // namespace

void DecoderWeights::init(int input_width, const DecoderConfig& cfg, std::uint64_t seed,
                          bool with_attention) {
    cfg.validate();
    Rng rng(seed);
    forward = init_gru(rng, input_width);
    backward = init_gru(rng, input_width);
    heads.clear();
    if (!with_attention) return;
    for (int k = 0; k < cfg.attention_heads; ++k) {
        AttentionHead head;
        head.w_a = rand_matrix(rng, 2 * kGruHidden, kGruHidden, std::sqrt(6.0 / 6.0));
        head.a = rand_matrix(rng, 2 * kGruHidden, 1, std::sqrt(6.0 / 5.0)).col(0);
        heads.push_back(std::move(head));
    }
}

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> band_mask(int zeta) {
    if (zeta < 1) throw std::invalid_argument("band_mask: zeta must be >= 1");
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask(zeta, zeta);
    for (int i = 0; i < zeta; ++i)
        for (int j = 0; j < zeta; ++j) mask(i, j) = std::abs(i - j) <= 1;
    return mask;
}

std::vector<Eigen::MatrixXd> gru_forward(const std::vector<Eigen::MatrixXd>& inputs,
                                         const GruWeights& w, bool reverse, GruCache* cache) {
    if (inputs.empty()) throw std::invalid_argument("gru_forward: empty sequence");
    const int h = kGruHidden;
    const int n = static_cast<int>(inputs[0].rows());
    const int steps = static_cast<int>(inputs.size());

    Eigen::MatrixXd hidden = Eigen::MatrixXd::Zero(n, h);
    if (cache) {
        cache->reset.clear();
        cache->update.clear();
        cache->candidate.clear();
        cache->gh_candidate.clear();
        cache->hidden.assign(1, hidden);
    }
    std::vector<Eigen::MatrixXd> outputs(steps);

    for (int step = 0; step < steps; ++step) {
        const int idx = reverse ? steps - 1 - step : step;
        const Eigen::MatrixXd& x = inputs[idx];
        Eigen::MatrixXd gi = x * w.w_ih.transpose();
        gi.rowwise() += w.b_ih.transpose();
        Eigen::MatrixXd gh = hidden * w.w_hh.transpose();
        gh.rowwise() += w.b_hh.transpose();

        const Eigen::MatrixXd r = sigmoid(gi.leftCols(h) + gh.leftCols(h));
        const Eigen::MatrixXd z = sigmoid(gi.middleCols(h, h) + gh.middleCols(h, h));
        const Eigen::MatrixXd gh_n = gh.rightCols(h);
        const Eigen::MatrixXd nbar =
            (gi.rightCols(h) + r.cwiseProduct(gh_n)).array().tanh().matrix();
        hidden = (1.0 - z.array()).matrix().cwiseProduct(nbar) + z.cwiseProduct(hidden);

        outputs[idx] = hidden;
        if (cache) {
            cache->reset.push_back(r);
            cache->update.push_back(z);
            cache->candidate.push_back(nbar);
            cache->gh_candidate.push_back(gh_n);
            cache->hidden.push_back(hidden);
        }
    }
    return outputs;
}

std::vector<Eigen::MatrixXd> bigru_decode(const std::vector<Eigen::MatrixXd>& seq,
                                          const DecoderWeights& w, GruCache* cache_f,
                                          GruCache* cache_b) {
    if (seq.empty()) throw std::invalid_argument("bigru_decode: empty sequence");
    auto fwd = gru_forward(seq, w.forward, false, cache_f);
    auto bwd = gru_forward(seq, w.backward, true, cache_b);
    std::vector<Eigen::MatrixXd> rhats(seq.size());
    for (std::size_t j = 0; j < seq.size(); ++j) {
        Eigen::MatrixXd r(seq[j].rows(), 2 * kGruHidden);
        r.leftCols(kGruHidden) = fwd[j];
        r.rightCols(kGruHidden) = bwd[j];
        rhats[j] = std::move(r);
    }
    return rhats;
}

std::vector<Eigen::MatrixXd> temporal_attention(const std::vector<Eigen::MatrixXd>& rhats,
                                                const DecoderConfig& cfg,
                                                const DecoderWeights& w,
                                                AttentionCache* cache) {
    cfg.validate();
    if (rhats.empty()) throw std::invalid_argument("temporal_attention: empty input");
    if (w.heads.empty()) throw std::invalid_argument("temporal_attention: no attention heads");
    const int zeta = static_cast<int>(rhats.size());
    const int n = static_cast<int>(rhats[0].rows());
    const int n_heads = static_cast<int>(w.heads.size());

    if (cache) {
        cache->projected.assign(n_heads, {});
        cache->scores.assign(n_heads, {});
        cache->phi.assign(n_heads, {});
        cache->combined.assign(n_heads, {});
        cache->pooled.clear();
        cache->out.clear();
    }

    // projected[k][i] = R_i W_A^k; phi rows live on the band only
    std::vector<std::vector<Eigen::MatrixXd>> projected(n_heads);
    for (int k = 0; k < n_heads; ++k) {
        projected[k].reserve(zeta);
        for (int i = 0; i < zeta; ++i) projected[k].push_back(rhats[i] * w.heads[k].w_a);
        if (cache) cache->projected[k] = projected[k];
    }

    std::vector<Eigen::MatrixXd> result(zeta);
    std::vector<Eigen::MatrixXd> pooled(zeta, Eigen::MatrixXd::Zero(n, kGruHidden));

    for (int k = 0; k < n_heads; ++k) {
        const auto& head = w.heads[k];
        std::vector<Eigen::MatrixXd> phis(zeta);
        std::vector<Eigen::MatrixXd> raw_scores(zeta);
        std::vector<Eigen::MatrixXd> combined(zeta);
        for (int i = 0; i < zeta; ++i) {
            const int lo = std::max(0, i - 1), hi = std::min(zeta - 1, i + 1);
            // score every band neighbor: e_ij = relu(a . [P_i || P_j])
            Eigen::MatrixXd pre(n, hi - lo + 1);
            for (int j = lo; j <= hi; ++j)
                pre.col(j - lo) = projected[k][i] * head.a.head(kGruHidden) +
                                  projected[k][j] * head.a.tail(kGruHidden);
            const Eigen::MatrixXd scores = pre.cwiseMax(0.0);
            // softmax over the band row, stabilized per node
            Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, zeta);
            for (int v = 0; v < n; ++v) {
                const double mx = scores.row(v).maxCoeff();
                Eigen::ArrayXd e = (scores.row(v).array() - mx).exp();
                const double total = e.sum();
                for (int j = lo; j <= hi; ++j) phi(v, j) = e(j - lo) / total;
            }
            if (cfg.attention_values == DecoderConfig::AttentionValues::BandNeighbors) {
                // linear combination of the band timestamps' values
                Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, kGruHidden);
                for (int j = lo; j <= hi; ++j)
                    s += Eigen::VectorXd(phi.col(j)).asDiagonal() * projected[k][j];
                combined[i] = std::move(s);
            } else {
                // printed combination: values come from timestamp i, the
                // band neighbors enter only through their weights
                Eigen::VectorXd phi_sum = phi.rowwise().sum();
                combined[i] = phi_sum.asDiagonal() * projected[k][i];
            }
            phis[i] = std::move(phi);
            raw_scores[i] = pre;
        }
        for (int i = 0; i < zeta; ++i) {
            if (cfg.output_activation == DecoderConfig::OutputActivation::ReLU)
                pooled[i] += combined[i].cwiseMax(0.0);
            else
                pooled[i] += combined[i].array().tanh().matrix();
        }
        if (cache) {
            cache->phi[k] = std::move(phis);
            cache->scores[k] = std::move(raw_scores);
            cache->combined[k] = std::move(combined);
        }
    }

    for (int i = 0; i < zeta; ++i) {
        pooled[i] /= static_cast<double>(n_heads);
        result[i] = row_softmax(pooled[i]);
        if (cache) {
            cache->pooled.push_back(pooled[i]);
            cache->out.push_back(result[i]);
        }
    }
    return result;
}

std::vector<Eigen::MatrixXd> mean_pool_prediction(const std::vector<Eigen::MatrixXd>& rhats) {
    std::vector<Eigen::MatrixXd> result(rhats.size());
    for (std::size_t j = 0; j < rhats.size(); ++j) {
        const Eigen::MatrixXd mean =
            0.5 * (rhats[j].leftCols(kGruHidden) + rhats[j].rightCols(kGruHidden));
        result[j] = row_softmax(mean);
    }
    return result;
}

Eigen::VectorXd aggregate_source_scores(const std::vector<Eigen::MatrixXd>& per_timestamp,
                                        DecoderConfig::Aggregation agg) {
    if (per_timestamp.empty())
        throw std::invalid_argument("aggregate_source_scores: empty prediction");
    if (agg == DecoderConfig::Aggregation::LastTimestamp)
        return per_timestamp.back().col(1);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(per_timestamp[0].rows());
    for (const auto& r : per_timestamp) score += r.col(1);
    return score / static_cast<double>(per_timestamp.size());
}

std::vector<int> select_sources(const std::vector<Eigen::MatrixXd>& per_timestamp, int z,
                                DecoderConfig::Aggregation agg) {
    const Eigen::VectorXd score = aggregate_source_scores(per_timestamp, agg);
    const int n = static_cast<int>(score.size());
    if (z < 1 || z > n) throw std::invalid_argument("select_sources: Z out of range");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (score(a) != score(b)) return score(a) > score(b);
        return a < b;
    });
    std::vector<int> out(order.begin(), order.begin() + z);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace difftrace
