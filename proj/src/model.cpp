#include "difftrace/model.hpp"

#include <cmath>
#include <stdexcept>

#include "difftrace/rng.hpp"

namespace difftrace {

AblationVariant ablation_from_name(const std::string& name) {
    if (name == "none" || name == "full") return AblationVariant::None;
    if (name == "W-" || name == "w-") return AblationVariant::NoCoarse;
    if (name == "D-" || name == "d-") return AblationVariant::NoDynamic;
    if (name == "S-" || name == "s-") return AblationVariant::NoTopology;
    if (name == "A-" || name == "a-") return AblationVariant::NoAttention;
    throw std::invalid_argument("unknown ablation variant: " + name);
}

std::string ablation_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::None: return "none";
        case AblationVariant::NoCoarse: return "W-";
        case AblationVariant::NoDynamic: return "D-";
        case AblationVariant::NoTopology: return "S-";
        case AblationVariant::NoAttention: return "A-";
    }
    return "?";
}

EpisodeTensors build_episode_tensors(const Episode& ep, const Graph& g,
                                     const Eigen::MatrixXd& norm_adj_w,
                                     const InfluenceMatrix& w) {
    const int n = g.node_count();
    EpisodeTensors t;
    t.zeta = ep.zeta();
    t.sources = ep.sources;
    t.r_hot = Eigen::VectorXd::Zero(n);
    for (int s : ep.sources) t.r_hot(s) = 1.0;
    for (const auto& snap : ep.available) {
        Eigen::MatrixXd x(n, 2);
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            y(i) = snap.state[i] ? 1.0 : 0.0;
            x(i, 0) = 1.0 - y(i);
            x(i, 1) = y(i);
        }
        t.propagated_onehot.push_back(norm_adj_w * x);
        t.infected.push_back(std::move(y));
        t.h2.push_back(infected_feature(snap, g, w));
        t.h3.push_back(uninfected_feature(snap, g, w));
    }
    return t;
}

Model::Model(int node_count, const Eigen::MatrixXd& norm_adj_plain, const ModelConfig& cfg,
             std::uint64_t seed)
    : n_(node_count), cfg_(cfg), norm_adj_plain_(norm_adj_plain) {
    cfg_.encoder.validate();
    cfg_.decoder.validate();
    topo_width_ = cfg_.encoder.resolve_topology_width(n_);
    input_width_ = 3 + topo_width_;

    enc_.init(n_, cfg_.encoder, derive_seed(seed, 11));
    dec_.init(input_width_, cfg_.decoder, derive_seed(seed, 13),
              cfg_.variant != AblationVariant::NoAttention);

    enc_grad_ = enc_;
    dec_grad_ = dec_;
    zero_grads();
    opt_.clear();
    for (const auto& p : params()) opt_.emplace_back(p.size);
}

std::vector<Model::ParamRef> Model::params() {
    std::vector<ParamRef> out;
    auto add = [&](const std::string& name, Eigen::MatrixXd& v, Eigen::MatrixXd& g) {
        out.push_back({name, v.data(), g.data(), static_cast<std::size_t>(v.size())});
    };
    auto add_vec = [&](const std::string& name, Eigen::VectorXd& v, Eigen::VectorXd& g) {
        out.push_back({name, v.data(), g.data(), static_cast<std::size_t>(v.size())});
    };
    add("enc.w_gcn", enc_.w_gcn, enc_grad_.w_gcn);
    add_vec("enc.readout", enc_.readout, enc_grad_.readout);
    add("enc.w_topo", enc_.w_topo, enc_grad_.w_topo);
    auto add_gru = [&](const std::string& prefix, GruWeights& w, GruWeights& g) {
        add(prefix + ".w_ih", w.w_ih, g.w_ih);
        add(prefix + ".w_hh", w.w_hh, g.w_hh);
        add_vec(prefix + ".b_ih", w.b_ih, g.b_ih);
        add_vec(prefix + ".b_hh", w.b_hh, g.b_hh);
    };
    add_gru("dec.fwd", dec_.forward, dec_grad_.forward);
    add_gru("dec.bwd", dec_.backward, dec_grad_.backward);
    for (std::size_t k = 0; k < dec_.heads.size(); ++k) {
        add("dec.head" + std::to_string(k) + ".w_a", dec_.heads[k].w_a, dec_grad_.heads[k].w_a);
        add_vec("dec.head" + std::to_string(k) + ".a", dec_.heads[k].a, dec_grad_.heads[k].a);
    }
    return out;
}

void Model::zero_grads() {
    enc_grad_.w_gcn.setZero();
    enc_grad_.readout.setZero();
    enc_grad_.w_topo.setZero();
    for (GruWeights* g : {&dec_grad_.forward, &dec_grad_.backward}) {
        g->w_ih.setZero();
        g->w_hh.setZero();
        g->b_ih.setZero();
        g->b_hh.setZero();
    }
    for (auto& h : dec_grad_.heads) {
        h.w_a.setZero();
        h.a.setZero();
    }
}

void Model::restore(const Snapshot& s) {
    enc_ = s.enc;
    dec_ = s.dec;
}

Model::Forward Model::run_forward(const EpisodeTensors& ep, ForwardScratch* scratch) const {
    if (ep.zeta < 2) throw std::invalid_argument("Model: episode needs at least 2 snapshots");
    const auto act = cfg_.encoder.activation;
    const bool use_coarse = cfg_.variant != AblationVariant::NoCoarse;
    const bool use_dynamic = cfg_.variant != AblationVariant::NoDynamic;
    const bool use_topo = cfg_.variant != AblationVariant::NoTopology;

    Eigen::MatrixXd h_g = Eigen::MatrixXd::Zero(n_, topo_width_);
    if (use_topo) {
        Eigen::MatrixXd pre = norm_adj_plain_ * enc_.w_topo;
        h_g = apply_activation(act, pre);
        if (scratch) scratch->topo_pre = std::move(pre);
    }

    Forward fwd;
    std::vector<Eigen::MatrixXd> seq(ep.zeta);
    for (int j = 0; j < ep.zeta; ++j) {
        Eigen::VectorXd h1 = Eigen::VectorXd::Zero(n_);
        if (use_coarse) {
            Eigen::MatrixXd pre = ep.propagated_onehot[j] * enc_.w_gcn;
            h1 = apply_activation(act, pre) * enc_.readout + cfg_.encoder.alpha * ep.infected[j];
            if (scratch) scratch->gcn_pre.push_back(std::move(pre));
        }
        fwd.h1.push_back(h1);

        Eigen::MatrixXd e(n_, input_width_);
        e.col(0) = h1;
        e.col(1) = use_dynamic ? ep.h2[j] : Eigen::VectorXd::Zero(n_);
        e.col(2) = use_dynamic ? ep.h3[j] : Eigen::VectorXd::Zero(n_);
        e.rightCols(topo_width_) = h_g;
        seq[j] = std::move(e);
    }

    auto rhats = bigru_decode(seq, dec_, scratch ? &scratch->gru_f : nullptr,
                              scratch ? &scratch->gru_b : nullptr);
    if (cfg_.variant == AblationVariant::NoAttention)
        fwd.rhat_prime = mean_pool_prediction(rhats);
    else
        fwd.rhat_prime =
            temporal_attention(rhats, cfg_.decoder, dec_, scratch ? &scratch->attn : nullptr);

    fwd.loss = compute_loss(ep.r_hot, fwd.rhat_prime, fwd.h1, cfg_.loss);
    if (scratch) {
        scratch->embeddings = std::move(seq);
        scratch->rhats = std::move(rhats);
    }
    return fwd;
}

Model::Forward Model::evaluate(const EpisodeTensors& ep) const {
    return run_forward(ep, nullptr);
}

std::vector<int> Model::predict_sources(const EpisodeTensors& ep, int z) const {
    auto fwd = evaluate(ep);
    return select_sources(fwd.rhat_prime, z, cfg_.loss.aggregation);
}

namespace {

Eigen::MatrixXd activation_derivative(EncoderConfig::Activation act,
                                      const Eigen::MatrixXd& pre) {
    if (act == EncoderConfig::Activation::ReLU)
        return (pre.array() > 0.0).cast<double>().matrix();
    const Eigen::ArrayXXd t = pre.array().tanh();
    return (1.0 - t.square()).matrix();
}

// dL/du for rows out = softmax(u): out .* (g - (g . out))
Eigen::MatrixXd softmax_backward(const Eigen::MatrixXd& out, const Eigen::MatrixXd& g) {
    Eigen::VectorXd dot = (out.array() * g.array()).rowwise().sum();
    return (out.array() * (g.array().colwise() - dot.array())).matrix();
}

}  // namespace

void Model::backward(const EpisodeTensors& ep, const Forward& fwd, const ForwardScratch& s) {
    const int zeta = ep.zeta;
    const int h = kGruHidden;
    const auto act = cfg_.encoder.activation;
    const bool use_coarse = cfg_.variant != AblationVariant::NoCoarse;
    const bool use_topo = cfg_.variant != AblationVariant::NoTopology;
    const auto& opts = cfg_.loss;

    // loss -> d(aggregated source probability)
    const Eigen::VectorXd p = aggregate_source_scores(fwd.rhat_prime, opts.aggregation);
    Eigen::VectorXd dp = Eigen::VectorXd::Zero(n_);
    constexpr double clip = 1e-12;
    if (opts.selector == LossSelector::EntropyToMse) {
        dp += 2.0 / n_ * (p - ep.r_hot);
    } else {
        for (int v = 0; v < n_; ++v) {
            const double pv = p(v);
            if (pv <= clip || pv >= 1.0 - clip) continue;  // clamped region is flat
            dp(v) += (pv - ep.r_hot(v)) / (pv * (1.0 - pv)) / n_;
        }
    }
    if (opts.selector != LossSelector::NoGraph) {
        const double rho = ep.r_hot.sum() / n_;
        for (int v = 0; v < n_; ++v) {
            double d = ep.r_hot(v) > 0.5 ? -(1.0 - rho) : rho;
            if (opts.graph_term_as_printed) d = -d;
            dp(v) += d;
        }
    }

    // d(aggregated) -> per-timestamp class-distribution gradients
    std::vector<Eigen::MatrixXd> dout(zeta, Eigen::MatrixXd::Zero(n_, 2));
    if (opts.aggregation == DecoderConfig::Aggregation::LastTimestamp) {
        dout[zeta - 1].col(1) = dp;
    } else {
        for (int j = 0; j < zeta; ++j) dout[j].col(1) = dp / static_cast<double>(zeta);
    }

    // through the output softmax and the attention (or mean-pool) stage
    std::vector<Eigen::MatrixXd> drhat(zeta, Eigen::MatrixXd::Zero(n_, 2 * h));
    if (cfg_.variant == AblationVariant::NoAttention) {
        for (int j = 0; j < zeta; ++j) {
            const Eigen::MatrixXd dpool = softmax_backward(fwd.rhat_prime[j], dout[j]);
            drhat[j].leftCols(h) += 0.5 * dpool;
            drhat[j].rightCols(h) += 0.5 * dpool;
        }
    } else {
        const int n_heads = static_cast<int>(dec_.heads.size());
        const bool mix_neighbors =
            cfg_.decoder.attention_values == DecoderConfig::AttentionValues::BandNeighbors;
        std::vector<Eigen::MatrixXd> du_all(zeta);
        for (int i = 0; i < zeta; ++i)
            du_all[i] = softmax_backward(s.attn.out[i], dout[i]);

        for (int k = 0; k < n_heads; ++k) {
            const auto& head = dec_.heads[k];
            auto& head_grad = dec_grad_.heads[k];
            std::vector<Eigen::MatrixXd> dproj(zeta, Eigen::MatrixXd::Zero(n_, h));
            for (int i = 0; i < zeta; ++i) {
                // u = mean_k act(S_k)
                Eigen::MatrixXd act_deriv;
                if (cfg_.decoder.output_activation == DecoderConfig::OutputActivation::ReLU) {
                    act_deriv = (s.attn.combined[k][i].array() > 0.0).cast<double>().matrix();
                } else {
                    const Eigen::ArrayXXd t = s.attn.combined[k][i].array().tanh();
                    act_deriv = (1.0 - t.square()).matrix();
                }
                const Eigen::MatrixXd ds =
                    (du_all[i].array() * act_deriv.array()).matrix() /
                    static_cast<double>(n_heads);

                if (!mix_neighbors) {
                    // printed form: S = (sum_j phi_ij) * P_i. The phi path
                    // carries no gradient because the band rows sum to one
                    // for any logits; `a` therefore receives none either.
                    const Eigen::VectorXd phi_sum = s.attn.phi[k][i].rowwise().sum();
                    dproj[i] += phi_sum.asDiagonal() * ds;
                    continue;
                }

                // S = sum_j phi_ij * P_j: values and coefficients both carry
                // gradient; the coefficient path reaches `a` through the
                // band softmax and the pre-ReLU scores.
                const int lo = std::max(0, i - 1), hi = std::min(zeta - 1, i + 1);
                const int width = hi - lo + 1;
                const auto& phi = s.attn.phi[k][i];
                const auto& pre = s.attn.scores[k][i];  // |V| x width, pre-ReLU

                Eigen::MatrixXd dphi(n_, width);
                for (int j = lo; j <= hi; ++j) {
                    const Eigen::VectorXd phi_col = phi.col(j);
                    dproj[j] += phi_col.asDiagonal() * ds;
                    dphi.col(j - lo) =
                        (ds.array() * s.attn.projected[k][j].array()).rowwise().sum();
                }
                // softmax backward per node over the band row
                Eigen::MatrixXd phi_band(n_, width);
                for (int j = lo; j <= hi; ++j) phi_band.col(j - lo) = phi.col(j);
                const Eigen::VectorXd dot =
                    (phi_band.array() * dphi.array()).rowwise().sum();
                Eigen::MatrixXd de =
                    (phi_band.array() * (dphi.array().colwise() - dot.array())).matrix();
                // relu on the raw scores
                de = (de.array() * (pre.array() > 0.0).cast<double>()).matrix();

                const Eigen::VectorXd a_self = head.a.head(h);
                const Eigen::VectorXd a_peer = head.a.tail(h);
                for (int j = lo; j <= hi; ++j) {
                    const Eigen::VectorXd de_col = de.col(j - lo);
                    head_grad.a.head(h) += s.attn.projected[k][i].transpose() * de_col;
                    head_grad.a.tail(h) += s.attn.projected[k][j].transpose() * de_col;
                    dproj[i] += de_col * a_self.transpose();
                    dproj[j] += de_col * a_peer.transpose();
                }
            }
            for (int i = 0; i < zeta; ++i) {
                head_grad.w_a += s.rhats[i].transpose() * dproj[i];
                drhat[i] += dproj[i] * head.w_a.transpose();
            }
        }
    }

    // backpropagation through time for both directions
    std::vector<Eigen::MatrixXd> dseq(zeta, Eigen::MatrixXd::Zero(n_, input_width_));
    auto bptt = [&](const GruWeights& w, GruWeights& grad, const GruCache& cache, bool reverse,
                    int out_col) {
        Eigen::MatrixXd carry = Eigen::MatrixXd::Zero(n_, h);
        for (int step = zeta - 1; step >= 0; --step) {
            const int idx = reverse ? zeta - 1 - step : step;
            const Eigen::MatrixXd& r = cache.reset[step];
            const Eigen::MatrixXd& z = cache.update[step];
            const Eigen::MatrixXd& nbar = cache.candidate[step];
            const Eigen::MatrixXd& gh_n = cache.gh_candidate[step];
            const Eigen::MatrixXd& h_prev = cache.hidden[step];
            const Eigen::MatrixXd& x = s.embeddings[idx];

            const Eigen::MatrixXd dh = carry + drhat[idx].middleCols(out_col, h);
            const Eigen::MatrixXd dz =
                (dh.array() * (h_prev - nbar).array() * z.array() * (1.0 - z.array())).matrix();
            const Eigen::MatrixXd dn = (dh.array() * (1.0 - z.array())).matrix();
            const Eigen::MatrixXd dnpre =
                (dn.array() * (1.0 - nbar.array().square())).matrix();
            const Eigen::MatrixXd dr =
                (dnpre.array() * gh_n.array() * r.array() * (1.0 - r.array())).matrix();

            Eigen::MatrixXd dgi(n_, 3 * h), dgh(n_, 3 * h);
            dgi.leftCols(h) = dr;
            dgi.middleCols(h, h) = dz;
            dgi.rightCols(h) = dnpre;
            dgh.leftCols(h) = dr;
            dgh.middleCols(h, h) = dz;
            dgh.rightCols(h) = (dnpre.array() * r.array()).matrix();

            grad.w_ih += dgi.transpose() * x;
            grad.w_hh += dgh.transpose() * h_prev;
            grad.b_ih += dgi.colwise().sum();
            grad.b_hh += dgh.colwise().sum();

            dseq[idx] += dgi * w.w_ih;
            carry = dgh * w.w_hh + (dh.array() * z.array()).matrix();
        }
    };
    bptt(dec_.forward, dec_grad_.forward, s.gru_f, false, 0);
    bptt(dec_.backward, dec_grad_.backward, s.gru_b, true, h);

    // encoder blocks
    Eigen::MatrixXd dh_g = Eigen::MatrixXd::Zero(n_, topo_width_);
    for (int j = 0; j < zeta; ++j) {
        dh_g += dseq[j].rightCols(topo_width_);
        if (!use_coarse) continue;
        Eigen::VectorXd dh1 = dseq[j].col(0);
        if (opts.selector != LossSelector::NoMse)
            dh1 += 2.0 / (static_cast<double>(zeta) * n_) * (fwd.h1[j] - ep.r_hot);
        const Eigen::MatrixXd a = apply_activation(act, s.gcn_pre[j]);
        enc_grad_.readout += a.transpose() * dh1;
        const Eigen::MatrixXd dz = (dh1 * enc_.readout.transpose())
                                       .cwiseProduct(activation_derivative(act, s.gcn_pre[j]));
        enc_grad_.w_gcn += ep.propagated_onehot[j].transpose() * dz;
    }
    if (use_topo) {
        const Eigen::MatrixXd dpre = dh_g.cwiseProduct(activation_derivative(act, s.topo_pre));
        enc_grad_.w_topo += norm_adj_plain_.transpose() * dpre;
    }
}

LossBreakdown Model::forward_backward(const EpisodeTensors& ep) {
    ForwardScratch scratch;
    auto fwd = run_forward(ep, &scratch);
    zero_grads();
    backward(ep, fwd, scratch);
    return fwd.loss;
}

void Model::apply_step(double lr) {
    auto ps = params();
    for (std::size_t i = 0; i < ps.size(); ++i)
        opt_[i].step(ps[i].value, ps[i].grad, ps[i].size, lr);
    project_spectral(enc_, cfg_.encoder);
}

LossBreakdown Model::train_step(const EpisodeTensors& ep, double learning_rate) {
    auto loss = forward_backward(ep);
    apply_step(learning_rate);
    return loss;
}

GradCheckResult gradient_check(Model& model, const EpisodeTensors& ep, int tensor_index,
                               std::size_t flat_index, double step) {
    auto ps = model.params();
    auto& p = ps.at(static_cast<std::size_t>(tensor_index));
    if (flat_index >= p.size) throw std::invalid_argument("gradient_check: bad index");

    model.forward_backward(ep);
    const double analytic = p.grad[flat_index];

    const double saved = p.value[flat_index];
    p.value[flat_index] = saved + step;
    const double up = model.evaluate(ep).loss.total;
    p.value[flat_index] = saved - step;
    const double down = model.evaluate(ep).loss.total;
    p.value[flat_index] = saved;

    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-10});
    double rel = std::abs(analytic - numeric) / denom;
    if (std::abs(analytic) < 1e-12 && std::abs(numeric) < 1e-12) rel = 0.0;
    return {p.name, analytic, numeric, rel};
}

}  // namespace difftrace
