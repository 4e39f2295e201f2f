#include "difftrace/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace difftrace {

LossSelector loss_selector_from_name(const std::string& name) {
    if (name == "full") return LossSelector::Full;
    if (name == "entropy-to-mse" || name == "e2m") return LossSelector::EntropyToMse;
    if (name == "no-mse") return LossSelector::NoMse;
    if (name == "no-graph" || name == "no-g") return LossSelector::NoGraph;
    throw std::invalid_argument("unknown loss selector: " + name);
}

std::string loss_selector_name(LossSelector s) {
    switch (s) {
        case LossSelector::Full: return "full";
        case LossSelector::EntropyToMse: return "entropy-to-mse";
        case LossSelector::NoMse: return "no-mse";
        case LossSelector::NoGraph: return "no-graph";
    }
    return "?";
}

LossBreakdown compute_loss(const Eigen::VectorXd& r_hot,
                           const std::vector<Eigen::MatrixXd>& rhat_prime,
                           const std::vector<Eigen::VectorXd>& h1, const LossOptions& opts) {
    const int n = static_cast<int>(r_hot.size());
    if (rhat_prime.empty()) throw std::invalid_argument("compute_loss: empty prediction");
    for (const auto& r : rhat_prime) {
        if (r.rows() != n || r.cols() != 2)
            throw std::invalid_argument("compute_loss: prediction shape mismatch");
        if (!r.allFinite()) throw std::invalid_argument("compute_loss: non-finite prediction");
    }
    if (!r_hot.allFinite()) throw std::invalid_argument("compute_loss: non-finite truth");
    for (const auto& h : h1)
        if (h.size() != n || !h.allFinite())
            throw std::invalid_argument("compute_loss: bad H1 input");

    const Eigen::VectorXd p = aggregate_source_scores(rhat_prime, opts.aggregation);
    constexpr double clip = 1e-12;

    LossBreakdown out;

    // main term
    if (opts.selector == LossSelector::EntropyToMse) {
        out.entropy = (p - r_hot).squaredNorm() / n;
    } else {
        double bce = 0.0;
        for (int v = 0; v < n; ++v) {
            const double pv = std::clamp(p(v), clip, 1.0 - clip);
            bce -= r_hot(v) * std::log(pv) + (1.0 - r_hot(v)) * std::log(1.0 - pv);
        }
        out.entropy = bce / n;
    }

    // encoder constraint, averaged over the available timestamps
    if (opts.selector != LossSelector::NoMse) {
        if (h1.size() != rhat_prime.size())
            throw std::invalid_argument("compute_loss: H1 count mismatch");
        double acc = 0.0;
        for (const auto& h : h1) acc += (h - r_hot).squaredNorm() / n;
        out.mse = acc / static_cast<double>(h1.size());
    }

    // class-balanced auxiliary term
    if (opts.selector != LossSelector::NoGraph) {
        const double rho = r_hot.sum() / n;
        double nonsource_mass = 0.0, source_mass = 0.0;
        for (int v = 0; v < n; ++v) {
            if (r_hot(v) > 0.5)
                source_mass += opts.graph_term_as_printed ? p(v) : 1.0 - p(v);
            else
                nonsource_mass += opts.graph_term_as_printed ? 1.0 - p(v) : p(v);
        }
        out.graph = rho * nonsource_mass + (1.0 - rho) * source_mass;
    }

    out.total = out.entropy + out.mse + out.graph;
    return out;
}

}  // namespace difftrace
