#pragma once

#include <Eigen/Dense>
#include <vector>

#include "difftrace/decoder.hpp"

namespace difftrace {

/// Loss term selector mirroring the reported variants: the full composite,
/// MSE substituted for the entropy main term, and the two removals.
enum class LossSelector { Full, EntropyToMse, NoMse, NoGraph };

struct LossOptions {
    LossSelector selector = LossSelector::Full;
    // The class-balanced graph term as printed rewards correct-class mass
    // and cannot be minimized; the default swaps the class columns so the
    // term is zero at perfect prediction. The literal form stays available
    // for inspection.
    bool graph_term_as_printed = false;
    DecoderConfig::Aggregation aggregation = DecoderConfig::Aggregation::MeanOverTimestamps;
};

struct LossBreakdown {
    double entropy = 0.0;  // main term (BCE, or its MSE replacement)
    double mse = 0.0;      // encoder constraint against H1 per timestamp
    double graph = 0.0;    // class-balanced auxiliary term
    double total = 0.0;
};

LossSelector loss_selector_from_name(const std::string& name);
std::string loss_selector_name(LossSelector s);

/// r_hot: 0/1 source indicator. rhat_prime: per-timestamp |V| x 2 class
/// distributions. h1: per-timestamp coarse features.
LossBreakdown compute_loss(const Eigen::VectorXd& r_hot,
                           const std::vector<Eigen::MatrixXd>& rhat_prime,
                           const std::vector<Eigen::VectorXd>& h1, const LossOptions& opts);

}  // namespace difftrace
