#include "difftrace/influence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "difftrace/optim.hpp"
#include "difftrace/rng.hpp"
#include "difftrace/simulate.hpp"

namespace difftrace {

InfluenceMatrix::InfluenceMatrix(const Graph& g, double fill) {
    node_count_ = g.node_count();
    graph_checksum_ = g.checksum();
    triplets_.reserve(2 * g.edges().size());
    for (auto [u, v] : g.edges()) {
        triplets_.push_back({u, v, fill});
        triplets_.push_back({v, u, fill});
    }
    slot_of_row_.resize(node_count_);
    for (int s = 0; s < static_cast<int>(triplets_.size()); ++s)
        slot_of_row_[triplets_[s].row].push_back(s);
    for (auto& slots : slot_of_row_)
        std::sort(slots.begin(), slots.end(),
                  [&](int a, int b) { return triplets_[a].col < triplets_[b].col; });
}

int InfluenceMatrix::slot(int i, int j) const {
    if (i < 0 || i >= node_count_ || j < 0 || j >= node_count_)
        throw std::invalid_argument("InfluenceMatrix: index out of range");
    const auto& slots = slot_of_row_[i];
    auto it = std::lower_bound(slots.begin(), slots.end(), j,
                               [&](int s, int col) { return triplets_[s].col < col; });
    if (it == slots.end() || triplets_[*it].col != j) return -1;
    return *it;
}

double InfluenceMatrix::at(int i, int j) const {
    int s = slot(i, j);
    return s < 0 ? 0.0 : triplets_[s].value;
}

bool InfluenceMatrix::edge(int i, int j) const { return slot(i, j) >= 0; }

void InfluenceMatrix::set(int i, int j, double value) {
    int s = slot(i, j);
    if (s < 0)
        throw std::invalid_argument("InfluenceMatrix::set: no edge (" + std::to_string(i) +
                                    "," + std::to_string(j) + ")");
    triplets_[s].value = value;
}

Eigen::MatrixXd InfluenceMatrix::dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(node_count_, node_count_);
    for (const auto& t : triplets_) m(t.row, t.col) = t.value;
    return m;
}

void InfluenceMatrix::project_to_unit() {
    for (auto& t : triplets_) t.value = std::clamp(t.value, 0.0, 1.0);
}

void InfluenceMatrix::save(const std::string& path) const {
    std::ostringstream out;
    out << "# graph_checksum=" << graph_checksum_ << "\n";
    out << "# nodes=" << node_count_ << "\n";
    out.precision(17);
    for (const auto& t : triplets_) out << t.row << ' ' << t.col << ' ' << t.value << '\n';
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write influence file: " + path);
    file << out.str();
}

InfluenceMatrix InfluenceMatrix::load(const std::string& path, const Graph& g) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open influence file: " + path);
    InfluenceMatrix w(g);
    std::string line;
    bool checked = false;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto pos = line.find("graph_checksum=");
            if (pos != std::string::npos) {
                std::string sum = line.substr(pos + 15);
                if (sum != g.checksum())
                    throw std::runtime_error("influence file " + path +
                                             " was fitted on a different graph");
                checked = true;
            }
            continue;
        }
        std::istringstream iss(line);
        int i, j;
        double v;
        if (!(iss >> i >> j >> v))
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad triplet");
        w.set(i, j, v);
    }
    if (!checked) throw std::runtime_error("influence file missing graph checksum: " + path);
    return w;
}

void EstimatorConfig::validate() const {
    if (learning_rate <= 0 || epoch_budget <= 0 || tolerance <= 0 || tolerance_window <= 0 ||
        mlp_hidden <= 0)
        throw std::invalid_argument("EstimatorConfig: all fields must be positive");
    if (init_low <= 0 || init_high < init_low)
        throw std::invalid_argument("EstimatorConfig: bad initialization range");
}

Eigen::VectorXd predict_next_state(const InfluenceMatrix& w, const Graph& g,
                                   const Snapshot& y_s, const Snapshot& y_prev) {
    const int n = g.node_count();
    if (w.node_count() != n || static_cast<int>(y_s.state.size()) != n ||
        static_cast<int>(y_prev.state.size()) != n)
        throw std::invalid_argument("predict_next_state: dimension mismatch");
    for (int i = 0; i < n; ++i)
        if (y_prev.state[i] && !y_s.state[i])
            throw std::invalid_argument("predict_next_state: y_prev not a subset of y_s");

    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) {
        double prod = 1.0;
        for (int j : g.neighbors(i)) {
            const int delta = y_s.state[j] - y_prev.state[j];
            if (delta) prod *= 1.0 - w.at(j, i);
        }
        out(i) = 1.0 - prod;
    }
    return out;
}

namespace {

// One (delta, target) pair extracted from consecutive available snapshots.
struct FitTerm {
    std::vector<int> newly;            // nodes with delta = 1
    std::vector<std::uint8_t> target;  // observed next snapshot
};

std::vector<FitTerm> build_terms(const std::vector<Episode>& episodes, int n) {
    std::vector<FitTerm> terms;
    for (const auto& ep : episodes) {
        if (ep.zeta() < 2) continue;
        for (int m = 0; m + 1 < ep.zeta(); ++m) {
            FitTerm term;
            term.target = ep.available[m + 1].state;
            const auto& cur = ep.available[m].state;
            for (int i = 0; i < n; ++i) {
                const int prev = (m == 0) ? 0 : ep.available[m - 1].state[i];
                if (static_cast<int>(cur[i]) - prev > 0) term.newly.push_back(i);
            }
            terms.push_back(std::move(term));
        }
    }
    return terms;
}

// Directed-edge parameterization. FreeParams holds one raw value per
// directed edge; Mlp maps per-edge features through a small network so
// the fitted estimator transfers to unseen edges.
class EdgeParameterization {
public:
    EdgeParameterization(const Graph& g, const std::vector<Episode>& episodes,
                         const EstimatorConfig& cfg)
        : cfg_(cfg), n_dir_(2 * g.edge_count()) {
        Rng rng(cfg.seed);
        rows_.reserve(n_dir_);
        cols_.reserve(n_dir_);
        for (auto [u, v] : g.edges()) {
            rows_.push_back(u);
            cols_.push_back(v);
            rows_.push_back(v);
            cols_.push_back(u);
        }
        if (cfg.mode == EstimatorConfig::Mode::FreeParams) {
            theta_.resize(n_dir_);
            for (auto& x : theta_) x = rng.uniform(cfg.init_low, cfg.init_high);
            opt_.reset(theta_.size());
            return;
        }
        // feature per directed edge: [deg(src), deg(dst), co-infection count]
        features_.resize(n_dir_, 3);
        double max_deg = 1.0, max_co = 1.0;
        std::vector<double> coinf(n_dir_, 0.0);
        for (int e = 0; e < n_dir_; ++e) {
            int u = rows_[e], v = cols_[e];
            double co = 0;
            for (const auto& ep : episodes)
                for (const auto& snap : ep.available)
                    if (snap.state[u] && snap.state[v]) co += 1.0;
            coinf[e] = co;
            max_co = std::max(max_co, co);
            max_deg = std::max(max_deg, static_cast<double>(std::max(g.degree(u), g.degree(v))));
        }
        for (int e = 0; e < n_dir_; ++e) {
            features_(e, 0) = g.degree(rows_[e]) / max_deg;
            features_(e, 1) = g.degree(cols_[e]) / max_deg;
            features_(e, 2) = coinf[e] / max_co;
        }
        const int h = cfg.mlp_hidden;
        auto glorot = [&](int fan_in, int fan_out) {
            return std::sqrt(6.0 / (fan_in + fan_out));
        };
        w1_.resize(h, 3);
        b1_ = Eigen::VectorXd::Zero(h);
        w2_.resize(h);
        const double s1 = glorot(3, h), s2 = glorot(h, 1);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < 3; ++j) w1_(i, j) = rng.uniform(-s1, s1);
            w2_(i) = rng.uniform(-s2, s2);
        }
        // start near the low-rate prior: sigmoid(-2.2) ~ 0.1
        b2_ = -2.2;
        opt_.reset(param_count());
    }

    int directed_count() const { return n_dir_; }
    int row(int e) const { return rows_[e]; }
    int col(int e) const { return cols_[e]; }

    // forward values for every directed edge, clamped into [0,1]
    Eigen::VectorXd values() {
        Eigen::VectorXd w(n_dir_);
        if (cfg_.mode == EstimatorConfig::Mode::FreeParams) {
            for (int e = 0; e < n_dir_; ++e) w(e) = std::min(std::abs(theta_[e]), 1.0);
            return w;
        }
        hidden_ = ((w1_ * features_.transpose()).colwise() + b1_).array().tanh();
        for (int e = 0; e < n_dir_; ++e) {
            const double z = w2_.dot(hidden_.col(e)) + b2_;
            w(e) = 1.0 / (1.0 + std::exp(-z));
        }
        return w;
    }

    // d(loss)/d(edge value) -> parameter gradients -> optimizer step
    void apply_gradient(const Eigen::VectorXd& w, const Eigen::VectorXd& grad_w) {
        if (cfg_.mode == EstimatorConfig::Mode::FreeParams) {
            std::vector<double> g(n_dir_, 0.0);
            for (int e = 0; e < n_dir_; ++e) {
                if (std::abs(theta_[e]) >= 1.0) continue;  // clamp saturated
                g[e] = grad_w(e) * (theta_[e] < 0 ? -1.0 : 1.0);
            }
            opt_.step(theta_.data(), g.data(), theta_.size(), cfg_.learning_rate);
            return;
        }
        const int h = cfg_.mlp_hidden;
        Eigen::MatrixXd gw1 = Eigen::MatrixXd::Zero(h, 3);
        Eigen::VectorXd gb1 = Eigen::VectorXd::Zero(h);
        Eigen::VectorXd gw2 = Eigen::VectorXd::Zero(h);
        double gb2 = 0.0;
        for (int e = 0; e < n_dir_; ++e) {
            const double dz2 = grad_w(e) * w(e) * (1.0 - w(e));
            if (dz2 == 0.0) continue;
            const Eigen::VectorXd a = hidden_.col(e);
            gw2 += dz2 * a;
            gb2 += dz2;
            const Eigen::VectorXd dz1 =
                (dz2 * w2_.array() * (1.0 - a.array().square())).matrix();
            gw1 += dz1 * features_.row(e);
            gb1 += dz1;
        }
        std::vector<double> theta, grad;
        flatten(w1_, b1_, w2_, b2_, theta);
        flatten(gw1, gb1, gw2, gb2, grad);
        opt_.step(theta.data(), grad.data(), theta.size(), cfg_.learning_rate);
        unflatten(theta);
    }

private:
    std::size_t param_count() const {
        return static_cast<std::size_t>(w1_.size() + b1_.size() + w2_.size() + 1);
    }

    static void flatten(const Eigen::MatrixXd& w1, const Eigen::VectorXd& b1,
                        const Eigen::VectorXd& w2, double b2, std::vector<double>& out) {
        out.clear();
        out.insert(out.end(), w1.data(), w1.data() + w1.size());
        out.insert(out.end(), b1.data(), b1.data() + b1.size());
        out.insert(out.end(), w2.data(), w2.data() + w2.size());
        out.push_back(b2);
    }

    void unflatten(const std::vector<double>& theta) {
        std::size_t k = 0;
        std::copy_n(theta.begin() + k, w1_.size(), w1_.data());
        k += w1_.size();
        std::copy_n(theta.begin() + k, b1_.size(), b1_.data());
        k += b1_.size();
        std::copy_n(theta.begin() + k, w2_.size(), w2_.data());
        k += w2_.size();
        b2_ = theta[k];
    }

    EstimatorConfig cfg_;
    int n_dir_;
    std::vector<int> rows_, cols_;
    std::vector<double> theta_;  // free-parameter mode
    Eigen::MatrixXd features_;   // MLP mode
    Eigen::MatrixXd w1_;
    Eigen::VectorXd b1_, w2_;
    double b2_ = 0.0;
    Eigen::MatrixXd hidden_;
    Adam opt_;
};

}  // namespace

InfluenceFitResult fit_influence(const Graph& g, const std::vector<Episode>& episodes,
                                 const EstimatorConfig& cfg) {
    cfg.validate();
    const int n = g.node_count();
    auto terms = build_terms(episodes, n);
    if (terms.empty())
        throw std::invalid_argument("fit_influence: no usable snapshot pairs");

    EdgeParameterization params(g, episodes, cfg);
    const int n_dir = params.directed_count();

    // incoming directed-edge slot per node: node i <- list of (neighbor j, edge e)
    std::vector<std::vector<std::pair<int, int>>> incoming(n);
    for (int e = 0; e < n_dir; ++e) incoming[params.col(e)].emplace_back(params.row(e), e);

    std::vector<char> newly_mask(n, 0);
    InfluenceFitResult result;
    const double norm = 1.0 / (static_cast<double>(terms.size()) * n);

    for (int epoch = 0; epoch < cfg.epoch_budget; ++epoch) {
        Eigen::VectorXd w = params.values();
        Eigen::VectorXd grad_w = Eigen::VectorXd::Zero(n_dir);
        double loss = 0.0;

        for (const auto& term : terms) {
            for (int i : term.newly) newly_mask[i] = 1;
            for (int i = 0; i < n; ++i) {
                // factors (1 - w_ji) over newly infected neighbors j
                thread_local std::vector<std::pair<int, double>> active;
                active.clear();
                for (auto [j, e] : incoming[i])
                    if (newly_mask[j]) active.emplace_back(e, 1.0 - w(e));
                double prod = 1.0;
                for (auto& [e, f] : active) prod *= f;
                const double p = 1.0 - prod;
                const double err = p - static_cast<double>(term.target[i]);
                loss += err * err * norm;
                if (active.empty()) continue;
                // d p / d w_e = prod of the other factors; prefix/suffix
                // products avoid dividing by a possibly-zero factor
                const int m = static_cast<int>(active.size());
                thread_local std::vector<double> suffix;
                suffix.assign(m + 1, 1.0);
                for (int k = m - 1; k >= 0; --k) suffix[k] = suffix[k + 1] * active[k].second;
                double prefix = 1.0;
                for (int k = 0; k < m; ++k) {
                    grad_w(active[k].first) += 2.0 * err * norm * prefix * suffix[k + 1];
                    prefix *= active[k].second;
                }
            }
            for (int i : term.newly) newly_mask[i] = 0;
        }

        result.loss_history.push_back(loss);
        result.epochs_run = epoch + 1;
        if (!std::isfinite(loss) || loss > 1e6) {
            std::ostringstream os;
            os << "fit_influence: divergent loss at epoch " << epoch << " (loss=" << loss
               << "); history:";
            for (double l : result.loss_history) os << ' ' << l;
            throw std::runtime_error(os.str());
        }
        const int win = cfg.tolerance_window;
        if (epoch >= win &&
            result.loss_history[epoch - win] - result.loss_history[epoch] < cfg.tolerance)
            break;
        params.apply_gradient(w, grad_w);
    }

    Eigen::VectorXd w = params.values();
    InfluenceMatrix matrix(g);
    for (int e = 0; e < n_dir; ++e) matrix.set(params.row(e), params.col(e), w(e));
    matrix.project_to_unit();
    result.matrix = std::move(matrix);
    return result;
}

}  // namespace difftrace
