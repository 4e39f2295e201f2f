#include "difftrace/metrics.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "difftrace/rng.hpp"

namespace difftrace {

F1Result f1_score(const std::vector<int>& truth, const std::vector<int>& predicted) {
    if (truth.empty()) throw std::invalid_argument("f1_score: empty truth set");
    std::set<int> t(truth.begin(), truth.end());
    std::set<int> p(predicted.begin(), predicted.end());
    int hits = 0;
    for (int v : p) hits += t.count(v);
    F1Result r;
    r.precision = p.empty() ? 0.0 : static_cast<double>(hits) / p.size();
    r.recall = static_cast<double>(hits) / t.size();
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    return r;
}

double hungarian_min_cost(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    if (cost.cols() != n || n == 0)
        throw std::invalid_argument("hungarian_min_cost: square nonempty matrix required");
    constexpr double inf = std::numeric_limits<double>::infinity();

    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> match(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0);
    }

    double total = 0.0;
    for (int j = 1; j <= n; ++j) total += cost(match[j] - 1, j - 1);
    return total;
}

double average_error_distance(const std::vector<int>& truth, const std::vector<int>& predicted,
                              const Graph& g) {
    const int q = static_cast<int>(truth.size());
    if (q == 0 || static_cast<int>(predicted.size()) != q)
        throw std::invalid_argument("average_error_distance: sets must be nonempty and equal-sized");
    Eigen::MatrixXd cost(q, q);
    for (int i = 0; i < q; ++i) {
        const auto hops = bfs_hops(g, predicted[i]);
        for (int j = 0; j < q; ++j) {
            const int d = hops[truth[j]];
            if (d == kUnreachable)
                throw std::invalid_argument("average_error_distance: disconnected node pair");
            cost(i, j) = d;
        }
    }
    return hungarian_min_cost(cost) / q;
}

std::vector<int> degree_baseline(const Graph& g, int z) {
    if (z < 1 || z > g.node_count())
        throw std::invalid_argument("degree_baseline: Z out of range");
    std::vector<int> order(g.node_count());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (g.degree(a) != g.degree(b)) return g.degree(a) > g.degree(b);
        return a < b;
    });
    std::vector<int> out(order.begin(), order.begin() + z);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> random_baseline(const Graph& g, int z, std::uint64_t seed) {
    if (z < 1 || z > g.node_count())
        throw std::invalid_argument("random_baseline: Z out of range");
    Rng rng(seed);
    return rng.sample_without_replacement(g.node_count(), z);
}

MetricReport MetricReport::from_episodes(std::vector<EpisodeMetrics> rows) {
    MetricReport r;
    r.episode_count = static_cast<int>(rows.size());
    for (const auto& e : rows) {
        r.f1 += e.f1;
        r.precision += e.precision;
        r.recall += e.recall;
        r.aed += e.aed;
    }
    if (r.episode_count > 0) {
        r.f1 /= r.episode_count;
        r.precision /= r.episode_count;
        r.recall /= r.episode_count;
        r.aed /= r.episode_count;
    }
    r.per_episode = std::move(rows);
    return r;
}

}  // namespace difftrace
