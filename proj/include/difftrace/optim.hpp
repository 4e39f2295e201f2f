#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace difftrace {

/// Adam with bias correction; one instance per parameter tensor.
class Adam {
public:
    Adam() = default;
    explicit Adam(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

    void reset(std::size_t n) {
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
        t_ = 0;
    }

    void step(double* w, const double* g, std::size_t n, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, t_);
        const double bc2 = 1.0 - std::pow(beta2, t_);
        for (std::size_t i = 0; i < n; ++i) {
            m_[i] = beta1 * m_[i] + (1.0 - beta1) * g[i];
            v_[i] = beta2 * v_[i] + (1.0 - beta2) * g[i] * g[i];
            w[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps);
        }
    }

    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

private:
    std::vector<double> m_, v_;
    long t_ = 0;
};

}  // namespace difftrace
