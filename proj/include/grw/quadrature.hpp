#pragma once

#include <cmath>
#include <vector>

#include "grw/common.hpp"

namespace grw {

struct QuadRule {
    std::vector<double> nodes;   // on [-1, 1]
    std::vector<double> weights;
};

/// Gauss-Legendre rule with n nodes (Newton iteration on P_n; exact for
/// polynomials up to degree 2n-1).
inline QuadRule gauss_legendre(int n) {
    if (n < 1) throw PreconditionError("gauss_legendre: need at least one node");
    QuadRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
            }
            pp = n * (x * p0 - p1) / (x * x - 1.0);
            double dx = p0 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        rule.nodes[static_cast<std::size_t>(i)] = -x;
        rule.nodes[static_cast<std::size_t>(n - 1 - i)] = x;
        double w = 2.0 / ((1.0 - x * x) * pp * pp);
        rule.weights[static_cast<std::size_t>(i)] = w;
        rule.weights[static_cast<std::size_t>(n - 1 - i)] = w;
    }
    return rule;
}

/// Affine image of the rule on [a, b].
inline QuadRule scaled(const QuadRule& rule, double a, double b) {
    QuadRule out = rule;
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    for (std::size_t k = 0; k < out.nodes.size(); ++k) {
        out.nodes[k] = mid + half * rule.nodes[k];
        out.weights[k] = half * rule.weights[k];
    }
    return out;
}

/// Poisson upper tail P(X > n_max) for X ~ Poisson(mu).
inline double poisson_tail(double mu, int n_max) {
    if (mu <= 0.0) return 0.0;
    double term = std::exp(-mu);
    double cdf = term;
    for (int k = 1; k <= n_max; ++k) {
        term *= mu / k;
        cdf += term;
    }
    return std::max(0.0, 1.0 - cdf);
}

inline double poisson_pmf(double mu, int n) {
    double term = std::exp(-mu);
    for (int k = 1; k <= n; ++k) term *= mu / k;
    return term;
}

} // namespace grw
