#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "grw/common.hpp"

namespace grw {

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

namespace detail {

inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

} // namespace detail

/// Upper regularized incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw PreconditionError("gamma_q: invalid arguments");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
    return detail::gamma_q_contfrac(a, x);
}

/// P(X >= stat) for X ~ chi-square with dof degrees of freedom.
inline double chi_square_pvalue(double stat, int dof) {
    if (dof <= 0) return 1.0;
    if (stat <= 0.0) return 1.0;
    return gamma_q(0.5 * dof, 0.5 * stat);
}

// ---------------------------------------------------------------------------
// Goodness-of-fit tests
// ---------------------------------------------------------------------------

struct ChiSquareResult {
    double statistic = 0.0;
    int dof = 0;
    double p_value = 1.0;
    int merged_bins = 0;
};

/// Merges the smallest-expectation categories together until every retained
/// bin has expectation >= min_expected; the classic validity guard.
inline void merge_small_bins(std::vector<double>& observed, std::vector<double>& expected,
                             double min_expected) {
    for (;;) {
        if (expected.size() <= 1) return;
        auto it = std::min_element(expected.begin(), expected.end());
        if (*it >= min_expected) return;
        std::size_t k = static_cast<std::size_t>(it - expected.begin());
        std::size_t into = (k == 0) ? 1 : k - 1;
        expected[into] += expected[k];
        observed[into] += observed[k];
        expected.erase(expected.begin() + static_cast<std::ptrdiff_t>(k));
        observed.erase(observed.begin() + static_cast<std::ptrdiff_t>(k));
    }
}

/// One-sample chi-square of integer counts against a fully specified
/// distribution (expected[i] already scaled to counts).
inline ChiSquareResult chi_square_gof(std::vector<double> observed, std::vector<double> expected,
                                      double min_expected = 5.0) {
    if (observed.size() != expected.size())
        throw PreconditionError("chi_square_gof: size mismatch");
    std::size_t before = observed.size();
    merge_small_bins(observed, expected, min_expected);
    ChiSquareResult res;
    res.merged_bins = static_cast<int>(before - observed.size());
    if (observed.size() <= 1) return res; // degenerate: nothing to test
    for (std::size_t k = 0; k < observed.size(); ++k) {
        double diff = observed[k] - expected[k];
        if (expected[k] > 0.0) res.statistic += diff * diff / expected[k];
    }
    res.dof = static_cast<int>(observed.size()) - 1;
    res.p_value = chi_square_pvalue(res.statistic, res.dof);
    return res;
}

/// Two-sample chi-square homogeneity test over shared categories.
inline ChiSquareResult chi_square_two_sample(std::vector<double> a, std::vector<double> b,
                                             double min_expected = 5.0) {
    if (a.size() != b.size()) throw PreconditionError("chi_square_two_sample: size mismatch");
    // Merge categories with a small pooled count first.
    std::vector<double> pooled(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) pooled[k] = a[k] + b[k];
    for (;;) {
        if (pooled.size() <= 1) break;
        auto it = std::min_element(pooled.begin(), pooled.end());
        if (*it >= 2.0 * min_expected) break;
        std::size_t k = static_cast<std::size_t>(it - pooled.begin());
        std::size_t into = (k == 0) ? 1 : k - 1;
        pooled[into] += pooled[k];
        a[into] += a[k];
        b[into] += b[k];
        pooled.erase(pooled.begin() + static_cast<std::ptrdiff_t>(k));
        a.erase(a.begin() + static_cast<std::ptrdiff_t>(k));
        b.erase(b.begin() + static_cast<std::ptrdiff_t>(k));
    }
    ChiSquareResult res;
    if (pooled.size() <= 1) return res;
    double na = std::accumulate(a.begin(), a.end(), 0.0);
    double nb = std::accumulate(b.begin(), b.end(), 0.0);
    double n = na + nb;
    if (na == 0.0 || nb == 0.0) return res;
    for (std::size_t k = 0; k < pooled.size(); ++k) {
        double ea = pooled[k] * na / n;
        double eb = pooled[k] * nb / n;
        if (ea > 0.0) res.statistic += (a[k] - ea) * (a[k] - ea) / ea;
        if (eb > 0.0) res.statistic += (b[k] - eb) * (b[k] - eb) / eb;
    }
    res.dof = static_cast<int>(pooled.size()) - 1;
    res.p_value = chi_square_pvalue(res.statistic, res.dof);
    return res;
}

namespace detail {

/// Folds rows whose marginal is below the threshold into a neighbor row.
inline RealMatrix merge_sparse_rows(RealMatrix table, double min_marginal) {
    for (;;) {
        if (table.rows() <= 2) return table;
        RealVector sums = table.rowwise().sum();
        Eigen::Index k;
        if (sums.minCoeff(&k) >= min_marginal) return table;
        Eigen::Index into = (k == 0) ? 1 : k - 1;
        table.row(into) += table.row(k);
        RealMatrix smaller(table.rows() - 1, table.cols());
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < table.rows(); ++i)
            if (i != k) smaller.row(r++) = table.row(i);
        table = smaller;
    }
}

} // namespace detail

/// Chi-square independence test on an r x c contingency table; sparse rows
/// and columns are folded into neighbors first.
inline ChiSquareResult chi_square_independence(RealMatrix table, double min_expected = 5.0) {
    ChiSquareResult res;
    if (table.sum() <= 0.0 || table.rows() < 2 || table.cols() < 2) return res;
    table = detail::merge_sparse_rows(std::move(table), min_expected * table.cols());
    table = detail::merge_sparse_rows(table.transpose(), min_expected * table.rows()).transpose();
    double n = table.sum();
    if (table.rows() < 2 || table.cols() < 2) return res;
    RealVector row = table.rowwise().sum();
    RealVector col = table.colwise().sum();
    for (Eigen::Index i = 0; i < table.rows(); ++i)
        for (Eigen::Index j = 0; j < table.cols(); ++j) {
            double e = row[i] * col[j] / n;
            if (e > 0.0) res.statistic += (table(i, j) - e) * (table(i, j) - e) / e;
        }
    res.dof = static_cast<int>((table.rows() - 1) * (table.cols() - 1));
    res.p_value = chi_square_pvalue(res.statistic, res.dof);
    return res;
}

inline double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
    double na = std::accumulate(a.begin(), a.end(), 0.0);
    double nb = std::accumulate(b.begin(), b.end(), 0.0);
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    double tv = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) tv += std::abs(a[k] / na - b[k] / nb);
    return 0.5 * tv;
}

/// Bonferroni combination: m * min(p), capped at one.
inline double bonferroni_combine(const std::vector<double>& ps) {
    if (ps.empty()) return 1.0;
    double pmin = *std::min_element(ps.begin(), ps.end());
    return std::min(1.0, pmin * static_cast<double>(ps.size()));
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct GofReport {
    std::string name;
    enum class Kind { PValue, Distance } kind = Kind::PValue;
    double statistic = 0.0;
    double value = 1.0;     // p-value or distance, per kind
    double threshold = 1e-3;
    bool pass = false;
    std::vector<std::int64_t> sample_sizes;
    std::vector<std::uint64_t> seeds;
    int attempts = 1;
    std::string notes;

    static GofReport from_pvalue(std::string name, double stat, double p, double alpha) {
        GofReport r;
        r.name = std::move(name);
        r.kind = Kind::PValue;
        r.statistic = stat;
        r.value = p;
        r.threshold = alpha;
        r.pass = p >= alpha;
        return r;
    }

    static GofReport from_distance(std::string name, double dist, double tol) {
        GofReport r;
        r.name = std::move(name);
        r.kind = Kind::Distance;
        r.statistic = dist;
        r.value = dist;
        r.threshold = tol;
        r.pass = dist <= tol;
        return r;
    }
};

inline constexpr double kSuiteAlpha = 1e-3;

} // namespace grw
