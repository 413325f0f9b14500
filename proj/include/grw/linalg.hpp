#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "grw/common.hpp"

namespace grw {

inline bool is_hermitian(const Matrix& m, double tol = kHermTol) {
    if (m.rows() != m.cols()) return false;
    return (m - m.adjoint()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, m.cwiseAbs().maxCoeff());
}

inline void require_hermitian(const Matrix& m, const char* what) {
    if (!is_hermitian(m)) throw PreconditionError(std::string(what) + ": matrix is not Hermitian");
}

/// (m + m†)/2 — used to scrub accumulated round-off, never to hide real skew.
inline Matrix hermitize(const Matrix& m) { return 0.5 * (m + m.adjoint()); }

/// Kronecker product, system-major index convention:
/// row index r = r_a * rows_b + r_b.
inline Matrix tensor_product(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

enum class TraceOver { Env, Sys };

/// Partial trace of an operator on H_sys (x) H_env with dims (d_sys, d_env).
inline Matrix partial_trace(const Matrix& m, Eigen::Index d_sys, Eigen::Index d_env,
                            TraceOver over = TraceOver::Env) {
    if (m.rows() != m.cols() || m.rows() != d_sys * d_env)
        throw DimensionError("partial_trace: matrix is not (d_sys*d_env) square");
    if (over == TraceOver::Env) {
        Matrix out = Matrix::Zero(d_sys, d_sys);
        for (Eigen::Index i = 0; i < d_sys; ++i)
            for (Eigen::Index j = 0; j < d_sys; ++j)
                for (Eigen::Index k = 0; k < d_env; ++k)
                    out(i, j) += m(i * d_env + k, j * d_env + k);
        return out;
    }
    Matrix out = Matrix::Zero(d_env, d_env);
    for (Eigen::Index i = 0; i < d_env; ++i)
        for (Eigen::Index j = 0; j < d_env; ++j)
            for (Eigen::Index k = 0; k < d_sys; ++k)
                out(i, j) += m(k * d_env + i, k * d_env + j);
    return out;
}

struct HermEig {
    RealVector eigenvalues; // ascending
    Matrix eigenvectors;    // columns
};

inline HermEig herm_eig(const Matrix& m) {
    require_hermitian(m, "herm_eig");
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.info() != Eigen::Success) throw Error("herm_eig: eigensolver failed to converge");
    return {es.eigenvalues(), es.eigenvectors()};
}

/// Square root of a positive semidefinite Hermitian matrix. Eigenvalues in
/// [-clamp, 0) are treated as round-off and clamped to zero; anything more
/// negative is a genuine precondition failure.
inline Matrix psd_sqrt(const Matrix& m, double clamp = kPsdEigClamp) {
    HermEig eig = herm_eig(m);
    double scale = std::max(1.0, eig.eigenvalues.cwiseAbs().maxCoeff());
    RealVector roots(eig.eigenvalues.size());
    for (Eigen::Index k = 0; k < eig.eigenvalues.size(); ++k) {
        double v = eig.eigenvalues[k];
        if (v < -clamp * scale)
            throw PreconditionError("psd_sqrt: eigenvalue below clamp threshold");
        roots[k] = std::sqrt(std::max(v, 0.0));
    }
    return eig.eigenvectors * roots.asDiagonal() * eig.eigenvectors.adjoint();
}

/// exp(-i h t) for Hermitian h via eigendecomposition; exactly unitary up to
/// the accuracy of the eigenbasis.
inline Matrix expm_skew_herm(const Matrix& h, double t) {
    HermEig eig = herm_eig(h);
    Vector phases(eig.eigenvalues.size());
    for (Eigen::Index k = 0; k < eig.eigenvalues.size(); ++k)
        phases[k] = std::exp(cplx(0.0, -eig.eigenvalues[k] * t));
    return eig.eigenvectors * phases.asDiagonal() * eig.eigenvectors.adjoint();
}

/// Same decomposition, reusable when many time arguments share one h.
struct HamiltonianPropagator {
    HermEig eig;

    explicit HamiltonianPropagator(const Matrix& h) : eig(herm_eig(h)) {}

    Matrix unitary(double t) const {
        Vector phases(eig.eigenvalues.size());
        for (Eigen::Index k = 0; k < eig.eigenvalues.size(); ++k)
            phases[k] = std::exp(cplx(0.0, -eig.eigenvalues[k] * t));
        return eig.eigenvectors * phases.asDiagonal() * eig.eigenvectors.adjoint();
    }

    Vector apply(const Vector& psi, double t) const {
        Vector w = eig.eigenvectors.adjoint() * psi;
        for (Eigen::Index k = 0; k < w.size(); ++k)
            w[k] *= std::exp(cplx(0.0, -eig.eigenvalues[k] * t));
        return eig.eigenvectors * w;
    }
};

/// (1/2) sum |eigenvalues(a - b)| for Hermitian a, b.
inline double trace_distance(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError("trace_distance: shape mismatch");
    require_hermitian(a, "trace_distance");
    require_hermitian(b, "trace_distance");
    HermEig eig = herm_eig(hermitize(a - b));
    return 0.5 * eig.eigenvalues.cwiseAbs().sum();
}

/// Largest singular value.
inline double operator_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()[0];
}

inline double min_eigenvalue(const Matrix& herm) { return herm_eig(herm).eigenvalues.minCoeff(); }

} // namespace grw
