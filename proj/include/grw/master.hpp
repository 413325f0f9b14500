#pragma once

#include <cmath>
#include <vector>

#include "grw/common.hpp"
#include "grw/linalg.hpp"
#include "grw/model.hpp"

namespace grw {

// ---------------------------------------------------------------------------
// Density operators
// ---------------------------------------------------------------------------

struct DensityOperator {
    Matrix matrix;
    Eigen::Index dim() const { return matrix.rows(); }
};

inline void require_density(const Matrix& rho, double psd_tol = 1e-10, double trace_tol = 1e-9) {
    require_hermitian(rho, "density operator");
    if (std::abs(rho.trace().real() - 1.0) > trace_tol || std::abs(rho.trace().imag()) > trace_tol)
        throw PreconditionError("density operator: trace is not 1");
    if (min_eigenvalue(rho) < -psd_tol)
        throw PreconditionError("density operator: not positive semidefinite");
}

inline Matrix pure_density(const Vector& psi) { return psi * psi.adjoint(); }

// ---------------------------------------------------------------------------
// Master equation
//
// With diagonal collapse operators the dissipator acts entrywise:
//   (sum_i sum_x a Lambda_i(x)^{1/2} rho Lambda_i(x)^{1/2})_{qq'}
//     = sum_i k(q_i, q'_i) rho_{qq'},
// with k the coherence table of the family (k(v,v) = 1 by completeness), so
// the full right-hand side is -i[H,rho] + D .* rho with a real kernel D whose
// diagonal vanishes. Diagonal states are fixed points of the dissipator and
// the trace is conserved identically.
// ---------------------------------------------------------------------------

inline RealMatrix decoherence_kernel(const GrwModel& model) {
    Eigen::Index dim = model.dim();
    RealMatrix d(dim, dim);
    const auto& k = model.collapse().coherence;
    for (Eigen::Index q = 0; q < dim; ++q)
        for (Eigen::Index p = 0; p < dim; ++p) {
            double acc = 0.0;
            for (int i = 0; i < model.n_particles; ++i)
                acc += k(model.site_of(q, i), model.site_of(p, i));
            d(q, p) = model.lambda * (acc - model.n_particles);
        }
    return d;
}

inline Matrix lindblad_rhs_with_kernel(const GrwModel& model, const Matrix& rho,
                                       const RealMatrix& kernel) {
    Matrix out = cplx(0.0, -1.0) * (model.hamiltonian * rho - rho * model.hamiltonian);
    out += kernel.cast<cplx>().cwiseProduct(rho);
    return out;
}

/// d rho / dt of the GRW master equation.
inline Matrix lindblad_rhs(const GrwModel& model, const Matrix& rho) {
    if (rho.rows() != model.dim() || rho.cols() != model.dim())
        throw DimensionError("lindblad_rhs: dimension mismatch");
    return lindblad_rhs_with_kernel(model, rho, decoherence_kernel(model));
}

/// Step count satisfying lambda*dt <= 1e-3 and ||H||*dt <= 1e-2.
inline int default_master_steps(const GrwModel& model, double duration) {
    if (duration <= 0.0) return 1;
    double hnorm = model.propagator().eig.eigenvalues.size() > 0
                       ? model.propagator().eig.eigenvalues.cwiseAbs().maxCoeff()
                       : 0.0;
    double n = std::max(model.lambda * duration / 1e-3, hnorm * duration / 1e-2);
    return std::max(1, static_cast<int>(std::ceil(n)));
}

/// Deterministic bound used by callers that compare against the integrator.
inline constexpr double master_integrator_tolerance() { return 2e-7; }

/// Fixed-step RK4 for the (linear) master equation. `hermitize_steps` scrubs
/// skew round-off after every step; it must stay off when the input is a
/// non-Hermitian basis matrix, as in channel construction.
inline Matrix integrate_master(const GrwModel& model, Matrix state, double duration, int steps,
                               bool hermitize_steps) {
    if (steps <= 0) steps = default_master_steps(model, duration);
    RealMatrix kernel = decoherence_kernel(model);
    const double dt = duration / steps;
    for (int step = 0; step < steps; ++step) {
        Matrix k1 = lindblad_rhs_with_kernel(model, state, kernel);
        Matrix k2 = lindblad_rhs_with_kernel(model, state + 0.5 * dt * k1, kernel);
        Matrix k3 = lindblad_rhs_with_kernel(model, state + 0.5 * dt * k2, kernel);
        Matrix k4 = lindblad_rhs_with_kernel(model, state + dt * k3, kernel);
        state += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (hermitize_steps) state = hermitize(state);
    }
    return state;
}

/// Evolves a density matrix over [s, t); steps = 0 picks the default policy.
inline Matrix evolve_density(const GrwModel& model, const Matrix& rho0, double s, double t,
                             int steps = 0) {
    require_density(rho0, 1e-8, 1e-8);
    Matrix rho = integrate_master(model, rho0, t - s, steps, true);
    if (std::abs(rho.trace().real() - 1.0) > 1e-8)
        throw Error("evolve_density: trace drift beyond 1e-8");
    if (min_eigenvalue(rho) < -1e-6)
        throw Error("evolve_density: PSD violation beyond 1e-6 (steps too coarse)");
    return rho;
}

// ---------------------------------------------------------------------------
// Channels (superoperators as dim^2 x dim^2 matrices, column-stacking)
// ---------------------------------------------------------------------------

inline Vector vectorize(const Matrix& m) {
    return Eigen::Map<const Vector>(m.data(), m.size());
}

inline Matrix unvectorize(const Vector& v, Eigen::Index dim) {
    return Eigen::Map<const Matrix>(v.data(), dim, dim);
}

struct ChannelMatrix {
    Matrix m; // acts on vectorized operators
    Eigen::Index dim = 0;
};

inline Matrix apply_channel(const ChannelMatrix& ch, const Matrix& t) {
    if (t.rows() != ch.dim || t.cols() != ch.dim)
        throw DimensionError("apply_channel: dimension mismatch");
    return unvectorize(ch.m * vectorize(t), ch.dim);
}

inline ChannelMatrix compose_channels(const ChannelMatrix& after, const ChannelMatrix& before) {
    if (after.dim != before.dim) throw DimensionError("compose_channels: dimension mismatch");
    return {after.m * before.m, after.dim};
}

/// Hilbert-Schmidt adjoint (Heisenberg picture).
inline ChannelMatrix adjoint_channel(const ChannelMatrix& ch) { return {ch.m.adjoint(), ch.dim}; }

inline ChannelMatrix identity_channel(Eigen::Index dim) {
    return {Matrix::Identity(dim * dim, dim * dim), dim};
}

/// Channel of T -> sum_k R_k T R_k^*; in the vec representation each Kraus
/// operator contributes conj(R) (x) R.
inline ChannelMatrix channel_from_kraus(const std::vector<Matrix>& kraus, Eigen::Index dim) {
    ChannelMatrix ch{Matrix::Zero(dim * dim, dim * dim), dim};
    for (const auto& r : kraus) ch.m += tensor_product(r.conjugate(), r);
    return ch;
}

inline ChannelMatrix unitary_channel(const Matrix& u) {
    return channel_from_kraus({u}, u.rows());
}

/// Choi matrix: X[i*d+j, k*d+l] = M[i + d*k, j + d*l]; completely positive
/// channels have PSD Choi matrices.
inline Matrix choi_matrix(const ChannelMatrix& ch) {
    Eigen::Index d = ch.dim;
    Matrix x(d * d, d * d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            for (Eigen::Index k = 0; k < d; ++k)
                for (Eigen::Index l = 0; l < d; ++l)
                    x(i * d + j, k * d + l) = ch.m(i + d * k, j + d * l);
    return x;
}

/// Largest trace defect of tr(C(E_jk)) = tr(E_jk) over the matrix-unit basis.
inline double trace_preservation_defect(const ChannelMatrix& ch) {
    Vector id = vectorize(Matrix::Identity(ch.dim, ch.dim));
    Vector row = ch.m.adjoint() * id; // <vec(I)| M
    return (row - id).cwiseAbs().maxCoeff();
}

/// Most negative Choi eigenvalue, clamped at zero for CP channels.
inline double cp_defect(const ChannelMatrix& ch) {
    Matrix x = hermitize(choi_matrix(ch));
    return std::max(0.0, -min_eigenvalue(x));
}

/// The superoperator A_{[s,t)} of the master equation, built column by column
/// by integrating every matrix unit.
inline ChannelMatrix build_channel(const GrwModel& model, double s, double t, int steps = 0) {
    Eigen::Index d = model.dim();
    ChannelMatrix ch{Matrix::Zero(d * d, d * d), d};
    if (steps <= 0) steps = default_master_steps(model, t - s);
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = 0; k < d; ++k) {
            Matrix unit = Matrix::Zero(d, d);
            unit(j, k) = 1.0;
            Matrix evolved = integrate_master(model, unit, t - s, steps, false);
            ch.m.col(j + d * k) = vectorize(evolved);
        }
    return ch;
}

} // namespace grw
