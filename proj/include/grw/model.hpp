#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "grw/common.hpp"
#include "grw/linalg.hpp"

namespace grw {

// ---------------------------------------------------------------------------
// Configuration space
//
// N particles on a 1D lattice of L sites. A configuration q = (q_0..q_{N-1})
// is flattened particle-0-major: index = q_0 L^{N-1} + ... + q_{N-1}. With the
// leading particles taken as "system", this matches the Kronecker convention
// of tensor_product (system-major).
// ---------------------------------------------------------------------------

inline Eigen::Index pow_dim(int sites, int particles) {
    Eigen::Index d = 1;
    for (int i = 0; i < particles; ++i) {
        d *= sites;
        if (d > (1 << 20)) throw PreconditionError("Hilbert dimension too large");
    }
    return d;
}

/// Site of particle `i` in configuration `config`.
inline int config_site(Eigen::Index config, int i, int sites, int particles) {
    Eigen::Index stride = pow_dim(sites, particles - 1 - i);
    return static_cast<int>((config / stride) % sites);
}

// ---------------------------------------------------------------------------
// Collapse rate operators
//
// All Lambda_i(x) are diagonal in the configuration basis, and the diagonal
// entry at q depends only on q_i, so one L x L table w(v, x) carries the whole
// family: Lambda_i(x) has diagonal entry w(q_i, x). The Gaussian is evaluated
// at the lattice sites, truncated at the edges, and renormalized per site
// value so that sum_x a * Lambda_i(x) = I holds exactly; that makes the
// collapse-center distribution sum to one with no leftover mass.
// ---------------------------------------------------------------------------

struct CollapseOperatorFamily {
    RealMatrix weights;      // weights(v, x): diag entry of Lambda(x) when particle sits at v
    RealMatrix sqrt_weights; // elementwise square root
    RealMatrix coherence;    // k(v, v') = sum_x a * sqrt(w(v,x) w(v',x)), in [0, 1]
    double spacing = 1.0;
};

inline CollapseOperatorFamily build_collapse_family(int sites, double spacing, double sigma) {
    CollapseOperatorFamily fam;
    fam.spacing = spacing;
    fam.weights.resize(sites, sites);
    for (int v = 0; v < sites; ++v) {
        double total = 0.0;
        for (int x = 0; x < sites; ++x) {
            double dxpos = (v - x) * spacing;
            double g = std::exp(-dxpos * dxpos / (2.0 * sigma * sigma));
            fam.weights(v, x) = g;
            total += g;
        }
        for (int x = 0; x < sites; ++x) fam.weights(v, x) /= spacing * total;
    }
    fam.sqrt_weights = fam.weights.cwiseSqrt();
    fam.coherence.resize(sites, sites);
    for (int v = 0; v < sites; ++v)
        for (int u = 0; u < sites; ++u) {
            double k = 0.0;
            for (int x = 0; x < sites; ++x)
                k += spacing * fam.sqrt_weights(v, x) * fam.sqrt_weights(u, x);
            fam.coherence(v, u) = k;
        }
    return fam;
}

// ---------------------------------------------------------------------------
// Hamiltonians
// ---------------------------------------------------------------------------

enum class HamiltonianKind { Zero, Hopping };

struct PotentialSpec {
    enum class Kind { Zero, Onsite, Contact, Diagonal };
    Kind kind = Kind::Zero;
    std::vector<double> onsite;  // per-site values, summed over particles
    double contact_strength = 0.0; // g * sum_{i<j} [q_i == q_j]
    RealVector diagonal;         // explicit V(q) per configuration
};

/// Lattice Hamiltonian: per-particle nearest-neighbor hopping with amplitude
/// -1/(2 m_i a^2), onsite constant 1/(m_i a^2) (open boundaries), plus a
/// diagonal potential.
inline Matrix build_hamiltonian(int particles, int sites, double spacing,
                                const std::vector<double>& masses, HamiltonianKind kind,
                                const PotentialSpec& pot = {}) {
    Eigen::Index dim = pow_dim(sites, particles);
    Matrix h = Matrix::Zero(dim, dim);
    if (kind == HamiltonianKind::Hopping) {
        for (int i = 0; i < particles; ++i) {
            double hop = -1.0 / (2.0 * masses[static_cast<std::size_t>(i)] * spacing * spacing);
            Eigen::Index stride = pow_dim(sites, particles - 1 - i);
            for (Eigen::Index q = 0; q < dim; ++q) {
                h(q, q) += 1.0 / (masses[static_cast<std::size_t>(i)] * spacing * spacing);
                int v = config_site(q, i, sites, particles);
                if (v + 1 < sites) {
                    h(q, q + stride) += hop;
                    h(q + stride, q) += hop;
                }
            }
        }
    }
    switch (pot.kind) {
    case PotentialSpec::Kind::Zero: break;
    case PotentialSpec::Kind::Onsite:
        for (Eigen::Index q = 0; q < dim; ++q)
            for (int i = 0; i < particles; ++i)
                h(q, q) += pot.onsite[static_cast<std::size_t>(config_site(q, i, sites, particles))];
        break;
    case PotentialSpec::Kind::Contact:
        for (Eigen::Index q = 0; q < dim; ++q)
            for (int i = 0; i < particles; ++i)
                for (int j = i + 1; j < particles; ++j)
                    if (config_site(q, i, sites, particles) == config_site(q, j, sites, particles))
                        h(q, q) += pot.contact_strength;
        break;
    case PotentialSpec::Kind::Diagonal:
        if (pot.diagonal.size() != dim)
            throw DimensionError("build_hamiltonian: diagonal potential has wrong length");
        for (Eigen::Index q = 0; q < dim; ++q) h(q, q) += pot.diagonal[q];
        break;
    }
    return h;
}

// ---------------------------------------------------------------------------
// GrwModel
// ---------------------------------------------------------------------------

struct ModelCache {
    HamiltonianPropagator propagator;
    CollapseOperatorFamily collapse;
    bool hamiltonian_is_zero = false;

    ModelCache(const Matrix& h, int sites, double spacing, double sigma)
        : propagator(h), collapse(build_collapse_family(sites, spacing, sigma)),
          hamiltonian_is_zero(h.cwiseAbs().maxCoeff() == 0.0) {}
};

struct GrwModel {
    int n_particles = 1;
    int sites = 2;
    double spacing = 1.0;
    double lambda = 0.0; // per-second per-particle collapse rate
    double sigma = 1.0;  // localization width, same length unit as spacing
    std::vector<double> masses;
    Matrix hamiltonian;
    std::shared_ptr<const ModelCache> cache;

    Eigen::Index dim() const { return pow_dim(sites, n_particles); }
    double total_rate() const { return n_particles * lambda; }
    int site_of(Eigen::Index config, int label) const {
        return config_site(config, label, sites, n_particles);
    }
    const CollapseOperatorFamily& collapse() const { return cache->collapse; }
    const HamiltonianPropagator& propagator() const { return cache->propagator; }
    bool free_of_dynamics() const { return cache->hamiltonian_is_zero; }

    /// Diagonal of Lambda_label(x) over configurations.
    RealVector collapse_diag(int label, int x) const {
        RealVector d(dim());
        for (Eigen::Index q = 0; q < dim(); ++q)
            d[q] = cache->collapse.weights(site_of(q, label), x);
        return d;
    }

    RealVector collapse_sqrt_diag(int label, int x) const {
        RealVector d(dim());
        for (Eigen::Index q = 0; q < dim(); ++q)
            d[q] = cache->collapse.sqrt_weights(site_of(q, label), x);
        return d;
    }

    /// In-place psi <- Lambda_label(x)^{1/2} psi (unnormalized).
    void apply_collapse_sqrt(int label, int x, Vector& psi) const {
        for (Eigen::Index q = 0; q < psi.size(); ++q)
            psi[q] *= cache->collapse.sqrt_weights(site_of(q, label), x);
    }
};

inline GrwModel make_model(int particles, int sites, double spacing, double lambda, double sigma,
                           std::vector<double> masses, Matrix hamiltonian) {
    if (particles < 0) throw PreconditionError("make_model: negative particle count");
    if (sites < 1) throw PreconditionError("make_model: need at least one site");
    if (spacing <= 0.0 || sigma <= 0.0) throw PreconditionError("make_model: spacing and sigma must be positive");
    if (lambda < 0.0) throw PreconditionError("make_model: lambda must be nonnegative");
    if (static_cast<int>(masses.size()) != particles)
        throw PreconditionError("make_model: masses length must equal particle count");
    for (double m : masses)
        if (m <= 0.0) throw PreconditionError("make_model: masses must be positive");
    Eigen::Index dim = pow_dim(sites, particles);
    if (hamiltonian.size() == 0) hamiltonian = Matrix::Zero(dim, dim);
    if (hamiltonian.rows() != dim || hamiltonian.cols() != dim)
        throw DimensionError("make_model: Hamiltonian dimension mismatch");
    require_hermitian(hamiltonian, "make_model");
    GrwModel model;
    model.n_particles = particles;
    model.sites = sites;
    model.spacing = spacing;
    model.lambda = lambda;
    model.sigma = sigma;
    model.masses = std::move(masses);
    model.hamiltonian = std::move(hamiltonian);
    model.cache = std::make_shared<const ModelCache>(model.hamiltonian, sites, spacing, sigma);
    return model;
}

// ---------------------------------------------------------------------------
// System/environment splittings
// ---------------------------------------------------------------------------

struct SystemSplit {
    std::vector<int> sys_labels;          // ascending particle labels
    std::optional<std::set<int>> sys_region; // nullopt = all sites

    bool region_is_all(int sites) const {
        if (!sys_region) return true;
        return static_cast<int>(sys_region->size()) == sites;
    }
    bool site_in_region(int x) const { return !sys_region || sys_region->count(x) > 0; }
    bool is_system_flash(int label, int x) const {
        bool label_ok = false;
        for (int l : sys_labels)
            if (l == label) { label_ok = true; break; }
        return label_ok && site_in_region(x);
    }
};

/// Index bookkeeping for a label-based split: maps between the full
/// configuration index and the (sys, env) pair, for an arbitrary label subset.
struct SplitIndex {
    Eigen::Index d_sys = 1, d_env = 1;
    std::vector<Eigen::Index> full_of_pair; // [s * d_env + e] -> full config
    std::vector<Eigen::Index> sys_of_full;
    std::vector<Eigen::Index> env_of_full;
};

inline SplitIndex make_split_index(const GrwModel& model, const std::vector<int>& sys_labels) {
    for (int l : sys_labels)
        if (l < 0 || l >= model.n_particles)
            throw PreconditionError("split: label out of range");
    std::vector<bool> in_sys(static_cast<std::size_t>(model.n_particles), false);
    for (int l : sys_labels) in_sys[static_cast<std::size_t>(l)] = true;
    int n_sys = static_cast<int>(sys_labels.size());
    int n_env = model.n_particles - n_sys;
    SplitIndex idx;
    idx.d_sys = pow_dim(model.sites, n_sys);
    idx.d_env = pow_dim(model.sites, n_env);
    Eigen::Index dim = model.dim();
    idx.sys_of_full.resize(static_cast<std::size_t>(dim));
    idx.env_of_full.resize(static_cast<std::size_t>(dim));
    idx.full_of_pair.resize(static_cast<std::size_t>(dim));
    for (Eigen::Index q = 0; q < dim; ++q) {
        Eigen::Index s = 0, e = 0;
        for (int i = 0; i < model.n_particles; ++i) {
            int v = model.site_of(q, i);
            if (in_sys[static_cast<std::size_t>(i)])
                s = s * model.sites + v;
            else
                e = e * model.sites + v;
        }
        idx.sys_of_full[static_cast<std::size_t>(q)] = s;
        idx.env_of_full[static_cast<std::size_t>(q)] = e;
        idx.full_of_pair[static_cast<std::size_t>(s * idx.d_env + e)] = q;
    }
    return idx;
}

/// Rewrites an operator on the full space into the (sys (x) env) ordered basis.
inline Matrix permute_to_split(const Matrix& op, const SplitIndex& idx) {
    Eigen::Index dim = op.rows();
    Matrix out(dim, dim);
    for (Eigen::Index r = 0; r < dim; ++r)
        for (Eigen::Index c = 0; c < dim; ++c)
            out(r, c) = op(idx.full_of_pair[static_cast<std::size_t>(r)],
                           idx.full_of_pair[static_cast<std::size_t>(c)]);
    return out;
}

inline Vector permute_to_split(const Vector& psi, const SplitIndex& idx) {
    Vector out(psi.size());
    for (Eigen::Index r = 0; r < psi.size(); ++r)
        out[r] = psi[idx.full_of_pair[static_cast<std::size_t>(r)]];
    return out;
}

struct SplitResult {
    GrwModel sys;
    GrwModel env;
    bool is_isolated = false;
    double hamiltonian_residual = 0.0; // relative Frobenius residual of the separable fit
};

/// Factors the model across a label split. The returned sys/env Hamiltonians
/// are the Frobenius-orthogonal projections of H onto A (x) I and I (x) B
/// (trace split evenly), so they reproduce H exactly when it is separable.
/// is_isolated requires both the separable Hamiltonian and a region covering
/// all sites, since a restricted region reclassifies some system-label flashes
/// as environment flashes whose operators still act on the system factor.
inline SplitResult split(const GrwModel& model, const SystemSplit& sp) {
    SplitIndex idx = make_split_index(model, sp.sys_labels);
    Matrix hp = permute_to_split(model.hamiltonian, idx);
    Eigen::Index dim = model.dim();
    // Frobenius-orthogonal projection: tr_env(H)/d_env = A + (tr B / d_env) I
    // when H = A (x) I + I (x) B, so subtracting tr(H)/(2 dim) of identity
    // from each factor reconstructs H exactly in the separable case.
    cplx shift = dim > 0 ? hp.trace() / (2.0 * double(dim)) : cplx(0.0);
    Matrix h_sys = partial_trace(hp, idx.d_sys, idx.d_env, TraceOver::Env) / double(idx.d_env)
                 - shift * Matrix::Identity(idx.d_sys, idx.d_sys);
    Matrix h_env = partial_trace(hp, idx.d_sys, idx.d_env, TraceOver::Sys) / double(idx.d_sys)
                 - shift * Matrix::Identity(idx.d_env, idx.d_env);
    Matrix reconstructed = tensor_product(h_sys, Matrix::Identity(idx.d_env, idx.d_env))
                         + tensor_product(Matrix::Identity(idx.d_sys, idx.d_sys), h_env);
    double hnorm = hp.norm();
    double residual = hnorm > 0.0 ? (hp - reconstructed).norm() / hnorm : 0.0;

    std::vector<double> m_sys, m_env;
    std::vector<bool> in_sys(static_cast<std::size_t>(model.n_particles), false);
    for (int l : sp.sys_labels) in_sys[static_cast<std::size_t>(l)] = true;
    for (int i = 0; i < model.n_particles; ++i)
        (in_sys[static_cast<std::size_t>(i)] ? m_sys : m_env)
            .push_back(model.masses[static_cast<std::size_t>(i)]);

    SplitResult out{
        make_model(static_cast<int>(m_sys.size()), model.sites, model.spacing, model.lambda,
                   model.sigma, m_sys, hermitize(h_sys)),
        make_model(static_cast<int>(m_env.size()), model.sites, model.spacing, model.lambda,
                   model.sigma, m_env, hermitize(h_env)),
        false, residual};
    out.is_isolated = residual <= 1e-10 && sp.region_is_all(model.sites);
    return out;
}

} // namespace grw
