#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

#include "grw/common.hpp"
#include "grw/linalg.hpp"
#include "grw/model.hpp"
#include "grw/parallel.hpp"
#include "grw/rng.hpp"

namespace grw {

// ---------------------------------------------------------------------------
// Flash histories
// ---------------------------------------------------------------------------

struct FlashEvent {
    double t = 0.0;
    int site = 0;
    int label = 0;
};

struct FlashHistory {
    double start = 0.0;
    double end = 0.0;
    std::vector<FlashEvent> events; // strictly increasing in time

    void validate() const {
        double prev = start;
        bool first = true;
        for (const auto& e : events) {
            if (e.t < start || e.t >= end)
                throw PreconditionError("FlashHistory: event outside window");
            if (!first && e.t <= prev)
                throw PreconditionError("FlashHistory: events not strictly ordered");
            prev = e.t;
            first = false;
        }
    }

    /// Events with time in [a, b), re-windowed.
    FlashHistory slice(double a, double b) const {
        FlashHistory out;
        out.start = a;
        out.end = b;
        for (const auto& e : events)
            if (e.t >= a && e.t < b) out.events.push_back(e);
        return out;
    }
};

struct Trajectory {
    FlashHistory history;
    std::vector<std::pair<double, Vector>> checkpoints; // includes initial and final state
    std::uint64_t master_seed = 0;
    std::uint64_t stream_id = 0;

    const Vector& final_state() const { return checkpoints.back().second; }
};

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Collapse-center distribution for one label: p(x) = a <psi|Lambda_i(x)|psi>,
/// which sums to one exactly by the completeness of the renormalized family.
inline std::vector<double> collapse_center_distribution(const GrwModel& model, const Vector& psi,
                                                        int label) {
    std::vector<double> occupation(static_cast<std::size_t>(model.sites), 0.0);
    for (Eigen::Index q = 0; q < psi.size(); ++q)
        occupation[static_cast<std::size_t>(model.site_of(q, label))] += std::norm(psi[q]);
    std::vector<double> p(static_cast<std::size_t>(model.sites), 0.0);
    const auto& w = model.collapse().weights;
    for (int x = 0; x < model.sites; ++x) {
        double acc = 0.0;
        for (int v = 0; v < model.sites; ++v)
            acc += occupation[static_cast<std::size_t>(v)] * w(v, x);
        p[static_cast<std::size_t>(x)] = model.spacing * acc;
    }
    return p;
}

inline int sample_collapse_center(const GrwModel& model, const Vector& psi, int label,
                                  RngStream& rng) {
    return static_cast<int>(rng.discrete(collapse_center_distribution(model, psi, label)));
}

// ---------------------------------------------------------------------------
// Trajectory simulation
// ---------------------------------------------------------------------------

struct SimulateOptions {
    double checkpoint_dt = 0.0; // > 0 adds a dense grid of unitary checkpoints
};

/// One realization of the jump process on [t0, t1): exponential waiting times
/// at rate N*lambda, uniform labels, centers drawn from the collapse-center
/// distribution, unitary evolution in between. Checkpoints are stored at the
/// window ends and after every collapse.
inline Trajectory simulate(const GrwModel& model, const Vector& psi0, double t0, double t1,
                           RngStream& rng, const SimulateOptions& opts = {}) {
    if (std::abs(psi0.norm() - 1.0) > 1e-10)
        throw PreconditionError("simulate: initial state not normalized");
    if (t1 < t0) throw PreconditionError("simulate: empty window");
    const auto& prop = model.propagator();
    Trajectory traj;
    traj.history.start = t0;
    traj.history.end = t1;
    traj.checkpoints.emplace_back(t0, psi0);

    Vector psi = psi0;
    double t = t0;
    auto advance_unitary = [&](double target) {
        if (opts.checkpoint_dt > 0.0) {
            double next = t0;
            while (next <= t) next += opts.checkpoint_dt;
            for (; next < target; next += opts.checkpoint_dt) {
                psi = prop.apply(psi, next - t);
                t = next;
                traj.checkpoints.emplace_back(t, psi);
            }
        }
        if (target > t) {
            psi = prop.apply(psi, target - t);
            t = target;
        }
    };

    for (;;) {
        double wait = rng.exponential(model.total_rate());
        if (!(t + wait < t1)) break;
        advance_unitary(t + wait);
        int label = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(model.n_particles)));
        int center = sample_collapse_center(model, psi, label, rng);
        model.apply_collapse_sqrt(label, center, psi);
        double norm2 = psi.squaredNorm();
        if (norm2 < 1e-300)
            throw Error("simulate: collapse norm underflow (center sampled from its own distribution)");
        psi /= std::sqrt(norm2);
        traj.history.events.push_back({t, center, label});
        traj.checkpoints.emplace_back(t, psi);
    }
    advance_unitary(t1);
    traj.checkpoints.emplace_back(t1, psi);
    return traj;
}

// ---------------------------------------------------------------------------
// The operator-valued likelihood L(f)
// ---------------------------------------------------------------------------

/// L_{[s,t)}(f) for a flash history inside [s, t): the product
///   lambda^{n/2} e^{-N lambda (t-s)/2} U_{t-t_n} Lambda^{1/2} ... U_{t_1-s},
/// so that ||L(f) psi||^2 is the joint flash density with respect to
/// (counting x a) on sites/labels and Lebesgue measure on times. The empty
/// history gives e^{-N lambda (t-s)/2} U_{t-s}.
inline Matrix l_operator(const GrwModel& model, const FlashHistory& f, double s, double t) {
    for (std::size_t k = 0; k < f.events.size(); ++k) {
        const auto& e = f.events[k];
        if (e.t < s || e.t >= t) throw PreconditionError("l_operator: flash outside window");
        if (k > 0 && e.t <= f.events[k - 1].t)
            throw PreconditionError("l_operator: history not strictly ordered");
    }
    const auto& prop = model.propagator();
    Matrix m = prop.unitary(f.events.empty() ? t - s : f.events.front().t - s);
    for (std::size_t k = 0; k < f.events.size(); ++k) {
        const auto& e = f.events[k];
        RealVector d = model.collapse_sqrt_diag(e.label, e.site);
        m = d.cast<cplx>().asDiagonal() * m;
        double next = (k + 1 < f.events.size()) ? f.events[k + 1].t : t;
        m = prop.unitary(next - e.t) * m;
    }
    double n = static_cast<double>(f.events.size());
    double scalar = std::pow(model.lambda, 0.5 * n) * std::exp(-0.5 * model.total_rate() * (t - s));
    return scalar * m;
}

/// Joint density ||L(f) psi0||^2 of the history f in [s, t), with respect to
/// the product of lattice-counting (weight a per flash) and Lebesgue time
/// measure.
inline double history_density(const GrwModel& model, const Vector& psi0, const FlashHistory& f,
                              double s, double t) {
    return (l_operator(model, f, s, t) * psi0).squaredNorm();
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// Initial condition for an ensemble: a fixed pure state, or a statistical
/// mixture realized by sampling the eigen-ensemble of a density matrix.
class EnsembleInitial {
public:
    explicit EnsembleInitial(Vector pure) : pure_(std::move(pure)) {}

    explicit EnsembleInitial(const Matrix& rho) {
        HermEig eig = herm_eig(rho);
        double total = 0.0;
        for (Eigen::Index k = 0; k < eig.eigenvalues.size(); ++k) {
            double p = std::max(0.0, eig.eigenvalues[k]);
            if (p > 1e-14) {
                probs_.push_back(p);
                states_.push_back(eig.eigenvectors.col(k).normalized());
                total += p;
            }
        }
        if (probs_.empty()) throw PreconditionError("EnsembleInitial: density matrix has no mass");
        for (double& p : probs_) p /= total;
    }

    bool is_pure() const { return pure_.size() > 0; }

    Vector draw(std::uint64_t master_seed, std::uint64_t index) const {
        if (is_pure()) return pure_;
        RngStream pick(master_seed, derive_stream_id(stream_purpose::ensemble_pick, index));
        return states_[pick.discrete(probs_)];
    }

private:
    Vector pure_;
    std::vector<double> probs_;
    std::vector<Vector> states_;
};

/// Deterministic standalone replay of trajectory `index` of an ensemble.
inline Trajectory simulate_indexed(const GrwModel& model, const EnsembleInitial& initial,
                                   double t0, double t1, std::uint64_t master_seed,
                                   std::uint64_t index, const SimulateOptions& opts = {}) {
    RngStream rng(master_seed, derive_stream_id(stream_purpose::trajectory, index));
    Trajectory traj = simulate(model, initial.draw(master_seed, index), t0, t1, rng, opts);
    traj.master_seed = master_seed;
    traj.stream_id = index;
    return traj;
}

/// Runs M independent trajectories; visit(index, trajectory) must be safe to
/// call concurrently for distinct indices. Results are a pure function of
/// (model, initial, window, master_seed) regardless of the worker count.
template <typename Visit>
void run_ensemble(const GrwModel& model, const EnsembleInitial& initial, double t0, double t1,
                  std::size_t count, std::uint64_t master_seed, Visit&& visit, int jobs = 0,
                  const SimulateOptions& opts = {}) {
    parallel_for(
        count,
        [&](std::size_t i) {
            visit(i, simulate_indexed(model, initial, t0, t1, master_seed,
                                      static_cast<std::uint64_t>(i), opts));
        },
        jobs);
}

} // namespace grw
