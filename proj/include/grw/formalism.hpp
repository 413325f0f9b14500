#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "grw/common.hpp"
#include "grw/jump.hpp"
#include "grw/linalg.hpp"
#include "grw/master.hpp"
#include "grw/model.hpp"
#include "grw/parallel.hpp"
#include "grw/quadrature.hpp"
#include "grw/rng.hpp"

namespace grw {

// ---------------------------------------------------------------------------
// POVMs and Kraus maps
// ---------------------------------------------------------------------------

struct Povm {
    std::vector<std::string> outcomes;
    std::vector<Matrix> effects;
    double remainder_bound = 0.0; // truncation mass left out by the construction

    Eigen::Index dim() const { return effects.empty() ? 0 : effects.front().rows(); }

    Matrix total() const {
        Matrix t = Matrix::Zero(dim(), dim());
        for (const auto& e : effects) t += e;
        return t;
    }

    /// Operator-norm distance of sum_z E_z from the identity.
    double completeness_defect() const {
        return operator_norm(total() - Matrix::Identity(dim(), dim()));
    }

    /// Most negative eigenvalue over all effects (0 when all PSD).
    double psd_defect() const {
        double worst = 0.0;
        for (const auto& e : effects) worst = std::min(worst, min_eigenvalue(hermitize(e)));
        return -worst;
    }

    int index_of(const std::string& id) const {
        for (std::size_t k = 0; k < outcomes.size(); ++k)
            if (outcomes[k] == id) return static_cast<int>(k);
        return -1;
    }

    double probability(const Matrix& rho, std::size_t z) const {
        return (rho * effects[z]).trace().real();
    }

    /// Function property: outcomes mapped through `group` yield a POVM whose
    /// effects are exact sums of the fine-grained ones.
    Povm coarsen(const std::function<std::string(const std::string&)>& group) const {
        Povm out;
        out.remainder_bound = remainder_bound;
        std::map<std::string, std::size_t> slot;
        for (std::size_t k = 0; k < outcomes.size(); ++k) {
            std::string g = group(outcomes[k]);
            auto it = slot.find(g);
            if (it == slot.end()) {
                slot.emplace(g, out.outcomes.size());
                out.outcomes.push_back(g);
                out.effects.push_back(effects[k]);
            } else {
                out.effects[it->second] += effects[k];
            }
        }
        return out;
    }
};

inline void require_povm(const Povm& p, double psd_tol = 1e-8, double completeness_tol = 1e-8) {
    if (p.effects.size() != p.outcomes.size())
        throw PreconditionError("povm: outcomes/effects size mismatch");
    for (const auto& e : p.effects) require_hermitian(hermitize(e), "povm effect");
    if (p.psd_defect() > psd_tol) throw PreconditionError("povm: effect not PSD within tolerance");
    if (p.completeness_defect() > completeness_tol + p.remainder_bound)
        throw PreconditionError("povm: completeness defect beyond tolerance");
}

struct KrausMap {
    std::vector<Matrix> ops;

    Matrix apply(const Matrix& t) const {
        if (ops.empty()) throw PreconditionError("KrausMap: empty");
        Matrix out = Matrix::Zero(ops.front().rows(), ops.front().rows());
        for (const auto& r : ops) out += r * t * r.adjoint();
        return out;
    }

    /// sum_i R_i^* R_i: the effect this quantum operation contributes.
    Matrix effect() const {
        if (ops.empty()) throw PreconditionError("KrausMap: empty");
        Matrix out = Matrix::Zero(ops.front().cols(), ops.front().cols());
        for (const auto& r : ops) out += r.adjoint() * r;
        return out;
    }

    ChannelMatrix channel() const {
        if (ops.empty()) throw PreconditionError("KrausMap: empty");
        return channel_from_kraus(ops, ops.front().rows());
    }
};

/// Kraus decomposition from the Choi matrix; eigenvalues below the cutoff are
/// dropped as numerical rank.
inline KrausMap choi_kraus(const ChannelMatrix& ch, double rank_cutoff = 1e-10,
                           double cp_tol = 1e-8) {
    if (cp_defect(ch) > cp_tol) throw PreconditionError("choi_kraus: Choi matrix is not PSD");
    Matrix x = hermitize(choi_matrix(ch));
    HermEig eig = herm_eig(x);
    KrausMap out;
    Eigen::Index d = ch.dim;
    for (Eigen::Index k = 0; k < eig.eigenvalues.size(); ++k) {
        double lam = eig.eigenvalues[k];
        if (lam <= rank_cutoff) continue;
        Matrix r(d, d);
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j) r(i, j) = eig.eigenvectors(i * d + j, k);
        out.ops.push_back(std::sqrt(lam) * r);
    }
    if (out.ops.empty()) out.ops.push_back(Matrix::Zero(d, d));
    return out;
}

/// E_z = sum_i R_{zi}^* R_{zi} for each outcome's quantum operation.
inline Povm povm_from_kraus(const std::vector<std::string>& outcomes,
                            const std::vector<KrausMap>& maps, double remainder = 0.0) {
    if (outcomes.size() != maps.size())
        throw PreconditionError("povm_from_kraus: size mismatch");
    Povm p;
    p.outcomes = outcomes;
    p.remainder_bound = remainder;
    for (const auto& m : maps) p.effects.push_back(hermitize(m.effect()));
    return p;
}

/// Reduction property: partial expectation <phi| J |phi> over the second
/// factor of a joint-space operator.
inline Matrix partial_expect_env(const Matrix& joint, const Vector& phi, Eigen::Index d_sys,
                                 Eigen::Index d_env) {
    if (joint.rows() != d_sys * d_env || phi.size() != d_env)
        throw DimensionError("partial_expect_env: dimension mismatch");
    Matrix out = Matrix::Zero(d_sys, d_sys);
    for (Eigen::Index r = 0; r < d_sys; ++r)
        for (Eigen::Index c = 0; c < d_sys; ++c) {
            cplx acc = 0.0;
            for (Eigen::Index m = 0; m < d_env; ++m)
                for (Eigen::Index k = 0; k < d_env; ++k)
                    acc += std::conj(phi[m]) * joint(r * d_env + m, c * d_env + k) * phi[k];
            out(r, c) = acc;
        }
    return out;
}

inline Povm reduce_povm(const std::vector<std::string>& outcomes,
                        const std::vector<Matrix>& joint_effects, const Vector& phi,
                        Eigen::Index d_sys, Eigen::Index d_env) {
    Povm p;
    p.outcomes = outcomes;
    for (const auto& j : joint_effects)
        p.effects.push_back(hermitize(partial_expect_env(j, phi, d_sys, d_env)));
    return p;
}

// ---------------------------------------------------------------------------
// Calibration functions and stopping rules
// ---------------------------------------------------------------------------

/// Reads the outcome off a flash history. Built-ins cover the pointer-style
/// readouts used by the experiments; a custom function with a declared
/// outcome list is accepted as well.
struct FlashCalibration {
    enum class Kind { LastFlashRegion, MajorityRegion, CountThreshold, Constant, Custom };
    Kind kind = Kind::LastFlashRegion;
    std::vector<int> labels; // qualifying labels; empty = all
    std::vector<std::pair<std::string, std::set<int>>> regions;
    double readout_fraction = 1.0; // trailing fraction of the window (majority readout)
    int count_threshold = 1;
    std::string fallback = "none";
    std::string constant_outcome = "z0";
    std::function<std::string(const FlashHistory&)> custom;
    std::vector<std::string> custom_outcomes;

    std::vector<std::string> outcomes() const {
        switch (kind) {
        case Kind::LastFlashRegion:
        case Kind::MajorityRegion: {
            std::vector<std::string> out;
            for (const auto& [name, sites] : regions) out.push_back(name);
            out.push_back(fallback);
            return out;
        }
        case Kind::CountThreshold: return {"ge", "lt"};
        case Kind::Constant: return {constant_outcome};
        case Kind::Custom: return custom_outcomes;
        }
        return {};
    }

    bool qualifies(const FlashEvent& e) const {
        if (labels.empty()) return true;
        return std::find(labels.begin(), labels.end(), e.label) != labels.end();
    }

    std::string evaluate(const FlashHistory& f, double s, double t) const {
        switch (kind) {
        case Kind::Constant: return constant_outcome;
        case Kind::Custom: {
            std::string z = custom(f);
            if (std::find(custom_outcomes.begin(), custom_outcomes.end(), z) ==
                custom_outcomes.end())
                throw PreconditionError("calibration: custom outcome '" + z + "' not declared");
            return z;
        }
        case Kind::CountThreshold: {
            int n = 0;
            for (const auto& e : f.events)
                if (qualifies(e)) ++n;
            return n >= count_threshold ? "ge" : "lt";
        }
        case Kind::LastFlashRegion: {
            for (auto it = f.events.rbegin(); it != f.events.rend(); ++it) {
                if (!qualifies(*it)) continue;
                for (const auto& [name, sites] : regions)
                    if (sites.count(it->site) > 0) return name;
                return fallback; // last qualifying flash sits in no region
            }
            return fallback;
        }
        case Kind::MajorityRegion: {
            double r0 = t - readout_fraction * (t - s);
            std::vector<int> counts(regions.size(), 0);
            int best = -1;
            for (const auto& e : f.events) {
                if (e.t < r0 || e.t >= t || !qualifies(e)) continue;
                for (std::size_t k = 0; k < regions.size(); ++k)
                    if (regions[k].second.count(e.site) > 0) ++counts[k];
            }
            int top = 0, ties = 0;
            for (std::size_t k = 0; k < regions.size(); ++k) {
                if (counts[k] > top) {
                    top = counts[k];
                    best = static_cast<int>(k);
                    ties = 1;
                } else if (counts[k] == top && top > 0) {
                    ++ties;
                }
            }
            if (top == 0 || ties > 1 || best < 0) return fallback;
            return regions[static_cast<std::size_t>(best)].first;
        }
        }
        return fallback;
    }
};

/// Built-in stopping rules. Both depend only on flashes up to the stopping
/// time, which is what makes them stopping times in the first place;
/// `peek_offset` models a misconfigured rule that claims to read later
/// flashes and is rejected by validation.
struct StoppingRule {
    enum class Kind { FirstFlashInRegion, NthFlash };
    Kind kind = Kind::FirstFlashInRegion;
    std::vector<int> labels;  // qualifying labels; empty = all
    std::set<int> region;     // qualifying sites; empty = all
    int nth = 1;
    std::vector<double> grid; // ascending interior bin ends; timeout bin follows
    double peek_offset = 0.0;

    bool qualifies(const FlashEvent& e) const {
        if (!labels.empty() && std::find(labels.begin(), labels.end(), e.label) == labels.end())
            return false;
        if (!region.empty() && region.count(e.site) == 0) return false;
        return true;
    }

    std::size_t n_bins() const { return grid.size() + 1; } // + timeout

    /// Bin of the stopping time, or the timeout bin if the rule never fires.
    std::size_t bin_of(const FlashHistory& f) const {
        int hits = 0;
        int want = (kind == Kind::FirstFlashInRegion) ? 1 : nth;
        for (const auto& e : f.events) {
            if (!qualifies(e)) continue;
            if (++hits == want) {
                for (std::size_t b = 0; b < grid.size(); ++b)
                    if (e.t <= grid[b]) return b;
                return grid.size();
            }
        }
        return grid.size();
    }

    void validate(double s, double t) const {
        if (peek_offset != 0.0)
            throw PreconditionError("stopping rule: not adapted (configured to peek past t)");
        double prev = s;
        for (double g : grid) {
            if (g <= prev || g > t)
                throw PreconditionError("stopping rule: grid must be ascending inside the window");
            prev = g;
        }
        if (kind == Kind::NthFlash && nth < 1)
            throw PreconditionError("stopping rule: nth must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// A modeled experiment: the system is the leading `n_sys` particles of
/// `joint`, the rest is the apparatus with ready state `rho_app`. The readout
/// is either a family of pointer projectors on the apparatus factor applied
/// at the final time, or a calibration function of the flashes.
struct Experiment {
    GrwModel joint;
    int n_sys = 1;
    Matrix rho_app; // on the apparatus factor
    double start = 0.0;
    double end = 1.0;

    std::vector<std::string> pointer_outcomes;
    std::vector<Matrix> pointer_projectors; // aligned with pointer_outcomes
    std::optional<FlashCalibration> calibration;
    std::optional<StoppingRule> stopping;

    int n_max = 3;
    int quad_nodes = 8;
    double term_budget = 2e7;

    /// Exact-route diagnostic: per-label collapse rates overriding the
    /// model's uniform lambda (system-only vs apparatus-only sweeps). The
    /// Monte Carlo routes do not support it.
    std::vector<double> label_rates;

    bool pointer_mode() const { return !pointer_projectors.empty(); }
    Eigen::Index d_sys() const { return pow_dim(joint.sites, n_sys); }
    Eigen::Index d_app() const { return pow_dim(joint.sites, joint.n_particles - n_sys); }

    std::vector<std::string> outcomes() const {
        if (pointer_mode()) return pointer_outcomes;
        if (calibration) return calibration->outcomes();
        throw PreconditionError("experiment: no readout configured");
    }

    std::vector<int> apparatus_labels() const {
        std::vector<int> out;
        for (int i = n_sys; i < joint.n_particles; ++i) out.push_back(i);
        return out;
    }
};

inline void validate_experiment(const Experiment& exp) {
    if (exp.n_sys < 0 || exp.n_sys > exp.joint.n_particles)
        throw PreconditionError("experiment: system particle count out of range");
    if (!(exp.end > exp.start)) throw PreconditionError("experiment: empty window");
    if (exp.rho_app.rows() != exp.d_app() || exp.rho_app.cols() != exp.d_app())
        throw DimensionError("experiment: apparatus state dimension mismatch");
    require_density(exp.rho_app, 1e-8, 1e-8);
    if (exp.pointer_mode()) {
        if (exp.pointer_outcomes.size() != exp.pointer_projectors.size())
            throw PreconditionError("experiment: pointer outcome/projector mismatch");
        Matrix total = Matrix::Zero(exp.d_app(), exp.d_app());
        for (const auto& p : exp.pointer_projectors) {
            if (p.rows() != exp.d_app()) throw DimensionError("experiment: projector dimension");
            if ((p * p - p).norm() > 1e-10)
                throw PreconditionError("experiment: pointer operator is not a projector");
            total += p;
        }
        if ((total - Matrix::Identity(exp.d_app(), exp.d_app())).norm() > 1e-10)
            throw PreconditionError("experiment: incomplete pointer projectors");
    } else if (!exp.calibration) {
        throw PreconditionError("experiment: no readout configured");
    }
    if (exp.stopping) {
        exp.stopping->validate(exp.start, exp.end);
        if (exp.pointer_mode())
            throw PreconditionError("experiment: stopping rules need a flash calibration");
    }
}

/// Pointer projectors onto site regions for a single-particle apparatus,
/// completed with the complement region when the named ones do not cover all
/// sites.
inline std::pair<std::vector<std::string>, std::vector<Matrix>>
site_region_projectors(int sites, const std::vector<std::pair<std::string, std::set<int>>>& regions) {
    std::vector<std::string> names;
    std::vector<Matrix> projs;
    std::set<int> covered;
    for (const auto& [name, cells] : regions) {
        Matrix p = Matrix::Zero(sites, sites);
        for (int x : cells) {
            p(x, x) = 1.0;
            covered.insert(x);
        }
        names.push_back(name);
        projs.push_back(p);
    }
    if (static_cast<int>(covered.size()) < sites) {
        Matrix rest = Matrix::Identity(sites, sites);
        for (int x : covered) rest(x, x) = 0.0;
        names.push_back("elsewhere");
        projs.push_back(rest);
    }
    return {names, projs};
}

// ---------------------------------------------------------------------------
// The quantum law of operators
// ---------------------------------------------------------------------------

namespace detail {

/// R = (I (x) <m|) J (I (x) |k>) for a joint-space operator J (sys-major).
inline Matrix env_block(const Matrix& joint, Eigen::Index d_sys, Eigen::Index d_env,
                        Eigen::Index m, Eigen::Index k) {
    Matrix r(d_sys, d_sys);
    for (Eigen::Index i = 0; i < d_sys; ++i)
        for (Eigen::Index j = 0; j < d_sys; ++j) r(i, j) = joint(i * d_env + m, j * d_env + k);
    return r;
}

struct AppEnsemble {
    std::vector<double> probs;
    std::vector<Vector> states;
};

inline AppEnsemble apparatus_ensemble(const Matrix& rho_app) {
    HermEig eig = herm_eig(rho_app);
    AppEnsemble out;
    for (Eigen::Index k = 0; k < eig.eigenvalues.size(); ++k) {
        double p = eig.eigenvalues[k];
        if (p > 1e-14) {
            out.probs.push_back(p);
            out.states.push_back(eig.eigenvectors.col(k));
        }
    }
    return out;
}

} // namespace detail

struct QuantumLaw {
    Povm povm;
    std::vector<KrausMap> superops;      // aligned with povm.outcomes
    std::vector<Matrix> joint_effects;   // U* [I (x) P_z] U on the joint space
};

/// E_z = tr_app([I (x) rho_app] U* [I (x) P_z] U) with the matching Kraus
/// operators sqrt(p_k) (I (x) <m|) [I (x) P_z] U (I (x) |a_k>).
inline QuantumLaw quantum_law(const Experiment& exp) {
    validate_experiment(exp);
    if (!exp.pointer_mode())
        throw PreconditionError("quantum_law: needs pointer projectors");
    if (exp.stopping)
        throw PreconditionError("quantum_law: fixed-window form; use the random run-time law");
    Eigen::Index ds = exp.d_sys(), da = exp.d_app();
    Matrix u = exp.joint.propagator().unitary(exp.end - exp.start);
    Matrix id_rho = tensor_product(Matrix::Identity(ds, ds), exp.rho_app);
    detail::AppEnsemble ens = detail::apparatus_ensemble(exp.rho_app);

    QuantumLaw law;
    law.povm.outcomes = exp.pointer_outcomes;
    for (std::size_t z = 0; z < exp.pointer_projectors.size(); ++z) {
        Matrix pz = tensor_product(Matrix::Identity(ds, ds), exp.pointer_projectors[z]);
        Matrix joint_effect = u.adjoint() * pz * u;
        law.joint_effects.push_back(joint_effect);
        law.povm.effects.push_back(hermitize(partial_trace(id_rho * joint_effect, ds, da)));
        KrausMap km;
        Matrix pzu = pz * u;
        for (std::size_t k = 0; k < ens.probs.size(); ++k) {
            Matrix pzu_k = pzu * tensor_product(Matrix::Identity(ds, ds),
                                                Matrix(ens.states[k] * std::sqrt(ens.probs[k])));
            // pzu_k has shape (ds*da) x ds; its env rows are the Kraus blocks
            for (Eigen::Index m = 0; m < da; ++m) {
                Matrix r(ds, ds);
                for (Eigen::Index i = 0; i < ds; ++i)
                    for (Eigen::Index j = 0; j < ds; ++j) r(i, j) = pzu_k(i * da + m, j);
                km.ops.push_back(std::move(r));
            }
        }
        law.superops.push_back(std::move(km));
    }
    return law;
}

inline Povm quantum_povm(const Experiment& exp) { return quantum_law(exp).povm; }
inline std::vector<KrausMap> quantum_superops(const Experiment& exp) {
    return quantum_law(exp).superops;
}

// ---------------------------------------------------------------------------
// The GRW law of operators (exact route)
//
// The flash-history integral is truncated at n_max flashes and the ordered
// time simplex is handled by nested Gauss-Legendre rules; each flash also
// contributes a lattice weight a and a rate factor lambda, and the window
// contributes e^{-N lambda (t-s)}. The declared remainder is the Poisson tail
// P(n > n_max), which is exact because the flash count does not depend on the
// state.
// ---------------------------------------------------------------------------

namespace detail {

/// Estimated number of quadrature terms; the cost guard.
inline double term_count_estimate(int sites, int labels, int nodes, int n_max) {
    double per_level = static_cast<double>(sites) * labels * nodes;
    double total = 1.0, level = 1.0;
    for (int n = 1; n <= n_max; ++n) {
        level *= per_level;
        total += level;
    }
    return total;
}

/// Composite Gauss-Legendre rule on [a, b], split at the listed breakpoints
/// so no panel straddles a discontinuity of the integrand.
inline QuadRule composite_rule(const QuadRule& base, const std::vector<double>& breaks, double a,
                               double b) {
    QuadRule rule;
    double lo = a;
    for (double brk : breaks) {
        if (brk <= a + 1e-15 || brk >= b - 1e-15) continue;
        QuadRule piece = scaled(base, lo, brk);
        rule.nodes.insert(rule.nodes.end(), piece.nodes.begin(), piece.nodes.end());
        rule.weights.insert(rule.weights.end(), piece.weights.begin(), piece.weights.end());
        lo = brk;
    }
    QuadRule piece = scaled(base, lo, b);
    rule.nodes.insert(rule.nodes.end(), piece.nodes.begin(), piece.nodes.end());
    rule.weights.insert(rule.weights.end(), piece.weights.begin(), piece.weights.end());
    return rule;
}

template <typename Leaf>
void walk_recursive(const GrwModel& model, double t_end, int n_max, const QuadRule& base,
                    const std::vector<double>& breaks, int depth, double t_last, double measure,
                    const Matrix& pre, const Matrix& u_fin, std::vector<FlashEvent>& events,
                    Matrix& scratch, Leaf&& leaf) {
    scratch.noalias() = u_fin * pre;
    leaf(events, measure, scratch);
    if (depth == n_max || model.lambda == 0.0) return;
    if (t_end - t_last <= 0.0) return;
    const auto& prop = model.propagator();
    QuadRule rule = composite_rule(base, breaks, t_last, t_end);
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
        double tq = rule.nodes[q];
        Matrix stepped = prop.unitary(tq - t_last) * pre;
        Matrix u_fin_q = prop.unitary(t_end - tq);
        for (int label = 0; label < model.n_particles; ++label)
            for (int x = 0; x < model.sites; ++x) {
                Matrix next = stepped;
                for (Eigen::Index r = 0; r < next.rows(); ++r)
                    next.row(r) *= model.collapse().sqrt_weights(model.site_of(r, label), x);
                events.push_back({tq, x, label});
                walk_recursive(model, t_end, n_max, base, breaks, depth + 1, tq,
                               measure * rule.weights[q] * model.spacing, next, u_fin_q, events,
                               scratch, leaf);
                events.pop_back();
            }
    }
}

/// Depth-first walk over truncated flash histories in [s, t_end). The leaf
/// callback sees every node, including the empty history:
///   leaf(events, measure, lf)
/// where `measure` is the product of time-quadrature weights and lattice
/// weights a^n, and `lf` is the full operator product including the trailing
/// unitary up to t_end but without the lambda^{n/2} e^{-mu/2} scalars. The
/// matrix reference is a scratch buffer, valid only inside the call.
/// `breaks` lists interior times where the leaf's integrand may jump (bin
/// edges of a stopping rule); every level's time rule is split there so the
/// quadrature never straddles a discontinuity.
template <typename Leaf>
void walk_histories(const GrwModel& model, double s, double t_end, int n_max, int nodes,
                    Leaf&& leaf, const std::vector<double>& breaks = {}) {
    QuadRule base = gauss_legendre(nodes);
    std::vector<FlashEvent> events;
    Matrix scratch(model.dim(), model.dim());
    walk_recursive(model, t_end, n_max, base, breaks, 0, s, 1.0,
                   Matrix(Matrix::Identity(model.dim(), model.dim())),
                   model.propagator().unitary(t_end - s), events, scratch, leaf);
}

/// Parallel variant: the empty history runs in slot 0 and every first-level
/// subtree (time node x label x site) in its own slot. make_leaf(slot) must
/// hand out a leaf writing to slot-local accumulators; the caller reduces
/// them in slot order, which keeps results bitwise independent of the worker
/// count.
template <typename MakeLeaf>
std::size_t walk_histories_parallel(const GrwModel& model, double s, double t_end, int n_max,
                                    int nodes, const std::vector<double>& breaks, int jobs,
                                    MakeLeaf&& make_leaf) {
    QuadRule base = gauss_legendre(nodes);
    const auto& prop = model.propagator();
    {
        auto leaf = make_leaf(0);
        std::vector<FlashEvent> events;
        Matrix scratch = prop.unitary(t_end - s);
        leaf(events, 1.0, scratch);
    }
    if (n_max == 0 || model.lambda == 0.0) return 1;
    QuadRule rule = composite_rule(base, breaks, s, t_end);
    struct Job {
        double tq, w;
        int label, x;
    };
    std::vector<Job> job_list;
    for (std::size_t q = 0; q < rule.nodes.size(); ++q)
        for (int label = 0; label < model.n_particles; ++label)
            for (int x = 0; x < model.sites; ++x)
                job_list.push_back({rule.nodes[q], rule.weights[q], label, x});
    parallel_for(
        job_list.size(),
        [&](std::size_t ji) {
            const Job& job = job_list[ji];
            auto leaf = make_leaf(ji + 1);
            Matrix next = prop.unitary(job.tq - s);
            for (Eigen::Index r = 0; r < next.rows(); ++r)
                next.row(r) *= model.collapse().sqrt_weights(model.site_of(r, job.label), job.x);
            Matrix u_fin = prop.unitary(t_end - job.tq);
            std::vector<FlashEvent> events{{job.tq, job.x, job.label}};
            Matrix scratch(model.dim(), model.dim());
            walk_recursive(model, t_end, n_max, base, breaks, 1, job.tq,
                           job.w * model.spacing, next, u_fin, events, scratch, leaf);
        },
        jobs);
    return job_list.size() + 1;
}

} // namespace detail

struct GrwLaw {
    Povm povm;
    std::vector<KrausMap> superops;    // aligned with povm.outcomes (empty if not requested)
    std::vector<Matrix> joint_effects; // int_{zeta^{-1}(z)} df L* [I (x) P_z] L resp. L* L
    double remainder_bound = 0.0;
    std::size_t term_count = 0;
};

/// Exact construction of E^GRW (and optionally the superoperators) for a
/// fixed-window experiment, in either readout mode.
inline GrwLaw grw_law_exact(const Experiment& exp, bool with_superops) {
    validate_experiment(exp);
    if (exp.stopping)
        throw PreconditionError("grw_law_exact: fixed-window form; use the random run-time law");
    const GrwModel& m = exp.joint;
    Eigen::Index ds = exp.d_sys(), da = exp.d_app(), dj = m.dim();
    double duration = exp.end - exp.start;
    std::vector<double> rates(static_cast<std::size_t>(m.n_particles), m.lambda);
    if (!exp.label_rates.empty()) {
        if (exp.label_rates.size() != rates.size())
            throw PreconditionError("grw_law_exact: label_rates length mismatch");
        rates = exp.label_rates;
    }
    double total_rate = 0.0;
    for (double r : rates) total_rate += r;
    double mu = total_rate * duration;

    double cost = detail::term_count_estimate(m.sites, m.n_particles, exp.quad_nodes, exp.n_max);
    if (cost > exp.term_budget)
        throw BudgetError("grw_law_exact: term count " + std::to_string(cost) +
                          " exceeds budget");

    std::vector<std::string> outs = exp.outcomes();
    std::size_t nz = outs.size();
    std::vector<Matrix> joint_eff(nz, Matrix::Zero(dj, dj));
    std::vector<ChannelMatrix> chans;
    detail::AppEnsemble ens = detail::apparatus_ensemble(exp.rho_app);
    if (with_superops)
        chans.assign(nz, ChannelMatrix{Matrix::Zero(ds * ds, ds * ds), ds});

    std::vector<Matrix> pointer_joint; // I (x) P_z
    // fast path: 0/1 diagonal pointer projectors partitioning the apparatus
    // basis let every G_z accumulate by row-indexed rank-1 updates
    std::vector<int> z_of_app;
    bool diagonal_pointers = exp.pointer_mode();
    if (exp.pointer_mode()) {
        z_of_app.assign(static_cast<std::size_t>(da), -1);
        for (std::size_t z = 0; z < exp.pointer_projectors.size() && diagonal_pointers; ++z) {
            const Matrix& p = exp.pointer_projectors[z];
            for (Eigen::Index r = 0; r < da && diagonal_pointers; ++r)
                for (Eigen::Index c = 0; c < da; ++c) {
                    cplx v = p(r, c);
                    if (r != c && std::abs(v) > 0.0) {
                        diagonal_pointers = false;
                        break;
                    }
                    if (r == c) {
                        if (std::abs(v - 1.0) < 1e-14) {
                            if (z_of_app[static_cast<std::size_t>(r)] != -1)
                                diagonal_pointers = false;
                            z_of_app[static_cast<std::size_t>(r)] = static_cast<int>(z);
                        } else if (std::abs(v) > 1e-14) {
                            diagonal_pointers = false;
                        }
                    }
                }
        }
        for (const auto& p : exp.pointer_projectors)
            pointer_joint.push_back(tensor_product(Matrix::Identity(ds, ds), p));
    }

    std::size_t terms = 0;

    auto accumulate_superop = [&](ChannelMatrix& ch, const Matrix& lf, double w) {
        for (std::size_t k = 0; k < ens.probs.size(); ++k) {
            Matrix lf_k = lf * tensor_product(Matrix::Identity(ds, ds),
                                              Matrix(ens.states[k] * std::sqrt(ens.probs[k])));
            for (Eigen::Index e = 0; e < da; ++e) {
                Matrix r(ds, ds);
                for (Eigen::Index i = 0; i < ds; ++i)
                    for (Eigen::Index j = 0; j < ds; ++j) r(i, j) = lf_k(i * da + e, j);
                ch.m += w * tensor_product(r.conjugate(), r);
            }
        }
    };

    detail::walk_histories(
        m, exp.start, exp.end, exp.n_max, exp.quad_nodes,
        [&](const std::vector<FlashEvent>& events, double measure, const Matrix& lf) {
            ++terms;
            double rate_product = 1.0;
            for (const auto& e : events) rate_product *= rates[static_cast<std::size_t>(e.label)];
            double weight = measure * rate_product * std::exp(-mu);
            if (weight == 0.0) return;
            if (exp.pointer_mode()) {
                if (diagonal_pointers && !with_superops) {
                    for (Eigen::Index r = 0; r < lf.rows(); ++r) {
                        int z = z_of_app[static_cast<std::size_t>(r % da)];
                        if (z < 0) continue;
                        joint_eff[static_cast<std::size_t>(z)].noalias() +=
                            weight * (lf.row(r).adjoint() * lf.row(r));
                    }
                    return;
                }
                for (std::size_t z = 0; z < nz; ++z) {
                    Matrix plf = pointer_joint[z] * lf;
                    joint_eff[z] += weight * (plf.adjoint() * plf);
                    if (with_superops) accumulate_superop(chans[z], plf, weight);
                }
            } else {
                FlashHistory f{exp.start, exp.end, events};
                std::string z = exp.calibration->evaluate(f, exp.start, exp.end);
                int zi = -1;
                for (std::size_t k = 0; k < nz; ++k)
                    if (outs[k] == z) zi = static_cast<int>(k);
                if (zi < 0) throw PreconditionError("grw_law_exact: calibration outcome unknown");
                joint_eff[static_cast<std::size_t>(zi)] += weight * (lf.adjoint() * lf);
                if (with_superops)
                    accumulate_superop(chans[static_cast<std::size_t>(zi)], lf, weight);
            }
        });

    GrwLaw law;
    law.remainder_bound = poisson_tail(mu, exp.n_max); // flash counts are state-independent
    law.term_count = terms;
    law.povm.outcomes = outs;
    law.povm.remainder_bound = law.remainder_bound;
    Matrix id_rho = tensor_product(Matrix::Identity(ds, ds), exp.rho_app);
    for (std::size_t z = 0; z < nz; ++z) {
        law.joint_effects.push_back(joint_eff[z]);
        law.povm.effects.push_back(hermitize(partial_trace(id_rho * joint_eff[z], ds, da)));
    }
    if (with_superops)
        for (std::size_t z = 0; z < nz; ++z)
            law.superops.push_back(choi_kraus(chans[z], 1e-10, 1e-6));
    return law;
}

inline Povm grw_povm_exact(const Experiment& exp) { return grw_law_exact(exp, false).povm; }
inline std::vector<KrausMap> grw_superops_exact(const Experiment& exp) {
    return grw_law_exact(exp, true).superops;
}

// ---------------------------------------------------------------------------
// Monte Carlo route: outcome sampling and tomography
// ---------------------------------------------------------------------------

/// Simulated outcome of a single run started from the joint state psi0
/// (flash readout), or the vector of pointer probabilities <Psi_t|P_z|Psi_t>
/// (projective readout at t).
struct RunOutcome {
    int flash_outcome = -1;            // index into outcomes(), flash mode
    std::vector<double> pointer_probs; // pointer mode
};

inline RunOutcome run_experiment_once(const Experiment& exp, const Vector& psi0, RngStream& rng) {
    if (!exp.label_rates.empty())
        throw PreconditionError("run_experiment_once: label_rates is exact-route only");
    Trajectory traj = simulate(exp.joint, psi0, exp.start, exp.end, rng);
    RunOutcome out;
    if (exp.pointer_mode()) {
        Eigen::Index ds = exp.d_sys(), da = exp.d_app();
        const Vector& psi = traj.final_state();
        out.pointer_probs.resize(exp.pointer_projectors.size());
        for (std::size_t z = 0; z < exp.pointer_projectors.size(); ++z) {
            Matrix pz = tensor_product(Matrix::Identity(ds, ds), exp.pointer_projectors[z]);
            out.pointer_probs[z] = std::real(psi.dot(pz * psi));
        }
    } else if (exp.stopping) {
        std::size_t bin = exp.stopping->bin_of(traj.history);
        double bin_end = bin < exp.stopping->grid.size() ? exp.stopping->grid[bin] : exp.end;
        FlashHistory visible = traj.history.slice(exp.start, bin_end);
        std::string z = exp.calibration->evaluate(visible, exp.start, bin_end);
        auto outs = exp.outcomes();
        int zi = -1;
        for (std::size_t k = 0; k < outs.size(); ++k)
            if (outs[k] == z) zi = static_cast<int>(k);
        if (zi < 0) throw PreconditionError("run_experiment_once: calibration outcome unknown");
        out.flash_outcome = zi + static_cast<int>(bin * outs.size());
    } else {
        std::string z = exp.calibration->evaluate(traj.history, exp.start, exp.end);
        auto outs = exp.outcomes();
        for (std::size_t k = 0; k < outs.size(); ++k)
            if (outs[k] == z) out.flash_outcome = static_cast<int>(k);
    }
    return out;
}

/// dim^2 pure tomography states: |j>, (|j>+|k>)/sqrt2, (|j>+i|k>)/sqrt2.
inline std::vector<Vector> tomography_basis(Eigen::Index dim) {
    std::vector<Vector> basis;
    for (Eigen::Index j = 0; j < dim; ++j) {
        Vector v = Vector::Zero(dim);
        v[j] = 1.0;
        basis.push_back(v);
    }
    for (Eigen::Index j = 0; j < dim; ++j)
        for (Eigen::Index k = j + 1; k < dim; ++k) {
            Vector plus = Vector::Zero(dim), plus_i = Vector::Zero(dim);
            plus[j] = plus[k] = 1.0 / std::sqrt(2.0);
            plus_i[j] = 1.0 / std::sqrt(2.0);
            plus_i[k] = cplx(0.0, 1.0 / std::sqrt(2.0));
            basis.push_back(plus);
            basis.push_back(plus_i);
        }
    return basis;
}

struct TomographyResult {
    Povm povm;
    std::vector<RealMatrix> standard_errors; // per outcome, entrywise SE of |E_z| parts
    double condition_number = 0.0;
    std::size_t per_basis = 0;
};

/// Linear-inversion process tomography for tr(rho_b E_z) estimated by Monte
/// Carlo over the standard pure-state basis; solves the real least-squares
/// system in the Hermitian parametrization and propagates binomial standard
/// errors through the pseudo-inverse.
inline TomographyResult grw_povm_mc(const Experiment& exp, std::size_t per_basis,
                                    std::uint64_t master_seed, int jobs = 0) {
    validate_experiment(exp);
    Eigen::Index ds = exp.d_sys();
    std::vector<Vector> basis = tomography_basis(ds);
    std::size_t nb = basis.size();
    std::vector<std::string> outs = exp.outcomes();
    std::size_t nz = outs.size();
    std::size_t total_outcomes = nz;
    if (exp.stopping) total_outcomes = nz * exp.stopping->n_bins();

    EnsembleInitial app_pick(exp.rho_app);

    // y[b][z] estimates and standard errors
    std::vector<std::vector<double>> y(nb, std::vector<double>(total_outcomes, 0.0));
    std::vector<std::vector<double>> se(nb, std::vector<double>(total_outcomes, 0.0));

    for (std::size_t b = 0; b < nb; ++b) {
        std::vector<double> sums(total_outcomes, 0.0), sums2(total_outcomes, 0.0);
        std::mutex mu;
        parallel_for(
            per_basis,
            [&](std::size_t i) {
                std::uint64_t idx = static_cast<std::uint64_t>(b * per_basis + i);
                RngStream rng(master_seed, derive_stream_id(stream_purpose::tomography, idx));
                Vector phi = app_pick.draw(master_seed, idx);
                Vector psi0 = tensor_product(Matrix(basis[b]), Matrix(phi)).col(0);
                RunOutcome r = run_experiment_once(exp, psi0.normalized(), rng);
                std::lock_guard<std::mutex> lock(mu);
                if (exp.pointer_mode()) {
                    for (std::size_t z = 0; z < nz; ++z) {
                        sums[z] += r.pointer_probs[z];
                        sums2[z] += r.pointer_probs[z] * r.pointer_probs[z];
                    }
                } else if (r.flash_outcome >= 0) {
                    sums[static_cast<std::size_t>(r.flash_outcome)] += 1.0;
                }
            },
            jobs);
        double n = static_cast<double>(per_basis);
        for (std::size_t z = 0; z < total_outcomes; ++z) {
            double mean = sums[z] / n;
            y[b][z] = mean;
            double var;
            if (exp.pointer_mode())
                var = std::max(0.0, sums2[z] / n - mean * mean);
            else
                var = mean * (1.0 - mean);
            se[b][z] = std::sqrt(std::max(var, 1.0 / (n * n)) / n);
        }
    }

    // Real design matrix over the Hermitian parametrization of E.
    Eigen::Index np = ds * ds;
    RealMatrix a(static_cast<Eigen::Index>(nb), np);
    for (std::size_t b = 0; b < nb; ++b) {
        Matrix rho = pure_density(basis[b]);
        Eigen::Index col = 0;
        for (Eigen::Index j = 0; j < ds; ++j) a(static_cast<Eigen::Index>(b), col++) = rho(j, j).real();
        for (Eigen::Index j = 0; j < ds; ++j)
            for (Eigen::Index k = j + 1; k < ds; ++k) {
                a(static_cast<Eigen::Index>(b), col++) = 2.0 * rho(j, k).real();
                a(static_cast<Eigen::Index>(b), col++) = 2.0 * rho(j, k).imag();
            }
    }
    Eigen::JacobiSVD<RealMatrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    double smin = svd.singularValues().minCoeff();
    if (smin < 1e-12) throw Error("grw_povm_mc: singular tomography system");
    RealMatrix pinv = svd.matrixV() * svd.singularValues().cwiseInverse().asDiagonal() *
                      svd.matrixU().transpose();

    TomographyResult res;
    res.per_basis = per_basis;
    res.condition_number = svd.singularValues().maxCoeff() / smin;
    for (std::size_t z = 0; z < total_outcomes; ++z) {
        RealVector yz(static_cast<Eigen::Index>(nb)), sz(static_cast<Eigen::Index>(nb));
        for (std::size_t b = 0; b < nb; ++b) {
            yz[static_cast<Eigen::Index>(b)] = y[b][z];
            sz[static_cast<Eigen::Index>(b)] = se[b][z];
        }
        RealVector theta = pinv * yz;
        RealVector theta_var = (pinv.array().square().matrix() * sz.array().square().matrix());
        Matrix e = Matrix::Zero(ds, ds);
        RealMatrix ese = RealMatrix::Zero(ds, ds);
        Eigen::Index col = 0;
        for (Eigen::Index j = 0; j < ds; ++j) {
            e(j, j) = theta[col];
            ese(j, j) = std::sqrt(theta_var[col]);
            ++col;
        }
        for (Eigen::Index j = 0; j < ds; ++j)
            for (Eigen::Index k = j + 1; k < ds; ++k) {
                double re = theta[col], vre = theta_var[col];
                ++col;
                double im = theta[col], vim = theta_var[col];
                ++col;
                e(j, k) = cplx(re, im);
                e(k, j) = cplx(re, -im);
                double s2 = std::sqrt(vre + vim);
                ese(j, k) = s2;
                ese(k, j) = s2;
            }
        std::string id;
        if (exp.stopping) {
            std::size_t bin = z / nz;
            id = outs[z % nz] + "@bin" + std::to_string(bin);
        } else {
            id = outs[z];
        }
        res.povm.outcomes.push_back(id);
        res.povm.effects.push_back(e);
        res.standard_errors.push_back(ese);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Random run-time law
// ---------------------------------------------------------------------------

inline std::string rr_outcome_id(const std::string& z, std::size_t bin) {
    return z + "@bin" + std::to_string(bin);
}

/// Joint (outcome, finishing-time-bin) POVM for a stopping-rule experiment:
/// bin b integrates histories on [s, e_b) whose stopping time lands in bin b,
/// with the likelihood window ending at e_b; the final bin is the timeout.
inline GrwLaw random_runtime_povm_exact(const Experiment& exp, bool with_superops = false) {
    validate_experiment(exp);
    if (!exp.stopping) throw PreconditionError("random_runtime_povm: no stopping rule");
    if (exp.pointer_mode())
        throw PreconditionError("random_runtime_povm: flash calibration required");
    if (!exp.label_rates.empty())
        throw PreconditionError("random_runtime_povm: label_rates unsupported here");
    const StoppingRule& rule = *exp.stopping;
    const GrwModel& m = exp.joint;
    Eigen::Index ds = exp.d_sys(), da = exp.d_app(), dj = m.dim();
    std::vector<std::string> outs = exp.outcomes();
    std::size_t nz = outs.size();
    std::size_t nbins = rule.n_bins();

    double cost = 0.0;
    for (std::size_t b = 0; b < nbins; ++b) {
        int segs = static_cast<int>(std::min(b, rule.grid.size())) + 1;
        cost += detail::term_count_estimate(m.sites, m.n_particles, exp.quad_nodes * segs,
                                            exp.n_max);
    }
    if (cost > exp.term_budget)
        throw BudgetError("random_runtime_povm: term count exceeds budget");

    GrwLaw law;
    law.joint_effects.assign(nz * nbins, Matrix::Zero(dj, dj));
    std::vector<ChannelMatrix> chans;
    detail::AppEnsemble ens = detail::apparatus_ensemble(exp.rho_app);
    if (with_superops)
        chans.assign(nz * nbins, ChannelMatrix{Matrix::Zero(ds * ds, ds * ds), ds});

    for (std::size_t b = 0; b < nbins; ++b) {
        double bin_end = b < rule.grid.size() ? rule.grid[b] : exp.end;
        double mu_b = m.total_rate() * (bin_end - exp.start);
        // stopping-time indicators jump at the grid edges, so the time rules
        // are split there (earlier edges only; later ones are out of range)
        std::vector<double> breaks(rule.grid.begin(),
                                   rule.grid.begin() + static_cast<std::ptrdiff_t>(
                                                           std::min(b, rule.grid.size())));
        detail::walk_histories(
            m, exp.start, bin_end, exp.n_max, exp.quad_nodes,
            [&](const std::vector<FlashEvent>& events, double measure, const Matrix& lf) {
                FlashHistory f{exp.start, bin_end, events};
                if (rule.bin_of(f) != b) return;
                double n = static_cast<double>(events.size());
                double weight = measure * std::pow(m.lambda, n) * std::exp(-mu_b);
                std::string z = exp.calibration->evaluate(f, exp.start, bin_end);
                int zi = -1;
                for (std::size_t k = 0; k < nz; ++k)
                    if (outs[k] == z) zi = static_cast<int>(k);
                if (zi < 0)
                    throw PreconditionError("random_runtime_povm: calibration outcome unknown");
                std::size_t slot = b * nz + static_cast<std::size_t>(zi);
                law.joint_effects[slot] += weight * (lf.adjoint() * lf);
                if (with_superops) {
                    for (std::size_t k = 0; k < ens.probs.size(); ++k) {
                        Matrix lf_k = lf * tensor_product(Matrix::Identity(ds, ds),
                                                          Matrix(ens.states[k] *
                                                                 std::sqrt(ens.probs[k])));
                        for (Eigen::Index e = 0; e < da; ++e) {
                            Matrix r(ds, ds);
                            for (Eigen::Index i = 0; i < ds; ++i)
                                for (Eigen::Index j = 0; j < ds; ++j)
                                    r(i, j) = lf_k(i * da + e, j);
                            chans[slot].m += weight * tensor_product(r.conjugate(), r);
                        }
                    }
                }
                ++law.term_count;
            },
            breaks);
    }

    law.remainder_bound = poisson_tail(m.total_rate() * (exp.end - exp.start), exp.n_max);
    law.povm.remainder_bound = law.remainder_bound;
    Matrix id_rho = tensor_product(Matrix::Identity(ds, ds), exp.rho_app);
    for (std::size_t b = 0; b < nbins; ++b)
        for (std::size_t z = 0; z < nz; ++z) {
            law.povm.outcomes.push_back(rr_outcome_id(outs[z], b));
            law.povm.effects.push_back(
                hermitize(partial_trace(id_rho * law.joint_effects[b * nz + z], ds, da)));
        }
    if (with_superops)
        for (std::size_t b = 0; b < nbins; ++b)
            for (std::size_t z = 0; z < nz; ++z)
                law.superops.push_back(choi_kraus(chans[b * nz + z], 1e-10, 1e-6));
    return law;
}

// ---------------------------------------------------------------------------
// Consecutive experiments
// ---------------------------------------------------------------------------

struct ExperimentLaw {
    Povm povm;
    std::vector<KrausMap> superops;
};

struct GapSpec {
    enum class Kind { None, Unitary, GrwChannel } kind = Kind::None;
    Matrix hamiltonian;    // for Kind::Unitary
    double duration = 0.0;
    std::optional<GrwModel> model; // for Kind::GrwChannel (system-sized)

    ChannelMatrix channel(Eigen::Index dim) const {
        switch (kind) {
        case Kind::None: return identity_channel(dim);
        case Kind::Unitary: return unitary_channel(expm_skew_herm(hamiltonian, duration));
        case Kind::GrwChannel: return build_channel(*model, 0.0, duration);
        }
        return identity_channel(dim);
    }
};

/// Law of the composite experiment "e1, gap, e2":
///   E_{(z1,z2)} = sum_i R1*_{z1,i} Gap^dag(E_{2,z2}) R1_{z1,i},
///   C_{(z1,z2)} = C_{2,z2} o Gap o C_{1,z1}.
inline ExperimentLaw compose_experiments(const ExperimentLaw& e1, const ExperimentLaw& e2,
                                         const GapSpec& gap) {
    if (e1.povm.dim() != e2.povm.dim())
        throw DimensionError("compose_experiments: dimension mismatch");
    if (e1.superops.size() != e1.povm.outcomes.size() ||
        e2.superops.size() != e2.povm.outcomes.size())
        throw PreconditionError("compose_experiments: superoperators required per outcome");
    Eigen::Index d = e1.povm.dim();
    ChannelMatrix g = gap.channel(d);
    ChannelMatrix g_heis = adjoint_channel(g);
    ExperimentLaw out;
    for (std::size_t z1 = 0; z1 < e1.povm.outcomes.size(); ++z1) {
        const KrausMap& k1 = e1.superops[z1];
        for (std::size_t z2 = 0; z2 < e2.povm.outcomes.size(); ++z2) {
            Matrix e2_heis = apply_channel(g_heis, e2.povm.effects[z2]);
            Matrix eff = Matrix::Zero(d, d);
            for (const auto& r : k1.ops) eff += r.adjoint() * e2_heis * r;
            out.povm.outcomes.push_back("(" + e1.povm.outcomes[z1] + "," +
                                        e2.povm.outcomes[z2] + ")");
            out.povm.effects.push_back(hermitize(eff));
            ChannelMatrix composed = compose_channels(
                e2.superops[z2].channel(), compose_channels(g, k1.channel()));
            out.superops.push_back(choi_kraus(composed, 1e-12, 1e-6));
        }
    }
    out.povm.remainder_bound = e1.povm.remainder_bound + e2.povm.remainder_bound;
    return out;
}

// ---------------------------------------------------------------------------
// Conditional density matrices
// ---------------------------------------------------------------------------

/// Built-in cylinder events on the flash history of a window.
struct FlashEventPredicate {
    enum class Kind { All, CountIn, FirstFlashInRegion };
    Kind kind = Kind::All;
    std::set<int> counts;  // accepted flash counts, for CountIn
    std::set<int> region;  // accepted first-flash sites, for FirstFlashInRegion

    bool evaluate(const FlashHistory& f) const {
        switch (kind) {
        case Kind::All: return true;
        case Kind::CountIn: return counts.count(static_cast<int>(f.events.size())) > 0;
        case Kind::FirstFlashInRegion:
            return !f.events.empty() && region.count(f.events.front().site) > 0;
        }
        return false;
    }
};

struct ConditionalDensity {
    Matrix rho;
    double event_probability = 0.0;
    std::size_t sample_hits = 0; // MC route only
};

/// Exact route (truncated quadrature of L rho0 L* over the event).
inline ConditionalDensity conditional_density_exact(const GrwModel& model, const Matrix& rho0,
                                                    const FlashEventPredicate& event, double s,
                                                    double t, int n_max = 4, int nodes = 8,
                                                    double min_probability = 1e-6,
                                                    double term_budget = 2e7) {
    require_density(rho0, 1e-8, 1e-8);
    if (detail::term_count_estimate(model.sites, model.n_particles, nodes, n_max) > term_budget)
        throw BudgetError("conditional_density_exact: term count exceeds budget");
    double mu = model.total_rate() * (t - s);
    Matrix acc = Matrix::Zero(model.dim(), model.dim());
    detail::walk_histories(
        model, s, t, n_max, nodes,
        [&](const std::vector<FlashEvent>& events, double measure, const Matrix& lf) {
            FlashHistory f{s, t, events};
            if (!event.evaluate(f)) return;
            double weight = measure * std::pow(model.lambda, static_cast<double>(events.size())) *
                            std::exp(-mu);
            acc += weight * (lf * rho0 * lf.adjoint());
        });
    ConditionalDensity out;
    out.event_probability = acc.trace().real();
    if (out.event_probability < min_probability)
        throw PreconditionError("conditional_density: event probability below threshold");
    out.rho = hermitize(acc / out.event_probability);
    return out;
}

/// Monte Carlo route (conditioned ensemble average of |psi_t><psi_t|).
inline ConditionalDensity conditional_density_mc(const GrwModel& model,
                                                 const EnsembleInitial& initial,
                                                 const FlashEventPredicate& event, double s,
                                                 double t, std::size_t count,
                                                 std::uint64_t master_seed, int jobs = 0,
                                                 double min_probability = 1e-6) {
    Matrix acc = Matrix::Zero(model.dim(), model.dim());
    std::size_t hits = 0;
    std::mutex mu;
    run_ensemble(model, initial, s, t, count, master_seed,
                 [&](std::size_t, const Trajectory& traj) {
                     if (!event.evaluate(traj.history)) return;
                     Matrix p = pure_density(traj.final_state());
                     std::lock_guard<std::mutex> lock(mu);
                     acc += p;
                     ++hits;
                 },
                 jobs);
    ConditionalDensity out;
    out.sample_hits = hits;
    out.event_probability = static_cast<double>(hits) / static_cast<double>(count);
    if (out.event_probability < min_probability)
        throw PreconditionError("conditional_density: event probability below threshold");
    out.rho = hermitize(acc / static_cast<double>(hits));
    return out;
}

} // namespace grw
