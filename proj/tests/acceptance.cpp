// Acceptance suite: every release criterion as one pass/fail line, pinned
// tolerances, fixed seeds. Exit status 0 only when every criterion holds.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <string>
#include <vector>

#include "grw/experiments.hpp"
#include "grw/io.hpp"
#include "grw/presets.hpp"
#include "grw/verify.hpp"

using namespace grw;
using namespace grw::presets;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %02d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// 1. Stochastic unraveling of the master equation.
void criterion_unraveling() {
    auto t0 = std::chrono::steady_clock::now();
    Matrix h = build_hamiltonian(1, 8, 1.0, {1.0}, HamiltonianKind::Hopping);
    GrwModel model = make_model(1, 8, 1.0, 1.0, 1.0, {1.0}, h); // N lambda t = 1 at t = 1
    Vector psi0 = two_packet(1, 6, 8);
    const std::size_t M = 10000;
    Matrix sum = Matrix::Zero(8, 8);
    std::mutex mu;
    run_ensemble(model, EnsembleInitial(psi0), 0.0, 1.0, M, 101,
                 [&](std::size_t, const Trajectory& traj) {
                     Matrix p = pure_density(traj.final_state());
                     std::lock_guard<std::mutex> lock(mu);
                     sum += p;
                 });
    Matrix avg = hermitize(sum / double(M));
    Matrix exact = evolve_density(model, pure_density(psi0), 0.0, 1.0);
    double dist = trace_distance(avg, exact);
    double elapsed = seconds_since(t0);
    report(1, "unraveling", dist <= 0.05 && elapsed <= 120.0,
           "trace distance " + fmt(dist) + " <= 0.05, runtime " + fmt(elapsed) + " s <= 120");
}

// 2 + 3. POVM axioms and the consistency identity on the exact routes.
void criterion_povm_axioms_and_consistency() {
    Experiment exp = standard_experiment(0.15, 1.0, 3, 8); // N lambda t = 0.3
    GrwLaw grw = grw_law_exact(exp, true);
    double mu = exp.joint.total_rate() * (exp.end - exp.start);
    double remainder = poisson_tail(mu, exp.n_max);
    double defect = grw.povm.completeness_defect();
    double psd = grw.povm.psd_defect();
    report(2, "povm-axioms",
           defect <= 1e-3 + remainder && psd <= 1e-8,
           "completeness defect " + fmt(defect) + " <= 1e-3 + " + fmt(remainder) +
               ", psd defect " + fmt(psd) + " <= 1e-8");

    auto consistency = [](const Povm& p, const std::vector<KrausMap>& maps) {
        double worst = 0.0;
        Eigen::Index d = p.dim();
        for (std::size_t z = 0; z < p.effects.size(); ++z)
            for (Eigen::Index j = 0; j < d; ++j)
                for (Eigen::Index k = 0; k < d; ++k) {
                    Matrix t = Matrix::Zero(d, d);
                    t(j, k) = 1.0;
                    worst = std::max(worst, std::abs((t * p.effects[z]).trace() -
                                                     maps[z].apply(t).trace()));
                }
        return worst;
    };
    QuantumLaw qu = quantum_law(exp);
    double dq = consistency(qu.povm, qu.superops);
    double dg = consistency(grw.povm, grw.superops);
    report(3, "consistency-identity", dq <= 1e-8 && dg <= 1e-8,
           "max |tr(T E_z) - tr C_z(T)|: quantum " + fmt(dq) + ", GRW " + fmt(dg) +
               " (both <= 1e-8)");
}

// 4. Quantum limit and first-order deviation scaling.
void criterion_quantum_limit() {
    Experiment zero = standard_experiment(0.0, 1.0, 3, 8);
    Povm qu = quantum_povm(zero);
    Povm grw0 = grw_povm_exact(zero);
    double d0 = 0.0;
    for (std::size_t z = 0; z < qu.effects.size(); ++z)
        d0 = std::max(d0, (grw0.effects[z] - qu.effects[z]).cwiseAbs().maxCoeff());

    DeviationSweepParams prm;
    prm.lambdas = {5e-4, 1.6e-3, 5e-3, 1.6e-2, 5e-2}; // lambda (t-s) in [1e-3, 1e-1], N = 2
    prm.n_max = 3;
    prm.quad_nodes = 8;
    ScenarioResult sweep = run_deviation_sweep(
        [&](double lam) { return standard_experiment(lam, 1.0, 3, 8); }, prm);
    double slope = sweep.measured.back().value;
    report(4, "quantum-limit",
           d0 <= 1e-10 && slope >= 0.8 && slope <= 1.2,
           "entrywise |E_grw(0) - E_qu| " + fmt(d0) + " <= 1e-10, log-log slope " + fmt(slope) +
               " in [0.8, 1.2]");
}

// 5. Tomographic Monte Carlo POVM against the exact construction.
void criterion_tomography() {
    Experiment exp = standard_experiment(0.15, 1.0, 3, 8);
    GrwLaw law = grw_law_exact(exp, false);
    TomographyResult tomo = grw_povm_mc(exp, 100000, 505);
    double worst_sigma = 0.0;
    bool pass = true;
    for (std::size_t z = 0; z < law.povm.effects.size(); ++z) {
        Matrix diff = tomo.povm.effects[z] - law.povm.effects[z];
        for (Eigen::Index i = 0; i < diff.rows(); ++i)
            for (Eigen::Index j = 0; j < diff.cols(); ++j) {
                double allowed = 4.0 * tomo.standard_errors[z](i, j) + law.remainder_bound;
                double sig = std::abs(diff(i, j)) /
                             std::max(tomo.standard_errors[z](i, j), 1e-12);
                if (std::abs(diff(i, j)) > allowed) pass = false;
                worst_sigma = std::max(worst_sigma, sig);
            }
    }
    report(5, "tomography", pass,
           "every entry within 4 SE + remainder (worst deviation " + fmt(worst_sigma) +
               " SE, M = 1e5 per basis element)");
}

// 6. Conditional probability formula plus its negative control.
void criterion_conditional() {
    Matrix h = build_hamiltonian(1, 4, 1.0, {1.0}, HamiltonianKind::Hopping);
    GrwModel model = make_model(1, 4, 1.0, 1.2, 0.6, {1.0}, h);
    Vector psi0 = two_packet(0, 3, 4);
    ConditionalProbabilityOptions opts;
    opts.trajectories = 100000;
    GofReport rep = with_rerun_policy(
        [&](std::uint64_t seed) {
            return test_conditional_probability(model, psi0, 0.5, 1.0, seed, opts);
        },
        606);
    opts.uncollapsed_restart_control = true;
    GofReport control = test_conditional_probability(model, psi0, 0.5, 1.0, 606, opts);
    report(6, "conditional-probability",
           rep.pass && control.value < 1e-6,
           "combined p " + fmt(rep.value) + " > 0.001; uncollapsed-restart control p " +
               fmt(control.value) + " < 1e-6");
}

// 7. Marginal probability and independence, with negative controls.
void criterion_marginal_and_independence() {
    SystemSplit sp{{0}, std::nullopt};
    GrwModel iso = separable_pair(0.4);
    Vector bell = entangled_pair_state();
    MarginalProbabilityOptions mopts;
    mopts.trajectories = 100000;
    GofReport marginal = with_rerun_policy(
        [&](std::uint64_t seed) {
            return test_marginal_probability(iso, sp, bell, 1.0, seed, mopts);
        },
        707);
    mopts.allow_non_isolated = true;
    GofReport mcontrol =
        test_marginal_probability(interacting_pair(0.4), sp, bell, 1.0, 707, mopts);

    GrwModel iso2 = separable_pair(0.5);
    Vector product = tensor_product(Matrix(two_packet(0, 3, 4)), Matrix(two_packet(0, 3, 4)))
                         .col(0);
    IndependenceOptions iopts;
    iopts.trajectories = 100000;
    GofReport indep = with_rerun_policy(
        [&](std::uint64_t seed) { return test_independence(iso2, sp, product, 1.0, seed, iopts); },
        708);
    GofReport icontrol = test_independence(iso2, sp, bell, 1.0, 708, iopts);

    report(7, "marginal-and-independence",
           marginal.pass && !mcontrol.pass && indep.pass && !icontrol.pass,
           "marginal p " + fmt(marginal.value) + ", independence p " + fmt(indep.value) +
               " (both > 0.001); controls reject (p " + fmt(mcontrol.value) + ", " +
               fmt(icontrol.value) + ")");
}

// 8. Marginal master equation at deterministic precision.
void criterion_marginal_master() {
    SystemSplit sp{{0}, std::nullopt};
    GrwModel iso = separable_pair(0.5);
    Vector bell = Vector::Zero(16);
    bell[0 * 4 + 1] = 1.0 / std::sqrt(2.0);
    bell[2 * 4 + 3] = 1.0 / std::sqrt(2.0);
    GofReport rep = test_marginal_master(iso, sp, pure_density(bell), 1.0);
    report(8, "marginal-master", rep.pass && rep.value <= 1e-6,
           "trace distance " + fmt(rep.value) + " <= 1e-6 (5x integrator tolerance)");
}

// 9. Density-matrix sufficiency and the GRWm contrast.
void criterion_sufficiency() {
    GrwModel model = make_model(1, 4, 1.0, 1.0, 0.5, {1.0}, {});
    Vector u = basis_state(0, 4), d = basis_state(3, 4);
    StateEnsemble ud{{0.5, 0.5}, {u, d}};
    StateEnsemble lr{{0.5, 0.5}, {(u + d).normalized(), (u - d).normalized()}};
    SufficiencyOptions opts;
    opts.trajectories = 100000;
    SufficiencyReport rep = test_density_sufficiency(model, ud, lr, 0.7, 909, opts);
    report(9, "density-sufficiency",
           rep.flash_report.pass && rep.matter_report.pass,
           "flash two-sample p " + fmt(rep.flash_report.value) +
               " > 0.001; matter-density contrast p " + fmt(rep.matter_report.value) +
               " < 1e-4");
}

// 10. The collapse-retrodiction experiment.
void criterion_collapse_detection() {
    CollapseDetectionParams prm;
    prm.trajectories = 100000;
    ScenarioResult res = run_collapse_detection(prm, 1010);
    bool z1_ok = res.measured[0].pass;
    bool z0_ok = res.measured[1].pass && res.measured[1].value == 1.0;
    report(10, "collapse-retrodiction", z1_ok && z0_ok,
           "P(C>0 | Z=1) = " + fmt(res.measured[0].value) + " within 4 sigma of " +
               fmt(res.measured[0].reference) + "; P(C>0 | Z=0) = " +
               fmt(res.measured[1].value) + " exactly");
}

// 11. Poisson collapse counts.
void criterion_poisson() {
    GrwModel model = make_model(2, 3, 1.0, 1.0, 0.8, {1.0, 1.0}, {}); // N lambda t = 2
    Vector psi0 = basis_state(4, 9);
    PoissonOptions opts;
    opts.trajectories = 100000;
    GofReport rep = with_rerun_policy(
        [&](std::uint64_t seed) { return test_poisson_counts(model, psi0, 1.0, seed, opts); },
        1111);
    report(11, "poisson-counts", rep.pass, "chi-square p " + fmt(rep.value) + " > 0.001");
}

// 12. Composition: projectivity in the commuting-ideal case and the
// sequential-simulation joint table.
void criterion_composition() {
    // commuting ideal pair, zero gap, quantum law
    Experiment ideal = qubit_meter_experiment(0.0);
    QuantumLaw law = quantum_law(ideal);
    ExperimentLaw e{law.povm, law.superops};
    ExperimentLaw joint = compose_experiments(e, e, GapSpec{});
    double proj = 0.0;
    for (const auto& eff : joint.povm.effects)
        proj = std::max(proj, (eff * eff - eff).norm());

    Experiment e1 = qubit_meter_experiment(0.25);
    Experiment e2 = qubit_meter_x_experiment(0.25);
    e1.n_max = e2.n_max = 4;
    e1.quad_nodes = e2.quad_nodes = 6;
    Vector psi0(2);
    psi0 << std::sqrt(0.7), std::sqrt(0.3);
    ConsecutiveParams prm;
    prm.trajectories = 100000;
    ScenarioResult res = run_consecutive(e1, e2, psi0, prm, 1212);
    bool cells_ok = res.pass;
    report(12, "composition", proj <= 1e-9 && cells_ok,
           "commuting-ideal ||E^2 - E|| " + fmt(proj) +
               " <= 1e-9; sequential joint table within 4 sigma per cell (M = 1e5)");
}

// 13. Random run-time law against the simulated (Z, T) histogram.
void criterion_random_runtime() {
    Experiment exp = qubit_meter_experiment(0.2, 1.0); // N lambda T = 0.4
    exp.pointer_outcomes.clear();
    exp.pointer_projectors.clear();
    FlashCalibration cal;
    cal.kind = FlashCalibration::Kind::LastFlashRegion;
    cal.labels = {1};
    cal.regions = {{"0", {0}}, {"1", {1}}};
    exp.calibration = cal;
    StoppingRule rule;
    rule.kind = StoppingRule::Kind::FirstFlashInRegion;
    rule.labels = {1};
    rule.grid = {0.35, 0.7};
    exp.stopping = rule;
    exp.n_max = 3;
    exp.quad_nodes = 5;

    GrwLaw rr = random_runtime_povm_exact(exp);
    double defect = rr.povm.completeness_defect();

    RngStream rng(1313, 0);
    Vector psi_sys(2);
    psi_sys << std::sqrt(0.6), std::sqrt(0.4);
    Vector psi0 = tensor_product(Matrix(psi_sys), Matrix(basis_state(0, 2))).col(0);
    const std::size_t M = 100000;
    std::vector<double> counts(rr.povm.outcomes.size(), 0.0);
    std::mutex mu;
    run_ensemble(exp.joint, EnsembleInitial(psi0), exp.start, exp.end, M, 1313,
                 [&](std::size_t, const Trajectory& traj) {
                     std::size_t bin = exp.stopping->bin_of(traj.history);
                     double bin_end =
                         bin < exp.stopping->grid.size() ? exp.stopping->grid[bin] : exp.end;
                     FlashHistory visible = traj.history.slice(exp.start, bin_end);
                     std::string z = exp.calibration->evaluate(visible, exp.start, bin_end);
                     int k = rr.povm.index_of(rr_outcome_id(z, bin));
                     std::lock_guard<std::mutex> lock(mu);
                     counts[static_cast<std::size_t>(k)] += 1.0;
                 });
    Matrix rho = pure_density(psi_sys);
    std::vector<double> expected;
    for (std::size_t z = 0; z < rr.povm.outcomes.size(); ++z)
        expected.push_back(rr.povm.probability(rho, z) * double(M));
    auto gof = chi_square_gof(counts, expected);
    report(13, "random-runtime", gof.p_value > 1e-3 && defect <= 1e-3 + rr.remainder_bound,
           "joint (Z,T) chi-square p " + fmt(gof.p_value) + " > 0.001; completeness defect " +
               fmt(defect) + " <= 1e-3 + " + fmt(rr.remainder_bound));
}

// 14. Macro-history equivalence of GRWm and GRWf readouts.
void criterion_macro_equivalence() {
    TwoPointerParams prm; // N lambda t = 20 amplified
    prm.trajectories = 10000;
    ScenarioResult res = run_two_pointer(prm, 1414);
    double agreement = res.measured[0].value;
    report(14, "macro-history-equivalence", agreement >= 0.99,
           "GRWm/GRWf agreement " + fmt(agreement) + " >= 0.99 at N lambda t = 20, M = 1e4 (" +
               res.notes + ")");
}

// 15. Determinism of trajectory records across runs and worker counts.
void criterion_determinism() {
    Matrix h = build_hamiltonian(1, 8, 1.0, {1.0}, HamiltonianKind::Hopping);
    GrwModel model = make_model(1, 8, 1.0, 1.0, 1.0, {1.0}, h);
    EnsembleInitial init(two_packet(1, 6, 8));
    auto a = simulate_to_jsonl(model, init, 0.0, 1.0, 64, 20240501, 1);
    auto b = simulate_to_jsonl(model, init, 0.0, 1.0, 64, 20240501, 2);
    auto c = simulate_to_jsonl(model, init, 0.0, 1.0, 64, 20240501, 2);
    ReplayResult rep = replay_jsonl(model, init, 0.0, 1.0, 20240501, a);
    report(15, "determinism", a == b && b == c && rep.identical,
           "64 records byte-identical across repeated runs and --jobs 1 vs 2; replay clean");
}

} // namespace

int main() {
    auto t0 = std::chrono::steady_clock::now();
    criterion_unraveling();
    criterion_povm_axioms_and_consistency();
    criterion_quantum_limit();
    criterion_tomography();
    criterion_conditional();
    criterion_marginal_and_independence();
    criterion_marginal_master();
    criterion_sufficiency();
    criterion_collapse_detection();
    criterion_poisson();
    criterion_composition();
    criterion_random_runtime();
    criterion_macro_equivalence();
    criterion_determinism();
    std::printf("acceptance: %s (%d failure%s, %.1f s)\n", g_failures == 0 ? "PASS" : "FAIL",
                g_failures, g_failures == 1 ? "" : "s", seconds_since(t0));
    return g_failures == 0 ? 0 : 1;
}
