// grw_lab: simulate GRW lattice models, build their laws of operators, and run
// the statistical verification suites from JSON configs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "grw/experiments.hpp"
#include "grw/io.hpp"
#include "grw/presets.hpp"
#include "grw/verify.hpp"

namespace fs = std::filesystem;
using namespace grw;

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<int> jobs;
    std::optional<std::string> format;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON config file")->required();
    cmd->add_option("--seed", opts.seed, "override ensemble.master_seed");
    cmd->add_option("--out", opts.out_dir, "override output.dir");
    cmd->add_option("--jobs", opts.jobs, "worker threads (default: GRW_LAB_JOBS or all cores)");
    cmd->add_option("--format", opts.format, "json or csv")
        ->check(CLI::IsMember({"json", "csv"}));
}

RunConfig load_with_overrides(const CommonOpts& opts) {
    RunConfig cfg = load_config(opts.config_path);
    if (opts.seed) cfg.master_seed = *opts.seed;
    if (opts.out_dir) cfg.out_dir = *opts.out_dir;
    if (opts.jobs) cfg.jobs = *opts.jobs;
    if (opts.format) cfg.format = *opts.format;
    return cfg;
}

fs::path ensure_out_dir(const RunConfig& cfg) {
    fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::pair<double, double> config_window(const RunConfig& cfg) {
    ConfigIssues probe;
    if (const json* w = probe.find(cfg.raw, "window"); w && w->is_array() && w->size() == 2)
        return {(*w)[0].get<double>(), (*w)[1].get<double>()};
    return {0.0, 1.0};
}

int cmd_simulate(const CommonOpts& opts) {
    RunConfig cfg = load_with_overrides(opts);
    Vector psi0 = initial_state_from_config(cfg);
    EnsembleInitial init(psi0);
    auto [t0, t1] = config_window(cfg);
    auto lines = simulate_to_jsonl(cfg.model, init, t0, t1, cfg.trajectories, cfg.master_seed,
                                   cfg.jobs);
    fs::path dir = ensure_out_dir(cfg);
    std::string text;
    for (const auto& line : lines) text += line + "\n";
    write_text(dir / "trajectories.jsonl", text);
    if (cfg.format == "csv" && !lines.empty()) {
        // matter-density snapshots along the first trajectory
        Trajectory traj = simulate_indexed(cfg.model, init, t0, t1, cfg.master_seed, 0);
        std::vector<MatterDensityField> fields;
        for (const auto& [t, psi] : traj.checkpoints)
            fields.push_back(matter_density(cfg.model, psi, std::nullopt, t));
        std::ostringstream os;
        write_matter_csv(os, fields);
        write_text(dir / "matter.csv", os.str());
    }
    std::cout << "simulate: wrote " << lines.size() << " trajectories to "
              << (dir / "trajectories.jsonl") << "\n";
    return 0;
}

int cmd_lindblad(const CommonOpts& opts) {
    RunConfig cfg = load_with_overrides(opts);
    Vector psi0 = initial_state_from_config(cfg);
    double t0 = 0.0, t1 = 1.0;
    int grid = 10;
    if (cfg.raw.contains("lindblad")) {
        const json& jl = cfg.raw["lindblad"];
        if (jl.contains("window")) {
            t0 = jl["window"][0].get<double>();
            t1 = jl["window"][1].get<double>();
        }
        grid = jl.value("grid", 10);
    }
    Matrix rho = pure_density(psi0);
    std::ostringstream obs;
    obs << "t,trace,purity,energy\n";
    std::vector<MatterDensityField> fields;
    double dt = (t1 - t0) / grid;
    for (int g = 0; g <= grid; ++g) {
        double t = t0 + g * dt;
        if (g > 0) rho = evolve_density(cfg.model, rho, t - dt, t);
        double purity = (rho * rho).trace().real();
        double energy = (cfg.model.hamiltonian * rho).trace().real();
        obs << t << "," << rho.trace().real() << "," << purity << "," << energy << "\n";
        // eigen-mixture of rho gives the ensemble matter density
        HermEig eig = herm_eig(hermitize(rho));
        MatterDensityField field;
        field.spacing = cfg.model.spacing;
        field.time = t;
        field.values = RealVector::Zero(cfg.model.sites);
        for (Eigen::Index k = 0; k < eig.eigenvalues.size(); ++k) {
            if (eig.eigenvalues[k] < 1e-12) continue;
            MatterDensityField part = matter_density(
                cfg.model, eig.eigenvectors.col(k).normalized(), std::nullopt, t);
            field.values += eig.eigenvalues[k] * part.values;
        }
        fields.push_back(field);
    }
    fs::path dir = ensure_out_dir(cfg);
    write_text(dir / "observables.csv", obs.str());
    std::ostringstream mos;
    write_matter_csv(mos, fields);
    write_text(dir / "matter.csv", mos.str());
    std::cout << "lindblad: wrote " << (dir / "observables.csv") << "\n";
    return 0;
}

int cmd_povm(const CommonOpts& opts) {
    RunConfig cfg = load_with_overrides(opts);
    Experiment exp = parse_experiment(cfg);
    fs::path dir = ensure_out_dir(cfg);
    std::string method = cfg.raw.value("method", "exact");

    json meta{{"master_seed", cfg.master_seed},
              {"n_max", exp.n_max},
              {"quad_nodes", exp.quad_nodes}};
    int written = 0;
    if (exp.stopping) {
        GrwLaw law = random_runtime_povm_exact(exp, false);
        meta["remainder_bound"] = law.remainder_bound;
        meta["completeness_defect"] = law.povm.completeness_defect();
        write_text(dir / "povm_random_runtime.json", povm_to_json(law.povm, meta).dump(2));
        std::cout << "povm: random run-time law, completeness defect "
                  << law.povm.completeness_defect() << " (remainder " << law.remainder_bound
                  << ")\n";
        ++written;
    } else {
        if (method == "exact" || method == "both") {
            GrwLaw law = grw_law_exact(exp, false);
            meta["remainder_bound"] = law.remainder_bound;
            meta["completeness_defect"] = law.povm.completeness_defect();
            write_text(dir / "povm_grw.json", povm_to_json(law.povm, meta).dump(2));
            ++written;
            if (exp.pointer_mode()) {
                Povm qu = quantum_povm(exp);
                write_text(dir / "povm_quantum.json", povm_to_json(qu, meta).dump(2));
                double d = 0.0;
                for (std::size_t z = 0; z < qu.effects.size(); ++z)
                    d = std::max(d, operator_norm(law.povm.effects[z] - qu.effects[z]));
                std::cout << "povm: max operator distance GRW vs quantum = " << d << "\n";
                ++written;
            }
        }
        if (method == "mc" || method == "both") {
            TomographyResult tomo = grw_povm_mc(exp, cfg.trajectories, cfg.master_seed, cfg.jobs);
            json tmeta = meta;
            tmeta["condition_number"] = tomo.condition_number;
            tmeta["per_basis"] = tomo.per_basis;
            json se = json::array();
            for (const auto& m : tomo.standard_errors) {
                json rows = json::array();
                for (Eigen::Index i = 0; i < m.rows(); ++i) {
                    json row = json::array();
                    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
                    rows.push_back(row);
                }
                se.push_back(rows);
            }
            tmeta["standard_errors"] = se;
            write_text(dir / "povm_mc.json", povm_to_json(tomo.povm, tmeta).dump(2));
            ++written;
        }
    }
    std::cout << "povm: wrote " << written << " file(s) to " << dir << "\n";
    return 0;
}

GofReport run_suite(const std::string& suite, const RunConfig& cfg,
                    std::vector<GofReport>& extra) {
    const json& jv = cfg.verify.is_object() ? cfg.verify : json::object();
    double t = jv.value("horizon", 1.0);
    ConfigIssues issues;
    if (suite == "poisson") {
        PoissonOptions opts;
        opts.trajectories = cfg.trajectories;
        opts.jobs = cfg.jobs;
        Vector psi0 = initial_state_from_config(cfg);
        return with_rerun_policy(
            [&](std::uint64_t seed) { return test_poisson_counts(cfg.model, psi0, t, seed, opts); },
            cfg.master_seed);
    }
    if (suite == "conditional") {
        ConditionalProbabilityOptions opts;
        opts.trajectories = cfg.trajectories;
        opts.jobs = cfg.jobs;
        double s = jv.value("split_time", t / 2.0);
        Vector psi0 = initial_state_from_config(cfg);
        return with_rerun_policy(
            [&](std::uint64_t seed) {
                return test_conditional_probability(cfg.model, psi0, s, t, seed, opts);
            },
            cfg.master_seed);
    }
    if (suite == "marginal") {
        MarginalProbabilityOptions opts;
        opts.trajectories = cfg.trajectories;
        opts.jobs = cfg.jobs;
        SystemSplit sp;
        for (const auto& l : jv.value("split_labels", json::array({0})))
            sp.sys_labels.push_back(l.get<int>());
        Vector psi0 = initial_state_from_config(cfg);
        return with_rerun_policy(
            [&](std::uint64_t seed) {
                return test_marginal_probability(cfg.model, sp, psi0, t, seed, opts);
            },
            cfg.master_seed);
    }
    if (suite == "independence") {
        IndependenceOptions opts;
        opts.trajectories = cfg.trajectories;
        opts.jobs = cfg.jobs;
        SystemSplit sp;
        for (const auto& l : jv.value("split_labels", json::array({0})))
            sp.sys_labels.push_back(l.get<int>());
        Vector psi0 = initial_state_from_config(cfg);
        return with_rerun_policy(
            [&](std::uint64_t seed) {
                return test_independence(cfg.model, sp, psi0, t, seed, opts);
            },
            cfg.master_seed);
    }
    if (suite == "marginal_master") {
        SystemSplit sp;
        for (const auto& l : jv.value("split_labels", json::array({0})))
            sp.sys_labels.push_back(l.get<int>());
        Vector psi0 = initial_state_from_config(cfg);
        return test_marginal_master(cfg.model, sp, pure_density(psi0), t);
    }
    if (suite == "sufficiency") {
        SufficiencyOptions opts;
        opts.trajectories = cfg.trajectories;
        opts.jobs = cfg.jobs;
        auto parse_ensemble = [&](const json& je, const std::string& path) {
            StateEnsemble ens;
            for (const auto& item : je) {
                ens.probs.push_back(item.value("prob", 0.0));
                ens.states.push_back(build_state(item["state"], cfg.model.dim(), path, issues));
            }
            issues.raise_if_any();
            return ens;
        };
        StateEnsemble a = parse_ensemble(jv.at("ensemble_a"), "verify.ensemble_a");
        StateEnsemble b = parse_ensemble(jv.at("ensemble_b"), "verify.ensemble_b");
        SufficiencyReport rep =
            test_density_sufficiency(cfg.model, a, b, t, cfg.master_seed, opts);
        extra.push_back(rep.matter_report);
        return rep.flash_report;
    }
    if (suite == "linearity") {
        LinearityOptions opts;
        opts.trajectories = cfg.trajectories;
        opts.jobs = cfg.jobs;
        Experiment exp = parse_experiment(cfg);
        Vector a = build_state(jv.at("state_a"), exp.d_sys(), "verify.state_a", issues);
        Vector b = build_state(jv.at("state_b"), exp.d_sys(), "verify.state_b", issues);
        issues.raise_if_any();
        double p = jv.value("mixing", 0.5);
        return test_linearity_in_rho(exp, pure_density(a), pure_density(b), p, cfg.master_seed,
                                     opts);
    }
    throw ConfigError({{"verify.suite", "unknown suite '" + suite + "'"}});
}

int cmd_verify(const CommonOpts& opts) {
    RunConfig cfg = load_with_overrides(opts);
    std::vector<std::string> suites;
    if (cfg.verify.contains("suite")) {
        suites.push_back(cfg.verify["suite"].get<std::string>());
    } else if (cfg.verify.contains("suites")) {
        for (const auto& s : cfg.verify["suites"]) suites.push_back(s.get<std::string>());
    } else {
        throw ConfigError(
            std::vector<std::pair<std::string, std::string>>{{"verify.suite", "missing"}});
    }
    std::vector<GofReport> reports;
    for (const auto& suite : suites) {
        std::vector<GofReport> extra;
        reports.push_back(run_suite(suite, cfg, extra));
        for (auto& e : extra) reports.push_back(std::move(e));
    }
    fs::path dir = ensure_out_dir(cfg);
    json out;
    out["format_version"] = kFormatVersion;
    out["master_seed"] = cfg.master_seed;
    out["reports"] = json::array();
    bool all_pass = true;
    for (const auto& r : reports) {
        out["reports"].push_back(report_to_json(r));
        all_pass = all_pass && r.pass;
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "  value=" << r.value
                  << " threshold=" << r.threshold << "\n";
    }
    out["pass"] = all_pass;
    write_text(dir / "verify_report.json", out.dump(2));
    std::ostringstream cs;
    write_reports_csv(cs, reports);
    write_text(dir / "verify_report.csv", cs.str());
    std::cout << "verify: " << (all_pass ? "all suites passed" : "SUITE FAILURE") << "\n";
    return all_pass ? 0 : 1;
}

int cmd_scenario(const CommonOpts& opts) {
    RunConfig cfg = load_with_overrides(opts);
    const json& js = cfg.scenario.is_object() ? cfg.scenario : json::object();
    std::string id = js.value("id", "");
    ScenarioResult res;
    if (id == "collapse_detection") {
        CollapseDetectionParams prm;
        prm.sites = js.value("sites", prm.sites);
        prm.packet_a = js.value("packet_a", prm.packet_a);
        prm.packet_b = js.value("packet_b", prm.packet_b);
        prm.lambda = js.value("lambda", prm.lambda);
        prm.duration = js.value("duration", prm.duration);
        prm.trajectories = cfg.trajectories ? cfg.trajectories : prm.trajectories;
        prm.jobs = cfg.jobs;
        res = run_collapse_detection(prm, cfg.master_seed);
    } else if (id == "two_pointer") {
        TwoPointerParams prm;
        prm.lambda = js.value("lambda", prm.lambda);
        prm.amp_a = js.value("amp_a", prm.amp_a);
        prm.readout_fraction = js.value("readout_fraction", prm.readout_fraction);
        prm.threshold = js.value("threshold", prm.threshold);
        prm.trajectories = cfg.trajectories ? cfg.trajectories : prm.trajectories;
        prm.jobs = cfg.jobs;
        res = run_two_pointer(prm, cfg.master_seed);
    } else if (id == "consecutive") {
        double lambda = js.value("lambda", 0.25);
        Experiment e1 = presets::qubit_meter_experiment(lambda);
        Experiment e2 = presets::qubit_meter_x_experiment(lambda);
        e1.quad_nodes = e2.quad_nodes = js.value("quad_nodes", 6);
        e1.n_max = e2.n_max = js.value("n_max", 3);
        Vector psi0(2);
        double w = js.value("weight", 0.7);
        psi0 << std::sqrt(w), std::sqrt(1.0 - w);
        ConsecutiveParams prm;
        prm.gap_duration = js.value("gap", 0.5);
        prm.trajectories = cfg.trajectories ? cfg.trajectories : prm.trajectories;
        prm.jobs = cfg.jobs;
        res = run_consecutive(e1, e2, psi0, prm, cfg.master_seed);
    } else if (id == "deviation_sweep") {
        DeviationSweepParams prm;
        if (js.contains("lambdas")) {
            prm.lambdas.clear();
            for (const auto& l : js["lambdas"]) prm.lambdas.push_back(l.get<double>());
        }
        prm.n_max = js.value("n_max", 3);
        prm.quad_nodes = js.value("quad_nodes", 8);
        auto factory = [&](double lam) {
            return presets::standard_experiment(lam, 1.0, prm.n_max, prm.quad_nodes);
        };
        res = run_deviation_sweep(factory, prm);
        res.curves.push_back(deviation_asymmetry(factory, js.value("asymmetry_lambda", 0.05),
                                                 prm.n_max, prm.quad_nodes));
    } else if (id == "warming") {
        WarmingParams prm;
        prm.lambda = js.value("lambda", prm.lambda);
        prm.duration = js.value("duration", prm.duration);
        prm.trajectories = cfg.trajectories ? cfg.trajectories : prm.trajectories;
        prm.jobs = cfg.jobs;
        res = run_warming(prm, cfg.master_seed);
    } else {
        throw ConfigError({{"scenario.id", "unknown scenario '" + id + "'"}});
    }
    res.master_seed = cfg.master_seed;
    fs::path dir = ensure_out_dir(cfg);
    write_text(dir / ("scenario_" + res.scenario_id + ".json"), scenario_to_json(res).dump(2));
    for (const auto& curve : res.curves) {
        std::ostringstream os;
        write_curve_csv(os, curve);
        write_text(dir / (res.scenario_id + "_" + curve.name + ".csv"), os.str());
    }
    for (const auto& v : res.measured)
        std::cout << (v.pass ? "[PASS] " : "[FAIL] ") << v.name << " = " << v.value
                  << " (reference " << v.reference << ")\n";
    std::cout << "scenario " << res.scenario_id << ": " << (res.pass ? "pass" : "FAIL") << "\n";
    return res.pass ? 0 : 1;
}

int cmd_replay(const CommonOpts& opts, const std::string& record_path) {
    RunConfig cfg = load_with_overrides(opts);
    Vector psi0 = initial_state_from_config(cfg);
    EnsembleInitial init(psi0);
    auto [t0, t1] = config_window(cfg);
    std::ifstream in(record_path);
    if (!in) throw ConfigError({{record_path, "cannot open record file"}});
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    ReplayResult res = replay_jsonl(cfg.model, init, t0, t1, cfg.master_seed, lines);
    if (res.identical) {
        std::cout << "replay: " << res.lines_checked << " records byte-identical\n";
        return 0;
    }
    std::cout << "replay: MISMATCH at " << res.first_mismatch << "\n";
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"GRW lattice lab: jump-process simulation, laws of operators, verification"};
    app.require_subcommand(1);

    CommonOpts sim_opts, lind_opts, povm_opts, verify_opts, scen_opts, replay_opts;
    std::string record_path;

    add_common(app.add_subcommand("simulate", "run trajectories to JSONL"), sim_opts);
    add_common(app.add_subcommand("lindblad", "integrate the master equation to CSV"), lind_opts);
    add_common(app.add_subcommand("povm", "construct and compare laws of operators"), povm_opts);
    add_common(app.add_subcommand("verify", "run theorem-test suites"), verify_opts);
    add_common(app.add_subcommand("scenario", "run a canned experiment"), scen_opts);
    auto* replay = app.add_subcommand("replay", "re-derive a trajectory record and diff");
    add_common(replay, replay_opts);
    replay->add_option("--record", record_path, "JSONL record file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("simulate")) return cmd_simulate(sim_opts);
        if (app.got_subcommand("lindblad")) return cmd_lindblad(lind_opts);
        if (app.got_subcommand("povm")) return cmd_povm(povm_opts);
        if (app.got_subcommand("verify")) return cmd_verify(verify_opts);
        if (app.got_subcommand("scenario")) return cmd_scenario(scen_opts);
        if (app.got_subcommand("replay")) return cmd_replay(replay_opts, record_path);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
