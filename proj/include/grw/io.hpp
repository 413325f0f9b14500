#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grw/common.hpp"
#include "grw/experiments.hpp"
#include "grw/formalism.hpp"
#include "grw/jump.hpp"
#include "grw/model.hpp"
#include "grw/stats.hpp"

namespace grw {

using nlohmann::json;

inline constexpr int kFormatVersion = 1;

// ---------------------------------------------------------------------------
// Config validation
// ---------------------------------------------------------------------------

/// Schema violations are collected (not first-only) and reported with the
/// JSON path of the offending field.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::pair<std::string, std::string>> issues)
        : Error(join(issues)), issues_(std::move(issues)) {}

    const std::vector<std::pair<std::string, std::string>>& issues() const { return issues_; }

private:
    static std::string join(const std::vector<std::pair<std::string, std::string>>& issues) {
        std::ostringstream os;
        os << "invalid config:";
        for (const auto& [path, msg] : issues) os << "\n  " << path << ": " << msg;
        return os.str();
    }
    std::vector<std::pair<std::string, std::string>> issues_;
};

class ConfigIssues {
public:
    void add(const std::string& path, const std::string& message) {
        items_.emplace_back(path, message);
    }
    bool empty() const { return items_.empty(); }
    void raise_if_any() const {
        if (!items_.empty()) throw ConfigError(items_);
    }

    double number(const json& j, const std::string& path, double fallback = 0.0) {
        const json* v = find(j, path);
        if (!v || !v->is_number()) {
            add(path, "expected number");
            return fallback;
        }
        return v->get<double>();
    }
    std::int64_t integer(const json& j, const std::string& path, std::int64_t fallback = 0) {
        const json* v = find(j, path);
        if (!v || !v->is_number_integer()) {
            add(path, "expected integer");
            return fallback;
        }
        return v->get<std::int64_t>();
    }
    std::uint64_t uinteger(const json& j, const std::string& path) {
        const json* v = find(j, path);
        if (v && v->is_number_unsigned()) return v->get<std::uint64_t>();
        if (v && v->is_number_integer() && v->get<std::int64_t>() >= 0)
            return static_cast<std::uint64_t>(v->get<std::int64_t>());
        add(path, "expected unsigned integer");
        return 0;
    }
    std::string text(const json& j, const std::string& path, const std::string& fallback = "") {
        const json* v = find(j, path);
        if (!v || !v->is_string()) {
            add(path, "expected string");
            return fallback;
        }
        return v->get<std::string>();
    }
    const json* find(const json& j, const std::string& path) const {
        const json* cur = &j;
        std::istringstream ss(path);
        std::string part;
        while (std::getline(ss, part, '.')) {
            if (!cur->is_object() || !cur->contains(part)) return nullptr;
            cur = &(*cur)[part];
        }
        return cur;
    }

private:
    std::vector<std::pair<std::string, std::string>> items_;
};

// ---------------------------------------------------------------------------
// Matrix serialization: row-major nested arrays of [re, im] pairs
// ---------------------------------------------------------------------------

inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            row.push_back(json::array({m(i, j).real(), m(i, j).imag()}));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const json& j) {
    if (!j.is_array() || j.empty()) throw Error("matrix_from_json: expected array of rows");
    Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index c = 0; c < cols; ++c) {
            const json& e = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
            m(i, c) = cplx(e[0].get<double>(), e[1].get<double>());
        }
    return m;
}

// ---------------------------------------------------------------------------
// State specifications
// ---------------------------------------------------------------------------

/// Builds a normalized state from a JSON spec. Kinds: basis, two_packet,
/// uniform, amplitudes, entangled_pair, product.
inline Vector build_state(const json& spec, Eigen::Index dim, const std::string& path,
                          ConfigIssues& issues) {
    Vector v = Vector::Zero(dim);
    if (!spec.is_object()) {
        issues.add(path, "expected state object");
        return v;
    }
    std::string kind = spec.value("kind", "");
    if (kind == "basis") {
        std::int64_t k = issues.integer(spec, "index");
        if (k < 0 || k >= dim) {
            issues.add(path + ".index", "basis index out of range");
            return v;
        }
        v[k] = 1.0;
    } else if (kind == "two_packet") {
        if (!spec.contains("sites") || !spec["sites"].is_array() || spec["sites"].size() != 2) {
            issues.add(path + ".sites", "expected [a, b]");
            return v;
        }
        std::int64_t a = spec["sites"][0].get<std::int64_t>();
        std::int64_t b = spec["sites"][1].get<std::int64_t>();
        if (a < 0 || b < 0 || a >= dim || b >= dim) {
            issues.add(path + ".sites", "packet index out of range");
            return v;
        }
        v[a] = v[b] = 1.0 / std::sqrt(2.0);
    } else if (kind == "uniform") {
        v.setConstant(1.0 / std::sqrt(static_cast<double>(dim)));
    } else if (kind == "amplitudes") {
        if (!spec.contains("re") || !spec["re"].is_array() ||
            static_cast<Eigen::Index>(spec["re"].size()) != dim) {
            issues.add(path + ".re", "expected " + std::to_string(dim) + " amplitudes");
            return v;
        }
        for (Eigen::Index k = 0; k < dim; ++k) {
            double re = spec["re"][static_cast<std::size_t>(k)].get<double>();
            double im = spec.contains("im")
                            ? spec["im"][static_cast<std::size_t>(k)].get<double>()
                            : 0.0;
            v[k] = cplx(re, im);
        }
        if (v.norm() == 0.0) {
            issues.add(path, "zero state");
            return v;
        }
        v.normalize();
    } else if (kind == "entangled_pair") {
        // (|a,a> + |b,b>)/sqrt2 for a two-particle model with L^2 = dim
        Eigen::Index sites = static_cast<Eigen::Index>(std::llround(std::sqrt(double(dim))));
        if (sites * sites != dim) {
            issues.add(path, "entangled_pair needs a two-particle square dimension");
            return v;
        }
        std::int64_t a = spec["sites"][0].get<std::int64_t>();
        std::int64_t b = spec["sites"][1].get<std::int64_t>();
        v[a * sites + a] = 1.0 / std::sqrt(2.0);
        v[b * sites + b] = 1.0 / std::sqrt(2.0);
    } else {
        issues.add(path + ".kind", "unknown state kind '" + kind + "'");
    }
    return v;
}

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

struct RunConfig {
    json raw;

    GrwModel model;
    json initial_state;      // state spec for simulate/lindblad/verify
    std::size_t trajectories = 0;
    std::uint64_t master_seed = 0;
    int jobs = 0;
    std::string out_dir = "out";
    std::string format = "json";
    json experiment;         // optional section, parsed on demand
    json verify;             // optional section
    json scenario;           // optional section
};

inline GrwModel parse_model(const json& j, ConfigIssues& issues) {
    int particles = static_cast<int>(issues.integer(j, "model.particles", 1));
    int sites = static_cast<int>(issues.integer(j, "model.sites", 2));
    double spacing = issues.number(j, "model.spacing", 1.0);
    double lambda = issues.number(j, "model.lambda", 0.0);
    double sigma = issues.number(j, "model.sigma", 1.0);
    if (spacing <= 0.0) issues.add("model.spacing", "must be positive");
    if (sigma <= 0.0) issues.add("model.sigma", "must be positive");
    if (lambda < 0.0) issues.add("model.lambda", "must be nonnegative");
    if (particles < 0) issues.add("model.particles", "must be nonnegative");
    if (sites < 1) issues.add("model.sites", "must be at least 1");

    std::vector<double> masses;
    const json* jm = issues.find(j, "model.masses");
    if (jm && jm->is_array()) {
        for (const auto& m : *jm) masses.push_back(m.get<double>());
    } else {
        masses.assign(static_cast<std::size_t>(std::max(particles, 0)), 1.0);
    }
    if (static_cast<int>(masses.size()) != particles)
        issues.add("model.masses", "length must equal particles");
    for (double m : masses)
        if (m <= 0.0) issues.add("model.masses", "must be positive");

    HamiltonianKind kind = HamiltonianKind::Zero;
    PotentialSpec pot;
    bool builder_kind = true;
    Matrix h_explicit;
    std::string hk = issues.text(j, "model.hamiltonian.kind", "zero");
    if (hk == "zero") {
        kind = HamiltonianKind::Zero;
    } else if (hk == "hopping") {
        kind = HamiltonianKind::Hopping;
    } else if (hk == "matrix") {
        builder_kind = false;
        if (const json* jm2 = issues.find(j, "model.hamiltonian.entries")) {
            try {
                h_explicit = matrix_from_json(*jm2);
            } catch (const std::exception& e) {
                issues.add("model.hamiltonian.entries", e.what());
            }
        } else {
            issues.add("model.hamiltonian.entries", "missing matrix entries");
        }
    } else if (hk == "controlled_flip") {
        // two-particle meter interaction: when particle 0 sits in the control
        // region, the window unitary swaps the halves of particle 1's lattice
        builder_kind = false;
        if (particles != 2) issues.add("model.hamiltonian", "controlled_flip needs 2 particles");
        if (sites % 2 != 0) issues.add("model.hamiltonian", "controlled_flip needs even sites");
        double duration = issues.number(j, "model.hamiltonian.duration", 1.0);
        Matrix ctrl = Matrix::Zero(sites, sites);
        if (const json* jc = issues.find(j, "model.hamiltonian.control_sites")) {
            for (const auto& s : *jc) {
                int x = s.get<int>();
                if (x < 0 || x >= sites)
                    issues.add("model.hamiltonian.control_sites", "site out of range");
                else
                    ctrl(x, x) = 1.0;
            }
        } else {
            issues.add("model.hamiltonian.control_sites", "missing");
        }
        if (issues.empty()) {
            Matrix flip = Matrix::Zero(sites, sites);
            for (int x = 0; x < sites; ++x) flip(x, (x + sites / 2) % sites) = 1.0;
            h_explicit = (M_PI / (2.0 * duration)) *
                         tensor_product(ctrl, Matrix(Matrix::Identity(sites, sites) - flip));
            std::string base = j["model"]["hamiltonian"].value("base", "zero");
            if (base == "hopping")
                h_explicit += build_hamiltonian(particles, sites, spacing, masses,
                                                HamiltonianKind::Hopping);
            else if (base != "zero")
                issues.add("model.hamiltonian.base", "expected 'zero' or 'hopping'");
        }
    } else {
        issues.add("model.hamiltonian.kind",
                   "expected 'zero', 'hopping', 'matrix', or 'controlled_flip'");
    }
    if (builder_kind) {
        if (const json* jp = issues.find(j, "model.hamiltonian.potential")) {
            std::string pk = jp->value("kind", "zero");
            if (pk == "zero") {
                pot.kind = PotentialSpec::Kind::Zero;
            } else if (pk == "onsite") {
                pot.kind = PotentialSpec::Kind::Onsite;
                for (const auto& vj : (*jp)["values"]) pot.onsite.push_back(vj.get<double>());
                if (static_cast<int>(pot.onsite.size()) != sites)
                    issues.add("model.hamiltonian.potential.values", "length must equal sites");
            } else if (pk == "contact") {
                pot.kind = PotentialSpec::Kind::Contact;
                pot.contact_strength = jp->value("strength", 0.0);
            } else {
                issues.add("model.hamiltonian.potential.kind", "unknown potential kind");
            }
        }
    }
    if (!issues.empty()) return GrwModel{};
    Matrix h = builder_kind ? build_hamiltonian(particles, sites, spacing, masses, kind, pot)
                            : h_explicit;
    return make_model(particles, sites, spacing, lambda, sigma, masses, h);
}

inline RunConfig parse_config(const json& j) {
    ConfigIssues issues;
    if (!j.is_object()) {
        issues.add("", "config must be a JSON object");
        issues.raise_if_any();
    }
    std::int64_t version = issues.integer(j, "format_version", kFormatVersion);
    if (version != kFormatVersion)
        issues.add("format_version", "unsupported major version " + std::to_string(version));
    RunConfig cfg;
    cfg.raw = j;
    cfg.model = parse_model(j, issues);
    if (j.contains("initial_state")) cfg.initial_state = j["initial_state"];
    if (!j.contains("ensemble") || !j["ensemble"].contains("master_seed"))
        issues.add("ensemble.master_seed", "master seed is mandatory");
    else
        cfg.master_seed = issues.uinteger(j, "ensemble.master_seed");
    cfg.trajectories =
        static_cast<std::size_t>(std::max<std::int64_t>(0, issues.integer(j, "ensemble.trajectories", 0)));
    if (const json* jj = issues.find(j, "ensemble.jobs"))
        cfg.jobs = jj->is_number_integer() ? jj->get<int>() : 0;
    if (const json* jo = issues.find(j, "output.dir"))
        cfg.out_dir = jo->is_string() ? jo->get<std::string>() : "out";
    if (const json* jf = issues.find(j, "output.format"))
        cfg.format = jf->is_string() ? jf->get<std::string>() : "json";
    if (cfg.format != "json" && cfg.format != "csv")
        issues.add("output.format", "expected 'json' or 'csv'");
    if (j.contains("experiment")) cfg.experiment = j["experiment"];
    if (j.contains("verify")) cfg.verify = j["verify"];
    if (j.contains("scenario")) cfg.scenario = j["scenario"];
    issues.raise_if_any();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({{path, "cannot open config file"}});
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError({{path, std::string("JSON parse error: ") + e.what()}});
    }
    return parse_config(j);
}

/// Builds the experiment named by the config's experiment section.
inline Experiment parse_experiment(const RunConfig& cfg) {
    ConfigIssues issues;
    const json& je = cfg.experiment;
    if (!je.is_object()) {
        issues.add("experiment", "missing experiment section");
        issues.raise_if_any();
    }
    Experiment exp;
    exp.joint = cfg.model;
    exp.n_sys = static_cast<int>(issues.integer(je, "system_particles", 1));
    if (exp.n_sys < 0 || exp.n_sys > cfg.model.n_particles)
        issues.add("experiment.system_particles", "out of range");
    if (const json* jw = issues.find(je, "window")) {
        if (jw->is_array() && jw->size() == 2) {
            exp.start = (*jw)[0].get<double>();
            exp.end = (*jw)[1].get<double>();
        } else {
            issues.add("experiment.window", "expected [start, end]");
        }
    }
    issues.raise_if_any();

    Eigen::Index da = exp.d_app();
    if (je.contains("apparatus_state")) {
        Vector phi = build_state(je["apparatus_state"], da, "experiment.apparatus_state", issues);
        issues.raise_if_any();
        exp.rho_app = phi * phi.adjoint();
    } else {
        exp.rho_app = Matrix::Zero(da, da);
        exp.rho_app(0, 0) = 1.0;
    }

    auto parse_regions = [&](const json& jr, const std::string& path) {
        std::vector<std::pair<std::string, std::set<int>>> regions;
        if (!jr.is_object()) {
            issues.add(path, "expected {name: [sites]}");
            return regions;
        }
        for (const auto& [name, sites] : jr.items()) {
            std::set<int> cells;
            for (const auto& s : sites) cells.insert(s.get<int>());
            regions.emplace_back(name, cells);
        }
        return regions;
    };

    const json* jr = issues.find(je, "readout");
    if (!jr) issues.add("experiment.readout", "missing readout section");
    issues.raise_if_any();
    std::string rk = jr->value("kind", "");
    if (rk == "pointer") {
        auto regions = parse_regions((*jr)["regions"], "experiment.readout.regions");
        issues.raise_if_any();
        auto [names, projs] = site_region_projectors(cfg.model.sites, regions);
        if (cfg.model.n_particles - exp.n_sys != 1)
            issues.add("experiment.readout",
                       "site-region pointers assume a single apparatus particle");
        exp.pointer_outcomes = names;
        exp.pointer_projectors = projs;
    } else if (rk == "flash") {
        FlashCalibration cal;
        std::string cid = jr->value("calibration", "last_flash_region");
        if (cid == "last_flash_region") cal.kind = FlashCalibration::Kind::LastFlashRegion;
        else if (cid == "majority_region") cal.kind = FlashCalibration::Kind::MajorityRegion;
        else if (cid == "count_threshold") cal.kind = FlashCalibration::Kind::CountThreshold;
        else if (cid == "constant") cal.kind = FlashCalibration::Kind::Constant;
        else issues.add("experiment.readout.calibration", "unknown calibration '" + cid + "'");
        if (jr->contains("regions"))
            cal.regions = parse_regions((*jr)["regions"], "experiment.readout.regions");
        if (jr->contains("labels"))
            for (const auto& l : (*jr)["labels"]) cal.labels.push_back(l.get<int>());
        else
            cal.labels = exp.apparatus_labels();
        cal.readout_fraction = jr->value("readout_fraction", 1.0);
        cal.count_threshold = jr->value("count_threshold", 1);
        cal.fallback = jr->value("fallback", "none");
        exp.calibration = cal;
    } else {
        issues.add("experiment.readout.kind", "expected 'pointer' or 'flash'");
    }

    if (const json* js = issues.find(je, "stopping")) {
        StoppingRule rule;
        std::string sk = js->value("rule", "first_flash_in_region");
        if (sk == "first_flash_in_region") rule.kind = StoppingRule::Kind::FirstFlashInRegion;
        else if (sk == "nth_flash") rule.kind = StoppingRule::Kind::NthFlash;
        else issues.add("experiment.stopping.rule", "unknown rule '" + sk + "'");
        if (js->contains("labels"))
            for (const auto& l : (*js)["labels"]) rule.labels.push_back(l.get<int>());
        else
            rule.labels = exp.apparatus_labels();
        if (js->contains("region"))
            for (const auto& s : (*js)["region"]) rule.region.insert(s.get<int>());
        rule.nth = js->value("nth", 1);
        rule.peek_offset = js->value("peek_offset", 0.0);
        if (js->contains("grid"))
            for (const auto& g : (*js)["grid"]) rule.grid.push_back(g.get<double>());
        exp.stopping = rule;
    }

    exp.n_max = je.value("n_max", 3);
    exp.quad_nodes = je.value("quad_nodes", 8);
    exp.term_budget = je.value("term_budget", 2e7);
    issues.raise_if_any();
    validate_experiment(exp);
    return exp;
}

// ---------------------------------------------------------------------------
// POVM serialization
// ---------------------------------------------------------------------------

inline json povm_to_json(const Povm& p, const json& metadata = json::object()) {
    json out;
    out["format_version"] = kFormatVersion;
    out["remainder_bound"] = p.remainder_bound;
    out["outcomes"] = json::array();
    for (std::size_t z = 0; z < p.outcomes.size(); ++z)
        out["outcomes"].push_back(
            {{"id", p.outcomes[z]}, {"effect", matrix_to_json(p.effects[z])}});
    out["metadata"] = metadata;
    return out;
}

inline Povm povm_from_json(const json& j) {
    if (j.value("format_version", 0) != kFormatVersion)
        throw Error("povm_from_json: unsupported format version");
    Povm p;
    p.remainder_bound = j.value("remainder_bound", 0.0);
    for (const auto& o : j.at("outcomes")) {
        p.outcomes.push_back(o.at("id").get<std::string>());
        p.effects.push_back(matrix_from_json(o.at("effect")));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json report_to_json(const GofReport& r) {
    json out;
    out["name"] = r.name;
    out["kind"] = r.kind == GofReport::Kind::PValue ? "p_value" : "distance";
    out["statistic"] = r.statistic;
    out["value"] = r.value;
    out["threshold"] = r.threshold;
    out["pass"] = r.pass;
    out["sample_sizes"] = r.sample_sizes;
    out["seeds"] = r.seeds;
    out["attempts"] = r.attempts;
    out["notes"] = r.notes;
    return out;
}

inline void write_reports_csv(std::ostream& os, const std::vector<GofReport>& reports) {
    os << "name,kind,value,threshold,pass,attempts,notes\n";
    for (const auto& r : reports) {
        std::string notes = r.notes;
        for (char& c : notes)
            if (c == ',' || c == '\n') c = ';';
        os << r.name << "," << (r.kind == GofReport::Kind::PValue ? "p" : "d") << "," << r.value
           << "," << r.threshold << "," << (r.pass ? 1 : 0) << "," << r.attempts << "," << notes
           << "\n";
    }
}

inline json scenario_to_json(const ScenarioResult& res) {
    json out;
    out["format_version"] = kFormatVersion;
    out["scenario"] = res.scenario_id;
    out["master_seed"] = res.master_seed;
    out["pass"] = res.pass;
    out["notes"] = res.notes;
    out["measured"] = json::array();
    for (const auto& v : res.measured)
        out["measured"].push_back({{"name", v.name},
                                   {"value", v.value},
                                   {"standard_error", v.standard_error},
                                   {"reference", v.reference},
                                   {"provenance", v.provenance},
                                   {"pass", v.pass}});
    return out;
}

inline void write_curve_csv(std::ostream& os, const Curve& curve) {
    for (std::size_t c = 0; c < curve.columns.size(); ++c)
        os << curve.columns[c] << (c + 1 < curve.columns.size() ? "," : "\n");
    for (const auto& row : curve.rows)
        for (std::size_t c = 0; c < row.size(); ++c)
            os << row[c] << (c + 1 < row.size() ? "," : "\n");
}

inline void write_matter_csv(std::ostream& os, const std::vector<MatterDensityField>& fields) {
    os << "t,site,m\n";
    for (const auto& f : fields)
        for (Eigen::Index x = 0; x < f.values.size(); ++x)
            os << f.time << "," << x << "," << f.values[x] << "\n";
}

// ---------------------------------------------------------------------------
// Trajectory records (JSONL)
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    for (std::size_t k = 0; k < n; ++k) {
        h ^= data[k];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string state_digest(const Vector& psi) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (Eigen::Index k = 0; k < psi.size(); ++k) {
        double re = psi[k].real(), im = psi[k].imag();
        h = fnv1a64(reinterpret_cast<const unsigned char*>(&re), sizeof(double), h);
        h = fnv1a64(reinterpret_cast<const unsigned char*>(&im), sizeof(double), h);
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

inline json trajectory_record(const Trajectory& traj, std::uint64_t id) {
    json rec;
    rec["id"] = id;
    rec["master_seed"] = traj.master_seed;
    rec["stream"] = traj.stream_id;
    rec["window"] = {traj.history.start, traj.history.end};
    json events = json::array();
    for (const auto& e : traj.history.events)
        events.push_back({{"t", e.t}, {"x", e.site}, {"i", e.label}});
    rec["events"] = std::move(events);
    json checks = json::array();
    for (const auto& [t, psi] : traj.checkpoints)
        checks.push_back({{"t", t}, {"digest", state_digest(psi)}});
    rec["checkpoints"] = std::move(checks);
    rec["final_state_hash"] = state_digest(traj.final_state());
    return rec;
}

/// Runs the configured ensemble and returns one JSONL line per trajectory,
/// ordered by index (independent of the worker count).
inline std::vector<std::string> simulate_to_jsonl(const GrwModel& model,
                                                  const EnsembleInitial& initial, double t0,
                                                  double t1, std::size_t count,
                                                  std::uint64_t master_seed, int jobs = 0) {
    std::vector<std::string> lines(count);
    run_ensemble(model, initial, t0, t1, count, master_seed,
                 [&](std::size_t i, const Trajectory& traj) {
                     lines[i] = trajectory_record(traj, i).dump();
                 },
                 jobs);
    return lines;
}

struct ReplayResult {
    bool identical = true;
    std::size_t lines_checked = 0;
    std::string first_mismatch;
};

/// Re-derives every record in a JSONL stream from (config, seed) and
/// byte-compares the serialized lines.
inline ReplayResult replay_jsonl(const GrwModel& model, const EnsembleInitial& initial, double t0,
                                 double t1, std::uint64_t master_seed,
                                 const std::vector<std::string>& lines) {
    ReplayResult out;
    for (const auto& line : lines) {
        json rec = json::parse(line);
        std::uint64_t id = rec.at("id").get<std::uint64_t>();
        Trajectory traj = simulate_indexed(model, initial, t0, t1, master_seed, id);
        std::string fresh = trajectory_record(traj, id).dump();
        ++out.lines_checked;
        if (fresh != line) {
            out.identical = false;
            if (out.first_mismatch.empty())
                out.first_mismatch = "record " + std::to_string(id);
        }
    }
    return out;
}

inline Vector initial_state_from_config(const RunConfig& cfg) {
    ConfigIssues issues;
    json spec = cfg.initial_state.is_null() ? json{{"kind", "basis"}, {"index", 0}}
                                            : cfg.initial_state;
    Vector psi = build_state(spec, cfg.model.dim(), "initial_state", issues);
    issues.raise_if_any();
    return psi;
}

} // namespace grw
