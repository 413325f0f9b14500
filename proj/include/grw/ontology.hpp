#pragma once

#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "grw/common.hpp"
#include "grw/jump.hpp"
#include "grw/model.hpp"

namespace grw {

/// Matter density m(x) at one instant: mass per lattice length, per site.
struct MatterDensityField {
    RealVector values;
    double spacing = 1.0;
    double time = 0.0;

    double total_mass() const { return spacing * values.sum(); }
    double region_mass(const std::set<int>& region) const {
        double m = 0.0;
        for (int x : region) m += spacing * values[x];
        return m;
    }
};

/// Mass-weighted single-particle marginal of |psi|^2. With a split, only the
/// system labels contribute and sites outside the region are zeroed.
inline MatterDensityField matter_density(const GrwModel& model, const Vector& psi,
                                         const std::optional<SystemSplit>& sp = std::nullopt,
                                         double time = 0.0) {
    if (std::abs(psi.norm() - 1.0) > 1e-8)
        throw PreconditionError("matter_density: state not normalized");
    MatterDensityField field;
    field.spacing = model.spacing;
    field.time = time;
    field.values = RealVector::Zero(model.sites);
    for (int i = 0; i < model.n_particles; ++i) {
        bool include = true;
        if (sp) {
            include = false;
            for (int l : sp->sys_labels)
                if (l == i) include = true;
        }
        if (!include) continue;
        double mass = model.masses[static_cast<std::size_t>(i)];
        for (Eigen::Index q = 0; q < psi.size(); ++q)
            field.values[model.site_of(q, i)] += mass * std::norm(psi[q]) / model.spacing;
    }
    if (sp && sp->sys_region)
        for (int x = 0; x < model.sites; ++x)
            if (!sp->site_in_region(x)) field.values[x] = 0.0;
    return field;
}

struct MacroPartition {
    std::vector<std::pair<std::string, std::set<int>>> regions;
    double threshold = 0.9; // dominance fraction, in (0.5, 1]

    void validate() const {
        if (!(threshold > 0.5 && threshold <= 1.0))
            throw PreconditionError("MacroPartition: threshold must lie in (0.5, 1]");
        std::set<int> seen;
        for (const auto& [name, sites] : regions)
            for (int x : sites)
                if (!seen.insert(x).second)
                    throw PreconditionError("MacroPartition: regions overlap at site " +
                                            std::to_string(x));
    }
};

inline const std::string& ambiguous_outcome() {
    static const std::string a = "ambiguous";
    return a;
}

/// GRWm readout: the region holding at least the threshold fraction of the
/// partition-covered mass.
inline std::string macro_state_m(const MatterDensityField& field, const MacroPartition& part) {
    part.validate();
    double covered = 0.0;
    std::vector<double> masses;
    masses.reserve(part.regions.size());
    for (const auto& [name, sites] : part.regions) {
        double m = field.region_mass(sites);
        masses.push_back(m);
        covered += m;
    }
    if (covered <= 0.0) return ambiguous_outcome();
    for (std::size_t k = 0; k < part.regions.size(); ++k)
        if (masses[k] >= part.threshold * covered) return part.regions[k].first;
    return ambiguous_outcome();
}

/// GRWf readout: the region holding at least the threshold fraction of the
/// flashes inside [readout_start, readout_end); no flashes means ambiguous.
inline std::string macro_state_f(const FlashHistory& history, const MacroPartition& part,
                                 double readout_start, double readout_end) {
    part.validate();
    int total = 0;
    std::vector<int> counts(part.regions.size(), 0);
    for (const auto& e : history.events) {
        if (e.t < readout_start || e.t >= readout_end) continue;
        ++total;
        for (std::size_t k = 0; k < part.regions.size(); ++k)
            if (part.regions[k].second.count(e.site) > 0) ++counts[k];
    }
    if (total == 0) return ambiguous_outcome();
    for (std::size_t k = 0; k < part.regions.size(); ++k)
        if (counts[k] >= part.threshold * total) return part.regions[k].first;
    return ambiguous_outcome();
}

} // namespace grw
