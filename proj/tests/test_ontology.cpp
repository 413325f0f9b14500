#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "grw/ontology.hpp"

#include "test_util.hpp"

using namespace grw;
using namespace grw::testutil;

TEST_CASE("matter density of localized states", "[ontology]") {
    GrwModel m = make_model(2, 4, 1.0, 0.1, 1.0, {1.0, 2.0}, {});
    // configuration (q0, q1) = (1, 3)
    Eigen::Index cfg = 1 * 4 + 3;
    Vector psi = Vector::Zero(m.dim());
    psi[cfg] = 1.0;
    MatterDensityField f = matter_density(m, psi);
    REQUIRE(f.values[1] == Catch::Approx(1.0));
    REQUIRE(f.values[3] == Catch::Approx(2.0));
    REQUIRE(f.values[0] == 0.0);
    REQUIRE(f.total_mass() == Catch::Approx(3.0));

    // equal superposition of two localized configurations halves each spike
    Vector psi2 = Vector::Zero(m.dim());
    psi2[1 * 4 + 3] = 1.0 / std::sqrt(2.0);
    psi2[2 * 4 + 0] = 1.0 / std::sqrt(2.0);
    MatterDensityField f2 = matter_density(m, psi2);
    REQUIRE(f2.values[1] == Catch::Approx(0.5));
    REQUIRE(f2.values[2] == Catch::Approx(0.5));
    REQUIRE(f2.values[3] == Catch::Approx(1.0));
    REQUIRE(f2.values[0] == Catch::Approx(1.0));
}

TEST_CASE("matter density matches the configuration-sum oracle", "[ontology][property]") {
    GrwModel m = make_model(2, 3, 0.5, 0.1, 1.0, {1.3, 0.7}, {});
    RngStream rng(71, 0);
    for (int rep = 0; rep < 8; ++rep) {
        Vector psi = random_state(rng, m.dim());
        MatterDensityField f = matter_density(m, psi);
        for (int x = 0; x < m.sites; ++x) {
            double oracle = 0.0;
            for (Eigen::Index q = 0; q < m.dim(); ++q) {
                int q0 = static_cast<int>(q) / 3, q1 = static_cast<int>(q) % 3;
                if (q0 == x) oracle += 1.3 * std::norm(psi[q]) / m.spacing;
                if (q1 == x) oracle += 0.7 * std::norm(psi[q]) / m.spacing;
            }
            REQUIRE(f.values[x] == Catch::Approx(oracle).margin(1e-12));
        }
        REQUIRE(f.total_mass() == Catch::Approx(2.0).margin(1e-9));
    }
}

TEST_CASE("split densities add up and follow the reduced density matrix", "[ontology]") {
    GrwModel m = make_model(2, 3, 0.5, 0.2, 0.9, {1.0, 2.0}, {});
    RngStream rng(73, 1);
    Vector psi = random_state(rng, m.dim());
    SystemSplit sys{{0}, std::nullopt}, env{{1}, std::nullopt};
    MatterDensityField whole = matter_density(m, psi);
    MatterDensityField fs = matter_density(m, psi, sys);
    MatterDensityField fe = matter_density(m, psi, env);
    for (int x = 0; x < m.sites; ++x)
        REQUIRE(fs.values[x] + fe.values[x] == Catch::Approx(whole.values[x]).margin(1e-12));

    // m_sys from the reduced density matrix diagonal
    SplitIndex idx = make_split_index(m, sys.sys_labels);
    Matrix rho = permute_to_split(Matrix(psi * psi.adjoint()), idx);
    Matrix rho_sys = partial_trace(rho, idx.d_sys, idx.d_env, TraceOver::Env);
    for (int x = 0; x < m.sites; ++x) {
        double via_rho = 1.0 * rho_sys(x, x).real() / m.spacing;
        REQUIRE(fs.values[x] == Catch::Approx(via_rho).margin(1e-12));
    }
}

TEST_CASE("macro readout from matter density", "[ontology]") {
    MacroPartition part;
    part.regions = {{"pointer-1", {0, 1}}, {"pointer-2", {2, 3}}};
    part.threshold = 0.9;

    MatterDensityField all_left;
    all_left.spacing = 1.0;
    all_left.values = RealVector::Zero(4);
    all_left.values[0] = 2.0;
    REQUIRE(macro_state_m(all_left, part) == "pointer-1");

    MatterDensityField even;
    even.spacing = 1.0;
    even.values = RealVector::Zero(4);
    even.values[0] = 1.0;
    even.values[3] = 1.0;
    REQUIRE(macro_state_m(even, part) == "ambiguous");

    // |c1|^2 = 0.99 two-packet state
    GrwModel m = make_model(1, 4, 1.0, 0.1, 0.5, {1.0}, {});
    Vector psi = Vector::Zero(4);
    psi[0] = std::sqrt(0.99);
    psi[3] = std::sqrt(0.01);
    REQUIRE(macro_state_m(matter_density(m, psi), part) == "pointer-1");

    MacroPartition overlap;
    overlap.regions = {{"a", {0, 1}}, {"b", {1, 2}}};
    REQUIRE_THROWS_AS(macro_state_m(even, overlap), PreconditionError);
}

TEST_CASE("macro readout from flashes", "[ontology]") {
    MacroPartition part;
    part.regions = {{"pointer-1", {0, 1}}, {"pointer-2", {2, 3}}};
    part.threshold = 0.9;

    FlashHistory h;
    h.start = 0.0;
    h.end = 1.0;
    h.events = {{0.2, 0, 0}, {0.5, 1, 0}, {0.8, 0, 0}};
    REQUIRE(macro_state_f(h, part, 0.0, 1.0) == "pointer-1");

    FlashHistory none;
    none.start = 0.0;
    none.end = 1.0;
    REQUIRE(macro_state_f(none, part, 0.0, 1.0) == "ambiguous");

    // mixed flashes below threshold
    FlashHistory mixed;
    mixed.start = 0.0;
    mixed.end = 1.0;
    mixed.events = {{0.2, 0, 0}, {0.5, 3, 0}};
    REQUIRE(macro_state_f(mixed, part, 0.0, 1.0) == "ambiguous");

    // readout window filters events
    REQUIRE(macro_state_f(mixed, part, 0.4, 1.0) == "pointer-2");
}
