#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "grw/model.hpp"

#include "test_util.hpp"

using namespace grw;
using namespace grw::testutil;

namespace {

GrwModel basic_model(int particles, int sites, double lambda = 0.5, double sigma = 1.5,
                     Matrix h = {}) {
    return make_model(particles, sites, 1.0, lambda, sigma,
                      std::vector<double>(static_cast<std::size_t>(particles), 1.0), std::move(h));
}

} // namespace

TEST_CASE("collapse family is complete after renormalization", "[model]") {
    GrwModel m = basic_model(1, 8, 0.5, 1.5);
    // sum_x a * Lambda(x) = I to machine precision, per configuration
    for (int v = 0; v < m.sites; ++v) {
        double total = 0.0;
        for (int x = 0; x < m.sites; ++x) total += m.spacing * m.collapse().weights(v, x);
        REQUIRE(total == Catch::Approx(1.0).margin(1e-14));
    }
    // every weight nonnegative, coherence bounded by one with equality on the diagonal
    REQUIRE(m.collapse().weights.minCoeff() >= 0.0);
    for (int v = 0; v < m.sites; ++v) {
        REQUIRE(m.collapse().coherence(v, v) == Catch::Approx(1.0).margin(1e-14));
        for (int u = 0; u < m.sites; ++u) REQUIRE(m.collapse().coherence(v, u) <= 1.0 + 1e-12);
    }
}

TEST_CASE("localized state sees a renormalized discrete Gaussian", "[model]") {
    const int sites = 9;
    const double sigma = 1.3, a = 1.0;
    GrwModel m = basic_model(1, sites, 0.2, sigma);
    const int q = 4;
    Vector psi = Vector::Zero(sites);
    psi[q] = 1.0;
    // Oracle: evaluate and renormalize the Gaussian directly.
    std::vector<double> gauss(sites);
    double total = 0.0;
    for (int x = 0; x < sites; ++x) {
        gauss[static_cast<std::size_t>(x)] = std::exp(-std::pow((q - x) * a, 2) / (2 * sigma * sigma));
        total += gauss[static_cast<std::size_t>(x)];
    }
    for (int x = 0; x < sites; ++x) {
        double expected = gauss[static_cast<std::size_t>(x)] / total;
        double marginal = 0.0;
        RealVector diag = m.collapse_diag(0, x);
        for (int v = 0; v < sites; ++v) marginal += std::norm(psi[v]) * diag[v] * a;
        REQUIRE(marginal == Catch::Approx(expected).margin(1e-12));
    }
}

TEST_CASE("flat-sigma limit is near-uniform", "[model]") {
    const int sites = 6;
    GrwModel m = basic_model(1, sites, 0.2, 100.0);
    for (int v = 0; v < sites; ++v)
        for (int x = 0; x < sites; ++x) {
            double w = m.spacing * m.collapse().weights(v, x);
            REQUIRE(std::abs(w - 1.0 / sites) <= 0.1 / sites);
        }
}

TEST_CASE("collapse operators commute pairwise", "[model]") {
    GrwModel m = basic_model(2, 3, 0.4, 0.8);
    RealVector a = m.collapse_diag(0, 1), b = m.collapse_diag(1, 2);
    // diagonal operators: elementwise products in either order coincide exactly
    REQUIRE(((a.array() * b.array()) - (b.array() * a.array())).abs().maxCoeff() == 0.0);
}

TEST_CASE("hamiltonian builders", "[model]") {
    REQUIRE(build_hamiltonian(2, 3, 1.0, {1.0, 1.0}, HamiltonianKind::Zero).norm() == 0.0);

    Matrix h = build_hamiltonian(1, 2, 1.0, {1.0}, HamiltonianKind::Hopping);
    Matrix expect(2, 2);
    expect << 1.0, -0.5, -0.5, 1.0;
    REQUIRE((h - expect).norm() < 1e-14);

    RngStream rng(99, 0);
    PotentialSpec pot;
    pot.kind = PotentialSpec::Kind::Onsite;
    pot.onsite = {rng.uniform01(), rng.uniform01(), rng.uniform01(), rng.uniform01()};
    Matrix h2 = build_hamiltonian(2, 4, 0.7, {1.0, 2.5}, HamiltonianKind::Hopping, pot);
    REQUIRE(is_hermitian(h2));

    PotentialSpec contact;
    contact.kind = PotentialSpec::Kind::Contact;
    contact.contact_strength = 2.0;
    Matrix h3 = build_hamiltonian(2, 2, 1.0, {1.0, 1.0}, HamiltonianKind::Hopping, contact);
    REQUIRE(is_hermitian(h3));
    REQUIRE(h3(0, 0).real() == Catch::Approx(2.0 + 2.0)); // two onsite constants + contact
    REQUIRE(h3(1, 1).real() == Catch::Approx(2.0));
}

TEST_CASE("model validation", "[model]") {
    REQUIRE_THROWS_AS(make_model(1, 2, -1.0, 0.1, 1.0, {1.0}, {}), PreconditionError);
    REQUIRE_THROWS_AS(make_model(1, 2, 1.0, -0.1, 1.0, {1.0}, {}), PreconditionError);
    REQUIRE_THROWS_AS(make_model(1, 2, 1.0, 0.1, 1.0, {1.0, 2.0}, {}), PreconditionError);
    REQUIRE_THROWS_AS(make_model(1, 2, 1.0, 0.1, 1.0, {-1.0}, {}), PreconditionError);
    Matrix bad = Matrix::Zero(3, 3);
    REQUIRE_THROWS_AS(make_model(1, 2, 1.0, 0.1, 1.0, {1.0}, bad), DimensionError);
}

TEST_CASE("split of non-interacting particles is isolated", "[model]") {
    Matrix h = build_hamiltonian(2, 3, 1.0, {1.0, 2.0}, HamiltonianKind::Hopping);
    GrwModel m = make_model(2, 3, 1.0, 0.3, 1.0, {1.0, 2.0}, h);
    SystemSplit sp;
    sp.sys_labels = {0};
    SplitResult res = split(m, sp);
    REQUIRE(res.is_isolated);
    REQUIRE(res.hamiltonian_residual < 1e-12);
    REQUIRE(res.sys.dim() == 3);
    REQUIRE(res.env.dim() == 3);
    REQUIRE(res.sys.masses == std::vector<double>{1.0});
    REQUIRE(res.env.masses == std::vector<double>{2.0});

    // factor reconstruction in the permuted basis
    SplitIndex idx = make_split_index(m, sp.sys_labels);
    Matrix rebuilt = tensor_product(res.sys.hamiltonian, Matrix::Identity(3, 3)) +
                     tensor_product(Matrix::Identity(3, 3), res.env.hamiltonian);
    REQUIRE((permute_to_split(m.hamiltonian, idx) - rebuilt).norm() < 1e-12);

    // single-particle hopping blocks match the standalone builder up to an identity shift
    Matrix h1 = build_hamiltonian(1, 3, 1.0, {1.0}, HamiltonianKind::Hopping);
    Matrix d = res.sys.hamiltonian - h1;
    REQUIRE((d - d(0, 0) * Matrix::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("interaction potential breaks isolation", "[model]") {
    PotentialSpec contact;
    contact.kind = PotentialSpec::Kind::Contact;
    contact.contact_strength = 1.0;
    Matrix h = build_hamiltonian(2, 3, 1.0, {1.0, 1.0}, HamiltonianKind::Hopping, contact);
    GrwModel m = make_model(2, 3, 1.0, 0.3, 1.0, {1.0, 1.0}, h);
    SystemSplit sp;
    sp.sys_labels = {0};
    SplitResult res = split(m, sp);
    REQUIRE_FALSE(res.is_isolated);
    REQUIRE(res.hamiltonian_residual > 1e-6);
}

TEST_CASE("whole-universe split has a trivial environment", "[model]") {
    GrwModel m = basic_model(2, 2, 0.2, 0.9,
                             build_hamiltonian(2, 2, 1.0, {1.0, 1.0}, HamiltonianKind::Hopping));
    SystemSplit sp;
    sp.sys_labels = {0, 1};
    SplitResult res = split(m, sp);
    REQUIRE(res.is_isolated);
    REQUIRE(res.env.dim() == 1);
    REQUIRE(res.sys.dim() == 4);
}

TEST_CASE("restricted region blocks isolation and classifies flashes", "[model]") {
    GrwModel m = basic_model(2, 4);
    SystemSplit sp;
    sp.sys_labels = {0};
    sp.sys_region = std::set<int>{0, 1};
    REQUIRE_FALSE(split(m, sp).is_isolated);
    REQUIRE(sp.is_system_flash(0, 1));
    REQUIRE_FALSE(sp.is_system_flash(0, 2)); // outside region
    REQUIRE_FALSE(sp.is_system_flash(1, 1)); // wrong label
}

TEST_CASE("split label validation and Lambda factorization", "[model]") {
    GrwModel m = basic_model(2, 3);
    SystemSplit bad;
    bad.sys_labels = {5};
    REQUIRE_THROWS_AS(split(m, bad), PreconditionError);

    // Lambda for a system label acts as identity on the environment factor.
    SplitIndex idx = make_split_index(m, {0});
    for (int x = 0; x < m.sites; ++x) {
        RealVector diag = m.collapse_diag(0, x);
        Matrix full = diag.cast<cplx>().asDiagonal();
        Matrix perm = permute_to_split(full, idx);
        Matrix sys_part = Matrix::Zero(idx.d_sys, idx.d_sys);
        for (Eigen::Index s = 0; s < idx.d_sys; ++s) sys_part(s, s) = perm(s * idx.d_env, s * idx.d_env);
        REQUIRE((perm - tensor_product(sys_part, Matrix::Identity(idx.d_env, idx.d_env))).norm() <
                1e-14);
    }
}
