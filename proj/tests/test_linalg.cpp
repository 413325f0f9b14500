#include <catch2/catch_amalgamated.hpp>

#include "grw/linalg.hpp"

#include "test_util.hpp"

using namespace grw;
using namespace grw::testutil;

namespace {

Matrix diag2(double a, double b) {
    Matrix m = Matrix::Zero(2, 2);
    m(0, 0) = a;
    m(1, 1) = b;
    return m;
}

} // namespace

TEST_CASE("tensor product identities", "[linalg]") {
    Matrix i2 = Matrix::Identity(2, 2), i3 = Matrix::Identity(3, 3);
    REQUIRE((tensor_product(i2, i3) - Matrix::Identity(6, 6)).norm() == 0.0);

    Matrix d = tensor_product(diag2(1, 2), diag2(3, 4));
    Vector expect(4);
    expect << 3, 4, 6, 8;
    REQUIRE((d.diagonal() - expect).norm() == 0.0);
    REQUIRE((d - Matrix(d.diagonal().asDiagonal())).norm() == 0.0);
}

TEST_CASE("tensor product is multiplicative", "[linalg]") {
    RngStream rng(2024, 1);
    for (int rep = 0; rep < 20; ++rep) {
        Matrix a = random_matrix(rng, 2, 2), b = random_matrix(rng, 2, 2);
        Matrix c = random_matrix(rng, 2, 2), d = random_matrix(rng, 2, 2);
        Matrix lhs = tensor_product(a, b) * tensor_product(c, d);
        Matrix rhs = tensor_product(a * c, b * d);
        REQUIRE((lhs - rhs).norm() <= 1e-12 * rhs.norm());
    }
}

TEST_CASE("partial trace on product and entangled states", "[linalg]") {
    RngStream rng(2024, 2);
    Matrix rho_a = random_density(rng, 2), rho_b = random_density(rng, 3);
    Matrix joint = tensor_product(rho_a, rho_b);
    REQUIRE((partial_trace(joint, 2, 3, TraceOver::Env) - rho_a).norm() < 1e-12);
    REQUIRE((partial_trace(joint, 2, 3, TraceOver::Sys) - rho_b).norm() < 1e-12);

    Vector bell(4);
    bell << 1, 0, 0, 1;
    bell /= std::sqrt(2.0);
    Matrix proj = bell * bell.adjoint();
    REQUIRE((partial_trace(proj, 2, 2, TraceOver::Env) - 0.5 * Matrix::Identity(2, 2)).norm() <
            1e-14);
}

TEST_CASE("partial trace matches index-summation oracle and preserves trace", "[linalg]") {
    RngStream rng(2024, 3);
    Matrix m = random_psd(rng, 4);
    // Oracle: explicit double loop over composite indices (d_sys = d_env = 2).
    Matrix oracle = Matrix::Zero(2, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k)
                oracle(i, j) += m(i * 2 + k, j * 2 + k);
    Matrix got = partial_trace(m, 2, 2, TraceOver::Env);
    REQUIRE((got - oracle).norm() < 1e-14);
    REQUIRE(std::abs((got.trace() - m.trace())) < 1e-12);
    REQUIRE_THROWS_AS(partial_trace(random_matrix(rng, 3, 3), 2, 2), DimensionError);
}

TEST_CASE("partial trace undoes tensor product", "[linalg][property]") {
    RngStream rng(2024, 4);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix a = random_matrix(rng, 3, 3), b = random_matrix(rng, 2, 2);
        Matrix joint = tensor_product(a, b);
        REQUIRE((partial_trace(joint, 3, 2, TraceOver::Env) - b.trace() * a).norm() < 1e-12);
        REQUIRE((partial_trace(joint, 3, 2, TraceOver::Sys) - a.trace() * b).norm() < 1e-12);
    }
}

TEST_CASE("herm_eig basics", "[linalg]") {
    auto eig = herm_eig(diag2(3, 1));
    REQUIRE(eig.eigenvalues[0] == Catch::Approx(1.0));
    REQUIRE(eig.eigenvalues[1] == Catch::Approx(3.0));

    Matrix sx = Matrix::Zero(2, 2);
    sx(0, 1) = 1;
    sx(1, 0) = 1;
    auto flip = herm_eig(sx);
    REQUIRE(flip.eigenvalues[0] == Catch::Approx(-1.0));
    REQUIRE(flip.eigenvalues[1] == Catch::Approx(1.0));

    RngStream rng(2024, 5);
    Matrix m = random_hermitian(rng, 8);
    auto e = herm_eig(m);
    Matrix rebuilt = e.eigenvectors * e.eigenvalues.cast<cplx>().asDiagonal() *
                     e.eigenvectors.adjoint();
    REQUIRE((rebuilt - m).norm() <= 1e-9 * m.norm());
    REQUIRE_THROWS_AS(herm_eig(random_matrix(rng, 3, 3)), PreconditionError);
}

TEST_CASE("psd_sqrt", "[linalg]") {
    REQUIRE((psd_sqrt(diag2(4, 9)) - diag2(2, 3)).norm() < 1e-12);
    REQUIRE((psd_sqrt(Matrix::Identity(3, 3)) - Matrix::Identity(3, 3)).norm() < 1e-12);

    RngStream rng(2024, 6);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix m = random_psd(rng, 5);
        Matrix r = psd_sqrt(m);
        REQUIRE((r * r - m).norm() <= 1e-9 * m.norm());
        REQUIRE(is_hermitian(r));
        REQUIRE(min_eigenvalue(r) >= -1e-10);
    }
    REQUIRE_THROWS_AS(psd_sqrt(diag2(-1, 1)), PreconditionError);
}

TEST_CASE("expm_skew_herm", "[linalg]") {
    Matrix h = diag2(0, M_PI);
    REQUIRE((expm_skew_herm(h, 0.0) - Matrix::Identity(2, 2)).norm() < 1e-14);
    Matrix u = expm_skew_herm(h, 1.0);
    REQUIRE(std::abs(u(0, 0) - cplx(1, 0)) < 1e-12);
    REQUIRE(std::abs(u(1, 1) - cplx(-1, 0)) < 1e-12);

    RngStream rng(2024, 7);
    Matrix g = random_hermitian(rng, 6);
    Matrix ut = expm_skew_herm(g, 0.7), us = expm_skew_herm(g, 1.9);
    REQUIRE((expm_skew_herm(g, 2.6) - ut * us).norm() < 1e-10);
    // unitarity far out in time
    Matrix far = expm_skew_herm(g / g.norm(), 1e3);
    REQUIRE((far * far.adjoint() - Matrix::Identity(6, 6)).norm() <= 1e-9);
}

TEST_CASE("trace distance", "[linalg]") {
    RngStream rng(2024, 8);
    Matrix a = random_density(rng, 4);
    REQUIRE(trace_distance(a, a) == 0.0);

    Vector e0 = Vector::Zero(2), e1 = Vector::Zero(2);
    e0[0] = 1;
    e1[1] = 1;
    REQUIRE(trace_distance(e0 * e0.adjoint(), e1 * e1.adjoint()) == Catch::Approx(1.0));

    Matrix b = random_density(rng, 4);
    // Oracle: half the sum of singular values of the (Hermitian) difference.
    Eigen::JacobiSVD<Matrix> svd(a - b);
    double oracle = 0.5 * svd.singularValues().sum();
    REQUIRE(trace_distance(a, b) == Catch::Approx(oracle).margin(1e-12));
    REQUIRE(trace_distance(a, b) == Catch::Approx(trace_distance(b, a)));
    REQUIRE_THROWS_AS(trace_distance(a, random_density(rng, 3)), DimensionError);
}
