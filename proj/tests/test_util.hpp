#pragma once

// Deterministic random inputs for property-style tests.

#include "grw/common.hpp"
#include "grw/linalg.hpp"
#include "grw/rng.hpp"

namespace grw::testutil {

inline Matrix random_matrix(RngStream& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = cplx(2.0 * rng.uniform01() - 1.0, 2.0 * rng.uniform01() - 1.0);
    return m;
}

inline Matrix random_hermitian(RngStream& rng, Eigen::Index dim) {
    return hermitize(random_matrix(rng, dim, dim));
}

inline Matrix random_psd(RngStream& rng, Eigen::Index dim) {
    Matrix a = random_matrix(rng, dim, dim);
    return a * a.adjoint();
}

inline Matrix random_density(RngStream& rng, Eigen::Index dim) {
    Matrix p = random_psd(rng, dim);
    return p / p.trace().real();
}

inline Vector random_state(RngStream& rng, Eigen::Index dim) {
    Vector v(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
        v[i] = cplx(2.0 * rng.uniform01() - 1.0, 2.0 * rng.uniform01() - 1.0);
    return v.normalized();
}

inline Matrix random_unitary(RngStream& rng, Eigen::Index dim) {
    return expm_skew_herm(random_hermitian(rng, dim), 1.0);
}

} // namespace grw::testutil
