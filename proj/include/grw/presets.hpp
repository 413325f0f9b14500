#pragma once

// Canned models and experiments shared by the CLI scenarios and the test
// suites.

#include <cmath>

#include "grw/formalism.hpp"
#include "grw/model.hpp"

namespace grw::presets {

inline Vector basis_state(int k, int dim) {
    Vector v = Vector::Zero(dim);
    v[k] = 1.0;
    return v;
}

inline Vector two_packet(int a, int b, int dim) {
    Vector v = Vector::Zero(dim);
    v[a] = v[b] = 1.0 / std::sqrt(2.0);
    return v;
}

inline Matrix pauli_x2() {
    Matrix x = Matrix::Zero(2, 2);
    x(0, 1) = x(1, 0) = 1.0;
    return x;
}

/// H generating a controlled flip over a window of length T: the joint
/// unitary applies `flip` to the apparatus exactly when the system lies in
/// the range of `control_proj`.
inline Matrix controlled_flip_hamiltonian(const Matrix& control_proj, const Matrix& flip,
                                          double T) {
    Eigen::Index da = flip.rows();
    return (M_PI / (2.0 * T)) * tensor_product(control_proj, Matrix::Identity(da, da) - flip);
}

/// Two qubit-like particles (L = 2): CNOT meter with pointer = apparatus site.
inline Experiment qubit_meter_experiment(double lambda, double T = 1.0) {
    Matrix ctrl = Matrix::Zero(2, 2);
    ctrl(1, 1) = 1.0;
    Matrix h = controlled_flip_hamiltonian(ctrl, pauli_x2(), T);
    Experiment exp;
    exp.joint = make_model(2, 2, 1.0, lambda, 0.7, {1.0, 1.0}, h);
    exp.n_sys = 1;
    exp.rho_app = Matrix::Zero(2, 2);
    exp.rho_app(0, 0) = 1.0;
    exp.start = 0.0;
    exp.end = T;
    exp.pointer_outcomes = {"0", "1"};
    Matrix p0 = Matrix::Zero(2, 2), p1 = Matrix::Zero(2, 2);
    p0(0, 0) = 1.0;
    p1(1, 1) = 1.0;
    exp.pointer_projectors = {p0, p1};
    exp.n_max = 3;
    exp.quad_nodes = 6;
    return exp;
}

/// x-basis variant of the qubit meter (controlled flip on the |-> state).
inline Experiment qubit_meter_x_experiment(double lambda, double T = 1.0) {
    Vector minus(2);
    minus << 1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0);
    Experiment exp = qubit_meter_experiment(lambda, T);
    exp.joint = make_model(2, 2, 1.0, lambda, 0.7, {1.0, 1.0},
                           controlled_flip_hamiltonian(Matrix(minus * minus.adjoint()),
                                                       pauli_x2(), T));
    return exp;
}

/// Object + apparatus on L = 4 lattices; the interaction reflects the
/// apparatus block when the object sits in the right half. The standard
/// two-particle experiment of the acceptance suite.
inline Experiment standard_experiment(double lambda, double T = 1.0, int n_max = 3,
                                      int nodes = 8) {
    const int L = 4;
    Matrix refl = Matrix::Zero(L, L);
    refl(0, 2) = refl(2, 0) = refl(1, 3) = refl(3, 1) = 1.0;
    Matrix p_right = Matrix::Zero(L, L);
    p_right(2, 2) = p_right(3, 3) = 1.0;
    Matrix h = controlled_flip_hamiltonian(p_right, refl, T);
    Experiment exp;
    exp.joint = make_model(2, L, 1.0, lambda, 0.8, {1.0, 1.0}, h);
    exp.n_sys = 1;
    exp.rho_app = Matrix::Zero(L, L);
    exp.rho_app(0, 0) = 1.0;
    exp.start = 0.0;
    exp.end = T;
    auto [names, projs] = site_region_projectors(L, {{"left", {0, 1}}, {"right", {2, 3}}});
    exp.pointer_outcomes = names;
    exp.pointer_projectors = projs;
    exp.n_max = n_max;
    exp.quad_nodes = nodes;
    return exp;
}

/// Flash-readout variant of the standard experiment: last apparatus flash
/// decides between the site halves.
inline Experiment standard_flash_experiment(double lambda, double T = 1.0, int n_max = 3,
                                            int nodes = 8) {
    Experiment exp = standard_experiment(lambda, T, n_max, nodes);
    exp.pointer_outcomes.clear();
    exp.pointer_projectors.clear();
    FlashCalibration cal;
    cal.kind = FlashCalibration::Kind::LastFlashRegion;
    cal.labels = {1};
    cal.regions = {{"left", {0, 1}}, {"right", {2, 3}}};
    exp.calibration = cal;
    return exp;
}

/// Non-interacting hopping pair on L = 4; isolated under the {0} | {1} split.
inline GrwModel separable_pair(double lambda, double sigma = 0.6) {
    Matrix h = build_hamiltonian(2, 4, 1.0, {1.0, 1.0}, HamiltonianKind::Hopping);
    return make_model(2, 4, 1.0, lambda, sigma, {1.0, 1.0}, h);
}

/// Hopping pair plus a controlled reflection of the system by the
/// environment: decisively not isolated, the negative-control model.
inline GrwModel interacting_pair(double lambda, double sigma = 0.6, double T = 1.0) {
    const int L = 4;
    Matrix refl = Matrix::Zero(L, L);
    refl(0, 3) = refl(3, 0) = refl(1, 2) = refl(2, 1) = 1.0;
    Matrix p_right = Matrix::Zero(L, L);
    p_right(2, 2) = p_right(3, 3) = 1.0;
    Matrix h = build_hamiltonian(2, L, 1.0, {1.0, 1.0}, HamiltonianKind::Hopping) +
               (M_PI / (2.0 * T)) *
                   tensor_product(Matrix(Matrix::Identity(L, L) - refl), p_right);
    return make_model(2, L, 1.0, lambda, sigma, {1.0, 1.0}, h);
}

/// (|0,0> + |3,3>)/sqrt2 on the 4x4 pair: entangled across the {0}|{1} split.
inline Vector entangled_pair_state() {
    Vector v = Vector::Zero(16);
    v[0 * 4 + 0] = 1.0 / std::sqrt(2.0);
    v[3 * 4 + 3] = 1.0 / std::sqrt(2.0);
    return v;
}

} // namespace grw::presets
