#pragma once

// Shared model and experiment builders for the verify/experiments/acceptance
// suites; thin aliases over the library presets.

#include "grw/presets.hpp"

namespace grw::fixtures {

using presets::basis_state;
using presets::controlled_flip_hamiltonian;
using presets::entangled_pair_state;
using presets::interacting_pair;
using presets::pauli_x2;
using presets::qubit_meter_experiment;
using presets::qubit_meter_x_experiment;
using presets::separable_pair;
using presets::standard_experiment;
using presets::standard_flash_experiment;
using presets::two_packet;

} // namespace grw::fixtures
