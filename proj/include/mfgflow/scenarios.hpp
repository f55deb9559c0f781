#pragma once

#include "mfgflow/core.hpp"

#include <string>
#include <vector>

namespace mfgflow {

/// Benchmark families of boundary conditions. Each family fixes everything
/// except a single swept element.
namespace scenarios {

/// Circular obstacle sweep: initial Gaussian at (-7,0) with std 0.2, target
/// (7,0); the obstacle slot runs over five (x, y, R) settings.
std::vector<BoundaryCode> obstacle_family();

/// Diffusion sweep {0.2, 1, 2} through a narrow passage between two fixed
/// elliptical obstacles; initial Gaussian at (-10,0) with std 1, target (10,0).
std::vector<BoundaryCode> diffusion_family();

/// Initial/terminal sweep: four (mean, std, target) combinations with fixed
/// diffusion and obstacle configuration.
std::vector<BoundaryCode> init_terminal_family();

std::vector<BoundaryCode> family_by_name(const std::string& name);

/// Scenario files for a family (one JSON file per member, diffing only in the
/// swept slots).
std::vector<Scenario> family_scenarios(const std::string& name, int N, double T);

}  // namespace scenarios

}  // namespace mfgflow
