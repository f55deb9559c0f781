#pragma once

#include "mfgflow/core.hpp"
#include "mfgflow/flow.hpp"

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace mfgflow {

struct MetricsReport {
    std::string scenario_id;
    double solve_seconds = 0;
    double success_rate = 0;                // in [0,1]
    double volume_diff = 0;                 // log10 of the worst |mass - 1|
    std::vector<double> per_level_volume;   // |mass - 1| per time level
};

/// Fraction of agents whose whole trajectory stays outside every obstacle and
/// never comes within pair_radius of another agent at the same time step.
/// trajectories[n] holds all agent positions at step n (d x M).
double collision_success_rate(const std::vector<Mat>& trajectories,
                              const std::vector<Obstacle>& obstacles, double pair_radius);

/// log10 of the worst per-level deviation of the quadrature mass from one.
/// Rejects resolutions whose cells are coarser than half the flow's base std.
double volume_invariance(const DensityFlow& flow, const Box& box, int resolution_per_axis,
                         std::vector<double>* per_level = nullptr);

/// Same measure for raw density fields given on a lattice of cell centers.
double volume_invariance(const std::vector<Vec>& fields, double cell_volume,
                         std::vector<double>* per_level = nullptr);

/// Wall-clock timing of a callable on the monotonic clock.
template <typename F>
auto timed(F&& fn) -> std::pair<decltype(fn()), double> {
    const auto t0 = std::chrono::steady_clock::now();
    auto result = fn();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(result), secs};
}

void write_metrics_csv(const std::vector<MetricsReport>& rows, double pair_radius,
                       const std::string& path);
void write_metrics_json(const std::vector<MetricsReport>& rows, double pair_radius,
                        const std::string& path);

}  // namespace mfgflow
