#pragma once

#include "mfgflow/core.hpp"
#include "mfgflow/fbsde.hpp"
#include "mfgflow/flow.hpp"

#include <string>
#include <vector>

namespace mfgflow {

/// Discretization of a small box in 1D or 2D. Construction enforces a
/// CFL-style bound dt <= dx / v_ref with v_ref = 2 * box diameter, a
/// conservative estimate of the largest drift a quadratic terminal cost can
/// produce inside the box.
struct GridSpec {
    Box box;
    std::vector<int> pts;  // points per dimension (<= 128 in 1D, <= 64 in 2D)
    int n_t = 0;

    int dim() const { return box.dim(); }
    double dx(int axis) const { return box.side(axis) / pts[axis]; }
    int cells() const {
        int c = 1;
        for (int p : pts) c *= p;
        return c;
    }
    /// Cell-center coordinate along an axis.
    double center(int axis, int i) const { return box.lo[axis] + (i + 0.5) * dx(axis); }
    double cell_volume() const {
        double v = 1.0;
        for (int a = 0; a < dim(); ++a) v *= dx(a);
        return v;
    }
};

GridSpec make_grid_spec(const Box& box, const std::vector<int>& pts, int n_t, double T);

struct OracleResult {
    GridSpec grid;
    double T = 0;
    std::vector<Vec> u;        // n_t + 1 levels, flattened fields
    std::vector<Vec> mu;       // n_t + 1 levels, flattened non-negative fields
    std::vector<double> residual_trace;  // L1 change of mu per fixed-point sweep
    bool converged = false;
};

/// Classical fixed-point solve of the coupled value/density system: backward
/// value sweeps (implicit diffusion, monotone upwind Hamiltonian) alternated
/// with forward conservative density transport, damped until the density
/// stops moving. Mass is conserved exactly by the flux-form transport.
OracleResult solve_fixed_point(const MFGProblem& problem, const GridSpec& grid, double damping,
                               int max_iter);

struct FlowCompareReport {
    std::vector<double> density_l1;  // per compared time level
    std::vector<double> value_rmse;  // per compared time level
    double max_density_l1 = 0;
};

/// Per-level L1 density error and value RMSE between a solved grid field and
/// a flow/value pair. Horizons must match and the grid's time resolution must
/// be a multiple of the flow's.
FlowCompareReport compare_to_flow(const OracleResult& oracle, const MFGProblem& problem,
                                  const DensityFlow& flow, const ValuePath& vp);

/// CSV dump: header lines carry dims, bounds and time levels; rows carry
/// (level, cell, coordinates, mu, u).
void dump_fields(const OracleResult& oracle, const std::string& path);

}  // namespace mfgflow
