#pragma once

#include "mfgflow/common.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mfgflow {

/// Analytic obstacle shape. Circles carry (center, radius); the elliptical
/// variant carries semi-axes instead. Containment is exact for the shape;
/// the dynamics only ever feel the smooth penalty (see obstacle_penalty).
struct Obstacle {
    enum class Kind { Circle, Ellipse };

    Kind kind = Kind::Circle;
    Vec center;       // dimension d
    double radius = 0.0;  // circle
    double ax = 0.0;      // ellipse semi-axis (x)
    double ay = 0.0;      // ellipse semi-axis (y)

    static Obstacle circle(const Vec& c, double r);
    static Obstacle ellipse(const Vec& c, double a, double b);

    bool contains(const Vec& x) const;
    /// Squared shape distance: |x-c|^2 for circles, the elliptical quadratic
    /// form for ellipses. The soft penalty is a function of this quantity.
    double shape_sq(const Vec& x) const;
};

/// Fixed flat layout of a boundary-condition vector. The vector length is
/// constant for a given layout; absent obstacle slots hold kSentinel.
struct BoundaryLayout {
    int d = 2;
    int max_obstacles = 2;
    Obstacle::Kind obstacle_kind = Obstacle::Kind::Circle;
    bool canonical_sort = true;  // sort obstacle slots so order never matters

    static constexpr double kSentinel = -1.0;

    int slots_per_obstacle() const { return d + (obstacle_kind == Obstacle::Kind::Circle ? 1 : 2); }
    /// init_mean(d), init_std, target(d), sigma, then obstacle slots.
    int flat_size() const { return 2 * d + 2 + max_obstacles * slots_per_obstacle(); }

    bool operator==(const BoundaryLayout&) const = default;
};

/// Scenario description: everything needed to pose one crowd-motion instance.
struct Scenario {
    Vec init_mean;
    double init_std = 1.0;
    Vec target;
    std::vector<Obstacle> obstacles;
    double sigma = 1.0;   // SDE diffusion coefficient
    double T = 1.0;
    int N = 50;
    double s_safe = 0.5;
    double f_in = 0.0;
};

/// Finite vector encoding of boundary conditions: Gaussian initial density,
/// target point, obstacles and diffusion, flattened by a declared layout.
struct BoundaryCode {
    BoundaryLayout layout;
    Vec flat;

    Vec init_mean() const;
    double init_std() const;
    Vec target() const;
    double sigma() const;
    std::vector<Obstacle> obstacles() const;
};

BoundaryCode encode(const Scenario& s, const BoundaryLayout& layout);
Scenario decode(const BoundaryCode& code);

/// Smooth obstacle cost: exp(-q) + exp(-(q - s_safe)^2) with q the squared
/// shape distance. Both terms lie in (0,1]; the second peaks on the shell
/// q = s_safe.
double obstacle_penalty(const Vec& x, const Obstacle& obs, double s_safe);

/// Quadratic control energy H(x,p) = |p|^2 / 2, grad_p H = p.
double hamiltonian_quadratic(const Vec& x, const Vec& p);

/// One fixed-coefficient MFG instance. Cost handles take the agent state and
/// a column-matrix of population samples; crowd-motion costs evaluate at the
/// agent state, population samples only enter the optional congestion term.
struct MFGProblem {
    int d = 2;
    double T = 1.0;
    int N = 50;
    double sigma = 1.0;  // SDE coefficient; HJB/FPK viscosity is sigma^2/2

    std::function<double(const Vec&, const Vec&)> hamiltonian;           // H(x,p)
    std::function<Vec(const Vec&, const Vec&)> grad_p_hamiltonian;       // dH/dp
    std::function<double(const Vec&, const Mat&, double)> running_cost;  // f(x, mu samples, t)
    std::function<double(const Vec&, const Mat&)> terminal_cost;         // g(x, muT samples)
    std::function<Vec(const Vec&, const Mat&)> grad_terminal;            // dg/dx
    std::function<double(const Vec&, const Mat&)> lap_terminal;          // trace d2g/dx2

    Vec mu0_mean;
    double mu0_std = 1.0;

    Scenario scenario;  // provenance of the instance (box construction, plots)

    double dt() const { return T / N; }
    double t(int n) const { return n * dt(); }
    /// Viscosity of the value/density PDE pair implied by "sigma dW" noise.
    double nu() const { return 0.5 * sigma * sigma; }
};

/// Crowd-motion instance from a boundary code: quadratic distance-to-target
/// terminal cost, per-obstacle smooth penalties as running cost, Gaussian
/// initial density. congestion_coeff > 0 adds a kernel-density estimate of
/// the current population at the agent state (off by default).
MFGProblem build_crowd_motion(const BoundaryCode& code, int N, double T,
                              double s_safe = 0.5, double f_in = 0.0,
                              double congestion_coeff = 0.0);

MFGProblem build_crowd_motion(const Scenario& s);

/// Axis-aligned evaluation box: bounding box of the initial mean, target and
/// obstacle extents, padded by 6 * max(init std, sigma * sqrt(T)).
Box working_box(const Scenario& s);

// --- scenario files (JSON, strict schema) ---
Scenario load_scenario(const std::string& path);
void save_scenario(const Scenario& s, const std::string& path);
std::string scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const std::string& text);

}  // namespace mfgflow
