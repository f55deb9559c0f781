#include "mfgflow/scenarios.hpp"

namespace mfgflow {
namespace scenarios {

namespace {

Vec v2(double x, double y) {
    Vec v(2);
    v << x, y;
    return v;
}

BoundaryLayout circle_layout() {
    BoundaryLayout l;
    l.d = 2;
    l.max_obstacles = 2;
    l.obstacle_kind = Obstacle::Kind::Circle;
    return l;
}

BoundaryLayout ellipse_layout() {
    BoundaryLayout l;
    l.d = 2;
    l.max_obstacles = 2;
    l.obstacle_kind = Obstacle::Kind::Ellipse;
    return l;
}

}  // namespace

std::vector<BoundaryCode> obstacle_family() {
    const BoundaryLayout layout = circle_layout();
    // sigma is not part of the sweep; 0.35 keeps the working box compatible
    // with the 200^2 quadrature guard at this family's tight initial density
    const double sigma = 0.35;
    const std::vector<std::array<double, 3>> obs = {
        {0, 0, 2}, {0, 1, 2}, {0, -2, 2}, {0, -2, 3}, {0, -2, 4}};
    std::vector<BoundaryCode> out;
    for (const auto& o : obs) {
        Scenario s;
        s.init_mean = v2(-7, 0);
        s.init_std = 0.2;
        s.target = v2(7, 0);
        s.sigma = sigma;
        s.obstacles = {Obstacle::circle(v2(o[0], o[1]), o[2])};
        out.push_back(encode(s, layout));
    }
    return out;
}

std::vector<BoundaryCode> diffusion_family() {
    const BoundaryLayout layout = ellipse_layout();
    std::vector<BoundaryCode> out;
    for (double sigma : {0.2, 1.0, 2.0}) {
        Scenario s;
        s.init_mean = v2(-10, 0);
        s.init_std = 1.0;
        s.target = v2(10, 0);
        s.sigma = sigma;
        // two ellipses above and below the corridor leave a gap of width 1 at y = 0
        s.obstacles = {Obstacle::ellipse(v2(0, 3), 1.5, 2.5),
                       Obstacle::ellipse(v2(0, -3), 1.5, 2.5)};
        out.push_back(encode(s, layout));
    }
    return out;
}

std::vector<BoundaryCode> init_terminal_family() {
    const BoundaryLayout layout = circle_layout();
    struct Row {
        double x0, y0, s0, xT, yT;
    };
    const std::vector<Row> rows = {
        {-5, -5, 1, 3, 0}, {-10, 5, 0.2, 10, -5}, {-10, -5, 0.2, 10, -5}, {-10, 5, 0.2, 5, 5}};
    std::vector<BoundaryCode> out;
    for (const auto& r : rows) {
        Scenario s;
        s.init_mean = v2(r.x0, r.y0);
        s.init_std = r.s0;
        s.target = v2(r.xT, r.yT);
        s.sigma = 1.0;
        s.obstacles = {Obstacle::circle(v2(0, 0), 2.0)};
        out.push_back(encode(s, layout));
    }
    return out;
}

std::vector<BoundaryCode> family_by_name(const std::string& name) {
    if (name == "obstacle") return obstacle_family();
    if (name == "diffusion") return diffusion_family();
    if (name == "init-terminal") return init_terminal_family();
    throw InvalidInput("unknown family \"" + name +
                       "\" (expected obstacle | diffusion | init-terminal)");
}

std::vector<Scenario> family_scenarios(const std::string& name, int N, double T) {
    std::vector<Scenario> out;
    for (const auto& code : family_by_name(name)) {
        Scenario s = decode(code);
        s.N = N;
        s.T = T;
        out.push_back(s);
    }
    return out;
}

}  // namespace scenarios
}  // namespace mfgflow
