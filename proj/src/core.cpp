#include "mfgflow/core.hpp"

#include "mfgflow/json_io.hpp"

#include <algorithm>
#include <cmath>

namespace mfgflow {

namespace {

bool all_finite(const Vec& v) { return v.allFinite(); }

void check_obstacle(const Obstacle& o, int d) {
    require(static_cast<int>(o.center.size()) == d, "obstacle center dimension mismatch");
    require(all_finite(o.center), "obstacle center must be finite");
    if (o.kind == Obstacle::Kind::Circle) {
        require(o.radius > 0.0 && std::isfinite(o.radius), "obstacle radius must be > 0");
    } else {
        require(o.ax > 0.0 && o.ay > 0.0 && std::isfinite(o.ax) && std::isfinite(o.ay),
                "obstacle axes must be > 0");
    }
}

/// Gaussian-kernel density estimate at x from population samples, used by the
/// optional congestion cost. Bandwidth: Scott's rule per axis.
double kde_at(const Vec& x, const Mat& samples) {
    const int m = static_cast<int>(samples.cols());
    const int d = static_cast<int>(samples.rows());
    if (m == 0) return 0.0;
    double h = 0.0;
    for (int a = 0; a < d; ++a) {
        const double mu = samples.row(a).mean();
        const double var = (samples.row(a).array() - mu).square().sum() / std::max(1, m - 1);
        h = std::max(h, std::sqrt(std::max(var, 1e-12)));
    }
    h *= std::pow(static_cast<double>(m), -1.0 / (d + 4));
    h = std::max(h, 1e-3);
    const double norm = std::pow(2.0 * M_PI * h * h, -0.5 * d) / m;
    double acc = 0.0;
    for (int j = 0; j < m; ++j)
        acc += std::exp(-0.5 * (x - samples.col(j)).squaredNorm() / (h * h));
    return norm * acc;
}

}  // namespace

Obstacle Obstacle::circle(const Vec& c, double r) {
    Obstacle o;
    o.kind = Kind::Circle;
    o.center = c;
    o.radius = r;
    check_obstacle(o, static_cast<int>(c.size()));
    return o;
}

Obstacle Obstacle::ellipse(const Vec& c, double a, double b) {
    Obstacle o;
    o.kind = Kind::Ellipse;
    o.center = c;
    o.ax = a;
    o.ay = b;
    check_obstacle(o, static_cast<int>(c.size()));
    return o;
}

double Obstacle::shape_sq(const Vec& x) const {
    if (kind == Kind::Circle) return (x - center).squaredNorm();
    double q = 0.0;
    const double dx = (x[0] - center[0]) / ax;
    q += dx * dx;
    if (x.size() > 1) {
        const double dy = (x[1] - center[1]) / ay;
        q += dy * dy;
    }
    return q;
}

bool Obstacle::contains(const Vec& x) const {
    if (kind == Kind::Circle) return (x - center).norm() < radius;
    return shape_sq(x) < 1.0;
}

double obstacle_penalty(const Vec& x, const Obstacle& obs, double s_safe) {
    require(all_finite(x), "obstacle_penalty: x must be finite");
    const double q = obs.shape_sq(x);
    const double shell = q - s_safe;
    return std::exp(-q) + std::exp(-shell * shell);
}

double hamiltonian_quadratic(const Vec& /*x*/, const Vec& p) {
    require(all_finite(p), "hamiltonian: p must be finite");
    return 0.5 * p.squaredNorm();
}

// --- boundary code ---

namespace {

int obstacle_slot_base(const BoundaryLayout& l, int k) {
    return 2 * l.d + 2 + k * l.slots_per_obstacle();
}

Vec obstacle_slots(const BoundaryLayout& l, const Obstacle& o) {
    Vec s(l.slots_per_obstacle());
    for (int a = 0; a < l.d; ++a) s[a] = o.center[a];
    if (l.obstacle_kind == Obstacle::Kind::Circle) {
        s[l.d] = o.radius;
    } else {
        s[l.d] = o.ax;
        s[l.d + 1] = o.ay;
    }
    return s;
}

bool slots_less(const Vec& a, const Vec& b) {
    for (int i = 0; i < a.size(); ++i) {
        if (a[i] < b[i]) return true;
        if (a[i] > b[i]) return false;
    }
    return false;
}

}  // namespace

BoundaryCode encode(const Scenario& s, const BoundaryLayout& layout) {
    const int d = layout.d;
    require(static_cast<int>(s.init_mean.size()) == d, "encode: init_mean dimension mismatch");
    require(static_cast<int>(s.target.size()) == d, "encode: target dimension mismatch");
    require(all_finite(s.init_mean) && all_finite(s.target), "encode: non-finite fields");
    require(s.init_std > 0.0 && std::isfinite(s.init_std), "encode: init_std must be > 0");
    require(s.sigma > 0.0 && std::isfinite(s.sigma), "encode: sigma must be > 0");
    require(static_cast<int>(s.obstacles.size()) <= layout.max_obstacles,
            "encode: obstacle count exceeds layout capacity (" +
                std::to_string(layout.max_obstacles) + ")");
    for (const auto& o : s.obstacles) {
        require(o.kind == layout.obstacle_kind, "encode: obstacle kind does not match layout");
        check_obstacle(o, d);
    }

    BoundaryCode code;
    code.layout = layout;
    code.flat = Vec::Constant(layout.flat_size(), BoundaryLayout::kSentinel);
    int p = 0;
    for (int a = 0; a < d; ++a) code.flat[p++] = s.init_mean[a];
    code.flat[p++] = s.init_std;
    for (int a = 0; a < d; ++a) code.flat[p++] = s.target[a];
    code.flat[p++] = s.sigma;

    std::vector<Vec> slots;
    slots.reserve(s.obstacles.size());
    for (const auto& o : s.obstacles) slots.push_back(obstacle_slots(layout, o));
    if (layout.canonical_sort)
        std::sort(slots.begin(), slots.end(), slots_less);
    for (std::size_t k = 0; k < slots.size(); ++k)
        code.flat.segment(obstacle_slot_base(layout, static_cast<int>(k)), layout.slots_per_obstacle()) = slots[k];
    return code;
}

Vec BoundaryCode::init_mean() const { return flat.segment(0, layout.d); }
double BoundaryCode::init_std() const { return flat[layout.d]; }
Vec BoundaryCode::target() const { return flat.segment(layout.d + 1, layout.d); }
double BoundaryCode::sigma() const { return flat[2 * layout.d + 1]; }

std::vector<Obstacle> BoundaryCode::obstacles() const {
    std::vector<Obstacle> out;
    for (int k = 0; k < layout.max_obstacles; ++k) {
        const int base = obstacle_slot_base(layout, k);
        const Vec s = flat.segment(base, layout.slots_per_obstacle());
        // empty slot: size entry holds the sentinel (sizes are strictly positive otherwise)
        if (s[layout.d] == BoundaryLayout::kSentinel) continue;
        Obstacle o;
        o.kind = layout.obstacle_kind;
        o.center = s.head(layout.d);
        if (o.kind == Obstacle::Kind::Circle) {
            o.radius = s[layout.d];
        } else {
            o.ax = s[layout.d];
            o.ay = s[layout.d + 1];
        }
        out.push_back(o);
    }
    return out;
}

Scenario decode(const BoundaryCode& code) {
    Scenario s;
    s.init_mean = code.init_mean();
    s.init_std = code.init_std();
    s.target = code.target();
    s.sigma = code.sigma();
    s.obstacles = code.obstacles();
    require(s.init_std > 0.0, "decode: init_std slot must be > 0");
    require(s.sigma > 0.0, "decode: sigma slot must be > 0");
    return s;
}

// --- problem construction ---

MFGProblem build_crowd_motion(const BoundaryCode& code, int N, double T,
                              double s_safe, double f_in, double congestion_coeff) {
    require(N >= 2, "build_crowd_motion: N must be >= 2");
    require(T > 0.0, "build_crowd_motion: T must be > 0");
    Scenario s = decode(code);
    s.T = T;
    s.N = N;
    s.s_safe = s_safe;
    s.f_in = f_in;

    MFGProblem prob;
    prob.d = code.layout.d;
    prob.T = T;
    prob.N = N;
    prob.sigma = s.sigma;
    prob.mu0_mean = s.init_mean;
    prob.mu0_std = s.init_std;
    prob.scenario = s;

    prob.hamiltonian = hamiltonian_quadratic;
    prob.grad_p_hamiltonian = [](const Vec&, const Vec& p) { return p; };

    const auto obstacles = s.obstacles;
    prob.running_cost = [obstacles, s_safe, f_in, congestion_coeff](
                            const Vec& x, const Mat& mu_samples, double /*t*/) {
        double acc = f_in;
        for (const auto& o : obstacles) acc += obstacle_penalty(x, o, s_safe);
        if (congestion_coeff > 0.0) acc += congestion_coeff * kde_at(x, mu_samples);
        return acc;
    };

    const Vec target = s.target;
    prob.terminal_cost = [target](const Vec& x, const Mat&) {
        return (x - target).squaredNorm();
    };
    prob.grad_terminal = [target](const Vec& x, const Mat&) -> Vec {
        return 2.0 * (x - target);
    };
    const double lap_g = 2.0 * prob.d;
    prob.lap_terminal = [lap_g](const Vec&, const Mat&) { return lap_g; };
    return prob;
}

MFGProblem build_crowd_motion(const Scenario& s) {
    BoundaryLayout layout;
    layout.d = static_cast<int>(s.init_mean.size());
    layout.max_obstacles = std::max<int>(2, static_cast<int>(s.obstacles.size()));
    layout.obstacle_kind = s.obstacles.empty() ? Obstacle::Kind::Circle : s.obstacles[0].kind;
    return build_crowd_motion(encode(s, layout), s.N, s.T, s.s_safe, s.f_in);
}

Box working_box(const Scenario& s) {
    const int d = static_cast<int>(s.init_mean.size());
    Vec lo = s.init_mean.cwiseMin(s.target);
    Vec hi = s.init_mean.cwiseMax(s.target);
    for (const auto& o : s.obstacles) {
        Vec ext(d);
        if (o.kind == Obstacle::Kind::Circle) {
            ext.setConstant(o.radius);
        } else {
            ext[0] = o.ax;
            if (d > 1) ext[1] = o.ay;
        }
        lo = lo.cwiseMin(o.center - ext);
        hi = hi.cwiseMax(o.center + ext);
    }
    const double margin = 6.0 * std::max(s.init_std, s.sigma * std::sqrt(s.T));
    Box box;
    box.lo = lo.array() - margin;
    box.hi = hi.array() + margin;
    return box;
}

// --- scenario JSON ---

namespace {
const std::vector<std::string> kScenarioKeys = {
    "init_mean", "init_std", "target", "obstacles", "sigma", "T", "N", "s_safe", "f_in"};
}

Scenario scenario_from_json(const std::string& text) {
    Json j = Json::parse(text, nullptr, false);
    if (j.is_discarded()) throw InvalidInput("scenario: malformed JSON");
    reject_unknown_keys(j, kScenarioKeys, "scenario");

    Scenario s;
    s.init_mean = json_vec(j, "init_mean", -1, "scenario");
    const int d = static_cast<int>(s.init_mean.size());
    require(d == 1 || d == 2, "scenario: init_mean must have 1 or 2 entries");
    s.init_std = json_number(j, "init_std", "scenario");
    s.target = json_vec(j, "target", d, "scenario");
    s.sigma = json_number(j, "sigma", "scenario");
    s.T = json_number(j, "T", "scenario");
    s.N = json_int(j, "N", "scenario");
    s.s_safe = j.contains("s_safe") ? json_number(j, "s_safe", "scenario") : 0.5;
    s.f_in = j.contains("f_in") ? json_number(j, "f_in", "scenario") : 0.0;

    require(s.init_std > 0.0, "scenario: init_std must be > 0");
    require(s.sigma > 0.0, "scenario: sigma must be > 0");
    require(s.T > 0.0, "scenario: T must be > 0");
    require(s.N >= 2, "scenario: N must be >= 2");
    require(s.s_safe >= 0.0, "scenario: s_safe must be >= 0");

    if (j.contains("obstacles")) {
        const Json& arr = j["obstacles"];
        if (!arr.is_array()) throw InvalidInput("scenario: obstacles must be an array");
        for (const Json& jo : arr) {
            reject_unknown_keys(jo, {"center", "radius", "axes"}, "scenario.obstacles[]");
            const Vec c = json_vec(jo, "center", d, "scenario.obstacles[]");
            if (jo.contains("radius") == jo.contains("axes"))
                throw InvalidInput("scenario.obstacles[]: exactly one of radius/axes required");
            if (jo.contains("radius")) {
                s.obstacles.push_back(Obstacle::circle(c, json_number(jo, "radius", "scenario.obstacles[]")));
            } else {
                const Vec ab = json_vec(jo, "axes", 2, "scenario.obstacles[]");
                s.obstacles.push_back(Obstacle::ellipse(c, ab[0], ab[1]));
            }
        }
    }
    return s;
}

std::string scenario_to_json(const Scenario& s) {
    Json j;
    j["init_mean"] = vec_to_json(s.init_mean);
    j["init_std"] = s.init_std;
    j["target"] = vec_to_json(s.target);
    j["sigma"] = s.sigma;
    j["T"] = s.T;
    j["N"] = s.N;
    j["s_safe"] = s.s_safe;
    j["f_in"] = s.f_in;
    Json arr = Json::array();
    for (const auto& o : s.obstacles) {
        Json jo;
        jo["center"] = vec_to_json(o.center);
        if (o.kind == Obstacle::Kind::Circle)
            jo["radius"] = o.radius;
        else
            jo["axes"] = Json::array({o.ax, o.ay});
        arr.push_back(jo);
    }
    j["obstacles"] = arr;
    return j.dump(2) + "\n";
}

Scenario load_scenario(const std::string& path) { return scenario_from_json(read_text(path)); }

void save_scenario(const Scenario& s, const std::string& path) {
    atomic_write_text(path, scenario_to_json(s));
}

}  // namespace mfgflow
