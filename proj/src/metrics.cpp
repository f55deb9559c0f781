#include "mfgflow/metrics.hpp"

#include "mfgflow/json_io.hpp"

#include <cmath>
#include <unordered_map>

namespace mfgflow {

namespace {

/// Uniform-grid neighbour search; cells of size pair_radius so only the 3^d
/// adjacent cells need checking.
void mark_pair_violations(const Mat& pos, double r, std::vector<char>& violated) {
    const int M = static_cast<int>(pos.cols());
    const int d = static_cast<int>(pos.rows());
    const double inv = 1.0 / r;
    std::unordered_map<std::uint64_t, std::vector<int>> grid;
    grid.reserve(M * 2);
    auto key_of = [&](const Vec& x) {
        std::uint64_t h = 1469598103934665603ULL;
        for (int a = 0; a < d; ++a) {
            const auto c = static_cast<std::int64_t>(std::floor(x[a] * inv));
            h ^= static_cast<std::uint64_t>(c) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        }
        return h;
    };
    std::vector<std::int64_t> cell(M * d);
    for (int j = 0; j < M; ++j) {
        for (int a = 0; a < d; ++a)
            cell[j * d + a] = static_cast<std::int64_t>(std::floor(pos(a, j) * inv));
        grid[key_of(pos.col(j))].push_back(j);
    }
    const double r2 = r * r;
    std::vector<std::int64_t> probe(d);
    for (int j = 0; j < M; ++j) {
        bool hit = false;
        // enumerate neighbour cells
        const int span = d == 1 ? 3 : 9;
        for (int k = 0; k < span && !hit; ++k) {
            probe[0] = cell[j * d] + (k % 3) - 1;
            if (d == 2) probe[1] = cell[j * d + 1] + (k / 3) - 1;
            std::uint64_t h = 1469598103934665603ULL;
            for (int a = 0; a < d; ++a)
                h ^= static_cast<std::uint64_t>(probe[a]) + 0x9e3779b97f4a7c15ULL + (h << 6) +
                     (h >> 2);
            const auto it = grid.find(h);
            if (it == grid.end()) continue;
            for (int other : it->second) {
                if (other == j) continue;
                if ((pos.col(j) - pos.col(other)).squaredNorm() <= r2) {
                    hit = true;
                    break;
                }
            }
        }
        if (hit) violated[j] = 1;
    }
}

}  // namespace

double collision_success_rate(const std::vector<Mat>& trajectories,
                              const std::vector<Obstacle>& obstacles, double pair_radius) {
    require(!trajectories.empty(), "collision_success_rate: empty trajectory set");
    const int M = static_cast<int>(trajectories[0].cols());
    if (M == 0) return 1.0;
    std::vector<char> failed(M, 0);
    for (const Mat& pos : trajectories) {
        require(static_cast<int>(pos.cols()) == M, "collision_success_rate: ragged trajectories");
        require(pos.allFinite(), "collision_success_rate: non-finite position");
        for (int j = 0; j < M; ++j) {
            if (failed[j]) continue;
            for (const auto& o : obstacles)
                if (o.contains(pos.col(j))) {
                    failed[j] = 1;
                    break;
                }
        }
        if (pair_radius > 0) {
            std::vector<char> violated(M, 0);
            mark_pair_violations(pos, pair_radius, violated);
            for (int j = 0; j < M; ++j)
                if (violated[j]) failed[j] = 1;
        }
    }
    int ok = 0;
    for (int j = 0; j < M; ++j) ok += failed[j] ? 0 : 1;
    return static_cast<double>(ok) / M;
}

double volume_invariance(const DensityFlow& flow, const Box& box, int resolution_per_axis,
                         std::vector<double>* per_level) {
    require(resolution_per_axis >= 2, "volume_invariance: resolution too small");
    const int d = box.dim();
    double max_cell = 0.0;
    for (int a = 0; a < d; ++a)
        max_cell = std::max(max_cell, box.side(a) / resolution_per_axis);
    if (max_cell > flow.base_std() / 2.0)
        throw InvalidInput("volume_invariance: resolution too coarse (cell " +
                           std::to_string(max_cell) + " exceeds half the base std " +
                           std::to_string(flow.base_std() / 2.0) + ")");

    int cells = 1;
    for (int a = 0; a < d; ++a) cells *= resolution_per_axis;
    Mat centers(d, cells);
    double vol = 1.0;
    for (int a = 0; a < d; ++a) vol *= box.side(a) / resolution_per_axis;
    for (int i = 0; i < cells; ++i) {
        int rem = i;
        for (int a = 0; a < d; ++a) {
            const int ia = rem % resolution_per_axis;
            rem /= resolution_per_axis;
            centers(a, i) = box.lo[a] + (ia + 0.5) * box.side(a) / resolution_per_axis;
        }
    }

    double worst = 0.0;
    if (per_level) per_level->clear();
    for (int n = 0; n <= flow.steps(); ++n) {
        const double mass = flow.log_density(n, centers).array().exp().sum() * vol;
        const double dev = std::abs(mass - 1.0);
        if (per_level) per_level->push_back(dev);
        worst = std::max(worst, dev);
    }
    return std::log10(std::max(worst, 1e-300));
}

double volume_invariance(const std::vector<Vec>& fields, double cell_volume,
                         std::vector<double>* per_level) {
    require(!fields.empty(), "volume_invariance: no fields");
    double worst = 0.0;
    if (per_level) per_level->clear();
    for (const Vec& f : fields) {
        const double dev = std::abs(f.sum() * cell_volume - 1.0);
        if (per_level) per_level->push_back(dev);
        worst = std::max(worst, dev);
    }
    return std::log10(std::max(worst, 1e-300));
}

void write_metrics_csv(const std::vector<MetricsReport>& rows, double pair_radius,
                       const std::string& path) {
    CsvWriter csv({"scenario", "success_rate", "pair_radius", "volume_diff_log10",
                   "solve_seconds"});
    for (const auto& r : rows)
        csv.add_row({r.scenario_id, CsvWriter::format(r.success_rate),
                     CsvWriter::format(pair_radius), CsvWriter::format(r.volume_diff),
                     CsvWriter::format(r.solve_seconds)});
    csv.write_atomic(path);
}

void write_metrics_json(const std::vector<MetricsReport>& rows, double pair_radius,
                        const std::string& path) {
    Json arr = Json::array();
    for (const auto& r : rows) {
        Json j;
        j["scenario"] = r.scenario_id;
        j["success_rate"] = r.success_rate;
        j["pair_radius"] = pair_radius;
        j["volume_diff_log10"] = r.volume_diff;
        j["solve_seconds"] = r.solve_seconds;
        j["per_level_volume"] = r.per_level_volume;
        arr.push_back(j);
    }
    atomic_write_text(path, arr.dump(2) + "\n");
}

}  // namespace mfgflow
