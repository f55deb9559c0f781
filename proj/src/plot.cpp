#include "mfgflow/plot.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

namespace mfgflow {

Canvas::Canvas(int w, int h, const Box& world) : w_(w), h_(h), world_(world) {
    require(world.dim() == 2, "Canvas: 2D boxes only");
    px_.assign(static_cast<std::size_t>(w) * h * 3, 255);
}

void Canvas::fill(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (int i = 0; i < w_ * h_; ++i) {
        px_[3 * i] = r;
        px_[3 * i + 1] = g;
        px_[3 * i + 2] = b;
    }
}

int Canvas::px_x(double x) const {
    return static_cast<int>(std::lround((x - world_.lo[0]) / world_.side(0) * (w_ - 1)));
}

int Canvas::px_y(double y) const {
    // world y grows upward, raster y grows downward
    return static_cast<int>(std::lround((world_.hi[1] - y) / world_.side(1) * (h_ - 1)));
}

void Canvas::set(int ix, int iy, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (ix < 0 || iy < 0 || ix >= w_ || iy >= h_) return;
    const std::size_t i = (static_cast<std::size_t>(iy) * w_ + ix) * 3;
    px_[i] = r;
    px_[i + 1] = g;
    px_[i + 2] = b;
}

void Canvas::dot(const Vec& x, int radius_px, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const int cx = px_x(x[0]), cy = px_y(x[1]);
    for (int dy = -radius_px; dy <= radius_px; ++dy)
        for (int dx = -radius_px; dx <= radius_px; ++dx)
            if (dx * dx + dy * dy <= radius_px * radius_px) set(cx + dx, cy + dy, r, g, b);
}

void Canvas::circle_outline(const Vec& c, double radius, std::uint8_t r, std::uint8_t g,
                            std::uint8_t b) {
    ellipse_outline(c, radius, radius, r, g, b);
}

void Canvas::ellipse_outline(const Vec& c, double ax, double ay, std::uint8_t r, std::uint8_t g,
                             std::uint8_t b) {
    const int steps = 720;
    for (int k = 0; k < steps; ++k) {
        const double th = 2.0 * M_PI * k / steps;
        set(px_x(c[0] + ax * std::cos(th)), px_y(c[1] + ay * std::sin(th)), r, g, b);
    }
}

void Canvas::cross(const Vec& x, int half_px, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const int cx = px_x(x[0]), cy = px_y(x[1]);
    for (int k = -half_px; k <= half_px; ++k) {
        set(cx + k, cy, r, g, b);
        set(cx, cy + k, r, g, b);
    }
}

void Canvas::blit_into(Canvas& dst, int ox, int oy) const {
    for (int y = 0; y < h_; ++y)
        for (int x = 0; x < w_; ++x) {
            const std::size_t s = (static_cast<std::size_t>(y) * w_ + x) * 3;
            dst.set(ox + x, oy + y, px_[s], px_[s + 1], px_[s + 2]);
        }
}

void Canvas::write_png(const std::string& path) const {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const std::string tmp = path + ".tmp";
    FILE* fp = std::fopen(tmp.c_str(), "wb");
    if (!fp) throw RuntimeFailure("cannot open for writing: " + tmp);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw RuntimeFailure("png encoding failed for " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, w_, h_, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h_; ++y)
        png_write_row(png, const_cast<png_bytep>(px_.data() + static_cast<std::size_t>(y) * w_ * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);

    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw RuntimeFailure("rename failed for " + path + ": " + ec.message());
}

void snapshot_grid(const DensityFlow& flow, const Scenario& scenario, int agents,
                   std::uint64_t seed, int panel_px, const std::string& path) {
    require(flow.dim() == 2, "snapshot_grid: 2D flows only");
    const Box box = working_box(scenario);
    const int margin = 4;
    const int cols = 3, rows = 2;
    Canvas sheet(cols * panel_px + (cols + 1) * margin, rows * panel_px + (rows + 1) * margin, box);
    sheet.fill(235, 235, 235);

    const std::vector<Mat> levels = flow.push_all(flow.sample_base(agents, seed));
    const double fracs[6] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    for (int p = 0; p < 6; ++p) {
        const int n = static_cast<int>(std::lround(fracs[p] * flow.steps()));
        Canvas panel(panel_px, panel_px, box);
        for (const auto& o : scenario.obstacles) {
            if (o.kind == Obstacle::Kind::Circle)
                panel.circle_outline(o.center, o.radius, 180, 60, 60);
            else
                panel.ellipse_outline(o.center, o.ax, o.ay, 180, 60, 60);
        }
        panel.cross(scenario.target, 5, 30, 140, 30);
        for (int j = 0; j < agents; ++j) panel.dot(levels[n].col(j), 1, 35, 60, 160);
        const int ox = margin + (p % cols) * (panel_px + margin);
        const int oy = margin + (p / cols) * (panel_px + margin);
        panel.blit_into(sheet, ox, oy);
    }
    sheet.write_png(path);
}

}  // namespace mfgflow
