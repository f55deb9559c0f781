#pragma once

#include "mfgflow/core.hpp"
#include "mfgflow/flow.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mfgflow {

/// RGB raster canvas with a world-to-pixel transform over a box.
class Canvas {
public:
    Canvas(int w, int h, const Box& world);

    void fill(std::uint8_t r, std::uint8_t g, std::uint8_t b);
    void dot(const Vec& x, int radius_px, std::uint8_t r, std::uint8_t g, std::uint8_t b);
    void circle_outline(const Vec& c, double radius, std::uint8_t r, std::uint8_t g,
                        std::uint8_t b);
    void ellipse_outline(const Vec& c, double ax, double ay, std::uint8_t r, std::uint8_t g,
                         std::uint8_t b);
    void cross(const Vec& x, int half_px, std::uint8_t r, std::uint8_t g, std::uint8_t b);

    int width() const { return w_; }
    int height() const { return h_; }
    const std::vector<std::uint8_t>& pixels() const { return px_; }

    /// Copy this canvas into a larger canvas at pixel offset (ox, oy).
    void blit_into(Canvas& dst, int ox, int oy) const;

    void write_png(const std::string& path) const;

private:
    void set(int ix, int iy, std::uint8_t r, std::uint8_t g, std::uint8_t b);
    int px_x(double x) const;
    int px_y(double y) const;

    int w_, h_;
    Box world_;
    std::vector<std::uint8_t> px_;
};

/// Six-panel snapshot grid of agent clouds at time fractions
/// {0, 0.2, 0.4, 0.6, 0.8, 1}: agents transported by the flow, obstacle
/// outlines and the target marker drawn per panel.
void snapshot_grid(const DensityFlow& flow, const Scenario& scenario, int agents,
                   std::uint64_t seed, int panel_px, const std::string& path);

}  // namespace mfgflow
