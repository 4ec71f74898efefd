// Integer rasterization for the synthetic scenes: thick Bresenham strokes,
// filled discs, a fixed 5x7 glyph set for node labels, and the per-task
// renderers. No anti-aliasing anywhere; identical scenes give identical bytes.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "klal/geometry.hpp"
#include "klal/image.hpp"

namespace klal {

struct RasterStyle {
    int stroke_width = 2;
    int node_radius = 2;
    Rgb background = kWhite;
};

inline Rgb stroke_rgb(StrokeColor c) {
    switch (c) {
        case StrokeColor::red: return kRed;
        case StrokeColor::blue: return kBlue;
        case StrokeColor::gray: return kGray;
        case StrokeColor::black: return kBlack;
    }
    return kBlack;
}

namespace detail {

inline void stamp_square(Image& img, int cx, int cy, int width, Rgb c) {
    const int lo = -(width - 1) / 2, hi = width / 2;
    for (int dy = lo; dy <= hi; ++dy)
        for (int dx = lo; dx <= hi; ++dx)
            if (img.in_bounds(cx + dx, cy + dy)) img.set(cx + dx, cy + dy, c);
}

}  // namespace detail

// Bresenham stroke; each line pixel is stamped with a width x width square.
inline void draw_segment(Image& img, Vec2 a, Vec2 b, Rgb c, int width) {
    int x0 = static_cast<int>(std::floor(a.x)), y0 = static_cast<int>(std::floor(a.y));
    const int x1 = static_cast<int>(std::floor(b.x)), y1 = static_cast<int>(std::floor(b.y));
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        detail::stamp_square(img, x0, y0, width, c);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

inline void draw_polyline(Image& img, const Polyline& poly, int width) {
    const Rgb c = stroke_rgb(poly.color);
    for (size_t i = 0; i + 1 < poly.vertices.size(); ++i)
        draw_segment(img, poly.vertices[i], poly.vertices[i + 1], c, width);
}

inline void draw_disc(Image& img, Vec2 center, int radius, Rgb c) {
    const int cx = static_cast<int>(std::floor(center.x));
    const int cy = static_cast<int>(std::floor(center.y));
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius && img.in_bounds(cx + dx, cy + dy))
                img.set(cx + dx, cy + dy, c);
}

// 5x7 bitmap glyphs, rows top-to-bottom, 5 bits each (MSB = leftmost).
inline const std::array<uint8_t, 7>& glyph_5x7(char ch) {
    static const std::array<uint8_t, 7> glyphs[] = {
        {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // A
        {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},  // B
        {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},  // C
        {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E},  // D
        {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},  // E
        {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},  // F
        {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F},  // G
    };
    if (ch < 'A' || ch > 'G') throw std::invalid_argument("glyph_5x7: unsupported char");
    return glyphs[ch - 'A'];
}

inline void draw_glyph(Image& img, int left, int top, char ch, Rgb c) {
    const auto& rows = glyph_5x7(ch);
    for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 5; ++col)
            if ((rows[static_cast<size_t>(r)] >> (4 - col)) & 1)
                if (img.in_bounds(left + col, top + r)) img.set(left + col, top + r, c);
}

// --- task renderers -----------------------------------------------------------

inline Image render_line_pair(const Polyline& red, const Polyline& blue, int width, int height,
                              const RasterStyle& style = {}) {
    Image img(width, height, style.background);
    draw_polyline(img, red, style.stroke_width);
    draw_polyline(img, blue, style.stroke_width);
    return img;
}

inline Image render_graph_scene(const GraphScene& scene, const RasterStyle& style = {}) {
    Image img(scene.width, scene.height, style.background);
    for (const Polyline& e : scene.edges) draw_polyline(img, e, style.stroke_width);
    for (const GraphNode& n : scene.nodes) {
        draw_disc(img, n.center, style.node_radius, kBlack);
        // label above the marker when it fits, otherwise below
        const int cx = static_cast<int>(std::floor(n.center.x));
        const int cy = static_cast<int>(std::floor(n.center.y));
        const int left = std::clamp(cx - 2, 0, scene.width - 5);
        const int top = cy - style.node_radius - 9 >= 0 ? cy - style.node_radius - 9
                                                        : cy + style.node_radius + 3;
        draw_glyph(img, left, std::clamp(top, 0, scene.height - 7), n.label, kBlack);
    }
    return img;
}

// Grid with gray separator lines and one cell filled red.
inline Image render_grid_patch(const PatchGrid& grid, int cell, const RasterStyle& style = {}) {
    Image img(grid.image_w, grid.image_h, style.background);
    for (int k = 1; k < grid.cols(); ++k)
        for (int y = 0; y < grid.image_h; ++y) img.set(k * grid.patch, y, kGray);
    for (int k = 1; k < grid.rows(); ++k)
        for (int x = 0; x < grid.image_w; ++x) img.set(x, k * grid.patch, kGray);
    const int r0 = grid.row_of(cell) * grid.patch, c0 = grid.col_of(cell) * grid.patch;
    for (int y = r0; y < r0 + grid.patch; ++y)
        for (int x = c0; x < c0 + grid.patch; ++x) img.set(x, y, kRed);
    return img;
}

}  // namespace klal
