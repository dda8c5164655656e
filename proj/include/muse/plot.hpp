#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "muse/common.hpp"
#include "muse/image.hpp"

// Minimal raster plotting: box plots and scatter plots rendered straight to
// PNG. Labels use a 3x5 bitmap font (digits, upper-case, '-', '.').
namespace muse::plot {

struct Color {
    unsigned char r = 0, g = 0, b = 0;
};

inline Color palette(std::size_t i) {
    static const std::array<Color, 8> colors = {{{31, 119, 180},
                                                 {255, 127, 14},
                                                 {44, 160, 44},
                                                 {214, 39, 40},
                                                 {148, 103, 189},
                                                 {140, 86, 75},
                                                 {227, 119, 194},
                                                 {127, 127, 127}}};
    return colors[i % colors.size()];
}

namespace detail {

// 3x5 glyphs, 3 bits per row from the top; index via glyph_index()
inline std::uint16_t glyph_bits(char c) {
    static const std::uint16_t digits[10] = {
        0b111101101101111, 0b010110010010111, 0b111001111100111, 0b111001111001111, 0b101101111001001,
        0b111100111001111, 0b111100111101111, 0b111001001010010, 0b111101111101111, 0b111101111001111,
    };
    static const std::uint16_t letters[26] = {
        0b010101111101101,  // A
        0b110101110101110,  // B
        0b011100100100011,  // C
        0b110101101101110,  // D
        0b111100110100111,  // E
        0b111100110100100,  // F
        0b011100101101011,  // G
        0b101101111101101,  // H
        0b111010010010111,  // I
        0b001001001101010,  // J
        0b101110100110101,  // K
        0b100100100100111,  // L
        0b101111111101101,  // M
        0b101111111111101,  // N
        0b010101101101010,  // O
        0b110101110100100,  // P
        0b010101101010001,  // Q
        0b110101110110101,  // R
        0b011100010001110,  // S
        0b111010010010010,  // T
        0b101101101101111,  // U
        0b101101101101010,  // V
        0b101101111111101,  // W
        0b101101010101101,  // X
        0b101101010010010,  // Y
        0b111001010100111,  // Z
    };
    if (c >= '0' && c <= '9') return digits[c - '0'];
    if (c >= 'A' && c <= 'Z') return letters[c - 'A'];
    if (c >= 'a' && c <= 'z') return letters[c - 'a'];
    if (c == '-') return 0b000000111000000;
    if (c == '.') return 0b000000000000010;
    if (c == '_') return 0b000000000000111;
    return 0;
}

}  // namespace detail

class Canvas {
public:
    Canvas(int w, int h) : w_(w), h_(h), img_(h, w, 3, 1.0) {}

    void set(int x, int y, Color c) {
        if (x < 0 || x >= w_ || y < 0 || y >= h_) return;
        img_.at(y, x, 0) = c.r / 255.0;
        img_.at(y, x, 1) = c.g / 255.0;
        img_.at(y, x, 2) = c.b / 255.0;
    }

    void fill_rect(int x0, int y0, int x1, int y1, Color c) {
        for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
            for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
    }

    void line(int x0, int y0, int x1, int y1, Color c) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, c);
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

    void dot(int x, int y, int radius, Color c) {
        for (int yy = -radius; yy <= radius; ++yy)
            for (int xx = -radius; xx <= radius; ++xx)
                if (xx * xx + yy * yy <= radius * radius) set(x + xx, y + yy, c);
    }

    void text(int x, int y, const std::string& s, Color c, int scale = 1) {
        int cx = x;
        for (char ch : s) {
            const std::uint16_t bits = detail::glyph_bits(ch);
            for (int row = 0; row < 5; ++row)
                for (int col = 0; col < 3; ++col)
                    if (bits >> ((4 - row) * 3 + (2 - col)) & 1)
                        fill_rect(cx + col * scale, y + row * scale, cx + col * scale + scale - 1,
                                  y + row * scale + scale - 1, c);
            cx += 4 * scale;
        }
    }

    void save(const std::filesystem::path& path) const { write_png(path, img_); }

    int width() const { return w_; }
    int height() const { return h_; }

private:
    int w_, h_;
    Image img_;
};

struct Quartiles {
    Real min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

inline Quartiles quartiles(std::vector<Real> v) {
    require(!v.empty(), "quartiles: empty data");
    std::sort(v.begin(), v.end());
    auto q = [&](Real p) {
        const Real pos = p * (static_cast<Real>(v.size()) - 1.0);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, v.size() - 1);
        const Real frac = pos - static_cast<Real>(lo);
        return v[lo] * (1.0 - frac) + v[hi] * frac;
    };
    return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

// One box per named group.
inline void box_plot_png(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, std::vector<Real>>>& groups,
                         const std::string& title = "") {
    require(!groups.empty(), "box_plot_png: no groups");
    Real lo = 1e300, hi = -1e300;
    std::vector<Quartiles> qs;
    for (const auto& [name, vals] : groups) {
        qs.push_back(quartiles(vals));
        lo = std::min(lo, qs.back().min);
        hi = std::max(hi, qs.back().max);
    }
    if (hi <= lo) hi = lo + 1.0;

    const int W = std::max(320, 90 * static_cast<int>(groups.size()) + 60);
    const int H = 260;
    const int top = 30, bottom = 40, left = 40;
    Canvas cv(W, H);
    auto ymap = [&](Real v) { return top + static_cast<int>((hi - v) / (hi - lo) * (H - top - bottom)); };

    cv.text(8, 8, title, {0, 0, 0});
    cv.line(left - 8, ymap(hi), left - 8, ymap(lo), {0, 0, 0});
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", hi);
    cv.text(2, ymap(hi), buf, {0, 0, 0});
    std::snprintf(buf, sizeof(buf), "%.2f", lo);
    cv.text(2, ymap(lo) - 6, buf, {0, 0, 0});

    for (std::size_t g = 0; g < groups.size(); ++g) {
        const int cx = left + 30 + static_cast<int>(g) * 90;
        const Color c = palette(g);
        const auto& q = qs[g];
        cv.line(cx, ymap(q.min), cx, ymap(q.q1), c);
        cv.line(cx, ymap(q.q3), cx, ymap(q.max), c);
        cv.fill_rect(cx - 18, ymap(q.q3), cx + 18, ymap(q.q1), {230, 230, 230});
        cv.line(cx - 18, ymap(q.q1), cx + 18, ymap(q.q1), c);
        cv.line(cx - 18, ymap(q.q3), cx + 18, ymap(q.q3), c);
        cv.line(cx - 18, ymap(q.median), cx + 18, ymap(q.median), {0, 0, 0});
        cv.line(cx - 18, ymap(q.q1), cx - 18, ymap(q.q3), c);
        cv.line(cx + 18, ymap(q.q1), cx + 18, ymap(q.q3), c);
        cv.text(cx - 18, H - bottom + 10, groups[g].first.substr(0, 10), c);
    }
    cv.save(path);
}

struct ScatterPoint {
    Real x = 0, y = 0;
    std::size_t group = 0;
};

inline void scatter_png(const std::filesystem::path& path, const std::vector<ScatterPoint>& points,
                        const std::vector<std::string>& group_names, const std::string& title = "") {
    require(!points.empty(), "scatter_png: no points");
    Real xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (const auto& p : points) {
        xlo = std::min(xlo, p.x);
        xhi = std::max(xhi, p.x);
        ylo = std::min(ylo, p.y);
        yhi = std::max(yhi, p.y);
    }
    if (xhi <= xlo) xhi = xlo + 1.0;
    if (yhi <= ylo) yhi = ylo + 1.0;

    const int W = 480, H = 400, margin = 30;
    Canvas cv(W, H);
    cv.text(8, 8, title, {0, 0, 0});
    for (const auto& p : points) {
        const int x = margin + static_cast<int>((p.x - xlo) / (xhi - xlo) * (W - 2 * margin));
        const int y = H - margin - static_cast<int>((p.y - ylo) / (yhi - ylo) * (H - 2 * margin - 20));
        cv.dot(x, y, 2, palette(p.group));
    }
    for (std::size_t g = 0; g < group_names.size(); ++g) {
        const int y = 20 + static_cast<int>(g) * 10;
        cv.dot(W - 120, y + 2, 2, palette(g));
        cv.text(W - 112, y, group_names[g].substr(0, 14), palette(g));
    }
    cv.save(path);
}

}  // namespace muse::plot
