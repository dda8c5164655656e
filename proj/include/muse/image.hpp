#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "muse/common.hpp"

namespace muse {

// Canonical image interchange format: HWC, floats in [0, 1].
struct Image {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<Real> px;  // h * w * c, row-major

    Image() = default;
    Image(int height, int width, int channels, Real fill = 0.0)
        : h(height), w(width), c(channels), px(static_cast<std::size_t>(height) * width * channels, fill) {}

    Real& at(int y, int x, int ch) {
        return px[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    Real at(int y, int x, int ch) const {
        return px[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }

    bool valid() const {
        if (h <= 0 || w <= 0 || (c != 1 && c != 3)) return false;
        if (px.size() != static_cast<std::size_t>(h) * w * c) return false;
        for (Real v : px)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void require_image(const Image& img, const std::string& who) {
    if (!img.valid()) throw shape_error(who + ": input is not a valid HxWx{1,3} image in [0,1]");
}

// Box-filter resample; exact mean pooling when sizes divide evenly.
inline Image resample_box(const Image& src, int oh, int ow) {
    require_image(src, "resample_box");
    require(oh > 0 && ow > 0, "resample_box: target dims must be positive");
    Image out(oh, ow, src.c);
    for (int y = 0; y < oh; ++y) {
        const int y0 = static_cast<int>(static_cast<long long>(y) * src.h / oh);
        const int y1 = std::max(y0 + 1, static_cast<int>(static_cast<long long>(y + 1) * src.h / oh));
        for (int x = 0; x < ow; ++x) {
            const int x0 = static_cast<int>(static_cast<long long>(x) * src.w / ow);
            const int x1 = std::max(x0 + 1, static_cast<int>(static_cast<long long>(x + 1) * src.w / ow));
            for (int ch = 0; ch < src.c; ++ch) {
                Real acc = 0.0;
                for (int yy = y0; yy < y1; ++yy)
                    for (int xx = x0; xx < x1; ++xx) acc += src.at(yy, xx, ch);
                out.at(y, x, ch) = acc / (static_cast<Real>(y1 - y0) * (x1 - x0));
            }
        }
    }
    return out;
}

inline Image to_gray(const Image& src) {
    if (src.c == 1) return src;
    Image out(src.h, src.w, 1);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            out.at(y, x, 0) = 0.299 * src.at(y, x, 0) + 0.587 * src.at(y, x, 1) + 0.114 * src.at(y, x, 2);
    return out;
}

// Content hash over quantized pixels; used as the caption-cache key.
inline std::uint64_t image_hash(const Image& img) {
    std::vector<unsigned char> bytes;
    bytes.reserve(img.px.size() + 12);
    auto push32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
    };
    push32(static_cast<std::uint32_t>(img.h));
    push32(static_cast<std::uint32_t>(img.w));
    push32(static_cast<std::uint32_t>(img.c));
    for (Real v : img.px) {
        const Real cl = std::clamp(v, 0.0, 1.0);
        bytes.push_back(static_cast<unsigned char>(std::lround(cl * 255.0)));
    }
    return fnv1a(bytes.data(), bytes.size());
}

namespace detail {

struct PngCloser {
    std::FILE* f = nullptr;
    ~PngCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
    require_image(img, "write_png");
    detail::PngCloser file;
    file.f = std::fopen(path.string().c_str(), "wb");
    require(file.f != nullptr, "write_png: cannot open " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, "write_png: png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw error("write_png: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw error("write_png: libpng failure for " + path.string());
    }
    png_init_io(png, file.f);
    const int color = img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<std::size_t>(img.w) * img.c);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) {
                const Real v = std::clamp(img.at(y, x, ch), 0.0, 1.0);
                row[static_cast<std::size_t>(x) * img.c + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Image read_png(const std::filesystem::path& path) {
    detail::PngCloser file;
    file.f = std::fopen(path.string().c_str(), "rb");
    require(file.f != nullptr, "read_png: cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, "read_png: png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw error("read_png: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw error("read_png: libpng failure for " + path.string());
    }
    png_init_io(png, file.f);
    png_read_info(png, info);

    // Normalize everything to 8-bit gray or RGB.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int c = static_cast<int>(png_get_channels(png, info));
    if (c != 1 && c != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw shape_error("read_png: unsupported channel count in " + path.string());
    }

    Image img(h, w, c);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                img.at(y, x, ch) = static_cast<Real>(row[static_cast<std::size_t>(x) * c + ch]) / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace muse
