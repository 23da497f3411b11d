#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "stsk/boxes.hpp"
#include "stsk/errors.hpp"
#include "stsk/tensor.hpp"

namespace stsk::img {

// RGB frame, H x W x 3, values in [0,1].
struct ImageFrame {
    Tensor pixels;
    std::size_t frame_index = 0;

    ImageFrame() = default;
    ImageFrame(std::size_t h, std::size_t w, std::size_t index = 0)
        : pixels(Tensor({h, w, 3})), frame_index(index) {}

    std::size_t height() const { return pixels.dim(0); }
    std::size_t width() const { return pixels.dim(1); }
    double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels(y, x, c); }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels(y, x, c); }
};

// Crop policy: how much context around the target and the output resolution.
// Template crops use 2^2 x target area, search crops 4^2.
struct CropSpec {
    double area_factor = 16.0;
    std::size_t out_size = 128;
};

// Realized crop geometry; needed to map head outputs back to frame pixels.
struct CropWindow {
    double cx = 0.0, cy = 0.0;
    double side = 0.0;
    std::size_t out_size = 0;

    double scale() const { return side / static_cast<double>(out_size); }

    // crop-pixel coords -> frame coords
    box::Box to_frame(const box::Box& b) const {
        const double s = scale();
        const double x0 = cx - 0.5 * side;
        const double y0 = cy - 0.5 * side;
        return {x0 + b.x * s, y0 + b.y * s, b.w * s, b.h * s};
    }

    // frame coords -> crop-pixel coords
    box::Box to_crop(const box::Box& b) const {
        const double s = scale();
        const double x0 = cx - 0.5 * side;
        const double y0 = cy - 0.5 * side;
        return {(b.x - x0) / s, (b.y - y0) / s, b.w / s, b.h / s};
    }
};

inline CropWindow make_window(const box::Box& b, const CropSpec& spec) {
    if (b.degenerate()) throw InvalidAnnotationError("crop reference box has w or h <= 0");
    CropWindow w;
    w.cx = b.cx();
    w.cy = b.cy();
    w.side = std::sqrt(spec.area_factor * b.w * b.h);
    w.out_size = spec.out_size;
    return w;
}

// Mean of the source pixels whose centers fall inside the crop rectangle.
// Falls back to the whole-image mean when the crop lies entirely outside.
inline void crop_mean(const ImageFrame& f, const CropWindow& w, double mean[3]) {
    const long x0 = static_cast<long>(std::floor(w.cx - 0.5 * w.side + 0.5));
    const long y0 = static_cast<long>(std::floor(w.cy - 0.5 * w.side + 0.5));
    const long x1 = static_cast<long>(std::ceil(w.cx + 0.5 * w.side - 0.5));
    const long y1 = static_cast<long>(std::ceil(w.cy + 0.5 * w.side - 0.5));
    const long bx0 = std::max(0L, x0), by0 = std::max(0L, y0);
    const long bx1 = std::min(static_cast<long>(f.width()) - 1, x1);
    const long by1 = std::min(static_cast<long>(f.height()) - 1, y1);
    double acc[3] = {0, 0, 0};
    long count = 0;
    for (long y = by0; y <= by1; ++y)
        for (long x = bx0; x <= bx1; ++x) {
            for (int c = 0; c < 3; ++c) acc[c] += f.at(y, x, c);
            ++count;
        }
    if (count == 0) {
        for (std::size_t y = 0; y < f.height(); ++y)
            for (std::size_t x = 0; x < f.width(); ++x)
                for (int c = 0; c < 3; ++c) acc[c] += f.at(y, x, c);
        count = static_cast<long>(f.height() * f.width());
    }
    for (int c = 0; c < 3; ++c) mean[c] = count > 0 ? acc[c] / count : 0.0;
}

// Bilinear sample at a continuous point; texels outside the image read as the
// padding value (per-channel crop mean).
inline double sample_bilinear(const ImageFrame& f, double sx, double sy, int c, double pad) {
    const double u = sx - 0.5, v = sy - 0.5;
    const long x0 = static_cast<long>(std::floor(u));
    const long y0 = static_cast<long>(std::floor(v));
    const double fx = u - x0, fy = v - y0;
    auto texel = [&](long x, long y) -> double {
        if (x < 0 || y < 0 || x >= static_cast<long>(f.width()) ||
            y >= static_cast<long>(f.height()))
            return pad;
        return f.at(y, x, c);
    };
    const double a = texel(x0, y0) * (1 - fx) + texel(x0 + 1, y0) * fx;
    const double b = texel(x0, y0 + 1) * (1 - fx) + texel(x0 + 1, y0 + 1) * fx;
    return a * (1 - fy) + b * fy;
}

struct CropResult {
    ImageFrame image;
    CropWindow window;
};

// Square crop centered on the box, side sqrt(area_factor * w * h), bilinearly
// resized to spec.out_size; out-of-image regions padded with the per-channel
// crop mean.
inline CropResult crop_and_resize(const ImageFrame& frame, const box::Box& b,
                                  const CropSpec& spec) {
    const CropWindow w = make_window(b, spec);
    double mean[3];
    crop_mean(frame, w, mean);
    CropResult r;
    r.window = w;
    r.image = ImageFrame(spec.out_size, spec.out_size, frame.frame_index);
    const double s = w.scale();
    const double x0 = w.cx - 0.5 * w.side;
    const double y0 = w.cy - 0.5 * w.side;
    for (std::size_t oy = 0; oy < spec.out_size; ++oy) {
        const double sy = y0 + (oy + 0.5) * s;
        for (std::size_t ox = 0; ox < spec.out_size; ++ox) {
            const double sx = x0 + (ox + 0.5) * s;
            for (int c = 0; c < 3; ++c)
                r.image.at(oy, ox, c) = sample_bilinear(frame, sx, sy, c, mean[c]);
        }
    }
    return r;
}

}  // namespace stsk::img
