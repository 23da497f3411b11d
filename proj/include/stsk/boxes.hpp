#pragma once

#include <algorithm>
#include <cmath>

namespace stsk::box {

// Axis-aligned box, top-left + size, pixels.
struct Box {
    double x = 0.0, y = 0.0, w = 0.0, h = 0.0;

    double x2() const { return x + w; }
    double y2() const { return y + h; }
    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    double area() const { return w * h; }
    bool degenerate() const { return !(w > 0.0) || !(h > 0.0); }
};

inline double intersection_area(const Box& a, const Box& b) {
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    return iw * ih;
}

// Zero-area boxes score 0 against anything.
inline double iou(const Box& a, const Box& b) {
    if (a.area() <= 0.0 || b.area() <= 0.0) return 0.0;
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// GIoU = IoU - |hull \ union| / |hull|, in (-1, 1]
inline double giou(const Box& a, const Box& b) {
    const double i = iou(a, b);
    const double hw = std::max(a.x2(), b.x2()) - std::min(a.x, b.x);
    const double hh = std::max(a.y2(), b.y2()) - std::min(a.y, b.y);
    const double hull = hw * hh;
    if (hull <= 0.0) return i;
    const double uni = a.area() + b.area() - intersection_area(a, b);
    return i - (hull - uni) / hull;
}

// Complete IoU: overlap penalized by center distance and aspect-ratio
// mismatch. cIoU = IoU - rho^2/c^2 - alpha v.
inline double ciou(const Box& a, const Box& b) {
    const double i = iou(a, b);
    const double hw = std::max(a.x2(), b.x2()) - std::min(a.x, b.x);
    const double hh = std::max(a.y2(), b.y2()) - std::min(a.y, b.y);
    const double c2 = hw * hw + hh * hh;
    const double dx = a.cx() - b.cx();
    const double dy = a.cy() - b.cy();
    const double rho2 = dx * dx + dy * dy;
    double term = 0.0;
    if (c2 > 0.0) term = rho2 / c2;
    double v = 0.0;
    if (a.h > 0.0 && b.h > 0.0) {
        const double d = std::atan(b.w / b.h) - std::atan(a.w / a.h);
        v = 4.0 / (M_PI * M_PI) * d * d;
    }
    double alpha_v = 0.0;
    if (v > 0.0) alpha_v = v * v / ((1.0 - i) + v);
    return i - term - alpha_v;
}

inline double center_error(const Box& a, const Box& b) {
    const double dx = a.cx() - b.cx();
    const double dy = a.cy() - b.cy();
    return std::sqrt(dx * dx + dy * dy);
}

// Center error with per-axis normalization by the reference (ground-truth)
// box size.
inline double normalized_center_error(const Box& pred, const Box& gt) {
    const double dx = (pred.cx() - gt.cx()) / gt.w;
    const double dy = (pred.cy() - gt.cy()) / gt.h;
    return std::sqrt(dx * dx + dy * dy);
}

inline Box clip_to_frame(const Box& b, double frame_w, double frame_h) {
    const double x1 = std::clamp(b.x, 0.0, frame_w);
    const double y1 = std::clamp(b.y, 0.0, frame_h);
    const double x2 = std::clamp(b.x2(), 0.0, frame_w);
    const double y2 = std::clamp(b.y2(), 0.0, frame_h);
    return {x1, y1, std::max(0.0, x2 - x1), std::max(0.0, y2 - y1)};
}

}  // namespace stsk::box
