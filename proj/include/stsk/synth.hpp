#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "stsk/eval.hpp"
#include "stsk/image.hpp"
#include "stsk/png_io.hpp"
#include "stsk/rng.hpp"
#include "stsk/train.hpp"

namespace stsk::synth {

// Kinematics and scene recipe for one sequence. All randomness is driven by
// `seed`; identical specs produce byte-identical output directories.
struct MotionSpec {
    std::size_t frame_w = 256, frame_h = 256;
    std::size_t length = 60;
    std::uint64_t seed = 0;

    double target_x = 128.0, target_y = 128.0;  // initial center, px
    double target_vx = 1.0, target_vy = 0.5;    // px / frame
    double target_accel_sigma = 0.08;
    double target_w = 16.0, target_h = 12.0;
    double target_contrast = 0.85;        // target gray level at sequence start
    double target_contrast_drift = 0.0;   // added linearly by the last frame

    double camera_vx = 0.0, camera_vy = 0.0;
    double camera_jitter_sigma = 0.0;
    double zoom_rate = 0.0;  // multiplicative per frame

    std::size_t distractors = 0;
    double distractor_speed = 3.0;   // crossing speed at the target, px / frame
    double distractor_orbit = 40.0;  // oscillation amplitude around the target

    double brightness_amplitude = 0.0;  // sinusoidal global offset (IV driver)
    double noise_scale = 16.0;          // background value-noise cell size, px

    std::string color = "gray";         // or "auto" for a seeded palette pick
    std::string background = "farmland";
};

// ---------------------------------------------------------------------------
// key=value config files
// ---------------------------------------------------------------------------

inline MotionSpec parse_motion_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open spec file: " + path.string());
    MotionSpec s;
    std::map<std::string, std::function<void(const std::string&)>> setters;
    auto num = [](double& field) {
        return [&field](const std::string& v) { field = std::stod(v); };
    };
    auto szt = [](std::size_t& field) {
        return [&field](const std::string& v) { field = static_cast<std::size_t>(std::stoul(v)); };
    };
    auto str = [](std::string& field) {
        return [&field](const std::string& v) { field = v; };
    };
    setters["frame_w"] = szt(s.frame_w);
    setters["frame_h"] = szt(s.frame_h);
    setters["length"] = szt(s.length);
    setters["seed"] = [&s](const std::string& v) { s.seed = std::stoull(v); };
    setters["target_x"] = num(s.target_x);
    setters["target_y"] = num(s.target_y);
    setters["target_vx"] = num(s.target_vx);
    setters["target_vy"] = num(s.target_vy);
    setters["target_accel_sigma"] = num(s.target_accel_sigma);
    setters["target_w"] = num(s.target_w);
    setters["target_h"] = num(s.target_h);
    setters["target_contrast"] = num(s.target_contrast);
    setters["target_contrast_drift"] = num(s.target_contrast_drift);
    setters["camera_vx"] = num(s.camera_vx);
    setters["camera_vy"] = num(s.camera_vy);
    setters["camera_jitter_sigma"] = num(s.camera_jitter_sigma);
    setters["zoom_rate"] = num(s.zoom_rate);
    setters["distractors"] = szt(s.distractors);
    setters["distractor_speed"] = num(s.distractor_speed);
    setters["distractor_orbit"] = num(s.distractor_orbit);
    setters["brightness_amplitude"] = num(s.brightness_amplitude);
    setters["noise_scale"] = num(s.noise_scale);
    setters["color"] = str(s.color);
    setters["background"] = str(s.background);

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string trimmed;
        for (char c : line)
            if (!std::isspace(static_cast<unsigned char>(c))) trimmed.push_back(c);
        if (trimmed.empty() || trimmed[0] == '#') continue;
        const std::size_t eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": expected key=value");
        const std::string key = trimmed.substr(0, eq);
        const std::string val = trimmed.substr(eq + 1);
        const auto it = setters.find(key);
        if (it == setters.end())
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": unknown key '" +
                             key + "'");
        try {
            it->second(val);
        } catch (const std::exception&) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad value '" +
                             val + "'");
        }
    }
    if (s.length < 2) throw ParseError(path.string() + ": length must be >= 2");
    if (s.target_accel_sigma < 0.0 || s.camera_jitter_sigma < 0.0)
        throw ParseError(path.string() + ": noise sigmas must be >= 0");
    return s;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct FrameState {
    box::Box target;  // camera coordinates (frame pixels), unclipped
    bool visible = true;
    std::vector<box::Box> distractors;
    double brightness_offset = 0.0;
    double contrast = 0.85;
    double camera_x = 0.0, camera_y = 0.0;  // world offset of the camera
};

struct Trajectory {
    std::vector<FrameState> frames;
    MotionSpec spec;
};

namespace detail {

inline bool fully_outside(const box::Box& b, double w, double h) {
    return b.x2() <= 0.0 || b.y2() <= 0.0 || b.x >= w || b.y >= h;
}

struct DistractorPath {
    double dir_x, dir_y;  // oscillation axis through the target
    double phase;
    double omega;
};

}  // namespace detail

inline Trajectory simulate(const MotionSpec& spec) {
    if (spec.length < 2) throw InvalidParamError("sequence length must be >= 2");
    Trajectory tr;
    tr.spec = spec;
    Rng rng(hash_mix(spec.seed, 0x73696dULL));

    std::vector<detail::DistractorPath> paths;
    for (std::size_t i = 0; i < spec.distractors; ++i) {
        const double ang = rng.uniform(0.0, 2.0 * M_PI);
        detail::DistractorPath p;
        p.dir_x = std::cos(ang);
        p.dir_y = std::sin(ang);
        p.phase = rng.uniform(0.0, 2.0 * M_PI);
        p.omega = spec.distractor_orbit > 0.0 ? spec.distractor_speed / spec.distractor_orbit
                                              : 0.0;
        paths.push_back(p);
    }

    double px = spec.target_x, py = spec.target_y;
    double vx = spec.target_vx, vy = spec.target_vy;
    double qx = 0.0, qy = 0.0;
    double zoom = 1.0;
    const double fcx = spec.frame_w / 2.0, fcy = spec.frame_h / 2.0;

    for (std::size_t t = 0; t < spec.length; ++t) {
        FrameState fs;
        fs.camera_x = qx;
        fs.camera_y = qy;
        fs.contrast =
            spec.target_contrast +
            spec.target_contrast_drift * static_cast<double>(t) /
                static_cast<double>(spec.length - 1);
        fs.brightness_offset =
            spec.brightness_amplitude *
            std::sin(4.0 * M_PI * static_cast<double>(t) / static_cast<double>(spec.length));

        auto world_to_cam = [&](double wx, double wy, double bw, double bh) {
            const double cx = (wx - qx - fcx) * zoom + fcx;
            const double cy = (wy - qy - fcy) * zoom + fcy;
            return box::Box{cx - 0.5 * bw * zoom, cy - 0.5 * bh * zoom, bw * zoom, bh * zoom};
        };

        fs.target = world_to_cam(px, py, spec.target_w, spec.target_h);
        fs.visible = !detail::fully_outside(fs.target, static_cast<double>(spec.frame_w),
                                            static_cast<double>(spec.frame_h));
        for (const auto& p : paths) {
            const double swing =
                spec.distractor_orbit * std::sin(p.omega * static_cast<double>(t) + p.phase);
            fs.distractors.push_back(world_to_cam(px + p.dir_x * swing, py + p.dir_y * swing,
                                                  spec.target_w, spec.target_h));
        }
        tr.frames.push_back(std::move(fs));

        // second-order updates for the next frame
        vx += rng.normal(0.0, spec.target_accel_sigma);
        vy += rng.normal(0.0, spec.target_accel_sigma);
        px += vx;
        py += vy;
        qx += spec.camera_vx + rng.normal(0.0, spec.camera_jitter_sigma);
        qy += spec.camera_vy + rng.normal(0.0, spec.camera_jitter_sigma);
        zoom *= 1.0 + spec.zoom_rate;
    }
    return tr;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline std::array<double, 3> palette_color(const std::string& name, std::uint64_t seed) {
    static const std::map<std::string, std::array<double, 3>> palette = {
        {"white", {0.95, 0.95, 0.95}},  {"black", {0.08, 0.08, 0.08}},
        {"red", {0.85, 0.15, 0.10}},    {"blue", {0.15, 0.25, 0.85}},
        {"gray", {0.55, 0.55, 0.58}},   {"silver", {0.75, 0.76, 0.80}},
    };
    if (name == "auto") {
        auto it = palette.begin();
        std::advance(it, static_cast<long>(hash_mix(seed, 0x636f6cULL) % palette.size()));
        return it->second;
    }
    const auto it = palette.find(name);
    if (it == palette.end()) throw ParseError("unknown color '" + name + "'");
    return it->second;
}

inline std::string palette_color_name(const std::string& name, std::uint64_t seed) {
    if (name != "auto") return name;
    static const std::array<const char*, 6> names = {"black", "blue", "gray",
                                                     "red",   "silver", "white"};
    return names[hash_mix(seed, 0x636f6cULL) % names.size()];
}

inline std::string pick_background(const std::string& name, std::uint64_t seed) {
    if (name != "auto") return name;
    static const std::array<const char*, 5> names = {"farmland", "city", "coast", "mountains",
                                                     "forest"};
    return names[hash_mix(seed, 0x626b67ULL) % names.size()];
}

// two-octave value noise on a world-anchored lattice; the camera offset pans it
inline double background_gray(double x, double y, double qx, double qy, double cell,
                              std::uint64_t seed) {
    auto lattice = [seed](long ix, long iy, std::uint64_t oct) {
        return u64_to_unit(hash_mix(hash_mix(seed, oct), static_cast<std::uint64_t>(ix * 73856093L),
                                    static_cast<std::uint64_t>(iy * 19349663L)));
    };
    auto smooth = [&](double sx, double sy, std::uint64_t oct) {
        const long ix = static_cast<long>(std::floor(sx));
        const long iy = static_cast<long>(std::floor(sy));
        double fx = sx - ix, fy = sy - iy;
        fx = fx * fx * (3.0 - 2.0 * fx);
        fy = fy * fy * (3.0 - 2.0 * fy);
        const double a = lattice(ix, iy, oct) * (1 - fx) + lattice(ix + 1, iy, oct) * fx;
        const double b = lattice(ix, iy + 1, oct) * (1 - fx) + lattice(ix + 1, iy + 1, oct) * fx;
        return a * (1 - fy) + b * fy;
    };
    const double wx = (x + qx) / cell, wy = (y + qy) / cell;
    return 0.7 * smooth(wx, wy, 1) + 0.3 * smooth(wx * 2.7, wy * 2.7, 2);
}

// coverage of a pixel by an ellipse, 4x4 subsamples
inline double ellipse_coverage(double px, double py, double cx, double cy, double a, double b) {
    int inside = 0;
    for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
            const double x = px + (sx + 0.5) / 4.0;
            const double y = py + (sy + 0.5) / 4.0;
            const double dx = (x - cx) / a, dy = (y - cy) / b;
            if (dx * dx + dy * dy <= 1.0) ++inside;
        }
    return inside / 16.0;
}

// strength in [0,1] blends toward the body color; 0 leaves the background
// untouched (the degenerate invisible-target stress case)
inline void draw_ellipse(img::ImageFrame& f, const box::Box& b,
                         const std::array<double, 3>& rgb, double strength) {
    const double cx = b.cx(), cy = b.cy(), a = 0.5 * b.w, bb = 0.5 * b.h;
    if (a <= 0.0 || bb <= 0.0) return;
    const double k = std::clamp(strength, 0.0, 1.0);
    if (k <= 0.0) return;
    const long x0 = std::max(0L, static_cast<long>(std::floor(b.x)) - 1);
    const long y0 = std::max(0L, static_cast<long>(std::floor(b.y)) - 1);
    const long x1 = std::min(static_cast<long>(f.width()) - 1,
                             static_cast<long>(std::ceil(b.x2())) + 1);
    const long y1 = std::min(static_cast<long>(f.height()) - 1,
                             static_cast<long>(std::ceil(b.y2())) + 1);
    for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x) {
            const double alpha = k * ellipse_coverage(x, y, cx, cy, a, bb);
            if (alpha <= 0.0) continue;
            for (int c = 0; c < 3; ++c)
                f.at(y, x, c) = f.at(y, x, c) * (1.0 - alpha) + rgb[c] * alpha;
        }
}

// snap to two decimals through the same text round trip emit/parse use
inline double quantize2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::strtod(buf, nullptr);
}

}  // namespace detail

struct RenderedSequence {
    std::vector<img::ImageFrame> frames;
    eval::SequenceAnnotation annotation;
    // flags derived from the generator's internal trajectory (soundness oracle)
    std::array<int, eval::kAttrCount> generator_attributes{};
};

// Table-2 box rules evaluated on the generator's internal (unquantized)
// trajectory; the soundness acceptance check compares these with
// eval::auto_attributes on the emitted annotation.
inline std::array<int, eval::kAttrCount> generator_box_attributes(const Trajectory& tr) {
    eval::SequenceAnnotation ann;
    ann.frame_w = static_cast<double>(tr.spec.frame_w);
    ann.frame_h = static_cast<double>(tr.spec.frame_h);
    for (const FrameState& fs : tr.frames) {
        const box::Box clipped = box::clip_to_frame(fs.target, ann.frame_w, ann.frame_h);
        ann.boxes.push_back(fs.visible ? clipped : box::Box{});
        ann.absent.push_back(fs.visible ? 0 : 1);
    }
    return eval::auto_attributes(ann).attributes;
}

inline RenderedSequence render(const Trajectory& tr, const std::string& sequence_id) {
    const MotionSpec& spec = tr.spec;
    RenderedSequence out;
    out.annotation.id = sequence_id;
    out.annotation.frame_w = static_cast<double>(spec.frame_w);
    out.annotation.frame_h = static_cast<double>(spec.frame_h);
    out.annotation.prompt = "a " + detail::palette_color_name(spec.color, spec.seed) +
                            " multi-rotor drone flying over " +
                            detail::pick_background(spec.background, spec.seed);

    const std::array<double, 3> rgb = detail::palette_color(spec.color, spec.seed);

    for (std::size_t t = 0; t < tr.frames.size(); ++t) {
        const FrameState& fs = tr.frames[t];
        img::ImageFrame frame(spec.frame_h, spec.frame_w, t);
        for (std::size_t y = 0; y < spec.frame_h; ++y)
            for (std::size_t x = 0; x < spec.frame_w; ++x) {
                const double n = detail::background_gray(
                    static_cast<double>(x), static_cast<double>(y), fs.camera_x, fs.camera_y,
                    spec.noise_scale, spec.seed);
                const double g = std::clamp(0.25 + 0.3 * n + fs.brightness_offset, 0.0, 1.0);
                for (int c = 0; c < 3; ++c) frame.at(y, x, c) = g;
            }

        // distractors keep the sequence-start appearance; the target may drift
        for (const box::Box& d : fs.distractors)
            detail::draw_ellipse(frame, d, rgb, spec.target_contrast);
        detail::draw_ellipse(frame, fs.target, rgb, fs.contrast);

        box::Box ann_box{};
        if (fs.visible) {
            const box::Box clipped = box::clip_to_frame(
                fs.target, static_cast<double>(spec.frame_w), static_cast<double>(spec.frame_h));
            ann_box = {detail::quantize2(clipped.x), detail::quantize2(clipped.y),
                       detail::quantize2(clipped.w), detail::quantize2(clipped.h)};
        }
        out.annotation.boxes.push_back(ann_box);
        out.annotation.absent.push_back(fs.visible ? 0 : 1);
        out.frames.push_back(std::move(frame));
    }

    out.generator_attributes = generator_box_attributes(tr);
    out.generator_attributes[eval::kSD] = spec.distractors > 0 ? 1 : 0;
    out.generator_attributes[eval::kCM] =
        (spec.camera_vx != 0.0 || spec.camera_vy != 0.0 || spec.camera_jitter_sigma > 0.0 ||
         spec.zoom_rate != 0.0)
            ? 1
            : 0;

    // final attribute set: generator metadata for the human-judgment slots,
    // auto rules (including pixel-based IV) for the rest
    out.annotation.attributes = out.generator_attributes;
    eval::AutoAttrResult aa = eval::auto_attributes(
        out.annotation, [&](std::size_t i) -> std::optional<img::ImageFrame> {
            return out.frames[i];
        });
    out.annotation.attributes = aa.attributes;
    return out;
}

// ---------------------------------------------------------------------------
// Emission in the benchmark directory layout
// ---------------------------------------------------------------------------

inline void emit(const RenderedSequence& seq, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "frames", ec);
    if (ec) throw IoError("cannot create " + (dir / "frames").string());

    auto open = [](const fs::path& p) {
        std::ofstream out(p);
        if (!out) throw IoError("cannot write " + p.string());
        return out;
    };

    {
        std::ofstream out = open(dir / "groundtruth.txt");
        char buf[128];
        for (const box::Box& b : seq.annotation.boxes) {
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f,%.2f,%.2f\n", b.x, b.y, b.w, b.h);
            out << buf;
        }
    }
    {
        std::ofstream out = open(dir / "absent.txt");
        for (char a : seq.annotation.absent) out << (a ? "1" : "0") << "\n";
    }
    {
        std::ofstream out = open(dir / "language.txt");
        out << seq.annotation.prompt << "\n";
    }
    {
        std::ofstream out = open(dir / "attributes.txt");
        for (std::size_t i = 0; i < eval::kAttrCount; ++i)
            out << (i ? "," : "") << seq.annotation.attributes[i];
        out << "\n";
    }
    for (std::size_t i = 0; i < seq.frames.size(); ++i)
        img::write_png((dir / "frames" / eval::frame_file_name(i)).string(), seq.frames[i]);
}

inline train::TrainSequence to_train_sequence(const RenderedSequence& seq) {
    train::TrainSequence t;
    t.frames = seq.frames;
    t.boxes = seq.annotation.boxes;
    t.visible.reserve(seq.annotation.absent.size());
    for (char a : seq.annotation.absent) t.visible.push_back(a ? 0 : 1);
    t.prompt = seq.annotation.prompt;
    return t;
}

}  // namespace stsk::synth
