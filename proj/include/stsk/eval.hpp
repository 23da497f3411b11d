#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stsk/boxes.hpp"
#include "stsk/errors.hpp"
#include "stsk/image.hpp"
#include "stsk/png_io.hpp"
#include "stsk/tensor.hpp"

namespace stsk::eval {

struct UndefinedMetricsError : std::runtime_error {
    explicit UndefinedMetricsError(const std::string& msg)
        : std::runtime_error("undefined metrics: " + msg) {}
};

// ---------------------------------------------------------------------------
// Annotations and results
// ---------------------------------------------------------------------------

// Attribute order: CM VC PO FO OV ROT SD IV MB PTI SO FM SV ARV LEN.
// All slots are 0/1 except LEN, which is 0 short / 1 medium / 2 long.
enum Attr : std::size_t {
    kCM = 0, kVC, kPO, kFO, kOV, kROT, kSD, kIV, kMB, kPTI, kSO, kFM, kSV, kARV, kLEN,
    kAttrCount
};

inline const std::array<const char*, kAttrCount>& attr_names() {
    static const std::array<const char*, kAttrCount> names = {
        "CM", "VC", "PO", "FO", "OV", "ROT", "SD", "IV", "MB", "PTI", "SO", "FM", "SV", "ARV",
        "LEN"};
    return names;
}

inline constexpr std::size_t kLenShortMax = 600;
inline constexpr std::size_t kLenMediumMax = 1800;

inline int length_bin(std::size_t frames) {
    if (frames <= kLenShortMax) return 0;
    if (frames <= kLenMediumMax) return 1;
    return 2;
}

struct SequenceAnnotation {
    std::string id;
    std::vector<box::Box> boxes;   // sentinel all-zero rows on absent frames
    std::vector<char> absent;
    std::string prompt;
    std::array<int, kAttrCount> attributes{};
    double frame_w = 0.0, frame_h = 0.0;  // 0 when no frames are available

    std::size_t frame_count() const { return boxes.size(); }
    bool visible(std::size_t i) const { return !absent[i]; }
};

struct TrackResult {
    std::string sequence_id;
    std::vector<box::Box> boxes;
    double fps_measured = 0.0;
};

// ---------------------------------------------------------------------------
// Parsing (sequence directory layout: groundtruth.txt, absent.txt,
// language.txt, attributes.txt, optional frames/%06d.png)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw ParseError("cannot open " + p.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    // trailing blank lines are tolerated
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

inline std::vector<double> parse_csv_numbers(const std::string& line,
                                             const std::filesystem::path& file,
                                             std::size_t line_no) {
    std::vector<double> vals;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        std::size_t comma = line.find(',', pos);
        std::string tok = line.substr(pos, comma == std::string::npos ? std::string::npos
                                                                      : comma - pos);
        try {
            std::size_t used = 0;
            vals.push_back(std::stod(tok, &used));
            while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used])))
                ++used;
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ParseError(file.string() + ":" + std::to_string(line_no) +
                             ": bad number '" + tok + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return vals;
}

}  // namespace detail

inline std::string frame_file_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06zu.png", index + 1);
    return buf;
}

inline SequenceAnnotation parse_sequence(const std::filesystem::path& dir,
                                         std::vector<std::string>* warnings = nullptr) {
    namespace fs = std::filesystem;
    SequenceAnnotation ann;
    ann.id = dir.filename().string();

    const fs::path gt_path = dir / "groundtruth.txt";
    const auto gt_lines = detail::read_lines(gt_path);
    if (gt_lines.empty()) throw ParseError(gt_path.string() + ": empty ground truth");
    for (std::size_t i = 0; i < gt_lines.size(); ++i) {
        const auto v = detail::parse_csv_numbers(gt_lines[i], gt_path, i + 1);
        if (v.size() != 4)
            throw ParseError(gt_path.string() + ":" + std::to_string(i + 1) +
                             ": expected x,y,w,h");
        ann.boxes.push_back({v[0], v[1], v[2], v[3]});
    }

    const fs::path ab_path = dir / "absent.txt";
    const auto ab_lines = detail::read_lines(ab_path);
    if (ab_lines.size() != gt_lines.size())
        throw ParseError(ab_path.string() + ":" + std::to_string(ab_lines.size() + 1) +
                         ": absent flags (" + std::to_string(ab_lines.size()) +
                         ") do not match ground-truth lines (" + std::to_string(gt_lines.size()) +
                         ")");
    for (std::size_t i = 0; i < ab_lines.size(); ++i) {
        if (ab_lines[i] != "0" && ab_lines[i] != "1")
            throw ParseError(ab_path.string() + ":" + std::to_string(i + 1) +
                             ": absent flag must be 0 or 1");
        ann.absent.push_back(ab_lines[i] == "1" ? 1 : 0);
    }

    for (std::size_t i = 0; i < ann.boxes.size(); ++i)
        if (!ann.absent[i] && (ann.boxes[i].w <= 0.0 || ann.boxes[i].h <= 0.0))
            throw ParseError(gt_path.string() + ":" + std::to_string(i + 1) +
                             ": non-positive box size on a visible frame");

    const fs::path lang_path = dir / "language.txt";
    const auto lang_lines = detail::read_lines(lang_path);
    ann.prompt = lang_lines.empty() ? "" : lang_lines[0];
    if (ann.prompt.empty() && warnings)
        warnings->push_back(ann.id + ": empty language prompt");

    const fs::path attr_path = dir / "attributes.txt";
    const auto attr_lines = detail::read_lines(attr_path);
    if (attr_lines.empty()) throw ParseError(attr_path.string() + ": empty attributes file");
    const auto av = detail::parse_csv_numbers(attr_lines[0], attr_path, 1);
    if (av.size() != kAttrCount)
        throw ParseError(attr_path.string() + ":1: expected " + std::to_string(kAttrCount) +
                         " attribute flags, got " + std::to_string(av.size()));
    for (std::size_t i = 0; i < kAttrCount; ++i) {
        const int flag = static_cast<int>(av[i]);
        const int hi = (i == kLEN) ? 2 : 1;
        if (flag < 0 || flag > hi)
            throw ParseError(attr_path.string() + ":1: attribute " +
                             std::string(attr_names()[i]) + " out of range");
        ann.attributes[i] = flag;
    }
    if (ann.attributes[kLEN] != length_bin(ann.frame_count()) && warnings)
        warnings->push_back(ann.id + ": LEN slot " + std::to_string(ann.attributes[kLEN]) +
                            " does not match frame count " + std::to_string(ann.frame_count()));

    const fs::path first_frame = dir / "frames" / frame_file_name(0);
    if (fs::exists(first_frame)) {
        std::size_t w = 0, h = 0;
        if (img::read_png_size(first_frame.string(), w, h)) {
            ann.frame_w = static_cast<double>(w);
            ann.frame_h = static_cast<double>(h);
        }
    }
    return ann;
}

inline TrackResult parse_result_file(const std::filesystem::path& file, const std::string& id) {
    TrackResult r;
    r.sequence_id = id;
    const auto lines = detail::read_lines(file);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto v = detail::parse_csv_numbers(lines[i], file, i + 1);
        if (v.size() != 4)
            throw ParseError(file.string() + ":" + std::to_string(i + 1) + ": expected x,y,w,h");
        r.boxes.push_back({v[0], v[1], v[2], v[3]});
    }
    return r;
}

// ---------------------------------------------------------------------------
// OPE metrics
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSuccessSamples = 101;   // thresholds 0..1 step 0.01
inline constexpr std::size_t kPrecisionSamples = 51;  // thresholds 0..50 px
inline constexpr std::size_t kNPreSamples = 51;       // thresholds 0..0.5 step 0.01
inline constexpr double kPrecisionAt = 20.0;          // Pre reported at 20 px

struct MetricReport {
    double pre = 0.0, npre = 0.0, auc = 0.0, cauc = 0.0, macc = 0.0;
    std::vector<double> success_curve;   // kSuccessSamples
    std::vector<double> precision_curve; // kPrecisionSamples
    std::vector<double> npre_curve;      // kNPreSamples
    std::vector<double> csuccess_curve;  // kSuccessSamples, on max(cIoU, 0)
    std::size_t visible_frames = 0;
};

namespace detail {

// Success counting uses strict IoU > threshold; the degenerate full-overlap
// frame (IoU == 1) passes every threshold, so the perfect tracker scores 1.0.
inline double success_key(double overlap) { return overlap >= 1.0 ? 2.0 : overlap; }

// fraction of sorted values strictly greater than t
inline double frac_greater(const std::vector<double>& sorted, double t) {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), t);
    return static_cast<double>(sorted.end() - it) / static_cast<double>(sorted.size());
}

// fraction of sorted values <= t
inline double frac_leq(const std::vector<double>& sorted, double t) {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), t);
    return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

inline double curve_mean(const std::vector<double>& curve) {
    double s = 0.0;
    for (double v : curve) s += v;
    return s / static_cast<double>(curve.size());
}

}  // namespace detail

inline MetricReport evaluate_sequence(const SequenceAnnotation& ann, const TrackResult& res) {
    if (res.boxes.size() != ann.frame_count())
        throw ParseError("result for " + ann.id + " has " + std::to_string(res.boxes.size()) +
                         " boxes, annotation has " + std::to_string(ann.frame_count()));
    std::vector<double> ious, cious, errs, nerrs;
    for (std::size_t i = 0; i < ann.frame_count(); ++i) {
        if (!ann.visible(i)) continue;
        const box::Box& gt = ann.boxes[i];
        const box::Box& pr = res.boxes[i];
        ious.push_back(box::iou(pr, gt));
        cious.push_back(std::max(box::ciou(pr, gt), 0.0));
        errs.push_back(box::center_error(pr, gt));
        nerrs.push_back(box::normalized_center_error(pr, gt));
    }
    if (ious.empty()) throw UndefinedMetricsError("sequence " + ann.id + " has no visible frames");

    MetricReport m;
    m.visible_frames = ious.size();
    m.macc = detail::curve_mean(ious);

    std::vector<double> si = ious, sc = cious;
    for (double& v : si) v = detail::success_key(v);
    for (double& v : sc) v = detail::success_key(v);
    std::sort(si.begin(), si.end());
    std::sort(sc.begin(), sc.end());
    std::sort(errs.begin(), errs.end());
    std::sort(nerrs.begin(), nerrs.end());

    m.success_curve.resize(kSuccessSamples);
    m.csuccess_curve.resize(kSuccessSamples);
    for (std::size_t k = 0; k < kSuccessSamples; ++k) {
        const double th = static_cast<double>(k) / 100.0;
        m.success_curve[k] = detail::frac_greater(si, th);
        m.csuccess_curve[k] = detail::frac_greater(sc, th);
    }
    m.precision_curve.resize(kPrecisionSamples);
    for (std::size_t k = 0; k < kPrecisionSamples; ++k)
        m.precision_curve[k] = detail::frac_leq(errs, static_cast<double>(k));
    m.npre_curve.resize(kNPreSamples);
    for (std::size_t k = 0; k < kNPreSamples; ++k)
        m.npre_curve[k] = detail::frac_leq(nerrs, static_cast<double>(k) / 100.0);

    m.auc = detail::curve_mean(m.success_curve);
    m.cauc = detail::curve_mean(m.csuccess_curve);
    m.npre = detail::curve_mean(m.npre_curve);
    m.pre = m.precision_curve[static_cast<std::size_t>(kPrecisionAt)];
    return m;
}

// ---------------------------------------------------------------------------
// Benchmark-level aggregation and the attribute breakdown
// ---------------------------------------------------------------------------

struct AttrRow {
    std::string name;
    std::size_t count = 0;
    MetricReport mean;  // valid only when count > 0
};

struct BenchmarkReport {
    std::vector<std::pair<std::string, MetricReport>> per_sequence;
    MetricReport aggregate;
    std::vector<AttrRow> attributes;  // 14 boolean rows + LEN_short/medium/long
    std::vector<std::string> warnings;
};

namespace detail {

inline void accumulate(MetricReport& acc, const MetricReport& m) {
    auto acc_curve = [](std::vector<double>& a, const std::vector<double>& b) {
        if (a.empty()) a.assign(b.size(), 0.0);
        for (std::size_t i = 0; i < b.size(); ++i) a[i] += b[i];
    };
    acc.pre += m.pre;
    acc.npre += m.npre;
    acc.auc += m.auc;
    acc.cauc += m.cauc;
    acc.macc += m.macc;
    acc.visible_frames += m.visible_frames;
    acc_curve(acc.success_curve, m.success_curve);
    acc_curve(acc.precision_curve, m.precision_curve);
    acc_curve(acc.npre_curve, m.npre_curve);
    acc_curve(acc.csuccess_curve, m.csuccess_curve);
}

inline void divide(MetricReport& acc, double n) {
    acc.pre /= n;
    acc.npre /= n;
    acc.auc /= n;
    acc.cauc /= n;
    acc.macc /= n;
    for (auto* c : {&acc.success_curve, &acc.precision_curve, &acc.npre_curve,
                    &acc.csuccess_curve})
        for (double& v : *c) v /= n;
}

}  // namespace detail

inline BenchmarkReport evaluate_benchmark(const std::vector<SequenceAnnotation>& annotations,
                                          const std::vector<TrackResult>& results) {
    BenchmarkReport rep;
    std::vector<const SequenceAnnotation*> matched_ann;
    std::vector<MetricReport> matched;
    for (const TrackResult& r : results) {
        const auto it =
            std::find_if(annotations.begin(), annotations.end(),
                         [&](const SequenceAnnotation& a) { return a.id == r.sequence_id; });
        if (it == annotations.end()) {
            rep.warnings.push_back("unmatched result id: " + r.sequence_id);
            continue;
        }
        try {
            MetricReport m = evaluate_sequence(*it, r);
            rep.per_sequence.emplace_back(r.sequence_id, m);
            matched.push_back(std::move(m));
            matched_ann.push_back(&*it);
        } catch (const UndefinedMetricsError& e) {
            rep.warnings.push_back(std::string("skipped: ") + e.what());
        }
    }
    for (const SequenceAnnotation& a : annotations) {
        const bool has = std::any_of(results.begin(), results.end(), [&](const TrackResult& r) {
            return r.sequence_id == a.id;
        });
        if (!has) rep.warnings.push_back("no result for sequence: " + a.id);
    }
    if (matched.empty()) return rep;

    for (const MetricReport& m : matched) detail::accumulate(rep.aggregate, m);
    detail::divide(rep.aggregate, static_cast<double>(matched.size()));
    rep.aggregate.visible_frames = 0;
    for (const MetricReport& m : matched) rep.aggregate.visible_frames += m.visible_frames;

    auto attr_row = [&](const std::string& name, const std::function<bool(int)>& pred,
                        std::size_t slot) {
        AttrRow row;
        row.name = name;
        for (std::size_t i = 0; i < matched.size(); ++i) {
            if (!pred(matched_ann[i]->attributes[slot])) continue;
            detail::accumulate(row.mean, matched[i]);
            ++row.count;
        }
        if (row.count > 0) detail::divide(row.mean, static_cast<double>(row.count));
        rep.attributes.push_back(std::move(row));
    };
    for (std::size_t a = 0; a < kAttrCount; ++a) {
        if (a == kLEN) continue;
        attr_row(attr_names()[a], [](int v) { return v == 1; }, a);
    }
    attr_row("LEN_short", [](int v) { return v == 0; }, kLEN);
    attr_row("LEN_medium", [](int v) { return v == 1; }, kLEN);
    attr_row("LEN_long", [](int v) { return v == 2; }, kLEN);
    return rep;
}

// ---------------------------------------------------------------------------
// Auto-derivable attributes (Table-2 numeric rules). CM, VC, PO, FO, ROT, SD,
// MB and PTI are human judgments and pass through from the ingested flags.
// ---------------------------------------------------------------------------

inline constexpr double kSmallRelArea = 0.01;   // SO: mean relative area < 1%
inline constexpr double kSmallAbsSide = 22.0;   // SO: mean sqrt(w h) < 22 px
inline constexpr double kRatioLow = 0.5;        // SV/ARV band
inline constexpr double kRatioHigh = 2.0;
inline constexpr double kIvRatio = 2.0;         // IV: max/min mean gray > 2x

struct AutoAttrResult {
    std::array<int, kAttrCount> attributes{};
    bool iv_available = false;
};

// Mean gray level (0..255) of the box region; used by the IV rule.
inline std::optional<double> box_mean_gray(const img::ImageFrame& f, const box::Box& b) {
    const long x0 = std::max(0L, static_cast<long>(std::floor(b.x)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(b.y)));
    const long x1 = std::min(static_cast<long>(f.width()) - 1,
                             static_cast<long>(std::ceil(b.x2())) - 1);
    const long y1 = std::min(static_cast<long>(f.height()) - 1,
                             static_cast<long>(std::ceil(b.y2())) - 1);
    if (x1 < x0 || y1 < y0) return std::nullopt;
    double acc = 0.0;
    for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x)
            acc += 0.299 * f.at(y, x, 0) + 0.587 * f.at(y, x, 1) + 0.114 * f.at(y, x, 2);
    return 255.0 * acc / (static_cast<double>(x1 - x0 + 1) * static_cast<double>(y1 - y0 + 1));
}

using FrameLoader = std::function<std::optional<img::ImageFrame>(std::size_t frame_idx)>;

inline AutoAttrResult auto_attributes(const SequenceAnnotation& ann,
                                      const FrameLoader& frames = nullptr) {
    AutoAttrResult out;
    out.attributes = ann.attributes;  // pass-through for the human-annotated slots

    std::vector<std::size_t> vis;
    for (std::size_t i = 0; i < ann.frame_count(); ++i)
        if (ann.visible(i)) vis.push_back(i);
    if (vis.empty()) {
        out.attributes[kLEN] = length_bin(ann.frame_count());
        return out;
    }

    // SO
    if (ann.frame_w > 0.0 && ann.frame_h > 0.0) {
        double rel = 0.0, abs_side = 0.0;
        for (std::size_t i : vis) {
            rel += ann.boxes[i].area() / (ann.frame_w * ann.frame_h);
            abs_side += std::sqrt(ann.boxes[i].area());
        }
        rel /= static_cast<double>(vis.size());
        abs_side /= static_cast<double>(vis.size());
        out.attributes[kSO] = (rel < kSmallRelArea && abs_side < kSmallAbsSide) ? 1 : 0;
    }

    // FM: consecutive visible frames with displacement beyond the current size
    out.attributes[kFM] = 0;
    for (std::size_t i = 0; i + 1 < ann.frame_count(); ++i) {
        if (!ann.visible(i) || !ann.visible(i + 1)) continue;
        const double d = box::center_error(ann.boxes[i + 1], ann.boxes[i]);
        if (d > std::sqrt(ann.boxes[i + 1].area())) {
            out.attributes[kFM] = 1;
            break;
        }
    }

    // SV / ARV against the first visible frame
    const box::Box& ref = ann.boxes[vis.front()];
    out.attributes[kSV] = 0;
    out.attributes[kARV] = 0;
    for (std::size_t i : vis) {
        const double sv = std::sqrt(ann.boxes[i].area() / ref.area());
        if (sv < kRatioLow || sv > kRatioHigh) out.attributes[kSV] = 1;
        const double arv = (ann.boxes[i].w / ann.boxes[i].h) / (ref.w / ref.h);
        if (arv < kRatioLow || arv > kRatioHigh) out.attributes[kARV] = 1;
    }

    // OV: an absent run counts when the target exited through the frame edge:
    // the last visible box touches the boundary, or its one-step constant
    // velocity extrapolation leaves the frame.
    if (ann.frame_w > 0.0 && ann.frame_h > 0.0) {
        out.attributes[kOV] = 0;
        for (std::size_t i = 0; i < ann.frame_count() && !out.attributes[kOV]; ++i) {
            if (ann.visible(i) || i == 0 || !ann.visible(i - 1)) continue;  // run starts at i
            const box::Box& last = ann.boxes[i - 1];
            const bool touches = last.x <= 1.0 || last.y <= 1.0 ||
                                 last.x2() >= ann.frame_w - 1.0 ||
                                 last.y2() >= ann.frame_h - 1.0;
            bool exits = false;
            if (i >= 2 && ann.visible(i - 2)) {
                const double vx = last.cx() - ann.boxes[i - 2].cx();
                const double vy = last.cy() - ann.boxes[i - 2].cy();
                const box::Box extrap{last.x + vx, last.y + vy, last.w, last.h};
                exits = extrap.x < 0.0 || extrap.y < 0.0 || extrap.x2() > ann.frame_w ||
                        extrap.y2() > ann.frame_h;
            }
            if (touches || exits) out.attributes[kOV] = 1;
        }
    }

    out.attributes[kLEN] = length_bin(ann.frame_count());

    // IV needs pixels
    if (frames) {
        double lo = 0.0, hi = 0.0;
        bool any = false;
        for (std::size_t i : vis) {
            auto f = frames(i);
            if (!f) continue;
            auto gray = box_mean_gray(*f, ann.boxes[i]);
            if (!gray) continue;
            if (!any) {
                lo = hi = *gray;
                any = true;
            } else {
                lo = std::min(lo, *gray);
                hi = std::max(hi, *gray);
            }
        }
        if (any) {
            out.iv_available = true;
            out.attributes[kIV] = (lo <= 0.0 ? hi > 0.0 : hi / lo > kIvRatio) ? 1 : 0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset statistics
// ---------------------------------------------------------------------------

struct Histogram {
    double lo = 0.0, hi = 1.0;
    std::vector<double> counts;
    double mean = 0.0;
    std::size_t n = 0;

    Histogram() = default;
    Histogram(double lo_, double hi_, std::size_t bins) : lo(lo_), hi(hi_), counts(bins, 0.0) {}

    void add(double v) {
        const double t = (v - lo) / (hi - lo);
        const long b = std::clamp(static_cast<long>(std::floor(t * counts.size())), 0L,
                                  static_cast<long>(counts.size()) - 1);
        counts[static_cast<std::size_t>(b)] += 1.0;
        mean = (mean * n + v) / static_cast<double>(n + 1);
        ++n;
    }
};

struct StatsBundle {
    Histogram brightness{0.0, 255.0, 32};   // per-frame mean gray
    Histogram rel_speed{0.0, 4.0, 40};      // |c_t - c_{t-1}| / sqrt(w_t h_t)
    Histogram rel_size{0.0, 0.1, 40};       // box area / frame area
    Tensor position_heat;                    // 16x16 normalized center density
    std::array<std::size_t, 3> length_bins{0, 0, 0};
};

using SequenceFrameLoader =
    std::function<std::optional<img::ImageFrame>(std::size_t seq_idx, std::size_t frame_idx)>;

inline StatsBundle dataset_stats(const std::vector<SequenceAnnotation>& annotations,
                                 const SequenceFrameLoader& frames = nullptr) {
    StatsBundle s;
    s.position_heat = Tensor({16, 16});
    for (std::size_t si = 0; si < annotations.size(); ++si) {
        const SequenceAnnotation& ann = annotations[si];
        s.length_bins[static_cast<std::size_t>(length_bin(ann.frame_count()))]++;
        for (std::size_t i = 0; i < ann.frame_count(); ++i) {
            if (frames) {
                auto f = frames(si, i);
                if (f) {
                    double acc = 0.0;
                    for (std::size_t y = 0; y < f->height(); ++y)
                        for (std::size_t x = 0; x < f->width(); ++x)
                            acc += 0.299 * f->at(y, x, 0) + 0.587 * f->at(y, x, 1) +
                                   0.114 * f->at(y, x, 2);
                    s.brightness.add(255.0 * acc /
                                     static_cast<double>(f->height() * f->width()));
                }
            }
            if (!ann.visible(i)) continue;
            if (ann.frame_w > 0.0 && ann.frame_h > 0.0) {
                s.rel_size.add(ann.boxes[i].area() / (ann.frame_w * ann.frame_h));
                const std::size_t px = std::min<std::size_t>(
                    15, static_cast<std::size_t>(std::max(0.0, ann.boxes[i].cx() / ann.frame_w) *
                                                 16.0));
                const std::size_t py = std::min<std::size_t>(
                    15, static_cast<std::size_t>(std::max(0.0, ann.boxes[i].cy() / ann.frame_h) *
                                                 16.0));
                s.position_heat(py, px) += 1.0;
            }
            if (i > 0 && ann.visible(i - 1))
                s.rel_speed.add(box::center_error(ann.boxes[i], ann.boxes[i - 1]) /
                                std::sqrt(ann.boxes[i].area()));
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// CSV report writers
// ---------------------------------------------------------------------------

namespace detail {

inline void open_csv(std::ofstream& out, const std::filesystem::path& p) {
    out.open(p);
    if (!out) throw IoError("cannot write " + p.string());
}

}  // namespace detail

inline void write_report_csv(const std::filesystem::path& file, const BenchmarkReport& rep) {
    std::ofstream out;
    detail::open_csv(out, file);
    out << "sequence,pre,npre,auc,cauc,macc,visible_frames\n";
    char buf[256];
    auto row = [&](const std::string& id, const MetricReport& m) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%zu\n", id.c_str(), m.pre,
                      m.npre, m.auc, m.cauc, m.macc, m.visible_frames);
        out << buf;
    };
    for (const auto& [id, m] : rep.per_sequence) row(id, m);
    if (!rep.per_sequence.empty()) row("MEAN", rep.aggregate);
}

inline void write_attributes_csv(const std::filesystem::path& file, const BenchmarkReport& rep) {
    std::ofstream out;
    detail::open_csv(out, file);
    out << "attribute,sequences,pre,npre,auc,cauc,macc\n";
    char buf[256];
    for (const AttrRow& row : rep.attributes) {
        if (row.count == 0) {
            out << row.name << ",0,,,,,\n";  // absent, not zero
            continue;
        }
        std::snprintf(buf, sizeof(buf), "%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", row.name.c_str(),
                      row.count, row.mean.pre, row.mean.npre, row.mean.auc, row.mean.cauc,
                      row.mean.macc);
        out << buf;
    }
}

inline void write_curves_csv(const std::filesystem::path& dir, const BenchmarkReport& rep) {
    struct CurveSpec {
        const char* file;
        std::vector<double> MetricReport::*member;
        double threshold_scale;
    };
    const CurveSpec specs[] = {
        {"curve_success.csv", &MetricReport::success_curve, 0.01},
        {"curve_precision.csv", &MetricReport::precision_curve, 1.0},
        {"curve_normprecision.csv", &MetricReport::npre_curve, 0.01},
        {"curve_csuccess.csv", &MetricReport::csuccess_curve, 0.01},
    };
    for (const auto& spec : specs) {
        std::ofstream out;
        detail::open_csv(out, dir / spec.file);
        out << "threshold";
        for (const auto& [id, m] : rep.per_sequence) out << "," << id;
        out << ",MEAN\n";
        const std::size_t samples = (rep.aggregate.*spec.member).size();
        char buf[64];
        for (std::size_t k = 0; k < samples; ++k) {
            std::snprintf(buf, sizeof(buf), "%.4f", static_cast<double>(k) *
                                                        spec.threshold_scale);
            out << buf;
            for (const auto& [id, m] : rep.per_sequence) {
                std::snprintf(buf, sizeof(buf), ",%.6f", (m.*spec.member)[k]);
                out << buf;
            }
            std::snprintf(buf, sizeof(buf), ",%.6f\n", (rep.aggregate.*spec.member)[k]);
            out << buf;
        }
    }
}

inline void write_histogram_csv(const std::filesystem::path& file, const Histogram& h,
                                const char* value_name) {
    std::ofstream out;
    detail::open_csv(out, file);
    out << "bin_lo,bin_hi,count\n";
    char buf[128];
    const double w = (h.hi - h.lo) / static_cast<double>(h.counts.size());
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.0f\n", h.lo + i * w, h.lo + (i + 1) * w,
                      h.counts[i]);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "# mean_%s,%.6f,%zu\n", value_name, h.mean, h.n);
    out << buf;
}

inline void write_stats_csv(const std::filesystem::path& dir, const StatsBundle& s) {
    write_histogram_csv(dir / "stats_brightness.csv", s.brightness, "brightness");
    write_histogram_csv(dir / "stats_relative_speed.csv", s.rel_speed, "relative_speed");
    write_histogram_csv(dir / "stats_relative_size.csv", s.rel_size, "relative_size");
    {
        std::ofstream out;
        detail::open_csv(out, dir / "stats_position_heatmap.csv");
        for (std::size_t y = 0; y < 16; ++y) {
            for (std::size_t x = 0; x < 16; ++x)
                out << (x ? "," : "") << s.position_heat(y, x);
            out << "\n";
        }
    }
    {
        std::ofstream out;
        detail::open_csv(out, dir / "stats_length.csv");
        out << "bin,count\nshort," << s.length_bins[0] << "\nmedium," << s.length_bins[1]
            << "\nlong," << s.length_bins[2] << "\n";
    }
}

}  // namespace stsk::eval
