#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "stsk/synth.hpp"

using namespace stsk;
using namespace stsk::synth;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) {
        path = fs::temp_directory_path() / name;
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

MotionSpec small_spec(std::uint64_t seed) {
    MotionSpec s;
    s.frame_w = s.frame_h = 96;
    s.length = 12;
    s.seed = seed;
    s.target_x = 48;
    s.target_y = 48;
    s.target_vx = 0.8;
    s.target_vy = -0.4;
    s.target_accel_sigma = 0.05;
    s.target_w = 14;
    s.target_h = 10;
    s.color = "white";
    return s;
}

}  // namespace

TEST_CASE("static spec yields a constant, always-visible box") {
    MotionSpec s = small_spec(1);
    s.target_vx = s.target_vy = 0.0;
    s.target_accel_sigma = 0.0;
    Trajectory tr = simulate(s);
    REQUIRE(tr.frames.size() == 12);
    for (const FrameState& f : tr.frames) {
        REQUIRE(f.visible);
        REQUIRE(f.target.x == tr.frames[0].target.x);
        REQUIRE(f.target.y == tr.frames[0].target.y);
        REQUIRE(f.target.w == tr.frames[0].target.w);
    }
}

TEST_CASE("camera translation opposite to target motion holds the box still in frame") {
    MotionSpec s = small_spec(2);
    s.target_vx = 2.0;
    s.target_vy = -1.0;
    s.target_accel_sigma = 0.0;
    s.camera_vx = 2.0;  // the camera chases the target exactly
    s.camera_vy = -1.0;
    Trajectory tr = simulate(s);
    for (const FrameState& f : tr.frames) {
        REQUIRE(f.target.x == Catch::Approx(tr.frames[0].target.x).margin(1e-9));
        REQUIRE(f.target.y == Catch::Approx(tr.frames[0].target.y).margin(1e-9));
    }
    // while the camera genuinely moved through the world
    REQUIRE(tr.frames.back().camera_x == Catch::Approx(2.0 * 11).margin(1e-9));
}

TEST_CASE("a fast target exits and absent flips at the first fully-outside frame") {
    MotionSpec s = small_spec(3);
    s.target_x = 80.0;
    s.target_vx = 6.0;
    s.target_vy = 0.0;
    s.target_accel_sigma = 0.0;
    s.length = 12;
    Trajectory tr = simulate(s);
    bool exited = false;
    for (std::size_t t = 0; t < tr.frames.size(); ++t) {
        const FrameState& f = tr.frames[t];
        const bool outside = f.target.x >= 96.0;
        REQUIRE(f.visible == !outside);
        if (outside) exited = true;
    }
    REQUIRE(exited);
}

TEST_CASE("zoom scales the apparent box size") {
    MotionSpec s = small_spec(4);
    s.target_vx = s.target_vy = 0.0;
    s.target_accel_sigma = 0.0;
    s.zoom_rate = 0.05;
    Trajectory tr = simulate(s);
    REQUIRE(tr.frames.back().target.w > tr.frames.front().target.w * 1.5);
}

TEST_CASE("rendered target extent matches the annotation within a pixel") {
    MotionSpec s = small_spec(5);
    s.target_contrast = 1.0;
    s.noise_scale = 24.0;
    RenderedSequence seq = render(simulate(s), "x");
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        if (seq.annotation.absent[t]) continue;
        const img::ImageFrame& f = seq.frames[t];
        // the white target sits far above the [0.25, 0.55] background band
        long minx = 1 << 20, miny = 1 << 20, maxx = -1, maxy = -1;
        for (long y = 0; y < 96; ++y)
            for (long x = 0; x < 96; ++x)
                if (f.at(y, x, 0) > 0.75) {
                    minx = std::min(minx, x);
                    maxx = std::max(maxx, x);
                    miny = std::min(miny, y);
                    maxy = std::max(maxy, y);
                }
        REQUIRE(maxx >= 0);
        const box::Box& b = seq.annotation.boxes[t];
        REQUIRE(std::abs(minx - b.x) <= 1.5);
        REQUIRE(std::abs(miny - b.y) <= 1.5);
        REQUIRE(std::abs((maxx + 1) - b.x2()) <= 1.5);
        REQUIRE(std::abs((maxy + 1) - b.y2()) <= 1.5);
    }
}

TEST_CASE("zero contrast leaves the background untouched") {
    MotionSpec s = small_spec(6);
    s.target_contrast = 0.0;
    Trajectory tr = simulate(s);
    RenderedSequence with_target = render(tr, "x");
    MotionSpec far = s;  // same scene, target parked outside the frame
    far.target_x = 5000.0;
    Trajectory tr2 = simulate(far);
    RenderedSequence without = render(tr2, "x");
    REQUIRE(max_abs_diff(with_target.frames[0].pixels, without.frames[0].pixels) == 0.0);
}

TEST_CASE("seeded rendering is bit-identical across runs") {
    MotionSpec s = small_spec(7);
    s.distractors = 2;
    RenderedSequence a = render(simulate(s), "x");
    RenderedSequence b = render(simulate(s), "x");
    REQUIRE(a.frames.size() == b.frames.size());
    for (std::size_t i = 0; i < a.frames.size(); ++i)
        REQUIRE(max_abs_diff(a.frames[i].pixels, b.frames[i].pixels) == 0.0);
    REQUIRE(a.annotation.attributes == b.annotation.attributes);
}

TEST_CASE("emit -> parse round trip preserves the annotation field by field") {
    TempDir tmp("stsk_synth_roundtrip");
    MotionSpec s = small_spec(8);
    s.distractors = 1;
    s.brightness_amplitude = 0.2;
    RenderedSequence seq = render(simulate(s), "seq0000");
    emit(seq, tmp.path / "seq0000");

    std::vector<std::string> warnings;
    eval::SequenceAnnotation parsed = eval::parse_sequence(tmp.path / "seq0000", &warnings);
    REQUIRE(parsed.id == seq.annotation.id);
    REQUIRE(parsed.frame_count() == seq.annotation.frame_count());
    for (std::size_t i = 0; i < parsed.frame_count(); ++i) {
        REQUIRE(parsed.absent[i] == seq.annotation.absent[i]);
        REQUIRE(parsed.boxes[i].x == seq.annotation.boxes[i].x);
        REQUIRE(parsed.boxes[i].y == seq.annotation.boxes[i].y);
        REQUIRE(parsed.boxes[i].w == seq.annotation.boxes[i].w);
        REQUIRE(parsed.boxes[i].h == seq.annotation.boxes[i].h);
    }
    REQUIRE(parsed.prompt == seq.annotation.prompt);
    REQUIRE(parsed.attributes == seq.annotation.attributes);
    REQUIRE(parsed.frame_w == 96.0);
    REQUIRE(parsed.frame_h == 96.0);
    REQUIRE(warnings.empty());
}

TEST_CASE("emit is byte-deterministic") {
    TempDir tmp("stsk_synth_det");
    MotionSpec s = small_spec(9);
    s.distractors = 2;
    RenderedSequence seq = render(simulate(s), "d");
    emit(seq, tmp.path / "a");
    emit(seq, tmp.path / "b");
    for (const char* f : {"groundtruth.txt", "absent.txt", "language.txt", "attributes.txt"})
        REQUIRE(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
    REQUIRE(slurp(tmp.path / "a" / "frames" / "000001.png") ==
            slurp(tmp.path / "b" / "frames" / "000001.png"));
}

TEST_CASE("generated LEN bin and SD flag land in the emitted attributes") {
    MotionSpec s = small_spec(10);
    s.frame_w = s.frame_h = 48;
    s.length = 700;
    s.target_vx = s.target_vy = 0.0;
    s.target_accel_sigma = 0.0;
    s.target_x = s.target_y = 24;
    s.target_w = 10;
    s.target_h = 8;
    s.distractors = 3;
    s.distractor_orbit = 12.0;
    RenderedSequence seq = render(simulate(s), "x");
    REQUIRE(seq.annotation.attributes[eval::kLEN] == 1);  // 700 frames: medium
    REQUIRE(seq.annotation.attributes[eval::kSD] == 1);
    REQUIRE(seq.annotation.attributes[eval::kCM] == 0);
}

TEST_CASE("auto attributes from the emitted annotation match the generator truth") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        MotionSpec s = small_spec(100 + seed);
        s.length = 40;
        s.target_accel_sigma = 0.25;
        s.target_vx = (seed % 2) ? 2.2 : 0.4;
        s.camera_jitter_sigma = (seed % 3) ? 0.4 : 0.0;
        s.zoom_rate = (seed % 4 == 0) ? 0.01 : 0.0;
        RenderedSequence seq = render(simulate(s), "x");
        auto derived = eval::auto_attributes(seq.annotation);
        for (std::size_t a : {eval::kSO, eval::kFM, eval::kSV, eval::kARV, eval::kOV, eval::kLEN}) {
            INFO("seed " << seed << " attribute " << eval::attr_names()[a]);
            REQUIRE(derived.attributes[a] == seq.generator_attributes[a]);
        }
    }
}

TEST_CASE("spec config parsing validates keys and values") {
    TempDir tmp("stsk_spec_cfg");
    img::write_png((tmp.path / "unused.png").string(), img::ImageFrame(4, 4));  // warm the dir
    {
        std::ofstream out(tmp.path / "good.cfg");
        out << "# comment\nframe_w = 128\nframe_h=128\nlength = 20\nseed=5\n"
            << "target_w=12\ntarget_h=9\ndistractors=2\ncolor=red\n";
    }
    MotionSpec s = parse_motion_spec(tmp.path / "good.cfg");
    REQUIRE(s.frame_w == 128);
    REQUIRE(s.length == 20);
    REQUIRE(s.distractors == 2);
    REQUIRE(s.color == "red");

    {
        std::ofstream out(tmp.path / "bad.cfg");
        out << "no_such_key=3\n";
    }
    REQUIRE_THROWS_AS(parse_motion_spec(tmp.path / "bad.cfg"), ParseError);
    {
        std::ofstream out(tmp.path / "bad2.cfg");
        out << "length=oops\n";
    }
    REQUIRE_THROWS_AS(parse_motion_spec(tmp.path / "bad2.cfg"), ParseError);
    REQUIRE_THROWS_AS(parse_motion_spec(tmp.path / "missing.cfg"), ParseError);
}
