#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "stsk/eval.hpp"
#include "stsk/synth.hpp"
#include "stsk/tracker.hpp"

namespace stsk::cli {

// Exit code contract: 0 success, 1 selfcheck/internal failure, 2 bad input,
// 3 model/config mismatch.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitBadInput = 2;
inline constexpr int kExitConfigMismatch = 3;

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("STSK_LOG");
        if (!env) return LogLevel::Info;
        const std::string v = env;
        if (v == "quiet" || v == "0") return LogLevel::Quiet;
        if (v == "debug" || v == "2") return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

inline void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::fprintf(stderr, "%s\n", msg.c_str());
}
inline void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::Debug) std::fprintf(stderr, "%s\n", msg.c_str());
}

struct GlobalOpts {
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
};

namespace detail {

// sorted sequence subdirectories (anything holding a groundtruth.txt)
inline std::vector<std::filesystem::path> sequence_dirs(const std::filesystem::path& data) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(data)) throw IoError("not a directory: " + data.string());
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(data))
        if (entry.is_directory() && fs::exists(entry.path() / "groundtruth.txt"))
            dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

inline void parallel_over(std::size_t n, std::size_t jobs,
                          const std::function<void(std::size_t)>& work) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t workers = std::min(jobs, n);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) work(i);
        });
    for (auto& t : pool) t.join();
}

inline void write_result_file(const std::filesystem::path& file,
                              const std::vector<box::Box>& boxes) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    char buf[160];
    for (const box::Box& b : boxes) {
        // 17 significant digits so the text round-trips to the same double
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", b.x, b.y, b.w, b.h);
        out << buf;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

inline int cmd_synth(const std::string& spec_file, const std::string& out_dir, std::size_t count,
                     const GlobalOpts& g) {
    synth::MotionSpec base = synth::parse_motion_spec(spec_file);
    std::filesystem::create_directories(out_dir);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    std::exception_ptr err;
    std::mutex err_mu;
    detail::parallel_over(count, g.jobs, [&](std::size_t i) {
        try {
            synth::MotionSpec spec = base;
            spec.seed = hash_mix(base.seed + g.seed, i);
            char name[32];
            std::snprintf(name, sizeof(name), "seq%04zu", i);
            synth::RenderedSequence seq = synth::render(synth::simulate(spec), name);
            synth::emit(seq, std::filesystem::path(out_dir) / name);
            log_debug(std::string("generated ") + name);
        } catch (...) {
            std::scoped_lock lock(err_mu);
            if (!err) err = std::current_exception();
        }
    });
    if (err) std::rethrow_exception(err);
    log_info("synth: wrote " + std::to_string(count) + " sequences to " + out_dir);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// track
// ---------------------------------------------------------------------------

struct TrackOpts {
    std::string model_file;
    std::string data_dir;
    std::string out_dir;
    bool no_temporal = false;
    bool no_semantic = false;
    bool oracle = false;
};

inline int cmd_track(const TrackOpts& opt, const GlobalOpts& g) {
    namespace fs = std::filesystem;
    model::LoadedModel loaded;
    if (!opt.oracle) {
        try {
            loaded = model::load_model(opt.model_file);
        } catch (const IoError&) {
            throw;  // missing file: bad input
        } catch (const std::exception& e) {
            throw ConfigError(e.what());  // wrong magic/version/count: mismatch
        }
        if (opt.no_temporal) loaded.config.enable_temporal = false;
        if (opt.no_semantic) loaded.config.enable_semantic = false;
    }
    const auto dirs = detail::sequence_dirs(opt.data_dir);
    if (dirs.empty()) throw IoError("no sequences under " + opt.data_dir);
    fs::create_directories(opt.out_dir);

    std::atomic<std::size_t> tracked{0};
    std::exception_ptr err;
    std::mutex err_mu;
    detail::parallel_over(dirs.size(), g.jobs, [&](std::size_t i) {
        try {
            std::vector<std::string> warnings;
            eval::SequenceAnnotation ann = eval::parse_sequence(dirs[i], &warnings);
            for (const auto& w : warnings) log_debug(ann.id + ": " + w);
            std::vector<box::Box> boxes;
            if (opt.oracle) {
                boxes = ann.boxes;
            } else {
                if (!fs::exists(dirs[i] / "frames" / eval::frame_file_name(0)))
                    throw IoError("sequence " + ann.id + " has no frames/");
                // thread-local copy: forwards mutate nothing, but keep it tidy
                model::ModelParams params = loaded.params;
                tracker::OpeResult r =
                    tracker::run_ope(loaded.config, params, ann, [&](std::size_t f) {
                        return img::read_png(
                            (dirs[i] / "frames" / eval::frame_file_name(f)).string(), f);
                    });
                boxes = r.boxes;
                log_debug(ann.id + ": " + std::to_string(r.fps) + " fps");
            }
            detail::write_result_file(fs::path(opt.out_dir) / (ann.id + ".txt"), boxes);
            ++tracked;
        } catch (...) {
            std::scoped_lock lock(err_mu);
            if (!err) err = std::current_exception();
        }
    });
    if (err) std::rethrow_exception(err);
    log_info("track: wrote " + std::to_string(tracked.load()) + " result files to " +
             opt.out_dir);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline int cmd_eval(const std::string& data_dir, const std::string& results_dir,
                    const std::string& report_dir, const GlobalOpts& g) {
    namespace fs = std::filesystem;
    const auto dirs = detail::sequence_dirs(data_dir);
    if (dirs.empty()) throw IoError("no sequences under " + data_dir);
    if (!fs::is_directory(results_dir)) throw IoError("not a directory: " + results_dir);

    std::vector<eval::SequenceAnnotation> anns(dirs.size());
    std::exception_ptr err;
    std::mutex err_mu;
    detail::parallel_over(dirs.size(), g.jobs, [&](std::size_t i) {
        try {
            anns[i] = eval::parse_sequence(dirs[i]);
        } catch (...) {
            std::scoped_lock lock(err_mu);
            if (!err) err = std::current_exception();
        }
    });
    if (err) std::rethrow_exception(err);

    std::vector<eval::TrackResult> results;
    for (const auto& entry : fs::directory_iterator(results_dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        results.push_back(
            eval::parse_result_file(entry.path(), entry.path().stem().string()));
    }
    std::sort(results.begin(), results.end(),
              [](const auto& a, const auto& b) { return a.sequence_id < b.sequence_id; });

    eval::BenchmarkReport rep = eval::evaluate_benchmark(anns, results);
    for (const std::string& w : rep.warnings) log_info("eval: warning: " + w);
    fs::create_directories(report_dir);
    eval::write_report_csv(fs::path(report_dir) / "report.csv", rep);
    eval::write_attributes_csv(fs::path(report_dir) / "attributes.csv", rep);
    eval::write_curves_csv(report_dir, rep);
    if (!rep.per_sequence.empty()) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "eval: %zu sequences  pre=%.4f npre=%.4f auc=%.4f cauc=%.4f macc=%.4f",
                      rep.per_sequence.size(), rep.aggregate.pre, rep.aggregate.npre,
                      rep.aggregate.auc, rep.aggregate.cauc, rep.aggregate.macc);
        log_info(buf);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

inline int cmd_stats(const std::string& data_dir, const std::string& report_dir,
                     const GlobalOpts&) {
    namespace fs = std::filesystem;
    const auto dirs = detail::sequence_dirs(data_dir);
    if (dirs.empty()) throw IoError("no sequences under " + data_dir);
    std::vector<eval::SequenceAnnotation> anns;
    for (const auto& d : dirs) anns.push_back(eval::parse_sequence(d));
    eval::StatsBundle stats = eval::dataset_stats(
        anns, [&](std::size_t seq, std::size_t frame) -> std::optional<img::ImageFrame> {
            const fs::path p = dirs[seq] / "frames" / eval::frame_file_name(frame);
            if (!fs::exists(p)) return std::nullopt;
            return img::read_png(p.string(), frame);
        });
    fs::create_directories(report_dir);
    eval::write_stats_csv(report_dir, stats);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "stats: %zu sequences, mean brightness %.2f, mean speed %.4f",
                  anns.size(), stats.brightness.mean, stats.rel_speed.mean);
    log_info(buf);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
    std::string spec_file;
    std::string out_file;
    std::size_t steps = 300;
    std::size_t count = 8;   // synthetic sequences to train on
    double lr = 1e-3;
    bool no_temporal = false;
    bool no_semantic = false;
};

inline int cmd_train(const TrainOpts& opt, const GlobalOpts& g) {
    synth::MotionSpec base = synth::parse_motion_spec(opt.spec_file);
    std::vector<train::TrainSequence> data;
    for (std::size_t i = 0; i < opt.count; ++i) {
        synth::MotionSpec spec = base;
        spec.seed = hash_mix(base.seed + g.seed, 0x7472ULL + i);
        data.push_back(synth::to_train_sequence(synth::render(synth::simulate(spec), "train")));
    }
    model::ModelConfig cfg;
    cfg.seed = g.seed;
    cfg.enable_temporal = !opt.no_temporal;
    cfg.enable_semantic = !opt.no_semantic;
    train::TrainResult r = train::train_toy(cfg, data, opt.steps, opt.lr);
    model::save_model(opt.out_file, cfg, r.params);
    if (!r.loss_curve.empty()) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "train: %zu steps, loss %.4f -> %.4f", opt.steps,
                      r.loss_curve.front(), r.loss_curve.back());
        log_info(buf);
    }
    log_info("train: saved model to " + opt.out_file);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// selfcheck
// ---------------------------------------------------------------------------

inline int cmd_selfcheck(const GlobalOpts& g) {
    struct Suite {
        const char* name;
        std::function<bool()> run;
    };
    std::vector<Suite> suites;

    suites.push_back({"scan-equivalence", [&] {
        Rng rng(hash_mix(g.seed, 1));
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t n = 1 + rng.index(8);
            const std::size_t L = 1 + rng.index(64);
            ssm::ContinuousSSM s;
            s.A = random_normal({n, n}, rng, 0.3);
            for (std::size_t i = 0; i < n; ++i) s.A(i, i) -= 0.5;
            s.B = random_normal({n}, rng);
            s.C = random_normal({n}, rng);
            s.delta = rng.uniform(0.05, 0.5);
            auto d = ssm::discretize_zoh(s);
            std::vector<double> x(L);
            for (auto& v : x) v = rng.normal();
            auto yr = ssm::scan_recurrent(d, x);
            auto yc = ssm::scan_convolutional(d, x);
            for (std::size_t t = 0; t < L; ++t)
                if (std::abs(yr.y[t] - yc[t]) >= 1e-6) return false;
        }
        return true;
    }});

    suites.push_back({"zoh-analytics", [&] {
        ssm::ContinuousSSM s;
        s.A = Tensor({1, 1});
        s.A(0, 0) = 1.0;
        s.B = Tensor::vec({0.7});
        s.C = Tensor::vec({1.0});
        s.delta = std::log(2.0);
        auto d = ssm::discretize_zoh(s);
        if (std::abs(d.A_bar(0, 0) - 2.0) > 1e-9 || std::abs(d.B_bar[0] - 0.7) > 1e-9)
            return false;
        Rng rng(hash_mix(g.seed, 2));
        for (int trial = 0; trial < 10; ++trial) {
            Tensor m = random_normal({3, 3}, rng);
            m = (rng.uniform(0.01, 1.0) / frob_norm(m)) * m;
            if (max_abs_diff(ssm::zoh_input_factor_series(m),
                             ssm::zoh_input_factor_explicit(m)) >= 1e-9)
                return false;
        }
        return true;
    }});

    suites.push_back({"causality", [&] {
        Rng rng(hash_mix(g.seed, 3));
        const std::size_t L = 24, D = 8, N = 4;
        ssm::SelectiveProj p;
        p.W_dt = random_normal({D, D}, rng, 0.3);
        p.b_dt = Tensor({D}, 0.1);
        p.W_B = random_normal({N, D}, rng, 0.5);
        p.W_C = random_normal({N, D}, rng, 0.5);
        p.A = ssm::default_diag_A(D, N);
        Tensor tokens = random_normal({L, D}, rng);
        auto base = ssm::selective_scan(tokens, p);
        for (std::size_t k : {std::size_t{5}, std::size_t{15}}) {
            Tensor mod = tokens;
            mod(k, 2) += 1.0;
            auto r = ssm::selective_scan(mod, p);
            for (std::size_t t = 0; t < k; ++t)
                for (std::size_t d = 0; d < D; ++d)
                    if (r.y(t, d) != base.y(t, d)) return false;
        }
        return true;
    }});

    suites.push_back({"resumability", [&] {
        Rng rng(hash_mix(g.seed, 4));
        const std::size_t L = 20, D = 4, N = 4;
        ssm::SelectiveProj p;
        p.W_dt = random_normal({D, D}, rng, 0.3);
        p.b_dt = Tensor({D}, 0.1);
        p.W_B = random_normal({N, D}, rng, 0.5);
        p.W_C = random_normal({N, D}, rng, 0.5);
        p.A = ssm::default_diag_A(D, N);
        Tensor tokens = random_normal({L, D}, rng);
        auto full = ssm::selective_scan(tokens, p);
        Tensor head({10, D}), tail({10, D});
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t d = 0; d < D; ++d)
                (t < 10 ? head(t, d) : tail(t - 10, d)) = tokens(t, d);
        auto h1 = ssm::selective_scan(head, p);
        auto h2 = ssm::selective_scan(tail, p, h1.h_final);
        for (std::size_t t = 0; t < 10; ++t)
            for (std::size_t d = 0; d < D; ++d)
                if (h2.y(t, d) != full.y(10 + t, d)) return false;
        return max_abs_diff(h2.h_final, full.h_final) == 0.0;
    }});

    suites.push_back({"gradient-check", [&] {
        model::ModelConfig cfg;
        cfg.dim = 16;
        cfg.state_dim = 2;
        cfg.mlp_hidden = 24;
        cfg.head_hidden = 12;
        cfg.template_side = 32;
        cfg.search_side = 32;
        cfg.n_lang = 6;
        cfg.seed = g.seed;
        model::ModelParams params = model::init_params(cfg);
        Rng rng(hash_mix(g.seed, 5));
        train::TrainSequence seq;
        for (int i = 0; i < 2; ++i) {
            img::ImageFrame f(48, 48);
            for (std::size_t k = 0; k < f.pixels.numel(); ++k) f.pixels[k] = rng.uniform();
            seq.frames.push_back(f);
            seq.boxes.push_back({14.0 + i, 16.0, 10.0, 8.0});
            seq.visible.push_back(1);
        }
        seq.prompt = "drone";
        tok::StubVocab vocab;
        vocab.dim = cfg.dim;
        vocab.n_tokens = cfg.n_lang;
        auto clip = train::prepare_clip(cfg, seq, 0, vocab);
        if (!clip) return false;
        train::GradResult gr = train::clip_gradients(cfg, params, {*clip});
        model::ParamRegistry reg = model::registry(params);
        Rng pick(hash_mix(g.seed, 6));
        for (int checked = 0; checked < 6; ++checked) {
            const std::size_t ti = pick.index(reg.tensors.size());
            const std::size_t ei = pick.index(reg.tensors[ti]->numel());
            const double eps = 1e-5;
            const double saved = (*reg.tensors[ti])[ei];
            (*reg.tensors[ti])[ei] = saved + eps;
            const double up = train::clip_loss_value(cfg, params, {*clip});
            (*reg.tensors[ti])[ei] = saved - eps;
            const double dn = train::clip_loss_value(cfg, params, {*clip});
            (*reg.tensors[ti])[ei] = saved;
            const double num = (up - dn) / (2.0 * eps);
            const double ana = gr.grads[ti][ei];
            if (std::abs(num - ana) / std::max({1e-3, std::abs(num), std::abs(ana)}) >= 1e-3)
                return false;
        }
        return true;
    }});

    suites.push_back({"metric-oracle", [&] {
        std::vector<box::Box> boxes = {{10, 10, 20, 15}, {12, 11, 20, 15}, {14, 12, 21, 16}};
        eval::SequenceAnnotation ann;
        ann.id = "s";
        ann.boxes = boxes;
        ann.absent = {0, 0, 0};
        eval::TrackResult res{"s", boxes, 0.0};
        eval::MetricReport m = eval::evaluate_sequence(ann, res);
        return m.pre == 1.0 && m.npre == 1.0 && m.auc == 1.0 && m.cauc == 1.0 && m.macc == 1.0;
    }});

    bool all_ok = true;
    for (const Suite& s : suites) {
        bool ok = false;
        try {
            ok = s.run();
        } catch (const std::exception& e) {
            log_info(std::string("selfcheck: ") + s.name + " threw: " + e.what());
            ok = false;
        }
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", s.name);
        all_ok = all_ok && ok;
    }
    std::printf("selfcheck: %zu suites, %s\n", suites.size(), all_ok ? "all passed" : "FAILURES");
    return all_ok ? kExitOk : kExitFailure;
}

// Shared exception-to-exit-code mapping for main().
inline int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfigMismatch;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitBadInput;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitBadInput;
    } catch (const InvalidAnnotationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitBadInput;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    }
}

}  // namespace stsk::cli
