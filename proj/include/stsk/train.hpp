#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stsk/model.hpp"

namespace stsk::train {

// Minimal sequence view the trainer consumes; synthetic generation and the
// CLI adapt their own types to this.
struct TrainSequence {
    std::vector<img::ImageFrame> frames;
    std::vector<box::Box> boxes;   // per frame, frame pixels
    std::vector<char> visible;     // 1 = target present
    std::string prompt;
};

// A 2-frame clip, fully prepared in crop space (pure data, reusable across
// finite-difference evaluations).
struct PreparedFrame {
    img::ImageFrame search;
    model::TargetMaps targets;
};

struct PreparedClip {
    img::ImageFrame tmpl;
    Tensor lang;  // [N_l, D]
    std::vector<PreparedFrame> frames;
};

inline img::CropSpec template_spec(const model::ModelConfig& cfg) {
    return {4.0, cfg.template_side};
}
inline img::CropSpec search_spec(const model::ModelConfig& cfg) {
    return {16.0, cfg.search_side};
}

// Crop a search frame centered on `center_ref` (the previous frame's target,
// tracking-style) and express `gt` in crop coordinates. Fails when the target
// strays outside the crop.
inline std::optional<PreparedFrame> prepare_frame(const model::ModelConfig& cfg,
                                                  const img::ImageFrame& frame,
                                                  const box::Box& center_ref, const box::Box& gt) {
    img::CropResult crop = img::crop_and_resize(frame, center_ref, search_spec(cfg));
    const box::Box gt_crop = crop.window.to_crop(gt);
    const double S = static_cast<double>(cfg.search_side);
    if (gt_crop.cx() < 0.0 || gt_crop.cx() >= S || gt_crop.cy() < 0.0 || gt_crop.cy() >= S)
        return std::nullopt;
    PreparedFrame pf;
    pf.search = std::move(crop.image);
    pf.targets = model::build_targets(gt_crop, cfg.grid_x(), S);
    return pf;
}

// Clip = template from the sequence start + two consecutive search frames.
inline std::optional<PreparedClip> prepare_clip(const model::ModelConfig& cfg,
                                                const TrainSequence& seq, std::size_t i,
                                                const tok::StubVocab& vocab) {
    if (seq.frames.size() < 2 || i + 1 >= seq.frames.size()) return std::nullopt;
    if (!seq.visible[i] || !seq.visible[i + 1] || !seq.visible[0]) return std::nullopt;
    PreparedClip clip;
    clip.tmpl = img::crop_and_resize(seq.frames[0], seq.boxes[0], template_spec(cfg)).image;
    clip.lang = cfg.enable_semantic ? tok::encode_language(seq.prompt, vocab).tokens
                                    : Tensor({cfg.n_lang, cfg.dim});
    const box::Box& ref1 = (i > 0 && seq.visible[i - 1]) ? seq.boxes[i - 1] : seq.boxes[i];
    auto f1 = prepare_frame(cfg, seq.frames[i], ref1, seq.boxes[i]);
    auto f2 = prepare_frame(cfg, seq.frames[i + 1], seq.boxes[i], seq.boxes[i + 1]);
    if (!f1 || !f2) return std::nullopt;
    clip.frames.push_back(std::move(*f1));
    clip.frames.push_back(std::move(*f2));
    return clip;
}

// Mean per-frame loss over the clip, chained through the temporal token on a
// single tape so gradients flow across frames.
inline model::LossVars clip_loss_on_tape(ad::Tape& tape, const model::ModelConfig& cfg,
                                         const model::ModelVars& vars, const PreparedClip& clip) {
    ad::Var token = vars.t_init;
    std::vector<model::LossVars> per_frame;
    long frame_index = 0;
    for (const PreparedFrame& pf : clip.frames) {
        model::ForwardVars fw =
            model::forward_on_tape(tape, cfg, vars, clip.tmpl, pf.search, clip.lang, token);
        per_frame.push_back(model::loss_on_tape(tape, fw, pf.targets, cfg.grid_x()));
        if (cfg.enable_temporal) token = fw.t_new;
        ++frame_index;
    }
    const double inv = 1.0 / static_cast<double>(per_frame.size());
    model::LossVars sum = per_frame[0];
    for (std::size_t k = 1; k < per_frame.size(); ++k) {
        sum.cls = tape.add(sum.cls, per_frame[k].cls);
        sum.l1 = tape.add(sum.l1, per_frame[k].l1);
        sum.giou = tape.add(sum.giou, per_frame[k].giou);
        sum.total = tape.add(sum.total, per_frame[k].total);
    }
    sum.cls = tape.scale(sum.cls, inv);
    sum.l1 = tape.scale(sum.l1, inv);
    sum.giou = tape.scale(sum.giou, inv);
    sum.total = tape.scale(sum.total, inv);
    return sum;
}

struct GradResult {
    std::vector<Tensor> grads;  // registry order
    model::LossBreakdown loss;
};

// Exact reverse-mode gradients of the mean clip loss for every parameter.
inline GradResult clip_gradients(const model::ModelConfig& cfg, model::ModelParams& params,
                                 const std::vector<PreparedClip>& batch) {
    if (batch.empty()) throw ConfigError("empty batch");
    ad::Tape tape;
    model::ModelVars vars = model::make_vars(tape, params, true);
    model::LossVars total{};
    bool first = true;
    for (const auto& clip : batch) {
        model::LossVars lv = clip_loss_on_tape(tape, cfg, vars, clip);
        if (first) {
            total = lv;
            first = false;
        } else {
            total.cls = tape.add(total.cls, lv.cls);
            total.l1 = tape.add(total.l1, lv.l1);
            total.giou = tape.add(total.giou, lv.giou);
            total.total = tape.add(total.total, lv.total);
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    total.total = tape.scale(total.total, inv);

    GradResult r;
    r.loss.cls = tape.val(total.cls)[0] * inv;
    r.loss.l1 = tape.val(total.l1)[0] * inv;
    r.loss.giou = tape.val(total.giou)[0] * inv;
    r.loss.total = tape.val(total.total)[0];
    if (!std::isfinite(r.loss.total)) {
        std::string which = !std::isfinite(r.loss.cls)    ? "cls"
                            : !std::isfinite(r.loss.l1)   ? "l1"
                            : !std::isfinite(r.loss.giou) ? "giou"
                                                          : "total";
        throw GradientError("non-finite loss in component " + which);
    }
    tape.backward(total.total);

    std::vector<ad::Var*> leaf_vars;
    model::visit_model(vars, [&](const std::string&, ad::Var& v) { leaf_vars.push_back(&v); });
    r.grads.reserve(leaf_vars.size());
    for (ad::Var* v : leaf_vars) {
        const Tensor& g = tape.grad(*v);
        r.grads.push_back(g.numel() ? g : Tensor(tape.val(*v).shape()));
    }
    return r;
}

// Loss only (no tape bookkeeping); the finite-difference oracle calls this.
inline double clip_loss_value(const model::ModelConfig& cfg, model::ModelParams& params,
                              const std::vector<PreparedClip>& batch) {
    ad::Tape tape(false);
    model::ModelVars vars = model::make_vars(tape, params, false);
    double sum = 0.0;
    for (const auto& clip : batch)
        sum += tape.val(clip_loss_on_tape(tape, cfg, vars, clip).total)[0];
    return sum / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay), with the paper's x0.1 decay late in the run.
// ---------------------------------------------------------------------------

struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;

    std::vector<Tensor> m, v;
    std::size_t step_count = 0;

    void init(const model::ParamRegistry& reg) {
        m.clear();
        v.clear();
        for (Tensor* t : reg.tensors) {
            m.emplace_back(t->shape());
            v.emplace_back(t->shape());
        }
    }

    void step(const model::ParamRegistry& reg, const std::vector<Tensor>& grads, double lr_now) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < reg.tensors.size(); ++i) {
            Tensor& p = *reg.tensors[i];
            const Tensor& g = grads[i];
            for (std::size_t j = 0; j < p.numel(); ++j) {
                m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g[j];
                v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g[j] * g[j];
                const double mh = m[i][j] / bc1;
                const double vh = v[i][j] / bc2;
                p[j] -= lr_now * (mh / (std::sqrt(vh) + eps) + weight_decay * p[j]);
            }
        }
    }
};

struct TrainResult {
    model::ModelParams params;
    std::vector<double> loss_curve;
};

// Toy trainer: 2-frame clips sampled from the sequences, AdamW, learning rate
// decays x0.1 at 80% of the steps. Deterministic given cfg.seed.
inline TrainResult train_toy(const model::ModelConfig& cfg,
                             const std::vector<TrainSequence>& data, std::size_t steps,
                             double lr) {
    if (data.empty()) throw ConfigError("no training sequences");
    tok::StubVocab vocab;
    vocab.dim = cfg.dim;
    vocab.n_tokens = cfg.n_lang;

    TrainResult out;
    out.params = model::init_params(cfg);
    model::ParamRegistry reg = model::registry(out.params);
    AdamW opt;
    opt.lr = lr;
    opt.init(reg);

    Rng rng(hash_mix(cfg.seed, 0x747261696eULL));
    const std::size_t decay_at = (steps * 8) / 10;
    for (std::size_t step = 0; step < steps; ++step) {
        std::optional<PreparedClip> clip;
        for (int attempt = 0; attempt < 64 && !clip; ++attempt) {
            const TrainSequence& seq = data[rng.index(data.size())];
            if (seq.frames.size() < 2) continue;
            clip = prepare_clip(cfg, seq, rng.index(seq.frames.size() - 1), vocab);
        }
        if (!clip) throw ConfigError("could not sample a valid 2-frame clip");
        GradResult gr;
        try {
            gr = clip_gradients(cfg, out.params, {*clip});
        } catch (const GradientError& e) {
            throw GradientError("training diverged at step " + std::to_string(step) + ": " +
                                e.what());
        }
        const double lr_now = (lr == 0.0) ? 0.0 : (step >= decay_at ? lr * 0.1 : lr);
        opt.step(reg, gr.grads, lr_now);
        out.loss_curve.push_back(gr.loss.total);
    }
    return out;
}

}  // namespace stsk::train
