#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "stsk/autodiff.hpp"
#include "stsk/boxes.hpp"
#include "stsk/fusion.hpp"
#include "stsk/image.hpp"
#include "stsk/tokenize.hpp"

namespace stsk::model {

struct ModelConfig {
    std::size_t dim = 64;                // channel width D
    std::size_t state_dim = 8;           // selective-scan state per channel
    std::size_t n_backbone_blocks = 1;   // attention+MLP blocks per stage
    std::size_t m_sts = 2;               // selective blocks per STS module
    std::size_t stages = 2;
    std::size_t template_side = 64;
    std::size_t search_side = 128;
    std::size_t n_lang = 40;
    std::size_t mlp_hidden = 128;
    std::size_t head_hidden = 64;
    bool enable_temporal = true;
    bool enable_hier_spatial = true;
    bool enable_semantic = true;
    std::uint64_t seed = 0;

    std::size_t grid_z() const { return template_side / tok::kPatchStride; }
    std::size_t grid_x() const { return search_side / tok::kPatchStride; }
    std::size_t n_z() const { return grid_z() * grid_z(); }
    std::size_t n_x() const { return grid_x() * grid_x(); }
    double stride_px() const { return static_cast<double>(tok::kPatchStride); }

    void validate() const {
        if (dim == 0 || dim % 4 != 0) throw ConfigError("dim must be a positive multiple of 4");
        if (state_dim == 0 || n_backbone_blocks == 0 || m_sts == 0 || stages == 0)
            throw ConfigError("all block counts must be >= 1");
        if (template_side % tok::kPatchStride != 0 || search_side % tok::kPatchStride != 0)
            throw ConfigError("image sides must be divisible by 16");
        if (template_side % 8 != 0 || search_side % 8 != 0)
            throw ConfigError("image sides must survive two 2x2 merges");
    }
};

// ---------------------------------------------------------------------------
// Parameters. A single templated family gives the Tensor storage and the
// tape-Var mirror the same field order; visit_model() enumerates leaves in
// declaration order, which fixes the serialization blob layout.
// ---------------------------------------------------------------------------

template <class T>
struct EmbedT {
    T w_patch;  // [48, D/4]
    T w_m1;     // [D, D/2]
    T w_m2;     // [2D, D]
    T w_flat;   // [768, D] flat ViT path (hier-spatial ablation)
    T pos_z;    // [N_z, D]
    T pos_x;    // [N_x, D]
};

template <class T>
struct AttnBlockT {
    T ln1_g, ln1_b;          // [D]
    T w_q, w_k, w_v, w_o;    // [D, D]
    T b_q, b_k, b_v, b_o;    // [D]
    T ln2_g, ln2_b;          // [D]
    T w_h1;                  // [D, M]
    T b_h1;                  // [M]
    T w_h2;                  // [M, D]
    T b_h2;                  // [D]
};

template <class T>
struct HeadBranchT {
    T w1;  // [D, H]
    T b1;  // [H]
    T w2;  // [H, out]
    T b2;  // [out]
};

template <class T>
struct StageT {
    std::vector<AttnBlockT<T>> attn;
    std::vector<fuse::StsBlockT<T>> sts;
};

template <class T>
struct ModelT {
    EmbedT<T> embed;
    T t_init;  // [1, D] temporal token init, drawn once at model init
    std::vector<StageT<T>> stages;
    HeadBranchT<T> head_cls;   // out = 1
    HeadBranchT<T> head_off;   // out = 2
    HeadBranchT<T> head_size;  // out = 2
};

using ModelParams = ModelT<Tensor>;
using ModelVars = ModelT<ad::Var>;

template <class T, class F>
void visit_attn(AttnBlockT<T>& a, const std::string& p, F&& f) {
    f(p + ".ln1_g", a.ln1_g);
    f(p + ".ln1_b", a.ln1_b);
    f(p + ".w_q", a.w_q);
    f(p + ".w_k", a.w_k);
    f(p + ".w_v", a.w_v);
    f(p + ".w_o", a.w_o);
    f(p + ".b_q", a.b_q);
    f(p + ".b_k", a.b_k);
    f(p + ".b_v", a.b_v);
    f(p + ".b_o", a.b_o);
    f(p + ".ln2_g", a.ln2_g);
    f(p + ".ln2_b", a.ln2_b);
    f(p + ".w_h1", a.w_h1);
    f(p + ".b_h1", a.b_h1);
    f(p + ".w_h2", a.w_h2);
    f(p + ".b_h2", a.b_h2);
}

template <class T, class F>
void visit_sts(fuse::StsBlockT<T>& s, const std::string& p, F&& f) {
    f(p + ".a_log", s.a_log);
    f(p + ".w_dt", s.w_dt);
    f(p + ".b_dt", s.b_dt);
    f(p + ".w_b", s.w_b);
    f(p + ".w_c", s.w_c);
    f(p + ".w_out", s.w_out);
    f(p + ".b_out", s.b_out);
}

template <class T, class F>
void visit_head(HeadBranchT<T>& h, const std::string& p, F&& f) {
    f(p + ".w1", h.w1);
    f(p + ".b1", h.b1);
    f(p + ".w2", h.w2);
    f(p + ".b2", h.b2);
}

template <class T, class F>
void visit_model(ModelT<T>& m, F&& f) {
    f("embed.w_patch", m.embed.w_patch);
    f("embed.w_m1", m.embed.w_m1);
    f("embed.w_m2", m.embed.w_m2);
    f("embed.w_flat", m.embed.w_flat);
    f("embed.pos_z", m.embed.pos_z);
    f("embed.pos_x", m.embed.pos_x);
    f("t_init", m.t_init);
    for (std::size_t s = 0; s < m.stages.size(); ++s) {
        const std::string sp = "stage" + std::to_string(s);
        for (std::size_t b = 0; b < m.stages[s].attn.size(); ++b)
            visit_attn(m.stages[s].attn[b], sp + ".attn" + std::to_string(b), f);
        for (std::size_t b = 0; b < m.stages[s].sts.size(); ++b)
            visit_sts(m.stages[s].sts[b], sp + ".sts" + std::to_string(b), f);
    }
    visit_head(m.head_cls, "head_cls", f);
    visit_head(m.head_off, "head_off", f);
    visit_head(m.head_size, "head_size", f);
}

inline ModelParams init_params(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(hash_mix(cfg.seed, 0x6d6f64656cULL));
    auto xavier = [&](std::size_t fin, std::size_t fout) {
        return random_normal({fin, fout}, rng, std::sqrt(2.0 / static_cast<double>(fin + fout)));
    };
    const std::size_t D = cfg.dim, N = cfg.state_dim, M = cfg.mlp_hidden, H = cfg.head_hidden;

    ModelParams p;
    p.embed.w_patch = xavier(48, D / 4);
    p.embed.w_m1 = xavier(D, D / 2);
    p.embed.w_m2 = xavier(2 * D, D);
    p.embed.w_flat = xavier(768, D);
    p.embed.pos_z = random_normal({cfg.n_z(), D}, rng, 0.02);
    p.embed.pos_x = random_normal({cfg.n_x(), D}, rng, 0.02);
    p.t_init = random_normal({1, D}, rng, 0.5);

    p.stages.resize(cfg.stages);
    for (auto& st : p.stages) {
        st.attn.resize(cfg.n_backbone_blocks);
        for (auto& a : st.attn) {
            a.ln1_g = Tensor({D}, 1.0);
            a.ln1_b = Tensor({D});
            a.w_q = xavier(D, D);
            a.w_k = xavier(D, D);
            a.w_v = xavier(D, D);
            a.w_o = xavier(D, D);
            a.b_q = Tensor({D});
            a.b_k = Tensor({D});
            a.b_v = Tensor({D});
            a.b_o = Tensor({D});
            a.ln2_g = Tensor({D}, 1.0);
            a.ln2_b = Tensor({D});
            a.w_h1 = xavier(D, M);
            a.b_h1 = Tensor({M});
            a.w_h2 = xavier(M, D);
            a.b_h2 = Tensor({D});
        }
        st.sts.resize(cfg.m_sts);
        for (auto& s : st.sts) {
            s.a_log = Tensor({D, N});
            for (std::size_t d = 0; d < D; ++d)
                for (std::size_t n = 0; n < N; ++n)
                    s.a_log(d, n) = std::log(static_cast<double>(n + 1));
            s.w_dt = random_normal({D, D}, rng, 0.02);
            s.b_dt = Tensor({D}, -4.0);  // softplus(-4) ~ 0.018, gentle decay over the sequence
            s.w_b = xavier(D, N);
            s.w_c = xavier(D, N);
            s.w_out = random_normal({D, D}, rng, 0.02);
            s.b_out = Tensor({D});
        }
    }

    auto head = [&](std::size_t out, double bias2) {
        HeadBranchT<Tensor> h;
        h.w1 = xavier(D, H);
        h.b1 = Tensor({H});
        h.w2 = xavier(H, out);
        h.b2 = Tensor({out}, bias2);
        return h;
    };
    p.head_cls = head(1, -2.0);  // background-prior bias
    p.head_off = head(2, 0.0);
    p.head_size = head(2, 0.0);
    return p;
}

struct ParamRegistry {
    std::vector<std::string> names;
    std::vector<Tensor*> tensors;

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (auto* t : tensors) n += t->numel();
        return n;
    }
};

inline ParamRegistry registry(ModelParams& p) {
    ParamRegistry r;
    visit_model(p, [&](const std::string& name, Tensor& t) {
        r.names.push_back(name);
        r.tensors.push_back(&t);
    });
    return r;
}

inline ModelVars make_vars(ad::Tape& tape, ModelParams& p, bool requires_grad) {
    ModelVars v;
    v.stages.resize(p.stages.size());
    for (std::size_t s = 0; s < p.stages.size(); ++s) {
        v.stages[s].attn.resize(p.stages[s].attn.size());
        v.stages[s].sts.resize(p.stages[s].sts.size());
    }
    std::vector<Tensor*> pt;
    visit_model(p, [&](const std::string&, Tensor& t) { pt.push_back(&t); });
    std::vector<ad::Var*> pv;
    visit_model(v, [&](const std::string&, ad::Var& var) { pv.push_back(&var); });
    for (std::size_t i = 0; i < pt.size(); ++i) *pv[i] = tape.leaf(*pt[i], requires_grad);
    return v;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

inline ad::Var attn_block(ad::Tape& t, ad::Var x, const AttnBlockT<ad::Var>& a, double dim) {
    ad::Var n1 = t.layernorm_rows(x, a.ln1_g, a.ln1_b);
    ad::Var q = ad::linear(t, n1, a.w_q, a.b_q);
    ad::Var k = ad::linear(t, n1, a.w_k, a.b_k);
    ad::Var v = ad::linear(t, n1, a.w_v, a.b_v);
    ad::Var scores = t.scale(t.matmul(q, t.transpose(k)), 1.0 / std::sqrt(dim));
    ad::Var ctx = t.matmul(t.softmax_rows(scores), v);
    x = t.add(x, ad::linear(t, ctx, a.w_o, a.b_o));
    ad::Var n2 = t.layernorm_rows(x, a.ln2_g, a.ln2_b);
    ad::Var h = ad::linear(t, t.gelu(ad::linear(t, n2, a.w_h1, a.b_h1)), a.w_h2, a.b_h2);
    return t.add(x, h);
}

inline ad::Var head_branch(ad::Tape& t, ad::Var x, const HeadBranchT<ad::Var>& h) {
    return t.sigmoid(ad::linear(t, t.gelu(ad::linear(t, x, h.w1, h.b1)), h.w2, h.b2));
}

// Tape-bound head outputs plus the new temporal token.
struct ForwardVars {
    ad::Var cls;    // [N_x, 1]
    ad::Var off;    // [N_x, 2]
    ad::Var size;   // [N_x, 2]
    ad::Var t_new;  // [1, D]
};

// One frame through the full stack. `t_prev` must be a [1,D] var on the same
// tape (the training loop chains frames through it).
inline ForwardVars forward_on_tape(ad::Tape& t, const ModelConfig& cfg, const ModelVars& v,
                                   const img::ImageFrame& tmpl, const img::ImageFrame& search,
                                   const Tensor& lang_tokens, ad::Var t_prev) {
    if (tmpl.width() != cfg.template_side || search.width() != cfg.search_side)
        throw ConfigError("input crop sizes do not match the model configuration");

    ad::Var f_z, f_x;
    if (cfg.enable_hier_spatial) {
        f_z = tok::embed_hierarchical(t, tmpl, v.embed.w_patch, v.embed.w_m1, v.embed.w_m2);
        f_x = tok::embed_hierarchical(t, search, v.embed.w_patch, v.embed.w_m1, v.embed.w_m2);
    } else {
        f_z = tok::embed_flat(t, tmpl, v.embed.w_flat);
        f_x = tok::embed_flat(t, search, v.embed.w_flat);
    }
    f_z = t.add(f_z, v.embed.pos_z);
    f_x = t.add(f_x, v.embed.pos_x);

    ad::Var f_l;
    if (cfg.enable_semantic) {
        if (lang_tokens.rows() != cfg.n_lang || lang_tokens.cols() != cfg.dim)
            throw ShapeError("language token matrix must be [N_l, D]");
        f_l = t.constant(lang_tokens);
    } else {
        f_l = t.constant(Tensor({cfg.n_lang, cfg.dim}));
    }

    // When temporal modeling is ablated the token is frozen at its init value;
    // the incoming token is ignored entirely.
    ad::Var token = cfg.enable_temporal ? t_prev : v.t_init;
    for (std::size_t s = 0; s < cfg.stages; ++s) {
        // The backbone's global attention operates on the fused token set, so
        // language and temporal context can reach the search tokens; the
        // selective scan itself stays strictly causal in the fixed segment
        // order.
        fuse::FusedSeq fused = fuse::fuse_inputs(t, f_z, f_x, f_l, token, s);
        for (const auto& blk : v.stages[s].attn)
            fused.tokens = attn_block(t, fused.tokens, blk, static_cast<double>(cfg.dim));
        auto out = fuse::sts_mamba_forward(t, fused, v.stages[s].sts);
        auto parts = fuse::split_fused(t, out.z_out);
        f_z = parts.f_z;
        f_x = parts.f_x;
        // language tokens are re-injected fresh each stage; the temporal token
        // propagates stage to stage (and frame to frame) unless ablated
        if (cfg.enable_temporal) token = out.t_new;
    }

    ForwardVars fw;
    fw.cls = head_branch(t, f_x, v.head_cls);
    fw.off = head_branch(t, f_x, v.head_off);
    fw.size = head_branch(t, f_x, v.head_size);
    fw.t_new = token;
    return fw;
}

// Plain-struct head maps for decoding / reporting.
struct HeadOutput {
    Tensor cls;   // [G, G, 1]
    Tensor off;   // [G, G, 2]
    Tensor size;  // [G, G, 2]
};

inline HeadOutput materialize(const ad::Tape& t, const ForwardVars& f, std::size_t grid) {
    HeadOutput h;
    h.cls = t.val(f.cls);
    h.off = t.val(f.off);
    h.size = t.val(f.size);
    h.cls.reshape({grid, grid, 1});
    h.off.reshape({grid, grid, 2});
    h.size.reshape({grid, grid, 2});
    return h;
}

// Convenience wrapper for single-frame inference.
struct ForwardResult {
    HeadOutput head;
    fuse::TemporalToken token;
};

inline ForwardResult forward(const ModelConfig& cfg, ModelParams& params,
                             const img::ImageFrame& tmpl, const img::ImageFrame& search,
                             const Tensor& lang_tokens, const fuse::TemporalToken& t_prev,
                             long frame_index) {
    ad::Tape tape(false);
    ModelVars vars = make_vars(tape, params, false);
    ad::Var tv = tape.constant(t_prev.value);
    ForwardVars fw = forward_on_tape(tape, cfg, vars, tmpl, search, lang_tokens, tv);
    ForwardResult r;
    r.head = materialize(tape, fw, cfg.grid_x());
    r.token = t_prev;
    advance_token(r.token, tape.val(fw.t_new), frame_index);
    return r;
}

// ---------------------------------------------------------------------------
// Anchor-free decoding
// ---------------------------------------------------------------------------

struct BoxPrediction {
    box::Box box;  // source-frame pixels
    double score = 0.0;
    bool low_confidence = false;
};

// argmax of the class map (ties -> lowest row-major index), offset-adjusted
// center, size as a fraction of the crop side, mapped back through the crop.
inline BoxPrediction decode_box(const HeadOutput& h, const img::CropWindow& window,
                                double frame_w, double frame_h) {
    const std::size_t G = h.cls.dim(0);
    std::size_t best = 0;
    double best_v = h.cls[0];
    for (std::size_t i = 1; i < G * G; ++i)
        if (h.cls[i] > best_v) {
            best_v = h.cls[i];
            best = i;
        }
    const std::size_t r = best / G, c = best % G;
    const double S = static_cast<double>(window.out_size);
    const double stride = S / static_cast<double>(G);
    const double cx = (static_cast<double>(c) + h.off(r, c, 0)) * stride;
    const double cy = (static_cast<double>(r) + h.off(r, c, 1)) * stride;
    const double bw = h.size(r, c, 0) * S;
    const double bh = h.size(r, c, 1) * S;
    box::Box crop_box{cx - 0.5 * bw, cy - 0.5 * bh, bw, bh};

    BoxPrediction p;
    p.box = window.to_frame(crop_box);
    p.score = best_v;
    p.low_confidence = !(best_v > 0.0);
    // clip to frame bounds, preserving at least one pixel of extent
    box::Box clipped = box::clip_to_frame(p.box, frame_w, frame_h);
    if (clipped.w < 1.0) {
        clipped.x = std::clamp(p.box.x, 0.0, frame_w - 1.0);
        clipped.w = 1.0;
    }
    if (clipped.h < 1.0) {
        clipped.y = std::clamp(p.box.y, 0.0, frame_h - 1.0);
        clipped.h = 1.0;
    }
    p.box = clipped;
    return p;
}

// ---------------------------------------------------------------------------
// Loss: penalty-reduced focal on a splatted Gaussian heatmap, plus L1 and
// GIoU on the box decoded at the ground-truth cell. total = cls + 5 l1 + 2 giou.
// ---------------------------------------------------------------------------

inline constexpr double kLambdaL1 = 5.0;
inline constexpr double kLambdaGiou = 2.0;

// CornerNet radius rule: largest radius keeping IoU >= min_overlap for the
// three corner-shift cases.
inline double gaussian_radius(double h, double w, double min_overlap = 0.7) {
    const double a1 = 1.0, b1 = h + w, c1 = w * h * (1.0 - min_overlap) / (1.0 + min_overlap);
    const double r1 = (b1 - std::sqrt(std::max(0.0, b1 * b1 - 4.0 * a1 * c1))) / (2.0 * a1);
    const double a2 = 4.0, b2 = 2.0 * (h + w), c2 = (1.0 - min_overlap) * w * h;
    const double r2 = (b2 - std::sqrt(std::max(0.0, b2 * b2 - 4.0 * a2 * c2))) / (2.0 * a2);
    const double a3 = 4.0 * min_overlap, b3 = -2.0 * min_overlap * (h + w);
    const double c3 = (min_overlap - 1.0) * w * h;
    const double r3 = (-b3 + std::sqrt(std::max(0.0, b3 * b3 - 4.0 * a3 * c3))) / (2.0 * a3);
    return std::min({r1, r2, r3});
}

struct TargetMaps {
    Tensor heat;        // [G*G, 1]
    std::size_t cell;   // row-major peak index
    double off_x, off_y;
    double size_w, size_h;       // fractions of the crop side
    double gt_x1, gt_y1, gt_x2, gt_y2;  // normalized [0,1] corners
};

inline TargetMaps build_targets(const box::Box& gt_crop_px, std::size_t grid, double crop_side) {
    if (gt_crop_px.degenerate()) throw InvalidAnnotationError("ground-truth box has w or h <= 0");
    const double stride = crop_side / static_cast<double>(grid);
    const double gcx = gt_crop_px.cx() / stride;
    const double gcy = gt_crop_px.cy() / stride;
    const long col = std::clamp(static_cast<long>(std::floor(gcx)), 0L,
                                static_cast<long>(grid) - 1);
    const long row = std::clamp(static_cast<long>(std::floor(gcy)), 0L,
                                static_cast<long>(grid) - 1);
    TargetMaps tm;
    tm.cell = static_cast<std::size_t>(row) * grid + static_cast<std::size_t>(col);
    tm.off_x = std::clamp(gcx - static_cast<double>(col), 0.0, 1.0);
    tm.off_y = std::clamp(gcy - static_cast<double>(row), 0.0, 1.0);
    tm.size_w = gt_crop_px.w / crop_side;
    tm.size_h = gt_crop_px.h / crop_side;
    tm.gt_x1 = gt_crop_px.x / crop_side;
    tm.gt_y1 = gt_crop_px.y / crop_side;
    tm.gt_x2 = gt_crop_px.x2() / crop_side;
    tm.gt_y2 = gt_crop_px.y2() / crop_side;

    tm.heat = Tensor({grid * grid, 1});
    const double radius =
        std::max(0.0, std::floor(gaussian_radius(gt_crop_px.h / stride, gt_crop_px.w / stride)));
    const double sigma = (2.0 * radius + 1.0) / 6.0;
    for (std::size_t r = 0; r < grid; ++r)
        for (std::size_t c = 0; c < grid; ++c) {
            const double dx = static_cast<double>(c) - static_cast<double>(col);
            const double dy = static_cast<double>(r) - static_cast<double>(row);
            const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            tm.heat(r * grid + c, 0) = g;
        }
    tm.heat(tm.cell, 0) = 1.0;
    return tm;
}

struct LossBreakdown {
    double cls = 0.0;
    double l1 = 0.0;
    double giou = 0.0;
    double total = 0.0;
};

struct LossVars {
    ad::Var cls, l1, giou, total;
};

inline LossVars loss_on_tape(ad::Tape& t, const ForwardVars& f, const TargetMaps& tm,
                             std::size_t grid) {
    const std::size_t cells = grid * grid;

    // classification: penalty-reduced focal loss, single positive cell
    Tensor pos_mask({cells, 1}), neg_w({cells, 1});
    for (std::size_t i = 0; i < cells; ++i) {
        const double y = tm.heat[i];
        if (i == tm.cell) pos_mask[i] = 1.0;
        else neg_w[i] = std::pow(1.0 - y, 4.0);
    }
    ad::Var p = f.cls;
    ad::Var one_m_p = t.sub_from_scalar(1.0, p);
    ad::Var pos_term = t.sum_all(
        t.mul_const(t.mul(t.pow_const(one_m_p, 2.0), t.log_guarded(p)), pos_mask));
    ad::Var neg_term = t.sum_all(
        t.mul_const(t.mul(t.pow_const(p, 2.0), t.log_guarded(one_m_p)), neg_w));
    ad::Var cls = t.scale(t.add(pos_term, neg_term), -1.0);

    // regression at the ground-truth cell, normalized crop coordinates
    const std::size_t k = tm.cell;
    ad::Var off_k = t.gather_elems(f.off, {k * 2, k * 2 + 1});    // [2]
    ad::Var size_k = t.gather_elems(f.size, {k * 2, k * 2 + 1});  // [2]
    Tensor cell_base({2});
    cell_base[0] = static_cast<double>(k % grid);
    cell_base[1] = static_cast<double>(k / grid);
    const double inv_g = 1.0 / static_cast<double>(grid);
    ad::Var center = t.scale(t.add(off_k, t.constant(cell_base)), inv_g);  // [2]
    ad::Var half = t.scale(size_k, 0.5);
    ad::Var xy1 = t.sub(center, half);
    ad::Var xy2 = t.add(center, half);

    Tensor g1({2}), g2({2});
    g1[0] = tm.gt_x1;
    g1[1] = tm.gt_y1;
    g2[0] = tm.gt_x2;
    g2[1] = tm.gt_y2;
    ad::Var g1v = t.constant(g1), g2v = t.constant(g2);

    ad::Var l1 = t.scale(t.add(t.sum_all(t.abs(t.sub(xy1, g1v))),
                               t.sum_all(t.abs(t.sub(xy2, g2v)))),
                         0.25);

    ad::Var iwh = t.relu(t.sub(t.vmin(xy2, g2v), t.vmax(xy1, g1v)));
    ad::Var inter = t.mul(t.gather_elems(iwh, {0}), t.gather_elems(iwh, {1}));
    ad::Var wh = t.sub(xy2, xy1);
    ad::Var area_p = t.mul(t.gather_elems(wh, {0}), t.gather_elems(wh, {1}));
    const double area_g = (tm.gt_x2 - tm.gt_x1) * (tm.gt_y2 - tm.gt_y1);
    ad::Var uni = t.add_scalar(t.sub(area_p, inter), area_g);
    ad::Var iou = t.div(inter, uni);
    ad::Var hwh = t.sub(t.vmax(xy2, g2v), t.vmin(xy1, g1v));
    ad::Var hull = t.mul(t.gather_elems(hwh, {0}), t.gather_elems(hwh, {1}));
    ad::Var giou = t.sub(iou, t.div(t.sub(hull, uni), hull));
    ad::Var giou_loss = t.sub_from_scalar(1.0, giou);

    LossVars lv;
    lv.cls = cls;
    lv.l1 = l1;
    lv.giou = giou_loss;
    lv.total = t.add(cls, t.add(t.scale(l1, kLambdaL1), t.scale(giou_loss, kLambdaGiou)));
    return lv;
}

// Plain wrapper: runs the same graph with the maps as constants.
inline LossBreakdown compute_loss(const HeadOutput& h, const box::Box& gt_crop_px,
                                  double crop_side) {
    const std::size_t grid = h.cls.dim(0);
    TargetMaps tm = build_targets(gt_crop_px, grid, crop_side);
    ad::Tape t(false);
    ForwardVars f;
    Tensor cls = h.cls, off = h.off, size = h.size;
    cls.reshape({grid * grid, 1});
    off.reshape({grid * grid, 2});
    size.reshape({grid * grid, 2});
    f.cls = t.constant(cls);
    f.off = t.constant(off);
    f.size = t.constant(size);
    LossVars lv = loss_on_tape(t, f, tm, grid);
    LossBreakdown b;
    b.cls = t.val(lv.cls)[0];
    b.l1 = t.val(lv.l1)[0];
    b.giou = t.val(lv.giou)[0];
    b.total = t.val(lv.total)[0];
    if (!std::isfinite(b.total)) throw GradientError("non-finite loss");
    return b;
}

// ---------------------------------------------------------------------------
// Serialization: magic 'STSK', version, config block, little-endian f64 blob
// in declaration order.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& s, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& s, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(s, v);
}

struct Reader {
    const std::string& s;
    std::size_t pos = 0;
    std::uint8_t u8() {
        if (pos >= s.size()) throw ParseError("model file truncated");
        return static_cast<std::uint8_t>(s[pos++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    double f64() {
        const std::uint64_t v = u64();
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
};

}  // namespace detail

inline void save_model(const std::string& path, const ModelConfig& cfg, ModelParams& params) {
    std::string buf;
    buf += "STSK";
    detail::put_u32(buf, kFormatVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(cfg.dim));
    detail::put_u32(buf, static_cast<std::uint32_t>(cfg.state_dim));
    detail::put_u32(buf, static_cast<std::uint32_t>(cfg.n_backbone_blocks));
    detail::put_u32(buf, static_cast<std::uint32_t>(cfg.m_sts));
    detail::put_u32(buf, static_cast<std::uint32_t>(cfg.stages));
    detail::put_u32(buf, static_cast<std::uint32_t>(cfg.template_side));
    detail::put_u32(buf, static_cast<std::uint32_t>(cfg.search_side));
    detail::put_u32(buf, static_cast<std::uint32_t>(cfg.n_lang));
    detail::put_u32(buf, static_cast<std::uint32_t>(cfg.mlp_hidden));
    detail::put_u32(buf, static_cast<std::uint32_t>(cfg.head_hidden));
    buf.push_back(cfg.enable_temporal ? 1 : 0);
    buf.push_back(cfg.enable_hier_spatial ? 1 : 0);
    buf.push_back(cfg.enable_semantic ? 1 : 0);
    detail::put_u64(buf, cfg.seed);
    ParamRegistry reg = registry(params);
    detail::put_u64(buf, reg.total_scalars());
    for (Tensor* t : reg.tensors)
        for (std::size_t i = 0; i < t->numel(); ++i) detail::put_f64(buf, (*t)[i]);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write model file: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write: " + path);
}

struct LoadedModel {
    ModelConfig config;
    ModelParams params;
};

inline LoadedModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read model file: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || buf.compare(0, 4, "STSK") != 0)
        throw ParseError("not a model file (bad magic): " + path);
    detail::Reader r{buf, 4};
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion)
        throw ConfigError("unsupported model format version " + std::to_string(version));
    LoadedModel m;
    ModelConfig& c = m.config;
    c.dim = r.u32();
    c.state_dim = r.u32();
    c.n_backbone_blocks = r.u32();
    c.m_sts = r.u32();
    c.stages = r.u32();
    c.template_side = r.u32();
    c.search_side = r.u32();
    c.n_lang = r.u32();
    c.mlp_hidden = r.u32();
    c.head_hidden = r.u32();
    c.enable_temporal = r.u8() != 0;
    c.enable_hier_spatial = r.u8() != 0;
    c.enable_semantic = r.u8() != 0;
    c.seed = r.u64();
    c.validate();
    m.params = init_params(c);  // allocates the right shapes
    ParamRegistry reg = registry(m.params);
    const std::uint64_t expect = r.u64();
    if (expect != reg.total_scalars())
        throw ConfigError("parameter count mismatch: file has " + std::to_string(expect) +
                          ", config wants " + std::to_string(reg.total_scalars()));
    for (Tensor* t : reg.tensors)
        for (std::size_t i = 0; i < t->numel(); ++i) (*t)[i] = r.f64();
    return m;
}

}  // namespace stsk::model
