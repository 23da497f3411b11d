#pragma once

#include <cstddef>
#include <vector>

#include "stsk/autodiff.hpp"
#include "stsk/errors.hpp"
#include "stsk/tensor.hpp"
#include "stsk/tokenize.hpp"

namespace stsk::fuse {

// The propagated carrier of video-level history. One row vector per tracked
// sequence, updated once per frame, strictly in order.
struct TemporalToken {
    Tensor value;  // [1, D]
    long frame_index = -1;  // most recent frame folded in; -1 before any frame
    bool initialized = false;
};

inline TemporalToken make_initial_token(const Tensor& init_value) {
    TemporalToken t;
    t.value = init_value;
    t.frame_index = -1;
    t.initialized = true;
    return t;
}

inline void advance_token(TemporalToken& t, Tensor new_value, long frame_index) {
    if (!t.initialized) throw SequencingError("temporal token not initialized");
    if (frame_index != t.frame_index + 1)
        throw SequencingError("frame " + std::to_string(frame_index) + " after frame " +
                              std::to_string(t.frame_index));
    t.value = std::move(new_value);
    t.frame_index = frame_index;
}

// Fixed concatenation order [template, search, language, temporal]; the
// temporal slot is last so the unidirectional scan folds the whole sequence
// into it.
struct SegmentLayout {
    std::size_t nz = 0, nx = 0, nl = 0;

    std::size_t total() const { return nz + nx + nl + 1; }
    std::size_t z_begin() const { return 0; }
    std::size_t x_begin() const { return nz; }
    std::size_t l_begin() const { return nz + nx; }
    std::size_t t_pos() const { return nz + nx + nl; }
};

struct FusedSeq {
    ad::Var tokens;  // [total, D]
    SegmentLayout layout;
    std::size_t stage = 0;
};

// Stride-2 pair merge for stages whose token resolutions differ: average of
// adjacent token pairs followed by a linear map.
struct PairMergeWeights {
    Tensor w;  // [D, D]
};

inline ad::Var pair_merge(ad::Tape& t, ad::Var x, ad::Var w) {
    const std::size_t rows = t.val(x).rows();
    if (rows % 2 != 0) throw ShapeError("pair merge needs an even token count");
    std::vector<std::size_t> even, odd;
    for (std::size_t r = 0; r < rows; r += 2) {
        even.push_back(r);
        odd.push_back(r + 1);
    }
    ad::Var avg = t.scale(t.add(t.gather_rows(x, even), t.gather_rows(x, odd)), 0.5);
    return t.matmul(avg, w);
}

struct FuseParts {
    ad::Var f_z, f_x, f_l, t_token;
};

// Eq.-style unified sequence assembly. Downsampling (when weights are given)
// applies to the visual segments only.
inline FusedSeq fuse_inputs(ad::Tape& t, ad::Var f_z, ad::Var f_x, ad::Var f_l, ad::Var t_token,
                            std::size_t stage, const ad::Var* ds_w = nullptr) {
    const std::size_t d = t.val(f_z).cols();
    if (t.val(f_x).cols() != d || t.val(f_l).cols() != d || t.val(t_token).cols() != d)
        throw ShapeError("fuse_inputs: token widths differ");
    if (t.val(t_token).rows() != 1) throw ShapeError("temporal token must be a single row");
    if (ds_w) {
        f_z = pair_merge(t, f_z, *ds_w);
        f_x = pair_merge(t, f_x, *ds_w);
    }
    FusedSeq f;
    f.layout.nz = t.val(f_z).rows();
    f.layout.nx = t.val(f_x).rows();
    f.layout.nl = t.val(f_l).rows();
    f.stage = stage;
    f.tokens = t.concat_rows({f_z, f_x, f_l, t_token});
    return f;
}

inline FuseParts split_fused(ad::Tape& t, const FusedSeq& f) {
    const SegmentLayout& s = f.layout;
    FuseParts p;
    p.f_z = t.slice_rows(f.tokens, s.z_begin(), s.x_begin());
    p.f_x = t.slice_rows(f.tokens, s.x_begin(), s.l_begin());
    p.f_l = t.slice_rows(f.tokens, s.l_begin(), s.t_pos());
    p.t_token = t.slice_rows(f.tokens, s.t_pos(), s.t_pos() + 1);
    return p;
}

// One STS block (Eq. 12): unidirectional selective scan over the fused
// sequence, then a linear projection with a residual connection.
template <class T>
struct StsBlockT {
    T a_log;  // [D,N]; A = -exp(a_log)
    T w_dt;   // [D,D]
    T b_dt;   // [D]
    T w_b;    // [D,N]
    T w_c;    // [D,N]
    T w_out;  // [D,D]
    T b_out;  // [D]
};

using StsBlockParams = StsBlockT<Tensor>;
using StsBlockVars = StsBlockT<ad::Var>;

inline ad::Var sts_block(ad::Tape& t, ad::Var z, const StsBlockVars& p) {
    ad::Var dt = t.softplus(t.add_rowvec(t.matmul(z, p.w_dt), p.b_dt));
    ad::Var bv = t.matmul(z, p.w_b);
    ad::Var cv = t.matmul(z, p.w_c);
    ad::Var a = t.scale(t.exp_(p.a_log), -1.0);
    ad::Var y = t.scan_diag(z, dt, bv, cv, a);
    return t.add(ad::linear(t, y, p.w_out, p.b_out), z);
}

struct StsForwardOut {
    FusedSeq z_out;
    ad::Var t_new;  // [1, D]
};

// Runs m stacked blocks; the temporal position, scanned last, aggregates the
// whole fused sequence through the hidden state.
inline StsForwardOut sts_mamba_forward(ad::Tape& t, const FusedSeq& z_in,
                                       const std::vector<StsBlockVars>& layers) {
    if (layers.empty()) throw ConfigError("STS module needs at least one block");
    FusedSeq cur = z_in;
    for (const auto& blk : layers) cur.tokens = sts_block(t, cur.tokens, blk);
    StsForwardOut out;
    out.z_out = cur;
    out.t_new = t.slice_rows(cur.tokens, cur.layout.t_pos(), cur.layout.t_pos() + 1);
    return out;
}

}  // namespace stsk::fuse
