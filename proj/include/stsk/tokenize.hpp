#pragma once

#include <array>
#include <cctype>
#include <string>
#include <vector>

#include "stsk/autodiff.hpp"
#include "stsk/image.hpp"
#include "stsk/rng.hpp"
#include "stsk/tensor.hpp"

namespace stsk::tok {

enum class TokenKind { Template, Search, Language, Temporal };

struct TokenSequence {
    Tensor tokens;  // [J, D]
    TokenKind kind = TokenKind::Search;
    bool pos_embedded = false;
    bool no_prompt = false;  // language: set when the prompt was empty
};

// ---------------------------------------------------------------------------
// Visual tokenization. Total stride 16: a 4x4 patch embedding followed by two
// 2x2 merge layers, each a bias-free linear map over concatenated
// neighborhoods (bias-free keeps the pixel->token map exactly linear).
// ---------------------------------------------------------------------------

inline constexpr std::size_t kPatchStride = 16;

// pixels -> [ (side/4)^2, 48 ] matrix of flattened 4x4 patches
inline Tensor extract_patches4(const img::ImageFrame& f) {
    const std::size_t side = f.width();
    if (f.height() != side || side % kPatchStride != 0)
        throw ShapeError("frame side must be square and divisible by 16");
    const std::size_t g = side / 4;
    Tensor out({g * g, 48});
    for (std::size_t gy = 0; gy < g; ++gy)
        for (std::size_t gx = 0; gx < g; ++gx) {
            double* row = out.data() + (gy * g + gx) * 48;
            std::size_t k = 0;
            for (std::size_t py = 0; py < 4; ++py)
                for (std::size_t px = 0; px < 4; ++px)
                    for (std::size_t c = 0; c < 3; ++c)
                        row[k++] = f.at(gy * 4 + py, gx * 4 + px, c);
        }
    return out;
}

// pixels -> [ (side/16)^2, 768 ] matrix of flattened 16x16 patches (flat ViT path)
inline Tensor extract_patches16(const img::ImageFrame& f) {
    const std::size_t side = f.width();
    if (f.height() != side || side % kPatchStride != 0)
        throw ShapeError("frame side must be square and divisible by 16");
    const std::size_t g = side / 16;
    Tensor out({g * g, 768});
    for (std::size_t gy = 0; gy < g; ++gy)
        for (std::size_t gx = 0; gx < g; ++gx) {
            double* row = out.data() + (gy * g + gx) * 768;
            std::size_t k = 0;
            for (std::size_t py = 0; py < 16; ++py)
                for (std::size_t px = 0; px < 16; ++px)
                    for (std::size_t c = 0; c < 3; ++c)
                        row[k++] = f.at(gy * 16 + py, gx * 16 + px, c);
        }
    return out;
}

// 2x2 neighborhood groups for a row-major g x g token grid
inline std::vector<std::array<std::size_t, 4>> merge_groups(std::size_t g) {
    if (g % 2 != 0) throw ShapeError("token grid must be even to merge");
    std::vector<std::array<std::size_t, 4>> groups;
    groups.reserve(g * g / 4);
    for (std::size_t r = 0; r < g; r += 2)
        for (std::size_t c = 0; c < g; c += 2)
            groups.push_back({r * g + c, r * g + c + 1, (r + 1) * g + c, (r + 1) * g + c + 1});
    return groups;
}

// Shared hierarchical embedding weights (template and search branches use the
// same maps; only the position embeddings differ).
struct HierEmbedWeights {
    Tensor w_patch;  // [48, D/4]
    Tensor w_m1;     // [D, D/2]
    Tensor w_m2;     // [2D, D]
};

// Tape builder: frame -> [ (side/16)^2, D ] tokens (+pos if given).
inline ad::Var embed_hierarchical(ad::Tape& t, const img::ImageFrame& f, ad::Var w_patch,
                                  ad::Var w_m1, ad::Var w_m2) {
    const std::size_t side = f.width();
    ad::Var p = t.constant(extract_patches4(f));
    ad::Var h = t.matmul(p, w_patch);                       // [(s/4)^2, D/4]
    h = t.matmul(t.regroup_rows4(h, merge_groups(side / 4)), w_m1);   // [(s/8)^2, D/2]
    h = t.matmul(t.regroup_rows4(h, merge_groups(side / 8)), w_m2);   // [(s/16)^2, D]
    return h;
}

inline ad::Var embed_flat(ad::Tape& t, const img::ImageFrame& f, ad::Var w_flat) {
    return t.matmul(t.constant(extract_patches16(f)), w_flat);
}

// Plain-tensor wrapper used by unit tests and callers outside the model.
inline TokenSequence patch_embed_hierarchical(const img::ImageFrame& f,
                                              const HierEmbedWeights& w, const Tensor& pos,
                                              TokenKind kind) {
    ad::Tape t(false);
    ad::Var tok = embed_hierarchical(t, f, t.constant(w.w_patch), t.constant(w.w_m1),
                                     t.constant(w.w_m2));
    TokenSequence seq;
    seq.tokens = t.val(tok);
    if (pos.numel() != 0) {
        if (!pos.same_shape(seq.tokens)) throw ShapeError("position embedding shape mismatch");
        seq.tokens = seq.tokens + pos;
        seq.pos_embedded = true;
    }
    seq.kind = kind;
    return seq;
}

// ---------------------------------------------------------------------------
// Language stub. Deterministic hash-embedding tokenizer with the same output
// shape as the paper's language branch: exactly n_tokens rows of width dim,
// with an aggregate token at position 0 and reserved pad / no-prompt rows.
// ---------------------------------------------------------------------------

struct StubVocab {
    std::size_t dim = 64;
    std::size_t n_tokens = 40;
    std::size_t buckets = 4096;
    std::uint64_t seed = 0x535453u;  // embedding table identity

    // reserved rows beyond the hash buckets
    std::size_t aggregate_id() const { return buckets; }
    std::size_t pad_id() const { return buckets + 1; }
    std::size_t no_prompt_id() const { return buckets + 2; }
};

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch)))
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

inline std::size_t word_bucket(const std::string& w, const StubVocab& v) {
    return static_cast<std::size_t>(fnv1a(w.data(), w.size()) % v.buckets);
}

// Embedding row for a bucket, generated statelessly from (seed, bucket, col).
inline void fill_embedding_row(double* row, std::size_t bucket, const StubVocab& v) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(v.dim));
    for (std::size_t c = 0; c < v.dim; ++c)
        row[c] = scale * hash_normal(v.seed, bucket, c);
}

inline TokenSequence encode_language(const std::string& prompt, const StubVocab& vocab) {
    const std::vector<std::string> words = split_words(prompt);
    TokenSequence seq;
    seq.kind = TokenKind::Language;
    seq.tokens = Tensor({vocab.n_tokens, vocab.dim});
    seq.no_prompt = words.empty();
    fill_embedding_row(seq.tokens.data(), vocab.aggregate_id(), vocab);
    const std::size_t fill_id = seq.no_prompt ? vocab.no_prompt_id() : vocab.pad_id();
    for (std::size_t i = 1; i < vocab.n_tokens; ++i) {
        const std::size_t bucket =
            (i - 1) < words.size() ? word_bucket(words[i - 1], vocab) : fill_id;
        fill_embedding_row(seq.tokens.data() + i * vocab.dim, bucket, vocab);
    }
    return seq;
}

}  // namespace stsk::tok
