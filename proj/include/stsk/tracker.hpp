#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "stsk/eval.hpp"
#include "stsk/model.hpp"
#include "stsk/train.hpp"

namespace stsk::tracker {

// One-pass evaluation over a sequence: template from the first visible
// frame's ground truth, search crops centered on the previous prediction, the
// temporal token carried frame to frame. The language prompt is encoded once.
struct OpeResult {
    std::vector<box::Box> boxes;  // one per frame
    double fps = 0.0;
};

using FrameProvider = std::function<img::ImageFrame(std::size_t frame_idx)>;

inline OpeResult run_ope(const model::ModelConfig& cfg, model::ModelParams& params,
                         const eval::SequenceAnnotation& ann, const FrameProvider& frame_at) {
    const std::size_t n = ann.frame_count();
    if (n == 0) throw InvalidAnnotationError("empty sequence " + ann.id);
    std::size_t init = 0;
    while (init < n && !ann.visible(init)) ++init;
    if (init == n) throw InvalidAnnotationError("sequence " + ann.id + " has no visible frames");

    tok::StubVocab vocab;
    vocab.dim = cfg.dim;
    vocab.n_tokens = cfg.n_lang;
    const Tensor lang = cfg.enable_semantic ? tok::encode_language(ann.prompt, vocab).tokens
                                            : Tensor({cfg.n_lang, cfg.dim});

    const box::Box init_box = ann.boxes[init];
    const img::ImageFrame init_frame = frame_at(init);
    const img::ImageFrame tmpl =
        img::crop_and_resize(init_frame, init_box, train::template_spec(cfg)).image;

    OpeResult out;
    out.boxes.assign(n, init_box);
    fuse::TemporalToken token = fuse::make_initial_token(params.t_init);
    box::Box prev = init_box;

    const auto t0 = std::chrono::steady_clock::now();
    long processed = 0;
    for (std::size_t i = init; i < n; ++i) {
        if (i == init) {
            out.boxes[i] = init_box;  // OPE convention: the first frame is given
            // still fold the first frame into the token so frame init+1 sees it
        }
        const img::ImageFrame frame = i == init ? init_frame : frame_at(i);
        img::CropResult crop = img::crop_and_resize(frame, prev, train::search_spec(cfg));
        model::ForwardResult fr = model::forward(cfg, params, tmpl, crop.image, lang, token,
                                                 static_cast<long>(processed));
        token = fr.token;
        ++processed;
        if (i != init) {
            model::BoxPrediction pred =
                model::decode_box(fr.head, crop.window, static_cast<double>(frame.width()),
                                  static_cast<double>(frame.height()));
            out.boxes[i] = pred.box;
            prev = pred.box;
        }
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    out.fps = secs > 0.0 ? static_cast<double>(processed) / secs : 0.0;
    return out;
}

}  // namespace stsk::tracker
