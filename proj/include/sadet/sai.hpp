#pragma once

// Scene-action integrator: scene encoder, skeleton GCN, LSTM, position
// embedding and a fully-connected head fused into one anomaly score, plus an
// optional bottleneck decoder over the fused feature for the autoencoder
// variant. Gradients are written out by hand.

#include "sadet/data.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace sadet {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Skeleton bone graph with self-loops and its symmetric normalization.
struct SkeletonAdjacency {
    Mat binary;       // J x J, A + I
    Mat normalized;   // D^-1/2 (A + I) D^-1/2

    /// 17-joint COCO bone topology; other joint counts use a chain.
    static SkeletonAdjacency for_joints(int joints);
    static SkeletonAdjacency from_edges(int joints, const std::vector<std::pair<int, int>>& edges);
};

/// Left/right joint swap of the COCO layout (an automorphism of its bone graph).
std::vector<int> coco_mirror_permutation();

struct SaiDims {
    int joints = 17;
    int scene_dim = 16;
    int scene_hidden = 64;   // h
    int gcn_hidden = 32;     // h_g
    int lstm_hidden = 64;    // h_t
    int pos_hidden = 16;     // h_p
    int head_hidden = 64;    // 0: linear head
    int decoder_hidden = 0;  // 0: no decoder
    int decoder_code = 0;
    bool skeleton_only = false;  // scene branch output forced to zero

    int concat_dim() const { return scene_hidden + lstm_hidden + pos_hidden; }
    bool has_decoder() const { return decoder_hidden > 0 && decoder_code > 0; }
    void validate() const;
};

/// Every weight tensor of the integrator. Vectors are stored as n x 1 matrices.
struct SaiParams {
    SaiDims dims;

    Mat scene_w1, scene_b1, scene_w2, scene_b2;
    Mat gcn_w1, gcn_b1, gcn_w2, gcn_b2;     // w: in x out (right-multiplied)
    Mat lstm_wx, lstm_wh, lstm_b;           // gate order i, f, g, o
    Mat pos_w, pos_b;
    Mat head_w1, head_b1, head_w2, head_b2;
    Mat dec_w1, dec_b1, dec_w2, dec_b2, dec_w3, dec_b3, dec_w4, dec_b4;
    // Fixed affine map applied to f_concat before the decoder; fitted, not trained.
    Mat dec_shift, dec_scale;

    static SaiParams zeros(const SaiDims& dims);
    /// Glorot-uniform weights, zero biases (LSTM forget bias 1), identity decoder input map.
    static SaiParams random(const SaiDims& dims, std::uint64_t seed);

    template <typename F>
    void for_each(F&& f)
    {
        f("scene_w1", scene_w1); f("scene_b1", scene_b1); f("scene_w2", scene_w2); f("scene_b2", scene_b2);
        f("gcn_w1", gcn_w1); f("gcn_b1", gcn_b1); f("gcn_w2", gcn_w2); f("gcn_b2", gcn_b2);
        f("lstm_wx", lstm_wx); f("lstm_wh", lstm_wh); f("lstm_b", lstm_b);
        f("pos_w", pos_w); f("pos_b", pos_b);
        f("head_w1", head_w1); f("head_b1", head_b1); f("head_w2", head_w2); f("head_b2", head_b2);
        f("dec_w1", dec_w1); f("dec_b1", dec_b1); f("dec_w2", dec_w2); f("dec_b2", dec_b2);
        f("dec_w3", dec_w3); f("dec_b3", dec_b3); f("dec_w4", dec_w4); f("dec_b4", dec_b4);
        f("dec_shift", dec_shift); f("dec_scale", dec_scale);
    }
    template <typename F>
    void for_each(F&& f) const
    {
        const_cast<SaiParams*>(this)->for_each([&](const char* name, Mat& m) { f(name, static_cast<const Mat&>(m)); });
    }

    Index size() const;
    Vec flatten() const;
    void assign(const Vec& flat);
    bool all_finite() const;
    double squared_norm() const;
};

/// Joint offsets from the per-frame box center in half-box units (the box spans [-1, 1]), T*J x 2, frame-major rows.
Mat normalized_joints(const SkeletonSequence& skeleton);
/// Clip-mean (cx, cy, w, h).
Vec mean_box(const SkeletonSequence& skeleton);

/// Intermediate values of one forward pass, kept for the backward pass.
struct SaiForward {
    Vec scene_in, scene_a1, scene_h1, scene_a2, scene_h2;
    Mat joints_in;                // T*J x 2
    Mat gcn_z1, gcn_h1, gcn_z2, gcn_h2;   // T*J x h_g
    Mat pooled;                   // T x h_g
    Mat gate_i, gate_f, gate_g, gate_o, cell, cell_tanh, hidden;  // h_t x T
    Vec box, pos_out;
    Vec fused;                    // concat_dim
    Vec head_a1, head_h1;
    double logit = 0.0;
    double score = 0.5;
    int frames = 0;
};

SaiForward forward(const SaiParams& params, const Clip& clip);
double score_clip(const SaiParams& params, const Clip& clip);
/// Fused feature f_concat of a clip.
Vec encode(const SaiParams& params, const Clip& clip);

/// Accumulates upstream * d(score)/d(params) into `grads`.
void backward(const SaiParams& params, const SaiForward& fwd, double upstream, SaiParams& grads);
SaiParams backward(const SaiParams& params, const Clip& clip, double upstream);

struct DecoderForward {
    Vec z;   // normalized f_concat: input and reconstruction target
    Vec a1, h1, a2, h2, a3, h3, out;
};

struct ReconForward {
    SaiForward encoder;
    DecoderForward decoder;
    double error = 0.0;
};

DecoderForward decode(const SaiParams& params, const Vec& fused);
/// Accumulates upstream * d(reconstruction_error)/d(decoder tensors) into `grads`;
/// returns d/dfused through both the decoder input and the target.
Vec decoder_backward(const SaiParams& params, const Vec& fused, const DecoderForward& dec, double upstream,
                     SaiParams& grads);
/// Mean squared difference between the normalized feature and its reconstruction.
double reconstruction_error(const DecoderForward& dec);

/// Sets dec_shift to the per-dimension mean of `features` and dec_scale to one
/// factor per block (scene, temporal, position) giving each block unit mean variance.
void fit_decoder_normalization(SaiParams& params, std::span<const Vec> features);

ReconForward reconstruct_forward(const SaiParams& params, const Clip& clip);
/// Mean squared difference between the fused feature and its reconstruction.
double reconstruct(const SaiParams& params, const Clip& clip);
void reconstruct_backward(const SaiParams& params, const ReconForward& fwd, double upstream, SaiParams& grads);

void write_checkpoint(std::ostream& out, const SaiParams& params);
SaiParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const SaiParams& params);
SaiParams load_checkpoint(const std::string& path);

} // namespace sadet
