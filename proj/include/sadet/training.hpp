#pragma once

// Bagging, MIL losses, Adam and the stage-1 / autoencoder training loops.

#include "sadet/data.hpp"
#include "sadet/sai.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sadet {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BagConfig {
    int clips_per_bag = 8;   // N
    int top_k = 3;           // K
    int clip_len = 24;

    void validate() const;
};

struct Bag {
    std::string video_id;
    VideoLabel label = VideoLabel::Unlabeled;
    std::vector<std::size_t> clips;   // indices into Dataset::clips
};

struct BagSet {
    std::vector<Bag> normal;
    std::vector<Bag> abnormal;
};

/// Groups each video's clips (in frame order) into bags of N. A short final
/// bag is padded by repeating the video's last clip.
BagSet make_bags(const Dataset& dataset, const BagConfig& cfg);

/// Positions of the K largest scores; ties keep the earlier position.
std::vector<std::size_t> topk_indices(std::span<const double> scores, int k);
/// Mean of the K largest scores.
double topk_aggregate(std::span<const double> scores, int k);

double softplus(double x);
double inverse_softplus(double y);

/// Two positive loss weights. Learnable weights are stored as unconstrained
/// reals mapped through softplus; fixed weights are used as given.
struct LossWeights {
    Eigen::Vector2d raw = Eigen::Vector2d::Zero();
    bool learnable = true;

    static LossWeights learnable_init(double first = 1.0, double second = 1.0);
    static LossWeights fixed(double first, double second);

    double value(int i) const;
    /// d value(i) / d raw(i); zero for fixed weights.
    double derivative(int i) const;
};

struct FocalConfig {
    double gamma = 2.0;
    double alpha = 0.25;   // weight of the positive class
};

double focal_loss(double p, int label, const FocalConfig& cfg = {});
double focal_loss_grad(double p, int label, const FocalConfig& cfg = {});
double bce_loss(double p, int label);
double bce_loss_grad(double p, int label);
/// max(0, 1 - abnormal + normal)
double rank_hinge(double abnormal_bag, double normal_bag);

struct MilLoss {
    double rank = 0.0;
    double focal = 0.0;
    double total = 0.0;
    double d_abnormal = 0.0;
    double d_normal = 0.0;
    std::vector<double> d_clip;
    Eigen::Vector2d d_raw = Eigen::Vector2d::Zero();
};

/// alpha1 * rank hinge + alpha2 * mean focal loss over the clip scores.
MilLoss mil_loss(double abnormal_bag, double normal_bag, std::span<const double> clip_scores,
                 std::span<const int> labels, const LossWeights& w, const FocalConfig& focal = {});

struct TrainConfig {
    double learning_rate = 1e-4;
    int decay_every = 10;
    double decay_factor = 0.1;
    int epochs = 120;
    int batch_size = 256;   // bag pairs per step (clips per step for the autoencoder)
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int checkpoint_every = 10;
    std::string checkpoint_dir;   // empty: no periodic checkpoints

    void validate() const;
};

double scheduled_lr(const TrainConfig& cfg, int epoch);

struct AdamState {
    Vec m;
    Vec v;
    long step = 0;
};

/// One bias-corrected Adam update in place.
void adam_step(Eigen::Ref<Vec> params, const Vec& grads, AdamState& state, double lr, const TrainConfig& cfg);

struct EpochLog {
    int epoch = 0;
    double rank = 0.0;
    double focal = 0.0;
    double mil = 0.0;
    double bce = 0.0;
    double rec = 0.0;
    double reg = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

struct Stage1Config {
    SupervisionMode mode = SupervisionMode::Weak;
    BagConfig bags;
    TrainConfig train;
    FocalConfig focal;
};

struct TrainResult {
    SaiParams params;
    LossWeights weights;
    std::vector<EpochLog> log;
    bool diverged = false;
};

struct BagPair {
    const Bag* abnormal = nullptr;
    const Bag* normal = nullptr;
};

/// Shuffled (abnormal, normal) pairings for one epoch, chunked into batches.
/// The shorter side is cycled.
std::vector<std::vector<BagPair>> epoch_batches(const BagSet& bags, int batch_size, std::mt19937_64& rng);

struct MilBatchStats {
    double rank = 0.0;
    double focal = 0.0;
    double mil = 0.0;
};

/// Mean MIL loss over the pairs; accumulates scale * gradients into `grads`
/// and `weight_grads`.
MilBatchStats accumulate_mil(const SaiParams& params, const Dataset& dataset, std::span<const BagPair> pairs,
                             const Stage1Config& cfg, const LossWeights& weights, double scale, SaiParams& grads,
                             Eigen::Vector2d& weight_grads);

/// Adam over MIL-loss bag pairs. Non-finite loss stops training and returns
/// the last good parameters with `diverged` set.
TrainResult train_stage1(const Dataset& dataset, const SaiParams& init, const Stage1Config& cfg);

enum class ScoreNormalization { None, Global, PerVideo };

ScoreNormalization parse_score_normalization(const std::string& text);
std::string to_string(ScoreNormalization n);

struct UnsupConfig {
    TrainConfig train;
    /// When false only the decoder is optimized and fused features are cached.
    bool train_encoder = false;
    LossWeights weights = LossWeights::learnable_init(1.0, 1e-4);
};

/// Each video's scenes recombined with the same video's actions.
std::vector<Clip> recombine_within_videos(const Dataset& dataset);

/// Squared norm of the weight matrices (biases excluded) of the optimized tensors.
double l2_penalty(const SaiParams& params, bool include_encoder);

/// Fits the decoder input normalization on the initial features, then minimizes
/// lambda1 * mean reconstruction error + lambda2 * L2 over normal clips.
TrainResult train_unsupervised(const Dataset& dataset, const SaiParams& init, const UnsupConfig& cfg);

/// Min-max normalization of reconstruction errors; per-video or over the whole set.
std::vector<double> normalize_scores(std::span<const double> raw, std::span<const std::string> video_ids,
                                     ScoreNormalization mode);

enum class LossLogKind { Stage1, Refinement, Unsupervised };

/// Tab-separated, one row per epoch, with a header naming the columns.
void write_loss_log(std::ostream& out, std::span<const EpochLog> log, LossLogKind kind);

} // namespace sadet
