#include "sadet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <ostream>

namespace sadet {

void BagConfig::validate() const
{
    if (clips_per_bag < 1) throw std::invalid_argument("bags: clips_per_bag must be >= 1");
    if (top_k < 1 || top_k > clips_per_bag) throw std::invalid_argument("bags: top_k must lie in [1, clips_per_bag]");
    if (clip_len < 1) throw std::invalid_argument("bags: clip_len must be >= 1");
}

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
    if (decay_every < 1) throw std::invalid_argument("train: decay_every must be >= 1");
    if (!(decay_factor > 0.0)) throw std::invalid_argument("train: decay_factor must be positive");
    if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
        throw std::invalid_argument("train: adam betas must lie in (0, 1)");
    }
    if (!(adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be positive");
    if (checkpoint_every < 1) throw std::invalid_argument("train: checkpoint_every must be >= 1");
}

namespace {

std::map<std::string, std::vector<std::size_t>> group_by_video(const Dataset& ds, std::vector<std::string>& order)
{
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ds.clips.size(); ++i) {
        auto [it, fresh] = groups.try_emplace(ds.clips[i].video_id);
        if (fresh) order.push_back(ds.clips[i].video_id);
        it->second.push_back(i);
    }
    for (auto& [id, idx] : groups) {
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return ds.clips[a].start < ds.clips[b].start; });
    }
    return groups;
}

} // namespace

BagSet make_bags(const Dataset& dataset, const BagConfig& cfg)
{
    cfg.validate();
    std::vector<std::string> order;
    const auto groups = group_by_video(dataset, order);
    BagSet out;
    const auto N = static_cast<std::size_t>(cfg.clips_per_bag);
    for (const auto& video : order) {
        const auto& idx = groups.at(video);
        const VideoLabel label = dataset.clips[idx.front()].video_label;
        if (label == VideoLabel::Unlabeled) {
            throw TrainingError("make_bags: video " + video + " is unlabeled in supervised mode");
        }
        for (std::size_t begin = 0; begin < idx.size(); begin += N) {
            Bag bag;
            bag.video_id = video;
            bag.label = label;
            for (std::size_t k = 0; k < N; ++k) {
                bag.clips.push_back(begin + k < idx.size() ? idx[begin + k] : idx.back());
            }
            (label == VideoLabel::Abnormal ? out.abnormal : out.normal).push_back(std::move(bag));
        }
    }
    return out;
}

std::vector<std::size_t> topk_indices(std::span<const double> scores, int k)
{
    if (k < 1 || static_cast<std::size_t>(k) > scores.size()) {
        throw std::invalid_argument("topk: K=" + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) +
                                    "]");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(static_cast<std::size_t>(k));
    return order;
}

double topk_aggregate(std::span<const double> scores, int k)
{
    double sum = 0.0;
    for (std::size_t i : topk_indices(scores, k)) sum += scores[i];
    return sum / static_cast<double>(k);
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double inverse_softplus(double y)
{
    if (!(y > 0.0)) throw std::invalid_argument("inverse_softplus: argument must be positive");
    return y > 30.0 ? y : std::log(std::expm1(y));
}

LossWeights LossWeights::learnable_init(double first, double second)
{
    LossWeights w;
    w.raw << inverse_softplus(first), inverse_softplus(second);
    w.learnable = true;
    return w;
}

LossWeights LossWeights::fixed(double first, double second)
{
    if (first < 0.0 || second < 0.0) throw std::invalid_argument("loss weights must be non-negative");
    LossWeights w;
    w.raw << first, second;
    w.learnable = false;
    return w;
}

double LossWeights::value(int i) const { return learnable ? softplus(raw[i]) : raw[i]; }

double LossWeights::derivative(int i) const { return learnable ? 1.0 / (1.0 + std::exp(-raw[i])) : 0.0; }

namespace {

constexpr double kProbEps = 1e-12;

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

} // namespace

double focal_loss(double p, int label, const FocalConfig& cfg)
{
    const double q = clamp_prob(p);
    const double pt = label ? q : 1.0 - q;
    const double at = label ? cfg.alpha : 1.0 - cfg.alpha;
    return -at * std::pow(1.0 - pt, cfg.gamma) * std::log(pt);
}

double focal_loss_grad(double p, int label, const FocalConfig& cfg)
{
    const double q = clamp_prob(p);
    const double pt = label ? q : 1.0 - q;
    const double at = label ? cfg.alpha : 1.0 - cfg.alpha;
    const double d_pt = at * (cfg.gamma * std::pow(1.0 - pt, cfg.gamma - 1.0) * std::log(pt) -
                              std::pow(1.0 - pt, cfg.gamma) / pt);
    return label ? d_pt : -d_pt;
}

double bce_loss(double p, int label)
{
    const double q = clamp_prob(p);
    return label ? -std::log(q) : -std::log(1.0 - q);
}

double bce_loss_grad(double p, int label)
{
    const double q = clamp_prob(p);
    return label ? -1.0 / q : 1.0 / (1.0 - q);
}

double rank_hinge(double abnormal_bag, double normal_bag) { return std::max(0.0, 1.0 - abnormal_bag + normal_bag); }

MilLoss mil_loss(double abnormal_bag, double normal_bag, std::span<const double> clip_scores,
                 std::span<const int> labels, const LossWeights& w, const FocalConfig& focal)
{
    if (clip_scores.size() != labels.size()) throw std::invalid_argument("mil_loss: score/label count mismatch");
    MilLoss out;
    out.rank = rank_hinge(abnormal_bag, normal_bag);
    const double a1 = w.value(0), a2 = w.value(1);
    if (out.rank > 0.0) {
        out.d_abnormal = -a1;
        out.d_normal = a1;
    }
    out.d_clip.assign(clip_scores.size(), 0.0);
    if (!clip_scores.empty()) {
        const double n = static_cast<double>(clip_scores.size());
        for (std::size_t i = 0; i < clip_scores.size(); ++i) {
            out.focal += focal_loss(clip_scores[i], labels[i], focal) / n;
            out.d_clip[i] = a2 * focal_loss_grad(clip_scores[i], labels[i], focal) / n;
        }
    }
    out.total = a1 * out.rank + a2 * out.focal;
    out.d_raw << out.rank * w.derivative(0), out.focal * w.derivative(1);
    return out;
}

double scheduled_lr(const TrainConfig& cfg, int epoch)
{
    return cfg.learning_rate * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

void adam_step(Eigen::Ref<Vec> params, const Vec& grads, AdamState& state, double lr, const TrainConfig& cfg)
{
    if (grads.size() != params.size()) throw std::invalid_argument("adam_step: shape mismatch");
    if (state.m.size() != params.size()) {
        state.m = Vec::Zero(params.size());
        state.v = Vec::Zero(params.size());
        state.step = 0;
    }
    ++state.step;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    state.m = b1 * state.m + (1.0 - b1) * grads;
    state.v = b2 * state.v + (1.0 - b2) * grads.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.adam_eps);
}

std::vector<std::vector<BagPair>> epoch_batches(const BagSet& bags, int batch_size, std::mt19937_64& rng)
{
    if (bags.normal.empty() || bags.abnormal.empty()) {
        throw TrainingError("training needs at least one normal and one abnormal bag");
    }
    std::vector<std::size_t> ab(bags.abnormal.size()), nb(bags.normal.size());
    std::iota(ab.begin(), ab.end(), std::size_t{0});
    std::iota(nb.begin(), nb.end(), std::size_t{0});
    std::shuffle(ab.begin(), ab.end(), rng);
    std::shuffle(nb.begin(), nb.end(), rng);
    const std::size_t pairs = std::max(ab.size(), nb.size());
    std::vector<std::vector<BagPair>> batches;
    for (std::size_t i = 0; i < pairs; ++i) {
        if (i % static_cast<std::size_t>(batch_size) == 0) batches.emplace_back();
        batches.back().push_back({&bags.abnormal[ab[i % ab.size()]], &bags.normal[nb[i % nb.size()]]});
    }
    return batches;
}

MilBatchStats accumulate_mil(const SaiParams& params, const Dataset& dataset, std::span<const BagPair> pairs,
                             const Stage1Config& cfg, const LossWeights& weights, double scale, SaiParams& grads,
                             Eigen::Vector2d& weight_grads)
{
    MilBatchStats stats;
    if (pairs.empty()) return stats;
    const double per_pair = scale / static_cast<double>(pairs.size());
    const int K = cfg.bags.top_k;
    for (const auto& pair : pairs) {
        std::vector<const Clip*> clips;
        for (std::size_t i : pair.abnormal->clips) clips.push_back(&dataset.clips[i]);
        for (std::size_t i : pair.normal->clips) clips.push_back(&dataset.clips[i]);
        const std::size_t na = pair.abnormal->clips.size();

        std::vector<SaiForward> fwd;
        fwd.reserve(clips.size());
        std::vector<double> scores;
        std::vector<int> labels;
        for (std::size_t i = 0; i < clips.size(); ++i) {
            fwd.push_back(forward(params, *clips[i]));
            scores.push_back(fwd.back().score);
            if (cfg.mode == SupervisionMode::Full) labels.push_back(clips[i]->clip_label());
            else labels.push_back(i < na ? 1 : 0);
        }
        const std::span<const double> all(scores);
        const auto top_a = topk_indices(all.first(na), K);
        const auto top_n = topk_indices(all.subspan(na), K);
        double abn = 0.0, norm = 0.0;
        for (auto i : top_a) abn += scores[i] / K;
        for (auto i : top_n) norm += scores[na + i] / K;

        const MilLoss loss = mil_loss(abn, norm, scores, labels, weights, cfg.focal);
        std::vector<double> d = loss.d_clip;
        for (auto i : top_a) d[i] += loss.d_abnormal / K;
        for (auto i : top_n) d[na + i] += loss.d_normal / K;
        for (std::size_t i = 0; i < clips.size(); ++i) backward(params, fwd[i], per_pair * d[i], grads);
        weight_grads += per_pair * loss.d_raw;

        stats.rank += loss.rank / static_cast<double>(pairs.size());
        stats.focal += loss.focal / static_cast<double>(pairs.size());
        stats.mil += loss.total / static_cast<double>(pairs.size());
    }
    return stats;
}

namespace {

void maybe_checkpoint(const TrainConfig& cfg, int epoch, const SaiParams& params)
{
    if (cfg.checkpoint_dir.empty() || (epoch + 1) % cfg.checkpoint_every != 0) return;
    std::filesystem::create_directories(cfg.checkpoint_dir);
    char name[64];
    std::snprintf(name, sizeof name, "ckpt_epoch_%03d.txt", epoch + 1);
    save_checkpoint((std::filesystem::path(cfg.checkpoint_dir) / name).string(), params);
}

Vec pack(const SaiParams& params, const LossWeights& w)
{
    const Vec p = params.flatten();
    Vec out(p.size() + 2);
    out << p, w.raw;
    return out;
}

void unpack(const Vec& flat, SaiParams& params, LossWeights& w)
{
    params.assign(flat.head(flat.size() - 2));
    if (w.learnable) w.raw = flat.tail(2);
}

} // namespace

TrainResult train_stage1(const Dataset& dataset, const SaiParams& init, const Stage1Config& cfg)
{
    cfg.train.validate();
    if (cfg.mode == SupervisionMode::Unsupervised) throw TrainingError("train_stage1: use train_unsupervised");
    if (cfg.mode == SupervisionMode::Full) {
        for (const auto& c : dataset.clips) {
            if (!c.frame_labels) throw TrainingError("clip " + c.clip_id + ": full supervision needs frame labels");
        }
    }
    const BagSet bags = make_bags(dataset, cfg.bags);

    TrainResult result{init, LossWeights::learnable_init(), {}, false};
    if (cfg.train.epochs == 0) return result;

    std::mt19937_64 rng(cfg.train.seed);
    AdamState adam;
    SaiParams last_good = result.params;
    LossWeights last_good_w = result.weights;
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        const double lr = scheduled_lr(cfg.train, epoch);
        EpochLog log;
        log.epoch = epoch + 1;
        log.lr = lr;
        std::size_t steps = 0;
        bool bad = false;
        for (const auto& batch : epoch_batches(bags, cfg.train.batch_size, rng)) {
            SaiParams grads = SaiParams::zeros(result.params.dims);
            Eigen::Vector2d wg = Eigen::Vector2d::Zero();
            const auto stats = accumulate_mil(result.params, dataset, batch, cfg, result.weights, 1.0, grads, wg);
            if (!std::isfinite(stats.mil)) {
                bad = true;
                break;
            }
            Vec flat = pack(result.params, result.weights);
            Vec gflat(flat.size());
            gflat << grads.flatten(), wg;
            adam_step(flat, gflat, adam, lr, cfg.train);
            if (!flat.allFinite()) {
                bad = true;
                break;
            }
            unpack(flat, result.params, result.weights);
            log.rank += stats.rank;
            log.focal += stats.focal;
            log.mil += stats.mil;
            ++steps;
        }
        if (bad) {
            result.params = last_good;
            result.weights = last_good_w;
            result.diverged = true;
            break;
        }
        const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
        log.rank /= n;
        log.focal /= n;
        log.mil /= n;
        log.total = log.mil;
        result.log.push_back(log);
        last_good = result.params;
        last_good_w = result.weights;
        maybe_checkpoint(cfg.train, epoch, result.params);
    }
    return result;
}

ScoreNormalization parse_score_normalization(const std::string& text)
{
    if (text == "none") return ScoreNormalization::None;
    if (text == "global") return ScoreNormalization::Global;
    if (text == "per_video") return ScoreNormalization::PerVideo;
    throw std::invalid_argument("unknown score normalization '" + text + "'");
}

std::string to_string(ScoreNormalization n)
{
    switch (n) {
    case ScoreNormalization::None: return "none";
    case ScoreNormalization::Global: return "global";
    case ScoreNormalization::PerVideo: return "per_video";
    }
    return "none";
}

std::vector<Clip> recombine_within_videos(const Dataset& dataset)
{
    std::vector<std::string> order;
    const auto groups = group_by_video(dataset, order);
    std::vector<Clip> out;
    for (const auto& video : order) {
        std::vector<Clip> clips;
        for (std::size_t i : groups.at(video)) clips.push_back(dataset.clips[i]);
        auto combined = cross_combine(std::span<const Clip>(clips), std::span<const Clip>(clips), video + "_rc");
        for (auto& c : combined) c.video_label = clips.front().video_label;
        out.insert(out.end(), std::make_move_iterator(combined.begin()), std::make_move_iterator(combined.end()));
    }
    return out;
}

namespace {

template <typename F>
void for_each_penalized(SaiParams& p, bool include_encoder, F&& f)
{
    if (include_encoder) {
        for (Mat* m : {&p.scene_w1, &p.scene_w2, &p.gcn_w1, &p.gcn_w2, &p.lstm_wx, &p.lstm_wh, &p.pos_w}) f(*m);
    }
    for (Mat* m : {&p.dec_w1, &p.dec_w2, &p.dec_w3, &p.dec_w4}) f(*m);
}

} // namespace

double l2_penalty(const SaiParams& params, bool include_encoder)
{
    double s = 0.0;
    for_each_penalized(const_cast<SaiParams&>(params), include_encoder, [&](const Mat& m) { s += m.squaredNorm(); });
    return s;
}

TrainResult train_unsupervised(const Dataset& dataset, const SaiParams& init, const UnsupConfig& cfg)
{
    cfg.train.validate();
    if (!init.dims.has_decoder()) throw TrainingError("train_unsupervised: model has no decoder");
    for (const auto& c : dataset.clips) {
        const bool abnormal = c.video_label == VideoLabel::Abnormal || (c.frame_labels && c.clip_label() == 1);
        if (abnormal) throw TrainingError("clip " + c.clip_id + ": unsupervised training accepts normal clips only");
    }
    const std::vector<Clip> train = recombine_within_videos(dataset);

    TrainResult result{init, cfg.weights, {}, false};
    if (cfg.train.epochs == 0) return result;

    std::vector<Vec> cached;
    cached.reserve(train.size());
    for (const auto& c : train) cached.push_back(encode(init, c));
    fit_decoder_normalization(result.params, cached);
    if (cfg.train_encoder) cached.clear();

    std::mt19937_64 rng(cfg.train.seed);
    AdamState adam;
    SaiParams last_good = result.params;
    LossWeights last_good_w = result.weights;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto B = static_cast<std::size_t>(cfg.train.batch_size);

    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        const double lr = scheduled_lr(cfg.train, epoch);
        std::shuffle(order.begin(), order.end(), rng);
        EpochLog log;
        log.epoch = epoch + 1;
        log.lr = lr;
        std::size_t steps = 0;
        bool bad = false;
        for (std::size_t begin = 0; begin < order.size(); begin += B) {
            const std::size_t end = std::min(order.size(), begin + B);
            const double nb = static_cast<double>(end - begin);
            const double l1 = result.weights.value(0), l2 = result.weights.value(1);
            SaiParams grads = SaiParams::zeros(result.params.dims);
            double rec = 0.0;
            for (std::size_t k = begin; k < end; ++k) {
                const std::size_t i = order[k];
                if (cfg.train_encoder) {
                    const auto r = reconstruct_forward(result.params, train[i]);
                    rec += r.error / nb;
                    reconstruct_backward(result.params, r, l1 / nb, grads);
                } else {
                    const auto dec = decode(result.params, cached[i]);
                    rec += reconstruction_error(dec) / nb;
                    decoder_backward(result.params, cached[i], dec, l1 / nb, grads);
                }
            }
            grads.dec_shift.setZero();
            grads.dec_scale.setZero();
            const double reg = l2_penalty(result.params, cfg.train_encoder);
            {
                SaiParams& p = result.params;
                std::vector<const Mat*> src;
                for_each_penalized(p, cfg.train_encoder, [&](Mat& m) { src.push_back(&m); });
                std::size_t idx = 0;
                for_each_penalized(grads, cfg.train_encoder, [&](Mat& g) { g += 2.0 * l2 * *src[idx++]; });
            }
            const double total = l1 * rec + l2 * reg;
            if (!std::isfinite(total)) {
                bad = true;
                break;
            }
            Vec flat = pack(result.params, result.weights);
            Vec gflat(flat.size());
            gflat << grads.flatten(), rec * result.weights.derivative(0), reg * result.weights.derivative(1);
            adam_step(flat, gflat, adam, lr, cfg.train);
            if (!flat.allFinite()) {
                bad = true;
                break;
            }
            unpack(flat, result.params, result.weights);
            log.rec += rec;
            log.reg += reg;
            log.total += total;
            ++steps;
        }
        if (bad) {
            result.params = last_good;
            result.weights = last_good_w;
            result.diverged = true;
            break;
        }
        const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
        log.rec /= n;
        log.reg /= n;
        log.total /= n;
        result.log.push_back(log);
        last_good = result.params;
        last_good_w = result.weights;
        maybe_checkpoint(cfg.train, epoch, result.params);
    }
    return result;
}

std::vector<double> normalize_scores(std::span<const double> raw, std::span<const std::string> video_ids,
                                     ScoreNormalization mode)
{
    if (raw.size() != video_ids.size()) throw std::invalid_argument("normalize_scores: size mismatch");
    std::vector<double> out(raw.begin(), raw.end());
    if (mode == ScoreNormalization::None || raw.empty()) return out;

    auto rescale = [&](const std::vector<std::size_t>& idx) {
        double lo = raw[idx.front()], hi = raw[idx.front()];
        for (auto i : idx) {
            lo = std::min(lo, raw[i]);
            hi = std::max(hi, raw[i]);
        }
        for (auto i : idx) out[i] = hi > lo ? (raw[i] - lo) / (hi - lo) : 0.0;
    };
    if (mode == ScoreNormalization::Global) {
        std::vector<std::size_t> all(raw.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        rescale(all);
        return out;
    }
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < raw.size(); ++i) groups[video_ids[i]].push_back(i);
    for (const auto& [id, idx] : groups) rescale(idx);
    return out;
}

void write_loss_log(std::ostream& out, std::span<const EpochLog> log, LossLogKind kind)
{
    char buf[256];
    switch (kind) {
    case LossLogKind::Stage1: out << "epoch\tL_rank\tL_focal\tL_mil\tlr\n"; break;
    case LossLogKind::Refinement: out << "epoch\tL_rank\tL_focal\tL_mil\tL_bce\tL_total\tlr\n"; break;
    case LossLogKind::Unsupervised: out << "epoch\tL_rec\tL_reg\tL_total\tlr\n"; break;
    }
    for (const auto& e : log) {
        switch (kind) {
        case LossLogKind::Stage1:
            std::snprintf(buf, sizeof buf, "%d\t%.10g\t%.10g\t%.10g\t%.6g\n", e.epoch, e.rank, e.focal, e.mil, e.lr);
            break;
        case LossLogKind::Refinement:
            std::snprintf(buf, sizeof buf, "%d\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g\t%.6g\n", e.epoch, e.rank, e.focal,
                          e.mil, e.bce, e.total, e.lr);
            break;
        case LossLogKind::Unsupervised:
            std::snprintf(buf, sizeof buf, "%d\t%.10g\t%.10g\t%.10g\t%.6g\n", e.epoch, e.rec, e.reg, e.total, e.lr);
            break;
        }
        out << buf;
    }
}

} // namespace sadet
