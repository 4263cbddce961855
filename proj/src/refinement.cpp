#include "sadet/refinement.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <ostream>
#include <unordered_map>

namespace sadet {

void UrConfig::validate() const
{
    if (!(beta1 >= 0.0 && beta1 <= 1.0) || !(beta2 >= 0.0 && beta2 <= 1.0)) {
        throw std::invalid_argument("refine: beta1 and beta2 must lie in [0, 1]");
    }
    if (!(beta1 < beta2)) throw std::invalid_argument("refine: beta1 must be smaller than beta2");
    if (iterations < 0) throw std::invalid_argument("refine: iterations must be >= 0");
    if (epochs_per_iteration < 0) throw std::invalid_argument("refine: epochs_per_iteration must be >= 0");
    if (pool_batch < 1) throw std::invalid_argument("refine: pool_batch must be >= 1");
    if (max_combined < 0) throw std::invalid_argument("refine: max_combined must be >= 0");
}

std::string to_string(PoolKind kind)
{
    switch (kind) {
    case PoolKind::Normal: return "normal";
    case PoolKind::Abnormal: return "abnormal";
    case PoolKind::Pending: return "pending";
    }
    return "pending";
}

PoolKind classify(double score, Relation relation, const UrConfig& cfg)
{
    if (score < cfg.beta1 && relation == Relation::Normal) return PoolKind::Normal;
    if (score > cfg.beta2 && relation == Relation::Abnormal) return PoolKind::Abnormal;
    return PoolKind::Pending;
}

bool Pools::disjoint() const
{
    for (const auto& id : normal) {
        if (abnormal.count(id) || pending.count(id)) return false;
    }
    for (const auto& id : abnormal) {
        if (pending.count(id)) return false;
    }
    return true;
}

bool Pools::partitions(std::span<const std::string> ids) const
{
    if (!disjoint()) return false;
    std::set<std::string> expected(ids.begin(), ids.end());
    if (expected.size() != size()) return false;
    for (const auto& id : expected) {
        if (!normal.count(id) && !abnormal.count(id) && !pending.count(id)) return false;
    }
    return true;
}

Pools partition_pools(std::span<const Clip> clips, std::span<const double> scores, const KnowledgeGraph& kg,
                      const UrConfig& cfg)
{
    if (clips.size() != scores.size()) {
        throw std::invalid_argument("partition_pools: " + std::to_string(scores.size()) + " scores for " +
                                    std::to_string(clips.size()) + " clips");
    }
    Pools pools;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        switch (classify(scores[i], query_relation(kg, clips[i]), cfg)) {
        case PoolKind::Normal: pools.normal.insert(clips[i].clip_id); break;
        case PoolKind::Abnormal: pools.abnormal.insert(clips[i].clip_id); break;
        case PoolKind::Pending: pools.pending.insert(clips[i].clip_id); break;
        }
    }
    return pools;
}

std::vector<Clip> refinement_candidates(const Dataset& dataset, int max_combined, std::uint64_t seed)
{
    std::vector<const Clip*> abnormal;
    for (const auto& c : dataset.clips) {
        if (c.video_label == VideoLabel::Abnormal) abnormal.push_back(&c);
    }
    std::vector<Clip> out;
    for (const Clip* c : abnormal) out.push_back(*c);

    const std::size_t n = abnormal.size();
    if (n < 2 || max_combined == 0) return out;
    const std::size_t available = n * (n - 1);
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    std::mt19937_64 rng(seed);
    if (available <= static_cast<std::size_t>(max_combined)) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i != j) picks.emplace_back(i, j);
            }
        }
    } else {
        std::set<std::pair<std::size_t, std::size_t>> seen;
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        while (picks.size() < static_cast<std::size_t>(max_combined)) {
            const std::size_t i = pick(rng), j = pick(rng);
            if (i == j || !seen.emplace(i, j).second) continue;
            picks.emplace_back(i, j);
        }
    }
    char id[48];
    for (std::size_t k = 0; k < picks.size(); ++k) {
        Clip c = *abnormal[picks[k].second];
        c.scene = abnormal[picks[k].first]->scene;
        std::snprintf(id, sizeof id, "ur_x%05zu", k);
        c.clip_id = id;
        c.video_id = "ur_combined";
        c.frame_labels.reset();
        out.push_back(std::move(c));
    }
    return out;
}

namespace {

double mean_over(const std::set<std::string>& ids, const std::unordered_map<std::string, double>& scores)
{
    if (ids.empty()) return 0.0;
    double s = 0.0;
    for (const auto& id : ids) s += scores.at(id);
    return s / static_cast<double>(ids.size());
}

Vec pack(const SaiParams& p, const LossWeights& a, const LossWeights& l)
{
    const Vec flat = p.flatten();
    Vec out(flat.size() + 4);
    out << flat, a.raw, l.raw;
    return out;
}

void unpack(const Vec& flat, SaiParams& p, LossWeights& a, LossWeights& l)
{
    const Index n = flat.size() - 4;
    p.assign(flat.head(n));
    if (a.learnable) a.raw = flat.segment(n, 2);
    if (l.learnable) l.raw = flat.segment(n + 2, 2);
}

} // namespace

Stage2Result stage2_iterate(const SaiParams& stage1, const LossWeights& mil_weights, const KnowledgeGraph& kg,
                            const Dataset& dataset, const UrConfig& ur, const Stage1Config& cfg)
{
    ur.validate();
    cfg.train.validate();
    if (cfg.mode == SupervisionMode::Unsupervised) throw TrainingError("refinement does not run in unsupervised mode");
    if (kg.empty()) throw TrainingError("refinement needs a built knowledge graph");

    Stage2Result result{stage1, mil_weights, LossWeights::learnable_init(), {}, {}, {}, {}, false};
    const std::vector<Clip> candidates = refinement_candidates(dataset, ur.max_combined, cfg.train.seed);

    std::vector<std::string> all_ids;
    std::unordered_map<std::string, const Clip*> by_id;
    for (const auto& c : dataset.clips) {
        if (c.video_label != VideoLabel::Normal) continue;
        result.pools.normal.insert(c.clip_id);
        all_ids.push_back(c.clip_id);
        by_id.emplace(c.clip_id, &c);
    }
    std::vector<Relation> relations;
    for (const auto& c : candidates) {
        result.pools.pending.insert(c.clip_id);
        all_ids.push_back(c.clip_id);
        by_id.emplace(c.clip_id, &c);
        relations.push_back(query_relation(kg, c));
    }
    if (ur.iterations == 0) return result;

    const BagSet bags = make_bags(dataset, cfg.bags);
    std::mt19937_64 rng(cfg.train.seed ^ 0x5eedULL);
    bool warned = false;
    int global_epoch = 0;

    for (int it = 1; it <= ur.iterations; ++it) {
        std::unordered_map<std::string, double> scores;
        for (const auto& [id, clip] : by_id) scores.emplace(id, score_clip(result.params, *clip));
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const auto& id = candidates[i].clip_id;
            if (!result.pools.pending.count(id)) continue;
            const PoolKind kind = classify(scores.at(id), relations[i], ur);
            if (kind == PoolKind::Pending) continue;
            result.pools.pending.erase(id);
            (kind == PoolKind::Normal ? result.pools.normal : result.pools.abnormal).insert(id);
        }
        if (!result.pools.partitions(all_ids)) throw std::logic_error("refinement pools lost the partition property");

        IterationReport report;
        report.iteration = it;
        report.normal = result.pools.normal.size();
        report.abnormal = result.pools.abnormal.size();
        report.pending = result.pools.pending.size();
        report.mean_normal = mean_over(result.pools.normal, scores);
        report.mean_abnormal = mean_over(result.pools.abnormal, scores);
        report.mean_pending = mean_over(result.pools.pending, scores);
        report.mil_only = result.pools.abnormal.empty();
        if (report.mil_only && !warned) {
            std::cerr << "warning: refinement abnormal pool is empty; continuing with the MIL loss only\n";
            warned = true;
        }
        result.reports.push_back(report);
        result.pool_history.push_back(result.pools);

        if (!ur.fine_tune) result.params = SaiParams::random(stage1.dims, cfg.train.seed + static_cast<std::uint64_t>(it));
        const std::vector<std::string> normal_ids(result.pools.normal.begin(), result.pools.normal.end());
        const std::vector<std::string> abnormal_ids(result.pools.abnormal.begin(), result.pools.abnormal.end());

        AdamState adam;
        SaiParams last_good = result.params;
        for (int e = 0; e < ur.epochs_per_iteration; ++e, ++global_epoch) {
            const double lr = scheduled_lr(cfg.train, e);
            EpochLog log;
            log.epoch = global_epoch + 1;
            log.lr = lr;
            std::size_t steps = 0;
            bool bad = false;
            for (const auto& batch : epoch_batches(bags, cfg.train.batch_size, rng)) {
                const double l1 = result.stage_weights.value(0), l2 = result.stage_weights.value(1);
                SaiParams grads = SaiParams::zeros(result.params.dims);
                Eigen::Vector2d alpha_grad = Eigen::Vector2d::Zero();
                const auto mil =
                    accumulate_mil(result.params, dataset, batch, cfg, result.mil_weights, l1, grads, alpha_grad);

                double bce = 0.0;
                if (!report.mil_only) {
                    const double nb = 2.0 * ur.pool_batch;
                    for (int side = 0; side < 2; ++side) {
                        const auto& ids = side ? abnormal_ids : normal_ids;
                        std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
                        for (int k = 0; k < ur.pool_batch; ++k) {
                            const SaiForward fwd = forward(result.params, *by_id.at(ids[pick(rng)]));
                            bce += bce_loss(fwd.score, side) / nb;
                            backward(result.params, fwd, l2 * bce_loss_grad(fwd.score, side) / nb, grads);
                        }
                    }
                }
                const double total = l1 * mil.mil + l2 * bce;
                if (!std::isfinite(total)) {
                    bad = true;
                    break;
                }
                Vec flat = pack(result.params, result.mil_weights, result.stage_weights);
                Vec g(flat.size());
                g << grads.flatten(), alpha_grad, mil.mil * result.stage_weights.derivative(0),
                    bce * result.stage_weights.derivative(1);
                adam_step(flat, g, adam, lr, cfg.train);
                if (!flat.allFinite()) {
                    bad = true;
                    break;
                }
                unpack(flat, result.params, result.mil_weights, result.stage_weights);
                log.rank += mil.rank;
                log.focal += mil.focal;
                log.mil += mil.mil;
                log.bce += bce;
                log.total += total;
                ++steps;
            }
            if (bad) {
                result.params = last_good;
                result.diverged = true;
                return result;
            }
            const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
            log.rank /= n;
            log.focal /= n;
            log.mil /= n;
            log.bce /= n;
            log.total /= n;
            result.log.push_back(log);
            last_good = result.params;
        }
    }
    return result;
}

void write_pool_report(std::ostream& out, std::span<const IterationReport> reports)
{
    out << "iteration\tnormal\tabnormal\tpending\tmean_normal\tmean_abnormal\tmean_pending\n";
    char buf[256];
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%d\t%zu\t%zu\t%zu\t%.6f\t%.6f\t%.6f\n", r.iteration, r.normal, r.abnormal,
                      r.pending, r.mean_normal, r.mean_abnormal, r.mean_pending);
        out << buf;
    }
}

} // namespace sadet
