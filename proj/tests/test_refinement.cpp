#include "sadet/refinement.hpp"
#include "sadet/synth.hpp"

#include "doctest.h"

#include <algorithm>
#include <set>
#include <sstream>

using namespace sadet;

namespace {

// Rules written from their plain statement, independent of the library routing.
bool rule_normal(double s, Relation r, const UrConfig& c) { return s < c.beta1 && r == Relation::Normal; }
bool rule_abnormal(double s, Relation r, const UrConfig& c) { return s > c.beta2 && r == Relation::Abnormal; }
bool rule_pending(double s, Relation r, const UrConfig& c)
{
    const bool in_band = s >= c.beta1 && s <= c.beta2;
    const bool low_conflict = s < c.beta1 && r != Relation::Normal;
    const bool high_conflict = s > c.beta2 && r != Relation::Abnormal;
    return in_band || low_conflict || high_conflict;
}

struct Fixture {
    World world;
    Dataset dataset;
    KnowledgeGraph kg;
};

Fixture small_fixture(std::uint64_t seed, int videos = 6)
{
    Fixture f;
    f.world = generate_world(3, 4, 0.3, seed);
    f.world.noise_level = 0.05;
    f.dataset = sample_dataset(f.world, videos, 4, seed + 1);
    f.dataset.header.mode = SupervisionMode::Weak;
    RkmConfig rkm;
    rkm.theta_fn = 4;
    rkm.theta_fa = 4;
    f.kg = build_graph(f.dataset, rkm);
    return f;
}

SaiDims compact_dims()
{
    SaiDims d;
    d.scene_hidden = 8;
    d.gcn_hidden = 6;
    d.lstm_hidden = 8;
    d.pos_hidden = 4;
    d.head_hidden = 8;
    return d;
}

Stage1Config compact_cfg()
{
    Stage1Config cfg;
    cfg.bags.clips_per_bag = 4;
    cfg.bags.top_k = 2;
    cfg.train.learning_rate = 3e-3;
    cfg.train.batch_size = 2;
    cfg.train.seed = 3;
    return cfg;
}

} // namespace

TEST_SUITE("refinement")
{
    TEST_CASE("routing examples")
    {
        const UrConfig cfg;
        CHECK(classify(0.3, Relation::Normal, cfg) == PoolKind::Normal);
        CHECK(classify(0.9, Relation::Abnormal, cfg) == PoolKind::Abnormal);
        CHECK(classify(0.9, Relation::Normal, cfg) == PoolKind::Pending);
        CHECK(classify(0.4, Relation::Normal, cfg) == PoolKind::Pending);
        CHECK(classify(0.8, Relation::Abnormal, cfg) == PoolKind::Pending);
        CHECK(classify(0.1, Relation::Unknown, cfg) == PoolKind::Pending);
    }

    TEST_CASE("exactly one rule fires in every score band and relation cell")
    {
        const UrConfig cfg;
        const double band_scores[3][5] = {{1e-9, 0.1, 0.2, 0.3, 0.3999999},
                                          {0.4, 0.5, 0.6, 0.7, 0.8},
                                          {0.8000001, 0.85, 0.9, 0.99, 1 - 1e-9}};
        const PoolKind expected[3][3] = {{PoolKind::Normal, PoolKind::Pending, PoolKind::Pending},
                                         {PoolKind::Pending, PoolKind::Pending, PoolKind::Pending},
                                         {PoolKind::Pending, PoolKind::Abnormal, PoolKind::Pending}};
        const Relation rels[3] = {Relation::Normal, Relation::Abnormal, Relation::Unknown};
        int cells = 0;
        for (int b = 0; b < 3; ++b)
            for (int r = 0; r < 3; ++r) {
                for (double s : band_scores[b]) {
                    const int fired = rule_normal(s, rels[r], cfg) + rule_abnormal(s, rels[r], cfg) +
                                      rule_pending(s, rels[r], cfg);
                    CHECK(fired == 1);
                    CHECK(classify(s, rels[r], cfg) == expected[b][r]);
                }
                ++cells;
            }
        CHECK(cells == 9);
    }

    TEST_CASE("unreachable thresholds send everything to pending")
    {
        UrConfig cfg;
        cfg.beta1 = 0.0;
        cfg.beta2 = 1.0;
        for (double s : {1e-12, 0.2, 0.5, 0.999999})
            for (Relation r : {Relation::Normal, Relation::Abnormal, Relation::Unknown})
                CHECK(classify(s, r, cfg) == PoolKind::Pending);
    }

    TEST_CASE("config validation")
    {
        UrConfig cfg;
        cfg.beta1 = 0.9;
        CHECK_THROWS(cfg.validate());
        cfg = {};
        cfg.iterations = -1;
        CHECK_THROWS(cfg.validate());
    }

    TEST_CASE("partition pools")
    {
        const Fixture f = small_fixture(1);
        std::vector<double> scores;
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> u(0.01, 0.99);
        std::vector<std::string> ids;
        for (const auto& c : f.dataset.clips) scores.push_back(u(rng)), ids.push_back(c.clip_id);
        const Pools p = partition_pools(f.dataset.clips, scores, f.kg, UrConfig{});
        CHECK(p.disjoint());
        CHECK(p.partitions(ids));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto kind = classify(scores[i], query_relation(f.kg, f.dataset.clips[i]), UrConfig{});
            const auto& pool = kind == PoolKind::Normal ? p.normal : kind == PoolKind::Abnormal ? p.abnormal : p.pending;
            CHECK(pool.count(ids[i]) == 1);
        }
        scores.pop_back();
        CHECK_THROWS_AS(partition_pools(f.dataset.clips, scores, f.kg, UrConfig{}), std::invalid_argument);
    }

    TEST_CASE("refinement candidates")
    {
        const Fixture f = small_fixture(2);
        std::size_t abnormal = 0;
        for (const auto& c : f.dataset.clips) abnormal += c.video_label == VideoLabel::Abnormal;
        const auto cand = refinement_candidates(f.dataset, 40, 9);
        CHECK(cand.size() == abnormal + 40);
        std::set<std::string> ids;
        for (const auto& c : cand) ids.insert(c.clip_id);
        CHECK(ids.size() == cand.size());
        CHECK(refinement_candidates(f.dataset, 40, 9).back().scene.vector == cand.back().scene.vector);
        CHECK(refinement_candidates(f.dataset, 0, 9).size() == abnormal);
        const auto all = refinement_candidates(f.dataset, 1 << 20, 9);
        CHECK(all.size() == abnormal + abnormal * (abnormal - 1));
    }

    TEST_CASE("zero iterations return the stage one model")
    {
        const Fixture f = small_fixture(3);
        const SaiParams p = SaiParams::random(compact_dims(), 1);
        UrConfig ur;
        ur.iterations = 0;
        const auto r = stage2_iterate(p, LossWeights::learnable_init(), f.kg, f.dataset, ur, compact_cfg());
        CHECK(r.params.flatten() == p.flatten());
        CHECK(r.reports.empty());
    }

    TEST_CASE("pools stay a sticky partition across iterations")
    {
        const Fixture f = small_fixture(4);
        Stage1Config cfg = compact_cfg();
        cfg.train.epochs = 20;
        const auto s1 = train_stage1(f.dataset, SaiParams::random(compact_dims(), 2), cfg);
        UrConfig ur;
        ur.iterations = 4;
        ur.epochs_per_iteration = 2;
        ur.pool_batch = 8;
        ur.max_combined = 30;
        const auto r = stage2_iterate(s1.params, s1.weights, f.kg, f.dataset, ur, cfg);
        REQUIRE(r.pool_history.size() == 4);
        std::vector<std::string> ids;
        for (const auto& c : f.dataset.clips)
            if (c.video_label == VideoLabel::Normal) ids.push_back(c.clip_id);
        for (const auto& c : refinement_candidates(f.dataset, ur.max_combined, cfg.train.seed)) ids.push_back(c.clip_id);
        for (std::size_t t = 0; t < r.pool_history.size(); ++t) {
            const auto& p = r.pool_history[t];
            CHECK(p.disjoint());
            CHECK(p.partitions(ids));
            CHECK(r.reports[t].pending == p.pending.size());
            if (t > 0) {
                const auto& q = r.pool_history[t - 1];
                CHECK(std::includes(p.normal.begin(), p.normal.end(), q.normal.begin(), q.normal.end()));
                CHECK(std::includes(p.abnormal.begin(), p.abnormal.end(), q.abnormal.begin(), q.abnormal.end()));
                CHECK(p.pending.size() <= q.pending.size());
            }
        }
        std::ostringstream out;
        write_pool_report(out, r.reports);
        const std::string text = out.str();
        CHECK(std::count(text.begin(), text.end(), '\n') == 5);
    }
}
