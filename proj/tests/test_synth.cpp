#include "sadet/rkm.hpp"
#include "sadet/synth.hpp"

#include "doctest.h"

#include <cmath>

using namespace sadet;

namespace {

int abnormal_count(const World& w) { return w.relation_table.sum(); }

bool every_action_normal_somewhere(const World& w)
{
    for (int a = 0; a < w.action_count(); ++a) {
        bool ok = false;
        for (int s = 0; s < w.scene_count(); ++s) ok = ok || w.relation_table(s, a) == 0;
        if (!ok) return false;
    }
    return true;
}

int nearest_template(const World& w, const SkeletonSequence& sk)
{
    int best = -1;
    double best_d = 1e300;
    for (int a = 0; a < w.action_count(); ++a) {
        const double d = (w.action_templates[a].coords - sk.coords).squaredNorm();
        if (d < best_d) best_d = d, best = a;
    }
    return best;
}

} // namespace

TEST_SUITE("synth")
{
    TEST_CASE("one scene two actions")
    {
        const World w = generate_world(1, 2, 0.5, 3);
        CHECK(abnormal_count(w) == 1);
    }

    TEST_CASE("five scenes eight actions")
    {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const World w = generate_world(5, 8, 0.3, seed);
            CHECK(abnormal_count(w) == 12);
            CHECK(every_action_normal_somewhere(w));
            for (int i = 0; i < 5; ++i)
                for (int j = i + 1; j < 5; ++j) {
                    const Vec a = w.scene_prototypes.row(i).transpose(), b = w.scene_prototypes.row(j).transpose();
                    CHECK(cosine_similarity(a, b) < 0.8);
                }
        }
    }

    TEST_CASE("infeasible fraction is rejected")
    {
        CHECK_THROWS(generate_world(2, 3, 0.9, 0));
        CHECK_THROWS(generate_world(3, 3, 0.0, 0));
        CHECK_THROWS(generate_world(3, 1, 0.5, 0));
    }

    TEST_CASE("same seed gives the same world")
    {
        const World a = generate_world(5, 8, 0.3, 42), b = generate_world(5, 8, 0.3, 42);
        CHECK(a.scene_prototypes == b.scene_prototypes);
        CHECK(a.relation_table == b.relation_table);
        for (int i = 0; i < 8; ++i) CHECK(a.action_templates[i].coords == b.action_templates[i].coords);
    }

    TEST_CASE("oracle label lookups")
    {
        const World w = generate_world(5, 8, 0.3, 1);
        for (auto [s, a] : {std::pair{0, 0}, std::pair{2, 5}, std::pair{4, 7}}) {
            CHECK(oracle_label(w, s, a) == (w.relation_table(s, a) ? Relation::Abnormal : Relation::Normal));
        }
        CHECK_THROWS(oracle_label(w, 5, 0));
        CHECK_THROWS(oracle_label(w, 0, -1));
    }

    TEST_CASE("sampled datasets honor the video contract")
    {
        World w = generate_world(5, 8, 0.3, 2);
        const Dataset ds = sample_dataset(w, 6, 5, 3);
        CHECK(ds.clips.size() == 60);
        CHECK_NOTHROW(validate_dataset(ds));
        std::map<std::string, int> per_video, abnormal_in_video;
        for (const auto& c : ds.clips) {
            ++per_video[c.video_id];
            const int lab = c.clip_label();
            abnormal_in_video[c.video_id] += lab;
            if (c.video_label == VideoLabel::Normal) CHECK(lab == 0);
        }
        for (const auto& [v, n] : per_video) {
            CHECK(n == 5);
            if (v[0] == 'a') CHECK(abnormal_in_video[v] >= 1);
        }
    }

    TEST_CASE("noise zero clips match their generating template and label")
    {
        World w = generate_world(5, 8, 0.3, 4);
        w.noise_level = 0.0;
        std::mt19937_64 rng(1);
        for (int s = 0; s < 5; ++s)
            for (int a = 0; a < 8; ++a) {
                const Clip c = make_clip(w, s, a, rng);
                CHECK(nearest_template(w, c.skeleton) == a);
                CHECK(c.clip_label() == w.relation_table(s, a));
            }
        const Dataset ds = sample_dataset(w, 10, 8, 5);
        for (const auto& c : ds.clips) {
            const int a = nearest_template(w, c.skeleton);
            CHECK(c.clip_label() == w.relation_table(*c.scene.scene_id_hint, a));
        }
    }

    TEST_CASE("noise zero action clustering recovers the templates")
    {
        World w = generate_world(5, 8, 0.3, 6);
        w.noise_level = 0.0;
        const Dataset ds = sample_dataset(w, 10, 8, 7);
        Mat pts(static_cast<Index>(ds.clips.size()), action_feature(ds.clips[0].skeleton).size());
        for (std::size_t i = 0; i < ds.clips.size(); ++i) pts.row(static_cast<Index>(i)) = action_feature(ds.clips[i].skeleton).transpose();
        const auto m = kmeans(pts, 8, 1);
        CHECK(m.inertia < 1e-18);
    }

    TEST_CASE("jitter scale follows the noise level")
    {
        World w = generate_world(3, 4, 0.3, 8);
        w.noise_level = 0.05;
        std::mt19937_64 rng(2);
        double scene = 0.0;
        for (int i = 0; i < 200; ++i) {
            const Clip c = make_clip(w, 1, 2, rng);
            scene += (c.scene.vector - w.scene_prototypes.row(1).transpose()).norm();
            CHECK(c.skeleton.coords.minCoeff() >= 0.0);
            CHECK(c.skeleton.coords.maxCoeff() <= 1.0);
        }
        CHECK(scene / 200 == doctest::Approx(0.05).epsilon(0.1));
    }
}
