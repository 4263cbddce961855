#include "sadet/data.hpp"
#include "sadet/synth.hpp"

#include "doctest.h"
#include "json.hpp"

#include <set>
#include <sstream>

using namespace sadet;
using nlohmann::json;

namespace {

Dataset small_dataset(int videos = 1, int clips = 1)
{
    const World w = generate_world(2, 3, 0.3, 1);
    Dataset ds = sample_dataset(w, videos, clips, 2);
    return ds;
}

std::string to_text(const Dataset& ds)
{
    std::ostringstream out;
    write_dataset(out, ds);
    return out.str();
}

std::vector<json> records(const std::string& text)
{
    std::vector<json> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

std::string join(const std::vector<json>& recs)
{
    std::string s;
    for (const auto& r : recs) s += r.dump() + "\n";
    return s;
}

Dataset parse_text(const std::string& text)
{
    std::istringstream in(text);
    return parse_dataset(in);
}

std::string load_error(const std::string& text)
{
    try {
        parse_text(text);
    } catch (const DatasetError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_SUITE("data")
{
    TEST_CASE("two clip round trip")
    {
        const Dataset ds = small_dataset(1, 1);
        REQUIRE(ds.clips.size() == 2);
        const Dataset back = parse_text(to_text(ds));
        CHECK(back.clips.size() == 2);
        CHECK(back.clips[1].clip_id == ds.clips[1].clip_id);
        CHECK(back.clips[0].skeleton.coords == ds.clips[0].skeleton.coords);
        CHECK(back.clips[0].scene.vector == ds.clips[0].scene.vector);
    }

    TEST_CASE("load serialize load is byte identical")
    {
        const std::string first = to_text(small_dataset(3, 4));
        const std::string second = to_text(parse_text(first));
        CHECK(first == second);
    }

    TEST_CASE("a frame with a missing joint names the clip")
    {
        auto recs = records(to_text(small_dataset()));
        auto& row = recs[1]["skeleton"][3];
        row.erase(row.size() - 1);
        row.erase(row.size() - 1);
        row.erase(row.size() - 1);
        const std::string id = recs[1]["clip_id"];
        const std::string err = load_error(join(recs));
        CHECK(err.find(id) != std::string::npos);
    }

    TEST_CASE("empty clip list is rejected")
    {
        auto recs = records(to_text(small_dataset()));
        recs.resize(1);
        CHECK(load_error(join(recs)).find("empty dataset") != std::string::npos);
        CHECK(load_error("").find("empty dataset") != std::string::npos);
    }

    TEST_CASE("malformed records are rejected with the clip id")
    {
        const auto base = records(to_text(small_dataset()));
        const std::string id = base[1]["clip_id"];
        auto mutate = [&](auto&& f) {
            auto r = base;
            f(r[1]);
            return load_error(join(r));
        };
        CHECK(mutate([](json& c) { c.erase("scene"); }).find(id) != std::string::npos);
        CHECK(mutate([](json& c) { c["scene"].erase(0); }).find(id) != std::string::npos);
        CHECK(mutate([](json& c) { c["skeleton"][0][0] = 1.5; }).find(id) != std::string::npos);
        CHECK(mutate([](json& c) { c["pos"][0][2] = -0.1; }).find(id) != std::string::npos);
        CHECK(mutate([](json& c) { c["end"] = c["start"].get<int>() + 3; }).find(id) != std::string::npos);
        CHECK(mutate([](json& c) { c["frame_labels"] = json::array({0, 1}); }).find(id) != std::string::npos);
        CHECK(mutate([](json& c) { c["video_label"] = "maybe"; }) != "");
        auto dup = base;
        dup[2]["clip_id"] = id;
        CHECK(load_error(join(dup)).find(id) != std::string::npos);
        CHECK(load_error("not json\n") != "");
    }

    TEST_CASE("fuzzed records never yield an invalid clip")
    {
        const auto base = records(to_text(small_dataset(1, 2)));
        std::mt19937_64 rng(6);
        std::uniform_real_distribution<double> u(-0.5, 1.5);
        int rejected = 0;
        for (int trial = 0; trial < 200; ++trial) {
            auto r = base;
            auto& c = r[1 + rng() % (r.size() - 1)];
            switch (rng() % 4) {
            case 0: c["skeleton"][rng() % 24][rng() % 51] = u(rng); break;
            case 1: c["pos"][rng() % 24][rng() % 4] = u(rng); break;
            case 2: c["scene"][rng() % 16] = u(rng); break;
            default: c["start"] = static_cast<int>(rng() % 5); break;
            }
            try {
                const Dataset ds = parse_text(join(r));
                for (const auto& clip : ds.clips) CHECK_NOTHROW(validate_clip(ds.header, clip));
            } catch (const DatasetError&) {
                ++rejected;
            }
        }
        CHECK(rejected > 0);
    }

    TEST_CASE("cross combine cardinality and identity")
    {
        const Dataset ds = small_dataset(2, 3);
        std::span<const Clip> all(ds.clips);
        CHECK(cross_combine(all.subspan(0, 2), all.subspan(2, 3)).size() == 6);
        const auto one = cross_combine(all.subspan(4, 1), all.subspan(4, 1));
        REQUIRE(one.size() == 1);
        CHECK(one[0].scene.vector == ds.clips[4].scene.vector);
        CHECK(one[0].skeleton.coords == ds.clips[4].skeleton.coords);
        CHECK(one[0].skeleton.pos == ds.clips[4].skeleton.pos);
        CHECK(one[0].video_label == VideoLabel::Unlabeled);
        CHECK_THROWS_AS(cross_combine(all.subspan(0, 0), all), DatasetError);
    }

    TEST_CASE("cross combine enumerates every pair once")
    {
        const Dataset ds = small_dataset(3, 4);
        // Clips of one video share a scene, so tag each source to make them distinct.
        std::vector<Clip> scenes(ds.clips.begin(), ds.clips.begin() + 5), actions(ds.clips.begin() + 5, ds.clips.begin() + 10);
        for (int i = 0; i < 5; ++i) {
            scenes[i].scene.vector[0] += 10.0 * (i + 1);
            actions[i].skeleton.pos(0, 0) += 10.0 * (i + 1);
        }
        const auto out = cross_combine(std::span<const Clip>(scenes), std::span<const Clip>(actions));
        REQUIRE(out.size() == 25);
        std::set<std::pair<int, int>> seen;
        for (const auto& c : out) {
            int si = -1, ai = -1;
            for (int s = 0; s < 5; ++s)
                if (c.scene.vector == scenes[s].scene.vector) si = s;
            for (int a = 0; a < 5; ++a)
                if (c.skeleton.coords == actions[a].skeleton.coords && c.skeleton.pos == actions[a].skeleton.pos)
                    ai = a;
            CHECK(si >= 0);
            CHECK(ai >= 0);
            seen.insert({si, ai});
        }
        CHECK(seen.size() == 25);
    }

    TEST_CASE("label parsing")
    {
        CHECK(parse_video_label("abnormal") == VideoLabel::Abnormal);
        CHECK(parse_supervision_mode("unsup") == SupervisionMode::Unsupervised);
        CHECK(parse_relation(to_string(Relation::Unknown)) == Relation::Unknown);
        CHECK_THROWS(parse_supervision_mode("semi"));
    }
}
