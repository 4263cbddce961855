#include "sadet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace sadet {

namespace {

// COCO keypoint layout, offsets relative to the box center in box units.
constexpr double kCocoPose[17][2] = {
    {0.00, -0.42}, {-0.04, -0.45}, {0.04, -0.45}, {-0.08, -0.43}, {0.08, -0.43}, {-0.18, -0.28},
    {0.18, -0.28}, {-0.26, -0.10}, {0.26, -0.10}, {-0.30, 0.06},  {0.30, 0.06},  {-0.12, 0.05},
    {0.12, 0.05},  {-0.13, 0.25},  {0.13, 0.25},  {-0.14, 0.44},  {0.14, 0.44},
};

Eigen::Vector2d base_offset(int joint, int joints)
{
    if (joints == 17) return {kCocoPose[joint][0], kCocoPose[joint][1]};
    const double t = joints > 1 ? static_cast<double>(joint) / (joints - 1) : 0.5;
    return {0.0, -0.4 + 0.8 * t};
}

int abnormal_target(double fraction, int n_scenes, int n_actions)
{
    return static_cast<int>(std::ceil(fraction * n_scenes * n_actions - 1e-9));
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

} // namespace

World generate_world(int n_scenes, int n_actions, double abnormal_fraction, std::uint64_t seed,
                     const WorldShape& shape)
{
    if (n_scenes < 1) throw std::invalid_argument("generate_world: n_scenes must be >= 1");
    if (n_actions < 2) throw std::invalid_argument("generate_world: n_actions must be >= 2");
    if (!(abnormal_fraction > 0.0 && abnormal_fraction < 1.0)) {
        throw std::invalid_argument("generate_world: abnormal_fraction must lie in (0, 1)");
    }
    if (shape.joints < 1 || shape.scene_dim < 1 || shape.clip_len < 1) {
        throw std::invalid_argument("generate_world: non-positive shape");
    }

    const int target = abnormal_target(abnormal_fraction, n_scenes, n_actions);
    const int action_cap = n_scenes > 1 ? n_scenes - 1 : 1;
    const int scene_cap = n_actions - 1;
    const int capacity = n_scenes > 1 ? std::min((n_scenes - 1) * n_actions, n_scenes * (n_actions - 1))
                                      : n_actions - 1;
    if (target > capacity) {
        throw std::invalid_argument("generate_world: abnormal fraction " + std::to_string(abnormal_fraction) +
                                    " would leave some action abnormal in every scene");
    }

    std::mt19937_64 rng(seed);
    World world;
    world.shape = shape;

    std::vector<std::pair<int, int>> pairs;
    for (int s = 0; s < n_scenes; ++s) {
        for (int a = 0; a < n_actions; ++a) pairs.emplace_back(s, a);
    }
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        std::shuffle(pairs.begin(), pairs.end(), rng);
        world.relation_table = Eigen::MatrixXi::Zero(n_scenes, n_actions);
        std::vector<int> per_action(n_actions, 0), per_scene(n_scenes, 0);
        int count = 0;
        for (auto [s, a] : pairs) {
            if (count == target) break;
            if (per_action[a] >= action_cap || per_scene[s] >= scene_cap) continue;
            world.relation_table(s, a) = 1;
            ++per_action[a];
            ++per_scene[s];
            ++count;
        }
        placed = count == target;
    }
    if (!placed) throw std::invalid_argument("generate_world: could not place abnormal pairs");

    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    world.scene_prototypes.resize(n_scenes, shape.scene_dim);
    for (int s = 0; s < n_scenes; ++s) {
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            Vec v(shape.scene_dim);
            for (auto& x : v) x = gauss(rng);
            if (v.norm() == 0.0) continue;
            v.normalize();
            ok = true;
            for (int p = 0; p < s && ok; ++p) {
                ok = cosine_similarity(v, world.scene_prototypes.row(p).transpose()) < 0.8;
            }
            if (ok) world.scene_prototypes.row(s) = v.transpose();
        }
        if (!ok) throw std::invalid_argument("generate_world: scene_dim too small for separable prototypes");
    }

    const int T = shape.clip_len;
    const int J = shape.joints;
    const double box_w = 0.4, box_h = 0.8;
    for (int a = 0; a < n_actions; ++a) {
        const double freq = 1.0 + static_cast<double>(a % 3);
        const double cx = 0.3 + 0.4 * unit(rng);
        const double cy = 0.45 + 0.1 * unit(rng);
        SkeletonSequence sk;
        sk.coords.resize(T, 2 * J);
        sk.confidence = Mat::Ones(T, J);
        sk.pos.resize(T, 4);
        for (int t = 0; t < T; ++t) sk.pos.row(t) << cx, cy, box_w, box_h;
        for (int j = 0; j < J; ++j) {
            // Each action holds its own posture and moves every joint on its own phase.
            const Eigen::Vector2d base =
                base_offset(j, J) + shape.posture_amplitude * Eigen::Vector2d(2.0 * unit(rng) - 1.0, 2.0 * unit(rng) - 1.0);
            const double phase_x = 2.0 * std::numbers::pi * unit(rng);
            const double phase_y = 2.0 * std::numbers::pi * unit(rng);
            const double amp_x = shape.motion_amplitude * (0.5 + 0.5 * unit(rng));
            const double amp_y = shape.motion_amplitude * (0.5 + 0.5 * unit(rng));
            for (int t = 0; t < T; ++t) {
                const double w = 2.0 * std::numbers::pi * freq * t / T;
                sk.coords(t, 2 * j) = clamp01(cx + box_w * (base.x() + amp_x * std::sin(w + phase_x)));
                sk.coords(t, 2 * j + 1) = clamp01(cy + box_h * (base.y() + amp_y * std::sin(w + phase_y)));
            }
        }
        world.action_templates.push_back(std::move(sk));
    }
    return world;
}

Relation oracle_label(const World& world, int scene_id, int action_id)
{
    if (scene_id < 0 || scene_id >= world.scene_count() || action_id < 0 || action_id >= world.action_count()) {
        throw std::out_of_range("oracle_label: id out of range");
    }
    return world.relation_table(scene_id, action_id) != 0 ? Relation::Abnormal : Relation::Normal;
}

Clip make_clip(const World& world, int scene_id, int action_id, std::mt19937_64& rng)
{
    const Relation rel = oracle_label(world, scene_id, action_id);
    std::normal_distribution<double> jitter(0.0, 1.0);
    const double sigma = world.noise_level;
    const auto& tpl = world.action_templates[action_id];

    Clip clip;
    clip.skeleton = tpl;
    if (sigma > 0.0) {
        // The person shifts as a whole (box and joints together); joints also jitter independently.
        const double dx = sigma * jitter(rng), dy = sigma * jitter(rng);
        auto& sk = clip.skeleton;
        for (Index t = 0; t < sk.frames(); ++t) {
            for (Index j = 0; j < sk.joints(); ++j) {
                sk.coords(t, 2 * j) = clamp01(sk.coords(t, 2 * j) + dx + sigma * jitter(rng));
                sk.coords(t, 2 * j + 1) = clamp01(sk.coords(t, 2 * j + 1) + dy + sigma * jitter(rng));
            }
            sk.pos(t, 0) = clamp01(sk.pos(t, 0) + dx);
            sk.pos(t, 1) = clamp01(sk.pos(t, 1) + dy);
        }
    }
    clip.scene.vector = world.scene_prototypes.row(scene_id).transpose();
    if (sigma > 0.0) {
        // Prototypes are unit vectors; the jitter vector has norm close to sigma.
        const double scene_sigma = sigma / std::sqrt(static_cast<double>(clip.scene.vector.size()));
        for (auto& v : clip.scene.vector) v += scene_sigma * jitter(rng);
    }
    clip.scene.scene_id_hint = scene_id;
    clip.start = 0;
    clip.end = world.shape.clip_len;
    clip.frame_labels = std::vector<int>(world.shape.clip_len, rel == Relation::Abnormal ? 1 : 0);
    return clip;
}

Dataset sample_dataset(const World& world, int videos_per_class, int clips_per_video, std::uint64_t seed)
{
    if (videos_per_class < 1 || clips_per_video < 1) {
        throw std::invalid_argument("sample_dataset: counts must be positive");
    }
    std::mt19937_64 rng(seed);
    const int S = world.scene_count();
    const int A = world.action_count();
    const int T = world.shape.clip_len;

    std::vector<std::vector<int>> normal_actions(S), abnormal_actions(S);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            (world.relation_table(s, a) != 0 ? abnormal_actions : normal_actions)[s].push_back(a);
        }
    }
    std::vector<int> normal_scenes, abnormal_scenes;
    for (int s = 0; s < S; ++s) {
        if (!normal_actions[s].empty()) normal_scenes.push_back(s);
        if (!abnormal_actions[s].empty()) abnormal_scenes.push_back(s);
    }
    if (normal_scenes.empty() || abnormal_scenes.empty()) {
        throw std::invalid_argument("sample_dataset: world lacks normal or abnormal pairs");
    }

    // Per-scene cursors cycle through the action lists so that every pair
    // shows up once enough clips are drawn.
    std::vector<std::size_t> normal_cursor(S), abnormal_cursor(S);
    for (int s = 0; s < S; ++s) {
        normal_cursor[s] = rng() % std::max<std::size_t>(1, normal_actions[s].size());
        abnormal_cursor[s] = rng() % std::max<std::size_t>(1, abnormal_actions[s].size());
    }
    auto next_normal = [&](int s) { return normal_actions[s][normal_cursor[s]++ % normal_actions[s].size()]; };
    auto next_abnormal = [&](int s) {
        return abnormal_actions[s][abnormal_cursor[s]++ % abnormal_actions[s].size()];
    };

    Dataset ds;
    ds.header.joints = world.shape.joints;
    ds.header.scene_dim = world.shape.scene_dim;
    ds.header.clip_len = T;
    ds.header.mode = SupervisionMode::Full;
    ds.header.scene_count = S;
    ds.header.action_count = A;
    ds.header.scene_extractor = "synthetic";

    std::bernoulli_distribution coin(0.5);
    char buf[64];
    for (int cls = 0; cls < 2; ++cls) {
        const bool abnormal_video = cls == 1;
        for (int v = 0; v < videos_per_class; ++v) {
            std::snprintf(buf, sizeof buf, "%c%03d", abnormal_video ? 'a' : 'n', v);
            const std::string video_id = buf;
            const int scene = abnormal_video ? abnormal_scenes[v % abnormal_scenes.size()]
                                             : normal_scenes[v % normal_scenes.size()];
            const int forced = static_cast<int>(rng() % static_cast<std::uint64_t>(clips_per_video));
            for (int c = 0; c < clips_per_video; ++c) {
                int action;
                if (!abnormal_video) {
                    action = next_normal(scene);
                } else if (c == forced || normal_actions[scene].empty() || coin(rng)) {
                    action = next_abnormal(scene);
                } else {
                    action = next_normal(scene);
                }
                Clip clip = make_clip(world, scene, action, rng);
                std::snprintf(buf, sizeof buf, "%s_c%03d", video_id.c_str(), c);
                clip.clip_id = buf;
                clip.video_id = video_id;
                clip.start = c * T;
                clip.end = (c + 1) * T;
                clip.video_label = abnormal_video ? VideoLabel::Abnormal : VideoLabel::Normal;
                ds.clips.push_back(std::move(clip));
            }
        }
    }
    return ds;
}

void write_relations(std::ostream& out, const World& world)
{
    for (int s = 0; s < world.scene_count(); ++s) {
        for (int a = 0; a < world.action_count(); ++a) {
            out << s << '\t' << a << '\t' << to_string(oracle_label(world, s, a)) << '\n';
        }
    }
}

} // namespace sadet
