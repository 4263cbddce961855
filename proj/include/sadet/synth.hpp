#pragma once

// Synthetic scene/action worlds with a known relation table.

#include "sadet/data.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>

namespace sadet {

struct WorldShape {
    int joints = 17;
    int scene_dim = 16;
    int clip_len = 24;
    /// Joint oscillation amplitude as a fraction of the person box.
    double motion_amplitude = 0.25;
    /// Largest per-joint offset of an action's posture from the base pose, same units.
    double posture_amplitude = 0.15;
};

struct World {
    /// One unit-norm prototype per scene category (rows).
    Mat scene_prototypes;
    /// One noise-free trajectory per action category.
    std::vector<SkeletonSequence> action_templates;
    /// n_scenes x n_actions; 1 marks an abnormal pair.
    Eigen::MatrixXi relation_table;
    double noise_level = 0.0;
    WorldShape shape;

    int scene_count() const { return static_cast<int>(scene_prototypes.rows()); }
    int action_count() const { return static_cast<int>(action_templates.size()); }
};

/// Abnormal pairs number ceil(abnormal_fraction * n_scenes * n_actions). With
/// more than one scene every action stays normal in at least one scene and
/// every scene keeps at least one normal action.
World generate_world(int n_scenes, int n_actions, double abnormal_fraction, std::uint64_t seed,
                     const WorldShape& shape = {});

Relation oracle_label(const World& world, int scene_id, int action_id);

/// One jittered clip of (scene_id, action_id) at the world's noise level.
Clip make_clip(const World& world, int scene_id, int action_id, std::mt19937_64& rng);

/// Normal videos hold only normal pairs; abnormal videos hold at least one
/// abnormal pair and may hold normal ones. Each video keeps one scene.
Dataset sample_dataset(const World& world, int videos_per_class, int clips_per_video, std::uint64_t seed);

/// Sidecar ground truth: "scene_id<TAB>action_id<TAB>normal|abnormal" per pair.
void write_relations(std::ostream& out, const World& world);

} // namespace sadet
