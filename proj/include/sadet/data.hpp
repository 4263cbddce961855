#pragma once

// Decoupled scene/action clip records and the line-delimited dataset format.
//
// A dataset file is JSON Lines: the first line is the header record, every
// following line is one clip. Field names:
//
//   header: record="header", format="sadet-dataset", version=1, joints,
//           scene_dim, clip_len, mode ("full" | "weak" | "unsup"),
//           optional scene_count, action_count, scene_extractor
//   clip:   clip_id, video_id, start, end, video_label
//           ("normal" | "abnormal" | "unlabeled"), scene (scene_dim numbers),
//           optional scene_id, skeleton (clip_len rows of joints*3 numbers:
//           x, y, confidence per joint), pos (clip_len rows of cx, cy, w, h),
//           optional frame_labels (clip_len integers in {0, 1})

#include "sadet/numeric.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sadet {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class VideoLabel { Normal, Abnormal, Unlabeled };
/// Scene-action relation label. Unknown marks an absent graph edge.
enum class Relation { Normal, Abnormal, Unknown };
enum class SupervisionMode { Full, Weak, Unsupervised };

std::string to_string(VideoLabel label);
std::string to_string(SupervisionMode mode);
std::string to_string(Relation relation);
Relation parse_relation(const std::string& text);
VideoLabel parse_video_label(const std::string& text);
SupervisionMode parse_supervision_mode(const std::string& text);

/// Per-frame joints of one tracked person plus the per-frame position box.
struct SkeletonSequence {
    /// frames x (2 * joints); row t is x0, y0, x1, y1, ... in normalized image coordinates.
    Mat coords;
    /// frames x joints, each in [0, 1].
    Mat confidence;
    /// frames x 4; row t is (cx, cy, w, h) in normalized image coordinates.
    Mat pos;

    Index frames() const { return coords.rows(); }
    Index joints() const { return coords.cols() / 2; }
    double x(Index frame, Index joint) const { return coords(frame, 2 * joint); }
    double y(Index frame, Index joint) const { return coords(frame, 2 * joint + 1); }
};

struct SceneFeature {
    Vec vector;
    std::optional<int> scene_id_hint;
};

struct Clip {
    std::string clip_id;
    std::string video_id;
    int start = 0;
    int end = 0;
    SkeletonSequence skeleton;
    SceneFeature scene;
    VideoLabel video_label = VideoLabel::Unlabeled;
    std::optional<std::vector<int>> frame_labels;

    /// 1 when any frame is labeled abnormal. Requires frame labels.
    int clip_label() const;
};

struct DatasetHeader {
    int joints = 17;
    int scene_dim = 16;
    int clip_len = 24;
    SupervisionMode mode = SupervisionMode::Weak;
    std::optional<int> scene_count;
    std::optional<int> action_count;
    std::string scene_extractor = "unspecified";
};

struct Dataset {
    DatasetHeader header;
    std::vector<Clip> clips;
};

/// Throws DatasetError naming the clip when `clip` violates the header contract.
void validate_clip(const DatasetHeader& header, const Clip& clip);
/// Validates every clip and the uniqueness of clip ids.
void validate_dataset(const Dataset& dataset);

Dataset parse_dataset(std::istream& in);
Dataset load_dataset(const std::string& path);
void write_dataset(std::ostream& out, const Dataset& dataset);
void save_dataset(const std::string& path, const Dataset& dataset);

/// Every scene paired with every action (scene-major order). Positions travel
/// with the action. Output clips are unlabeled.
std::vector<Clip> cross_combine(std::span<const SceneFeature> scenes, std::span<const SkeletonSequence> actions,
                                const std::string& video_id = "combined");

/// Scenes and actions taken from existing clips.
std::vector<Clip> cross_combine(std::span<const Clip> scene_sources, std::span<const Clip> action_sources,
                                const std::string& video_id = "combined");

} // namespace sadet
