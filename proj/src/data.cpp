#include "sadet/data.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace sadet {

using nlohmann::json;

std::string to_string(VideoLabel label)
{
    switch (label) {
    case VideoLabel::Normal: return "normal";
    case VideoLabel::Abnormal: return "abnormal";
    case VideoLabel::Unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

std::string to_string(SupervisionMode mode)
{
    switch (mode) {
    case SupervisionMode::Full: return "full";
    case SupervisionMode::Weak: return "weak";
    case SupervisionMode::Unsupervised: return "unsup";
    }
    return "weak";
}

std::string to_string(Relation relation)
{
    switch (relation) {
    case Relation::Normal: return "normal";
    case Relation::Abnormal: return "abnormal";
    case Relation::Unknown: return "unknown";
    }
    return "unknown";
}

Relation parse_relation(const std::string& text)
{
    if (text == "normal") return Relation::Normal;
    if (text == "abnormal") return Relation::Abnormal;
    if (text == "unknown") return Relation::Unknown;
    throw std::invalid_argument("unknown relation '" + text + "'");
}

VideoLabel parse_video_label(const std::string& text)
{
    if (text == "normal") return VideoLabel::Normal;
    if (text == "abnormal") return VideoLabel::Abnormal;
    if (text == "unlabeled") return VideoLabel::Unlabeled;
    throw DatasetError("unknown video label '" + text + "'");
}

SupervisionMode parse_supervision_mode(const std::string& text)
{
    if (text == "full") return SupervisionMode::Full;
    if (text == "weak") return SupervisionMode::Weak;
    if (text == "unsup") return SupervisionMode::Unsupervised;
    throw DatasetError("unknown supervision mode '" + text + "'");
}

int Clip::clip_label() const
{
    if (!frame_labels) throw DatasetError("clip " + clip_id + ": no frame labels");
    for (int v : *frame_labels) {
        if (v != 0) return 1;
    }
    return 0;
}

namespace {

[[noreturn]] void fail(const std::string& clip_id, const std::string& what)
{
    throw DatasetError("clip " + clip_id + ": " + what);
}

bool in_unit(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

} // namespace

void validate_clip(const DatasetHeader& header, const Clip& clip)
{
    const std::string& id = clip.clip_id;
    if (id.empty()) fail("<unnamed>", "empty clip_id");
    if (clip.end - clip.start != header.clip_len) {
        fail(id, "frame span length " + std::to_string(clip.end - clip.start) + " != clip_len " +
                     std::to_string(header.clip_len));
    }
    if (clip.start < 0) fail(id, "negative start frame");

    const auto& sk = clip.skeleton;
    if (sk.coords.rows() != header.clip_len) {
        fail(id, "skeleton has " + std::to_string(sk.coords.rows()) + " frames, expected " +
                     std::to_string(header.clip_len));
    }
    if (sk.coords.cols() != 2 * header.joints) {
        fail(id, "skeleton has " + std::to_string(sk.coords.cols() / 2) + " joints, expected " +
                     std::to_string(header.joints));
    }
    if (sk.confidence.rows() != header.clip_len || sk.confidence.cols() != header.joints) {
        fail(id, "confidence shape mismatch");
    }
    if (sk.pos.rows() != header.clip_len || sk.pos.cols() != 4) fail(id, "pos shape mismatch");
    for (Index i = 0; i < sk.coords.size(); ++i) {
        if (!in_unit(sk.coords.data()[i])) fail(id, "joint coordinate out of [0,1]");
    }
    for (Index i = 0; i < sk.confidence.size(); ++i) {
        if (!in_unit(sk.confidence.data()[i])) fail(id, "joint confidence out of [0,1]");
    }
    for (Index i = 0; i < sk.pos.size(); ++i) {
        if (!in_unit(sk.pos.data()[i])) fail(id, "position box out of [0,1]");
    }

    if (clip.scene.vector.size() != header.scene_dim) {
        fail(id, "scene feature dim " + std::to_string(clip.scene.vector.size()) + " != scene_dim " +
                     std::to_string(header.scene_dim));
    }
    if (!clip.scene.vector.allFinite()) fail(id, "non-finite scene feature");

    if (clip.frame_labels) {
        if (static_cast<int>(clip.frame_labels->size()) != header.clip_len) {
            fail(id, "frame_labels length " + std::to_string(clip.frame_labels->size()) + " != clip_len");
        }
        for (int v : *clip.frame_labels) {
            if (v != 0 && v != 1) fail(id, "frame label not binary");
        }
    }
    if (header.mode == SupervisionMode::Full && !clip.frame_labels) {
        fail(id, "frame_labels required in full supervision mode");
    }
}

void validate_dataset(const Dataset& dataset)
{
    if (dataset.clips.empty()) throw DatasetError("empty dataset");
    const auto& h = dataset.header;
    if (h.joints < 1 || h.scene_dim < 1 || h.clip_len < 1) throw DatasetError("header: non-positive dimension");
    std::set<std::string> seen;
    for (const auto& clip : dataset.clips) {
        validate_clip(h, clip);
        if (!seen.insert(clip.clip_id).second) fail(clip.clip_id, "duplicate clip_id");
    }
}

namespace {

template <typename T>
T field(const json& rec, const char* key, const std::string& where)
{
    const auto it = rec.find(key);
    if (it == rec.end()) throw DatasetError(where + ": missing field '" + key + "'");
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw DatasetError(where + ": field '" + key + "' has the wrong type");
    }
}

json header_to_json(const DatasetHeader& h)
{
    json j;
    j["record"] = "header";
    j["format"] = "sadet-dataset";
    j["version"] = 1;
    j["joints"] = h.joints;
    j["scene_dim"] = h.scene_dim;
    j["clip_len"] = h.clip_len;
    j["mode"] = to_string(h.mode);
    if (h.scene_count) j["scene_count"] = *h.scene_count;
    if (h.action_count) j["action_count"] = *h.action_count;
    j["scene_extractor"] = h.scene_extractor;
    return j;
}

DatasetHeader header_from_json(const json& j)
{
    const std::string where = "header";
    if (field<std::string>(j, "record", where) != "header") throw DatasetError("first record is not a header");
    if (field<std::string>(j, "format", where) != "sadet-dataset") throw DatasetError("header: unknown format");
    if (field<int>(j, "version", where) != 1) throw DatasetError("header: unsupported version");
    DatasetHeader h;
    h.joints = field<int>(j, "joints", where);
    h.scene_dim = field<int>(j, "scene_dim", where);
    h.clip_len = field<int>(j, "clip_len", where);
    h.mode = parse_supervision_mode(field<std::string>(j, "mode", where));
    if (j.contains("scene_count")) h.scene_count = field<int>(j, "scene_count", where);
    if (j.contains("action_count")) h.action_count = field<int>(j, "action_count", where);
    if (j.contains("scene_extractor")) h.scene_extractor = field<std::string>(j, "scene_extractor", where);
    return h;
}

json rows_to_json(const Mat& m)
{
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

json clip_to_json(const Clip& clip)
{
    json j;
    j["clip_id"] = clip.clip_id;
    j["video_id"] = clip.video_id;
    j["start"] = clip.start;
    j["end"] = clip.end;
    j["video_label"] = to_string(clip.video_label);
    j["scene"] = std::vector<double>(clip.scene.vector.data(), clip.scene.vector.data() + clip.scene.vector.size());
    if (clip.scene.scene_id_hint) j["scene_id"] = *clip.scene.scene_id_hint;

    const auto& sk = clip.skeleton;
    const Index joints = sk.joints();
    json frames = json::array();
    for (Index t = 0; t < sk.frames(); ++t) {
        json row = json::array();
        for (Index k = 0; k < joints; ++k) {
            row.push_back(sk.x(t, k));
            row.push_back(sk.y(t, k));
            row.push_back(sk.confidence(t, k));
        }
        frames.push_back(std::move(row));
    }
    j["skeleton"] = std::move(frames);
    j["pos"] = rows_to_json(sk.pos);
    if (clip.frame_labels) j["frame_labels"] = *clip.frame_labels;
    return j;
}

std::vector<std::vector<double>> matrix_field(const json& rec, const char* key, const std::string& where)
{
    return field<std::vector<std::vector<double>>>(rec, key, where);
}

Clip clip_from_json(const json& j, const DatasetHeader& h, std::size_t line_no)
{
    std::string id = "at line " + std::to_string(line_no);
    if (j.contains("clip_id") && j["clip_id"].is_string()) id = j["clip_id"].get<std::string>();
    const std::string where = "clip " + id;

    Clip clip;
    clip.clip_id = field<std::string>(j, "clip_id", where);
    clip.video_id = field<std::string>(j, "video_id", where);
    clip.start = field<int>(j, "start", where);
    clip.end = field<int>(j, "end", where);
    try {
        clip.video_label = parse_video_label(field<std::string>(j, "video_label", where));
    } catch (const DatasetError& e) {
        throw DatasetError(where + ": " + e.what());
    }

    const auto scene = field<std::vector<double>>(j, "scene", where);
    clip.scene.vector = Eigen::Map<const Vec>(scene.data(), static_cast<Index>(scene.size()));
    if (j.contains("scene_id")) clip.scene.scene_id_hint = field<int>(j, "scene_id", where);

    const auto frames = matrix_field(j, "skeleton", where);
    const Index joints = h.joints;
    clip.skeleton.coords.resize(static_cast<Index>(frames.size()), 2 * joints);
    clip.skeleton.confidence.resize(static_cast<Index>(frames.size()), joints);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        if (static_cast<Index>(frames[t].size()) != 3 * joints) {
            throw DatasetError(where + ": frame " + std::to_string(t) + " has " +
                               std::to_string(frames[t].size() / 3) + " joints, expected " +
                               std::to_string(joints));
        }
        for (Index k = 0; k < joints; ++k) {
            clip.skeleton.coords(static_cast<Index>(t), 2 * k) = frames[t][3 * k];
            clip.skeleton.coords(static_cast<Index>(t), 2 * k + 1) = frames[t][3 * k + 1];
            clip.skeleton.confidence(static_cast<Index>(t), k) = frames[t][3 * k + 2];
        }
    }

    const auto pos = matrix_field(j, "pos", where);
    clip.skeleton.pos.resize(static_cast<Index>(pos.size()), 4);
    for (std::size_t t = 0; t < pos.size(); ++t) {
        if (pos[t].size() != 4) throw DatasetError(where + ": pos row " + std::to_string(t) + " is not 4 numbers");
        for (Index c = 0; c < 4; ++c) clip.skeleton.pos(static_cast<Index>(t), c) = pos[t][c];
    }

    if (j.contains("frame_labels")) clip.frame_labels = field<std::vector<int>>(j, "frame_labels", where);
    return clip;
}

} // namespace

Dataset parse_dataset(std::istream& in)
{
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DatasetError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
        }
        if (!rec.is_object()) throw DatasetError("line " + std::to_string(line_no) + ": record is not an object");
        if (!have_header) {
            ds.header = header_from_json(rec);
            have_header = true;
            continue;
        }
        ds.clips.push_back(clip_from_json(rec, ds.header, line_no));
    }
    if (!have_header) throw DatasetError("empty dataset");
    validate_dataset(ds);
    return ds;
}

Dataset load_dataset(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open dataset file " + path);
    return parse_dataset(in);
}

void write_dataset(std::ostream& out, const Dataset& dataset)
{
    out << header_to_json(dataset.header).dump() << '\n';
    for (const auto& clip : dataset.clips) out << clip_to_json(clip).dump() << '\n';
}

void save_dataset(const std::string& path, const Dataset& dataset)
{
    std::ofstream out(path);
    if (!out) throw DatasetError("cannot write dataset file " + path);
    write_dataset(out, dataset);
}

std::vector<Clip> cross_combine(std::span<const SceneFeature> scenes, std::span<const SkeletonSequence> actions,
                                const std::string& video_id)
{
    if (scenes.empty() || actions.empty()) throw DatasetError("cross_combine: empty input");
    std::vector<Clip> out;
    out.reserve(scenes.size() * actions.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        for (std::size_t a = 0; a < actions.size(); ++a) {
            Clip c;
            c.clip_id = video_id + "_s" + std::to_string(s) + "_a" + std::to_string(a);
            c.video_id = video_id;
            c.start = 0;
            c.end = static_cast<int>(actions[a].frames());
            c.skeleton = actions[a];
            c.scene = scenes[s];
            c.video_label = VideoLabel::Unlabeled;
            out.push_back(std::move(c));
        }
    }
    return out;
}

std::vector<Clip> cross_combine(std::span<const Clip> scene_sources, std::span<const Clip> action_sources,
                                const std::string& video_id)
{
    std::vector<SceneFeature> scenes;
    scenes.reserve(scene_sources.size());
    for (const auto& c : scene_sources) scenes.push_back(c.scene);
    std::vector<SkeletonSequence> actions;
    actions.reserve(action_sources.size());
    for (const auto& c : action_sources) actions.push_back(c.skeleton);
    return cross_combine(std::span<const SceneFeature>(scenes), std::span<const SkeletonSequence>(actions), video_id);
}

} // namespace sadet
