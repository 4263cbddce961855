#include "sadet/rkm.hpp"

#include "text_io.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

namespace sadet {

void RkmConfig::validate() const
{
    if (theta_fn < 1 || theta_fa < 1) throw std::invalid_argument("rkm: cluster counts must be >= 1");
    if (scene_k < 0) throw std::invalid_argument("rkm: scene_k must be >= 0");
    auto in_range = [](double v) { return v > 0.0 && v <= 1.0; };
    if (!in_range(rho)) throw std::invalid_argument("rkm: rho must lie in (0, 1]");
    if (!in_range(mu_a)) throw std::invalid_argument("rkm: mu_a must lie in (0, 1]");
    if (!in_range(mu_s)) throw std::invalid_argument("rkm: mu_s must lie in (0, 1]");
}

std::string to_string(Provenance p)
{
    switch (p) {
    case Provenance::Normal: return "normal";
    case Provenance::Abnormal: return "abnormal";
    case Provenance::Shared: return "shared";
    case Provenance::Added: return "added";
    }
    return "normal";
}

Provenance parse_provenance(const std::string& text)
{
    if (text == "normal") return Provenance::Normal;
    if (text == "abnormal") return Provenance::Abnormal;
    if (text == "shared") return Provenance::Shared;
    if (text == "added") return Provenance::Added;
    throw GraphError("unknown provenance '" + text + "'");
}

namespace {

Mat stack_centers(const std::vector<GraphNode>& nodes)
{
    if (nodes.empty()) return Mat(0, 0);
    Mat m(static_cast<Index>(nodes.size()), nodes.front().center.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) m.row(static_cast<Index>(i)) = nodes[i].center.transpose();
    return m;
}

int next_id(const std::vector<GraphNode>& nodes)
{
    int id = 0;
    for (const auto& n : nodes) id = std::max(id, n.id + 1);
    return id;
}

const GraphNode& node_by_id(const std::vector<GraphNode>& nodes, int id)
{
    for (const auto& n : nodes) {
        if (n.id == id) return n;
    }
    throw GraphError("no node with id " + std::to_string(id));
}

WeightedCenters from_model(const ClusterModel<double>& model)
{
    const auto counts = model.counts();
    WeightedCenters out;
    std::vector<Index> keep;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] > 0) keep.push_back(static_cast<Index>(c));
    }
    out.centers.resize(static_cast<Index>(keep.size()), model.centers.cols());
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.centers.row(static_cast<Index>(i)) = model.centers.row(keep[i]);
        out.counts.push_back(static_cast<long>(counts[static_cast<std::size_t>(keep[i])]));
    }
    return out;
}

Mat stack_rows(const std::vector<Vec>& rows)
{
    Mat m(static_cast<Index>(rows.size()), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Index>(i)) = rows[i].transpose();
    return m;
}

} // namespace

Mat KnowledgeGraph::scene_centers() const { return stack_centers(scene_nodes); }
Mat KnowledgeGraph::action_centers() const { return stack_centers(action_nodes); }

Relation KnowledgeGraph::relation(int scene_id, int action_id) const
{
    const auto it = relations.find({scene_id, action_id});
    return it == relations.end() ? Relation::Unknown : it->second;
}

Vec action_feature(const SkeletonSequence& skeleton)
{
    const Index frames = skeleton.coords.rows();
    const Index width = skeleton.coords.cols();
    if (frames == 0 || width == 0) throw GraphError("action_feature: empty skeleton");
    const Eigen::RowVectorXd mean = skeleton.coords.colwise().mean();
    const Mat centered = skeleton.coords.rowwise() - mean;
    Vec out(frames * width);
    for (Index t = 0; t < frames; ++t) out.segment(t * width, width) = centered.row(t).transpose();
    return out;
}

ClusterSet build_clusters(const Dataset& dataset, const RkmConfig& cfg)
{
    cfg.validate();
    std::vector<Vec> normal, abnormal, scenes;
    bool all_hinted = true;
    for (const auto& clip : dataset.clips) {
        if (clip.video_label == VideoLabel::Normal) normal.push_back(action_feature(clip.skeleton));
        else if (clip.video_label == VideoLabel::Abnormal) abnormal.push_back(action_feature(clip.skeleton));
        else continue;
        scenes.push_back(clip.scene.vector);
        all_hinted = all_hinted && clip.scene.scene_id_hint.has_value();
    }
    if (static_cast<int>(normal.size()) < cfg.theta_fn) {
        throw GraphError("build_clusters: " + std::to_string(normal.size()) +
                         " normal-video action samples, need theta_fn=" + std::to_string(cfg.theta_fn));
    }
    if (static_cast<int>(abnormal.size()) < cfg.theta_fa) {
        throw GraphError("build_clusters: " + std::to_string(abnormal.size()) +
                         " abnormal-video action samples, need theta_fa=" + std::to_string(cfg.theta_fa));
    }

    ClusterSet out;
    out.normal_actions = from_model(kmeans(stack_rows(normal), cfg.theta_fn, cfg.seed));
    out.abnormal_actions = from_model(kmeans(stack_rows(abnormal), cfg.theta_fa, cfg.seed + 1));

    const auto& header = dataset.header;
    const bool use_categories =
        header.scene_count && all_hinted && (cfg.scene_k == 0 || cfg.scene_k == *header.scene_count);
    if (use_categories) {
        // Known categories: centers are per-category means, no clustering.
        const int count = *header.scene_count;
        Mat sums = Mat::Zero(count, header.scene_dim);
        std::vector<long> members(static_cast<std::size_t>(count), 0);
        for (const auto& clip : dataset.clips) {
            if (clip.video_label == VideoLabel::Unlabeled) continue;
            const int id = *clip.scene.scene_id_hint;
            if (id < 0 || id >= count) throw GraphError("clip " + clip.clip_id + ": scene_id out of range");
            sums.row(id) += clip.scene.vector.transpose();
            ++members[static_cast<std::size_t>(id)];
        }
        std::vector<Index> keep;
        for (int c = 0; c < count; ++c) {
            if (members[static_cast<std::size_t>(c)] > 0) keep.push_back(c);
        }
        out.scenes.centers.resize(static_cast<Index>(keep.size()), header.scene_dim);
        for (std::size_t i = 0; i < keep.size(); ++i) {
            const long m = members[static_cast<std::size_t>(keep[i])];
            out.scenes.centers.row(static_cast<Index>(i)) = sums.row(keep[i]) / static_cast<double>(m);
            out.scenes.counts.push_back(m);
        }
    } else {
        const int k = cfg.scene_k > 0 ? cfg.scene_k : header.scene_count.value_or(0);
        if (k < 1) throw GraphError("build_clusters: scene_k unset and no scene_count in dataset header");
        if (k > static_cast<int>(scenes.size())) throw GraphError("build_clusters: scene_k exceeds scene samples");
        out.scenes = from_model(kmeans(stack_rows(scenes), k, cfg.seed + 2));
    }
    return out;
}

std::vector<GraphNode> combine_centers(const WeightedCenters& normal, const WeightedCenters& abnormal, double rho)
{
    if (normal.centers.rows() > 0 && abnormal.centers.rows() > 0 &&
        normal.centers.cols() != abnormal.centers.cols()) {
        throw DimensionError("combine_centers: dimension mismatch");
    }
    std::vector<GraphNode> nodes;
    for (Index i = 0; i < normal.centers.rows(); ++i) {
        nodes.push_back({static_cast<int>(i), normal.centers.row(i).transpose(),
                         normal.counts[static_cast<std::size_t>(i)], Provenance::Normal});
    }
    // Matches are taken against the original normal centers, then applied.
    std::vector<Index> target(static_cast<std::size_t>(abnormal.centers.rows()), -1);
    if (normal.centers.rows() > 0) {
        for (Index j = 0; j < abnormal.centers.rows(); ++j) {
            const auto m = max_similarity(abnormal.centers.row(j).transpose(), normal.centers);
            if (m.value > rho) target[static_cast<std::size_t>(j)] = m.index;
        }
    }
    for (Index j = 0; j < abnormal.centers.rows(); ++j) {
        const long count = abnormal.counts[static_cast<std::size_t>(j)];
        const Index t = target[static_cast<std::size_t>(j)];
        if (t < 0) {
            nodes.push_back({static_cast<int>(nodes.size()), abnormal.centers.row(j).transpose(), count,
                             Provenance::Abnormal});
            continue;
        }
        auto& node = nodes[static_cast<std::size_t>(t)];
        const double total = static_cast<double>(node.member_count + count);
        node.center = (node.center * static_cast<double>(node.member_count) +
                       abnormal.centers.row(j).transpose() * static_cast<double>(count)) /
                      total;
        node.member_count += count;
        node.provenance = Provenance::Shared;
    }
    return nodes;
}

std::vector<GraphNode> scene_nodes_from(const WeightedCenters& scenes)
{
    std::vector<GraphNode> nodes;
    for (Index i = 0; i < scenes.centers.rows(); ++i) {
        nodes.push_back({static_cast<int>(i), scenes.centers.row(i).transpose(),
                         scenes.counts[static_cast<std::size_t>(i)], Provenance::Normal});
    }
    return nodes;
}

namespace {

NodeAssignment assign_clip(const KnowledgeGraph& kg, const Mat& scenes, const Mat& actions, const Clip& clip)
{
    try {
        const auto s = max_similarity(clip.scene.vector, scenes);
        const auto a = max_similarity(action_feature(clip.skeleton), actions);
        return {kg.scene_nodes[static_cast<std::size_t>(s.index)].id,
                kg.action_nodes[static_cast<std::size_t>(a.index)].id, s.value, a.value};
    } catch (const ZeroNormError&) {
        throw GraphError("clip " + clip.clip_id + ": zero-norm feature cannot be assigned to a node");
    } catch (const DimensionError&) {
        throw GraphError("clip " + clip.clip_id + ": feature dimension does not match graph nodes");
    }
}

template <typename ClipRange>
void insert_relations(KnowledgeGraph& kg, const ClipRange& normal, const ClipRange& abnormal)
{
    const Mat scenes = kg.scene_centers();
    const Mat actions = kg.action_centers();
    for (const Clip* clip : normal) {
        const auto n = assign_clip(kg, scenes, actions, *clip);
        kg.relations[{n.scene_id, n.action_id}] = Relation::Normal;
    }
    for (const Clip* clip : abnormal) {
        const auto n = assign_clip(kg, scenes, actions, *clip);
        kg.relations.try_emplace({n.scene_id, n.action_id}, Relation::Abnormal);
    }
}

} // namespace

KnowledgeGraph construct_graph(std::span<const Clip* const> normal_clips, std::span<const Clip* const> abnormal_clips,
                               std::vector<GraphNode> action_nodes, std::vector<GraphNode> scene_nodes)
{
    if (action_nodes.empty() || scene_nodes.empty()) throw GraphError("construct_graph: no cluster centers");
    KnowledgeGraph kg;
    kg.action_nodes = std::move(action_nodes);
    kg.scene_nodes = std::move(scene_nodes);
    insert_relations(kg, normal_clips, abnormal_clips);
    return kg;
}

KnowledgeGraph build_graph(const Dataset& dataset, const RkmConfig& cfg)
{
    const ClusterSet clusters = build_clusters(dataset, cfg);
    std::vector<const Clip*> normal, abnormal;
    for (const auto& clip : dataset.clips) {
        if (clip.video_label == VideoLabel::Normal) normal.push_back(&clip);
        else if (clip.video_label == VideoLabel::Abnormal) abnormal.push_back(&clip);
    }
    return construct_graph(normal, abnormal, combine_centers(clusters.normal_actions, clusters.abnormal_actions, cfg.rho),
                           scene_nodes_from(clusters.scenes));
}

NodeAssignment assign_nodes(const KnowledgeGraph& kg, const Vec& scene_feature, const Vec& action_feature)
{
    if (kg.empty()) throw GraphError("query on an empty knowledge graph");
    const auto s = max_similarity(scene_feature, kg.scene_centers());
    const auto a = max_similarity(action_feature, kg.action_centers());
    return {kg.scene_nodes[static_cast<std::size_t>(s.index)].id, kg.action_nodes[static_cast<std::size_t>(a.index)].id,
            s.value, a.value};
}

Relation query_relation(const KnowledgeGraph& kg, const Vec& scene_feature, const Vec& action_feature)
{
    const auto n = assign_nodes(kg, scene_feature, action_feature);
    return kg.relation(n.scene_id, n.action_id);
}

Relation query_relation(const KnowledgeGraph& kg, const Clip& clip)
{
    return query_relation(kg, clip.scene.vector, action_feature(clip.skeleton));
}

namespace {

UpdateDecision update_side(std::vector<GraphNode>& nodes, const Vec& x, double mu, GraphSide side)
{
    UpdateDecision d;
    d.side = side;
    if (!nodes.empty()) {
        const auto m = max_similarity(x, stack_centers(nodes));
        d.max_similarity = m.value;
        if (m.value > mu) {
            auto& node = nodes[static_cast<std::size_t>(m.index)];
            const double n = static_cast<double>(node.member_count);
            node.center = (node.center * n + x) / (n + 1.0);
            ++node.member_count;
            d.node_id = node.id;
            d.added = false;
            return d;
        }
    } else {
        d.max_similarity = -1.0;
    }
    if (x.norm() == 0.0) throw GraphError("update_graph: zero-norm feature");
    GraphNode node{next_id(nodes), x, 1, Provenance::Added};
    d.node_id = node.id;
    d.added = true;
    nodes.push_back(std::move(node));
    return d;
}

} // namespace

KnowledgeGraph update_graph(KnowledgeGraph kg, std::span<const FeaturePair> items, const RkmConfig& cfg,
                            std::vector<UpdateDecision>* decisions)
{
    cfg.validate();
    for (const auto& item : items) {
        try {
            const auto da = update_side(kg.action_nodes, item.action, cfg.mu_a, GraphSide::Action);
            const auto ds = update_side(kg.scene_nodes, item.scene, cfg.mu_s, GraphSide::Scene);
            if (decisions) {
                decisions->push_back(da);
                decisions->push_back(ds);
            }
        } catch (const ZeroNormError&) {
            throw GraphError("update_graph: zero-norm feature");
        }
    }
    return kg;
}

KnowledgeGraph update_graph(KnowledgeGraph kg, std::span<const Clip> new_clips, const RkmConfig& cfg,
                            std::vector<UpdateDecision>* decisions)
{
    std::vector<FeaturePair> items;
    items.reserve(new_clips.size());
    for (const auto& clip : new_clips) items.push_back({clip.scene.vector, action_feature(clip.skeleton)});
    return update_graph(std::move(kg), std::span<const FeaturePair>(items), cfg, decisions);
}

KnowledgeGraph build_subgraph(const KnowledgeGraph& nodes, std::span<const Clip> clips)
{
    if (nodes.empty()) throw GraphError("build_subgraph: node sets are empty");
    KnowledgeGraph sub;
    sub.scene_nodes = nodes.scene_nodes;
    sub.action_nodes = nodes.action_nodes;
    std::vector<const Clip*> normal, abnormal;
    for (const auto& clip : clips) {
        if (clip.video_label == VideoLabel::Normal) normal.push_back(&clip);
        else if (clip.video_label == VideoLabel::Abnormal) abnormal.push_back(&clip);
    }
    insert_relations(sub, normal, abnormal);
    return sub;
}

KnowledgeGraph merge_subgraph(KnowledgeGraph main, const KnowledgeGraph& sub)
{
    if (sub.relations.empty()) return main;
    if (main.empty()) throw GraphError("merge_subgraph: main graph has no nodes");
    const Mat scenes = main.scene_centers();
    const Mat actions = main.action_centers();
    for (const auto& [key, label] : sub.relations) {
        const auto& sub_scene = node_by_id(sub.scene_nodes, key.first);
        const auto& sub_action = node_by_id(sub.action_nodes, key.second);
        const auto s = max_similarity(sub_scene.center, scenes);
        const auto a = max_similarity(sub_action.center, actions);
        const std::pair<int, int> target{main.scene_nodes[static_cast<std::size_t>(s.index)].id,
                                         main.action_nodes[static_cast<std::size_t>(a.index)].id};
        // Absent: adopt. Equal: nothing to do. Conflicting: main wins.
        main.relations.try_emplace(target, label);
    }
    return main;
}

namespace {

void write_nodes(std::ostream& out, const char* tag, const std::vector<GraphNode>& nodes)
{
    const Index dim = nodes.empty() ? 0 : nodes.front().center.size();
    out << tag << ' ' << nodes.size() << ' ' << dim << '\n';
    for (const auto& n : nodes) {
        out << n.id << ' ' << n.member_count << ' ' << to_string(n.provenance);
        for (Index i = 0; i < n.center.size(); ++i) out << ' ' << detail::format_double(n.center[i]);
        out << '\n';
    }
}

std::vector<GraphNode> read_nodes(std::istream& in, const char* tag)
{
    detail::expect_token(in, tag);
    const auto count = detail::read_token<std::size_t>(in, "node count");
    const auto dim = detail::read_token<Index>(in, "node dim");
    std::vector<GraphNode> nodes(count);
    std::set<int> ids;
    for (auto& n : nodes) {
        n.id = detail::read_token<int>(in, "node id");
        n.member_count = detail::read_token<long>(in, "member count");
        n.provenance = parse_provenance(detail::read_token<std::string>(in, "provenance"));
        n.center.resize(dim);
        for (Index i = 0; i < dim; ++i) n.center[i] = detail::read_token<double>(in, "center value");
        if (!ids.insert(n.id).second) throw GraphError(std::string("duplicate ") + tag + " id " + std::to_string(n.id));
    }
    return nodes;
}

} // namespace

void write_graph(std::ostream& out, const KnowledgeGraph& kg)
{
    out << "sadet-kg 1\n";
    write_nodes(out, "scene_nodes", kg.scene_nodes);
    write_nodes(out, "action_nodes", kg.action_nodes);
    out << "relations " << kg.relations.size() << '\n';
    for (const auto& [key, label] : kg.relations) {
        out << key.first << ' ' << key.second << ' ' << to_string(label) << '\n';
    }
}

KnowledgeGraph read_graph(std::istream& in)
{
    try {
        detail::expect_token(in, "sadet-kg");
        if (detail::read_token<int>(in, "version") != 1) throw GraphError("unsupported graph version");
        KnowledgeGraph kg;
        kg.scene_nodes = read_nodes(in, "scene_nodes");
        kg.action_nodes = read_nodes(in, "action_nodes");
        detail::expect_token(in, "relations");
        const auto count = detail::read_token<std::size_t>(in, "relation count");
        for (std::size_t i = 0; i < count; ++i) {
            const int s = detail::read_token<int>(in, "scene id");
            const int a = detail::read_token<int>(in, "action id");
            const Relation r = parse_relation(detail::read_token<std::string>(in, "label"));
            if (r == Relation::Unknown) throw GraphError("stored relation cannot be unknown");
            node_by_id(kg.scene_nodes, s);
            node_by_id(kg.action_nodes, a);
            kg.relations[{s, a}] = r;
        }
        return kg;
    } catch (const GraphError&) {
        throw;
    } catch (const std::exception& e) {
        throw GraphError(std::string("malformed graph file: ") + e.what());
    }
}

void save_graph(const std::string& path, const KnowledgeGraph& kg)
{
    std::ofstream out(path);
    if (!out) throw GraphError("cannot write graph file " + path);
    write_graph(out, kg);
}

KnowledgeGraph load_graph(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw GraphError("cannot open graph file " + path);
    return read_graph(in);
}

} // namespace sadet
