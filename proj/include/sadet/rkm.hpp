#pragma once

// Relational knowledge mapper: a bipartite graph of scene and action cluster
// centers whose edges carry Normal / Abnormal labels.

#include "sadet/data.hpp"

#include <iosfwd>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace sadet {

class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RkmConfig {
    int theta_fn = 15;     // action clusters over normal videos
    int theta_fa = 25;     // action clusters over abnormal videos
    int scene_k = 0;       // 0: take the scene-category count from the dataset header
    double rho = 0.95;     // combine threshold
    double mu_a = 0.45;    // action update threshold
    double mu_s = 0.90;    // scene update threshold
    std::uint64_t seed = 0;

    void validate() const;
};

/// Where an action center came from.
enum class Provenance { Normal, Abnormal, Shared, Added };

std::string to_string(Provenance p);
Provenance parse_provenance(const std::string& text);

struct GraphNode {
    int id = 0;
    Vec center;
    long member_count = 0;
    Provenance provenance = Provenance::Normal;
};

struct KnowledgeGraph {
    std::vector<GraphNode> scene_nodes;
    std::vector<GraphNode> action_nodes;
    /// (scene node id, action node id) -> Normal | Abnormal. Absent pairs are Unknown.
    std::map<std::pair<int, int>, Relation> relations;

    bool empty() const { return scene_nodes.empty() || action_nodes.empty(); }
    /// Node centers as matrix rows, in node order.
    Mat scene_centers() const;
    Mat action_centers() const;
    Relation relation(int scene_id, int action_id) const;
};

/// Action feature: frames x joints x 2 coordinates, each joint trajectory
/// centered on its temporal mean, flattened frame-major.
Vec action_feature(const SkeletonSequence& skeleton);

struct WeightedCenters {
    Mat centers;                 // one center per row
    std::vector<long> counts;    // members per center
};

struct ClusterSet {
    WeightedCenters normal_actions;
    WeightedCenters abnormal_actions;
    WeightedCenters scenes;
};

ClusterSet build_clusters(const Dataset& dataset, const RkmConfig& cfg);

/// Abnormal-video action centers whose best cosine match among normal-video
/// centers exceeds `rho` are folded into that center (count-weighted mean).
std::vector<GraphNode> combine_centers(const WeightedCenters& normal, const WeightedCenters& abnormal, double rho);

std::vector<GraphNode> scene_nodes_from(const WeightedCenters& scenes);

/// Normal-video pairs become Normal edges; abnormal-video pairs add Abnormal
/// edges only where no edge exists yet.
KnowledgeGraph construct_graph(std::span<const Clip* const> normal_clips, std::span<const Clip* const> abnormal_clips,
                               std::vector<GraphNode> action_nodes, std::vector<GraphNode> scene_nodes);

/// Clustering, combining and construction over a labeled dataset.
KnowledgeGraph build_graph(const Dataset& dataset, const RkmConfig& cfg);

struct NodeAssignment {
    int scene_id = -1;
    int action_id = -1;
    double scene_similarity = 0.0;
    double action_similarity = 0.0;
};

NodeAssignment assign_nodes(const KnowledgeGraph& kg, const Vec& scene_feature, const Vec& action_feature);

Relation query_relation(const KnowledgeGraph& kg, const Vec& scene_feature, const Vec& action_feature);
Relation query_relation(const KnowledgeGraph& kg, const Clip& clip);

enum class GraphSide { Scene, Action };

struct UpdateDecision {
    GraphSide side = GraphSide::Action;
    bool added = false;     // false: combined into node_id
    int node_id = -1;
    double max_similarity = 0.0;
};

struct FeaturePair {
    Vec scene;
    Vec action;
};

/// Adds a node when the best similarity is <= the side's threshold, combines
/// into the best node otherwise. Items are applied in order.
KnowledgeGraph update_graph(KnowledgeGraph kg, std::span<const FeaturePair> items, const RkmConfig& cfg,
                            std::vector<UpdateDecision>* decisions = nullptr);
KnowledgeGraph update_graph(KnowledgeGraph kg, std::span<const Clip> new_clips, const RkmConfig& cfg,
                            std::vector<UpdateDecision>* decisions = nullptr);

/// Relation graph of `clips` over the node sets of `nodes` (edges of `nodes` ignored).
KnowledgeGraph build_subgraph(const KnowledgeGraph& nodes, std::span<const Clip> clips);

/// Adopts sub-graph edges onto the most similar main-graph node pair unless the
/// main graph already labels that pair differently.
KnowledgeGraph merge_subgraph(KnowledgeGraph main, const KnowledgeGraph& sub);

void write_graph(std::ostream& out, const KnowledgeGraph& kg);
KnowledgeGraph read_graph(std::istream& in);
void save_graph(const std::string& path, const KnowledgeGraph& kg);
KnowledgeGraph load_graph(const std::string& path);

} // namespace sadet
