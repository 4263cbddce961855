#pragma once

// Stage-2 uncertainty refinement: score/relation routing into normal,
// abnormal and pending pools, then retraining on the resolved pools.

#include "sadet/rkm.hpp"
#include "sadet/training.hpp"

#include <iosfwd>
#include <set>
#include <string>
#include <vector>

namespace sadet {

struct UrConfig {
    double beta1 = 0.4;
    double beta2 = 0.8;
    int iterations = 10;
    int epochs_per_iteration = 5;
    int pool_batch = 32;        // clips drawn from each pool per BCE step
    int max_combined = 256;     // cap on abnormal-video scene x action recombinations
    bool fine_tune = true;      // false: every iteration retrains from a fresh init

    void validate() const;
};

enum class PoolKind { Normal, Abnormal, Pending };

std::string to_string(PoolKind kind);

/// The routing rule: strictly below beta1 with a Normal edge, strictly above
/// beta2 with an Abnormal edge, pending otherwise.
PoolKind classify(double score, Relation relation, const UrConfig& cfg);

struct Pools {
    std::set<std::string> normal;
    std::set<std::string> abnormal;
    std::set<std::string> pending;

    std::size_t size() const { return normal.size() + abnormal.size() + pending.size(); }
    bool disjoint() const;
    /// Disjoint and covering exactly `ids`.
    bool partitions(std::span<const std::string> ids) const;
};

Pools partition_pools(std::span<const Clip> clips, std::span<const double> scores, const KnowledgeGraph& kg,
                      const UrConfig& cfg);

/// Abnormal-video clips plus up to `max_combined` recombinations of their
/// scenes and actions, drawn without replacement.
std::vector<Clip> refinement_candidates(const Dataset& dataset, int max_combined, std::uint64_t seed);

struct IterationReport {
    int iteration = 0;
    std::size_t normal = 0;
    std::size_t abnormal = 0;
    std::size_t pending = 0;
    double mean_normal = 0.0;
    double mean_abnormal = 0.0;
    double mean_pending = 0.0;
    bool mil_only = false;
};

struct Stage2Result {
    SaiParams params;
    LossWeights mil_weights;
    LossWeights stage_weights;   // lambda1, lambda2
    Pools pools;
    std::vector<IterationReport> reports;
    /// Pools after each iteration's routing step.
    std::vector<Pools> pool_history;
    std::vector<EpochLog> log;
    bool diverged = false;
};

Stage2Result stage2_iterate(const SaiParams& stage1, const LossWeights& mil_weights, const KnowledgeGraph& kg,
                            const Dataset& dataset, const UrConfig& ur, const Stage1Config& cfg);

void write_pool_report(std::ostream& out, std::span<const IterationReport> reports);

} // namespace sadet
