#pragma once

// End-to-end steps shared by the command-line tool and the acceptance suite.
// Every step reads and writes fixed file names under PipelineConfig::out_dir.

#include "sadet/config.hpp"
#include "sadet/refinement.hpp"
#include "sadet/synth.hpp"

#include <cstdint>
#include <string>

namespace sadet {

struct WorldConfig {
    int scenes = 5;
    int actions = 8;
    double abnormal_fraction = 0.3;
    double noise = 0.05;
    int videos_per_class = 40;
    int clips_per_video = 8;
    int test_videos_per_class = 20;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    SupervisionMode mode = SupervisionMode::Weak;
    WorldConfig world;
    RkmConfig rkm;
    SaiDims model;   // decoder sizes apply to the unsupervised mode only
    Stage1Config stage1;
    UrConfig refine;
    UnsupConfig unsup;
    ScoreNormalization normalization = ScoreNormalization::Global;

    /// Re-derives every component seed from `seed`.
    void apply_seed(std::uint64_t s);
    SaiDims model_dims() const;
};

/// Reads every known key; unknown keys and invalid values raise ConfigError.
PipelineConfig pipeline_config_from(const Config& cfg);

namespace files {
inline constexpr const char* train_data = "train.jsonl";
inline constexpr const char* test_data = "test.jsonl";
inline constexpr const char* relations = "relations.tsv";
inline constexpr const char* graph = "kg.txt";
inline constexpr const char* updated_graph = "kg_updated.txt";
inline constexpr const char* stage1_model = "model_stage1.ckpt";
inline constexpr const char* stage2_model = "model_stage2.ckpt";
inline constexpr const char* unsup_model = "model_unsup.ckpt";
inline constexpr const char* loss_log = "loss_log.tsv";
inline constexpr const char* refine_log = "refine_loss_log.tsv";
inline constexpr const char* pool_report = "pool_report.tsv";
inline constexpr const char* checkpoints = "checkpoints";
inline constexpr const char* scores = "scores";
} // namespace files

std::string out_path(const PipelineConfig& cfg, const std::string& name);

World make_world(const PipelineConfig& cfg);
void run_synth(const PipelineConfig& cfg);
void run_build_kg(const PipelineConfig& cfg);
/// Applies the update rules for every clip of `data_path` to the saved graph.
void run_update_kg(const PipelineConfig& cfg, const std::string& data_path);
void run_merge_kg(const std::string& main_path, const std::string& sub_path, const std::string& out);
TrainResult run_train(const PipelineConfig& cfg);
Stage2Result run_refine(const PipelineConfig& cfg);

/// Per-clip anomaly scores of a dataset under a saved model. Reconstruction
/// errors are normalized when the model carries a decoder.
std::vector<double> score_dataset(const SaiParams& params, const Dataset& dataset, ScoreNormalization norm);
/// Writes scores/<video>.txt ("frame score label" per line) for `data_path`.
void run_score(const PipelineConfig& cfg, const std::string& model_path, const std::string& data_path);
/// Model used by `score` when none is given.
std::string default_model(const PipelineConfig& cfg);

struct EvalResult {
    double auc = 0.0;
    double ap = 0.0;
    std::size_t frames = 0;
    std::size_t videos = 0;
};

EvalResult evaluate_dumps(const std::string& scores_dir);

} // namespace sadet
