// sadet: synth -> build-kg -> train -> refine -> score -> eval.

#include "sadet/pipeline.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>

namespace {

struct Options {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string mode;
    std::string out_dir;
    int iterations = -1;
    std::string data;
    std::string model;
    std::string main_graph;
    std::string sub_graph;
    std::string output;
    std::string scores;
};

sadet::PipelineConfig resolve(const Options& o)
{
    sadet::Config cfg = o.config.empty() ? sadet::Config{} : sadet::Config::load(o.config);
    if (!o.mode.empty()) cfg.set("mode", o.mode);
    if (!o.out_dir.empty()) cfg.set("out_dir", o.out_dir);
    if (o.iterations >= 0) cfg.set("refine.iterations", std::to_string(o.iterations));
    if (o.seed_given) cfg.set("seed", std::to_string(o.seed));
    return sadet::pipeline_config_from(cfg);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Scene-action video anomaly detection pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    Options o;
    app.add_option("--config", o.config, "key = value run configuration");
    app.add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { o.seed = s, o.seed_given = true; }, "Seed for all randomness");
    app.add_option("--mode", o.mode, "Supervision mode")->check(CLI::IsMember({"full", "weak", "unsup"}));
    app.add_option("--out-dir", o.out_dir, "Directory for all artifacts");
    app.add_option("--iterations", o.iterations, "Refinement iterations")->check(CLI::NonNegativeNumber);

    auto* synth = app.add_subcommand("synth", "Generate a synthetic world and train/test datasets");
    auto* build = app.add_subcommand("build-kg", "Cluster the training set and serialize the knowledge graph");
    auto* update = app.add_subcommand("update-kg", "Apply the update rules for new clips to the graph");
    update->add_option("--data", o.data, "Dataset with the new clips")->required();
    auto* merge = app.add_subcommand("merge-kg", "Merge a subgraph's edges into a main graph");
    merge->add_option("main", o.main_graph, "Main graph")->required();
    merge->add_option("sub", o.sub_graph, "Subgraph")->required();
    merge->add_option("-o,--output", o.output, "Merged graph path")->required();
    auto* train = app.add_subcommand("train", "Stage-1 training (full/weak) or autoencoder training (unsup)");
    auto* refine = app.add_subcommand("refine", "Stage-2 uncertainty refinement");
    auto* score = app.add_subcommand("score", "Write per-video frame score dumps");
    score->add_option("--model", o.model, "Checkpoint (default: latest model for the mode)");
    score->add_option("--data", o.data, "Dataset to score (default: the test split)");
    auto* eval = app.add_subcommand("eval", "Frame-level AUC and AP of score dumps");
    eval->add_option("--scores", o.scores, "Score dump directory (default: <out-dir>/scores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        const sadet::PipelineConfig cfg = resolve(o);
        if (synth->parsed()) {
            sadet::run_synth(cfg);
        } else if (build->parsed()) {
            sadet::run_build_kg(cfg);
        } else if (update->parsed()) {
            sadet::run_update_kg(cfg, o.data);
        } else if (merge->parsed()) {
            sadet::run_merge_kg(o.main_graph, o.sub_graph, o.output);
        } else if (train->parsed()) {
            const auto r = sadet::run_train(cfg);
            if (!r.log.empty()) {
                const auto& last = r.log.back();
                std::printf("epochs = %zu, final loss = %.6f\n", r.log.size(),
                            cfg.mode == sadet::SupervisionMode::Unsupervised ? last.total : last.mil);
            }
        } else if (refine->parsed()) {
            const auto r = sadet::run_refine(cfg);
            for (const auto& it : r.reports) {
                std::printf("iteration %d: normal %zu, abnormal %zu, pending %zu\n", it.iteration, it.normal,
                            it.abnormal, it.pending);
            }
        } else if (score->parsed()) {
            sadet::run_score(cfg, o.model.empty() ? sadet::default_model(cfg) : o.model,
                             o.data.empty() ? sadet::out_path(cfg, sadet::files::test_data) : o.data);
        } else if (eval->parsed()) {
            const auto r =
                sadet::evaluate_dumps(o.scores.empty() ? sadet::out_path(cfg, sadet::files::scores) : o.scores);
            std::printf("AUC = %.4f\nAP = %.4f\n", r.auc, r.ap);
        }
    } catch (const sadet::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
