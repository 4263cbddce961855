#include "sadet/metrics.hpp"
#include "sadet/pipeline.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sadet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path)
{
    std::ifstream in(path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

PipelineConfig tiny(const std::string& dir, const std::string& mode)
{
    std::istringstream text("seed = 4\nout_dir = " + dir + "\nmode = " + mode +
                            "\n[world]\nscenes = 3\nactions = 4\nvideos_per_class = 6\nclips_per_video = 4\n"
                            "test_videos_per_class = 4\n[rkm]\ntheta_fn = 4\ntheta_fa = 4\n"
                            "[model]\nscene_hidden = 8\ngcn_hidden = 6\nlstm_hidden = 8\npos_hidden = 4\n"
                            "head_hidden = 8\ndecoder_hidden = 8\ndecoder_code = 4\n"
                            "[bags]\nclips_per_bag = 4\ntop_k = 2\n"
                            "[train]\nlearning_rate = 3e-3\nepochs = 3\nbatch_size = 2\ncheckpoint_every = 2\n"
                            "[refine]\niterations = 2\nepochs_per_iteration = 1\npool_batch = 4\nmax_combined = 10\n"
                            "[unsup]\nepochs = 2\nbatch_size = 16\n");
    return pipeline_config_from(Config::parse(text));
}

} // namespace

TEST_SUITE("pipeline")
{
    TEST_CASE("weak pipeline writes every artifact")
    {
        const std::string dir = "unit_pipeline_weak";
        fs::remove_all(dir);
        const auto cfg = tiny(dir, "weak");
        run_synth(cfg);
        run_build_kg(cfg);
        const auto train = run_train(cfg);
        CHECK(train.log.size() == 3);
        const auto refine = run_refine(cfg);
        CHECK(refine.reports.size() == 2);
        CHECK(default_model(cfg) == out_path(cfg, files::stage2_model));
        run_score(cfg, default_model(cfg), out_path(cfg, files::test_data));
        const auto eval = evaluate_dumps(out_path(cfg, files::scores));
        CHECK(eval.videos == 8);
        CHECK(eval.frames == 8 * 4 * 24);
        for (const char* f : {files::train_data, files::test_data, files::relations, files::graph, files::stage1_model,
                              files::loss_log, files::refine_log, files::pool_report})
            CHECK(fs::exists(out_path(cfg, f)));
        CHECK(fs::exists(out_path(cfg, std::string(files::checkpoints) + "/ckpt_epoch_002.txt")));
        CHECK(slurp(out_path(cfg, files::loss_log)).rfind("epoch\tL_rank\tL_focal\tL_mil\tlr\n", 0) == 0);

        run_update_kg(cfg, out_path(cfg, files::test_data));
        const auto updated = load_graph(out_path(cfg, files::updated_graph));
        const auto base = load_graph(out_path(cfg, files::graph));
        CHECK(updated.action_nodes.size() >= base.action_nodes.size());
        CHECK(updated.relations == base.relations);

        run_merge_kg(out_path(cfg, files::graph), out_path(cfg, files::graph), dir + "/merged.txt");
        CHECK(slurp(dir + "/merged.txt") == slurp(out_path(cfg, files::graph)));
        fs::remove_all(dir);
    }

    TEST_CASE("unsupervised pipeline trains on normal videos only")
    {
        const std::string dir = "unit_pipeline_unsup";
        fs::remove_all(dir);
        const auto cfg = tiny(dir, "unsup");
        run_synth(cfg);
        const auto r = run_train(cfg);
        CHECK(r.log.size() == 2);
        CHECK(load_checkpoint(out_path(cfg, files::unsup_model)).dims.has_decoder());
        CHECK_THROWS(run_refine(cfg));
        run_score(cfg, default_model(cfg), out_path(cfg, files::test_data));
        const auto eval = evaluate_dumps(out_path(cfg, files::scores));
        CHECK(eval.auc >= 0.0);
        CHECK(slurp(out_path(cfg, files::loss_log)).rfind("epoch\tL_rec\tL_reg\tL_total\tlr\n", 0) == 0);
        fs::remove_all(dir);
    }

    TEST_CASE("evaluation of hand written dumps")
    {
        const std::string dir = "unit_dumps";
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::vector<double> scores;
        std::vector<int> labels;
        std::mt19937_64 rng(2);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int v = 0; v < 3; ++v) {
            std::ofstream out(dir + "/v" + std::to_string(v) + ".txt");
            for (int f = 0; f < 20; ++f) {
                const double s = std::round(u(rng) * 1e6) / 1e6;
                const int l = (f + v) % 3 == 0;
                out << f << ' ' << s << ' ' << l << '\n';
                scores.push_back(s);
                labels.push_back(l);
            }
        }
        const auto r = evaluate_dumps(dir);
        CHECK(r.frames == 60);
        CHECK(std::abs(r.auc - oracle::pairwise_auc(scores, labels)) < 1e-9);
        CHECK(std::abs(r.ap - oracle::sweep_ap(scores, labels)) < 1e-9);
        {
            std::ofstream bad(dir + "/zz.txt");
            bad << "0 0.5 7\n";
        }
        CHECK_THROWS(evaluate_dumps(dir));
        fs::remove_all(dir);
    }
}
