#include "sadet/pipeline.hpp"

#include "sadet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace sadet {

namespace {

double positive(const Config& c, const std::string& key, double fallback)
{
    const double v = c.get_double(key, fallback);
    if (!(v > 0.0)) throw ConfigError(key, "must be positive");
    return v;
}

double in_range(const Config& c, const std::string& key, double fallback, double lo, double hi)
{
    const double v = c.get_double(key, fallback);
    if (!(v >= lo && v <= hi)) {
        throw ConfigError(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    return v;
}

int at_least(const Config& c, const std::string& key, int fallback, int lo)
{
    const int v = c.get_int(key, fallback);
    if (v < lo) throw ConfigError(key, "must be >= " + std::to_string(lo));
    return v;
}

template <typename Validate>
void check(const std::string& section, Validate&& validate)
{
    try {
        validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(section, e.what());
    }
}

void read_train(const Config& c, const std::string& p, TrainConfig& t)
{
    t.learning_rate = positive(c, p + "learning_rate", t.learning_rate);
    t.decay_every = at_least(c, p + "decay_every", t.decay_every, 1);
    t.decay_factor = positive(c, p + "decay_factor", t.decay_factor);
    t.epochs = at_least(c, p + "epochs", t.epochs, 0);
    t.batch_size = at_least(c, p + "batch_size", t.batch_size, 1);
    t.adam_beta1 = in_range(c, p + "adam_beta1", t.adam_beta1, 0.0, 0.999999);
    t.adam_beta2 = in_range(c, p + "adam_beta2", t.adam_beta2, 0.0, 0.999999);
    t.adam_eps = positive(c, p + "adam_eps", t.adam_eps);
    t.checkpoint_every = at_least(c, p + "checkpoint_every", t.checkpoint_every, 1);
}

} // namespace

void PipelineConfig::apply_seed(std::uint64_t s)
{
    seed = s;
    rkm.seed = s + 4;
    stage1.train.seed = s + 5;
    unsup.train.seed = s + 6;
}

SaiDims PipelineConfig::model_dims() const
{
    SaiDims d = model;
    if (mode != SupervisionMode::Unsupervised) {
        d.decoder_hidden = 0;
        d.decoder_code = 0;
    }
    return d;
}

PipelineConfig pipeline_config_from(const Config& c)
{
    PipelineConfig p;
    p.out_dir = c.get_string("out_dir", p.out_dir);
    try {
        p.mode = parse_supervision_mode(c.get_string("mode", to_string(p.mode)));
    } catch (const std::exception& e) {
        throw ConfigError("mode", e.what());
    }

    auto& w = p.world;
    w.scenes = at_least(c, "world.scenes", w.scenes, 1);
    w.actions = at_least(c, "world.actions", w.actions, 1);
    w.abnormal_fraction = in_range(c, "world.abnormal_fraction", w.abnormal_fraction, 0.0, 1.0);
    w.noise = in_range(c, "world.noise", w.noise, 0.0, 1.0);
    w.videos_per_class = at_least(c, "world.videos_per_class", w.videos_per_class, 1);
    w.clips_per_video = at_least(c, "world.clips_per_video", w.clips_per_video, 1);
    w.test_videos_per_class = at_least(c, "world.test_videos_per_class", w.test_videos_per_class, 1);

    auto& r = p.rkm;
    r.theta_fn = at_least(c, "rkm.theta_fn", r.theta_fn, 1);
    r.theta_fa = at_least(c, "rkm.theta_fa", r.theta_fa, 1);
    r.scene_k = at_least(c, "rkm.scene_k", r.scene_k, 0);
    r.rho = in_range(c, "rkm.rho", r.rho, -1.0, 1.0);
    r.mu_a = in_range(c, "rkm.mu_a", r.mu_a, -1.0, 1.0);
    r.mu_s = in_range(c, "rkm.mu_s", r.mu_s, -1.0, 1.0);
    check("rkm", [&] { r.validate(); });

    auto& m = p.model;
    m.scene_hidden = at_least(c, "model.scene_hidden", m.scene_hidden, 1);
    m.gcn_hidden = at_least(c, "model.gcn_hidden", m.gcn_hidden, 1);
    m.lstm_hidden = at_least(c, "model.lstm_hidden", m.lstm_hidden, 1);
    m.pos_hidden = at_least(c, "model.pos_hidden", m.pos_hidden, 1);
    m.head_hidden = at_least(c, "model.head_hidden", m.head_hidden, 0);
    m.decoder_hidden = at_least(c, "model.decoder_hidden", 64, 1);
    m.decoder_code = at_least(c, "model.decoder_code", 16, 1);
    m.skeleton_only = c.get_bool("model.skeleton_only", m.skeleton_only);

    auto& b = p.stage1.bags;
    b.clips_per_bag = at_least(c, "bags.clips_per_bag", b.clips_per_bag, 1);
    b.top_k = at_least(c, "bags.top_k", b.top_k, 1);
    b.clip_len = at_least(c, "bags.clip_len", b.clip_len, 1);
    check("bags", [&] { b.validate(); });

    read_train(c, "train.", p.stage1.train);
    p.stage1.focal.gamma = in_range(c, "focal.gamma", p.stage1.focal.gamma, 0.0, 10.0);
    p.stage1.focal.alpha = in_range(c, "focal.alpha", p.stage1.focal.alpha, 0.0, 1.0);

    auto& u = p.refine;
    u.beta1 = in_range(c, "refine.beta1", u.beta1, 0.0, 1.0);
    u.beta2 = in_range(c, "refine.beta2", u.beta2, 0.0, 1.0);
    u.iterations = at_least(c, "refine.iterations", u.iterations, 0);
    u.epochs_per_iteration = at_least(c, "refine.epochs_per_iteration", u.epochs_per_iteration, 0);
    u.pool_batch = at_least(c, "refine.pool_batch", u.pool_batch, 1);
    u.max_combined = at_least(c, "refine.max_combined", u.max_combined, 0);
    u.fine_tune = c.get_bool("refine.fine_tune", u.fine_tune);
    if (!(u.beta1 < u.beta2)) throw ConfigError("refine.beta1", "must be smaller than refine.beta2");

    auto& un = p.unsup;
    un.train = p.stage1.train;
    read_train(c, "unsup.", un.train);
    un.train_encoder = c.get_bool("unsup.train_encoder", un.train_encoder);
    const double l1 = positive(c, "unsup.lambda1", 1.0);
    const double l2 = positive(c, "unsup.lambda2", 1e-4);
    un.weights = c.get_bool("unsup.learnable_weights", true) ? LossWeights::learnable_init(l1, l2)
                                                             : LossWeights::fixed(l1, l2);
    try {
        p.normalization = parse_score_normalization(c.get_string("unsup.normalization", "global"));
    } catch (const std::exception& e) {
        throw ConfigError("unsup.normalization", e.what());
    }

    p.apply_seed(c.get_uint64("seed", 0));
    c.require_all_used();
    return p;
}

std::string out_path(const PipelineConfig& cfg, const std::string& name) { return (fs::path(cfg.out_dir) / name).string(); }

World make_world(const PipelineConfig& cfg)
{
    WorldShape shape;
    shape.clip_len = cfg.stage1.bags.clip_len;
    World world = generate_world(cfg.world.scenes, cfg.world.actions, cfg.world.abnormal_fraction, cfg.seed, shape);
    world.noise_level = cfg.world.noise;
    return world;
}

void run_synth(const PipelineConfig& cfg)
{
    fs::create_directories(cfg.out_dir);
    const World world = make_world(cfg);
    save_dataset(out_path(cfg, files::train_data),
                 sample_dataset(world, cfg.world.videos_per_class, cfg.world.clips_per_video, cfg.seed + 1));
    save_dataset(out_path(cfg, files::test_data),
                 sample_dataset(world, cfg.world.test_videos_per_class, cfg.world.clips_per_video, cfg.seed + 2));
    std::ofstream rel(out_path(cfg, files::relations));
    write_relations(rel, world);
}

void run_build_kg(const PipelineConfig& cfg)
{
    const Dataset train = load_dataset(out_path(cfg, files::train_data));
    save_graph(out_path(cfg, files::graph), build_graph(train, cfg.rkm));
}

void run_update_kg(const PipelineConfig& cfg, const std::string& data_path)
{
    const KnowledgeGraph kg = load_graph(out_path(cfg, files::graph));
    const Dataset data = load_dataset(data_path);
    save_graph(out_path(cfg, files::updated_graph), update_graph(kg, std::span<const Clip>(data.clips), cfg.rkm));
}

void run_merge_kg(const std::string& main_path, const std::string& sub_path, const std::string& out)
{
    save_graph(out, merge_subgraph(load_graph(main_path), load_graph(sub_path)));
}

namespace {

Dataset normal_videos_only(Dataset ds)
{
    std::erase_if(ds.clips, [](const Clip& c) { return c.video_label != VideoLabel::Normal; });
    if (ds.clips.empty()) throw TrainingError("no normal-video clips to train on");
    return ds;
}

SaiDims dims_for(const PipelineConfig& cfg, const Dataset& ds)
{
    SaiDims d = cfg.model_dims();
    d.joints = ds.header.joints;
    d.scene_dim = ds.header.scene_dim;
    return d;
}

void write_log(const std::string& path, std::span<const EpochLog> log, LossLogKind kind)
{
    std::ofstream out(path);
    write_loss_log(out, log, kind);
}

} // namespace

TrainResult run_train(const PipelineConfig& cfg)
{
    const Dataset train = load_dataset(out_path(cfg, files::train_data));
    const SaiParams init = SaiParams::random(dims_for(cfg, train), cfg.seed + 3);
    const std::string ckpt_dir = out_path(cfg, files::checkpoints);
    fs::remove_all(ckpt_dir);

    TrainResult result;
    if (cfg.mode == SupervisionMode::Unsupervised) {
        UnsupConfig u = cfg.unsup;
        u.train.checkpoint_dir = ckpt_dir;
        result = train_unsupervised(normal_videos_only(train), init, u);
        save_checkpoint(out_path(cfg, files::unsup_model), result.params);
    } else {
        Stage1Config s = cfg.stage1;
        s.mode = cfg.mode;
        s.train.checkpoint_dir = ckpt_dir;
        result = train_stage1(train, init, s);
        save_checkpoint(out_path(cfg, files::stage1_model), result.params);
        fs::remove(out_path(cfg, files::stage2_model));
        // Stage 2 resumes from the learned loss weights.
        std::ofstream w(out_path(cfg, "loss_weights.txt"));
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.17g %.17g\n", result.weights.raw[0], result.weights.raw[1]);
        w << buf;
    }
    write_log(out_path(cfg, files::loss_log), result.log,
              cfg.mode == SupervisionMode::Unsupervised ? LossLogKind::Unsupervised : LossLogKind::Stage1);
    if (result.diverged) throw TrainingError("training diverged; last good parameters were saved");
    return result;
}

Stage2Result run_refine(const PipelineConfig& cfg)
{
    if (cfg.mode == SupervisionMode::Unsupervised) throw TrainingError("refine does not apply to --mode unsup");
    const Dataset train = load_dataset(out_path(cfg, files::train_data));
    const KnowledgeGraph kg = load_graph(out_path(cfg, files::graph));
    const SaiParams stage1 = load_checkpoint(out_path(cfg, files::stage1_model));

    LossWeights mil = LossWeights::learnable_init();
    std::ifstream w(out_path(cfg, "loss_weights.txt"));
    if (w) w >> mil.raw[0] >> mil.raw[1];

    Stage1Config s = cfg.stage1;
    s.mode = cfg.mode;
    Stage2Result result = stage2_iterate(stage1, mil, kg, train, cfg.refine, s);
    save_checkpoint(out_path(cfg, files::stage2_model), result.params);
    write_log(out_path(cfg, files::refine_log), result.log, LossLogKind::Refinement);
    std::ofstream report(out_path(cfg, files::pool_report));
    write_pool_report(report, result.reports);
    if (result.diverged) throw TrainingError("refinement diverged; last good parameters were saved");
    return result;
}

std::vector<double> score_dataset(const SaiParams& params, const Dataset& dataset, ScoreNormalization norm)
{
    std::vector<double> scores;
    scores.reserve(dataset.clips.size());
    if (!params.dims.has_decoder()) {
        for (const auto& c : dataset.clips) scores.push_back(score_clip(params, c));
        return scores;
    }
    std::vector<std::string> videos;
    for (const auto& c : dataset.clips) {
        scores.push_back(reconstruct(params, c));
        videos.push_back(c.video_id);
    }
    return normalize_scores(scores, videos, norm);
}

std::string default_model(const PipelineConfig& cfg)
{
    if (cfg.mode == SupervisionMode::Unsupervised) return out_path(cfg, files::unsup_model);
    const std::string stage2 = out_path(cfg, files::stage2_model);
    return fs::exists(stage2) ? stage2 : out_path(cfg, files::stage1_model);
}

void run_score(const PipelineConfig& cfg, const std::string& model_path, const std::string& data_path)
{
    const SaiParams params = load_checkpoint(model_path);
    const Dataset data = load_dataset(data_path);
    const std::vector<double> scores = score_dataset(params, data, cfg.normalization);

    std::map<std::string, std::vector<std::size_t>> videos;
    for (std::size_t i = 0; i < data.clips.size(); ++i) videos[data.clips[i].video_id].push_back(i);

    const std::string dir = out_path(cfg, files::scores);
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const auto& [video, idx] : videos) {
        int len = 0;
        std::vector<SpanScore> spans;
        for (auto i : idx) {
            len = std::max(len, data.clips[i].end);
            spans.push_back({data.clips[i].start, data.clips[i].end, scores[i]});
        }
        const std::vector<double> frames = frame_scores(spans, len);
        // Frames without frame-level ground truth fall back to the video label.
        std::vector<int> labels(static_cast<std::size_t>(len), 0);
        for (auto i : idx) {
            const Clip& c = data.clips[i];
            for (int f = c.start; f < c.end; ++f) {
                const std::size_t k = static_cast<std::size_t>(f - c.start);
                const int l = c.frame_labels && k < c.frame_labels->size() ? (*c.frame_labels)[k]
                                                                          : c.video_label == VideoLabel::Abnormal;
                labels[static_cast<std::size_t>(f)] = std::max(labels[static_cast<std::size_t>(f)], l);
            }
        }
        std::ofstream out((fs::path(dir) / (video + ".txt")).string());
        char buf[64];
        for (int f = 0; f < len; ++f) {
            std::snprintf(buf, sizeof buf, "%d %.9f %d\n", f, frames[static_cast<std::size_t>(f)],
                          labels[static_cast<std::size_t>(f)]);
            out << buf;
        }
    }
}

EvalResult evaluate_dumps(const std::string& scores_dir)
{
    if (!fs::is_directory(scores_dir)) throw std::runtime_error("no score directory " + scores_dir);
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(scores_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".txt") paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    EvalResult r;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& p : paths) {
        std::ifstream in(p);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream ls(line);
            int frame = 0, label = 0;
            double score = 0.0;
            if (!(ls >> frame >> score >> label) || (label != 0 && label != 1)) {
                throw std::runtime_error(p.string() + ":" + std::to_string(lineno) + ": expected 'frame score label'");
            }
            scores.push_back(score);
            labels.push_back(label);
        }
        ++r.videos;
    }
    r.frames = scores.size();
    r.auc = roc_auc(scores, labels);
    r.ap = average_precision(scores, labels);
    return r;
}

} // namespace sadet
