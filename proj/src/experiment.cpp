#include "rgbadit/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rgbadit/image_io.hpp"

namespace rgbadit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string hash_hex(uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

void write_json_atomic(const std::string& path, const json& j) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp);
        out << j.dump(2) << "\n";
        if (!out) throw IoError("failed while writing: " + tmp);
    }
    fs::rename(tmp, path);
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed json in " + path + ": " + e.what());
    }
    return j;
}

// ---- config ----

void ExperimentConfig::validate() const {
    if (version != 1) throw ConfigError("config: unsupported version");
    model.validate();
    sampler.validate();
    if (dataset.n_scenes < 1) throw ConfigError("config: dataset.n_scenes must be >= 1");
    if (dataset.frames != model.frames || dataset.height != model.height ||
        dataset.width != model.width) {
        throw ConfigError("config: dataset dimensions must match the model configuration");
    }
    if (training.batch < 1) throw ConfigError("config: training.batch must be >= 1");
    if (eval.n_videos < 1) throw ConfigError("config: eval.n_videos must be >= 1");
    eval.flow.validate(model.height, model.width);
}

json ExperimentConfig::to_json() const {
    json j;
    j["version"] = version;
    j["out_dir"] = out_dir;
    j["model"]   = {{"depth", model.depth},       {"dim", model.dim},
                    {"heads", model.heads},       {"ffn_mult", model.ffn_mult},
                    {"patch", model.patch},       {"frames", model.frames},
                    {"height", model.height},     {"width", model.width},
                    {"cond_tokens", model.cond_tokens},
                    {"time_embed_dim", model.time_embed_dim},
                    {"num_classes", model.num_classes}};
    j["scheme"]  = {{"kind", scheme.kind == PositionalKind::Rope ? "rope" : "absolute_sinusoidal"},
                    {"theta_base", scheme.theta_base}};
    j["objective"] = {{"kind", objective_name(objective.kind)},
                      {"ddpm",
                       {{"beta_min", objective.ddpm.beta_min},
                        {"beta_max", objective.ddpm.beta_max},
                        {"timesteps", objective.ddpm.timesteps}}}};
    j["sampler"]   = {{"steps", sampler.steps}, {"seed", sampler.seed}};
    j["mask_mode"] = mask_mode_name(mask_mode);
    j["design"]    = joint_design_name(design);
    j["dataset"]   = {{"n_scenes", dataset.n_scenes},
                      {"frames", dataset.frames},
                      {"height", dataset.height},
                      {"width", dataset.width},
                      {"seed", dataset.seed}};
    j["training"]  = {{"pretrain_steps", training.pretrain_steps},
                      {"finetune_steps", training.finetune_steps},
                      {"batch", training.batch},
                      {"pretrain_lr", training.pretrain_lr},
                      {"finetune_lr", training.finetune_lr},
                      {"seed", training.seed},
                      {"lora_rank", training.lora_rank},
                      {"lora_gamma", training.lora_gamma},
                      {"alpha_loss_weight", training.alpha_loss_weight}};
    j["eval"]      = {{"flow",
                       {{"pyramid_scale", eval.flow.pyramid_scale},
                        {"levels", eval.flow.levels},
                        {"window", eval.flow.window},
                        {"iterations", eval.flow.iterations},
                        {"poly_n", eval.flow.poly_n},
                        {"poly_sigma", eval.flow.poly_sigma}}},
                      {"n_videos", eval.n_videos},
                      {"alpha_threshold", eval.alpha_threshold}};
    j["preprocess"] = {
        {"decontaminate", preprocess.decontaminate},
        {"orientation",
         preprocess.orientation == DecontaminateOrientation::AsPrinted ? "as_printed" : "inverted"},
        {"gain", preprocess.gain},
        {"choke", preprocess.choke},
        {"blur_background", preprocess.blur_background},
        {"blur_kernel", preprocess.blur_kernel}};
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    c.version = j.value("version", 1);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("model")) {
        const auto& m        = j.at("model");
        c.model.depth        = m.value("depth", c.model.depth);
        c.model.dim          = m.value("dim", c.model.dim);
        c.model.heads        = m.value("heads", c.model.heads);
        c.model.ffn_mult     = m.value("ffn_mult", c.model.ffn_mult);
        c.model.patch        = m.value("patch", c.model.patch);
        c.model.frames       = m.value("frames", c.model.frames);
        c.model.height       = m.value("height", c.model.height);
        c.model.width        = m.value("width", c.model.width);
        c.model.cond_tokens  = m.value("cond_tokens", c.model.cond_tokens);
        c.model.time_embed_dim = m.value("time_embed_dim", c.model.time_embed_dim);
        c.model.num_classes  = m.value("num_classes", c.model.num_classes);
    }
    if (j.contains("scheme")) {
        const auto& s = j.at("scheme");
        const std::string kind = s.value("kind", "rope");
        if (kind == "rope") c.scheme.kind = PositionalKind::Rope;
        else if (kind == "absolute_sinusoidal") c.scheme.kind = PositionalKind::AbsoluteSinusoidal;
        else throw ConfigError("config: unknown scheme.kind " + kind);
        c.scheme.theta_base = s.value("theta_base", c.scheme.theta_base);
    }
    if (j.contains("objective")) {
        const auto& o = j.at("objective");
        c.objective.kind = objective_from_name(o.value("kind", "flow_matching"));
        if (o.contains("ddpm")) {
            const auto& d              = o.at("ddpm");
            c.objective.ddpm.beta_min  = d.value("beta_min", c.objective.ddpm.beta_min);
            c.objective.ddpm.beta_max  = d.value("beta_max", c.objective.ddpm.beta_max);
            c.objective.ddpm.timesteps = d.value("timesteps", c.objective.ddpm.timesteps);
        }
    }
    if (j.contains("sampler")) {
        c.sampler.steps = j.at("sampler").value("steps", c.sampler.steps);
        c.sampler.seed  = j.at("sampler").value("seed", c.sampler.seed);
    }
    c.sampler.objective = c.objective;
    if (j.contains("mask_mode")) c.mask_mode = mask_mode_from_name(j.at("mask_mode"));
    if (j.contains("design")) c.design = joint_design_from_name(j.at("design"));
    if (j.contains("dataset")) {
        const auto& d        = j.at("dataset");
        c.dataset.n_scenes = d.value("n_scenes", c.dataset.n_scenes);
        c.dataset.frames   = d.value("frames", c.dataset.frames);
        c.dataset.height   = d.value("height", c.dataset.height);
        c.dataset.width    = d.value("width", c.dataset.width);
        c.dataset.seed     = d.value("seed", c.dataset.seed);
    }
    if (j.contains("training")) {
        const auto& t               = j.at("training");
        c.training.pretrain_steps   = t.value("pretrain_steps", c.training.pretrain_steps);
        c.training.finetune_steps   = t.value("finetune_steps", c.training.finetune_steps);
        c.training.batch            = t.value("batch", c.training.batch);
        c.training.pretrain_lr      = t.value("pretrain_lr", c.training.pretrain_lr);
        c.training.finetune_lr      = t.value("finetune_lr", c.training.finetune_lr);
        c.training.seed             = t.value("seed", c.training.seed);
        c.training.lora_rank        = t.value("lora_rank", c.training.lora_rank);
        c.training.lora_gamma       = t.value("lora_gamma", c.training.lora_gamma);
        c.training.alpha_loss_weight = t.value("alpha_loss_weight", c.training.alpha_loss_weight);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        if (e.contains("flow")) {
            const auto& f              = e.at("flow");
            c.eval.flow.pyramid_scale = f.value("pyramid_scale", c.eval.flow.pyramid_scale);
            c.eval.flow.levels        = f.value("levels", c.eval.flow.levels);
            c.eval.flow.window        = f.value("window", c.eval.flow.window);
            c.eval.flow.iterations    = f.value("iterations", c.eval.flow.iterations);
            c.eval.flow.poly_n        = f.value("poly_n", c.eval.flow.poly_n);
            c.eval.flow.poly_sigma    = f.value("poly_sigma", c.eval.flow.poly_sigma);
        }
        c.eval.n_videos        = e.value("n_videos", c.eval.n_videos);
        c.eval.alpha_threshold = e.value("alpha_threshold", c.eval.alpha_threshold);
    }
    if (j.contains("preprocess")) {
        const auto& p             = j.at("preprocess");
        c.preprocess.decontaminate = p.value("decontaminate", c.preprocess.decontaminate);
        const std::string ori     = p.value("orientation", "as_printed");
        if (ori == "as_printed") c.preprocess.orientation = DecontaminateOrientation::AsPrinted;
        else if (ori == "inverted") c.preprocess.orientation = DecontaminateOrientation::Inverted;
        else throw ConfigError("config: unknown preprocess.orientation " + ori);
        c.preprocess.gain            = p.value("gain", c.preprocess.gain);
        c.preprocess.choke           = p.value("choke", c.preprocess.choke);
        c.preprocess.blur_background = p.value("blur_background", c.preprocess.blur_background);
        c.preprocess.blur_kernel     = p.value("blur_kernel", c.preprocess.blur_kernel);
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path,
                                        const std::vector<std::string>& overrides) {
    json j = ExperimentConfig().to_json();
    if (!path.empty()) {
        const json file = read_json(path);
        j.merge_patch(file);
    }
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("override must look like key.path=value: " + ov);
        }
        std::string key = "/" + ov.substr(0, eq);
        for (auto& ch : key) {
            if (ch == '.') ch = '/';
        }
        const std::string raw = ov.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;  // plain string
        }
        j[json::json_pointer(key)] = value;
    }
    ExperimentConfig c = from_json(j);
    c.validate();
    return c;
}

// ---- dataset command ----

std::string cmd_gen_dataset(const ExperimentConfig& cfg, const std::string& dir_override) {
    cfg.validate();
    const std::string root =
        dir_override.empty() ? cfg.out_dir + "/dataset" : dir_override;
    fs::create_directories(root);

    Rng master(cfg.dataset.seed);
    json scenes = json::array();
    for (int i = 0; i < cfg.dataset.n_scenes; ++i) {
        const int cond      = i % kNumConditions;
        const uint64_t seed = master.next_u64();
        SceneSpec spec      = SceneSpec::from_class(cond, seed);
        RgbaVideo video =
            synthesize_scene(spec, cfg.dataset.frames, cfg.dataset.height, cfg.dataset.width);
        if (cfg.preprocess.decontaminate) {
            color_decontaminate(video, scene_background(spec, video.height, video.width),
                                cfg.preprocess.gain, cfg.preprocess.choke,
                                cfg.preprocess.orientation);
        }
        if (cfg.preprocess.blur_background) {
            blur_background(video, cfg.preprocess.blur_kernel);
        }
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04d", i);
        const std::string sdir = root + "/" + name;
        fs::create_directories(sdir);
        write_video_frames(sdir, video);
        json m;
        m["cond_id"] = cond;
        m["seed"]    = seed;
        m["frames"]  = video.frames;
        m["height"]  = video.height;
        m["width"]   = video.width;
        m["fps"]     = 8;
        m["shape"]   = shape_name(spec.shape);
        m["motion"]  = motion_name(spec.motion);
        write_json_atomic(sdir + "/manifest.json", m);
        scenes.push_back({{"dir", name}, {"cond_id", cond}, {"seed", seed}});
    }
    json top;
    top["version"] = 1;
    top["config"]  = cfg.to_json();
    top["n_scenes"] = cfg.dataset.n_scenes;
    top["frames"]   = cfg.dataset.frames;
    top["height"]   = cfg.dataset.height;
    top["width"]    = cfg.dataset.width;
    top["seed"]     = cfg.dataset.seed;
    top["scenes"]   = std::move(scenes);
    write_json_atomic(root + "/manifest.json", top);
    return root;
}

DatasetIndex read_dataset_index(const std::string& dir) {
    const json top = read_json(dir + "/manifest.json");
    DatasetIndex index;
    index.root          = dir;
    index.spec.n_scenes = top.at("n_scenes");
    index.spec.frames   = top.at("frames");
    index.spec.height   = top.at("height");
    index.spec.width    = top.at("width");
    index.spec.seed     = top.at("seed");
    for (const auto& s : top.at("scenes")) {
        index.scenes.push_back({s.at("dir"), s.at("cond_id"), s.at("seed")});
    }
    if (index.scenes.empty()) throw DataError("dataset has no scenes: " + dir);
    return index;
}

std::vector<TrainExample> load_train_examples(const DatasetIndex& index, int patch) {
    std::vector<TrainExample> out;
    out.reserve(index.scenes.size());
    for (const auto& s : index.scenes) {
        const RgbaVideo video = read_video_frames(index.root + "/" + s.dir, index.spec.frames,
                                                  index.spec.height, index.spec.width);
        TrainExample ex;
        ex.rgb_toks   = rgb_tokens(video, patch);
        ex.alpha_toks = alpha_tokens(video, patch);
        ex.cond_id    = s.cond_id;
        out.push_back(std::move(ex));
    }
    return out;
}

uint64_t dataset_content_hash(const DatasetIndex& index) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& s : index.scenes) {
        for (int f = 0; f < index.spec.frames; ++f) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "/frame_%03d.pam", f);
            const uint64_t fh = file_hash(index.root + "/" + s.dir + buf);
            h                 = fnv1a64(&fh, sizeof(fh), h);
        }
    }
    return h;
}

// ---- train command ----

TrainRun cmd_train(const ExperimentConfig& cfg, TrainPhase phase, const std::string& dataset_dir,
                   const std::string& base_checkpoint, const std::string& out_override) {
    cfg.validate();
    const DatasetIndex index = read_dataset_index(dataset_dir);
    if (index.spec.frames != cfg.model.frames || index.spec.height != cfg.model.height ||
        index.spec.width != cfg.model.width) {
        throw ConfigError("train: dataset dimensions do not match the model configuration");
    }
    const auto examples      = load_train_examples(index, cfg.model.patch);
    const uint64_t data_hash = dataset_content_hash(index);
    fs::create_directories(cfg.out_dir);

    TrainOptions opts;
    opts.batch             = cfg.training.batch;
    opts.seed              = cfg.training.seed;
    opts.alpha_loss_weight = cfg.training.alpha_loss_weight;
    opts.lora_rank         = cfg.training.lora_rank;
    opts.lora_gamma        = cfg.training.lora_gamma;

    const double t0 = now_seconds();
    DiTModel model;
    TrainResult result;
    std::string ckpt_path;
    uint64_t base_hash_in = 0;
    if (phase == TrainPhase::Pretrain) {
        opts.steps = cfg.training.pretrain_steps;
        opts.lr    = cfg.training.pretrain_lr;
        Rng rng(cfg.training.seed);
        model  = DiTModel::create_base(cfg.model, cfg.scheme, rng);
        result = pretrain_base(model, examples, cfg.objective, opts);
        ckpt_path = out_override.empty() ? cfg.out_dir + "/base.ckpt" : out_override;
    } else {
        if (base_checkpoint.empty()) throw ConfigError("finetune: base checkpoint required");
        opts.steps = cfg.training.finetune_steps;
        opts.lr    = cfg.training.finetune_lr;
        model      = load_checkpoint(base_checkpoint);
        if (model.cfg.dim != cfg.model.dim || model.cfg.depth != cfg.model.depth) {
            throw ConfigError("finetune: checkpoint does not match the model configuration");
        }
        base_hash_in = base_weights_hash(model);
        result = finetune_rgba(model, examples, cfg.objective, cfg.mask_mode, cfg.design, opts);
        ckpt_path = out_override.empty()
                        ? cfg.out_dir + "/finetune_" + joint_design_name(cfg.design) + "_" +
                              mask_mode_name(cfg.mask_mode) + ".ckpt"
                        : out_override;
    }
    save_checkpoint(ckpt_path, model);
    const uint64_t ckpt_hash = model_content_hash(model);

    json manifest;
    manifest["config"]       = cfg.to_json();
    manifest["phase"]        = phase == TrainPhase::Pretrain ? "pretrain" : "finetune";
    manifest["dataset_dir"]  = dataset_dir;
    manifest["dataset_hash"] = hash_hex(data_hash);
    if (phase == TrainPhase::Finetune) {
        manifest["base_checkpoint"]      = base_checkpoint;
        manifest["base_hash_unchanged"]  = base_weights_hash(model) == base_hash_in;
        json trainables                  = json::array();
        for (auto* p : model.trainable_parameters()) {
            trainables.push_back({{"name", p->name}, {"shape", p->tensor.shape()}});
        }
        manifest["trainable"]       = std::move(trainables);
        manifest["trainable_count"] = model.trainable_count();
    }
    manifest["losses"]       = result.losses;
    manifest["wall_seconds"] = now_seconds() - t0;
    manifest["checkpoint"]   = ckpt_path;
    manifest["artifacts"]    = {{"checkpoint", hash_hex(ckpt_hash)}};
    write_json_atomic(ckpt_path + ".manifest.json", manifest);

    return TrainRun{ckpt_path, ckpt_hash, std::move(result.losses)};
}

// ---- sample command ----

SampleRun cmd_sample(const ExperimentConfig& cfg, const std::string& checkpoint_path, int cond_id,
                     uint64_t seed, int steps, const std::string& out_dir, bool rgb_only) {
    const DiTModel model = load_checkpoint(checkpoint_path);
    SamplerConfig sampler;
    sampler.steps     = steps;
    sampler.seed      = seed;
    sampler.objective = cfg.objective;

    RgbaVideo video;
    if (rgb_only) {
        Tensor toks = sample_tokens(model, cond_id, sampler, MaskMode::Unmasked, false);
        const auto plane =
            unpatchify(toks, model.cfg.frames, model.cfg.height, model.cfg.width, model.cfg.patch);
        video = RgbaVideo(model.cfg.frames, model.cfg.height, model.cfg.width);
        for (int f = 0; f < video.frames; ++f) {
            for (int y = 0; y < video.height; ++y) {
                for (int x = 0; x < video.width; ++x) {
                    const size_t base =
                        ((static_cast<size_t>(f) * video.height + y) * video.width + x) * 3;
                    for (int c = 0; c < 3; ++c) {
                        video.at(f, y, x, c) = std::clamp(plane[base + c], 0.0, 1.0);
                    }
                    video.at(f, y, x, 3) = 1.0;
                }
            }
        }
    } else {
        video = sample_video(model, cond_id, sampler, cfg.mask_mode);
    }

    fs::create_directories(out_dir);
    write_video_frames(out_dir, video);
    for (int f = 0; f < video.frames; ++f) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "/preview_%03d.pam", f);
        write_checker_preview(out_dir + buf, video, f);
    }
    uint64_t fh = 0xcbf29ce484222325ull;
    for (int f = 0; f < video.frames; ++f) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "/frame_%03d.pam", f);
        const uint64_t one = file_hash(out_dir + buf);
        fh                 = fnv1a64(&one, sizeof(one), fh);
    }
    json manifest;
    manifest["config"]          = cfg.to_json();
    manifest["checkpoint"]      = checkpoint_path;
    manifest["checkpoint_hash"] = hash_hex(model_content_hash(model));
    manifest["cond_id"]         = cond_id;
    manifest["seed"]            = seed;
    manifest["steps"]           = steps;
    manifest["mask_mode"]       = mask_mode_name(cfg.mask_mode);
    manifest["rgb_only"]        = rgb_only;
    manifest["frames"]          = video.frames;
    manifest["height"]          = video.height;
    manifest["width"]           = video.width;
    manifest["artifacts"]       = {{"frames", hash_hex(fh)}};
    write_json_atomic(out_dir + "/manifest.json", manifest);
    return SampleRun{out_dir, fh};
}

// ---- eval command ----

EvalRun cmd_eval(const ExperimentConfig& cfg, const std::vector<std::string>& sample_dirs,
                 const std::string& record_path) {
    if (sample_dirs.empty()) throw DataError("eval: no sample directories given");
    EvalRun run{};
    json videos = json::array();
    for (const auto& dir : sample_dirs) {
        const json m = read_json(dir + "/manifest.json");
        const int frames = m.at("frames"), height = m.at("height"), width = m.at("width");
        const RgbaVideo video = read_video_frames(dir, frames, height, width);
        uint64_t fh           = 0xcbf29ce484222325ull;
        for (int f = 0; f < frames; ++f) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "/frame_%03d.pam", f);
            const uint64_t one = file_hash(dir + buf);
            fh                 = fnv1a64(&one, sizeof(one), fh);
        }
        VideoScore score;
        score.dir             = dir;
        score.input_hash      = fh;
        score.flow_difference = flow_difference(rgb_as_video(video), alpha_as_video(video),
                                                cfg.eval.flow);
        score.alignment_iou   = alpha_alignment_iou(video, cfg.eval.alpha_threshold);
        run.videos.push_back(score);
        videos.push_back({{"dir", dir},
                          {"input_hash", hash_hex(fh)},
                          {"flow_difference", score.flow_difference},
                          {"alignment_iou", score.alignment_iou}});
    }
    double fsum = 0.0, isum = 0.0;
    for (const auto& v : run.videos) {
        fsum += v.flow_difference;
        isum += v.alignment_iou;
    }
    run.flow_difference_mean = fsum / static_cast<double>(run.videos.size());
    run.alignment_iou_mean   = isum / static_cast<double>(run.videos.size());

    json record;
    record["videos"]    = std::move(videos);
    record["aggregate"] = {{"flow_difference", run.flow_difference_mean},
                           {"alignment_iou", run.alignment_iou_mean},
                           {"n_videos", run.videos.size()}};
    record["params"]    = cfg.to_json()["eval"];
    run.record_hash     = fnv1a64(record.dump().data(), record.dump().size());
    record["artifacts"] = {{"record", hash_hex(run.record_hash)}};
    if (!record_path.empty()) {
        fs::create_directories(fs::path(record_path).parent_path().empty()
                                   ? "."
                                   : fs::path(record_path).parent_path().string());
        write_json_atomic(record_path, record);
        run.record_path = record_path;
    }
    return run;
}

// ---- ablation command ----

bool AblationReport::all_ok() const {
    for (const auto& leg : legs) {
        if (!leg.ok) return false;
    }
    return true;
}

AblationReport cmd_ablate(const ExperimentConfig& cfg, const std::string& dataset_dir,
                          const std::string& base_checkpoint, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    const DatasetIndex index = read_dataset_index(dataset_dir);

    AblationReport report{};
    report.dataset_hash = dataset_content_hash(index);
    {
        const DiTModel base = load_checkpoint(base_checkpoint);
        report.base_hash    = base_weights_hash(base);
    }

    struct LegSpec {
        const char* name;
        MaskMode mode;
        JointDesign design;
    };
    const LegSpec specs[] = {
        {"seq_text_to_alpha_blocked", MaskMode::TextToAlphaBlocked,
         JointDesign::SequenceExtension},
        {"seq_all_alpha_keys_blocked", MaskMode::AllAlphaKeysBlocked,
         JointDesign::SequenceExtension},
        {"seq_unmasked", MaskMode::Unmasked, JointDesign::SequenceExtension},
        {"batch_extension", MaskMode::Unmasked, JointDesign::BatchExtension},
        {"latent_dim_extension", MaskMode::Unmasked, JointDesign::LatentDimExtension},
    };

    for (const auto& spec : specs) {
        AblationLeg leg;
        leg.name   = spec.name;
        leg.mode   = spec.mode;
        leg.design = spec.design;
        const double t0 = now_seconds();
        try {
            ExperimentConfig leg_cfg = cfg;
            leg_cfg.mask_mode        = spec.mode;
            leg_cfg.design           = spec.design;
            leg_cfg.out_dir          = out_dir + "/" + spec.name;
            fs::create_directories(leg_cfg.out_dir);

            TrainRun tr = cmd_train(leg_cfg, TrainPhase::Finetune, dataset_dir, base_checkpoint);
            leg.checkpoint_hash = tr.checkpoint_hash;
            {
                const DiTModel m     = load_checkpoint(tr.checkpoint_path);
                leg.trainable_params = m.trainable_count();
            }
            std::vector<std::string> dirs;
            for (int i = 0; i < cfg.eval.n_videos; ++i) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "/video_%02d", i);
                dirs.push_back(cmd_sample(leg_cfg, tr.checkpoint_path, i % cfg.model.num_classes,
                                          cfg.sampler.seed + static_cast<uint64_t>(i),
                                          cfg.sampler.steps, leg_cfg.out_dir + buf)
                                   .dir);
            }
            EvalRun ev = cmd_eval(leg_cfg, dirs, leg_cfg.out_dir + "/metrics.json");
            leg.flow_difference = ev.flow_difference_mean;
            leg.alignment_iou   = ev.alignment_iou_mean;
            leg.ok              = true;
        } catch (const std::exception& e) {
            leg.ok    = false;
            leg.error = e.what();
            log_warn(std::string("ablation leg ") + spec.name + " failed: " + e.what());
        }
        leg.wall_seconds = now_seconds() - t0;
        report.legs.push_back(std::move(leg));
    }

    json legs = json::array();
    uint64_t table_hash = 0xcbf29ce484222325ull;
    for (const auto& leg : report.legs) {
        json row = {{"name", leg.name},
                    {"mask_mode", mask_mode_name(leg.mode)},
                    {"design", joint_design_name(leg.design)},
                    {"ok", leg.ok},
                    {"flow_difference", leg.flow_difference},
                    {"alignment_iou", leg.alignment_iou},
                    {"trainable_params", leg.trainable_params},
                    {"checkpoint_hash", hash_hex(leg.checkpoint_hash)}};
        if (!leg.ok) row["error"] = leg.error;
        const std::string dump = row.dump();
        table_hash             = fnv1a64(dump.data(), dump.size(), table_hash);
        row["wall_seconds"]    = leg.wall_seconds;
        legs.push_back(std::move(row));
    }
    json out;
    out["config"]       = cfg.to_json();
    out["dataset_hash"] = hash_hex(report.dataset_hash);
    out["base_hash"]    = hash_hex(report.base_hash);
    out["legs"]         = std::move(legs);
    out["artifacts"]    = {{"table", hash_hex(table_hash)}};
    report.report_path  = out_dir + "/report.json";
    write_json_atomic(report.report_path, out);

    std::printf("%-28s %-10s %14s %14s %12s %10s\n", "leg", "status", "flow_diff", "iou",
                "trainable", "wall_s");
    for (const auto& leg : report.legs) {
        std::printf("%-28s %-10s %14.6f %14.4f %12lld %10.1f\n", leg.name.c_str(),
                    leg.ok ? "ok" : "FAILED", leg.flow_difference, leg.alignment_iou,
                    static_cast<long long>(leg.trainable_params), leg.wall_seconds);
    }
    return report;
}

}  // namespace rgbadit
