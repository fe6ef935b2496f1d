#ifndef RGBADIT_EXPERIMENT_HPP
#define RGBADIT_EXPERIMENT_HPP

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rgbadit/diffusion.hpp"
#include "rgbadit/metrics.hpp"

namespace rgbadit {

struct DatasetSpec {
    int n_scenes  = 512;
    int frames    = 8;
    int height    = 16;
    int width     = 16;
    uint64_t seed = 1234;
};

struct TrainingSpec {
    int pretrain_steps       = 2000;
    int finetune_steps       = 1000;
    int batch                = 8;
    double pretrain_lr       = 1e-3;
    double finetune_lr       = 1e-4;
    uint64_t seed            = 7;
    int lora_rank            = 128;
    double lora_gamma        = 1.0;
    double alpha_loss_weight = 1.0;
};

struct EvalSpec {
    FlowParams flow{0.5, 1, 5, 3, 5, 1.1};  // desk-scale frames are small
    int n_videos          = 16;
    double alpha_threshold = 0.5;
};

struct PreprocessSpec {
    bool decontaminate = false;
    DecontaminateOrientation orientation = DecontaminateOrientation::AsPrinted;
    double gain  = 1.1;
    double choke = 0.5;
    bool blur_background = false;
    int blur_kernel      = 201;
};

struct ExperimentConfig {
    int version = 1;
    std::string out_dir = "runs/exp";
    DiTConfig model;
    PositionalScheme scheme{PositionalKind::Rope, 10000.0, 0};
    Objective objective;
    SamplerConfig sampler;
    MaskMode mask_mode  = MaskMode::TextToAlphaBlocked;
    JointDesign design  = JointDesign::SequenceExtension;
    DatasetSpec dataset;
    TrainingSpec training;
    EvalSpec eval;
    PreprocessSpec preprocess;

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    // Loads defaults, optionally overlaid by a config file, then by
    // "dot.path=value" overrides.
    static ExperimentConfig load(const std::string& path,
                                 const std::vector<std::string>& overrides);
};

// Filesystem layout of a generated dataset.
struct SceneEntry {
    std::string dir;
    int cond_id;
    uint64_t seed;
};

struct DatasetIndex {
    std::string root;
    DatasetSpec spec;
    std::vector<SceneEntry> scenes;
};

std::string cmd_gen_dataset(const ExperimentConfig& cfg, const std::string& dir_override = "");
DatasetIndex read_dataset_index(const std::string& dir);
std::vector<TrainExample> load_train_examples(const DatasetIndex& index, int patch);
uint64_t dataset_content_hash(const DatasetIndex& index);

enum class TrainPhase { Pretrain, Finetune };

struct TrainRun {
    std::string checkpoint_path;
    uint64_t checkpoint_hash;
    std::vector<double> losses;
};

TrainRun cmd_train(const ExperimentConfig& cfg, TrainPhase phase, const std::string& dataset_dir,
                   const std::string& base_checkpoint = "",
                   const std::string& out_override    = "");

struct SampleRun {
    std::string dir;
    uint64_t frames_hash;
};

SampleRun cmd_sample(const ExperimentConfig& cfg, const std::string& checkpoint_path, int cond_id,
                     uint64_t seed, int steps, const std::string& out_dir, bool rgb_only = false);

struct VideoScore {
    std::string dir;
    uint64_t input_hash;
    double flow_difference;
    double alignment_iou;
};

struct EvalRun {
    std::vector<VideoScore> videos;
    double flow_difference_mean;
    double alignment_iou_mean;
    uint64_t record_hash;
    std::string record_path;
};

EvalRun cmd_eval(const ExperimentConfig& cfg, const std::vector<std::string>& sample_dirs,
                 const std::string& record_path);

struct AblationLeg {
    std::string name;
    MaskMode mode;
    JointDesign design;
    bool ok = false;
    std::string error;
    double flow_difference = 0.0;
    double alignment_iou   = 0.0;
    int64_t trainable_params = 0;
    double wall_seconds      = 0.0;
    uint64_t checkpoint_hash = 0;
};

struct AblationReport {
    std::vector<AblationLeg> legs;
    uint64_t dataset_hash;
    uint64_t base_hash;
    std::string report_path;
    bool all_ok() const;
};

// Fine-tunes, samples and evaluates the three mask regimes under sequence
// extension plus the batch- and latent-extension designs, all from one base
// checkpoint and dataset.
AblationReport cmd_ablate(const ExperimentConfig& cfg, const std::string& dataset_dir,
                          const std::string& base_checkpoint, const std::string& out_dir);

void write_json_atomic(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

}  // namespace rgbadit

#endif  // RGBADIT_EXPERIMENT_HPP
