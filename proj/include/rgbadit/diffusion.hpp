#ifndef RGBADIT_DIFFUSION_HPP
#define RGBADIT_DIFFUSION_HPP

#include <utility>
#include <vector>

#include "rgbadit/dataset.hpp"
#include "rgbadit/model.hpp"

namespace rgbadit {

enum class ObjectiveKind { FlowMatching, Ddpm };

const char* objective_name(ObjectiveKind k);
ObjectiveKind objective_from_name(const std::string& name);

struct DdpmSchedule {
    double beta_min = 1e-4;
    double beta_max = 0.02;
    int timesteps   = 1000;

    // cumulative products of (1 - beta_t), index 1..T (index 0 holds 1.0)
    std::vector<double> alpha_bar() const;
};

struct Objective {
    ObjectiveKind kind = ObjectiveKind::FlowMatching;
    DdpmSchedule ddpm;
};

struct SamplerConfig {
    int steps     = 50;
    uint64_t seed = 0;
    Objective objective;

    void validate() const;
};

// Rectified-flow pair: x_t = (1-t)*x0 + t*x1, target velocity x1 - x0.
// Convention: x0 is noise, x1 is data.
std::pair<Tensor, Tensor> fm_interpolate(const Tensor& x0, const Tensor& x1, double t);

// Forward noising x_t = sqrt(abar_t)*x0 + sqrt(1-abar_t)*noise, t in [1, T].
Tensor ddpm_q_sample(const Tensor& x0, int t, const Tensor& noise, const DdpmSchedule& sched);

struct TrainExample {
    Tensor rgb_toks;    // [L x Dp]
    Tensor alpha_toks;  // [L x Dp]
    int cond_id = 0;
};

// One optimization step over a batch: samples diffusion times and noise,
// forms the noisy input, regresses the objective target with MSE over both
// halves (alpha half scaled by alpha_weight), backpropagates and steps the
// optimizer over the trainable set. Returns the mean batch loss.
double training_step(DiTModel& model, const std::vector<const TrainExample*>& batch,
                     const Objective& objective, MaskMode mode, bool doubled,
                     RmsOptimizer& optimizer, Rng& rng, double alpha_weight = 1.0);

// Deterministic sampler: Euler integration of the velocity field for flow
// matching, seeded respaced ancestral sampling for DDPM.
Tensor sample_tokens(const DiTModel& model, int cond_id, const SamplerConfig& sampler,
                     MaskMode mode, bool doubled);
RgbaVideo sample_video(const DiTModel& model, int cond_id, const SamplerConfig& sampler,
                       MaskMode mode);

struct TrainOptions {
    int steps                 = 1000;
    int batch                 = 8;
    double lr                 = 1e-4;
    uint64_t seed             = 0;
    double alpha_loss_weight  = 1.0;
    int lora_rank             = 128;
    double lora_gamma         = 1.0;
    int log_every             = 100;
};

struct TrainResult {
    std::vector<double> losses;
};

// Trains the unextended model (text+RGB, unmasked) on RGB tokens.
TrainResult pretrain_base(DiTModel& model, const std::vector<TrainExample>& dataset,
                          const Objective& objective, const TrainOptions& opts);

// Attaches the extension module for `design`, freezes the base, and trains
// the joint RGBA objective. Throws TrainingError if any base weight changed.
TrainResult finetune_rgba(DiTModel& model, const std::vector<TrainExample>& dataset,
                          const Objective& objective, MaskMode mode, JointDesign design,
                          const TrainOptions& opts);

}  // namespace rgbadit

#endif  // RGBADIT_DIFFUSION_HPP
