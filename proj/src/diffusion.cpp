#include "rgbadit/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rgbadit {

const char* objective_name(ObjectiveKind k) {
    return k == ObjectiveKind::FlowMatching ? "flow_matching" : "ddpm";
}

ObjectiveKind objective_from_name(const std::string& name) {
    if (name == "flow_matching") return ObjectiveKind::FlowMatching;
    if (name == "ddpm") return ObjectiveKind::Ddpm;
    throw ConfigError("unknown objective: " + name);
}

std::vector<double> DdpmSchedule::alpha_bar() const {
    if (timesteps < 1) throw ConfigError("ddpm: timesteps must be >= 1");
    if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max) {
        throw ConfigError("ddpm: need 0 < beta_min <= beta_max < 1");
    }
    std::vector<double> abar(static_cast<size_t>(timesteps) + 1);
    abar[0]    = 1.0;
    double cum = 1.0;
    for (int t = 1; t <= timesteps; ++t) {
        const double beta =
            timesteps == 1 ? beta_min
                           : beta_min + (beta_max - beta_min) * (t - 1) / (timesteps - 1);
        cum *= 1.0 - beta;
        abar[static_cast<size_t>(t)] = cum;
    }
    return abar;
}

void SamplerConfig::validate() const {
    if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
}

std::pair<Tensor, Tensor> fm_interpolate(const Tensor& x0, const Tensor& x1, double t) {
    if (!x0.same_shape(x1)) throw ShapeError("fm_interpolate: shape mismatch");
    if (!(t >= 0.0 && t <= 1.0)) throw ContractError("fm_interpolate: t outside [0, 1]");
    Tensor xt     = add(scale(x0, 1.0 - t), scale(x1, t));
    Tensor target = sub(x1, x0);
    return {xt, target};
}

Tensor ddpm_q_sample(const Tensor& x0, int t, const Tensor& noise, const DdpmSchedule& sched) {
    if (!x0.same_shape(noise)) throw ShapeError("ddpm_q_sample: shape mismatch");
    if (t < 1 || t > sched.timesteps) throw ContractError("ddpm_q_sample: t outside [1, T]");
    const auto abar = sched.alpha_bar();
    const double a  = abar[static_cast<size_t>(t)];
    return add(scale(x0, std::sqrt(a)), scale(noise, std::sqrt(1.0 - a)));
}

namespace {

Tensor weighted_token_loss(const Tensor& pred, const Tensor& target, bool doubled,
                           double alpha_weight) {
    if (!doubled || alpha_weight == 1.0) return mean_squared_error(pred, target);
    const int half = pred.rows() / 2;
    Tensor lr      = mean_squared_error(slice_rows(pred, 0, half), slice_rows(target, 0, half));
    Tensor la =
        mean_squared_error(slice_rows(pred, half, pred.rows()), slice_rows(target, half, pred.rows()));
    return scale(add(lr, scale(la, alpha_weight)), 1.0 / (1.0 + alpha_weight));
}

}  // namespace

double training_step(DiTModel& model, const std::vector<const TrainExample*>& batch,
                     const Objective& objective, MaskMode mode, bool doubled,
                     RmsOptimizer& optimizer, Rng& rng, double alpha_weight) {
    if (batch.empty()) throw ContractError("training_step: empty batch");
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    double total           = 0.0;
    std::vector<double> abar;
    if (objective.kind == ObjectiveKind::Ddpm) abar = objective.ddpm.alpha_bar();

    for (const TrainExample* ex : batch) {
        Tensor data = doubled ? concat_rows({ex->rgb_toks, ex->alpha_toks}) : ex->rgb_toks;
        Tensor noise = Tensor::randn(data.shape(), rng);
        Tensor xt, target;
        double t_cont = 0.0;
        if (objective.kind == ObjectiveKind::FlowMatching) {
            t_cont       = rng.uniform();
            auto pair    = fm_interpolate(noise, data, t_cont);
            xt           = pair.first;
            target       = pair.second;
        } else {
            const int t = rng.uniform_int(1, objective.ddpm.timesteps);
            t_cont      = static_cast<double>(t) / objective.ddpm.timesteps;
            const double a = abar[static_cast<size_t>(t)];
            xt     = add(scale(data, std::sqrt(a)), scale(noise, std::sqrt(1.0 - a)));
            target = noise;
        }
        Tensor pred = model.forward(xt, t_cont, ex->cond_id, mode);
        Tensor loss = scale(weighted_token_loss(pred, target, doubled, alpha_weight), inv_batch);
        total += loss.value();
        backward(loss);
    }
    if (!std::isfinite(total)) throw TrainingError("training_step: non-finite loss");
    optimizer.step(model.trainable_parameters());
    return total;
}

Tensor sample_tokens(const DiTModel& model, int cond_id, const SamplerConfig& sampler,
                     MaskMode mode, bool doubled) {
    sampler.validate();
    NoGradGuard ng;
    const int rows = (doubled ? 2 : 1) * model.cfg.video_tokens();
    Rng rng(sampler.seed);
    Tensor x = Tensor::randn({rows, model.cfg.patch_dim()}, rng);

    if (sampler.objective.kind == ObjectiveKind::FlowMatching) {
        const double dt = 1.0 / sampler.steps;
        for (int k = 0; k < sampler.steps; ++k) {
            const double t = static_cast<double>(k) / sampler.steps;
            Tensor v       = model.forward(x, t, cond_id, mode);
            x              = add(x, scale(v, dt));
        }
        return x;
    }

    // respaced ancestral DDPM
    const auto& sched = sampler.objective.ddpm;
    const auto abar   = sched.alpha_bar();
    const int n       = std::min(sampler.steps, sched.timesteps);
    std::vector<int> taus(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        taus[static_cast<size_t>(j)] =
            1 + static_cast<int>(std::llround(static_cast<double>(sched.timesteps - 1) *
                                              (n - 1 - j) / std::max(1, n - 1)));
    }
    for (int j = 0; j < n; ++j) {
        const int t      = taus[static_cast<size_t>(j)];
        const int t_prev = j + 1 < n ? taus[static_cast<size_t>(j + 1)] : 0;
        const double at  = abar[static_cast<size_t>(t)];
        const double ap  = abar[static_cast<size_t>(t_prev)];
        Tensor eps = model.forward(x, static_cast<double>(t) / sched.timesteps, cond_id, mode);

        Tensor x0_hat = scale(sub(x, scale(eps, std::sqrt(1.0 - at))), 1.0 / std::sqrt(at));
        const double alpha_step = at / ap;          // effective alpha over the respaced jump
        const double beta_step  = 1.0 - alpha_step;
        const double c0 = std::sqrt(ap) * beta_step / (1.0 - at);
        const double c1 = std::sqrt(alpha_step) * (1.0 - ap) / (1.0 - at);
        x               = add(scale(x0_hat, c0), scale(x, c1));
        if (t_prev > 0) {
            const double var = beta_step * (1.0 - ap) / (1.0 - at);
            Tensor z         = Tensor::randn(x.shape(), rng);
            x                = add(x, scale(z, std::sqrt(std::max(0.0, var))));
        }
    }
    return x;
}

RgbaVideo sample_video(const DiTModel& model, int cond_id, const SamplerConfig& sampler,
                       MaskMode mode) {
    const auto& cfg = model.cfg;
    Tensor tokens   = sample_tokens(model, cond_id, sampler, mode, /*doubled=*/true);
    const int L     = cfg.video_tokens();
    return decode_rgba(slice_rows(tokens, 0, L), slice_rows(tokens, L, 2 * L), cfg.frames,
                       cfg.height, cfg.width, cfg.patch);
}

namespace {

TrainResult run_training(DiTModel& model, const std::vector<TrainExample>& dataset,
                         const Objective& objective, MaskMode mode, bool doubled,
                         const TrainOptions& opts, double lr) {
    if (dataset.empty()) throw TrainingError("training: empty dataset");
    if (opts.batch < 1 || opts.steps < 0) throw ConfigError("training: bad batch/steps");
    RmsOptimizer optimizer(lr);
    Rng rng(opts.seed);
    TrainResult result;
    result.losses.reserve(static_cast<size_t>(opts.steps));
    for (int step = 0; step < opts.steps; ++step) {
        std::vector<const TrainExample*> batch;
        batch.reserve(static_cast<size_t>(opts.batch));
        for (int b = 0; b < opts.batch; ++b) {
            batch.push_back(&dataset[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(dataset.size()) - 1))]);
        }
        double loss = 0.0;
        try {
            loss = training_step(model, batch, objective, mode, doubled, optimizer, rng,
                                 opts.alpha_loss_weight);
        } catch (const TrainingError& e) {
            throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step) +
                                " (seed " + std::to_string(opts.seed) + ")");
        }
        result.losses.push_back(loss);
        if (opts.log_every > 0 && (step + 1) % opts.log_every == 0) {
            log_info("step " + std::to_string(step + 1) + "/" + std::to_string(opts.steps) +
                     " loss " + std::to_string(loss));
        }
    }
    return result;
}

}  // namespace

TrainResult pretrain_base(DiTModel& model, const std::vector<TrainExample>& dataset,
                          const Objective& objective, const TrainOptions& opts) {
    model.set_pretrain_regime();
    return run_training(model, dataset, objective, MaskMode::Unmasked, /*doubled=*/false, opts,
                        opts.lr);
}

TrainResult finetune_rgba(DiTModel& model, const std::vector<TrainExample>& dataset,
                          const Objective& objective, MaskMode mode, JointDesign design,
                          const TrainOptions& opts) {
    Rng attach_rng(opts.seed ^ 0x5bd1e995u);
    switch (design) {
        case JointDesign::SequenceExtension:
            model.attach_sequence_adapters(opts.lora_rank, opts.lora_gamma, attach_rng);
            break;
        case JointDesign::BatchExtension:
            model.attach_batch_comm(attach_rng);
            break;
        case JointDesign::LatentDimExtension:
            model.attach_latent_maps();
            break;
    }
    model.set_finetune_regime();
    const uint64_t base_before = base_weights_hash(model);
    TrainResult result =
        run_training(model, dataset, objective, mode, /*doubled=*/true, opts, opts.lr);
    if (base_weights_hash(model) != base_before) {
        throw TrainingError("finetune: frozen base weights changed");
    }
    return result;
}

}  // namespace rgbadit
