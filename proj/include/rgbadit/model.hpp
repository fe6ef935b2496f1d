#ifndef RGBADIT_MODEL_HPP
#define RGBADIT_MODEL_HPP

#include <optional>
#include <string>
#include <vector>

#include "rgbadit/attention.hpp"
#include "rgbadit/embedding.hpp"
#include "rgbadit/tensor.hpp"

namespace rgbadit {

struct DiTConfig {
    int depth       = 4;
    int dim         = 64;
    int heads       = 4;
    int ffn_mult    = 4;
    int patch       = 4;
    int frames      = 8;
    int height      = 16;
    int width       = 16;
    int cond_tokens = 4;   // stands in for text tokens
    int time_embed_dim = 0;  // 0 means "= dim"
    int num_classes = 16;

    int video_tokens() const { return frames * (height / patch) * (width / patch); }
    int patch_dim() const { return patch * patch * 3; }
    void validate() const;
};

// How the second (alpha) domain is wired into the transformer.
enum class JointDesign { SequenceExtension, BatchExtension, LatentDimExtension };

const char* joint_design_name(JointDesign d);
JointDesign joint_design_from_name(const std::string& name);

struct LayerNormParams {
    Parameter gain, bias;
};

struct FfnWeights {
    Parameter w1, b1, w2, b2;
};

struct DiTBlock {
    LayerNormParams ln1, ln2;
    AttentionWeights attn;
    FfnWeights ffn;
    std::optional<LoraSet> lora;  // present only after sequence-extension attach
};

// Per-layer observation of a forward pass; used by the preservation and
// symmetry checks.
struct ForwardTrace {
    bool probe_weights = false;
    std::vector<Tensor> block_outputs;        // token matrix after each block
    std::vector<Tensor> attn_outputs;         // attention sublayer output per block
    std::vector<AttentionProbe> probes;       // post-softmax weights per block
};

struct DiTModel {
    DiTConfig cfg;
    PositionalScheme scheme;
    JointDesign design = JointDesign::SequenceExtension;

    Parameter patch_w, patch_b;   // [Dp x D], [D]
    Parameter cond_table;         // [classes*cond_tokens x D]
    std::vector<DiTBlock> blocks;
    LayerNormParams final_ln;
    Parameter out_w, out_b;       // [D x Dp], [Dp]
    DomainEmbedding domain;       // applied to alpha rows / second stream

    std::optional<AttentionWeights> comm;  // batch-extension cross-stream module
    struct LatentMaps {
        Parameter merge_w, merge_b, unmerge_w, unmerge_b;
    };
    std::optional<LatentMaps> latent;

    double lora_gamma = 1.0;
    int lora_rank     = 0;
    bool finetune_regime = false;

    static DiTModel create_base(const DiTConfig& cfg, const PositionalScheme& scheme, Rng& rng);

    // Extension modules; each implies the matching JointDesign.
    // attach_sequence_adapters clamps the requested rank to dim/2 with a
    // warning when rank >= dim.
    void attach_sequence_adapters(int rank, double gamma, Rng& rng);
    void attach_batch_comm(Rng& rng);
    void attach_latent_maps();

    void set_pretrain_regime();
    void set_finetune_regime();

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    std::vector<Parameter*> base_parameters();
    std::vector<const Parameter*> base_parameters() const;
    std::vector<Parameter*> trainable_parameters();
    int64_t trainable_count() const;

    // Predicts velocity/noise tokens from noisy video tokens. Accepts
    // [2L x Dp] (extended, routed by design) or [L x Dp] (base RGB path).
    Tensor forward(const Tensor& noisy_tokens, double t, int cond_id, MaskMode mode,
                   ForwardTrace* trace = nullptr) const;

    SequenceLayout layout(bool doubled) const;

private:
    Tensor forward_sequence(const Tensor& noisy, double t, int cond_id, MaskMode mode,
                            bool doubled, ForwardTrace* trace) const;
    Tensor forward_batch_ext(const Tensor& noisy, double t, int cond_id,
                             ForwardTrace* trace) const;
    Tensor forward_latent(const Tensor& noisy, double t, int cond_id, ForwardTrace* trace) const;
    Tensor run_blocks(Tensor tok, const SequenceLayout& lay, const MaskSpec& mask, bool use_lora,
                      ForwardTrace* trace) const;
    Tensor input_stage(const Tensor& noisy_video, double t, int cond_id,
                       const SequenceLayout& lay) const;
};

Tensor time_embedding(double t, int dim);

// Self-describing checkpoint container: JSON header (config echo, parameter
// table, content hash) followed by raw little-endian float64 data.
void save_checkpoint(const std::string& path, const DiTModel& model);
DiTModel load_checkpoint(const std::string& path);

uint64_t model_content_hash(const DiTModel& model);
uint64_t base_weights_hash(const DiTModel& model);

}  // namespace rgbadit

#endif  // RGBADIT_MODEL_HPP
