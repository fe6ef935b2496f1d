#ifndef RGBADIT_ATTENTION_HPP
#define RGBADIT_ATTENTION_HPP

#include <optional>
#include <string>
#include <vector>

#include "rgbadit/embedding.hpp"
#include "rgbadit/tensor.hpp"

namespace rgbadit {

// Attention-group regimes over the text | RGB | alpha sequence.
//   TextToAlphaBlocked  - text queries may not read alpha keys (the method).
//   AllAlphaKeysBlocked - no text or RGB query may read alpha keys; keeps the
//                         base model's text+RGB computation untouched.
//   Unmasked            - full attention.
enum class MaskMode { TextToAlphaBlocked, AllAlphaKeysBlocked, Unmasked };

const char* mask_mode_name(MaskMode mode);
MaskMode mask_mode_from_name(const std::string& name);

struct MaskSpec {
    SequenceLayout layout;
    MaskMode mode;
    Tensor additive;  // [S x S] entries in {0, -inf}, never differentiated
};

MaskSpec build_mask(const SequenceLayout& layout, MaskMode mode);

// Low-rank residual on one qkv projection, applied to alpha rows only.
// up starts exactly zero so a fresh adapter is a no-op.
struct LoraAdapter {
    Parameter down;  // [D x r]
    Parameter up;    // [r x D]
    int rank     = 0;
    double gamma = 1.0;
    char target  = 'q';

    LoraAdapter() = default;
    LoraAdapter(const std::string& name_prefix, int dim, int r, double g, char tgt, Rng& rng);
};

struct LoraSet {
    LoraAdapter q, k, v;

    LoraSet() = default;
    LoraSet(const std::string& name_prefix, int dim, int rank, double gamma, Rng& rng);
    std::vector<Parameter*> parameters();
};

struct AttentionWeights {
    Parameter wq, wk, wv, wo;  // packed [D x D], head h owns columns [h*Dh, (h+1)*Dh)
    int heads = 1;

    AttentionWeights() = default;
    AttentionWeights(const std::string& name_prefix, int dim, int heads, Rng& rng,
                     bool zero_output = false);
    std::vector<Parameter*> parameters();
};

struct ProjectionResult {
    Tensor q, k, v;
};

// Projects an already-embedded token matrix [S x D]. Alpha rows (doubled
// layouts only) receive the gamma-scaled LoRA residual; under ROPE, q and k
// video rows are rotated by their shared positional index, text rows are not.
ProjectionResult project_tokens(const Tensor& tokens, const AttentionWeights& weights,
                                const LoraSet* lora, const PositionalScheme& scheme,
                                const SequenceLayout& layout);

// Full projection of raw text + video tokens: applies the shared positional
// encoding and domain embedding to the video rows, then projects. Text rows
// get no positional term and no LoRA.
ProjectionResult project_qkv(const Tensor& text_tokens, const Tensor& video_tokens,
                             const AttentionWeights& weights, const LoraSet& lora,
                             const PositionalScheme& scheme, const DomainEmbedding& d,
                             const SequenceLayout& layout);

// Captures post-softmax attention weights, one [S x S] tensor per head.
struct AttentionProbe {
    std::vector<Tensor> head_weights;
};

// Masked multi-head scaled dot-product attention with output projection.
Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, const MaskSpec& mask,
                         const AttentionWeights& weights, AttentionProbe* probe = nullptr);

// Runs one attention application on the extended sequence and on the base
// text+RGB sequence with the same weights; returns the max absolute
// difference over the text+RGB output rows.
double truncated_equivalence_check(const Tensor& text_tokens, const Tensor& video_tokens,
                                   const AttentionWeights& weights, const LoraSet& lora,
                                   const PositionalScheme& scheme, const DomainEmbedding& d,
                                   const SequenceLayout& layout, MaskMode mode);

}  // namespace rgbadit

#endif  // RGBADIT_ATTENTION_HPP
