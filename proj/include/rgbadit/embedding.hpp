#ifndef RGBADIT_EMBEDDING_HPP
#define RGBADIT_EMBEDDING_HPP

#include <vector>

#include "rgbadit/tensor.hpp"

namespace rgbadit {

enum class PositionalKind { AbsoluteSinusoidal, Rope };

struct PositionalScheme {
    PositionalKind kind = PositionalKind::AbsoluteSinusoidal;
    double theta_base   = 10000.0;  // ROPE only
    int dim             = 0;

    void validate() const;
};

// Token segments of the text | RGB | alpha sequence. video_len is the token
// count per video domain; doubled=true appends the alpha segment.
struct SequenceLayout {
    int text_len  = 0;
    int video_len = 0;
    int dim       = 0;
    bool doubled  = false;

    int total() const { return text_len + (doubled ? 2 * video_len : video_len); }
    int video_rows() const { return doubled ? 2 * video_len : video_len; }
    int alpha_begin() const { return text_len + video_len; }  // absolute row index
    void validate() const;
};

// Learnable per-domain offset for alpha tokens, exactly zero at construction
// and broadcast over rows at application time.
struct DomainEmbedding {
    Parameter vector;

    DomainEmbedding() = default;
    explicit DomainEmbedding(int dim, bool trainable = true)
        : vector("domain.d", Tensor::zeros({dim}), trainable) {}
    int dim() const { return vector.tensor.defined() ? static_cast<int>(vector.size()) : 0; }
};

// Shared positional index of a video token: alpha tokens reuse the RGB
// positions. m is 1-based within the video segment, m in [1, 2L].
int position_index(int m, int video_len);

std::vector<double> sinusoidal_pe(double index, int dim);

// Rotates channel pairs of a single vector, reference semantics for the
// differentiable rope_rotate op.
std::vector<double> apply_rope(const std::vector<double>& x, int index, double theta_base);

// Positional + domain embedding over the doubled video token matrix [2L x D].
// ABSOLUTE: x + p^(shared index) + d on alpha rows. ROPE: x + d on alpha rows
// only; rotation happens later inside the q/k projection.
Tensor embed_video_tokens(const Tensor& x, const PositionalScheme& scheme,
                          const DomainEmbedding& d, const SequenceLayout& layout);

// Same embedding stage without the doubling requirement; used by the base
// (RGB-only) forward path. No domain term is applied when layout is undoubled.
Tensor embed_video_tokens_any(const Tensor& x, const PositionalScheme& scheme,
                              const DomainEmbedding& d, const SequenceLayout& layout);

// 1-based shared positional indices for the video rows of a layout.
std::vector<int> video_position_indices(const SequenceLayout& layout);

// No-grad [rows x dim] matrix of sinusoidal rows for the given indices.
Tensor sinusoidal_rows(const std::vector<int>& indices, int dim);

}  // namespace rgbadit

#endif  // RGBADIT_EMBEDDING_HPP
