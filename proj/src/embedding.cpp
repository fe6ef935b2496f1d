#include "rgbadit/embedding.hpp"

#include <cmath>
#include <string>

namespace rgbadit {

void PositionalScheme::validate() const {
    if (dim <= 0) throw ConfigError("positional scheme: dim must be positive");
    if (kind == PositionalKind::Rope) {
        if (dim % 2 != 0) throw ConfigError("positional scheme: ROPE requires an even dim");
        if (!(theta_base > 0.0)) throw ConfigError("positional scheme: theta_base must be positive");
    }
}

void SequenceLayout::validate() const {
    if (text_len < 0) throw ConfigError("sequence layout: text_len must be non-negative");
    if (video_len <= 0) throw ConfigError("sequence layout: video_len must be positive");
    if (dim <= 0) throw ConfigError("sequence layout: dim must be positive");
}

int position_index(int m, int video_len) {
    if (video_len <= 0) throw ConfigError("position_index: video_len must be positive");
    if (m < 1 || m > 2 * video_len) {
        throw IndexError("position_index: m=" + std::to_string(m) + " outside [1, " +
                         std::to_string(2 * video_len) + "]");
    }
    return m <= video_len ? m : m - video_len;
}

std::vector<double> sinusoidal_pe(double index, int dim) {
    if (dim <= 0 || dim % 2 != 0) {
        throw ConfigError("sinusoidal_pe: dim must be positive and even");
    }
    if (index < 0.0) throw IndexError("sinusoidal_pe: index must be non-negative");
    std::vector<double> out(static_cast<size_t>(dim));
    for (int i = 0; i < dim / 2; ++i) {
        const double freq     = std::pow(10000.0, -2.0 * i / dim);
        out[2 * i]            = std::sin(index * freq);
        out[2 * i + 1]        = std::cos(index * freq);
    }
    return out;
}

std::vector<double> apply_rope(const std::vector<double>& x, int index, double theta_base) {
    const int dim = static_cast<int>(x.size());
    if (dim % 2 != 0) throw ConfigError("apply_rope: dim must be even");
    if (!(theta_base > 0.0)) throw ConfigError("apply_rope: theta_base must be positive");
    std::vector<double> out(x.size());
    for (int i = 0; i < dim / 2; ++i) {
        const double ang = index * std::pow(theta_base, -2.0 * i / dim);
        const double c   = std::cos(ang);
        const double s   = std::sin(ang);
        out[2 * i]       = x[2 * i] * c - x[2 * i + 1] * s;
        out[2 * i + 1]   = x[2 * i] * s + x[2 * i + 1] * c;
    }
    return out;
}

std::vector<int> video_position_indices(const SequenceLayout& layout) {
    layout.validate();
    std::vector<int> idx(static_cast<size_t>(layout.video_rows()));
    for (int m = 1; m <= layout.video_rows(); ++m) {
        idx[static_cast<size_t>(m - 1)] = position_index(m, layout.video_len);
    }
    return idx;
}

Tensor sinusoidal_rows(const std::vector<int>& indices, int dim) {
    std::vector<double> data;
    data.reserve(indices.size() * static_cast<size_t>(dim));
    for (int idx : indices) {
        auto row = sinusoidal_pe(static_cast<double>(idx), dim);
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor::from_data({static_cast<int>(indices.size()), dim}, std::move(data));
}

Tensor embed_video_tokens_any(const Tensor& x, const PositionalScheme& scheme,
                              const DomainEmbedding& d, const SequenceLayout& layout) {
    layout.validate();
    scheme.validate();
    if (scheme.dim != layout.dim) {
        throw ConfigError("embed_video_tokens: scheme/layout dim mismatch");
    }
    if (x.rows() != layout.video_rows() || x.cols() != layout.dim) {
        throw ConfigError("embed_video_tokens: token matrix does not match layout");
    }
    Tensor out = x;
    if (scheme.kind == PositionalKind::AbsoluteSinusoidal) {
        out = add(out, sinusoidal_rows(video_position_indices(layout), layout.dim));
    }
    if (layout.doubled) {
        if (d.dim() != layout.dim) {
            throw ConfigError("embed_video_tokens: domain embedding dim mismatch");
        }
        out = add_to_rows(out, d.vector.tensor, layout.video_len, 2 * layout.video_len);
    }
    return out;
}

Tensor embed_video_tokens(const Tensor& x, const PositionalScheme& scheme,
                          const DomainEmbedding& d, const SequenceLayout& layout) {
    if (!layout.doubled) {
        throw ConfigError("embed_video_tokens: layout must be doubled");
    }
    return embed_video_tokens_any(x, scheme, d, layout);
}

}  // namespace rgbadit
