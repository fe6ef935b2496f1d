#include "rgbadit/attention.hpp"

#include <cmath>
#include <limits>

namespace rgbadit {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

const char* mask_mode_name(MaskMode mode) {
    switch (mode) {
        case MaskMode::TextToAlphaBlocked: return "text_to_alpha_blocked";
        case MaskMode::AllAlphaKeysBlocked: return "all_alpha_keys_blocked";
        case MaskMode::Unmasked: return "unmasked";
    }
    return "?";
}

MaskMode mask_mode_from_name(const std::string& name) {
    if (name == "text_to_alpha_blocked") return MaskMode::TextToAlphaBlocked;
    if (name == "all_alpha_keys_blocked") return MaskMode::AllAlphaKeysBlocked;
    if (name == "unmasked") return MaskMode::Unmasked;
    throw ConfigError("unknown mask mode: " + name);
}

MaskSpec build_mask(const SequenceLayout& layout, MaskMode mode) {
    layout.validate();
    if (!layout.doubled && mode != MaskMode::Unmasked) {
        throw ConfigError("build_mask: alpha-referencing mask mode on an undoubled layout");
    }
    const int s = layout.total();
    std::vector<double> m(static_cast<size_t>(s) * s, 0.0);
    if (layout.doubled && mode != MaskMode::Unmasked) {
        const int alpha0 = layout.alpha_begin();
        // row limit: text rows for the method mask, text+RGB rows for the
        // alpha-key blackout
        const int row_limit = mode == MaskMode::TextToAlphaBlocked ? layout.text_len : alpha0;
        for (int i = 0; i < row_limit; ++i) {
            double* row = m.data() + static_cast<size_t>(i) * s;
            for (int j = alpha0; j < s; ++j) row[j] = -kInf;
        }
    }
    return MaskSpec{layout, mode, Tensor::from_data({s, s}, std::move(m))};
}

LoraAdapter::LoraAdapter(const std::string& name_prefix, int dim, int r, double g, char tgt,
                         Rng& rng)
    : rank(r), gamma(g), target(tgt) {
    if (r <= 0) throw ConfigError("lora: rank must be positive");
    if (r >= dim) throw ConfigError("lora: rank must be smaller than the model dim");
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    down = Parameter(name_prefix + ".down", Tensor::rand_uniform({dim, r}, rng, -bound, bound));
    up   = Parameter(name_prefix + ".up", Tensor::zeros({r, dim}));
}

LoraSet::LoraSet(const std::string& name_prefix, int dim, int rank, double gamma, Rng& rng)
    : q(name_prefix + ".q", dim, rank, gamma, 'q', rng),
      k(name_prefix + ".k", dim, rank, gamma, 'k', rng),
      v(name_prefix + ".v", dim, rank, gamma, 'v', rng) {}

std::vector<Parameter*> LoraSet::parameters() {
    return {&q.down, &q.up, &k.down, &k.up, &v.down, &v.up};
}

AttentionWeights::AttentionWeights(const std::string& name_prefix, int dim, int h, Rng& rng,
                                   bool zero_output)
    : heads(h) {
    if (h <= 0 || dim % h != 0) throw ConfigError("attention: dim must divide into heads");
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    wq = Parameter(name_prefix + ".wq", Tensor::rand_uniform({dim, dim}, rng, -bound, bound));
    wk = Parameter(name_prefix + ".wk", Tensor::rand_uniform({dim, dim}, rng, -bound, bound));
    wv = Parameter(name_prefix + ".wv", Tensor::rand_uniform({dim, dim}, rng, -bound, bound));
    wo = zero_output
             ? Parameter(name_prefix + ".wo", Tensor::zeros({dim, dim}))
             : Parameter(name_prefix + ".wo", Tensor::rand_uniform({dim, dim}, rng, -bound, bound));
}

std::vector<Parameter*> AttentionWeights::parameters() {
    return {&wq, &wk, &wv, &wo};
}

namespace {

Tensor project_one(const Tensor& tokens, const Parameter& w, const LoraAdapter* adapter,
                   const SequenceLayout& layout) {
    Tensor out = matmul(tokens, w.tensor);
    if (adapter != nullptr && layout.doubled) {
        Tensor alpha_rows = slice_rows(tokens, layout.alpha_begin(), layout.total());
        Tensor residual =
            scale(matmul(matmul(alpha_rows, adapter->down.tensor), adapter->up.tensor),
                  adapter->gamma);
        out = add_block_rows(out, residual, layout.alpha_begin());
    }
    return out;
}

}  // namespace

ProjectionResult project_tokens(const Tensor& tokens, const AttentionWeights& weights,
                                const LoraSet* lora, const PositionalScheme& scheme,
                                const SequenceLayout& layout) {
    layout.validate();
    if (tokens.rows() != layout.total() || tokens.cols() != layout.dim) {
        throw ConfigError("project_tokens: token matrix does not match layout");
    }
    if (lora != nullptr && lora->q.rank >= layout.dim) {
        throw ConfigError("project_tokens: adapter rank >= model dim");
    }
    ProjectionResult res;
    res.q = project_one(tokens, weights.wq, lora ? &lora->q : nullptr, layout);
    res.k = project_one(tokens, weights.wk, lora ? &lora->k : nullptr, layout);
    res.v = project_one(tokens, weights.wv, lora ? &lora->v : nullptr, layout);
    if (scheme.kind == PositionalKind::Rope) {
        std::vector<int> pos(static_cast<size_t>(layout.total()), 0);  // text rows stay at 0
        auto vid = video_position_indices(layout);
        std::copy(vid.begin(), vid.end(), pos.begin() + layout.text_len);
        res.q = rope_rotate(res.q, pos, scheme.theta_base);
        res.k = rope_rotate(res.k, pos, scheme.theta_base);
    }
    return res;
}

ProjectionResult project_qkv(const Tensor& text_tokens, const Tensor& video_tokens,
                             const AttentionWeights& weights, const LoraSet& lora,
                             const PositionalScheme& scheme, const DomainEmbedding& d,
                             const SequenceLayout& layout) {
    if (layout.text_len > 0 &&
        (text_tokens.rows() != layout.text_len || text_tokens.cols() != layout.dim)) {
        throw ConfigError("project_qkv: text tokens do not match layout");
    }
    Tensor video = embed_video_tokens_any(video_tokens, scheme, d, layout);
    Tensor all   = layout.text_len > 0 ? concat_rows({text_tokens, video}) : video;
    return project_tokens(all, weights, layout.doubled ? &lora : nullptr, scheme, layout);
}

Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, const MaskSpec& mask,
                         const AttentionWeights& weights, AttentionProbe* probe) {
    const int s = q.rows(), dim = q.cols();
    if (k.rows() != s || v.rows() != s || k.cols() != dim || v.cols() != dim) {
        throw ShapeError("grouped_attention: q/k/v shapes disagree");
    }
    if (mask.additive.rows() != s || mask.additive.cols() != s) {
        throw ShapeError("grouped_attention: mask does not match sequence length");
    }
    const int heads = weights.heads;
    if (dim % heads != 0) throw ConfigError("grouped_attention: dim not divisible by heads");
    const int dh          = dim / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Tensor> head_out;
    head_out.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor logits = scale(matmul(qh, transpose(kh)), inv_sqrt);
        Tensor w      = softmax_masked(logits, mask.additive);
        if (probe != nullptr) {
            probe->head_weights.push_back(Tensor::from_data(w.shape(), w.raw()));
        }
        head_out.push_back(matmul(w, vh));
    }
    Tensor merged = heads == 1 ? head_out[0] : concat_cols(head_out);
    return matmul(merged, weights.wo.tensor);
}

double truncated_equivalence_check(const Tensor& text_tokens, const Tensor& video_tokens,
                                   const AttentionWeights& weights, const LoraSet& lora,
                                   const PositionalScheme& scheme, const DomainEmbedding& d,
                                   const SequenceLayout& layout, MaskMode mode) {
    if (!layout.doubled) {
        throw ConfigError("truncated_equivalence_check: layout must be doubled");
    }
    NoGradGuard ng;

    auto ext_proj = project_qkv(text_tokens, video_tokens, weights, lora, scheme, d, layout);
    Tensor ext = grouped_attention(ext_proj.q, ext_proj.k, ext_proj.v, build_mask(layout, mode),
                                   weights);

    SequenceLayout base_layout = layout;
    base_layout.doubled        = false;
    Tensor base_video          = slice_rows(video_tokens, 0, layout.video_len);
    auto base_proj = project_qkv(text_tokens, base_video, weights, lora, scheme, d, base_layout);
    Tensor base    = grouped_attention(base_proj.q, base_proj.k, base_proj.v,
                                       build_mask(base_layout, MaskMode::Unmasked), weights);

    const int keep = layout.text_len + layout.video_len;
    double worst   = 0.0;
    for (int i = 0; i < keep; ++i) {
        for (int j = 0; j < layout.dim; ++j) {
            worst = std::max(worst, std::fabs(ext.at(i, j) - base.at(i, j)));
        }
    }
    return worst;
}

}  // namespace rgbadit
