#include "rgbadit/model.hpp"

#include <cmath>

namespace rgbadit {

namespace {
constexpr double kTimeScale = 1000.0;
}

void DiTConfig::validate() const {
    if (depth < 0) throw ConfigError("config: depth must be >= 0");
    if (dim <= 0 || heads <= 0 || dim % heads != 0) {
        throw ConfigError("config: dim must be positive and divisible by heads");
    }
    if (ffn_mult <= 0) throw ConfigError("config: ffn_mult must be positive");
    if (patch <= 0 || height % patch != 0 || width % patch != 0) {
        throw ConfigError("config: height and width must be divisible by patch");
    }
    if (frames <= 0) throw ConfigError("config: frames must be positive");
    if (cond_tokens <= 0) throw ConfigError("config: cond_tokens must be positive");
    if (num_classes <= 0) throw ConfigError("config: num_classes must be positive");
    if (time_embed_dim != 0 && time_embed_dim != dim) {
        throw ConfigError("config: time_embed_dim must equal dim (tokens are summed)");
    }
    if (dim % 2 != 0) throw ConfigError("config: dim must be even for positional encodings");
}

const char* joint_design_name(JointDesign d) {
    switch (d) {
        case JointDesign::SequenceExtension: return "sequence_extension";
        case JointDesign::BatchExtension: return "batch_extension";
        case JointDesign::LatentDimExtension: return "latent_dim_extension";
    }
    return "?";
}

JointDesign joint_design_from_name(const std::string& name) {
    if (name == "sequence_extension") return JointDesign::SequenceExtension;
    if (name == "batch_extension") return JointDesign::BatchExtension;
    if (name == "latent_dim_extension") return JointDesign::LatentDimExtension;
    throw ConfigError("unknown joint design: " + name);
}

Tensor time_embedding(double t, int dim) {
    if (!std::isfinite(t)) throw ContractError("time_embedding: t must be finite");
    return Tensor::from_data({dim}, sinusoidal_pe(t * kTimeScale, dim));
}

namespace {

Parameter init_linear(const std::string& name, int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return Parameter(name, Tensor::rand_uniform({in, out}, rng, -bound, bound));
}

LayerNormParams init_ln(const std::string& prefix, int dim) {
    return LayerNormParams{Parameter(prefix + ".gain", Tensor::full({dim}, 1.0)),
                           Parameter(prefix + ".bias", Tensor::zeros({dim}))};
}

}  // namespace

DiTModel DiTModel::create_base(const DiTConfig& cfg, const PositionalScheme& scheme, Rng& rng) {
    cfg.validate();
    PositionalScheme sch = scheme;
    sch.dim              = cfg.dim;
    sch.validate();

    DiTModel m;
    m.cfg    = cfg;
    m.scheme = sch;
    const int d  = cfg.dim;
    const int dp = cfg.patch_dim();

    m.patch_w = init_linear("patch.w", dp, d, rng);
    m.patch_b = Parameter("patch.b", Tensor::zeros({d}));
    const double cb = 1.0 / std::sqrt(static_cast<double>(d));
    m.cond_table    = Parameter(
        "cond.table", Tensor::rand_uniform({cfg.num_classes * cfg.cond_tokens, d}, rng, -cb, cb));
    for (int b = 0; b < cfg.depth; ++b) {
        const std::string pre = "blocks." + std::to_string(b);
        DiTBlock blk;
        blk.ln1  = init_ln(pre + ".ln1", d);
        blk.ln2  = init_ln(pre + ".ln2", d);
        blk.attn = AttentionWeights(pre + ".attn", d, cfg.heads, rng);
        blk.ffn  = FfnWeights{init_linear(pre + ".ffn.w1", d, cfg.ffn_mult * d, rng),
                              Parameter(pre + ".ffn.b1", Tensor::zeros({cfg.ffn_mult * d})),
                              init_linear(pre + ".ffn.w2", cfg.ffn_mult * d, d, rng),
                              Parameter(pre + ".ffn.b2", Tensor::zeros({d}))};
        m.blocks.push_back(std::move(blk));
    }
    m.final_ln = init_ln("final_ln", d);
    m.out_w    = init_linear("out.w", d, dp, rng);
    m.out_b    = Parameter("out.b", Tensor::zeros({dp}));
    m.domain   = DomainEmbedding(d);
    return m;
}

void DiTModel::attach_sequence_adapters(int rank, double gamma, Rng& rng) {
    int r = rank;
    if (r >= cfg.dim) {
        r = cfg.dim / 2;
        log_warn("lora rank " + std::to_string(rank) + " >= dim " + std::to_string(cfg.dim) +
                 ", clamped to " + std::to_string(r));
    }
    lora_rank  = r;
    lora_gamma = gamma;
    for (size_t b = 0; b < blocks.size(); ++b) {
        blocks[b].lora.emplace("lora." + std::to_string(b), cfg.dim, r, gamma, rng);
    }
    design = JointDesign::SequenceExtension;
}

void DiTModel::attach_batch_comm(Rng& rng) {
    comm.emplace("comm", cfg.dim, cfg.heads, rng, /*zero_output=*/true);
    design = JointDesign::BatchExtension;
}

void DiTModel::attach_latent_maps() {
    const int dp  = cfg.patch_dim();
    const int din = 2 * dp;
    // stacked identity/zero blocks: unmerge(merge(x)) == x whenever 2*Dp <= D
    std::vector<double> mw(static_cast<size_t>(din) * cfg.dim, 0.0);
    std::vector<double> uw(static_cast<size_t>(cfg.dim) * din, 0.0);
    for (int i = 0; i < std::min(din, cfg.dim); ++i) {
        mw[static_cast<size_t>(i) * cfg.dim + i] = 1.0;
        uw[static_cast<size_t>(i) * din + i]     = 1.0;
    }
    latent.emplace(LatentMaps{
        Parameter("merge.w", Tensor::from_data({din, cfg.dim}, std::move(mw))),
        Parameter("merge.b", Tensor::zeros({cfg.dim})),
        Parameter("unmerge.w", Tensor::from_data({cfg.dim, din}, std::move(uw))),
        Parameter("unmerge.b", Tensor::zeros({din}))});
    design = JointDesign::LatentDimExtension;
}

std::vector<Parameter*> DiTModel::base_parameters() {
    std::vector<Parameter*> ps{&patch_w, &patch_b, &cond_table};
    for (auto& b : blocks) {
        ps.push_back(&b.ln1.gain);
        ps.push_back(&b.ln1.bias);
        for (auto* p : b.attn.parameters()) ps.push_back(p);
        ps.push_back(&b.ln2.gain);
        ps.push_back(&b.ln2.bias);
        ps.push_back(&b.ffn.w1);
        ps.push_back(&b.ffn.b1);
        ps.push_back(&b.ffn.w2);
        ps.push_back(&b.ffn.b2);
    }
    ps.push_back(&final_ln.gain);
    ps.push_back(&final_ln.bias);
    ps.push_back(&out_w);
    ps.push_back(&out_b);
    return ps;
}

std::vector<Parameter*> DiTModel::parameters() {
    auto ps = base_parameters();
    ps.push_back(&domain.vector);
    for (auto& b : blocks) {
        if (b.lora) {
            for (auto* p : b.lora->parameters()) ps.push_back(p);
        }
    }
    if (comm) {
        for (auto* p : comm->parameters()) ps.push_back(p);
    }
    if (latent) {
        ps.push_back(&latent->merge_w);
        ps.push_back(&latent->merge_b);
        ps.push_back(&latent->unmerge_w);
        ps.push_back(&latent->unmerge_b);
    }
    return ps;
}

std::vector<const Parameter*> DiTModel::parameters() const {
    auto ps = const_cast<DiTModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

std::vector<const Parameter*> DiTModel::base_parameters() const {
    auto ps = const_cast<DiTModel*>(this)->base_parameters();
    return {ps.begin(), ps.end()};
}

std::vector<Parameter*> DiTModel::trainable_parameters() {
    std::vector<Parameter*> out;
    for (auto* p : parameters()) {
        if (p->trainable) out.push_back(p);
    }
    return out;
}

int64_t DiTModel::trainable_count() const {
    int64_t n = 0;
    for (const auto* p : parameters()) {
        if (p->trainable) n += p->size();
    }
    return n;
}

void DiTModel::set_pretrain_regime() {
    finetune_regime = false;
    for (auto* p : parameters()) p->set_trainable(true);
}

void DiTModel::set_finetune_regime() {
    finetune_regime = true;
    for (auto* p : base_parameters()) p->set_trainable(false);
    switch (design) {
        case JointDesign::SequenceExtension:
            domain.vector.set_trainable(true);
            for (auto& b : blocks) {
                if (!b.lora) throw ConfigError("finetune: sequence adapters not attached");
                for (auto* p : b.lora->parameters()) p->set_trainable(true);
            }
            break;
        case JointDesign::BatchExtension:
            if (!comm) throw ConfigError("finetune: communication module not attached");
            domain.vector.set_trainable(true);
            for (auto* p : comm->parameters()) p->set_trainable(true);
            break;
        case JointDesign::LatentDimExtension:
            if (!latent) throw ConfigError("finetune: latent merge maps not attached");
            domain.vector.set_trainable(false);
            latent->merge_w.set_trainable(true);
            latent->merge_b.set_trainable(true);
            latent->unmerge_w.set_trainable(true);
            latent->unmerge_b.set_trainable(true);
            break;
    }
}

SequenceLayout DiTModel::layout(bool doubled) const {
    return SequenceLayout{cfg.cond_tokens, cfg.video_tokens(), cfg.dim, doubled};
}

Tensor DiTModel::input_stage(const Tensor& noisy_video, double t, int cond_id,
                             const SequenceLayout& lay) const {
    if (cond_id < 0 || cond_id >= cfg.num_classes) {
        throw DataError("unknown condition id " + std::to_string(cond_id));
    }
    Tensor vt = add_rowvec(matmul(noisy_video, patch_w.tensor), patch_b.tensor);
    vt        = embed_video_tokens_any(vt, scheme, domain, lay);
    Tensor text =
        slice_rows(cond_table.tensor, cond_id * cfg.cond_tokens, (cond_id + 1) * cfg.cond_tokens);
    Tensor tok = concat_rows({text, vt});
    return add_rowvec(tok, time_embedding(t, cfg.dim));
}

Tensor DiTModel::run_blocks(Tensor tok, const SequenceLayout& lay, const MaskSpec& mask,
                            bool use_lora, ForwardTrace* trace) const {
    for (const auto& blk : blocks) {
        Tensor a_in = layer_norm(tok, blk.ln1.gain.tensor, blk.ln1.bias.tensor, 1e-5);
        const LoraSet* lora = use_lora && blk.lora ? &*blk.lora : nullptr;
        auto pr             = project_tokens(a_in, blk.attn, lora, scheme, lay);
        AttentionProbe* probe = nullptr;
        if (trace != nullptr && trace->probe_weights) probe = &trace->probes.emplace_back();
        Tensor att = grouped_attention(pr.q, pr.k, pr.v, mask, blk.attn, probe);
        if (trace != nullptr) trace->attn_outputs.push_back(att);
        tok = add(tok, att);
        Tensor f_in = layer_norm(tok, blk.ln2.gain.tensor, blk.ln2.bias.tensor, 1e-5);
        Tensor f    = add_rowvec(
            matmul(gelu(add_rowvec(matmul(f_in, blk.ffn.w1.tensor), blk.ffn.b1.tensor)),
                      blk.ffn.w2.tensor),
            blk.ffn.b2.tensor);
        tok = add(tok, f);
        if (trace != nullptr) trace->block_outputs.push_back(tok);
    }
    return tok;
}

Tensor DiTModel::forward_sequence(const Tensor& noisy, double t, int cond_id, MaskMode mode,
                                  bool doubled, ForwardTrace* trace) const {
    const SequenceLayout lay = layout(doubled);
    Tensor tok               = input_stage(noisy, t, cond_id, lay);
    const MaskSpec mask      = build_mask(lay, mode);
    tok                      = run_blocks(std::move(tok), lay, mask, doubled, trace);
    Tensor h  = layer_norm(tok, final_ln.gain.tensor, final_ln.bias.tensor, 1e-5);
    Tensor hv = slice_rows(h, lay.text_len, lay.total());
    return add_rowvec(matmul(hv, out_w.tensor), out_b.tensor);
}

Tensor DiTModel::forward_batch_ext(const Tensor& noisy, double t, int cond_id,
                                   ForwardTrace* trace) const {
    if (!comm) throw ConfigError("batch extension forward without communication module");
    const int L              = cfg.video_tokens();
    const SequenceLayout lay = layout(false);
    const MaskSpec mask      = build_mask(lay, MaskMode::Unmasked);

    Tensor xr = slice_rows(noisy, 0, L);
    Tensor xa = slice_rows(noisy, L, 2 * L);
    Tensor ta = input_stage(xr, t, cond_id, lay);
    Tensor tb = input_stage(xa, t, cond_id, lay);
    // the second stream carries the domain embedding so the two streams are
    // distinguishable once d trains away from zero
    tb = add_to_rows(tb, domain.vector.tensor, lay.text_len, lay.total());

    std::vector<int> pos(static_cast<size_t>(lay.total()), 0);
    {
        auto vid = video_position_indices(lay);
        std::copy(vid.begin(), vid.end(), pos.begin() + lay.text_len);
    }
    auto cross = [&](const Tensor& from, const Tensor& into) {
        Tensor q = matmul(from, comm->wq.tensor);
        Tensor k = matmul(into, comm->wk.tensor);
        Tensor v = matmul(into, comm->wv.tensor);
        if (scheme.kind == PositionalKind::Rope) {
            q = rope_rotate(q, pos, scheme.theta_base);
            k = rope_rotate(k, pos, scheme.theta_base);
        }
        return grouped_attention(q, k, v, mask, *comm);
    };

    for (const auto& blk : blocks) {
        auto self_attn = [&](Tensor& tok) {
            Tensor a_in = layer_norm(tok, blk.ln1.gain.tensor, blk.ln1.bias.tensor, 1e-5);
            auto pr     = project_tokens(a_in, blk.attn, nullptr, scheme, lay);
            AttentionProbe* probe = nullptr;
            if (trace != nullptr && trace->probe_weights) probe = &trace->probes.emplace_back();
            Tensor att = grouped_attention(pr.q, pr.k, pr.v, mask, blk.attn, probe);
            if (trace != nullptr) trace->attn_outputs.push_back(att);
            tok = add(tok, att);
        };
        self_attn(ta);
        self_attn(tb);
        // exchange computed from pre-update states, shared weights both ways
        Tensor cab = cross(ta, tb);
        Tensor cba = cross(tb, ta);
        ta         = add(ta, cab);
        tb         = add(tb, cba);
        auto ffn = [&](Tensor& tok) {
            Tensor f_in = layer_norm(tok, blk.ln2.gain.tensor, blk.ln2.bias.tensor, 1e-5);
            Tensor f    = add_rowvec(
                matmul(gelu(add_rowvec(matmul(f_in, blk.ffn.w1.tensor), blk.ffn.b1.tensor)),
                          blk.ffn.w2.tensor),
                blk.ffn.b2.tensor);
            tok = add(tok, f);
        };
        ffn(ta);
        ffn(tb);
        if (trace != nullptr) {
            trace->block_outputs.push_back(ta);
            trace->block_outputs.push_back(tb);
        }
    }
    auto head = [&](const Tensor& tok) {
        Tensor h  = layer_norm(tok, final_ln.gain.tensor, final_ln.bias.tensor, 1e-5);
        Tensor hv = slice_rows(h, lay.text_len, lay.total());
        return add_rowvec(matmul(hv, out_w.tensor), out_b.tensor);
    };
    return concat_rows({head(ta), head(tb)});
}

Tensor DiTModel::forward_latent(const Tensor& noisy, double t, int cond_id,
                                ForwardTrace* trace) const {
    if (!latent) throw ConfigError("latent extension forward without merge maps");
    if (cond_id < 0 || cond_id >= cfg.num_classes) {
        throw DataError("unknown condition id " + std::to_string(cond_id));
    }
    const int L              = cfg.video_tokens();
    const int dp             = cfg.patch_dim();
    const SequenceLayout lay = layout(false);
    const MaskSpec mask      = build_mask(lay, MaskMode::Unmasked);

    Tensor merged_in = concat_cols({slice_rows(noisy, 0, L), slice_rows(noisy, L, 2 * L)});
    Tensor lat = add_rowvec(matmul(merged_in, latent->merge_w.tensor), latent->merge_b.tensor);
    lat        = embed_video_tokens_any(lat, scheme, domain, lay);
    Tensor text =
        slice_rows(cond_table.tensor, cond_id * cfg.cond_tokens, (cond_id + 1) * cfg.cond_tokens);
    Tensor tok = add_rowvec(concat_rows({text, lat}), time_embedding(t, cfg.dim));

    tok = run_blocks(std::move(tok), lay, mask, false, trace);

    Tensor h   = layer_norm(tok, final_ln.gain.tensor, final_ln.bias.tensor, 1e-5);
    Tensor hv  = slice_rows(h, lay.text_len, lay.total());
    Tensor out = add_rowvec(matmul(hv, latent->unmerge_w.tensor), latent->unmerge_b.tensor);
    return concat_rows({slice_cols(out, 0, dp), slice_cols(out, dp, 2 * dp)});
}

Tensor DiTModel::forward(const Tensor& noisy_tokens, double t, int cond_id, MaskMode mode,
                         ForwardTrace* trace) const {
    if (!std::isfinite(t)) throw ContractError("forward: t must be finite");
    const int L = cfg.video_tokens();
    if (noisy_tokens.ndim() != 2 || noisy_tokens.cols() != cfg.patch_dim() ||
        (noisy_tokens.rows() != L && noisy_tokens.rows() != 2 * L)) {
        throw ConfigError("forward: token layout does not match the configuration");
    }
    const bool doubled = noisy_tokens.rows() == 2 * L;
    if (!doubled) {
        return forward_sequence(noisy_tokens, t, cond_id, mode, false, trace);
    }
    switch (design) {
        case JointDesign::SequenceExtension:
            return forward_sequence(noisy_tokens, t, cond_id, mode, true, trace);
        case JointDesign::BatchExtension:
            return forward_batch_ext(noisy_tokens, t, cond_id, trace);
        case JointDesign::LatentDimExtension:
            return forward_latent(noisy_tokens, t, cond_id, trace);
    }
    throw ConfigError("forward: unknown design");
}

}  // namespace rgbadit
