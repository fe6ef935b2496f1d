#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "rgbadit/attention.hpp"
#include "testutil.hpp"

using namespace rgbadit;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Harness {
    SequenceLayout lay;
    PositionalScheme scheme;
    AttentionWeights weights;
    LoraSet lora;
    DomainEmbedding d;
    Tensor text, video;

    Harness(int lt, int l, int dim, int heads, PositionalKind kind, uint64_t seed, int rank = 2)
        : lay{lt, l, dim, true},
          scheme{kind, 10000.0, dim} {
        Rng rng(seed);
        weights = AttentionWeights("attn", dim, heads, rng);
        lora    = LoraSet("lora", dim, rank, 1.0, rng);
        d       = DomainEmbedding(dim);
        text    = Tensor::randn({lt, dim}, rng);
        video   = Tensor::randn({2 * l, dim}, rng);
    }
};
}  // namespace

TEST_CASE("build_mask places -inf exactly where the method demands") {
    SequenceLayout lay{2, 3, 8, true};  // rows 1..8: text 1-2, rgb 3-5, alpha 6-8

    const MaskSpec ours = build_mask(lay, MaskMode::TextToAlphaBlocked);
    int ninf            = 0;
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
            const bool blocked = ours.additive.at(i, j) == -kInf;
            if (blocked) ++ninf;
            const bool expect = i < 2 && j >= 5;  // text query, alpha key
            CHECK(blocked == expect);
        }
    }
    CHECK(ninf == 2 * 3);  // L_text * L

    const MaskSpec blackout = build_mask(lay, MaskMode::AllAlphaKeysBlocked);
    int n2                  = 0;
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
            if (blackout.additive.at(i, j) == -kInf) {
                ++n2;
                CHECK(i < 5);
                CHECK(j >= 5);
            }
        }
    }
    CHECK(n2 == 15);  // (L_text + L) * L by enumeration

    const MaskSpec open = build_mask(lay, MaskMode::Unmasked);
    for (int64_t i = 0; i < open.additive.size(); ++i) CHECK(open.additive.at(i) == 0.0);
}

TEST_CASE("build_mask rejects alpha modes on undoubled layouts") {
    SequenceLayout lay{2, 3, 8, false};
    CHECK_THROWS_AS(build_mask(lay, MaskMode::TextToAlphaBlocked), ConfigError);
    CHECK_NOTHROW(build_mask(lay, MaskMode::Unmasked));
}

TEST_CASE("lora starts as an exact no-op: zero up factor, bitwise") {
    Harness h(2, 4, 12, 3, PositionalKind::AbsoluteSinusoidal, 11);
    auto with = project_qkv(h.text, h.video, h.weights, h.lora, h.scheme, h.d, h.lay);

    Tensor embedded = embed_video_tokens(h.video, h.scheme, h.d, h.lay);
    Tensor all      = concat_rows({h.text, embedded});
    auto without    = project_tokens(all, h.weights, nullptr, h.scheme, h.lay);

    CHECK(testutil::bitwise_equal(with.q, without.q));
    CHECK(testutil::bitwise_equal(with.k, without.k));
    CHECK(testutil::bitwise_equal(with.v, without.v));
}

TEST_CASE("adapter perturbations leave text and RGB projection rows bitwise unchanged") {
    Harness h(2, 4, 12, 3, PositionalKind::Rope, 12);
    auto base = project_qkv(h.text, h.video, h.weights, h.lora, h.scheme, h.d, h.lay);

    Rng rng(13);
    for (auto* p : h.lora.parameters()) {
        for (auto& v : p->tensor.raw()) v = rng.normal() * 0.2;
    }
    auto bumped = project_qkv(h.text, h.video, h.weights, h.lora, h.scheme, h.d, h.lay);

    const int keep = h.lay.text_len + h.lay.video_len;
    bool alpha_changed = false;
    for (int i = 0; i < h.lay.total(); ++i) {
        for (int c = 0; c < h.lay.dim; ++c) {
            if (i < keep) {
                CHECK(base.q.at(i, c) == bumped.q.at(i, c));
                CHECK(base.k.at(i, c) == bumped.k.at(i, c));
                CHECK(base.v.at(i, c) == bumped.v.at(i, c));
            } else if (base.q.at(i, c) != bumped.q.at(i, c)) {
                alpha_changed = true;
            }
        }
    }
    CHECK(alpha_changed);
}

TEST_CASE("gamma scales the adapter residual linearly") {
    Harness h(1, 3, 8, 2, PositionalKind::AbsoluteSinusoidal, 14);
    Rng rng(15);
    for (auto* p : h.lora.parameters()) {
        for (auto& v : p->tensor.raw()) v = rng.normal() * 0.3;
    }
    LoraSet& l1 = h.lora;

    auto base_proj = [&] {
        Tensor embedded = embed_video_tokens(h.video, h.scheme, h.d, h.lay);
        Tensor all      = concat_rows({h.text, embedded});
        return project_tokens(all, h.weights, nullptr, h.scheme, h.lay);
    }();

    l1.q.gamma = l1.k.gamma = l1.v.gamma = 1.0;
    auto g1 = project_qkv(h.text, h.video, h.weights, l1, h.scheme, h.d, h.lay);
    l1.q.gamma = l1.k.gamma = l1.v.gamma = 2.0;
    auto g2 = project_qkv(h.text, h.video, h.weights, l1, h.scheme, h.d, h.lay);

    for (int i = h.lay.alpha_begin(); i < h.lay.total(); ++i) {
        for (int c = 0; c < h.lay.dim; ++c) {
            const double r1 = g1.q.at(i, c) - base_proj.q.at(i, c);
            const double r2 = g2.q.at(i, c) - base_proj.q.at(i, c);
            CHECK(std::fabs(r2 - 2.0 * r1) <= 1e-12);
        }
    }
}

TEST_CASE("adapter rank >= dim is a configuration error") {
    Rng rng(16);
    CHECK_THROWS_AS(LoraAdapter("x", 8, 8, 1.0, 'q', rng), ConfigError);
    CHECK_THROWS_AS(LoraAdapter("x", 8, 9, 1.0, 'q', rng), ConfigError);
    CHECK_NOTHROW(LoraAdapter("x", 8, 7, 1.0, 'q', rng));
}

TEST_CASE("single token, single head: attention output is V row through the output map") {
    Rng rng(17);
    AttentionWeights w("attn", 6, 1, rng);
    SequenceLayout lay{0, 1, 6, false};
    Tensor q = Tensor::randn({1, 6}, rng), k = Tensor::randn({1, 6}, rng),
           v = Tensor::randn({1, 6}, rng);
    Tensor out    = grouped_attention(q, k, v, build_mask(lay, MaskMode::Unmasked), w);
    Tensor expect = matmul(v, w.wo.tensor);
    CHECK(testutil::max_abs_diff(out, expect) == 0.0);
}

TEST_CASE("post-softmax text-to-alpha weights are exactly zero under the method mask") {
    Rng rng(18);
    for (int trial = 0; trial < 10; ++trial) {
        const int lt = rng.uniform_int(1, 3), l = rng.uniform_int(2, 5);
        const int dim = 8, heads = 2;
        Harness h(lt, l, dim, heads, PositionalKind::Rope, 100 + trial);
        auto pr = project_qkv(h.text, h.video, h.weights, h.lora, h.scheme, h.d, h.lay);
        AttentionProbe probe;
        grouped_attention(pr.q, pr.k, pr.v, build_mask(h.lay, MaskMode::TextToAlphaBlocked),
                          h.weights, &probe);
        REQUIRE(probe.head_weights.size() == static_cast<size_t>(heads));
        for (const auto& w : probe.head_weights) {
            for (int i = 0; i < lt; ++i) {
                for (int j = h.lay.alpha_begin(); j < h.lay.total(); ++j) {
                    CHECK(w.at(i, j) == 0.0);
                }
            }
        }
    }
}

TEST_CASE("grouped_attention matches the naive per-row oracle") {
    Rng rng(19);
    for (int trial = 0; trial < 40; ++trial) {
        const int heads = rng.uniform_int(1, 4);
        const int dh    = rng.uniform_int(1, 4);
        const int dim   = heads * dh;
        const int s     = rng.uniform_int(1, 16);
        Tensor q = Tensor::randn({s, dim}, rng), k = Tensor::randn({s, dim}, rng),
               v = Tensor::randn({s, dim}, rng);
        AttentionWeights w("attn", dim, heads, rng);

        // random mask with at least one open key per row
        std::vector<double> m(static_cast<size_t>(s) * s, 0.0);
        for (int i = 0; i < s; ++i) {
            for (int j = 0; j < s; ++j) {
                if (rng.uniform() < 0.3) m[static_cast<size_t>(i) * s + j] = -kInf;
            }
            m[static_cast<size_t>(i) * s + rng.uniform_int(0, s - 1)] = 0.0;
        }
        MaskSpec mask{SequenceLayout{0, s, dim, false}, MaskMode::Unmasked,
                      Tensor::from_data({s, s}, m)};

        Tensor out        = grouped_attention(q, k, v, mask, w);
        const auto oracle = testutil::naive_grouped_attention(q.raw(), k.raw(), v.raw(), m, s,
                                                              dim, heads, w.wo.tensor.raw());
        CHECK(testutil::max_abs_diff(out.raw(), oracle) <= 1e-12);
    }
}

TEST_CASE("truncated equivalence: alpha-key blackout preserves the base rows") {
    for (uint64_t seed : {21, 22, 23}) {
        Harness h(2, 4, 12, 3, seed % 2 == 0 ? PositionalKind::Rope
                                             : PositionalKind::AbsoluteSinusoidal,
                  seed);
        const double diff = truncated_equivalence_check(h.text, h.video, h.weights, h.lora,
                                                        h.scheme, h.d, h.lay,
                                                        MaskMode::AllAlphaKeysBlocked);
        CHECK(diff <= 1e-12);
    }
}

TEST_CASE("truncated equivalence: the method mask lets alpha tokens move RGB rows") {
    Harness h(2, 4, 12, 3, PositionalKind::AbsoluteSinusoidal, 24);
    const double diff = truncated_equivalence_check(h.text, h.video, h.weights, h.lora, h.scheme,
                                                    h.d, h.lay, MaskMode::TextToAlphaBlocked);
    CHECK(diff > 1e-6);  // RGB-attend-to-alpha is active, keys differ
}

TEST_CASE("truncated equivalence: text rows stay put when alpha duplicates RGB") {
    Harness h(2, 4, 12, 3, PositionalKind::AbsoluteSinusoidal, 25);
    // duplicate the halves so alpha tokens carry the RGB content
    Rng rng(26);
    Tensor half = Tensor::randn({4, 12}, rng);
    Tensor vid  = concat_rows({half, half});

    auto ext = project_qkv(h.text, vid, h.weights, h.lora, h.scheme, h.d, h.lay);
    Tensor ext_out = grouped_attention(ext.q, ext.k, ext.v,
                                       build_mask(h.lay, MaskMode::TextToAlphaBlocked), h.weights);

    SequenceLayout base_lay = h.lay;
    base_lay.doubled        = false;
    auto base = project_qkv(h.text, half, h.weights, h.lora, h.scheme, h.d, base_lay);
    Tensor base_out = grouped_attention(base.q, base.k, base.v,
                                        build_mask(base_lay, MaskMode::Unmasked), h.weights);

    // text queries cannot see alpha keys, so their rows match the base run
    for (int i = 0; i < h.lay.text_len; ++i) {
        for (int c = 0; c < h.lay.dim; ++c) {
            CHECK(std::fabs(ext_out.at(i, c) - base_out.at(i, c)) <= 1e-12);
        }
    }
}

TEST_CASE("P3: losses on text+RGB rows give zero gradient to adapters under the blackout mask") {
    Harness h(2, 3, 8, 2, PositionalKind::Rope, 27);
    Rng rng(28);
    for (auto* p : h.lora.parameters()) {
        for (auto& v : p->tensor.raw()) v = rng.normal() * 0.2;
        p->set_trainable(true);
        p->tensor.zero_grad();
    }
    auto pr = project_qkv(h.text, h.video, h.weights, h.lora, h.scheme, h.d, h.lay);
    Tensor out = grouped_attention(pr.q, pr.k, pr.v,
                                   build_mask(h.lay, MaskMode::AllAlphaKeysBlocked), h.weights);
    Tensor restricted = slice_rows(out, 0, h.lay.text_len + h.lay.video_len);
    backward(sum(mul(restricted, Tensor::randn(restricted.shape(), rng))));
    for (auto* p : h.lora.parameters()) {
        for (double g : p->tensor.grad()) CHECK(g == 0.0);
    }
}

TEST_CASE("attention weight gradients flow and agree with finite differences") {
    Rng rng(29);
    const int s = 5, dim = 6;
    AttentionWeights w("attn", dim, 2, rng);
    Tensor x     = Tensor::randn({s, dim}, rng);
    Tensor probe = Tensor::randn({s, dim}, rng);
    SequenceLayout lay{0, s, dim, false};
    const MaskSpec mask = build_mask(lay, MaskMode::Unmasked);
    auto f = [&] {
        Tensor q = matmul(x, w.wq.tensor);
        Tensor k = matmul(x, w.wk.tensor);
        Tensor v = matmul(x, w.wv.tensor);
        return sum(mul(grouped_attention(q, k, v, mask, w), probe));
    };
    CHECK(finite_diff_check(f, {&w.wq, &w.wk, &w.wv, &w.wo}, 1e-6) <= 1e-5);
}
