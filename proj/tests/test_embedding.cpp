#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rgbadit/embedding.hpp"
#include "testutil.hpp"

using namespace rgbadit;

TEST_CASE("position_index shares RGB indices with the alpha half") {
    CHECK(position_index(1, 128) == 1);
    CHECK(position_index(128, 128) == 128);
    CHECK(position_index(129, 128) == 1);  // first alpha token reuses the first RGB index
    CHECK(position_index(256, 128) == 128);
    CHECK_THROWS_AS(position_index(0, 128), IndexError);
    CHECK_THROWS_AS(position_index(257, 128), IndexError);
}

TEST_CASE("position_index maps the alpha range bijectively onto [1, L]") {
    const int L = 37;
    std::vector<bool> hit(static_cast<size_t>(L) + 1, false);
    for (int m = L + 1; m <= 2 * L; ++m) {
        const int p = position_index(m, L);
        CHECK(p >= 1);
        CHECK(p <= L);
        CHECK(!hit[static_cast<size_t>(p)]);
        hit[static_cast<size_t>(p)] = true;
    }
    for (int p = 1; p <= L; ++p) CHECK(hit[static_cast<size_t>(p)]);
}

TEST_CASE("sinusoidal_pe basics") {
    const auto z = sinusoidal_pe(0, 8);
    for (int i = 0; i < 4; ++i) {
        CHECK(z[static_cast<size_t>(2 * i)] == 0.0);
        CHECK(z[static_cast<size_t>(2 * i + 1)] == 1.0);
    }
    const auto p1 = sinusoidal_pe(1, 4);
    CHECK(p1[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
    CHECK(p1[1] == doctest::Approx(std::cos(1.0)).epsilon(1e-12));
    CHECK(p1[2] == doctest::Approx(std::sin(0.01)).epsilon(1e-12));
    CHECK(p1[3] == doctest::Approx(std::cos(0.01)).epsilon(1e-12));

    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto v = sinusoidal_pe(rng.uniform_int(0, 100000), 16);
        for (double x : v) {
            CHECK(x >= -1.0);
            CHECK(x <= 1.0);
        }
    }
    CHECK_THROWS_AS(sinusoidal_pe(1, 5), ConfigError);
}

TEST_CASE("apply_rope identity at index zero and norm preservation") {
    Rng rng(2);
    std::vector<double> x(16);
    for (auto& v : x) v = rng.normal();
    CHECK(apply_rope(x, 0, 10000.0) == x);

    for (int m : {1, 7, 123}) {
        const auto y = apply_rope(x, m, 10000.0);
        double nx = 0, ny = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            nx += x[i] * x[i];
            ny += y[i] * y[i];
        }
        CHECK(std::fabs(std::sqrt(nx) - std::sqrt(ny)) <= 1e-12);
    }
    CHECK_THROWS_AS(apply_rope(std::vector<double>(5, 1.0), 1, 10000.0), ConfigError);
}

TEST_CASE("rope attention scores depend only on relative position") {
    Rng rng(3);
    std::vector<double> q(12), k(12);
    for (auto& v : q) v = rng.normal();
    for (auto& v : k) v = rng.normal();
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    for (int trial = 0; trial < 10; ++trial) {
        const int m = rng.uniform_int(0, 50), n = rng.uniform_int(0, 50),
                  s = rng.uniform_int(1, 40);
        const double base    = dot(apply_rope(q, m, 10000.0), apply_rope(k, n, 10000.0));
        const double shifted = dot(apply_rope(q, m + s, 10000.0), apply_rope(k, n + s, 10000.0));
        CHECK(std::fabs(base - shifted) <= 1e-10);
    }
}

TEST_CASE("rope commutes with scalar scaling") {
    Rng rng(4);
    std::vector<double> x(8);
    for (auto& v : x) v = rng.normal();
    std::vector<double> sx(8);
    for (size_t i = 0; i < x.size(); ++i) sx[i] = 2.5 * x[i];
    const auto a = apply_rope(sx, 9, 10000.0);
    const auto b = apply_rope(x, 9, 10000.0);
    for (size_t i = 0; i < x.size(); ++i) CHECK(a[i] == doctest::Approx(2.5 * b[i]).epsilon(1e-13));
}

TEST_CASE("rope_rotate op agrees with the scalar reference") {
    Rng rng(5);
    Tensor x = Tensor::randn({3, 10}, rng);
    std::vector<int> pos{0, 4, 19};
    Tensor y = rope_rotate(x, pos, 500.0);
    for (int r = 0; r < 3; ++r) {
        std::vector<double> row(10);
        for (int c = 0; c < 10; ++c) row[static_cast<size_t>(c)] = x.at(r, c);
        const auto expect = apply_rope(row, pos[static_cast<size_t>(r)], 500.0);
        for (int c = 0; c < 10; ++c) {
            CHECK(y.at(r, c) == doctest::Approx(expect[static_cast<size_t>(c)]).epsilon(1e-14));
        }
    }
}

TEST_CASE("domain embedding starts exactly zero") {
    DomainEmbedding d(32);
    for (double v : d.vector.tensor.raw()) CHECK(v == 0.0);
    CHECK(d.vector.trainable);
}

TEST_CASE("embed_video_tokens: shared PE forces identical halves when d = 0") {
    Rng rng(6);
    const int L = 6, D = 8;
    SequenceLayout lay{2, L, D, true};
    PositionalScheme abs{PositionalKind::AbsoluteSinusoidal, 10000.0, D};
    DomainEmbedding d(D);

    Tensor half = Tensor::randn({L, D}, rng);
    Tensor x    = concat_rows({half, half});
    Tensor out  = embed_video_tokens(x, abs, d, lay);
    for (int m = 0; m < L; ++m) {
        for (int c = 0; c < D; ++c) CHECK(out.at(m, c) == out.at(L + m, c));
    }
}

TEST_CASE("embed_video_tokens: d touches only alpha rows, and exactly as +d") {
    Rng rng(7);
    const int L = 5, D = 6;
    SequenceLayout lay{1, L, D, true};
    PositionalScheme abs{PositionalKind::AbsoluteSinusoidal, 10000.0, D};

    Tensor half = Tensor::randn({L, D}, rng);
    Tensor x    = concat_rows({half, half});

    DomainEmbedding zero(D);
    Tensor base = embed_video_tokens(x, abs, zero, lay);

    DomainEmbedding d(D);
    for (int c = 0; c < D; ++c) d.vector.tensor.raw()[static_cast<size_t>(c)] = 0.01 * (c + 1);
    Tensor out = embed_video_tokens(x, abs, d, lay);

    for (int m = 0; m < L; ++m) {
        for (int c = 0; c < D; ++c) {
            CHECK(out.at(m, c) == base.at(m, c));  // RGB rows untouched
            CHECK(out.at(L + m, c) - out.at(m, c) ==
                  doctest::Approx(d.vector.tensor.at(c)).epsilon(1e-15));
        }
    }
}

TEST_CASE("embed_video_tokens under ROPE adds d only, no positional rows") {
    Rng rng(8);
    const int L = 4, D = 6;
    SequenceLayout lay{1, L, D, true};
    PositionalScheme rope{PositionalKind::Rope, 10000.0, D};
    DomainEmbedding d(D);
    Tensor x   = Tensor::randn({2 * L, D}, rng);
    Tensor out = embed_video_tokens(x, rope, d, lay);
    for (int m = 0; m < L; ++m) {
        for (int c = 0; c < D; ++c) CHECK(out.at(m, c) == x.at(m, c));
    }
}

TEST_CASE("embed_video_tokens validates layout and scheme") {
    Rng rng(9);
    SequenceLayout undoubled{2, 4, 8, false};
    PositionalScheme abs{PositionalKind::AbsoluteSinusoidal, 10000.0, 8};
    DomainEmbedding d(8);
    Tensor x = Tensor::randn({4, 8}, rng);
    CHECK_THROWS_AS(embed_video_tokens(x, abs, d, undoubled), ConfigError);

    SequenceLayout lay{2, 4, 8, true};
    PositionalScheme wrong{PositionalKind::AbsoluteSinusoidal, 10000.0, 16};
    Tensor x2 = Tensor::randn({8, 8}, rng);
    CHECK_THROWS_AS(embed_video_tokens(x2, wrong, d, lay), ConfigError);
}
