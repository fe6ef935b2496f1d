#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rgbadit/dataset.hpp"
#include "rgbadit/embedding.hpp"
#include "rgbadit/image_io.hpp"
#include "testutil.hpp"

using namespace rgbadit;

TEST_CASE("synthesize_scene obeys the straight-alpha compositing identity") {
    for (int cond = 0; cond < kNumConditions; ++cond) {
        SceneSpec spec = SceneSpec::from_class(cond, 42 + static_cast<uint64_t>(cond));
        RgbaVideo v    = synthesize_scene(spec, 4, 16, 16);
        const auto bg  = scene_background(spec, 16, 16);
        bool saw_opaque = false, saw_clear = false;
        for (int f = 0; f < v.frames; ++f) {
            for (int y = 0; y < 16; ++y) {
                for (int x = 0; x < 16; ++x) {
                    const double a = v.at(f, y, x, 3);
                    CHECK(a >= 0.0);
                    CHECK(a <= 1.0);
                    for (int c = 0; c < 3; ++c) {
                        const double expect =
                            spec.fg_color[static_cast<size_t>(c)] * a +
                            bg[(static_cast<size_t>(y) * 16 + x) * 3 + c] * (1.0 - a);
                        CHECK(std::fabs(v.at(f, y, x, c) - expect) <= 1e-12);
                    }
                    if (a == 1.0) saw_opaque = true;
                    if (a == 0.0) saw_clear = true;
                }
            }
        }
        CHECK(saw_opaque);  // interior pixels carry pure fg color
        CHECK(saw_clear);   // background pixels carry pure background
    }
}

TEST_CASE("synthesize_scene is deterministic") {
    SceneSpec spec = SceneSpec::from_class(5, 77);
    RgbaVideo a    = synthesize_scene(spec, 6, 16, 16);
    RgbaVideo b    = synthesize_scene(spec, 6, 16, 16);
    CHECK(a.data == b.data);
}

TEST_CASE("a sprite that leaves the frame entirely is a spec error") {
    SceneSpec spec           = SceneSpec::from_class(0, 7);  // circle, translate
    spec.translate_override  = TranslateOverride{8.0, 8.0, 30.0, 0.0};
    CHECK_THROWS_AS(synthesize_scene(spec, 4, 16, 16), DataError);
}

TEST_CASE("refine_mask endpoints, identity parameters, monotonicity") {
    // endpoints
    const auto lo = refine_mask({0.0}, 1.1, 0.5);
    CHECK(lo[0] == 0.0);
    const auto hi = refine_mask({0.95}, 1.1, 0.5);  // 0.95 * 1.1 > 1 clamps to 1
    CHECK(hi[0] == 1.0);

    // gain=1, choke=0 is the identity up to the epsilon in the exponent
    for (double a : {0.1, 0.35, 0.5, 0.9}) {
        const auto r = refine_mask({a}, 1.0, 0.0);
        CHECK(std::fabs(r[0] - a) <= 1e-5);
    }

    // monotone over a dense grid for several parameter pairs
    for (double gain : {0.8, 1.0, 1.1, 1.5}) {
        for (double choke : {0.0, 0.3, 0.5, 0.9}) {
            double prev = -1.0;
            for (int i = 0; i <= 200; ++i) {
                const auto r = refine_mask({i / 200.0}, gain, choke);
                CHECK(r[0] >= prev);
                CHECK(r[0] >= 0.0);
                CHECK(r[0] <= 1.0);
                prev = r[0];
            }
        }
    }
}

TEST_CASE("color_decontaminate follows the printed formula") {
    // mask_refined == 0 everywhere: output is the input, bitwise
    {
        RgbaVideo v(1, 2, 2);
        std::vector<double> bg(12, 0.2);
        for (int y = 0; y < 2; ++y) {
            for (int x = 0; x < 2; ++x) {
                v.at(0, y, x, 0) = 0.7;
                v.at(0, y, x, 3) = 0.0;  // alpha 0 -> refined mask 0
            }
        }
        const auto before = v.data;
        color_decontaminate(v, bg);
        CHECK(v.data == before);
    }
    // mask_refined == 1 everywhere, as printed: output is the background
    {
        RgbaVideo v(1, 2, 2);
        std::vector<double> bg(12, 0.2);
        for (int y = 0; y < 2; ++y) {
            for (int x = 0; x < 2; ++x) {
                v.at(0, y, x, 0) = 0.7;
                v.at(0, y, x, 1) = 0.6;
                v.at(0, y, x, 2) = 0.5;
                v.at(0, y, x, 3) = 1.0;  // refined mask 1
            }
        }
        color_decontaminate(v, bg);
        for (int y = 0; y < 2; ++y) {
            for (int x = 0; x < 2; ++x) {
                for (int c = 0; c < 3; ++c) CHECK(v.at(0, y, x, c) == 0.2);
            }
        }
    }
    // scalar case: rgb=0.8, bg=0.2, refined mask 0.5 -> 0.5 as printed
    {
        RgbaVideo v(1, 1, 1);
        v.at(0, 0, 0, 0) = 0.8;
        v.at(0, 0, 0, 1) = 0.8;
        v.at(0, 0, 0, 2) = 0.8;
        // choose alpha so clamp(a*gain)^(1/(1-choke+eps)) == 0.5 with gain=1, choke=0
        v.at(0, 0, 0, 3) = std::pow(0.5, 1.0 + 1e-6);
        std::vector<double> bg(3, 0.2);
        color_decontaminate(v, bg, /*gain=*/1.0, /*choke=*/0.0);
        for (int c = 0; c < 3; ++c) CHECK(v.at(0, 0, 0, c) == doctest::Approx(0.5).epsilon(1e-9));
    }
    // inverted orientation keeps the foreground where the mask is high
    {
        RgbaVideo v(1, 1, 1);
        for (int c = 0; c < 3; ++c) v.at(0, 0, 0, c) = 0.8;
        v.at(0, 0, 0, 3) = 1.0;
        std::vector<double> bg(3, 0.2);
        color_decontaminate(v, bg, 1.1, 0.5, DecontaminateOrientation::Inverted);
        for (int c = 0; c < 3; ++c) CHECK(v.at(0, 0, 0, c) == 0.8);
    }
}

TEST_CASE("blur_background: constant first frame, alpha-1 pixels, static background") {
    SceneSpec spec = SceneSpec::from_class(1, 3);  // circle, spin (static support)
    RgbaVideo v    = synthesize_scene(spec, 5, 16, 16);

    // constant-color synthetic first frame stays unchanged under the blur
    {
        RgbaVideo flat(2, 8, 8);
        for (int f = 0; f < 2; ++f) {
            for (int y = 0; y < 8; ++y) {
                for (int x = 0; x < 8; ++x) {
                    flat.at(f, y, x, 0) = 0.3;
                    flat.at(f, y, x, 1) = 0.4;
                    flat.at(f, y, x, 2) = 0.5;
                    flat.at(f, y, x, 3) = 0.0;
                }
            }
        }
        RgbaVideo blurred = flat;
        blur_background(blurred, 201);  // clamps to 7 with a warning
        for (size_t i = 0; i < flat.data.size(); ++i) {
            CHECK(std::fabs(blurred.data[i] - flat.data[i]) <= 1e-12);
        }
    }

    RgbaVideo out = v;
    blur_background(out, 201);
    for (int f = 0; f < out.frames; ++f) {
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                if (v.at(f, y, x, 3) == 1.0) {
                    for (int c = 0; c < 3; ++c) {
                        CHECK(std::fabs(out.at(f, y, x, c) - v.at(f, y, x, c)) <= 1e-12);
                    }
                }
                if (v.at(f, y, x, 3) == 0.0 && v.at(0, y, x, 3) == 0.0) {
                    // alpha-0 region: the static blurred background shows through
                    for (int c = 0; c < 3; ++c) {
                        CHECK(std::fabs(out.at(f, y, x, c) - out.at(0, y, x, c)) <= 1e-12);
                    }
                }
            }
        }
    }
}

TEST_CASE("patchify round-trip is bitwise and the token count is F*(H/p)*(W/p)") {
    Rng rng(4);
    const int F = 3, H = 8, W = 12, P = 4;
    std::vector<double> plane(static_cast<size_t>(F) * H * W * 3);
    for (auto& x : plane) x = rng.uniform();
    Tensor toks = patchify(plane, F, H, W, P);
    CHECK(toks.rows() == F * (H / P) * (W / P));
    CHECK(toks.cols() == P * P * 3);
    CHECK(unpatchify(toks, F, H, W, P) == plane);

    CHECK_THROWS_AS(patchify(plane, F, H, W, 5), ConfigError);
}

TEST_CASE("alpha tokens replicate the channel and decode by averaging") {
    SceneSpec spec = SceneSpec::from_class(3, 9);
    RgbaVideo v    = synthesize_scene(spec, 2, 8, 8);
    Tensor rt      = rgb_tokens(v, 4);
    Tensor at      = alpha_tokens(v, 4);
    RgbaVideo back = decode_rgba(rt, at, 2, 8, 8, 4);
    for (size_t i = 0; i < v.data.size(); ++i) {
        CHECK(std::fabs(back.data[i] - v.data[i]) <= 1e-12);
    }
}

TEST_CASE("token scan order matches the shared positional index convention") {
    // token m of the RGB half and token m of the alpha half cover the same
    // (frame, row, col) patch, so the shared index of embedding applies
    const int F = 2, H = 8, W = 8, P = 4;
    const int L = F * (H / P) * (W / P);
    RgbaVideo v(F, H, W);
    // tag each patch with a distinct value in both rgb and alpha
    for (int f = 0; f < F; ++f) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const int patch_index =
                    f * (H / P) * (W / P) + (y / P) * (W / P) + (x / P);
                v.at(f, y, x, 0) = patch_index / 64.0;
                v.at(f, y, x, 3) = patch_index / 64.0;
            }
        }
    }
    Tensor rt = rgb_tokens(v, P);
    Tensor at = alpha_tokens(v, P);
    for (int m = 0; m < L; ++m) {
        CHECK(rt.at(m, 0) == at.at(m, 0));
        CHECK(rt.at(m, 0) == m / 64.0);
        // 1-based positions: alpha token (m+L+1) shares index (m+1)
        CHECK(position_index(m + 1 + L, L) == m + 1);
    }
}

TEST_CASE("PAM frames round-trip bit-exactly") {
    SceneSpec spec = SceneSpec::from_class(10, 123);
    RgbaVideo v    = synthesize_scene(spec, 3, 16, 16);
    const std::string dir = std::filesystem::temp_directory_path() / "rgbadit_pam_test";
    std::filesystem::create_directories(dir);
    write_video_frames(dir, v);
    RgbaVideo r = read_video_frames(dir, 3, 16, 16);

    // every stored sample equals the quantized original exactly
    for (size_t i = 0; i < v.data.size(); ++i) {
        CHECK(r.data[i] == dequantize16(quantize16(v.data[i])));
    }
    // a second write of the read-back video reproduces identical files
    const std::string dir2 = std::filesystem::temp_directory_path() / "rgbadit_pam_test2";
    std::filesystem::create_directories(dir2);
    write_video_frames(dir2, r);
    for (int f = 0; f < 3; ++f) {
        char a[32], b[32];
        std::snprintf(a, sizeof(a), "/frame_%03d.pam", f);
        std::snprintf(b, sizeof(b), "/frame_%03d.pam", f);
        CHECK(file_hash(dir + a) == file_hash(dir2 + b));
    }
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("malformed frame files raise ingestion errors naming the file") {
    const std::string dir = std::filesystem::temp_directory_path() / "rgbadit_bad_pam";
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/frame_000.pam";
    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        std::fputs("P6 not a pam\n", f);
        std::fclose(f);
    }
    try {
        read_pam(path);
        CHECK(false);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(path) != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}
