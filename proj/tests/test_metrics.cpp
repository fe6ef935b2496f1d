#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rgbadit/metrics.hpp"
#include "testutil.hpp"

using namespace rgbadit;

namespace {

// wrap-periodic smooth texture: integer toroidal shifts are exact translations
GrayImage periodic_texture(int h, int w, uint64_t seed, int shift_x = 0, int shift_y = 0) {
    Rng rng(seed);
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 8; ++i) {
        waves.push_back({static_cast<double>(rng.uniform_int(1, 5)),
                         static_cast<double>(rng.uniform_int(1, 5)),
                         rng.uniform(0.0, 6.283185307179586), rng.uniform(0.05, 0.12)});
    }
    GrayImage img(h, w);
    const double tau = 6.283185307179586;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = 0.5;
            for (const auto& wv : waves) {
                v += wv.amp * std::sin(tau * (wv.fx * (x - shift_x) / w +
                                              wv.fy * (y - shift_y) / h) +
                                       wv.phase);
            }
            img.at(y, x) = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

double interior_mean_dx(const FlowField& f, int margin) {
    double s  = 0.0;
    int count = 0;
    for (int y = margin; y < f.height - margin; ++y) {
        for (int x = margin; x < f.width - margin; ++x) {
            s += f.dx[static_cast<size_t>(y) * f.width + x];
            ++count;
        }
    }
    return s / count;
}

double interior_mean_dy(const FlowField& f, int margin) {
    double s  = 0.0;
    int count = 0;
    for (int y = margin; y < f.height - margin; ++y) {
        for (int x = margin; x < f.width - margin; ++x) {
            s += f.dy[static_cast<size_t>(y) * f.width + x];
            ++count;
        }
    }
    return s / count;
}

// band-limited analytic texture, evaluable at real coordinates so sprite
// content can translate continuously
struct Waves {
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> ws;
    Waves(uint64_t seed, int fmin, int fmax, double amp) {
        Rng rng(seed);
        for (int i = 0; i < 10; ++i) {
            ws.push_back({static_cast<double>(rng.uniform_int(fmin, fmax)),
                          static_cast<double>(rng.uniform_int(fmin, fmax)),
                          rng.uniform(0.0, 6.283185307179586), rng.uniform(amp * 0.5, amp)});
        }
    }
    double at(double u, double v) const {
        double x = 0.5;
        for (const auto& w : ws) {
            x += w.amp * std::sin(6.283185307179586 * (w.fx * u + w.fy * v) + w.phase);
        }
        return std::clamp(x, 0.02, 0.98);
    }
};

// textured disc sliding over a textured background; the alpha channel holds
// the disc coverage, optionally frozen at the frame-0 position
RgbaVideo sprite_video(int frames, int h, int w, double speed_x, double radius,
                       bool freeze_alpha) {
    Waves bg(11, 3, 10, 0.15), tex(22, 3, 10, 0.15);
    RgbaVideo v(frames, h, w);
    const double cy = h / 2.0, soft = 2.0;
    for (int f = 0; f < frames; ++f) {
        const double cx = radius + 6.0 + speed_x * f;
        const double ax = radius + 6.0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
                const double a = std::clamp((radius + soft / 2 - d) / soft, 0.0, 1.0);
                const double fg = 0.1 + 0.8 * tex.at((x - speed_x * f) / w,
                                                     static_cast<double>(y) / h);
                const double rgb =
                    fg * a + bg.at(static_cast<double>(x) / w, static_cast<double>(y) / h) *
                                 (1.0 - a);
                v.at(f, y, x, 0) = rgb;
                v.at(f, y, x, 1) = rgb;
                v.at(f, y, x, 2) = rgb;
                const double da =
                    freeze_alpha ? std::clamp((radius + soft / 2 -
                                               std::hypot(x + 0.5 - ax, y + 0.5 - cy)) /
                                                  soft,
                                              0.0, 1.0)
                                 : a;
                v.at(f, y, x, 3) = da;
            }
        }
    }
    return v;
}

const FlowParams kSpriteFlowParams{0.5, 1, 5, 3, 5, 1.1};

}  // namespace

TEST_CASE("grayscale conversion uses the 0.299/0.587/0.114 weights") {
    RgbaVideo v(1, 1, 3);
    v.at(0, 0, 0, 0) = 1.0;
    v.at(0, 0, 0, 1) = 1.0;
    v.at(0, 0, 0, 2) = 1.0;  // white
    v.at(0, 0, 1, 0) = 1.0;  // pure red
    v.at(0, 0, 2, 0) = 0.42;
    v.at(0, 0, 2, 1) = 0.42;
    v.at(0, 0, 2, 2) = 0.42;  // gray
    GrayImage g = to_grayscale(v, 0);
    CHECK(std::fabs(g.at(0, 0) - 1.0) <= 1e-12);
    CHECK(g.at(0, 1) == 0.299);
    CHECK(std::fabs(g.at(0, 2) - 0.42) <= 1e-12);
}

TEST_CASE("flow params are validated against the pyramid geometry") {
    FlowParams p;  // window 15, levels 3
    CHECK_NOTHROW(p.validate(64, 64));
    CHECK_THROWS_AS(p.validate(16, 16), ConfigError);  // coarsest level smaller than window
    FlowParams bad = p;
    bad.window     = 14;
    CHECK_THROWS_AS(bad.validate(64, 64), ConfigError);
    FlowParams small{0.5, 1, 5, 3, 5, 1.1};
    CHECK_NOTHROW(small.validate(16, 16));
}

TEST_CASE("identical frames give zero flow") {
    GrayImage img = periodic_texture(64, 64, 1);
    FlowField f   = farneback_flow(img, img, FlowParams{});
    for (size_t i = 0; i < f.dx.size(); ++i) {
        CHECK(std::fabs(f.dx[i]) <= 1e-6);
        CHECK(std::fabs(f.dy[i]) <= 1e-6);
    }
}

TEST_CASE("translation oracle: +2px shift is recovered within 0.5px on the interior") {
    GrayImage prev = periodic_texture(64, 64, 2);
    GrayImage next = periodic_texture(64, 64, 2, /*shift_x=*/2, /*shift_y=*/0);
    FlowField f    = farneback_flow(prev, next, FlowParams{});
    const double mdx = interior_mean_dx(f, 12);
    const double mdy = interior_mean_dy(f, 12);
    CHECK(std::fabs(mdx - 2.0) <= 0.5);
    CHECK(std::fabs(mdy - 0.0) <= 0.5);
}

TEST_CASE("forward and backward flows are approximately opposite") {
    GrayImage a   = periodic_texture(64, 64, 3);
    GrayImage b   = periodic_texture(64, 64, 3, 2, 1);
    FlowField fab = farneback_flow(a, b, FlowParams{});
    FlowField fba = farneback_flow(b, a, FlowParams{});
    const double sum_dx = interior_mean_dx(fab, 12) + interior_mean_dx(fba, 12);
    const double sum_dy = interior_mean_dy(fab, 12) + interior_mean_dy(fba, 12);
    CHECK(std::fabs(sum_dx) <= 0.5);
    CHECK(std::fabs(sum_dy) <= 0.5);
}

TEST_CASE("horizontal flip negates dx on the interior") {
    GrayImage a = periodic_texture(64, 64, 4);
    GrayImage b = periodic_texture(64, 64, 4, 2, 0);
    GrayImage fa(64, 64), fb(64, 64);
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            fa.at(y, x) = a.at(y, 63 - x);
            fb.at(y, x) = b.at(y, 63 - x);
        }
    }
    FlowField f  = farneback_flow(a, b, FlowParams{});
    FlowField ff = farneback_flow(fa, fb, FlowParams{});
    for (int y = 12; y < 52; ++y) {
        for (int x = 12; x < 52; ++x) {
            const double dx  = f.dx[static_cast<size_t>(y) * 64 + x];
            const double fdx = ff.dx[static_cast<size_t>(y) * 64 + (63 - x)];
            CHECK(std::fabs(dx + fdx) <= 1e-6);
        }
    }
}

TEST_CASE("flow_difference of a grayscale twin is zero") {
    // build the video from 8-bit-aligned gray values so the twin quantizes
    // to identical bytes
    RgbaVideo v(4, 64, 64);
    for (int f = 0; f < 4; ++f) {
        GrayImage frame = periodic_texture(64, 64, 5, f, 0);
        for (int y = 0; y < 64; ++y) {
            for (int x = 0; x < 64; ++x) {
                const double q  = std::round(frame.at(y, x) * 255.0) / 255.0;
                v.at(f, y, x, 0) = q;
                v.at(f, y, x, 1) = q;
                v.at(f, y, x, 2) = q;
                v.at(f, y, x, 3) = q;  // alpha equals the luma: a grayscale twin
            }
        }
    }
    const double d = flow_difference(rgb_as_video(v), alpha_as_video(v), FlowParams{});
    CHECK(d <= 1e-6);
}

TEST_CASE("flow_difference is symmetric in its arguments") {
    RgbaVideo v     = sprite_video(4, 64, 64, 1.5, true);
    const double ab = flow_difference(rgb_as_video(v), alpha_as_video(v), FlowParams{});
    const double ba = flow_difference(alpha_as_video(v), rgb_as_video(v), FlowParams{});
    CHECK(std::fabs(ab - ba) <= 1e-12);
    CHECK(ab >= 0.0);
}

TEST_CASE("flow_difference needs two frames") {
    RgbaVideo v = sprite_video(1, 64, 64, 1.0, false);
    CHECK_THROWS_AS(flow_difference(rgb_as_video(v), alpha_as_video(v), FlowParams{}), DataError);
}

TEST_CASE("aligned sprite motion scores far below a frozen-alpha misalignment") {
    RgbaVideo aligned = sprite_video(6, 64, 64, 1.5, false);
    RgbaVideo frozen  = sprite_video(6, 64, 64, 1.5, true);
    const double da =
        flow_difference(rgb_as_video(aligned), alpha_as_video(aligned), FlowParams{});
    const double df = flow_difference(rgb_as_video(frozen), alpha_as_video(frozen), FlowParams{});
    CHECK(da < df);

    // analytic expectation for the frozen pair: sprite speed over its support
    double support = 0.0;
    for (int f = 0; f < frozen.frames; ++f) {
        for (int y = 0; y < 64; ++y) {
            for (int x = 0; x < 64; ++x) support += frozen.at(f, y, x, 3) > 0.5 ? 1.0 : 0.0;
        }
    }
    const double frac   = support / (6.0 * 64 * 64);
    const double expect = 1.5 * frac;
    CHECK(df >= 0.7 * expect);
    CHECK(df <= 1.3 * expect);
}

TEST_CASE("derived foreground masks recover an exact synthetic square") {
    // red square on black, stepping far enough that frame supports never
    // overlap (temporal median needs each pixel mostly background)
    RgbaVideo v(3, 16, 16);
    for (int f = 0; f < 3; ++f) {
        for (int y = 4; y < 8; ++y) {
            for (int x = 5 * f; x < 5 * f + 4; ++x) v.at(f, y, x, 0) = 1.0;
        }
    }
    const auto masks = derive_foreground_masks(rgb_as_video(v));
    for (int f = 0; f < 3; ++f) {
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                const bool expect = y >= 4 && y < 8 && x >= 5 * f && x < 5 * f + 4;
                CHECK((masks[static_cast<size_t>(f)][static_cast<size_t>(y) * 16 + x] != 0) ==
                      expect);
            }
        }
    }
}

TEST_CASE("alignment IoU: identical, disjoint and half-overlapping masks") {
    // white square on black; the generated alpha square is offset from it
    auto make = [](int alpha_dx, int alpha_dy) {
        RgbaVideo v(3, 16, 16);
        for (int f = 0; f < 3; ++f) {
            const int x0 = 5 * f;
            for (int y = 4; y < 8; ++y) {
                for (int x = x0; x < x0 + 4; ++x) {
                    v.at(f, y, x, 0) = 1.0;
                    v.at(f, y, x, 1) = 1.0;
                    v.at(f, y, x, 2) = 1.0;
                    v.at(f, y + alpha_dy, x + alpha_dx, 3) = 1.0;
                }
            }
        }
        return v;
    };
    CHECK(alpha_alignment_iou(make(0, 0)) == 1.0);
    CHECK(alpha_alignment_iou(make(0, 6)) == 0.0);
    CHECK(alpha_alignment_iou(make(2, 0)) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("alignment IoU on a ground-truth scene's own mask is 1.0") {
    RgbaVideo v      = sprite_video(6, 64, 64, 1.8, false);
    const auto masks = derive_foreground_masks(rgb_as_video(v));
    std::vector<GrayImage> as_alpha;
    for (const auto& m : masks) {
        GrayImage g(64, 64);
        for (size_t i = 0; i < m.size(); ++i) g.v[i] = m[i] ? 1.0 : 0.0;
        as_alpha.push_back(std::move(g));
    }
    CHECK(alpha_alignment_iou(as_alpha, rgb_as_video(v)) == 1.0);
}

TEST_CASE("empty union on every frame is an error") {
    RgbaVideo v(2, 8, 8);  // all black, all alpha zero
    CHECK_THROWS_AS(alpha_alignment_iou(v), DataError);
}
