#ifndef RGBADIT_DATASET_HPP
#define RGBADIT_DATASET_HPP

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "rgbadit/tensor.hpp"

namespace rgbadit {

// Straight-alpha RGBA sample stack, 64-bit samples in [0,1], layout
// [frame][y][x][channel] with channel order R,G,B,A.
struct RgbaVideo {
    int frames = 0, height = 0, width = 0;
    std::vector<double> data;

    RgbaVideo() = default;
    RgbaVideo(int f, int h, int w)
        : frames(f), height(h), width(w),
          data(static_cast<size_t>(f) * h * w * 4, 0.0) {}

    double& at(int f, int y, int x, int c) {
        return data[((static_cast<size_t>(f) * height + y) * width + x) * 4 + c];
    }
    double at(int f, int y, int x, int c) const {
        return data[((static_cast<size_t>(f) * height + y) * width + x) * 4 + c];
    }
    bool same_dims(const RgbaVideo& o) const {
        return frames == o.frames && height == o.height && width == o.width;
    }
};

enum class SpriteShape { Circle, Square, Triangle, Ring };
enum class MotionKind { Translate, Spin, Bounce, Scale };

constexpr int kNumShapes    = 4;
constexpr int kNumMotions   = 4;
constexpr int kNumConditions = kNumShapes * kNumMotions;

const char* shape_name(SpriteShape s);
const char* motion_name(MotionKind m);

// Explicit trajectory override; normally derived from the seed.
struct TranslateOverride {
    double cx0, cy0, vx, vy;
};

struct SceneSpec {
    SpriteShape shape = SpriteShape::Circle;
    MotionKind motion = MotionKind::Translate;
    std::array<double, 3> fg_color{1.0, 1.0, 1.0};
    uint64_t bg_texture_seed = 0;
    uint64_t seed            = 0;
    std::optional<TranslateOverride> translate_override;

    int cond_id() const { return static_cast<int>(shape) * kNumMotions + static_cast<int>(motion); }
    // Derives colors and sub-seeds deterministically from (cond_id, scene_seed).
    static SceneSpec from_class(int cond_id, uint64_t scene_seed);
};

// Renders an anti-aliased sprite (coverage-based alpha) moving over a static
// procedural background; RGB = fg*a + bg*(1-a) per pixel, exactly.
RgbaVideo synthesize_scene(const SceneSpec& spec, int frames, int height, int width);

// Per-pixel background of a scene (what synthesize_scene composites over).
std::vector<double> scene_background(const SceneSpec& spec, int height, int width);  // H*W*3

// Edge-sharpening mask refinement: clamp(a*gain, 0, 1)^(1/(1-choke+eps)).
std::vector<double> refine_mask(const std::vector<double>& alpha, double gain, double choke);

enum class DecontaminateOrientation { AsPrinted, Inverted };

// Blends RGB toward the background through the refined mask. AsPrinted keeps
// the published orientation rgb*(1-m) + m*bg; Inverted swaps the two weights.
void color_decontaminate(RgbaVideo& video, const std::vector<double>& background_rgb,
                         double gain = 1.1, double choke = 0.5,
                         DecontaminateOrientation orientation = DecontaminateOrientation::AsPrinted);

// Gaussian-blurs frame 0's RGB (sigma = kernel/6, kernel clamped odd <=
// min(H, W)) and composites every frame's foreground over that single static
// background.
void blur_background(RgbaVideo& video, int kernel = 201);

// Non-overlapping patch flattening of a 3-channel half in (frame, row, col)
// scan order. Returns [L x patch*patch*3] with L = F*(H/p)*(W/p).
Tensor patchify(const std::vector<double>& fhw3, int frames, int height, int width, int patch);
std::vector<double> unpatchify(const Tensor& tokens, int frames, int height, int width, int patch);

// Token/pixel boundary helpers for the two video domains. Alpha is
// replicated to 3 channels so both halves share the patch projection.
Tensor rgb_tokens(const RgbaVideo& video, int patch);
Tensor alpha_tokens(const RgbaVideo& video, int patch);
std::vector<double> rgb_plane(const RgbaVideo& video);     // F*H*W*3
std::vector<double> alpha_plane3(const RgbaVideo& video);  // alpha replicated, F*H*W*3

// Decodes predicted token halves back to an RGBA video; samples clamped to
// [0,1] and the alpha patch channels averaged.
RgbaVideo decode_rgba(const Tensor& rgb_toks, const Tensor& alpha_toks, int frames, int height,
                      int width, int patch);

}  // namespace rgbadit

#endif  // RGBADIT_DATASET_HPP
