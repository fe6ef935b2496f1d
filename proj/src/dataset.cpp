#include "rgbadit/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace rgbadit {

const char* shape_name(SpriteShape s) {
    switch (s) {
        case SpriteShape::Circle: return "circle";
        case SpriteShape::Square: return "square";
        case SpriteShape::Triangle: return "triangle";
        case SpriteShape::Ring: return "ring";
    }
    return "?";
}

const char* motion_name(MotionKind m) {
    switch (m) {
        case MotionKind::Translate: return "translate";
        case MotionKind::Spin: return "spin";
        case MotionKind::Bounce: return "bounce";
        case MotionKind::Scale: return "scale";
    }
    return "?";
}

SceneSpec SceneSpec::from_class(int cond_id, uint64_t scene_seed) {
    if (cond_id < 0 || cond_id >= kNumConditions) {
        throw DataError("scene class out of range: " + std::to_string(cond_id));
    }
    SceneSpec spec;
    spec.shape = static_cast<SpriteShape>(cond_id / kNumMotions);
    spec.motion = static_cast<MotionKind>(cond_id % kNumMotions);
    spec.seed  = scene_seed;
    Rng rng(scene_seed * 0x9e3779b97f4a7c15ull + static_cast<uint64_t>(cond_id) + 1);
    spec.bg_texture_seed = rng.next_u64();
    // foreground color kept well away from the mid-gray texture band
    for (int tries = 0; tries < 64; ++tries) {
        for (auto& c : spec.fg_color) c = rng.uniform();
        const double d0 = spec.fg_color[0] - 0.5, d1 = spec.fg_color[1] - 0.5,
                     d2 = spec.fg_color[2] - 0.5;
        if (std::sqrt(d0 * d0 + d1 * d1 + d2 * d2) >= 0.45) break;
    }
    return spec;
}

namespace {

struct BgTexture {
    double fx1, fy1, p1, fx2, fy2, p2, amp1, amp2;
};

std::array<BgTexture, 3> make_bg(uint64_t seed) {
    Rng rng(seed);
    std::array<BgTexture, 3> ch{};
    for (auto& t : ch) {
        t.fx1  = rng.uniform(0.4, 1.6);
        t.fy1  = rng.uniform(0.4, 1.6);
        t.p1   = rng.uniform(0.0, 6.283185307179586);
        t.fx2  = rng.uniform(0.8, 2.4);
        t.fy2  = rng.uniform(0.8, 2.4);
        t.p2   = rng.uniform(0.0, 6.283185307179586);
        t.amp1 = rng.uniform(0.08, 0.16);
        t.amp2 = rng.uniform(0.05, 0.12);
    }
    return ch;
}

double bg_value(const BgTexture& t, double u, double v) {
    const double tau = 6.283185307179586;
    double x = 0.5 + t.amp1 * std::sin(tau * (t.fx1 * u + t.fy1 * v) + t.p1) +
               t.amp2 * std::sin(tau * (t.fx2 * u - t.fy2 * v) + t.p2);
    return std::clamp(x, 0.12, 0.88);
}

struct FramePose {
    double cx, cy;      // sprite center, pixel units
    double radius;      // nominal radius
    double angle;       // orientation
};

struct MotionPlan {
    std::vector<FramePose> poses;
};

MotionPlan plan_motion(const SceneSpec& spec, int frames, int height, int width) {
    Rng rng(spec.seed ^ 0xa02bdbf7bb3c0a7ull);
    MotionPlan plan;
    plan.poses.resize(static_cast<size_t>(frames));
    const double base = std::min(height, width);
    const double r    = base * rng.uniform(0.17, 0.23);
    const double a0   = rng.uniform(0.0, 6.283185307179586);

    switch (spec.motion) {
        case MotionKind::Translate: {
            double speed = base / 16.0 * rng.uniform(0.8, 1.8);
            double dir   = rng.uniform(0.0, 6.283185307179586);
            double vx = speed * std::cos(dir), vy = speed * std::sin(dir);
            double cx0 = 0, cy0 = 0;
            if (spec.translate_override) {
                cx0 = spec.translate_override->cx0;
                cy0 = spec.translate_override->cy0;
                vx  = spec.translate_override->vx;
                vy  = spec.translate_override->vy;
            } else {
                // keep the sprite fully inside over all frames
                const double sx = vx * (frames - 1), sy = vy * (frames - 1);
                const double margin = r + 0.5;
                double xlo = margin + std::max(0.0, -sx), xhi = width - margin - std::max(0.0, sx);
                double ylo = margin + std::max(0.0, -sy), yhi = height - margin - std::max(0.0, sy);
                if (xlo > xhi || ylo > yhi) {  // too fast for the frame, slow down
                    const double k = 0.5;
                    vx *= k;
                    vy *= k;
                    xlo = margin + std::max(0.0, -vx * (frames - 1));
                    xhi = width - margin - std::max(0.0, vx * (frames - 1));
                    ylo = margin + std::max(0.0, -vy * (frames - 1));
                    yhi = height - margin - std::max(0.0, vy * (frames - 1));
                }
                cx0 = rng.uniform(xlo, std::max(xlo, xhi));
                cy0 = rng.uniform(ylo, std::max(ylo, yhi));
            }
            for (int f = 0; f < frames; ++f) {
                plan.poses[f] = {cx0 + vx * f, cy0 + vy * f, r, a0};
            }
            break;
        }
        case MotionKind::Spin: {
            const double omega = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.25, 0.7);
            const double cx    = width / 2.0 + rng.uniform(-1.5, 1.5);
            const double cy    = height / 2.0 + rng.uniform(-1.5, 1.5);
            for (int f = 0; f < frames; ++f) plan.poses[f] = {cx, cy, r, a0 + omega * f};
            break;
        }
        case MotionKind::Bounce: {
            const double vy  = base / 16.0 * rng.uniform(1.0, 2.2);
            const double cx  = rng.uniform(r + 1.0, width - r - 1.0);
            const double ylo = r + 0.5, yhi = height - r - 0.5;
            const double span = yhi - ylo;
            double y0         = rng.uniform(ylo, yhi);
            for (int f = 0; f < frames; ++f) {
                double y = std::fmod(y0 - ylo + vy * f, 2.0 * span);
                if (y < 0) y += 2.0 * span;
                if (y > span) y = 2.0 * span - y;
                plan.poses[f] = {cx, ylo + y, r, a0};
            }
            break;
        }
        case MotionKind::Scale: {
            const double amp   = rng.uniform(0.25, 0.45);
            const double phase = rng.uniform(0.0, 6.283185307179586);
            const double cx    = width / 2.0 + rng.uniform(-1.5, 1.5);
            const double cy    = height / 2.0 + rng.uniform(-1.5, 1.5);
            for (int f = 0; f < frames; ++f) {
                const double rf =
                    std::max(1.2, r * (1.0 + amp * std::sin(6.283185307179586 * f / frames + phase)));
                plan.poses[f] = {cx, cy, rf, a0};
            }
            break;
        }
    }
    return plan;
}

bool inside_sprite(SpriteShape shape, const FramePose& pose, double px, double py) {
    const double dx = px - pose.cx, dy = py - pose.cy;
    switch (shape) {
        case SpriteShape::Circle:
            return dx * dx + dy * dy <= pose.radius * pose.radius;
        case SpriteShape::Square: {
            const double c = std::cos(-pose.angle), s = std::sin(-pose.angle);
            const double rx = dx * c - dy * s, ry = dx * s + dy * c;
            const double half = pose.radius * 0.82;
            return std::fabs(rx) <= half && std::fabs(ry) <= half;
        }
        case SpriteShape::Triangle: {
            // equilateral triangle inscribed at radius
            double vx[3], vy[3];
            for (int i = 0; i < 3; ++i) {
                const double a = pose.angle + 6.283185307179586 * i / 3.0 - 1.5707963267948966;
                vx[i]          = pose.cx + pose.radius * 1.15 * std::cos(a);
                vy[i]          = pose.cy + pose.radius * 1.15 * std::sin(a);
            }
            for (int i = 0; i < 3; ++i) {
                const int j = (i + 1) % 3;
                const double cross =
                    (vx[j] - vx[i]) * (py - vy[i]) - (vy[j] - vy[i]) * (px - vx[i]);
                if (cross < 0.0) return false;
            }
            return true;
        }
        case SpriteShape::Ring: {
            const double d2 = dx * dx + dy * dy;
            const double inner = pose.radius * 0.55;
            return d2 <= pose.radius * pose.radius && d2 >= inner * inner;
        }
    }
    return false;
}

constexpr int kSupersample = 8;  // 64 coverage samples per pixel

double pixel_coverage(SpriteShape shape, const FramePose& pose, int x, int y) {
    // quick reject/accept against the bounding circle
    const double cxn = x + 0.5 - pose.cx, cyn = y + 0.5 - pose.cy;
    const double bound = pose.radius * 1.45 + 0.75;
    if (cxn * cxn + cyn * cyn > bound * bound) return 0.0;
    int hits = 0;
    for (int sy = 0; sy < kSupersample; ++sy) {
        const double py = y + (sy + 0.5) / kSupersample;
        for (int sx = 0; sx < kSupersample; ++sx) {
            const double px = x + (sx + 0.5) / kSupersample;
            if (inside_sprite(shape, pose, px, py)) ++hits;
        }
    }
    return static_cast<double>(hits) / (kSupersample * kSupersample);
}

}  // namespace

std::vector<double> scene_background(const SceneSpec& spec, int height, int width) {
    const auto tex = make_bg(spec.bg_texture_seed);
    std::vector<double> bg(static_cast<size_t>(height) * width * 3);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double u = (x + 0.5) / width, v = (y + 0.5) / height;
            for (int c = 0; c < 3; ++c) {
                bg[(static_cast<size_t>(y) * width + x) * 3 + c] = bg_value(tex[c], u, v);
            }
        }
    }
    return bg;
}

RgbaVideo synthesize_scene(const SceneSpec& spec, int frames, int height, int width) {
    if (frames <= 0 || height <= 0 || width <= 0) {
        throw DataError("synthesize_scene: dimensions must be positive");
    }
    const auto bg   = scene_background(spec, height, width);
    const auto plan = plan_motion(spec, frames, height, width);
    RgbaVideo video(frames, height, width);
    for (int f = 0; f < frames; ++f) {
        double max_alpha = 0.0;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double a = pixel_coverage(spec.shape, plan.poses[f], x, y);
                max_alpha      = std::max(max_alpha, a);
                for (int c = 0; c < 3; ++c) {
                    const double b = bg[(static_cast<size_t>(y) * width + x) * 3 + c];
                    video.at(f, y, x, c) = spec.fg_color[c] * a + b * (1.0 - a);
                }
                video.at(f, y, x, 3) = a;
            }
        }
        if (max_alpha == 0.0) {
            throw DataError("synthesize_scene: sprite left the frame at frame " +
                            std::to_string(f));
        }
    }
    return video;
}

std::vector<double> refine_mask(const std::vector<double>& alpha, double gain, double choke) {
    if (!(gain > 0.0)) throw ConfigError("refine_mask: gain must be positive");
    if (choke < 0.0 || choke > 1.0) throw ConfigError("refine_mask: choke must be in [0,1]");
    const double power = 1.0 / (1.0 - choke + 1e-6);
    std::vector<double> out(alpha.size());
    for (size_t i = 0; i < alpha.size(); ++i) {
        out[i] = std::pow(std::clamp(alpha[i] * gain, 0.0, 1.0), power);
    }
    return out;
}

void color_decontaminate(RgbaVideo& video, const std::vector<double>& background_rgb, double gain,
                         double choke, DecontaminateOrientation orientation) {
    if (background_rgb.size() != static_cast<size_t>(video.height) * video.width * 3) {
        throw ShapeError("color_decontaminate: background size mismatch");
    }
    for (int f = 0; f < video.frames; ++f) {
        std::vector<double> alpha(static_cast<size_t>(video.height) * video.width);
        for (int y = 0; y < video.height; ++y) {
            for (int x = 0; x < video.width; ++x) {
                alpha[static_cast<size_t>(y) * video.width + x] = video.at(f, y, x, 3);
            }
        }
        const auto refined = refine_mask(alpha, gain, choke);
        for (int y = 0; y < video.height; ++y) {
            for (int x = 0; x < video.width; ++x) {
                const double m = refined[static_cast<size_t>(y) * video.width + x];
                for (int c = 0; c < 3; ++c) {
                    const double rgb = video.at(f, y, x, c);
                    const double bgc =
                        background_rgb[(static_cast<size_t>(y) * video.width + x) * 3 + c];
                    video.at(f, y, x, c) = orientation == DecontaminateOrientation::AsPrinted
                                               ? rgb * (1.0 - m) + m * bgc
                                               : rgb * m + (1.0 - m) * bgc;
                }
            }
        }
    }
}

namespace {

std::vector<double> gaussian_kernel(int size) {
    const double sigma = size / 6.0;
    std::vector<double> k(static_cast<size_t>(size));
    const int half = size / 2;
    double total   = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - half;
        k[i]           = std::exp(-0.5 * d * d / (sigma * sigma));
        total += k[i];
    }
    for (auto& v : k) v /= total;
    return k;
}

// separable blur with replicated borders over an H*W*3 plane
std::vector<double> gaussian_blur_rgb(const std::vector<double>& img, int height, int width,
                                      int kernel) {
    const auto k   = gaussian_kernel(kernel);
    const int half = kernel / 2;
    std::vector<double> tmp(img.size()), out(img.size());
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int t = -half; t <= half; ++t) {
                    const int xx = std::clamp(x + t, 0, width - 1);
                    acc += k[t + half] * img[(static_cast<size_t>(y) * width + xx) * 3 + c];
                }
                tmp[(static_cast<size_t>(y) * width + x) * 3 + c] = acc;
            }
        }
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int t = -half; t <= half; ++t) {
                    const int yy = std::clamp(y + t, 0, height - 1);
                    acc += k[t + half] * tmp[(static_cast<size_t>(yy) * width + x) * 3 + c];
                }
                out[(static_cast<size_t>(y) * width + x) * 3 + c] = acc;
            }
        }
    }
    return out;
}

}  // namespace

void blur_background(RgbaVideo& video, int kernel) {
    if (video.frames < 1) throw DataError("blur_background: need at least one frame");
    if (kernel < 1) throw ConfigError("blur_background: kernel must be positive");
    int k = kernel;
    const int limit = std::min(video.height, video.width);
    if (k > limit) {
        k = limit % 2 == 1 ? limit : limit - 1;
        log_warn("blur_background: kernel " + std::to_string(kernel) + " clamped to " +
                 std::to_string(k) + " for " + std::to_string(video.width) + "x" +
                 std::to_string(video.height) + " frames");
    }
    if (k % 2 == 0) --k;

    std::vector<double> first(static_cast<size_t>(video.height) * video.width * 3);
    for (int y = 0; y < video.height; ++y) {
        for (int x = 0; x < video.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                first[(static_cast<size_t>(y) * video.width + x) * 3 + c] = video.at(0, y, x, c);
            }
        }
    }
    const auto blurred = gaussian_blur_rgb(first, video.height, video.width, k);
    for (int f = 0; f < video.frames; ++f) {
        for (int y = 0; y < video.height; ++y) {
            for (int x = 0; x < video.width; ++x) {
                const double a = video.at(f, y, x, 3);
                for (int c = 0; c < 3; ++c) {
                    const double bgc =
                        blurred[(static_cast<size_t>(y) * video.width + x) * 3 + c];
                    video.at(f, y, x, c) = video.at(f, y, x, c) * a + bgc * (1.0 - a);
                }
            }
        }
    }
}

Tensor patchify(const std::vector<double>& fhw3, int frames, int height, int width, int patch) {
    if (patch <= 0 || height % patch != 0 || width % patch != 0) {
        throw ConfigError("patchify: height/width must be divisible by patch");
    }
    if (fhw3.size() != static_cast<size_t>(frames) * height * width * 3) {
        throw ShapeError("patchify: buffer size mismatch");
    }
    const int gh = height / patch, gw = width / patch;
    const int tokens = frames * gh * gw;
    const int dp     = patch * patch * 3;
    std::vector<double> out(static_cast<size_t>(tokens) * dp);
    size_t t = 0;
    for (int f = 0; f < frames; ++f) {
        for (int py = 0; py < gh; ++py) {
            for (int px = 0; px < gw; ++px) {
                double* dst = out.data() + t * dp;
                size_t o    = 0;
                for (int dy = 0; dy < patch; ++dy) {
                    for (int dx = 0; dx < patch; ++dx) {
                        const size_t base =
                            ((static_cast<size_t>(f) * height + py * patch + dy) * width +
                             px * patch + dx) *
                            3;
                        for (int c = 0; c < 3; ++c) dst[o++] = fhw3[base + c];
                    }
                }
                ++t;
            }
        }
    }
    return Tensor::from_data({tokens, dp}, std::move(out));
}

std::vector<double> unpatchify(const Tensor& tokens, int frames, int height, int width,
                               int patch) {
    const int gh = height / patch, gw = width / patch;
    const int dp = patch * patch * 3;
    if (tokens.rows() != frames * gh * gw || tokens.cols() != dp) {
        throw ShapeError("unpatchify: token matrix does not match dimensions");
    }
    std::vector<double> out(static_cast<size_t>(frames) * height * width * 3);
    size_t t = 0;
    for (int f = 0; f < frames; ++f) {
        for (int py = 0; py < gh; ++py) {
            for (int px = 0; px < gw; ++px) {
                const double* src = tokens.raw().data() + t * dp;
                size_t o          = 0;
                for (int dy = 0; dy < patch; ++dy) {
                    for (int dx = 0; dx < patch; ++dx) {
                        const size_t base =
                            ((static_cast<size_t>(f) * height + py * patch + dy) * width +
                             px * patch + dx) *
                            3;
                        for (int c = 0; c < 3; ++c) out[base + c] = src[o++];
                    }
                }
                ++t;
            }
        }
    }
    return out;
}

std::vector<double> rgb_plane(const RgbaVideo& video) {
    std::vector<double> out(static_cast<size_t>(video.frames) * video.height * video.width * 3);
    size_t o = 0;
    for (int f = 0; f < video.frames; ++f) {
        for (int y = 0; y < video.height; ++y) {
            for (int x = 0; x < video.width; ++x) {
                out[o++] = video.at(f, y, x, 0);
                out[o++] = video.at(f, y, x, 1);
                out[o++] = video.at(f, y, x, 2);
            }
        }
    }
    return out;
}

std::vector<double> alpha_plane3(const RgbaVideo& video) {
    std::vector<double> out(static_cast<size_t>(video.frames) * video.height * video.width * 3);
    size_t o = 0;
    for (int f = 0; f < video.frames; ++f) {
        for (int y = 0; y < video.height; ++y) {
            for (int x = 0; x < video.width; ++x) {
                const double a = video.at(f, y, x, 3);
                out[o++]       = a;
                out[o++]       = a;
                out[o++]       = a;
            }
        }
    }
    return out;
}

Tensor rgb_tokens(const RgbaVideo& video, int patch) {
    return patchify(rgb_plane(video), video.frames, video.height, video.width, patch);
}

Tensor alpha_tokens(const RgbaVideo& video, int patch) {
    return patchify(alpha_plane3(video), video.frames, video.height, video.width, patch);
}

RgbaVideo decode_rgba(const Tensor& rgb_toks, const Tensor& alpha_toks, int frames, int height,
                      int width, int patch) {
    const auto rgb   = unpatchify(rgb_toks, frames, height, width, patch);
    const auto alpha = unpatchify(alpha_toks, frames, height, width, patch);
    RgbaVideo video(frames, height, width);
    for (int f = 0; f < frames; ++f) {
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const size_t base = ((static_cast<size_t>(f) * height + y) * width + x) * 3;
                for (int c = 0; c < 3; ++c) {
                    video.at(f, y, x, c) = std::clamp(rgb[base + c], 0.0, 1.0);
                }
                const double a = (alpha[base] + alpha[base + 1] + alpha[base + 2]) / 3.0;
                video.at(f, y, x, 3) = std::clamp(a, 0.0, 1.0);
            }
        }
    }
    return video;
}

}  // namespace rgbadit
