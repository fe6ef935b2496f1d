#include "rgbadit/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace rgbadit {

void FlowParams::validate(int height, int width) const {
    if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0)) {
        throw ConfigError("flow: pyramid_scale must lie in (0, 1)");
    }
    if (levels < 1 || iterations < 1) throw ConfigError("flow: levels/iterations must be >= 1");
    if (window < 1 || window % 2 == 0) throw ConfigError("flow: window must be odd and positive");
    if (poly_n < 3) throw ConfigError("flow: poly_n must be >= 3");
    const double coarsest = std::min(height, width) * std::pow(pyramid_scale, levels - 1);
    if (coarsest < window) {
        throw ConfigError("flow: frames smaller than the window at the coarsest pyramid level");
    }
}

double luma(double r, double g, double b) {
    return 0.299 * r + 0.587 * g + 0.114 * b;
}

GrayImage to_grayscale(const RgbaVideo& video, int frame) {
    GrayImage g(video.height, video.width);
    for (int y = 0; y < video.height; ++y) {
        for (int x = 0; x < video.width; ++x) {
            g.at(y, x) = luma(video.at(frame, y, x, 0), video.at(frame, y, x, 1),
                              video.at(frame, y, x, 2));
        }
    }
    return g;
}

GrayImage alpha_channel(const RgbaVideo& video, int frame) {
    GrayImage g(video.height, video.width);
    for (int y = 0; y < video.height; ++y) {
        for (int x = 0; x < video.width; ++x) g.at(y, x) = video.at(frame, y, x, 3);
    }
    return g;
}

RgbaVideo rgb_as_video(const RgbaVideo& video) {
    RgbaVideo out = video;
    for (int f = 0; f < out.frames; ++f) {
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) out.at(f, y, x, 3) = 1.0;
        }
    }
    return out;
}

RgbaVideo alpha_as_video(const RgbaVideo& video) {
    RgbaVideo out(video.frames, video.height, video.width);
    for (int f = 0; f < out.frames; ++f) {
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                const double a = video.at(f, y, x, 3);
                out.at(f, y, x, 0) = a;
                out.at(f, y, x, 1) = a;
                out.at(f, y, x, 2) = a;
                out.at(f, y, x, 3) = 1.0;
            }
        }
    }
    return out;
}

namespace {

// Quadratic polynomial expansion per pixel: f(p + u) ~ u^T A u + b^T u + c
// fitted over a Gaussian-weighted neighborhood. Stored per pixel as
// (a11, a12, a22, b1, b2) with A symmetric.
struct PolyExpansion {
    int height = 0, width = 0;
    std::vector<double> a11, a12, a22, b1, b2;

    PolyExpansion(int h, int w)
        : height(h), width(w) {
        const size_t n = static_cast<size_t>(h) * w;
        a11.assign(n, 0.0);
        a12.assign(n, 0.0);
        a22.assign(n, 0.0);
        b1.assign(n, 0.0);
        b2.assign(n, 0.0);
    }
};

// solve G x = m for a symmetric positive definite 6x6 system
std::array<std::array<double, 6>, 6> invert6(std::array<std::array<double, 6>, 6> g) {
    std::array<std::array<double, 6>, 6> inv{};
    for (int i = 0; i < 6; ++i) inv[i][i] = 1.0;
    for (int col = 0; col < 6; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 6; ++r) {
            if (std::fabs(g[r][col]) > std::fabs(g[pivot][col])) pivot = r;
        }
        std::swap(g[col], g[pivot]);
        std::swap(inv[col], inv[pivot]);
        const double p = g[col][col];
        if (std::fabs(p) < 1e-300) throw NumericsError("farneback_flow: singular basis matrix");
        for (int j = 0; j < 6; ++j) {
            g[col][j] /= p;
            inv[col][j] /= p;
        }
        for (int r = 0; r < 6; ++r) {
            if (r == col) continue;
            const double f = g[r][col];
            if (f == 0.0) continue;
            for (int j = 0; j < 6; ++j) {
                g[r][j] -= f * g[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    return inv;
}

PolyExpansion polynomial_expansion(const GrayImage& img, int poly_n, double poly_sigma) {
    const int h = img.height, w = img.width;
    const int half = poly_n / 2;
    std::vector<double> g(static_cast<size_t>(poly_n)), tg(g.size()), ttg(g.size());
    double gsum = 0.0;
    for (int t = -half; t <= half; ++t) {
        gsum += std::exp(-0.5 * t * t / (poly_sigma * poly_sigma));
    }
    for (int t = -half; t <= half; ++t) {
        const double val = std::exp(-0.5 * t * t / (poly_sigma * poly_sigma)) / gsum;
        g[static_cast<size_t>(t + half)]   = val;
        tg[static_cast<size_t>(t + half)]  = t * val;
        ttg[static_cast<size_t>(t + half)] = t * t * val;
    }

    // normal matrix over the basis (1, x, y, x^2, y^2, xy) with separable
    // Gaussian applicability; identical for every interior pixel
    std::array<std::array<double, 6>, 6> gram{};
    for (int ty = -half; ty <= half; ++ty) {
        for (int tx = -half; tx <= half; ++tx) {
            const double a = g[static_cast<size_t>(tx + half)] * g[static_cast<size_t>(ty + half)];
            const std::array<double, 6> phi{1.0,
                                            static_cast<double>(tx),
                                            static_cast<double>(ty),
                                            static_cast<double>(tx) * tx,
                                            static_cast<double>(ty) * ty,
                                            static_cast<double>(tx) * ty};
            for (int i = 0; i < 6; ++i) {
                for (int j = 0; j < 6; ++j) gram[i][j] += a * phi[i] * phi[j];
            }
        }
    }
    const auto ginv = invert6(gram);

    // separable moment correlations with replicated borders
    const size_t n = static_cast<size_t>(h) * w;
    std::vector<double> r0(n), r1(n), r2(n);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s0 = 0, s1 = 0, s2 = 0;
            for (int t = -half; t <= half; ++t) {
                const double v = img.at(y, std::clamp(x + t, 0, w - 1));
                s0 += g[static_cast<size_t>(t + half)] * v;
                s1 += tg[static_cast<size_t>(t + half)] * v;
                s2 += ttg[static_cast<size_t>(t + half)] * v;
            }
            r0[static_cast<size_t>(y) * w + x] = s0;
            r1[static_cast<size_t>(y) * w + x] = s1;
            r2[static_cast<size_t>(y) * w + x] = s2;
        }
    }
    PolyExpansion out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double m1 = 0, mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
            for (int t = -half; t <= half; ++t) {
                const size_t row = static_cast<size_t>(std::clamp(y + t, 0, h - 1)) * w + x;
                m1 += g[static_cast<size_t>(t + half)] * r0[row];
                mx += g[static_cast<size_t>(t + half)] * r1[row];
                mxx += g[static_cast<size_t>(t + half)] * r2[row];
                my += tg[static_cast<size_t>(t + half)] * r0[row];
                mxy += tg[static_cast<size_t>(t + half)] * r1[row];
                myy += ttg[static_cast<size_t>(t + half)] * r0[row];
            }
            const std::array<double, 6> m{m1, mx, my, mxx, myy, mxy};
            std::array<double, 6> coef{};
            for (int i = 0; i < 6; ++i) {
                for (int j = 0; j < 6; ++j) coef[i] += ginv[i][j] * m[j];
            }
            const size_t p = static_cast<size_t>(y) * w + x;
            out.b1[p]  = coef[1];
            out.b2[p]  = coef[2];
            out.a11[p] = coef[3];
            out.a22[p] = coef[4];
            out.a12[p] = coef[5] * 0.5;
        }
    }
    return out;
}

GrayImage resize_bilinear(const GrayImage& src, int dh, int dw) {
    GrayImage dst(dh, dw);
    const double sy = static_cast<double>(src.height) / dh;
    const double sx = static_cast<double>(src.width) / dw;
    for (int y = 0; y < dh; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        const int y0    = std::clamp(static_cast<int>(std::floor(fy)), 0, src.height - 1);
        const int y1    = std::min(y0 + 1, src.height - 1);
        const double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < dw; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const int x0    = std::clamp(static_cast<int>(std::floor(fx)), 0, src.width - 1);
            const int x1    = std::min(x0 + 1, src.width - 1);
            const double wx = std::clamp(fx - x0, 0.0, 1.0);
            dst.at(y, x)    = (1 - wy) * ((1 - wx) * src.at(y0, x0) + wx * src.at(y0, x1)) +
                           wy * ((1 - wx) * src.at(y1, x0) + wx * src.at(y1, x1));
        }
    }
    return dst;
}

// box smoothing with replicated borders, window must be odd
void box_smooth(std::vector<double>& v, int h, int w, int window) {
    const int half = window / 2;
    const double inv = 1.0 / window;
    std::vector<double> tmp(v.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int t = -half; t <= half; ++t) s += v[static_cast<size_t>(y) * w + std::clamp(x + t, 0, w - 1)];
            tmp[static_cast<size_t>(y) * w + x] = s * inv;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int t = -half; t <= half; ++t) s += tmp[static_cast<size_t>(std::clamp(y + t, 0, h - 1)) * w + x];
            v[static_cast<size_t>(y) * w + x] = s * inv;
        }
    }
}

// one pyramid level of displacement refinement
void refine_flow(const PolyExpansion& e1, const PolyExpansion& e2, FlowField& flow,
                 const FlowParams& params) {
    const int h = e1.height, w = e1.width;
    const size_t n = static_cast<size_t>(h) * w;
    std::vector<double> g11(n), g12(n), g22(n), h1(n), h2(n);
    for (int iter = 0; iter < params.iterations; ++iter) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const size_t p  = static_cast<size_t>(y) * w + x;
                const double dx = flow.dx[p], dy = flow.dy[p];
                const int x2 = std::clamp(static_cast<int>(std::lround(x + dx)), 0, w - 1);
                const int y2 = std::clamp(static_cast<int>(std::lround(y + dy)), 0, h - 1);
                const size_t q  = static_cast<size_t>(y2) * w + x2;
                // compensate with the integer offset actually applied when
                // fetching the warped expansion
                const double rdx = x2 - x, rdy = y2 - y;
                const double m11 = 0.5 * (e1.a11[p] + e2.a11[q]);
                const double m12 = 0.5 * (e1.a12[p] + e2.a12[q]);
                const double m22 = 0.5 * (e1.a22[p] + e2.a22[q]);
                const double db1 = -0.5 * (e2.b1[q] - e1.b1[p]) + m11 * rdx + m12 * rdy;
                const double db2 = -0.5 * (e2.b2[q] - e1.b2[p]) + m12 * rdx + m22 * rdy;
                g11[p] = m11 * m11 + m12 * m12;
                g12[p] = m11 * m12 + m12 * m22;
                g22[p] = m12 * m12 + m22 * m22;
                h1[p]  = m11 * db1 + m12 * db2;
                h2[p]  = m12 * db1 + m22 * db2;
            }
        }
        box_smooth(g11, h, w, params.window);
        box_smooth(g12, h, w, params.window);
        box_smooth(g22, h, w, params.window);
        box_smooth(h1, h, w, params.window);
        box_smooth(h2, h, w, params.window);
        for (size_t p = 0; p < n; ++p) {
            const double det = g11[p] * g22[p] - g12[p] * g12[p];
            if (std::fabs(det) > 1e-14) {
                flow.dx[p] = (g22[p] * h1[p] - g12[p] * h2[p]) / det;
                flow.dy[p] = (g11[p] * h2[p] - g12[p] * h1[p]) / det;
            } else {
                flow.dx[p] = 0.0;
                flow.dy[p] = 0.0;
            }
        }
    }
}

}  // namespace

FlowField farneback_flow(const GrayImage& prev, const GrayImage& next, const FlowParams& params) {
    if (prev.height != next.height || prev.width != next.width) {
        throw ShapeError("farneback_flow: frame dimensions disagree");
    }
    params.validate(prev.height, prev.width);

    // pyramid dimensions, finest first
    std::vector<std::pair<int, int>> dims;
    for (int l = 0; l < params.levels; ++l) {
        const double s = std::pow(params.pyramid_scale, l);
        dims.emplace_back(std::max(1, static_cast<int>(std::lround(prev.height * s))),
                          std::max(1, static_cast<int>(std::lround(prev.width * s))));
    }

    FlowField flow(dims.back().first, dims.back().second);
    for (int l = params.levels - 1; l >= 0; --l) {
        const auto [lh, lw] = dims[static_cast<size_t>(l)];
        GrayImage p1 = l == 0 ? prev : resize_bilinear(prev, lh, lw);
        GrayImage p2 = l == 0 ? next : resize_bilinear(next, lh, lw);
        if (flow.height != lh || flow.width != lw) {
            // upsample the coarser estimate and rescale the displacements
            FlowField up(lh, lw);
            GrayImage fx(flow.height, flow.width), fy(flow.height, flow.width);
            fx.v = flow.dx;
            fy.v = flow.dy;
            const double gain_x = static_cast<double>(lw) / flow.width;
            const double gain_y = static_cast<double>(lh) / flow.height;
            GrayImage rx = resize_bilinear(fx, lh, lw), ry = resize_bilinear(fy, lh, lw);
            for (size_t i = 0; i < up.dx.size(); ++i) {
                up.dx[i] = rx.v[i] * gain_x;
                up.dy[i] = ry.v[i] * gain_y;
            }
            flow = std::move(up);
        }
        const PolyExpansion e1 = polynomial_expansion(p1, params.poly_n, params.poly_sigma);
        const PolyExpansion e2 = polynomial_expansion(p2, params.poly_n, params.poly_sigma);
        refine_flow(e1, e2, flow, params);
    }
    for (size_t i = 0; i < flow.dx.size(); ++i) {
        if (!std::isfinite(flow.dx[i]) || !std::isfinite(flow.dy[i])) {
            throw NumericsError("farneback_flow: non-finite flow vector");
        }
    }
    return flow;
}

double flow_difference(const RgbaVideo& rgb_video, const RgbaVideo& alpha_video,
                       const FlowParams& params) {
    if (!rgb_video.same_dims(alpha_video)) {
        throw ShapeError("flow_difference: video dimensions disagree");
    }
    if (rgb_video.frames < 2) {
        throw DataError("flow_difference: need at least two frames");
    }
    double total = 0.0;
    int64_t count = 0;
    for (int f = 0; f + 1 < rgb_video.frames; ++f) {
        const FlowField fr = farneback_flow(to_grayscale(rgb_video, f),
                                            to_grayscale(rgb_video, f + 1), params);
        const FlowField fa = farneback_flow(to_grayscale(alpha_video, f),
                                            to_grayscale(alpha_video, f + 1), params);
        for (size_t i = 0; i < fr.dx.size(); ++i) {
            const double ddx = fr.dx[i] - fa.dx[i];
            const double ddy = fr.dy[i] - fa.dy[i];
            total += std::sqrt(ddx * ddx + ddy * ddy);
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

std::vector<std::vector<uint8_t>> derive_foreground_masks(const RgbaVideo& rgb_video,
                                                          double threshold) {
    const int F = rgb_video.frames, H = rgb_video.height, W = rgb_video.width;
    const size_t px = static_cast<size_t>(H) * W;

    // per-pixel temporal median background
    std::vector<double> bg(px * 3);
    std::vector<double> column(static_cast<size_t>(F));
    for (size_t p = 0; p < px; ++p) {
        const int y = static_cast<int>(p) / W, x = static_cast<int>(p) % W;
        for (int c = 0; c < 3; ++c) {
            for (int f = 0; f < F; ++f) column[static_cast<size_t>(f)] = rgb_video.at(f, y, x, c);
            std::sort(column.begin(), column.end());
            bg[p * 3 + c] = F % 2 == 1 ? column[static_cast<size_t>(F / 2)]
                                       : 0.5 * (column[static_cast<size_t>(F / 2 - 1)] +
                                                column[static_cast<size_t>(F / 2)]);
        }
    }

    // residual distance to the background model
    std::vector<std::vector<double>> dist(static_cast<size_t>(F), std::vector<double>(px));
    std::vector<double> all;
    all.reserve(static_cast<size_t>(F) * px);
    for (int f = 0; f < F; ++f) {
        for (size_t p = 0; p < px; ++p) {
            const int y = static_cast<int>(p) / W, x = static_cast<int>(p) % W;
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = rgb_video.at(f, y, x, c) - bg[p * 3 + c];
                d2 += d * d;
            }
            dist[static_cast<size_t>(f)][p] = std::sqrt(d2);
            all.push_back(dist[static_cast<size_t>(f)][p]);
        }
    }

    // foreground color: median color over the strongest 5% residuals
    std::vector<size_t> order(all.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    const size_t top = std::max<size_t>(1, all.size() / 20);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                      [&](size_t i, size_t j) { return all[i] > all[j]; });
    std::array<double, 3> fg{};
    {
        std::vector<double> ch(top);
        for (int c = 0; c < 3; ++c) {
            for (size_t i = 0; i < top; ++i) {
                const size_t idx = order[i];
                const int f      = static_cast<int>(idx / px);
                const size_t p   = idx % px;
                ch[i] = rgb_video.at(f, static_cast<int>(p) / W, static_cast<int>(p) % W, c);
            }
            std::sort(ch.begin(), ch.end());
            fg[static_cast<size_t>(c)] = ch[top / 2];
        }
    }

    // normalized opacity estimate: |rgb - bg| / |fg - bg|, thresholded
    std::vector<std::vector<uint8_t>> masks(static_cast<size_t>(F),
                                            std::vector<uint8_t>(px, 0));
    for (int f = 0; f < F; ++f) {
        for (size_t p = 0; p < px; ++p) {
            double fg_d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = fg[static_cast<size_t>(c)] - bg[p * 3 + c];
                fg_d2 += d * d;
            }
            const double denom = std::max(std::sqrt(fg_d2), 0.05);
            masks[static_cast<size_t>(f)][p] =
                dist[static_cast<size_t>(f)][p] / denom > threshold ? 1 : 0;
        }
    }
    return masks;
}

double alpha_alignment_iou(const std::vector<GrayImage>& generated_alpha,
                           const RgbaVideo& rgb_video, double threshold) {
    if (static_cast<int>(generated_alpha.size()) != rgb_video.frames) {
        throw ShapeError("alpha_alignment_iou: frame count mismatch");
    }
    const auto masks = derive_foreground_masks(rgb_video);
    double total     = 0.0;
    int counted      = 0;
    for (int f = 0; f < rgb_video.frames; ++f) {
        const GrayImage& a = generated_alpha[static_cast<size_t>(f)];
        if (a.height != rgb_video.height || a.width != rgb_video.width) {
            throw ShapeError("alpha_alignment_iou: frame dimensions disagree");
        }
        int64_t inter = 0, uni = 0;
        for (size_t p = 0; p < a.v.size(); ++p) {
            const bool ga = a.v[p] > threshold;
            const bool fgm = masks[static_cast<size_t>(f)][p] != 0;
            inter += (ga && fgm) ? 1 : 0;
            uni += (ga || fgm) ? 1 : 0;
        }
        if (uni > 0) {
            total += static_cast<double>(inter) / static_cast<double>(uni);
            ++counted;
        }
    }
    if (counted == 0) throw DataError("alpha_alignment_iou: empty union on every frame");
    return total / counted;
}

double alpha_alignment_iou(const RgbaVideo& rgba, double threshold) {
    std::vector<GrayImage> alpha;
    alpha.reserve(static_cast<size_t>(rgba.frames));
    for (int f = 0; f < rgba.frames; ++f) alpha.push_back(alpha_channel(rgba, f));
    return alpha_alignment_iou(alpha, rgb_as_video(rgba), threshold);
}

}  // namespace rgbadit
