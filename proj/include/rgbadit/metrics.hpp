#ifndef RGBADIT_METRICS_HPP
#define RGBADIT_METRICS_HPP

#include <vector>

#include "rgbadit/dataset.hpp"

namespace rgbadit {

struct GrayImage {
    int height = 0, width = 0;
    std::vector<double> v;  // [0,1]

    GrayImage() = default;
    GrayImage(int h, int w) : height(h), width(w), v(static_cast<size_t>(h) * w, 0.0) {}
    double& at(int y, int x) { return v[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
};

// Per-pixel displacement in pixels per frame step.
struct FlowField {
    int height = 0, width = 0;
    std::vector<double> dx, dy;

    FlowField() = default;
    FlowField(int h, int w)
        : height(h), width(w), dx(static_cast<size_t>(h) * w, 0.0),
          dy(static_cast<size_t>(h) * w, 0.0) {}
};

struct FlowParams {
    double pyramid_scale = 0.5;
    int levels           = 3;
    int window           = 15;
    int iterations       = 3;
    int poly_n           = 5;
    double poly_sigma    = 1.2;

    void validate(int height, int width) const;
};

// Rec.601 luma of the RGB channels.
double luma(double r, double g, double b);
GrayImage to_grayscale(const RgbaVideo& video, int frame);
GrayImage alpha_channel(const RgbaVideo& video, int frame);
RgbaVideo rgb_as_video(const RgbaVideo& video);    // drops alpha (A=1)
RgbaVideo alpha_as_video(const RgbaVideo& video);  // alpha replicated to RGB, A=1

// Dense Farneback optical flow between two grayscale frames.
FlowField farneback_flow(const GrayImage& prev, const GrayImage& next,
                         const FlowParams& params = {});

// Mean per-pixel Euclidean distance between the flow fields of the two
// videos over all consecutive frame pairs. Both videos enter as grayscale.
double flow_difference(const RgbaVideo& rgb_video, const RgbaVideo& alpha_video,
                       const FlowParams& params = {});

// Foreground masks derived from an RGB video alone: per-pixel temporal-median
// background model, foreground color estimated from the strongest residuals,
// per-pixel normalized distance thresholded at 0.5.
std::vector<std::vector<uint8_t>> derive_foreground_masks(const RgbaVideo& rgb_video,
                                                          double threshold = 0.5);

// Mean per-frame IoU between the thresholded generated alpha and the
// RGB-derived foreground mask. Frames where both sets are empty are skipped;
// an empty union on every frame is an error.
double alpha_alignment_iou(const std::vector<GrayImage>& generated_alpha,
                           const RgbaVideo& rgb_video, double threshold = 0.5);
double alpha_alignment_iou(const RgbaVideo& rgba, double threshold = 0.5);

}  // namespace rgbadit

#endif  // RGBADIT_METRICS_HPP
