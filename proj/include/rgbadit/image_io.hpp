#ifndef RGBADIT_IMAGE_IO_HPP
#define RGBADIT_IMAGE_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "rgbadit/dataset.hpp"

namespace rgbadit {

// Portable arbitrary map (PAM, "P7") raster with 16-bit big-endian samples.
struct PamImage {
    int width = 0, height = 0, depth = 0;  // depth = channels
    int maxval = 65535;
    std::string tupltype;
    std::vector<uint16_t> samples;  // row-major, interleaved channels
};

void write_pam(const std::string& path, const PamImage& img);
PamImage read_pam(const std::string& path);

uint16_t quantize16(double v);                   // clamp [0,1] then round to maxval
double dequantize16(uint16_t v);

// One RGBA frame <-> 4-channel PAM
void write_rgba_frame(const std::string& path, const RgbaVideo& video, int frame);
void read_rgba_frame(const std::string& path, RgbaVideo& video, int frame);

// Whole-video helpers over numbered frame files (frame_000.pam, ...).
void write_video_frames(const std::string& dir, const RgbaVideo& video);
RgbaVideo read_video_frames(const std::string& dir, int frames, int height, int width);

// RGB preview of an RGBA frame composited over a checkerboard.
void write_checker_preview(const std::string& path, const RgbaVideo& video, int frame);

uint64_t file_hash(const std::string& path);

}  // namespace rgbadit

#endif  // RGBADIT_IMAGE_IO_HPP
