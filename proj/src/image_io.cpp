#include "rgbadit/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rgbadit {

uint16_t quantize16(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<uint16_t>(std::lround(c * 65535.0));
}

double dequantize16(uint16_t v) {
    return static_cast<double>(v) / 65535.0;
}

void write_pam(const std::string& path, const PamImage& img) {
    if (img.samples.size() != static_cast<size_t>(img.width) * img.height * img.depth) {
        throw IoError("write_pam: sample count mismatch for " + path);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P7\n"
        << "WIDTH " << img.width << "\n"
        << "HEIGHT " << img.height << "\n"
        << "DEPTH " << img.depth << "\n"
        << "MAXVAL " << img.maxval << "\n"
        << "TUPLTYPE " << img.tupltype << "\n"
        << "ENDHDR\n";
    std::vector<unsigned char> buf(img.samples.size() * 2);
    for (size_t i = 0; i < img.samples.size(); ++i) {
        buf[2 * i]     = static_cast<unsigned char>(img.samples[i] >> 8);  // big-endian
        buf[2 * i + 1] = static_cast<unsigned char>(img.samples[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed while writing: " + path);
}

PamImage read_pam(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "P7") {
        throw DataError("malformed frame file (not PAM): " + path);
    }
    PamImage img;
    while (std::getline(in, line)) {
        if (line == "ENDHDR") break;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "WIDTH") ls >> img.width;
        else if (key == "HEIGHT") ls >> img.height;
        else if (key == "DEPTH") ls >> img.depth;
        else if (key == "MAXVAL") ls >> img.maxval;
        else if (key == "TUPLTYPE") ls >> img.tupltype;
    }
    if (img.width <= 0 || img.height <= 0 || img.depth <= 0 || img.maxval != 65535) {
        throw DataError("malformed frame file header: " + path);
    }
    const size_t n = static_cast<size_t>(img.width) * img.height * img.depth;
    std::vector<unsigned char> buf(n * 2);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size()) {
        throw DataError("malformed frame file (truncated): " + path);
    }
    img.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
        img.samples[i] = static_cast<uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    }
    return img;
}

void write_rgba_frame(const std::string& path, const RgbaVideo& video, int frame) {
    PamImage img;
    img.width    = video.width;
    img.height   = video.height;
    img.depth    = 4;
    img.tupltype = "RGB_ALPHA";
    img.samples.resize(static_cast<size_t>(video.width) * video.height * 4);
    size_t o = 0;
    for (int y = 0; y < video.height; ++y) {
        for (int x = 0; x < video.width; ++x) {
            for (int c = 0; c < 4; ++c) img.samples[o++] = quantize16(video.at(frame, y, x, c));
        }
    }
    write_pam(path, img);
}

void read_rgba_frame(const std::string& path, RgbaVideo& video, int frame) {
    PamImage img = read_pam(path);
    if (img.width != video.width || img.height != video.height || img.depth != 4) {
        throw DataError("frame dimensions do not match manifest: " + path);
    }
    size_t o = 0;
    for (int y = 0; y < video.height; ++y) {
        for (int x = 0; x < video.width; ++x) {
            for (int c = 0; c < 4; ++c) video.at(frame, y, x, c) = dequantize16(img.samples[o++]);
        }
    }
}

namespace {
std::string frame_path(const std::string& dir, int frame) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "/frame_%03d.pam", frame);
    return dir + buf;
}
}  // namespace

void write_video_frames(const std::string& dir, const RgbaVideo& video) {
    for (int f = 0; f < video.frames; ++f) write_rgba_frame(frame_path(dir, f), video, f);
}

RgbaVideo read_video_frames(const std::string& dir, int frames, int height, int width) {
    RgbaVideo video(frames, height, width);
    for (int f = 0; f < frames; ++f) read_rgba_frame(frame_path(dir, f), video, f);
    return video;
}

void write_checker_preview(const std::string& path, const RgbaVideo& video, int frame) {
    PamImage img;
    img.width    = video.width;
    img.height   = video.height;
    img.depth    = 3;
    img.tupltype = "RGB";
    img.samples.resize(static_cast<size_t>(video.width) * video.height * 3);
    size_t o = 0;
    for (int y = 0; y < video.height; ++y) {
        for (int x = 0; x < video.width; ++x) {
            const double checker = ((x / 2 + y / 2) % 2 == 0) ? 0.4 : 0.6;
            const double a       = video.at(frame, y, x, 3);
            for (int c = 0; c < 3; ++c) {
                img.samples[o++] = quantize16(video.at(frame, y, x, c) * a + checker * (1.0 - a));
            }
        }
    }
    write_pam(path, img);
}

uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for hashing: " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
        if (!in) break;
    }
    return h;
}

}  // namespace rgbadit
