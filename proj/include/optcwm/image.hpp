#pragma once

#include <string>
#include <vector>

#include "optcwm/common.hpp"

namespace optcwm {

// Interleaved RGB raster, values expected in [0,1] for frames. Index layout
// (r * w + c) * 3 + ch.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<Scalar> px;

    Image() = default;
    Image(int height, int width, Scalar fill = 0.0)
        : h(height), w(width), px(static_cast<std::size_t>(height) * width * 3, fill) {}

    Scalar& at(int r, int c, int ch) { return px[(static_cast<std::size_t>(r) * w + c) * 3 + ch]; }
    Scalar at(int r, int c, int ch) const { return px[(static_cast<std::size_t>(r) * w + c) * 3 + ch]; }

    bool inside(Scalar r, Scalar c) const { return r >= 0 && c >= 0 && r <= h - 1 && c <= w - 1; }
    std::size_t size() const { return px.size(); }
};

// A Frame is an Image satisfying the frame invariants; validation is explicit.
using Frame = Image;

struct FramePair {
    Frame first;
    Frame second;
    Scalar gap_ms = 150.0;
    int gap_frames = 1;
};

void validate_frame(const Frame& f, int patch_size);
void validate_pair(const FramePair& p, int patch_size);

// Bilinear sampling with pixel-center convention (centers at integer coords,
// clamped at borders).
Scalar sample_bilinear(const Image& img, Scalar r, Scalar c, int ch);
Image resize_bilinear(const Image& img, int out_h, int out_w);
Image crop(const Image& img, int r0, int c0, int ch_, int cw_);

Image clamp01(Image img);
Scalar image_mse(const Image& a, const Image& b);

std::uint64_t hash_image(const Image& img, std::uint64_t h = 0xcbf29ce484222325ull);

// 8-bit RGB PNG I/O; values mapped by /255 on load and round(v*255) on save
// after clamping.
Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);

}  // namespace optcwm
