#include "optcwm/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace optcwm {

void validate_frame(const Frame& f, int patch_size) {
    if (f.h <= 0 || f.w <= 0) throw DataError("frame: empty");
    if (patch_size > 0 && (f.h % patch_size != 0 || f.w % patch_size != 0))
        throw DataError("frame: dims not a multiple of patch size");
    for (Scalar v : f.px) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw DataError("frame: pixel outside [0,1]");
    }
}

void validate_pair(const FramePair& p, int patch_size) {
    validate_frame(p.first, patch_size);
    validate_frame(p.second, patch_size);
    if (p.first.h != p.second.h || p.first.w != p.second.w)
        throw DataError("frame pair: resolution mismatch");
    if (p.gap_ms < 0 || p.gap_frames < 1) throw DataError("frame pair: bad gap");
}

Scalar sample_bilinear(const Image& img, Scalar r, Scalar c, int ch) {
    r = std::clamp(r, Scalar(0), Scalar(img.h - 1));
    c = std::clamp(c, Scalar(0), Scalar(img.w - 1));
    int r0 = static_cast<int>(std::floor(r));
    int c0 = static_cast<int>(std::floor(c));
    int r1 = std::min(r0 + 1, img.h - 1);
    int c1 = std::min(c0 + 1, img.w - 1);
    Scalar fr = r - r0, fc = c - c0;
    return (1 - fr) * ((1 - fc) * img.at(r0, c0, ch) + fc * img.at(r0, c1, ch)) +
           fr * ((1 - fc) * img.at(r1, c0, ch) + fc * img.at(r1, c1, ch));
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    Image out(out_h, out_w);
    const Scalar sr = static_cast<Scalar>(img.h) / out_h;
    const Scalar sc = static_cast<Scalar>(img.w) / out_w;
    for (int r = 0; r < out_h; ++r) {
        Scalar src_r = (r + 0.5) * sr - 0.5;
        for (int c = 0; c < out_w; ++c) {
            Scalar src_c = (c + 0.5) * sc - 0.5;
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = sample_bilinear(img, src_r, src_c, ch);
        }
    }
    return out;
}

Image crop(const Image& img, int r0, int c0, int ch_, int cw_) {
    if (r0 < 0 || c0 < 0 || r0 + ch_ > img.h || c0 + cw_ > img.w) throw DataError("crop: out of bounds");
    Image out(ch_, cw_);
    for (int r = 0; r < ch_; ++r)
        for (int c = 0; c < cw_; ++c)
            for (int k = 0; k < 3; ++k) out.at(r, c, k) = img.at(r0 + r, c0 + c, k);
    return out;
}

Image clamp01(Image img) {
    for (Scalar& v : img.px) v = std::clamp(v, Scalar(0), Scalar(1));
    return img;
}

Scalar image_mse(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w) throw DataError("image_mse: shape mismatch");
    Scalar s = 0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        Scalar d = a.px[i] - b.px[i];
        s += d * d;
    }
    return s / static_cast<Scalar>(a.px.size());
}

std::uint64_t hash_image(const Image& img, std::uint64_t h) {
    int dims[2] = {img.h, img.w};
    h = fnv1a(dims, sizeof(dims), h);
    return fnv1a(img.px.data(), img.px.size() * sizeof(Scalar), h);
}

namespace {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
}  // namespace

Image load_png(const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("load_png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("load_png: init failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("load_png: info failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("load_png: decode error in " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<png_byte> rowbuf(png_get_rowbytes(png, info));
    Image img(static_cast<int>(h), static_cast<int>(w));
    for (png_uint_32 r = 0; r < h; ++r) {
        png_read_row(png, rowbuf.data(), nullptr);
        for (png_uint_32 c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                img.at(static_cast<int>(r), static_cast<int>(c), ch) = rowbuf[c * 3 + ch] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void save_png(const Image& img, const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("save_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("save_png: init failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("save_png: info failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("save_png: encode error for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> rowbuf(static_cast<std::size_t>(img.w) * 3);
    for (int r = 0; r < img.h; ++r) {
        for (int c = 0; c < img.w; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                Scalar v = std::clamp(img.at(r, c, ch), Scalar(0), Scalar(1));
                rowbuf[static_cast<std::size_t>(c) * 3 + ch] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(png, rowbuf.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace optcwm
