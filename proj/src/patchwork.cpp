#include "optcwm/patchwork.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace optcwm {

PatchGrid PatchGrid::for_frame(int h, int w, int patch_size) {
    if (patch_size <= 0) throw ConfigError("patch grid: patch_size must be positive");
    if (h % patch_size != 0 || w % patch_size != 0)
        throw ConfigError("patch grid: frame dims not divisible by patch size");
    return PatchGrid{patch_size, h / patch_size, w / patch_size};
}

Mat patchify(const Image& frame, const PatchGrid& grid) {
    if (frame.h != grid.rows * grid.patch_size || frame.w != grid.cols * grid.patch_size)
        throw ConfigError("patchify: grid does not match frame");
    Mat out(grid.num_patches(), grid.patch_dim());
    const int ps = grid.patch_size;
    for (int p = 0; p < grid.num_patches(); ++p) {
        auto [r0, c0] = grid.patch_origin(p);
        for (int pr = 0; pr < ps; ++pr)
            for (int pc = 0; pc < ps; ++pc)
                for (int ch = 0; ch < 3; ++ch)
                    out(p, (pr * ps + pc) * 3 + ch) = frame.at(r0 + pr, c0 + pc, ch);
    }
    return out;
}

Image unpatchify(const Mat& patches, const PatchGrid& grid) {
    if (patches.rows() != grid.num_patches() || patches.cols() != grid.patch_dim())
        throw ConfigError("unpatchify: shape does not match grid");
    Image out(grid.rows * grid.patch_size, grid.cols * grid.patch_size);
    const int ps = grid.patch_size;
    for (int p = 0; p < grid.num_patches(); ++p) {
        auto [r0, c0] = grid.patch_origin(p);
        for (int pr = 0; pr < ps; ++pr)
            for (int pc = 0; pc < ps; ++pc)
                for (int ch = 0; ch < 3; ++ch)
                    out.at(r0 + pr, c0 + pc, ch) = patches(p, (pr * ps + pc) * 3 + ch);
    }
    return out;
}

int MaskSpec::count_visible_f1() const {
    return static_cast<int>(std::count(visible_f1.begin(), visible_f1.end(), 1));
}
int MaskSpec::count_visible_f2() const {
    return static_cast<int>(std::count(visible_f2.begin(), visible_f2.end(), 1));
}

std::vector<std::uint8_t> MaskSpec::to_bitset() const {
    auto pack = [](const std::vector<std::uint8_t>& bits, std::vector<std::uint8_t>& out) {
        std::uint32_t n = static_cast<std::uint32_t>(bits.size());
        out.insert(out.end(), reinterpret_cast<std::uint8_t*>(&n), reinterpret_cast<std::uint8_t*>(&n) + 4);
        std::uint8_t acc = 0;
        for (std::size_t i = 0; i < bits.size(); ++i) {
            if (bits[i]) acc |= static_cast<std::uint8_t>(1u << (i % 8));
            if (i % 8 == 7 || i + 1 == bits.size()) {
                out.push_back(acc);
                acc = 0;
            }
        }
    };
    std::vector<std::uint8_t> out;
    pack(visible_f1, out);
    pack(visible_f2, out);
    double a = static_cast<double>(alpha_reveal);
    out.insert(out.end(), reinterpret_cast<std::uint8_t*>(&a), reinterpret_cast<std::uint8_t*>(&a) + 8);
    return out;
}

MaskSpec MaskSpec::from_bitset(const std::vector<std::uint8_t>& bytes) {
    std::size_t off = 0;
    auto unpack = [&](std::vector<std::uint8_t>& bits) {
        if (off + 4 > bytes.size()) throw DataError("mask bitset: truncated header");
        std::uint32_t n;
        std::memcpy(&n, bytes.data() + off, 4);
        off += 4;
        std::size_t nbytes = (n + 7) / 8;
        if (off + nbytes > bytes.size()) throw DataError("mask bitset: truncated payload");
        bits.assign(n, 0);
        for (std::uint32_t i = 0; i < n; ++i)
            bits[i] = (bytes[off + i / 8] >> (i % 8)) & 1u;
        off += nbytes;
    };
    MaskSpec m;
    unpack(m.visible_f1);
    unpack(m.visible_f2);
    if (off + 8 > bytes.size()) throw DataError("mask bitset: truncated alpha");
    double a;
    std::memcpy(&a, bytes.data() + off, 8);
    m.alpha_reveal = a;
    return m;
}

MaskSpec sample_asymmetric_mask(const PatchGrid& grid, Scalar alpha_reveal, std::uint64_t seed) {
    if (alpha_reveal <= 0.0 || alpha_reveal > 1.0)
        throw ConfigError("asymmetric mask: alpha_reveal must be in (0,1]");
    const int P = grid.num_patches();
    int k = static_cast<int>(std::lround(alpha_reveal * P));
    if (k < 1) k = 1;  // never reveal zero patches
    MaskSpec m;
    m.alpha_reveal = alpha_reveal;
    m.visible_f1.assign(static_cast<std::size_t>(P), 1);
    m.visible_f2.assign(static_cast<std::size_t>(P), 0);
    Rng rng(seed);
    for (int i : rng.sample_without_replacement(P, k)) m.visible_f2[static_cast<std::size_t>(i)] = 1;
    return m;
}

MaskSpec sample_tube_mask(const PatchGrid& grid, Scalar mask_fraction, std::uint64_t seed) {
    if (mask_fraction < 0.0 || mask_fraction >= 1.0)
        throw ConfigError("tube mask: fraction must be in [0,1)");
    const int P = grid.num_patches();
    int hidden = static_cast<int>(std::lround(mask_fraction * P));
    MaskSpec m;
    m.alpha_reveal = 1.0 - mask_fraction;
    m.visible_f1.assign(static_cast<std::size_t>(P), 1);
    m.visible_f2.assign(static_cast<std::size_t>(P), 1);
    Rng rng(seed);
    for (int i : rng.sample_without_replacement(P, hidden)) {
        m.visible_f1[static_cast<std::size_t>(i)] = 0;
        m.visible_f2[static_cast<std::size_t>(i)] = 0;
    }
    return m;
}

MaskSpec sample_random_mask(const PatchGrid& grid, Scalar frac_f1, Scalar frac_f2, std::uint64_t seed) {
    if (frac_f1 < 0.0 || frac_f1 >= 1.0 || frac_f2 < 0.0 || frac_f2 >= 1.0)
        throw ConfigError("random mask: fractions must be in [0,1)");
    const int P = grid.num_patches();
    MaskSpec m;
    m.alpha_reveal = 1.0 - frac_f2;
    m.visible_f1.assign(static_cast<std::size_t>(P), 1);
    m.visible_f2.assign(static_cast<std::size_t>(P), 1);
    Rng rng(seed);
    for (int i : rng.sample_without_replacement(P, static_cast<int>(std::lround(frac_f1 * P))))
        m.visible_f1[static_cast<std::size_t>(i)] = 0;
    for (int i : rng.sample_without_replacement(P, static_cast<int>(std::lround(frac_f2 * P))))
        m.visible_f2[static_cast<std::size_t>(i)] = 0;
    return m;
}

MaskedInput apply_mask(const FramePair& pair, const MaskSpec& mask, const PatchGrid& grid) {
    const int P = grid.num_patches();
    if (static_cast<int>(mask.visible_f1.size()) != P || static_cast<int>(mask.visible_f2.size()) != P)
        throw ConfigError("apply_mask: mask does not match grid");
    MaskedInput out;
    out.f1_patches = patchify(pair.first, grid);
    out.f2_patches = patchify(pair.second, grid);
    for (int p = 0; p < P; ++p) {
        if (!mask.visible_f1[static_cast<std::size_t>(p)]) out.f1_patches.row(p).setZero();
        if (!mask.visible_f2[static_cast<std::size_t>(p)]) out.f2_patches.row(p).setZero();
    }
    out.mask = mask;
    return out;
}

}  // namespace optcwm
