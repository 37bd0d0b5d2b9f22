#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "optcwm/common.hpp"
#include "optcwm/image.hpp"

namespace optcwm {

// Square non-overlapping patch grid. Patch index is row-major over the grid;
// within a patch-matrix row, the column of pixel (py, px) channel ch is
// (py * patch_size + px) * 3 + ch.
struct PatchGrid {
    int patch_size = 0;
    int rows = 0;
    int cols = 0;

    static PatchGrid for_frame(int h, int w, int patch_size);

    int num_patches() const { return rows * cols; }
    int patch_dim() const { return patch_size * patch_size * 3; }

    int patch_of(int r, int c) const { return (r / patch_size) * cols + (c / patch_size); }
    std::pair<int, int> patch_origin(int p) const {
        return {(p / cols) * patch_size, (p % cols) * patch_size};
    }
    // flattened location of pixel (r,c,ch) inside the patch matrix
    std::pair<int, int> element_of(int r, int c, int ch) const {
        int pr = r % patch_size, pc = c % patch_size;
        return {patch_of(r, c), (pr * patch_size + pc) * 3 + ch};
    }
};

Mat patchify(const Image& frame, const PatchGrid& grid);
Image unpatchify(const Mat& patches, const PatchGrid& grid);

// Per-patch visibility for a two-frame input. alpha_reveal is the fraction of
// frame-2 patches left visible (0.10 reproduces the reference 90% masking).
struct MaskSpec {
    std::vector<std::uint8_t> visible_f1;
    std::vector<std::uint8_t> visible_f2;
    Scalar alpha_reveal = 1.0;

    int count_visible_f1() const;
    int count_visible_f2() const;

    std::vector<std::uint8_t> to_bitset() const;
    static MaskSpec from_bitset(const std::vector<std::uint8_t>& bytes);
};

MaskSpec sample_asymmetric_mask(const PatchGrid& grid, Scalar alpha_reveal, std::uint64_t seed);
// mask_fraction of patches hidden at the SAME locations in both frames
MaskSpec sample_tube_mask(const PatchGrid& grid, Scalar mask_fraction, std::uint64_t seed);
// independent per-frame draws of hidden patches
MaskSpec sample_random_mask(const PatchGrid& grid, Scalar frac_f1, Scalar frac_f2, std::uint64_t seed);

// Patch matrices with masked rows zeroed. The zeros are placeholders only:
// the predictor substitutes its learnable mask token wherever visible=false.
struct MaskedInput {
    Mat f1_patches;
    Mat f2_patches;
    MaskSpec mask;
};

MaskedInput apply_mask(const FramePair& pair, const MaskSpec& mask, const PatchGrid& grid);

}  // namespace optcwm
