#pragma once

#include <optional>
#include <vector>

#include "optcwm/autograd.hpp"
#include "optcwm/corpus.hpp"
#include "optcwm/patchwork.hpp"
#include "optcwm/rgb_predictor.hpp"

namespace optcwm {

struct GaussianBounds {
    Scalar a_max = 1.0;
    Scalar r_max = 4.0;
    Scalar sigma_min = 0.5;
    Scalar sigma_max = 8.0;

    static GaussianBounds defaults_for(int patch_size) {
        GaussianBounds b;
        b.r_max = patch_size;
        b.sigma_max = 2.0 * patch_size;
        return b;
    }
};

struct GaussianComponent {
    Scalar amp[3] = {0, 0, 0};
    Scalar drow = 0, dcol = 0;
    Scalar sigma = 1.0;
};

struct GaussianPerturbationParams {
    std::vector<GaussianComponent> components;
    int K() const { return static_cast<int>(components.size()); }
};

// Raw/squashed parameter vector layout (1 x 6K):
//   [a_0r..a_{K-1}b (3K) | dr_0, dc_0, ..., dr_{K-1}, dc_{K-1} (2K) | sigma_0..sigma_{K-1} (K)]
GaussianPerturbationParams unpack_params(const Mat& squashed, int K);

// MLP_theta: encoder token -> squashed Gaussian parameters.
class PerturbationGenerator {
public:
    PerturbationGenerator(int token_dim, int hidden_dim, int num_components, GaussianBounds bounds,
                          std::uint64_t seed);

    ag::Var squashed_params_ag(ag::Tape& t, ag::Var token) const;  // 1 x 6K
    GaussianPerturbationParams params_for_token(const Mat& token) const;

    ag::ParamStore& params() { return params_; }
    const ag::ParamStore& params() const { return params_; }
    int num_components() const { return K_; }
    int token_dim() const { return token_dim_; }
    const GaussianBounds& bounds() const { return bounds_; }

private:
    int token_dim_, hidden_dim_, K_;
    GaussianBounds bounds_;
    ag::ParamStore params_;
    ag::Var w1_, b1_, w2_, b2_, w3_, b3_;
};

// Additive field of colored Gaussians centered near p1.
Image render_perturbation(const GaussianPerturbationParams& params, PixelLoc p1, int h, int w);
// Differentiable render directly into patch-matrix layout.
ag::Var render_perturbation_ag(ag::Tape& t, ag::Var squashed, int K, PixelLoc p1,
                               const PatchGrid& grid);

struct DifferenceImage {
    Mat values;  // H x W, nonnegative
};

DifferenceImage compute_difference_image(const Frame& pred_factual, const Frame& pred_counterfactual);
DifferenceImage difference_from_patches(const Mat& pred_factual, const Mat& pred_counterfactual,
                                        const PatchGrid& grid);
ag::Var difference_image_ag(ag::Tape& t, ag::Var pred_counterfactual, const Mat& pred_factual,
                            const PatchGrid& grid);

PixelLoc softargmax(const Mat& delta, Scalar tau);
ag::Var softargmax_ag(ag::Tape& t, ag::Var delta, Scalar tau);  // 1x2 (row, col)

// lexicographic-lowest tie break; `degenerate` set when delta is identically zero
PixelLoc argmax_peak(const Mat& delta, bool* degenerate = nullptr);

struct ProbeConfig {
    Scalar tau = 0.05;
    bool tau_adaptive = false;  // tau = max(0.01 * max(delta), 1e-6)
    Scalar occlusion_threshold = 0.05;
    Scalar mask_alpha_reveal = 0.1;
    bool independent_token_mask = false;
    int num_masks = 1;
    int num_scales = 0;
    Scalar crop_factor = 0.75;
    enum class Mode { Argmax, Softargmax } mode = Mode::Argmax;
    std::uint64_t seed = 0;
};

struct PerturbationSpec {
    enum class Kind { FixedSquare, Learned, Manual } kind = Kind::FixedSquare;
    Scalar color[3] = {0.8, 0.0, 0.0};
    int size = 2;
    const PerturbationGenerator* generator = nullptr;
    GaussianPerturbationParams manual;

    static PerturbationSpec fixed_square(Scalar r, Scalar g, Scalar b, int size);
    static PerturbationSpec learned(const PerturbationGenerator& gen);
    static PerturbationSpec manual_gaussian(GaussianPerturbationParams p);
};

struct FlowPrediction {
    PixelLoc p1;
    PixelLoc p2_hat;
    FlowVec flow;
    Scalar occlusion_score = 0;  // mean over masks of max(delta_i)
    bool occluded = false;
    bool degenerate = false;
    std::vector<Scalar> per_mask_max;
    std::vector<PixelLoc> scale_trace;
    int num_masks = 1;
    int num_scales = 0;
};

// Two predictor calls sharing one mask draw.
std::pair<FlowPrediction, DifferenceImage> flow_probe_single(const NextFramePredictor& model,
                                                             const FramePair& pair,
                                                             const MaskSpec& mask, PixelLoc p1,
                                                             const PerturbationSpec& spec,
                                                             const ProbeConfig& config);

FlowPrediction flow_probe_multimask(const NextFramePredictor& model, const FramePair& pair,
                                    PixelLoc p1, const PerturbationSpec& spec,
                                    const ProbeConfig& config);

FlowPrediction flow_probe_multiscale(const NextFramePredictor& model, const FramePair& pair,
                                     PixelLoc p1, const PerturbationSpec& spec,
                                     const ProbeConfig& config);

// Differentiable single-mask FLOW_theta: token -> MLP -> render -> predict ->
// delta -> softargmax. Returns the 1x2 flow (row, col displacement).
ag::Var differentiable_flow_ag(ag::Tape& t, const NextFramePredictor& model, const Mat& f1_patches,
                               const Mat& f2_patches, const MaskSpec& mask, PixelLoc p1,
                               const PerturbationGenerator& gen, const Mat& token, Scalar tau);

struct PerturbationMap {
    int map_h = 0, map_w = 0, stride = 1;
    Mat amp_r, amp_g, amp_b;  // map_h x map_w
    Mat sigma;
    Mat dr, dc;
};

PerturbationMap export_perturbation_map(const PerturbationGenerator& gen,
                                        const NextFramePredictor& model, const FramePair& pair,
                                        int stride, const ProbeConfig& config);

}  // namespace optcwm
