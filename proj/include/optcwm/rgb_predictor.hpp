#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "optcwm/autograd.hpp"
#include "optcwm/corpus.hpp"
#include "optcwm/patchwork.hpp"
#include "optcwm/transformer.hpp"

namespace optcwm {

enum class PosEncKind { Learnable, Sinusoidal };

struct PredictorConfig {
    int patch_size = 4;
    int input_h = 32;
    int input_w = 32;
    int embed_dim_enc = 128;
    int heads_enc = 4;
    int depth_enc = 4;
    int embed_dim_dec = 64;
    int heads_dec = 2;
    int depth_dec = 2;
    PosEncKind pos_enc = PosEncKind::Learnable;
    std::uint64_t init_seed = 0;

    void validate() const;
    PatchGrid grid() const { return PatchGrid::for_frame(input_h, input_w, patch_size); }

    // 32x32 preset that trains on a laptop
    static PredictorConfig desk();
    // ViT-B mirror of the published architecture (patch 8, 256 input)
    static PredictorConfig paper_scale();

    std::string to_json() const;
    static PredictorConfig from_json(const std::string& text);
};

// Two-frame next-frame predictor interface. All image content moves through
// patch matrices (one row per patch, see PatchGrid for the element layout).
class NextFramePredictor {
public:
    virtual ~NextFramePredictor() = default;

    virtual const PatchGrid& grid() const = 0;

    // Differentiable in f1_patches; frame-2 content and mask are constants.
    virtual ag::Var predict_ag(ag::Tape& t, ag::Var f1_patches, const Mat& f2_patches,
                               const MaskSpec& mask) const = 0;

    // Inference convenience wrapper.
    Mat predict(const Mat& f1_patches, const Mat& f2_patches, const MaskSpec& mask) const;

    virtual bool provides_tokens() const { return false; }
    // Last-encoder-block feature of the frame-1 patch containing p1.
    virtual Mat encoder_token(const Mat& f1_patches, const Mat& f2_patches, const MaskSpec& mask,
                              PixelLoc p1) const;
    // Factual prediction plus all frame-1 tokens (P x embed_dim) in one pass.
    virtual Mat predict_with_tokens(const Mat& f1_patches, const Mat& f2_patches,
                                    const MaskSpec& mask, Mat* tokens_out) const;
};

struct TrainSchedule {
    Scalar base_lr = 1.5e-4;  // linear scaling rule: lr = base_lr * batch / 256
    Scalar weight_decay = 0.05;
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.95;
    int warmup_epochs = 40;
    int total_epochs = 800;
    int steps_per_epoch = 1;
    int batch = 4096;

    Scalar max_lr() const { return base_lr * static_cast<Scalar>(batch) / 256.0; }
    std::int64_t total_steps() const { return static_cast<std::int64_t>(total_epochs) * steps_per_epoch; }
    std::int64_t warmup_steps() const { return static_cast<std::int64_t>(warmup_epochs) * steps_per_epoch; }
    void validate() const;
};

struct MaskPolicy {
    enum class Kind { Asymmetric, Tube, Random } kind = Kind::Asymmetric;
    Scalar alpha_reveal = 0.1;  // asymmetric
    Scalar frac_f1 = 0.75;      // tube uses frac_f1 for both frames
    Scalar frac_f2 = 0.75;

    MaskSpec sample(const PatchGrid& grid, std::uint64_t seed) const;
    static MaskPolicy asymmetric(Scalar alpha_reveal);
    static MaskPolicy tube(Scalar fraction);
    static MaskPolicy random(Scalar f1, Scalar f2);
};

class RgbPredictor : public NextFramePredictor {
public:
    explicit RgbPredictor(const PredictorConfig& config);

    const PatchGrid& grid() const override { return grid_; }
    const PredictorConfig& config() const { return cfg_; }

    ag::Var predict_ag(ag::Tape& t, ag::Var f1_patches, const Mat& f2_patches,
                       const MaskSpec& mask) const override;
    bool provides_tokens() const override { return true; }
    Mat encoder_token(const Mat& f1_patches, const Mat& f2_patches, const MaskSpec& mask,
                      PixelLoc p1) const override;
    Mat predict_with_tokens(const Mat& f1_patches, const Mat& f2_patches, const MaskSpec& mask,
                            Mat* tokens_out) const override;

    // differentiable path that also returns frame-1 encoder tokens
    ag::Var forward_ag(ag::Tape& t, ag::Var f1_patches, const Mat& f2_patches, const MaskSpec& mask,
                       ag::Var* tokens_out) const;

    ag::ParamStore& params() { return params_; }
    const ag::ParamStore& params() const { return params_; }
    std::uint64_t param_hash() const { return params_.content_hash(); }

    void set_frozen(bool frozen);
    bool frozen() const { return frozen_; }

    RgbPredictor clone() const;
    void load_params(const ag::ParamStore& src) { params_.load_values(src); }

    // Bicubic regrid of the learnable positional tables to a new resolution.
    RgbPredictor interpolate_positional_embeddings(int new_h, int new_w) const;

private:
    RgbPredictor(const PredictorConfig& config, const ag::ParamStore& params);
    void build_params(std::uint64_t seed);
    void bind();

    PredictorConfig cfg_;
    PatchGrid grid_;
    ag::ParamStore params_;
    bool frozen_ = false;

    struct Handles {
        ag::Var embed_w, embed_b;
        ag::Var mask_token;
        ag::Var pos_enc;      // learnable mode: 2P x D_enc
        ag::Var frame_embed;  // sinusoidal mode: 2 x D_enc
        std::vector<tfm::BlockParams> enc_blocks;
        tfm::LnParams enc_norm;
        ag::Var enc2dec_w, enc2dec_b;
        ag::Var dec_pos;        // learnable mode: 2P x D_dec
        ag::Var dec_frame_embed;  // sinusoidal mode
        std::vector<tfm::BlockParams> dec_blocks;
        tfm::LnParams dec_norm;
        ag::Var head_w, head_b;
    } h_;
    Mat sin_pos_enc_, sin_pos_dec_;  // sinusoidal tables (P x D)
};

// Test-only predictor that forward-warps frame 1 by a known ground-truth
// motion field; makes probe behavior exact without any training.
class OracleWarpPredictor : public NextFramePredictor {
public:
    OracleWarpPredictor(const DenseMotionTruth& warp, int patch_size);

    const PatchGrid& grid() const override { return grid_; }
    ag::Var predict_ag(ag::Tape& t, ag::Var f1_patches, const Mat& f2_patches,
                       const MaskSpec& mask) const override;

private:
    PatchGrid grid_;
    // per output element: source element in the frame-1 patch matrix
    std::vector<std::pair<int, int>> src_elem_;  // (row, col) per (dest row * cols + dest col)
};

std::unique_ptr<OracleWarpPredictor> make_oracle_warp_predictor(const DenseMotionTruth& warp,
                                                                int patch_size);

// --- training -----------------------------------------------------------------

using PairStream = std::function<FramePair(std::int64_t index)>;

struct RgbTrainConfig {
    TrainSchedule schedule;
    MaskPolicy policy;
    std::uint64_t seed = 0;
    int jobs = 0;
    int log_every = 25;
    int checkpoint_every = 0;  // steps; 0 = final only
    int val_batch = 8;
    std::string out_dir;  // empty: no files written
};

struct StepLog {
    std::int64_t step = 0;
    Scalar lr = 0;
    Scalar loss = 0;
};

struct RgbTrainResult {
    std::vector<StepLog> log;
    Scalar val_loss_init = 0;
    Scalar val_loss_final = 0;
    std::vector<std::string> checkpoint_paths;
    bool aborted = false;
    std::int64_t steps_run = 0;
};

RgbTrainResult train_rgb(RgbPredictor& model, const PairStream& stream, const RgbTrainConfig& config);

Mat extract_patch_token(const NextFramePredictor& model, const Mat& f1_patches,
                        const Mat& f2_patches, const MaskSpec& mask, PixelLoc p1);

}  // namespace optcwm
