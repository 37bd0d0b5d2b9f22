#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "optcwm/autograd.hpp"
#include "optcwm/corpus.hpp"
#include "optcwm/patchwork.hpp"
#include "optcwm/probe.hpp"
#include "optcwm/rgb_predictor.hpp"
#include "optcwm/transformer.hpp"

namespace optcwm {

struct LayerSchedule {
    bool self1 = false;
    bool self2 = false;
    bool cross_s1_from_s2 = false;  // stream 1 queries attend stream 2
    bool cross_s2_from_s1 = false;
};

struct FlowPredictorConfig {
    int patch_size = 4;
    int input_h = 32;
    int input_w = 32;
    int enc_dim = 128;
    int enc_heads = 4;
    int dec_dim = 64;
    int dec_heads = 2;
    std::vector<LayerSchedule> enc_layers;
    std::vector<LayerSchedule> dec_layers;
    std::uint64_t init_seed = 0;

    void validate() const;
    PatchGrid grid() const { return PatchGrid::for_frame(input_h, input_w, patch_size); }

    // encoder: groups of [full two-stream layer, self-only follow-ups]
    static std::vector<LayerSchedule> encoder_groups(int groups, int layers_per_group);
    static FlowPredictorConfig desk();
    static FlowPredictorConfig paper_scale();

    std::string to_json() const;
    static FlowPredictorConfig from_json(const std::string& text);
};

struct SparseFlowConditioning {
    struct Entry {
        int patch = 0;
        FlowVec flow;  // px at input resolution
    };
    std::vector<Entry> entries;
    int collisions = 0;

    int density() const { return static_cast<int>(entries.size()); }
};

// One entry per distinct patch containing a query point; first point wins.
SparseFlowConditioning encode_conditioning(const std::vector<PixelLoc>& points,
                                           const std::vector<FlowVec>& flows, const PatchGrid& grid);

// Two-stream transformer Psi^flow: stream 1 carries frame-1 RGB, stream 2
// carries sparse flow entries concatenated with the same frame-1 RGB patches.
class FlowPredictor {
public:
    explicit FlowPredictor(const FlowPredictorConfig& config);

    const FlowPredictorConfig& config() const { return cfg_; }
    const PatchGrid& grid() const { return grid_; }
    ag::ParamStore& params() { return params_; }
    const ag::ParamStore& params() const { return params_; }

    // flows: n x 2 Var (row, col px); patch_idx: one per flow row
    ag::Var predict_ag(ag::Tape& t, const Mat& f1_patches, ag::Var flows,
                       const std::vector<int>& patch_idx) const;

    Mat predict(const Mat& f1_patches, const SparseFlowConditioning& cond) const;
    Frame predict_frame(const Frame& first, const SparseFlowConditioning& cond) const;

    FlowPredictor clone() const;

private:
    FlowPredictor(const FlowPredictorConfig& config, const ag::ParamStore& params);
    void build_params(std::uint64_t seed);
    void bind();

    FlowPredictorConfig cfg_;
    PatchGrid grid_;
    ag::ParamStore params_;

    struct CrossHandles {
        tfm::LnParams ln_q, ln_kv, ln_mlp;
        tfm::AttnParams attn;
        tfm::MlpParams mlp;
    };
    struct LayerHandles {
        std::optional<tfm::BlockParams> self1, self2;
        std::optional<CrossHandles> c12, c21;
    };
    struct Handles {
        ag::Var embed1_w, embed1_b;
        ag::Var embed2_w, embed2_b;  // (2 + patch_dim) -> enc_dim
        ag::Var mask_token2;
        std::vector<LayerHandles> enc, dec;
        ag::Var proj1_w, proj1_b, proj2_w, proj2_b;  // enc_dim -> dec_dim
        tfm::LnParams out_norm;
        ag::Var head_w, head_b;
    } h_;
    Mat pos_enc_, pos_dec_;  // sinusoidal

    void run_layers(ag::Tape& t, ag::Var& x1, ag::Var& x2,
                    const std::vector<LayerHandles>& layers) const;
};

// --- joint bootstrap ------------------------------------------------------------

struct JointTrainConfig {
    int steps = 200;
    int batch_pairs = 2;
    int n_points = 8;
    Scalar max_lr = 3e-4;
    Scalar weight_decay = 0.05;
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.95;
    Scalar warmup_frac = 0.1;
    Scalar tau = 0.05;
    Scalar mask_alpha_reveal = 0.1;
    std::uint64_t seed = 0;
    int log_every = 10;
    int val_every = 0;   // 0: only at start/end
    int val_pairs = 4;
    int val_points = 8;
    std::string out_dir;
    bool freeze_generator = false;  // train eta only (supervised-sanity variant)
    bool oracle_flows = false;      // bypass FLOW_theta, feed ground-truth flows
};

struct JointLogRow {
    int step = 0;
    Scalar lr = 0;
    Scalar mse = 0;
    Scalar grad_norm = 0;
    Scalar flow_err = -1;  // mean px error vs oracle when available
};

struct JointTrainResult {
    std::vector<JointLogRow> log;
    Scalar val_mse_init = 0, val_mse_final = 0;
    Scalar val_flow_err_init = -1, val_flow_err_final = -1;
    bool aborted = false;
    int steps_run = 0;
    std::string checkpoint_path;
};

// Deterministic supplier of (pair, truth) per index.
using TruthPairStream = std::function<std::pair<FramePair, DenseMotionTruth>(std::int64_t)>;

struct JointTrainState {
    PerturbationGenerator* generator = nullptr;
    FlowPredictor* flow_model = nullptr;
    const RgbPredictor* frozen_rgb = nullptr;
};

JointTrainResult joint_train(JointTrainState state, const TruthPairStream& stream,
                             const JointTrainConfig& config);

// bundles theta + eta and records the frozen RGB hash it was trained against
void save_joint_checkpoint(const std::string& path, const PerturbationGenerator& gen,
                           const FlowPredictor& flow_model, std::uint64_t rgb_hash, int step);
// verifies the recorded RGB hash matches `rgb_hash`
void load_joint_checkpoint(const std::string& path, PerturbationGenerator& gen,
                           FlowPredictor& flow_model, std::uint64_t rgb_hash);

}  // namespace optcwm
