#include "optcwm/rgb_predictor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "optcwm/serialize.hpp"

namespace optcwm {

using ag::Tape;
using ag::Var;

void PredictorConfig::validate() const {
    if (patch_size <= 0 || input_h % patch_size != 0 || input_w % patch_size != 0)
        throw ConfigError("predictor: patch size must divide input dims");
    if (embed_dim_enc % heads_enc != 0 || embed_dim_dec % heads_dec != 0)
        throw ConfigError("predictor: dim not divisible by heads");
    if (depth_enc < 1 || depth_dec < 1) throw ConfigError("predictor: depth must be >= 1");
}

PredictorConfig PredictorConfig::desk() {
    PredictorConfig c;
    c.patch_size = 4;
    c.input_h = c.input_w = 32;
    c.embed_dim_enc = 128;
    c.heads_enc = 4;
    c.depth_enc = 4;
    c.embed_dim_dec = 64;
    c.heads_dec = 2;
    c.depth_dec = 2;
    return c;
}

PredictorConfig PredictorConfig::paper_scale() {
    PredictorConfig c;
    c.patch_size = 8;
    c.input_h = c.input_w = 256;
    c.embed_dim_enc = 768;
    c.heads_enc = 12;
    c.depth_enc = 12;
    c.embed_dim_dec = 768;
    c.heads_dec = 12;
    c.depth_dec = 12;
    return c;
}

std::string PredictorConfig::to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = "rgb_predictor";
    j["patch_size"] = patch_size;
    j["input_h"] = input_h;
    j["input_w"] = input_w;
    j["embed_dim_enc"] = embed_dim_enc;
    j["heads_enc"] = heads_enc;
    j["depth_enc"] = depth_enc;
    j["embed_dim_dec"] = embed_dim_dec;
    j["heads_dec"] = heads_dec;
    j["depth_dec"] = depth_dec;
    j["pos_enc"] = pos_enc == PosEncKind::Learnable ? "learnable" : "sinusoidal";
    j["init_seed"] = init_seed;
    return j.dump();
}

PredictorConfig PredictorConfig::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    PredictorConfig c;
    c.patch_size = j.at("patch_size").get<int>();
    c.input_h = j.at("input_h").get<int>();
    c.input_w = j.at("input_w").get<int>();
    c.embed_dim_enc = j.at("embed_dim_enc").get<int>();
    c.heads_enc = j.at("heads_enc").get<int>();
    c.depth_enc = j.at("depth_enc").get<int>();
    c.embed_dim_dec = j.at("embed_dim_dec").get<int>();
    c.heads_dec = j.at("heads_dec").get<int>();
    c.depth_dec = j.at("depth_dec").get<int>();
    c.pos_enc = j.at("pos_enc").get<std::string>() == "learnable" ? PosEncKind::Learnable
                                                                  : PosEncKind::Sinusoidal;
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.validate();
    return c;
}

void TrainSchedule::validate() const {
    if (warmup_epochs > total_epochs) throw ConfigError("schedule: warmup exceeds total epochs");
    if (batch < 1 || steps_per_epoch < 1 || total_epochs < 1) throw ConfigError("schedule: bad sizes");
}

MaskSpec MaskPolicy::sample(const PatchGrid& grid, std::uint64_t seed) const {
    switch (kind) {
        case Kind::Asymmetric:
            return sample_asymmetric_mask(grid, alpha_reveal, seed);
        case Kind::Tube:
            return sample_tube_mask(grid, frac_f1, seed);
        case Kind::Random:
            return sample_random_mask(grid, frac_f1, frac_f2, seed);
    }
    throw ConfigError("mask policy: unknown kind");
}

MaskPolicy MaskPolicy::asymmetric(Scalar alpha_reveal) {
    MaskPolicy p;
    p.kind = Kind::Asymmetric;
    p.alpha_reveal = alpha_reveal;
    return p;
}
MaskPolicy MaskPolicy::tube(Scalar fraction) {
    MaskPolicy p;
    p.kind = Kind::Tube;
    p.frac_f1 = p.frac_f2 = fraction;
    return p;
}
MaskPolicy MaskPolicy::random(Scalar f1, Scalar f2) {
    MaskPolicy p;
    p.kind = Kind::Random;
    p.frac_f1 = f1;
    p.frac_f2 = f2;
    return p;
}

Mat NextFramePredictor::predict(const Mat& f1_patches, const Mat& f2_patches,
                                const MaskSpec& mask) const {
    Tape t;
    Var f1 = Tape::constant(f1_patches);
    return predict_ag(t, f1, f2_patches, mask)->val;
}

Mat NextFramePredictor::encoder_token(const Mat&, const Mat&, const MaskSpec&, PixelLoc) const {
    throw ConfigError("predictor does not expose encoder tokens");
}

Mat NextFramePredictor::predict_with_tokens(const Mat& f1_patches, const Mat& f2_patches,
                                            const MaskSpec& mask, Mat* tokens_out) const {
    if (tokens_out) throw ConfigError("predictor does not expose encoder tokens");
    return predict(f1_patches, f2_patches, mask);
}

// --- ops local to predictors ---------------------------------------------------

namespace {

// out = x with out.row(i) = token for every i in idx
Var override_rows(Tape& t, Var x, Var token, const std::vector<int>& idx) {
    if (idx.empty()) return x;
    bool rg = x->requires_grad || token->requires_grad;
    Mat v = x->val;
    for (int r : idx) v.row(r) = token->val.row(0);
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        ag::Node* o = out.get();
        auto rows_replaced = idx;
        out->backward = [o, x, token, rows_replaced] {
            std::vector<char> replaced(static_cast<std::size_t>(o->val.rows()), 0);
            for (int r : rows_replaced) replaced[static_cast<std::size_t>(r)] = 1;
            if (x->requires_grad) {
                Mat& g = ag::acc_grad(x);
                for (int r = 0; r < o->grad.rows(); ++r)
                    if (!replaced[static_cast<std::size_t>(r)]) g.row(r) += o->grad.row(r);
            }
            if (token->requires_grad) {
                Mat& g = ag::acc_grad(token);
                for (int r : rows_replaced) g.row(0) += o->grad.row(r);
            }
        };
    }
    return out;
}

std::vector<int> hidden_rows(const std::vector<std::uint8_t>& visible) {
    std::vector<int> out;
    for (std::size_t i = 0; i < visible.size(); ++i)
        if (!visible[i]) out.push_back(static_cast<int>(i));
    return out;
}

Mat normal_init(int rows, int cols, Scalar stddev, Rng& rng) {
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = stddev * rng.normal();
    return m;
}

// Catmull-Rom resample of a (gr x gc) grid stored row-major as (gr*gc) x D.
Mat bicubic_regrid(const Mat& table, int gr, int gc, int nr, int nc) {
    auto tap = [](Scalar p0, Scalar p1, Scalar p2, Scalar p3, Scalar f) {
        return p1 + 0.5 * f * (p2 - p0 + f * (2 * p0 - 5 * p1 + 4 * p2 - p3 + f * (3 * (p1 - p2) + p3 - p0)));
    };
    const int D = static_cast<int>(table.cols());
    Mat out(nr * nc, D);
    for (int r = 0; r < nr; ++r) {
        Scalar sr = gr == nr ? static_cast<Scalar>(r) : (r + 0.5) * gr / nr - 0.5;
        int r1 = static_cast<int>(std::floor(sr));
        Scalar fr = sr - r1;
        for (int c = 0; c < nc; ++c) {
            Scalar sc = gc == nc ? static_cast<Scalar>(c) : (c + 0.5) * gc / nc - 0.5;
            int c1 = static_cast<int>(std::floor(sc));
            Scalar fc = sc - c1;
            for (int d = 0; d < D; ++d) {
                Scalar col[4];
                for (int i = 0; i < 4; ++i) {
                    int rr = std::clamp(r1 - 1 + i, 0, gr - 1);
                    Scalar row[4];
                    for (int j = 0; j < 4; ++j) {
                        int cc = std::clamp(c1 - 1 + j, 0, gc - 1);
                        row[j] = table(rr * gc + cc, d);
                    }
                    col[i] = tap(row[0], row[1], row[2], row[3], fc);
                }
                out(r * nc + c, d) = tap(col[0], col[1], col[2], col[3], fr);
            }
        }
    }
    return out;
}

}  // namespace

// --- RgbPredictor ----------------------------------------------------------------

RgbPredictor::RgbPredictor(const PredictorConfig& config) : cfg_(config) {
    cfg_.validate();
    grid_ = cfg_.grid();
    build_params(cfg_.init_seed);
    bind();
}

RgbPredictor::RgbPredictor(const PredictorConfig& config, const ag::ParamStore& params)
    : cfg_(config) {
    cfg_.validate();
    grid_ = cfg_.grid();
    params_ = params.clone();
    bind();
}

RgbPredictor RgbPredictor::clone() const {
    RgbPredictor out(cfg_, params_);
    out.frozen_ = frozen_;
    return out;
}

void RgbPredictor::build_params(std::uint64_t seed) {
    Rng rng(stream_seed(seed, "rgb_init"));
    const int P = grid_.num_patches();
    const int pd = grid_.patch_dim();
    const int De = cfg_.embed_dim_enc;
    const int Dd = cfg_.embed_dim_dec;
    tfm::add_linear(params_, "embed", pd, De, nullptr, rng);
    params_.add("embed.b", Mat::Zero(1, De), false);
    params_.add("mask_token", Mat::Zero(1, De), false);  // zero-init
    if (cfg_.pos_enc == PosEncKind::Learnable) {
        params_.add("pos_enc", normal_init(2 * P, De, 0.02, rng), false);
        params_.add("dec_pos", normal_init(2 * P, Dd, 0.02, rng), false);
    } else {
        params_.add("frame_embed", normal_init(2, De, 0.02, rng), false);
        params_.add("dec_frame_embed", normal_init(2, Dd, 0.02, rng), false);
    }
    for (int i = 0; i < cfg_.depth_enc; ++i)
        tfm::add_block(params_, "enc.l" + std::to_string(i), De, cfg_.heads_enc, rng);
    tfm::add_layernorm(params_, "enc_norm", De);
    tfm::add_linear(params_, "enc2dec", De, Dd, nullptr, rng);
    params_.add("enc2dec.b", Mat::Zero(1, Dd), false);
    for (int i = 0; i < cfg_.depth_dec; ++i)
        tfm::add_block(params_, "dec.l" + std::to_string(i), Dd, cfg_.heads_dec, rng);
    tfm::add_layernorm(params_, "dec_norm", Dd);
    tfm::add_linear(params_, "head", Dd, pd, nullptr, rng);
    params_.add("head.b", Mat::Zero(1, pd), false);
}

void RgbPredictor::bind() {
    auto get = [&](const std::string& n) { return params_.at(n).var; };
    h_.embed_w = get("embed.w");
    h_.embed_b = get("embed.b");
    h_.mask_token = get("mask_token");
    if (cfg_.pos_enc == PosEncKind::Learnable) {
        h_.pos_enc = get("pos_enc");
        h_.dec_pos = get("dec_pos");
    } else {
        h_.frame_embed = get("frame_embed");
        h_.dec_frame_embed = get("dec_frame_embed");
        sin_pos_enc_ = tfm::sinusoidal_positions_2d(grid_.rows, grid_.cols, cfg_.embed_dim_enc);
        sin_pos_dec_ = tfm::sinusoidal_positions_2d(grid_.rows, grid_.cols, cfg_.embed_dim_dec);
    }
    auto bind_block = [&](const std::string& prefix) {
        tfm::BlockParams b;
        b.ln1 = {get(prefix + ".ln1.g"), get(prefix + ".ln1.b")};
        b.ln2 = {get(prefix + ".ln2.g"), get(prefix + ".ln2.b")};
        b.attn.wq = get(prefix + ".attn.q.w");
        b.attn.bq = get(prefix + ".attn.q.b");
        b.attn.wk = get(prefix + ".attn.k.w");
        b.attn.bk = get(prefix + ".attn.k.b");
        b.attn.wv = get(prefix + ".attn.v.w");
        b.attn.bv = get(prefix + ".attn.v.b");
        b.attn.wo = get(prefix + ".attn.o.w");
        b.attn.bo = get(prefix + ".attn.o.b");
        b.mlp.w1 = get(prefix + ".mlp.fc1.w");
        b.mlp.b1 = get(prefix + ".mlp.fc1.b");
        b.mlp.w2 = get(prefix + ".mlp.fc2.w");
        b.mlp.b2 = get(prefix + ".mlp.fc2.b");
        return b;
    };
    h_.enc_blocks.clear();
    h_.dec_blocks.clear();
    for (int i = 0; i < cfg_.depth_enc; ++i) {
        auto b = bind_block("enc.l" + std::to_string(i));
        b.attn.heads = cfg_.heads_enc;
        h_.enc_blocks.push_back(b);
    }
    h_.enc_norm = {get("enc_norm.g"), get("enc_norm.b")};
    h_.enc2dec_w = get("enc2dec.w");
    h_.enc2dec_b = get("enc2dec.b");
    for (int i = 0; i < cfg_.depth_dec; ++i) {
        auto b = bind_block("dec.l" + std::to_string(i));
        b.attn.heads = cfg_.heads_dec;
        h_.dec_blocks.push_back(b);
    }
    h_.dec_norm = {get("dec_norm.g"), get("dec_norm.b")};
    h_.head_w = get("head.w");
    h_.head_b = get("head.b");
}

void RgbPredictor::set_frozen(bool frozen) {
    frozen_ = frozen;
    if (frozen)
        params_.freeze();
    else
        for (auto& p : params_.params()) p.var->requires_grad = true;
}

Var RgbPredictor::forward_ag(Tape& t, Var f1_patches, const Mat& f2_patches, const MaskSpec& mask,
                             Var* tokens_out) const {
    const int P = grid_.num_patches();
    if (f1_patches->val.rows() != P || f2_patches.rows() != P)
        throw ConfigError("predictor: input resolution does not match positional table; "
                          "interpolate_positional_embeddings first");
    if (static_cast<int>(mask.visible_f1.size()) != P)
        throw ConfigError("predictor: mask does not match grid");

    Var e1 = ag::add_rowvec(t, ag::matmul(t, f1_patches, h_.embed_w), h_.embed_b);
    Var f2v = Tape::constant(f2_patches);
    Var e2 = ag::add_rowvec(t, ag::matmul(t, f2v, h_.embed_w), h_.embed_b);
    e1 = override_rows(t, e1, h_.mask_token, hidden_rows(mask.visible_f1));
    e2 = override_rows(t, e2, h_.mask_token, hidden_rows(mask.visible_f2));

    Var x;
    if (cfg_.pos_enc == PosEncKind::Learnable) {
        x = ag::concat_rows(t, {e1, e2});
        x = ag::add(t, x, h_.pos_enc);
    } else {
        e1 = ag::add_rowvec(t, e1, ag::rows(t, h_.frame_embed, 0, 1));
        e2 = ag::add_rowvec(t, e2, ag::rows(t, h_.frame_embed, 1, 1));
        x = ag::concat_rows(t, {e1, e2});
        Mat stacked(2 * P, cfg_.embed_dim_enc);
        stacked << sin_pos_enc_, sin_pos_enc_;
        x = ag::add(t, x, Tape::constant(std::move(stacked)));
    }
    for (const auto& blk : h_.enc_blocks) x = tfm::encoder_block(t, x, blk);
    x = ag::layernorm(t, x, h_.enc_norm.gamma, h_.enc_norm.beta);
    if (tokens_out) *tokens_out = ag::rows(t, x, 0, P);

    Var d = ag::add_rowvec(t, ag::matmul(t, x, h_.enc2dec_w), h_.enc2dec_b);
    if (cfg_.pos_enc == PosEncKind::Learnable) {
        d = ag::add(t, d, h_.dec_pos);
    } else {
        Mat stacked(2 * P, cfg_.embed_dim_dec);
        stacked << sin_pos_dec_, sin_pos_dec_;
        d = ag::add(t, d, Tape::constant(std::move(stacked)));
        Var fe0 = ag::rows(t, h_.dec_frame_embed, 0, 1);
        Var fe1 = ag::rows(t, h_.dec_frame_embed, 1, 1);
        Var d1 = ag::add_rowvec(t, ag::rows(t, d, 0, P), fe0);
        Var d2 = ag::add_rowvec(t, ag::rows(t, d, P, P), fe1);
        d = ag::concat_rows(t, {d1, d2});
    }
    for (const auto& blk : h_.dec_blocks) d = tfm::encoder_block(t, d, blk);
    d = ag::layernorm(t, d, h_.dec_norm.gamma, h_.dec_norm.beta);
    Var out = ag::rows(t, d, P, P);
    return ag::add_rowvec(t, ag::matmul(t, out, h_.head_w), h_.head_b);
}

Var RgbPredictor::predict_ag(Tape& t, Var f1_patches, const Mat& f2_patches,
                             const MaskSpec& mask) const {
    return forward_ag(t, f1_patches, f2_patches, mask, nullptr);
}

Mat RgbPredictor::encoder_token(const Mat& f1_patches, const Mat& f2_patches, const MaskSpec& mask,
                                PixelLoc p1) const {
    Mat tokens;
    predict_with_tokens(f1_patches, f2_patches, mask, &tokens);
    int pr = static_cast<int>(std::floor(p1.row / grid_.patch_size));
    int pc = static_cast<int>(std::floor(p1.col / grid_.patch_size));
    if (p1.row < 0 || p1.col < 0 || pr >= grid_.rows || pc >= grid_.cols)
        throw ConfigError("encoder_token: p1 outside canvas");
    return tokens.row(pr * grid_.cols + pc);
}

Mat RgbPredictor::predict_with_tokens(const Mat& f1_patches, const Mat& f2_patches,
                                      const MaskSpec& mask, Mat* tokens_out) const {
    Tape t;
    Var f1 = Tape::constant(f1_patches);
    Var tokens;
    Var pred = forward_ag(t, f1, f2_patches, mask, tokens_out ? &tokens : nullptr);
    if (tokens_out) *tokens_out = tokens->val;
    return pred->val;
}

RgbPredictor RgbPredictor::interpolate_positional_embeddings(int new_h, int new_w) const {
    if (cfg_.pos_enc != PosEncKind::Learnable)
        throw ConfigError("interpolate_positional_embeddings: requires learnable positions");
    if (new_h % cfg_.patch_size != 0 || new_w % cfg_.patch_size != 0)
        throw ConfigError("interpolate_positional_embeddings: non-integer patch grid");
    PredictorConfig ncfg = cfg_;
    ncfg.input_h = new_h;
    ncfg.input_w = new_w;
    RgbPredictor out(ncfg);
    const int gr = grid_.rows, gc = grid_.cols;
    const int nr = new_h / cfg_.patch_size, nc = new_w / cfg_.patch_size;
    for (const auto& p : params_.params()) {
        Var dst = out.params_.find(p.name);
        if (!dst) throw ConfigError("interp: missing param " + p.name);
        if (p.name == "pos_enc" || p.name == "dec_pos") {
            const Mat& src = p.var->val;
            Mat half1 = bicubic_regrid(src.topRows(gr * gc), gr, gc, nr, nc);
            Mat half2 = bicubic_regrid(src.bottomRows(gr * gc), gr, gc, nr, nc);
            Mat merged(2 * nr * nc, src.cols());
            merged << half1, half2;
            dst->val = std::move(merged);
        } else {
            dst->val = p.var->val;
        }
    }
    out.frozen_ = frozen_;
    return out;
}

// --- oracle warp stub --------------------------------------------------------------

OracleWarpPredictor::OracleWarpPredictor(const DenseMotionTruth& warp, int patch_size) {
    grid_ = PatchGrid::for_frame(warp.h, warp.w, patch_size);
    const int H = warp.h, W = warp.w;
    std::vector<int> src_of_dest(static_cast<std::size_t>(H) * W);
    for (int i = 0; i < H * W; ++i) src_of_dest[static_cast<std::size_t>(i)] = i;  // hold
    auto paint = [&](bool occluded_pass) {
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                bool occ = warp.occ(r, c);
                if (occ != occluded_pass) continue;
                int dr = r + static_cast<int>(std::lround(warp.flow_row(r, c)));
                int dc = c + static_cast<int>(std::lround(warp.flow_col(r, c)));
                if (dr < 0 || dc < 0 || dr >= H || dc >= W) continue;
                src_of_dest[static_cast<std::size_t>(dr) * W + dc] = r * W + c;
            }
    };
    paint(true);   // occluded sources first, overwritten by the visible winner
    paint(false);
    src_elem_.resize(static_cast<std::size_t>(H) * W * 3);
    for (int d = 0; d < H * W; ++d) {
        int s = src_of_dest[static_cast<std::size_t>(d)];
        for (int ch = 0; ch < 3; ++ch) {
            auto dst = grid_.element_of(d / W, d % W, ch);
            auto src = grid_.element_of(s / W, s % W, ch);
            src_elem_[(static_cast<std::size_t>(dst.first) * grid_.patch_dim() + dst.second)] = src;
        }
    }
}

Var OracleWarpPredictor::predict_ag(Tape& t, Var f1_patches, const Mat&, const MaskSpec&) const {
    const int P = grid_.num_patches();
    const int pd = grid_.patch_dim();
    if (f1_patches->val.rows() != P) throw ConfigError("oracle warp: grid mismatch");
    bool rg = f1_patches->requires_grad;
    Mat v(P, pd);
    for (int r = 0; r < P; ++r)
        for (int c = 0; c < pd; ++c) {
            auto [sr, sc] = src_elem_[static_cast<std::size_t>(r) * pd + c];
            v(r, c) = f1_patches->val(sr, sc);
        }
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        ag::Node* o = out.get();
        const auto* map = &src_elem_;
        out->backward = [o, f1_patches, map, P, pd] {
            Mat& g = ag::acc_grad(f1_patches);
            for (int r = 0; r < P; ++r)
                for (int c = 0; c < pd; ++c) {
                    auto [sr, sc] = (*map)[static_cast<std::size_t>(r) * pd + c];
                    g(sr, sc) += o->grad(r, c);
                }
        };
    }
    return out;
}

std::unique_ptr<OracleWarpPredictor> make_oracle_warp_predictor(const DenseMotionTruth& warp,
                                                                int patch_size) {
    return std::make_unique<OracleWarpPredictor>(warp, patch_size);
}

// --- training ------------------------------------------------------------------------

Mat extract_patch_token(const NextFramePredictor& model, const Mat& f1_patches,
                        const Mat& f2_patches, const MaskSpec& mask, PixelLoc p1) {
    return model.encoder_token(f1_patches, f2_patches, mask, p1);
}

RgbTrainResult train_rgb(RgbPredictor& model, const PairStream& stream, const RgbTrainConfig& cfg) {
    if (model.frozen()) throw ConfigError("train_rgb: model is frozen");
    cfg.schedule.validate();
    const PatchGrid& grid = model.grid();
    const std::int64_t total_steps = cfg.schedule.total_steps();
    const std::int64_t warmup_steps = cfg.schedule.warmup_steps();
    const Scalar max_lr = cfg.schedule.max_lr();
    const int batch = cfg.schedule.batch;

    // fixed validation batch, disjoint index range
    struct ValItem {
        Mat f1, f2;
        MaskSpec mask;
    };
    std::vector<ValItem> val;
    for (int i = 0; i < cfg.val_batch; ++i) {
        FramePair pair = stream((std::int64_t(1) << 40) + i);
        ValItem item;
        item.f1 = patchify(pair.first, grid);
        item.f2 = patchify(pair.second, grid);
        item.mask = cfg.policy.sample(grid, stream_seed(cfg.seed, "val_mask", i));
        val.push_back(std::move(item));
    }
    auto val_loss = [&](const RgbPredictor& m) {
        Scalar s = 0;
        for (const auto& item : val) {
            Mat pred = m.predict(item.f1, item.f2, item.mask);
            s += (pred - item.f2).array().square().mean();
        }
        return s / static_cast<Scalar>(val.size());
    };

    ag::AdamWConfig ocfg;
    ocfg.beta1 = cfg.schedule.beta1;
    ocfg.beta2 = cfg.schedule.beta2;
    ocfg.weight_decay = cfg.schedule.weight_decay;
    ag::AdamW opt(ocfg);

    const int jobs = std::min(cfg.jobs > 0 ? cfg.jobs : default_job_count(), batch);
    std::vector<RgbPredictor> workers;
    for (int j = 0; j < jobs; ++j) workers.push_back(model.clone());

    RgbTrainResult result;
    result.val_loss_init = val_loss(model);
    ag::ParamStore last_good = model.params().clone();
    std::int64_t last_good_step = 0;

    namespace fs = std::filesystem;
    if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
    auto save_ckpt = [&](const std::string& name, std::int64_t step) -> std::string {
        if (cfg.out_dir.empty()) return {};
        std::string path = (fs::path(cfg.out_dir) / name).string();
        save_checkpoint(path, model.config().to_json(), model.params(), &opt, step);
        return path;
    };

    std::vector<Scalar> sample_loss(static_cast<std::size_t>(batch));
    for (std::int64_t step = 0; step < total_steps; ++step) {
        const Scalar lr = ag::warmup_cosine_lr(max_lr, step, total_steps, warmup_steps);
        for (auto& w : workers) {
            w.params().load_values(model.params());
            w.params().zero_grads();
        }
        const int chunk = (batch + jobs - 1) / jobs;
        parallel_for(
            jobs,
            [&](int j) {
                RgbPredictor& m = workers[static_cast<std::size_t>(j)];
                for (int i = j * chunk; i < std::min(batch, (j + 1) * chunk); ++i) {
                    std::int64_t idx = step * batch + i;
                    FramePair pair = stream(idx);
                    MaskSpec mask = cfg.policy.sample(grid, stream_seed(cfg.seed, "mask", static_cast<std::uint64_t>(idx)));
                    Tape t;
                    Var f1 = Tape::constant(patchify(pair.first, grid));
                    Mat f2 = patchify(pair.second, grid);
                    Var pred = m.predict_ag(t, f1, f2, mask);
                    Var loss = ag::mse_loss(t, pred, f2);
                    sample_loss[static_cast<std::size_t>(i)] = loss->val(0, 0);
                    t.backward(loss);
                }
            },
            jobs);
        Scalar loss = 0;
        for (int i = 0; i < batch; ++i) loss += sample_loss[static_cast<std::size_t>(i)];
        loss /= batch;
        if (!std::isfinite(loss)) {
            result.aborted = true;
            model.params().load_values(last_good);
            save_ckpt("ckpt_final.bin", last_good_step);
            break;
        }
        model.params().zero_grads();
        std::vector<const ag::ParamStore*> shards;
        shards.reserve(workers.size());
        for (auto& w : workers) shards.push_back(&w.params());
        model.params().accumulate_grads(shards);
        for (auto& p : model.params().params())
            if (p.var->grad.size()) p.var->grad /= static_cast<Scalar>(batch);
        opt.step(model.params(), lr);
        result.steps_run = step + 1;
        if (step % cfg.log_every == 0 || step + 1 == total_steps)
            result.log.push_back({step, lr, loss});
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
            auto path = save_ckpt("ckpt_step" + std::to_string(step + 1) + ".bin", step + 1);
            if (!path.empty()) result.checkpoint_paths.push_back(path);
            last_good = model.params().clone();
            last_good_step = step + 1;
        }
    }
    result.val_loss_final = val_loss(model);
    if (!result.aborted) {
        auto path = save_ckpt("ckpt_final.bin", result.steps_run);
        if (!path.empty()) result.checkpoint_paths.push_back(path);
    }
    if (!cfg.out_dir.empty()) {
        CsvTable t;
        t.header = {"step", "lr", "train_loss"};
        for (const auto& l : result.log)
            t.add_row({std::to_string(l.step), format_scalar(l.lr), format_scalar(l.loss)});
        t.save((fs::path(cfg.out_dir) / "loss.csv").string());
        PlotSeries s;
        s.label = "train_loss";
        for (const auto& l : result.log) {
            s.x.push_back(static_cast<Scalar>(l.step));
            s.y.push_back(l.loss);
        }
        save_line_plot((fs::path(cfg.out_dir) / "loss.png").string(), {s}, "train loss");
    }
    return result;
}

}  // namespace optcwm
