#include "optcwm/flow_predictor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "optcwm/serialize.hpp"

namespace optcwm {

using ag::Tape;
using ag::Var;

void FlowPredictorConfig::validate() const {
    if (patch_size <= 0 || input_h % patch_size != 0 || input_w % patch_size != 0)
        throw ConfigError("flow predictor: patch size must divide input dims");
    if (enc_dim % enc_heads != 0 || dec_dim % dec_heads != 0)
        throw ConfigError("flow predictor: dim not divisible by heads");
    if (enc_layers.empty() || dec_layers.empty())
        throw ConfigError("flow predictor: empty layer schedule");
}

std::vector<LayerSchedule> FlowPredictorConfig::encoder_groups(int groups, int layers_per_group) {
    std::vector<LayerSchedule> out;
    for (int g = 0; g < groups; ++g) {
        out.push_back({true, true, true, true});
        for (int i = 1; i < layers_per_group; ++i) out.push_back({true, false, false, false});
    }
    return out;
}

FlowPredictorConfig FlowPredictorConfig::desk() {
    FlowPredictorConfig c;
    c.patch_size = 4;
    c.input_h = c.input_w = 32;
    c.enc_dim = 128;
    c.enc_heads = 4;
    c.dec_dim = 64;
    c.dec_heads = 2;
    c.enc_layers = encoder_groups(3, 2);
    c.dec_layers = {{true, true, true, true}, {true, false, true, false}, {true, false, false, false}};
    return c;
}

FlowPredictorConfig FlowPredictorConfig::paper_scale() {
    FlowPredictorConfig c;
    c.patch_size = 8;
    c.input_h = c.input_w = 224;
    c.enc_dim = 768;
    c.enc_heads = 12;
    c.dec_dim = 384;
    c.dec_heads = 6;
    c.enc_layers = encoder_groups(3, 4);
    c.dec_layers = {{true, true, true, true},
                    {true, false, true, false},
                    {true, false, false, false},
                    {true, false, false, false}};
    return c;
}

std::string FlowPredictorConfig::to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = "flow_predictor";
    j["patch_size"] = patch_size;
    j["input_h"] = input_h;
    j["input_w"] = input_w;
    j["enc_dim"] = enc_dim;
    j["enc_heads"] = enc_heads;
    j["dec_dim"] = dec_dim;
    j["dec_heads"] = dec_heads;
    auto dump_layers = [](const std::vector<LayerSchedule>& ls) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& l : ls)
            arr.push_back({{"self1", l.self1},
                           {"self2", l.self2},
                           {"c12", l.cross_s1_from_s2},
                           {"c21", l.cross_s2_from_s1}});
        return arr;
    };
    j["enc_layers"] = dump_layers(enc_layers);
    j["dec_layers"] = dump_layers(dec_layers);
    j["init_seed"] = init_seed;
    return j.dump();
}

FlowPredictorConfig FlowPredictorConfig::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    FlowPredictorConfig c;
    c.patch_size = j.at("patch_size").get<int>();
    c.input_h = j.at("input_h").get<int>();
    c.input_w = j.at("input_w").get<int>();
    c.enc_dim = j.at("enc_dim").get<int>();
    c.enc_heads = j.at("enc_heads").get<int>();
    c.dec_dim = j.at("dec_dim").get<int>();
    c.dec_heads = j.at("dec_heads").get<int>();
    auto parse_layers = [](const nlohmann::json& arr) {
        std::vector<LayerSchedule> out;
        for (const auto& l : arr)
            out.push_back({l.at("self1").get<bool>(), l.at("self2").get<bool>(),
                           l.at("c12").get<bool>(), l.at("c21").get<bool>()});
        return out;
    };
    c.enc_layers = parse_layers(j.at("enc_layers"));
    c.dec_layers = parse_layers(j.at("dec_layers"));
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.validate();
    return c;
}

SparseFlowConditioning encode_conditioning(const std::vector<PixelLoc>& points,
                                           const std::vector<FlowVec>& flows,
                                           const PatchGrid& grid) {
    if (points.size() != flows.size())
        throw ConfigError("encode_conditioning: points/flows size mismatch");
    SparseFlowConditioning cond;
    std::vector<char> seen(static_cast<std::size_t>(grid.num_patches()), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        int pr = static_cast<int>(std::floor(points[i].row / grid.patch_size));
        int pc = static_cast<int>(std::floor(points[i].col / grid.patch_size));
        if (pr < 0 || pc < 0 || pr >= grid.rows || pc >= grid.cols)
            throw ConfigError("encode_conditioning: point outside canvas");
        int p = pr * grid.cols + pc;
        if (seen[static_cast<std::size_t>(p)]) {
            ++cond.collisions;
            continue;
        }
        seen[static_cast<std::size_t>(p)] = 1;
        cond.entries.push_back({p, flows[i]});
    }
    return cond;
}

// --- FlowPredictor ------------------------------------------------------------------

FlowPredictor::FlowPredictor(const FlowPredictorConfig& config) : cfg_(config) {
    cfg_.validate();
    grid_ = cfg_.grid();
    build_params(cfg_.init_seed);
    bind();
}

FlowPredictor::FlowPredictor(const FlowPredictorConfig& config, const ag::ParamStore& params)
    : cfg_(config) {
    cfg_.validate();
    grid_ = cfg_.grid();
    params_ = params.clone();
    bind();
}

FlowPredictor FlowPredictor::clone() const { return FlowPredictor(cfg_, params_); }

namespace {
void add_layer_params(ag::ParamStore& store, const std::string& prefix, const LayerSchedule& ls,
                      int dim, int heads, Rng& rng) {
    if (ls.self1) tfm::add_block(store, prefix + ".self1", dim, heads, rng);
    if (ls.self2) tfm::add_block(store, prefix + ".self2", dim, heads, rng);
    auto add_cross = [&](const std::string& name) {
        tfm::add_layernorm(store, prefix + "." + name + ".lnq", dim);
        tfm::add_layernorm(store, prefix + "." + name + ".lnkv", dim);
        tfm::add_attention(store, prefix + "." + name + ".attn", dim, dim, heads, rng);
        tfm::add_layernorm(store, prefix + "." + name + ".lnm", dim);
        tfm::add_mlp(store, prefix + "." + name + ".mlp", dim, 4 * dim, rng);
    };
    if (ls.cross_s1_from_s2) add_cross("c12");
    if (ls.cross_s2_from_s1) add_cross("c21");
}
}  // namespace

void FlowPredictor::build_params(std::uint64_t seed) {
    Rng rng(stream_seed(seed, "flow_init"));
    const int pd = grid_.patch_dim();
    tfm::add_linear(params_, "embed1", pd, cfg_.enc_dim, nullptr, rng);
    params_.add("embed1.b", Mat::Zero(1, cfg_.enc_dim), false);
    tfm::add_linear(params_, "embed2", 2 + pd, cfg_.enc_dim, nullptr, rng);
    params_.add("embed2.b", Mat::Zero(1, cfg_.enc_dim), false);
    params_.add("mask_token2", Mat::Zero(1, cfg_.enc_dim), false);
    for (std::size_t i = 0; i < cfg_.enc_layers.size(); ++i)
        add_layer_params(params_, "enc.l" + std::to_string(i), cfg_.enc_layers[i], cfg_.enc_dim,
                         cfg_.enc_heads, rng);
    tfm::add_linear(params_, "proj1", cfg_.enc_dim, cfg_.dec_dim, nullptr, rng);
    params_.add("proj1.b", Mat::Zero(1, cfg_.dec_dim), false);
    tfm::add_linear(params_, "proj2", cfg_.enc_dim, cfg_.dec_dim, nullptr, rng);
    params_.add("proj2.b", Mat::Zero(1, cfg_.dec_dim), false);
    for (std::size_t i = 0; i < cfg_.dec_layers.size(); ++i)
        add_layer_params(params_, "dec.l" + std::to_string(i), cfg_.dec_layers[i], cfg_.dec_dim,
                         cfg_.dec_heads, rng);
    tfm::add_layernorm(params_, "out_norm", cfg_.dec_dim);
    tfm::add_linear(params_, "head", cfg_.dec_dim, pd, nullptr, rng);
    params_.add("head.b", Mat::Zero(1, pd), false);
}

void FlowPredictor::bind() {
    auto get = [&](const std::string& n) { return params_.at(n).var; };
    auto bind_block = [&](const std::string& prefix, int heads) {
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
        b.attn.heads = heads;
        b.mlp.w1 = get(prefix + ".mlp.fc1.w");
        b.mlp.b1 = get(prefix + ".mlp.fc1.b");
        b.mlp.w2 = get(prefix + ".mlp.fc2.w");
        b.mlp.b2 = get(prefix + ".mlp.fc2.b");
        return b;
    };
    auto bind_cross = [&](const std::string& prefix, int heads) {
        CrossHandles c;
        c.ln_q = {get(prefix + ".lnq.g"), get(prefix + ".lnq.b")};
        c.ln_kv = {get(prefix + ".lnkv.g"), get(prefix + ".lnkv.b")};
        c.attn.wq = get(prefix + ".attn.q.w");
        c.attn.bq = get(prefix + ".attn.q.b");
        c.attn.wk = get(prefix + ".attn.k.w");
        c.attn.bk = get(prefix + ".attn.k.b");
        c.attn.wv = get(prefix + ".attn.v.w");
        c.attn.bv = get(prefix + ".attn.v.b");
        c.attn.wo = get(prefix + ".attn.o.w");
        c.attn.bo = get(prefix + ".attn.o.b");
        c.attn.heads = heads;
        c.ln_mlp = {get(prefix + ".lnm.g"), get(prefix + ".lnm.b")};
        c.mlp.w1 = get(prefix + ".mlp.fc1.w");
        c.mlp.b1 = get(prefix + ".mlp.fc1.b");
        c.mlp.w2 = get(prefix + ".mlp.fc2.w");
        c.mlp.b2 = get(prefix + ".mlp.fc2.b");
        return c;
    };
    auto bind_layers = [&](const std::vector<LayerSchedule>& schedule, const std::string& base,
                           int heads) {
        std::vector<LayerHandles> out;
        for (std::size_t i = 0; i < schedule.size(); ++i) {
            LayerHandles lh;
            std::string prefix = base + ".l" + std::to_string(i);
            if (schedule[i].self1) lh.self1 = bind_block(prefix + ".self1", heads);
            if (schedule[i].self2) lh.self2 = bind_block(prefix + ".self2", heads);
            if (schedule[i].cross_s1_from_s2) lh.c12 = bind_cross(prefix + ".c12", heads);
            if (schedule[i].cross_s2_from_s1) lh.c21 = bind_cross(prefix + ".c21", heads);
            out.push_back(std::move(lh));
        }
        return out;
    };
    h_.embed1_w = get("embed1.w");
    h_.embed1_b = get("embed1.b");
    h_.embed2_w = get("embed2.w");
    h_.embed2_b = get("embed2.b");
    h_.mask_token2 = get("mask_token2");
    h_.enc = bind_layers(cfg_.enc_layers, "enc", cfg_.enc_heads);
    h_.proj1_w = get("proj1.w");
    h_.proj1_b = get("proj1.b");
    h_.proj2_w = get("proj2.w");
    h_.proj2_b = get("proj2.b");
    h_.dec = bind_layers(cfg_.dec_layers, "dec", cfg_.dec_heads);
    h_.out_norm = {get("out_norm.g"), get("out_norm.b")};
    h_.head_w = get("head.w");
    h_.head_b = get("head.b");
    pos_enc_ = tfm::sinusoidal_positions_2d(grid_.rows, grid_.cols, cfg_.enc_dim);
    pos_dec_ = tfm::sinusoidal_positions_2d(grid_.rows, grid_.cols, cfg_.dec_dim);
}

void FlowPredictor::run_layers(Tape& t, Var& x1, Var& x2,
                               const std::vector<LayerHandles>& layers) const {
    for (const auto& l : layers) {
        if (l.self1) x1 = tfm::encoder_block(t, x1, *l.self1);
        if (l.self2) x2 = tfm::encoder_block(t, x2, *l.self2);
        if (l.c12) {
            x1 = tfm::cross_attend(t, x1, x2, l.c12->ln_q, l.c12->ln_kv, l.c12->attn);
            Var n = ag::layernorm(t, x1, l.c12->ln_mlp.gamma, l.c12->ln_mlp.beta);
            x1 = ag::add(t, x1, tfm::mlp(t, n, l.c12->mlp));
        }
        if (l.c21) {
            x2 = tfm::cross_attend(t, x2, x1, l.c21->ln_q, l.c21->ln_kv, l.c21->attn);
            Var n = ag::layernorm(t, x2, l.c21->ln_mlp.gamma, l.c21->ln_mlp.beta);
            x2 = ag::add(t, x2, tfm::mlp(t, n, l.c21->mlp));
        }
    }
}

Var FlowPredictor::predict_ag(Tape& t, const Mat& f1_patches, Var flows,
                              const std::vector<int>& patch_idx) const {
    const int P = grid_.num_patches();
    if (f1_patches.rows() != P) throw ConfigError("flow predictor: grid mismatch");
    if (flows->val.rows() == 0) throw ConfigError("flow predictor: empty conditioning");
    if (static_cast<int>(patch_idx.size()) != flows->val.rows())
        throw ConfigError("flow predictor: flow/index count mismatch");

    Var f1 = Tape::constant(f1_patches);
    Var x1 = ag::add_rowvec(t, ag::matmul(t, f1, h_.embed1_w), h_.embed1_b);
    x1 = ag::add(t, x1, Tape::constant(pos_enc_));

    // stream 2 entries: [flow_row/H, flow_col/W | frame-1 RGB patch]
    Mat scale(2, 2);
    scale << 1.0 / (grid_.rows * grid_.patch_size), 0, 0, 1.0 / (grid_.cols * grid_.patch_size);
    Var flows_n = ag::matmul(t, flows, Tape::constant(scale));
    Mat rgb(static_cast<int>(patch_idx.size()), grid_.patch_dim());
    for (std::size_t i = 0; i < patch_idx.size(); ++i) rgb.row(static_cast<int>(i)) = f1_patches.row(patch_idx[i]);
    Var entries = ag::concat_cols(t, {flows_n, Tape::constant(std::move(rgb))});
    Var embedded = ag::add_rowvec(t, ag::matmul(t, entries, h_.embed2_w), h_.embed2_b);
    Var x2 = ag::assemble_rows(t, embedded, patch_idx, h_.mask_token2, P);
    x2 = ag::add(t, x2, Tape::constant(pos_enc_));

    run_layers(t, x1, x2, h_.enc);
    Var d1 = ag::add_rowvec(t, ag::matmul(t, x1, h_.proj1_w), h_.proj1_b);
    Var d2 = ag::add_rowvec(t, ag::matmul(t, x2, h_.proj2_w), h_.proj2_b);
    d1 = ag::add(t, d1, Tape::constant(pos_dec_));
    d2 = ag::add(t, d2, Tape::constant(pos_dec_));
    run_layers(t, d1, d2, h_.dec);
    Var out = ag::layernorm(t, d1, h_.out_norm.gamma, h_.out_norm.beta);
    return ag::add_rowvec(t, ag::matmul(t, out, h_.head_w), h_.head_b);
}

Mat FlowPredictor::predict(const Mat& f1_patches, const SparseFlowConditioning& cond) const {
    if (cond.entries.empty()) throw ConfigError("flow predictor: empty conditioning");
    Tape t;
    Mat flows(static_cast<int>(cond.entries.size()), 2);
    std::vector<int> idx;
    for (std::size_t i = 0; i < cond.entries.size(); ++i) {
        flows(static_cast<int>(i), 0) = cond.entries[i].flow.drow;
        flows(static_cast<int>(i), 1) = cond.entries[i].flow.dcol;
        idx.push_back(cond.entries[i].patch);
    }
    return predict_ag(t, f1_patches, Tape::constant(std::move(flows)), idx)->val;
}

Frame FlowPredictor::predict_frame(const Frame& first, const SparseFlowConditioning& cond) const {
    Mat f1p = patchify(first, grid_);
    return unpatchify(predict(f1p, cond), grid_);
}

// --- joint training --------------------------------------------------------------------

namespace {

struct ValItem {
    Mat f1, f2;
    MaskSpec mask;
    std::vector<PixelLoc> points;
    std::vector<FlowVec> truth_flows;
    std::vector<std::uint8_t> truth_occluded;
};

Scalar grad_norm(const ag::ParamStore& s) {
    Scalar n = 0;
    for (const auto& p : s.params())
        if (p.var->grad.size()) n += p.var->grad.array().square().sum();
    return std::sqrt(n);
}

}  // namespace

JointTrainResult joint_train(JointTrainState state, const TruthPairStream& stream,
                             const JointTrainConfig& cfg) {
    if (!state.generator || !state.flow_model || !state.frozen_rgb)
        throw ConfigError("joint_train: incomplete state");
    if (!state.frozen_rgb->frozen()) throw ConfigError("joint_train: RGB predictor must be frozen");
    const std::uint64_t rgb_hash0 = state.frozen_rgb->param_hash();
    const PatchGrid& grid = state.frozen_rgb->grid();
    PerturbationGenerator& gen = *state.generator;
    FlowPredictor& fm = *state.flow_model;

    ag::AdamWConfig ocfg;
    ocfg.beta1 = cfg.beta1;
    ocfg.beta2 = cfg.beta2;
    ocfg.weight_decay = cfg.weight_decay;
    ag::AdamW opt_theta(ocfg), opt_eta(ocfg);
    const std::int64_t warmup = static_cast<std::int64_t>(cfg.warmup_frac * cfg.steps);

    // fixed validation set with oracle truth
    std::vector<ValItem> val;
    for (int i = 0; i < cfg.val_pairs; ++i) {
        auto [pair, truth] = stream((std::int64_t(1) << 40) + i);
        ValItem item;
        item.f1 = patchify(pair.first, grid);
        item.f2 = patchify(pair.second, grid);
        item.mask = sample_asymmetric_mask(grid, cfg.mask_alpha_reveal,
                                           stream_seed(cfg.seed, "jval_mask", static_cast<std::uint64_t>(i)));
        item.points = sample_query_pixels(pair.first, cfg.val_points, QueryStrategy::UniformRandom,
                                          stream_seed(cfg.seed, "jval_pts", static_cast<std::uint64_t>(i)));
        for (const auto& p : item.points) {
            int r = static_cast<int>(p.row), c = static_cast<int>(p.col);
            item.truth_flows.push_back(truth.flow_at(r, c));
            item.truth_occluded.push_back(truth.occ(r, c) ? 1 : 0);
        }
        val.push_back(std::move(item));
    }

    auto evaluate = [&](Scalar* mse_out, Scalar* flow_err_out) {
        Scalar mse = 0, err = 0;
        int err_n = 0;
        for (const auto& item : val) {
            std::vector<PixelLoc> pts = item.points;
            std::vector<FlowVec> flows;
            Mat tokens;
            state.frozen_rgb->predict_with_tokens(item.f1, item.f2, item.mask, &tokens);
            for (std::size_t j = 0; j < pts.size(); ++j) {
                int pr = static_cast<int>(std::floor(pts[j].row / grid.patch_size));
                int pc = static_cast<int>(std::floor(pts[j].col / grid.patch_size));
                Mat tok = tokens.row(pr * grid.cols + pc);
                Tape t;
                Var fl = differentiable_flow_ag(t, *state.frozen_rgb, item.f1, item.f2, item.mask,
                                                pts[j], gen, tok, cfg.tau);
                FlowVec f{fl->val(0, 0), fl->val(0, 1)};
                flows.push_back(f);
                if (!item.truth_occluded[j]) {
                    err += std::hypot(f.drow - item.truth_flows[j].drow,
                                      f.dcol - item.truth_flows[j].dcol);
                    ++err_n;
                }
            }
            auto cond = encode_conditioning(pts, flows, grid);
            Mat pred = fm.predict(item.f1, cond);
            mse += (pred - item.f2).array().square().mean();
        }
        if (mse_out) *mse_out = mse / static_cast<Scalar>(val.size());
        if (flow_err_out) *flow_err_out = err_n ? err / err_n : -1;
    };

    JointTrainResult result;
    evaluate(&result.val_mse_init, &result.val_flow_err_init);

    ag::ParamStore last_good_theta = gen.params().clone();
    ag::ParamStore last_good_eta = fm.params().clone();
    int last_good_step = 0;

    for (int step = 0; step < cfg.steps; ++step) {
        const Scalar lr = ag::warmup_cosine_lr(cfg.max_lr, step, cfg.steps, warmup);
        gen.params().zero_grads();
        fm.params().zero_grads();
        Tape t;
        Var total_loss;
        Scalar flow_err_acc = 0;
        int flow_err_n = 0;
        for (int b = 0; b < cfg.batch_pairs; ++b) {
            std::int64_t idx = static_cast<std::int64_t>(step) * cfg.batch_pairs + b;
            auto [pair, truth] = stream(idx);
            Mat f1p = patchify(pair.first, grid);
            Mat f2p = patchify(pair.second, grid);
            MaskSpec mask = sample_asymmetric_mask(
                grid, cfg.mask_alpha_reveal,
                stream_seed(cfg.seed, "jmask", static_cast<std::uint64_t>(idx)));
            std::vector<PixelLoc> pts =
                sample_query_pixels(pair.first, cfg.n_points, QueryStrategy::UniformRandom,
                                    stream_seed(cfg.seed, "jpts", static_cast<std::uint64_t>(idx)));
            // one encoder pass yields tokens for every query point
            Mat tokens;
            state.frozen_rgb->predict_with_tokens(f1p, f2p, mask, &tokens);

            std::vector<Var> flow_vars;
            std::vector<PixelLoc> flow_pts;
            for (const auto& p : pts) {
                if (cfg.oracle_flows) {
                    Mat fv(1, 2);
                    fv << truth.flow_at(static_cast<int>(p.row), static_cast<int>(p.col)).drow,
                        truth.flow_at(static_cast<int>(p.row), static_cast<int>(p.col)).dcol;
                    flow_vars.push_back(Tape::constant(std::move(fv)));
                } else {
                    int pr = static_cast<int>(std::floor(p.row / grid.patch_size));
                    int pc = static_cast<int>(std::floor(p.col / grid.patch_size));
                    Mat token = tokens.row(pr * grid.cols + pc);
                    Var fl = differentiable_flow_ag(t, *state.frozen_rgb, f1p, f2p, mask, p, gen,
                                                    token, cfg.tau);
                    if (cfg.freeze_generator) fl = Tape::constant(fl->val);
                    flow_vars.push_back(fl);
                }
                flow_pts.push_back(p);
                FlowVec truth_f = truth.flow_at(static_cast<int>(p.row), static_cast<int>(p.col));
                if (!truth.occ(static_cast<int>(p.row), static_cast<int>(p.col))) {
                    flow_err_acc += std::hypot(flow_vars.back()->val(0, 0) - truth_f.drow,
                                               flow_vars.back()->val(0, 1) - truth_f.dcol);
                    ++flow_err_n;
                }
            }
            // dedupe patches, first point wins (collision rule)
            std::vector<char> seen(static_cast<std::size_t>(grid.num_patches()), 0);
            std::vector<Var> kept;
            std::vector<int> kept_idx;
            for (std::size_t j = 0; j < flow_pts.size(); ++j) {
                int pr = static_cast<int>(std::floor(flow_pts[j].row / grid.patch_size));
                int pc = static_cast<int>(std::floor(flow_pts[j].col / grid.patch_size));
                int pidx = pr * grid.cols + pc;
                if (seen[static_cast<std::size_t>(pidx)]) continue;
                seen[static_cast<std::size_t>(pidx)] = 1;
                kept.push_back(flow_vars[j]);
                kept_idx.push_back(pidx);
            }
            Var flows = ag::concat_rows(t, kept);
            Var pred = fm.predict_ag(t, f1p, flows, kept_idx);
            Var loss = ag::mse_loss(t, pred, f2p);
            total_loss = total_loss ? ag::add(t, total_loss, loss) : loss;
        }
        total_loss = ag::scale(t, total_loss, 1.0 / cfg.batch_pairs);
        Scalar mse = total_loss->val(0, 0);
        if (!std::isfinite(mse)) {
            result.aborted = true;
            gen.params().load_values(last_good_theta);
            fm.params().load_values(last_good_eta);
            result.steps_run = last_good_step;
            break;
        }
        t.backward(total_loss);
        Scalar gn = grad_norm(gen.params()) + grad_norm(fm.params());
        if (!cfg.freeze_generator && !cfg.oracle_flows) opt_theta.step(gen.params(), lr);
        opt_eta.step(fm.params(), lr);
        result.steps_run = step + 1;
        if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            JointLogRow row;
            row.step = step;
            row.lr = lr;
            row.mse = mse;
            row.grad_norm = gn;
            row.flow_err = flow_err_n ? flow_err_acc / flow_err_n : -1;
            result.log.push_back(row);
        }
        if ((step + 1) % 50 == 0) {
            last_good_theta = gen.params().clone();
            last_good_eta = fm.params().clone();
            last_good_step = step + 1;
        }
        if (state.frozen_rgb->param_hash() != rgb_hash0)
            throw NumericError("joint_train: frozen RGB parameters changed");
    }
    evaluate(&result.val_mse_final, &result.val_flow_err_final);

    if (!cfg.out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(cfg.out_dir);
        result.checkpoint_path = (fs::path(cfg.out_dir) / "joint_final.bin").string();
        save_joint_checkpoint(result.checkpoint_path, gen, fm, rgb_hash0, result.steps_run);
        CsvTable csv;
        csv.header = {"step", "lr", "mse", "grad_norm", "flow_err"};
        for (const auto& r : result.log)
            csv.add_row({std::to_string(r.step), format_scalar(r.lr), format_scalar(r.mse),
                         format_scalar(r.grad_norm), format_scalar(r.flow_err)});
        csv.save((fs::path(cfg.out_dir) / "joint_log.csv").string());
        PlotSeries s1, s2;
        s1.label = "mse";
        s2.label = "flow_err";
        s2.color[0] = 0.8;
        s2.color[1] = 0.2;
        s2.color[2] = 0.1;
        for (const auto& r : result.log) {
            s1.x.push_back(r.step);
            s1.y.push_back(r.mse);
            if (r.flow_err >= 0) {
                s2.x.push_back(r.step);
                s2.y.push_back(r.flow_err);
            }
        }
        save_line_plot((fs::path(cfg.out_dir) / "joint_curves.png").string(), {s1, s2},
                       "joint mse + flow err");
    }
    return result;
}

void save_joint_checkpoint(const std::string& path, const PerturbationGenerator& gen,
                           const FlowPredictor& flow_model, std::uint64_t rgb_hash, int step) {
    ag::ParamStore merged;
    for (const auto& p : gen.params().params()) merged.add("theta." + p.name, p.var->val, p.weight_decay);
    for (const auto& p : flow_model.params().params())
        merged.add("eta." + p.name, p.var->val, p.weight_decay);
    nlohmann::ordered_json j;
    j["kind"] = "joint";
    j["rgb_hash"] = hash_hex(rgb_hash);
    j["flow_config"] = nlohmann::json::parse(flow_model.config().to_json());
    j["token_dim"] = gen.token_dim();
    j["num_components"] = gen.num_components();
    save_checkpoint(path, j.dump(), merged, nullptr, step);
}

void load_joint_checkpoint(const std::string& path, PerturbationGenerator& gen,
                           FlowPredictor& flow_model, std::uint64_t rgb_hash) {
    ag::ParamStore merged;
    for (const auto& p : gen.params().params()) merged.add("theta." + p.name, p.var->val, p.weight_decay);
    for (const auto& p : flow_model.params().params())
        merged.add("eta." + p.name, p.var->val, p.weight_decay);
    CheckpointMeta meta = load_checkpoint(path, merged);
    auto j = nlohmann::json::parse(meta.config_json);
    if (j.at("rgb_hash").get<std::string>() != hash_hex(rgb_hash))
        throw DataError("joint checkpoint: RGB predictor hash mismatch");
    std::size_t n_theta = gen.params().params().size();
    for (std::size_t i = 0; i < merged.params().size(); ++i) {
        if (i < n_theta)
            gen.params().params()[i].var->val = merged.params()[i].var->val;
        else
            flow_model.params().params()[i - n_theta].var->val = merged.params()[i].var->val;
    }
}

}  // namespace optcwm
