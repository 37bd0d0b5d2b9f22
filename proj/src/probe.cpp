#include "optcwm/probe.hpp"

#include <algorithm>
#include <cmath>

namespace optcwm {

using ag::Tape;
using ag::Var;

GaussianPerturbationParams unpack_params(const Mat& squashed, int K) {
    if (squashed.rows() != 1 || squashed.cols() != 6 * K)
        throw NumericError("unpack_params: expected 1 x 6K");
    GaussianPerturbationParams out;
    for (int k = 0; k < K; ++k) {
        GaussianComponent c;
        for (int ch = 0; ch < 3; ++ch) c.amp[ch] = squashed(0, 3 * k + ch);
        c.drow = squashed(0, 3 * K + 2 * k);
        c.dcol = squashed(0, 3 * K + 2 * k + 1);
        c.sigma = squashed(0, 5 * K + k);
        out.components.push_back(c);
    }
    return out;
}

PerturbationGenerator::PerturbationGenerator(int token_dim, int hidden_dim, int num_components,
                                             GaussianBounds bounds, std::uint64_t seed)
    : token_dim_(token_dim), hidden_dim_(hidden_dim), K_(num_components), bounds_(bounds) {
    if (K_ < 1) throw ConfigError("perturbation generator: K must be >= 1");
    Rng rng(stream_seed(seed, "gen_init"));
    auto xavier = [&](int in, int out) {
        Scalar a = std::sqrt(6.0 / (in + out));
        Mat w(in, out);
        for (int r = 0; r < in; ++r)
            for (int c = 0; c < out; ++c) w(r, c) = rng.uniform(-a, a);
        return w;
    };
    w1_ = params_.add("mlp.fc1.w", xavier(token_dim_, hidden_dim_), true);
    b1_ = params_.add("mlp.fc1.b", Mat::Zero(1, hidden_dim_), false);
    w2_ = params_.add("mlp.fc2.w", xavier(hidden_dim_, hidden_dim_), true);
    b2_ = params_.add("mlp.fc2.b", Mat::Zero(1, hidden_dim_), false);
    // small head so initial perturbations start weak and diffuse
    Mat w3 = xavier(hidden_dim_, 6 * K_) * 0.1;
    w3_ = params_.add("mlp.head.w", std::move(w3), true);
    Mat b3 = Mat::Zero(1, 6 * K_);
    for (int k = 0; k < K_; ++k) {
        for (int ch = 0; ch < 3; ++ch) b3(0, 3 * k + ch) = 0.15;  // tanh(0.15) ~ 0.15 amplitude
        b3(0, 5 * K_ + k) = 0.5;                                  // mid-range sigma
    }
    b3_ = params_.add("mlp.head.b", std::move(b3), false);
}

Var PerturbationGenerator::squashed_params_ag(Tape& t, Var token) const {
    if (token->val.rows() != 1 || token->val.cols() != token_dim_)
        throw NumericError("perturbation generator: token shape mismatch");
    Var h = ag::gelu(t, ag::add_rowvec(t, ag::matmul(t, token, w1_), b1_));
    h = ag::gelu(t, ag::add_rowvec(t, ag::matmul(t, h, w2_), b2_));
    Var raw = ag::add_rowvec(t, ag::matmul(t, h, w3_), b3_);
    Var amps = ag::scale(t, ag::tanh_op(t, ag::cols(t, raw, 0, 3 * K_)), bounds_.a_max);
    Var offs = ag::scale(t, ag::tanh_op(t, ag::cols(t, raw, 3 * K_, 2 * K_)), bounds_.r_max);
    Var sig = ag::add_scalar(
        t, ag::scale(t, ag::sigmoid(t, ag::cols(t, raw, 5 * K_, K_)), bounds_.sigma_max - bounds_.sigma_min),
        bounds_.sigma_min);
    return ag::concat_cols(t, {amps, offs, sig});
}

GaussianPerturbationParams PerturbationGenerator::params_for_token(const Mat& token) const {
    Tape t;
    Var tok = Tape::constant(token);
    return unpack_params(squashed_params_ag(t, tok)->val, K_);
}

Image render_perturbation(const GaussianPerturbationParams& params, PixelLoc p1, int h, int w) {
    Image out(h, w, 0.0);
    for (const auto& c : params.components) {
        Scalar mr = p1.row + c.drow, mc = p1.col + c.dcol;
        Scalar inv2s2 = 1.0 / (2.0 * c.sigma * c.sigma);
        for (int r = 0; r < h; ++r)
            for (int cc = 0; cc < w; ++cc) {
                Scalar d2 = (r - mr) * (r - mr) + (cc - mc) * (cc - mc);
                Scalar e = std::exp(-d2 * inv2s2);
                for (int ch = 0; ch < 3; ++ch) out.at(r, cc, ch) += c.amp[ch] * e;
            }
    }
    return out;
}

Var render_perturbation_ag(Tape& t, Var squashed, int K, PixelLoc p1, const PatchGrid& grid) {
    const int H = grid.rows * grid.patch_size, W = grid.cols * grid.patch_size;
    if (squashed->val.cols() != 6 * K) throw NumericError("render: param width mismatch");
    bool rg = squashed->requires_grad;
    GaussianPerturbationParams gp = unpack_params(squashed->val, K);
    Mat v = Mat::Zero(grid.num_patches(), grid.patch_dim());
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            Scalar acc[3] = {0, 0, 0};
            for (const auto& comp : gp.components) {
                Scalar mr = p1.row + comp.drow, mc = p1.col + comp.dcol;
                Scalar d2 = (r - mr) * (r - mr) + (c - mc) * (c - mc);
                Scalar e = std::exp(-d2 / (2.0 * comp.sigma * comp.sigma));
                for (int ch = 0; ch < 3; ++ch) acc[ch] += comp.amp[ch] * e;
            }
            for (int ch = 0; ch < 3; ++ch) {
                auto [pr, pc] = grid.element_of(r, c, ch);
                v(pr, pc) = acc[ch];
            }
        }
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        ag::Node* o = out.get();
        out->backward = [o, squashed, K, p1, grid, gp, H, W] {
            Mat& g = ag::acc_grad(squashed);
            for (int k = 0; k < K; ++k) {
                const auto& comp = gp.components[static_cast<std::size_t>(k)];
                Scalar mr = p1.row + comp.drow, mc = p1.col + comp.dcol;
                Scalar s2 = comp.sigma * comp.sigma;
                Scalar d_amp[3] = {0, 0, 0};
                Scalar d_dr = 0, d_dc = 0, d_sig = 0;
                for (int r = 0; r < H; ++r)
                    for (int c = 0; c < W; ++c) {
                        Scalar dr = r - mr, dc = c - mc;
                        Scalar d2 = dr * dr + dc * dc;
                        Scalar e = std::exp(-d2 / (2.0 * s2));
                        Scalar gsum = 0;  // sum_ch grad * amp
                        for (int ch = 0; ch < 3; ++ch) {
                            auto [pr, pc] = grid.element_of(r, c, ch);
                            Scalar go = o->grad(pr, pc);
                            d_amp[ch] += go * e;
                            gsum += go * comp.amp[ch];
                        }
                        d_dr += gsum * e * dr / s2;
                        d_dc += gsum * e * dc / s2;
                        d_sig += gsum * e * d2 / (s2 * comp.sigma);
                    }
                for (int ch = 0; ch < 3; ++ch) g(0, 3 * k + ch) += d_amp[ch];
                g(0, 3 * K + 2 * k) += d_dr;
                g(0, 3 * K + 2 * k + 1) += d_dc;
                g(0, 5 * K + k) += d_sig;
            }
        };
    }
    return out;
}

DifferenceImage compute_difference_image(const Frame& a, const Frame& b) {
    if (a.h != b.h || a.w != b.w) throw NumericError("difference image: shape mismatch");
    DifferenceImage d;
    d.values = Mat::Zero(a.h, a.w);
    for (int r = 0; r < a.h; ++r)
        for (int c = 0; c < a.w; ++c) {
            Scalar s = 0;
            for (int ch = 0; ch < 3; ++ch) s += std::abs(b.at(r, c, ch) - a.at(r, c, ch));
            d.values(r, c) = s;
        }
    return d;
}

DifferenceImage difference_from_patches(const Mat& pf, const Mat& pc, const PatchGrid& grid) {
    DifferenceImage d;
    const int H = grid.rows * grid.patch_size, W = grid.cols * grid.patch_size;
    d.values = Mat::Zero(H, W);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            Scalar s = 0;
            for (int ch = 0; ch < 3; ++ch) {
                auto [pr, pcc] = grid.element_of(r, c, ch);
                s += std::abs(pc(pr, pcc) - pf(pr, pcc));
            }
            d.values(r, c) = s;
        }
    return d;
}

Var difference_image_ag(Tape& t, Var pred_c, const Mat& pred_f, const PatchGrid& grid) {
    const int H = grid.rows * grid.patch_size, W = grid.cols * grid.patch_size;
    bool rg = pred_c->requires_grad;
    Mat diff = pred_c->val - pred_f;  // kept for sign routing
    Mat v = Mat::Zero(H, W);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            Scalar s = 0;
            for (int ch = 0; ch < 3; ++ch) {
                auto [pr, pc] = grid.element_of(r, c, ch);
                s += std::abs(diff(pr, pc));
            }
            v(r, c) = s;
        }
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        ag::Node* o = out.get();
        out->backward = [o, pred_c, diff = std::move(diff), grid, H, W] {
            Mat& g = ag::acc_grad(pred_c);
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) {
                    Scalar go = o->grad(r, c);
                    if (go == 0) continue;
                    for (int ch = 0; ch < 3; ++ch) {
                        auto [pr, pc] = grid.element_of(r, c, ch);
                        Scalar d = diff(pr, pc);
                        g(pr, pc) += go * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
                    }
                }
        };
    }
    return out;
}

PixelLoc softargmax(const Mat& delta, Scalar tau) {
    Tape t;
    Var d = Tape::constant(delta);
    Mat v = softargmax_ag(t, d, tau)->val;
    return {v(0, 0), v(0, 1)};
}

Var softargmax_ag(Tape& t, Var delta, Scalar tau) {
    if (tau <= 0) throw NumericError("softargmax: tau must be positive");
    const int H = static_cast<int>(delta->val.rows()), W = static_cast<int>(delta->val.cols());
    bool rg = delta->requires_grad;
    Scalar mx = delta->val.maxCoeff();
    Mat w = ((delta->val.array() - mx) / tau).exp();
    Scalar z = w.sum();
    w /= z;
    Mat v(1, 2);
    Scalar er = 0, ec = 0;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            er += w(r, c) * r;
            ec += w(r, c) * c;
        }
    v(0, 0) = er;
    v(0, 1) = ec;
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        ag::Node* o = out.get();
        out->backward = [o, delta, w = std::move(w), tau, H, W] {
            Mat& g = ag::acc_grad(delta);
            const Scalar gr = o->grad(0, 0), gc = o->grad(0, 1);
            const Scalar pr = o->val(0, 0), pc = o->val(0, 1);
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c)
                    g(r, c) += w(r, c) / tau * (gr * (r - pr) + gc * (c - pc));
        };
    }
    return out;
}

PixelLoc argmax_peak(const Mat& delta, bool* degenerate) {
    Scalar best = delta(0, 0);
    int br = 0, bc = 0;
    bool all_zero = true;
    for (int r = 0; r < delta.rows(); ++r)
        for (int c = 0; c < delta.cols(); ++c) {
            Scalar v = delta(r, c);
            if (v != 0) all_zero = false;
            if (v > best) {  // strict: keeps lexicographic-lowest among ties
                best = v;
                br = r;
                bc = c;
            }
        }
    if (degenerate) *degenerate = all_zero;
    return {static_cast<Scalar>(br), static_cast<Scalar>(bc)};
}

PerturbationSpec PerturbationSpec::fixed_square(Scalar r, Scalar g, Scalar b, int size) {
    PerturbationSpec s;
    s.kind = Kind::FixedSquare;
    s.color[0] = r;
    s.color[1] = g;
    s.color[2] = b;
    s.size = size;
    return s;
}
PerturbationSpec PerturbationSpec::learned(const PerturbationGenerator& gen) {
    PerturbationSpec s;
    s.kind = Kind::Learned;
    s.generator = &gen;
    return s;
}
PerturbationSpec PerturbationSpec::manual_gaussian(GaussianPerturbationParams p) {
    PerturbationSpec s;
    s.kind = Kind::Manual;
    s.manual = std::move(p);
    return s;
}

namespace {

Image fixed_square_field(const PerturbationSpec& spec, PixelLoc p1, int h, int w) {
    Image field(h, w, 0.0);
    int half = spec.size / 2;
    int r0 = static_cast<int>(std::lround(p1.row)) - half;
    int c0 = static_cast<int>(std::lround(p1.col)) - half;
    for (int r = r0; r < r0 + spec.size; ++r)
        for (int c = c0; c < c0 + spec.size; ++c) {
            if (r < 0 || c < 0 || r >= h || c >= w) continue;
            for (int ch = 0; ch < 3; ++ch) field.at(r, c, ch) = spec.color[ch];
        }
    return field;
}

Mat perturbation_patches(const NextFramePredictor& model, const Mat& f1p, const Mat& f2p,
                         const MaskSpec& mask, PixelLoc p1, const PerturbationSpec& spec,
                         const ProbeConfig& cfg, std::uint64_t token_mask_seed) {
    const PatchGrid& grid = model.grid();
    const int H = grid.rows * grid.patch_size, W = grid.cols * grid.patch_size;
    switch (spec.kind) {
        case PerturbationSpec::Kind::FixedSquare:
            return patchify(fixed_square_field(spec, p1, H, W), grid);
        case PerturbationSpec::Kind::Manual:
            return patchify(render_perturbation(spec.manual, p1, H, W), grid);
        case PerturbationSpec::Kind::Learned: {
            if (!spec.generator) throw ConfigError("probe: learned spec without generator");
            MaskSpec token_mask = mask;
            if (cfg.independent_token_mask)
                token_mask = sample_asymmetric_mask(grid, cfg.mask_alpha_reveal, token_mask_seed);
            Mat token = model.encoder_token(f1p, f2p, token_mask, p1);
            auto params = spec.generator->params_for_token(token);
            return patchify(render_perturbation(params, p1, H, W), grid);
        }
    }
    throw ConfigError("probe: unknown perturbation kind");
}

PixelLoc locate(const Mat& delta, const ProbeConfig& cfg, PixelLoc p1, bool* degenerate) {
    bool degen = false;
    PixelLoc peak = argmax_peak(delta, &degen);
    if (degenerate) *degenerate = degen;
    if (cfg.mode == ProbeConfig::Mode::Argmax) {
        if (degen) return p1;  // documented tie-break: zero flow
        return peak;
    }
    Scalar tau = cfg.tau;
    if (cfg.tau_adaptive) tau = std::max(0.01 * delta.maxCoeff(), 1e-6);
    return softargmax(delta, tau);
}

// permutation-invariant reduction: per-cell values sorted before summing
Mat sorted_mean(std::vector<Mat>& deltas) {
    const int H = static_cast<int>(deltas[0].rows()), W = static_cast<int>(deltas[0].cols());
    Mat out(H, W);
    std::vector<Scalar> vals(deltas.size());
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            for (std::size_t i = 0; i < deltas.size(); ++i) vals[i] = deltas[i](r, c);
            std::sort(vals.begin(), vals.end());
            Scalar s = 0;
            for (Scalar v : vals) s += v;
            out(r, c) = s / static_cast<Scalar>(deltas.size());
        }
    return out;
}

}  // namespace

std::pair<FlowPrediction, DifferenceImage> flow_probe_single(const NextFramePredictor& model,
                                                             const FramePair& pair,
                                                             const MaskSpec& mask, PixelLoc p1,
                                                             const PerturbationSpec& spec,
                                                             const ProbeConfig& cfg) {
    const PatchGrid& grid = model.grid();
    const int H = grid.rows * grid.patch_size, W = grid.cols * grid.patch_size;
    if (p1.row < 0 || p1.col < 0 || p1.row > H - 1 || p1.col > W - 1)
        throw ConfigError("flow_probe: p1 outside canvas");
    Mat f1p = patchify(pair.first, grid);
    Mat f2p = patchify(pair.second, grid);
    Mat delta_pm = perturbation_patches(model, f1p, f2p, mask, p1, spec, cfg,
                                        stream_seed(cfg.seed, "token_mask"));
    Mat f1p_cf = (f1p + delta_pm).cwiseMax(0.0).cwiseMin(1.0);
    Mat pred_f = model.predict(f1p, f2p, mask);
    Mat pred_c = model.predict(f1p_cf, f2p, mask);
    DifferenceImage delta = difference_from_patches(pred_f, pred_c, grid);

    FlowPrediction fp;
    fp.p1 = p1;
    fp.num_masks = 1;
    fp.num_scales = 0;
    fp.p2_hat = locate(delta.values, cfg, p1, &fp.degenerate);
    fp.flow = {fp.p2_hat.row - p1.row, fp.p2_hat.col - p1.col};
    fp.per_mask_max = {delta.values.maxCoeff()};
    fp.occlusion_score = fp.per_mask_max[0];
    fp.occluded = fp.occlusion_score < cfg.occlusion_threshold;
    return {fp, delta};
}

FlowPrediction flow_probe_multimask(const NextFramePredictor& model, const FramePair& pair,
                                    PixelLoc p1, const PerturbationSpec& spec,
                                    const ProbeConfig& cfg) {
    if (cfg.num_masks < 1) throw ConfigError("flow_probe_multimask: num_masks must be >= 1");
    const PatchGrid& grid = model.grid();
    std::vector<Mat> deltas;
    deltas.reserve(static_cast<std::size_t>(cfg.num_masks));
    std::vector<Scalar> maxima;
    for (int i = 0; i < cfg.num_masks; ++i) {
        MaskSpec mask = sample_asymmetric_mask(grid, cfg.mask_alpha_reveal,
                                               stream_seed(cfg.seed, "probe_mask", static_cast<std::uint64_t>(i)));
        ProbeConfig single = cfg;
        single.seed = stream_seed(cfg.seed, "probe_inner", static_cast<std::uint64_t>(i));
        auto [fp_i, delta_i] = flow_probe_single(model, pair, mask, p1, spec, single);
        maxima.push_back(delta_i.values.maxCoeff());
        deltas.push_back(std::move(delta_i.values));
    }
    Mat delta_avg = sorted_mean(deltas);
    FlowPrediction fp;
    fp.p1 = p1;
    fp.num_masks = cfg.num_masks;
    fp.num_scales = 0;
    fp.p2_hat = locate(delta_avg, cfg, p1, &fp.degenerate);
    fp.flow = {fp.p2_hat.row - p1.row, fp.p2_hat.col - p1.col};
    std::sort(maxima.begin(), maxima.end());
    Scalar s = 0;
    for (Scalar v : maxima) s += v;
    fp.occlusion_score = s / static_cast<Scalar>(maxima.size());
    fp.per_mask_max = std::move(maxima);
    fp.occluded = fp.occlusion_score < cfg.occlusion_threshold;
    return fp;
}

namespace {

struct CropAxis {
    int origin = 0;
    int size = 0;
    int native = 0;
    Scalar to_native(Scalar x) const { return (x - origin + 0.5) * native / size - 0.5; }
    Scalar to_orig(Scalar xn) const { return (xn + 0.5) * size / native - 0.5 + origin; }
};

CropAxis make_axis(Scalar center, int side, int full, int native) {
    side = std::min(side, full);
    int origin = static_cast<int>(std::lround(center - side / 2.0));
    origin = std::clamp(origin, 0, full - side);
    return {origin, side, native};
}

}  // namespace

FlowPrediction flow_probe_multiscale(const NextFramePredictor& model, const FramePair& pair,
                                     PixelLoc p1, const PerturbationSpec& spec,
                                     const ProbeConfig& cfg) {
    if (cfg.num_scales < 0) throw ConfigError("flow_probe_multiscale: num_scales must be >= 0");
    const PatchGrid& grid = model.grid();
    const int H = pair.first.h, W = pair.first.w;
    const int nh = grid.rows * grid.patch_size, nw = grid.cols * grid.patch_size;

    ProbeConfig base = cfg;
    base.seed = stream_seed(cfg.seed, "ms", 0);
    FlowPrediction fp;
    if (H == nh && W == nw) {
        fp = flow_probe_multimask(model, pair, p1, spec, base);
    } else {
        // native probe on a resized copy, coordinates mapped through the resize
        CropAxis ar{0, H, nh}, ac{0, W, nw};
        FramePair rp;
        rp.first = resize_bilinear(pair.first, nh, nw);
        rp.second = resize_bilinear(pair.second, nh, nw);
        PixelLoc p1n{ar.to_native(p1.row), ac.to_native(p1.col)};
        fp = flow_probe_multimask(model, rp, p1n, spec, base);
        fp.p2_hat = {ar.to_orig(fp.p2_hat.row), ac.to_orig(fp.p2_hat.col)};
        fp.p1 = p1;
        fp.flow = {fp.p2_hat.row - p1.row, fp.p2_hat.col - p1.col};
    }
    fp.scale_trace.push_back(fp.p2_hat);

    for (int iter = 1; iter <= cfg.num_scales; ++iter) {
        Scalar f = std::pow(cfg.crop_factor, iter);
        int side_h = static_cast<int>(std::lround(f * H));
        int side_w = static_cast<int>(std::lround(f * W));
        if (side_h < 2 * grid.patch_size || side_w < 2 * grid.patch_size) break;  // stop early
        CropAxis a1r = make_axis(p1.row, side_h, H, nh);
        CropAxis a1c = make_axis(p1.col, side_w, W, nw);
        CropAxis a2r = make_axis(fp.p2_hat.row, side_h, H, nh);
        CropAxis a2c = make_axis(fp.p2_hat.col, side_w, W, nw);
        FramePair cp;
        cp.first = resize_bilinear(crop(pair.first, a1r.origin, a1c.origin, side_h, side_w), nh, nw);
        cp.second = resize_bilinear(crop(pair.second, a2r.origin, a2c.origin, side_h, side_w), nh, nw);
        PixelLoc p1c{a1r.to_native(p1.row), a1c.to_native(p1.col)};
        p1c.row = std::clamp(p1c.row, Scalar(0), Scalar(nh - 1));
        p1c.col = std::clamp(p1c.col, Scalar(0), Scalar(nw - 1));
        ProbeConfig iter_cfg = cfg;
        iter_cfg.seed = stream_seed(cfg.seed, "ms", static_cast<std::uint64_t>(iter));
        FlowPrediction fi = flow_probe_multimask(model, cp, p1c, spec, iter_cfg);
        PixelLoc p2{a2r.to_orig(fi.p2_hat.row), a2c.to_orig(fi.p2_hat.col)};
        fp.p2_hat = p2;
        fp.flow = {p2.row - p1.row, p2.col - p1.col};
        fp.degenerate = fp.degenerate || fi.degenerate;
        // occlusion decided at full resolution (iteration 0) where score scale is calibrated
        fp.scale_trace.push_back(p2);
        fp.num_scales = iter;
    }
    return fp;
}

Var differentiable_flow_ag(Tape& t, const NextFramePredictor& model, const Mat& f1_patches,
                           const Mat& f2_patches, const MaskSpec& mask, PixelLoc p1,
                           const PerturbationGenerator& gen, const Mat& token, Scalar tau) {
    const PatchGrid& grid = model.grid();
    Var tok = Tape::constant(token);
    Var squashed = gen.squashed_params_ag(t, tok);
    Var field = render_perturbation_ag(t, squashed, gen.num_components(), p1, grid);
    Var f1 = Tape::constant(f1_patches);
    Var perturbed = ag::clamp01(t, ag::add(t, f1, field));
    Var pred_c = model.predict_ag(t, perturbed, f2_patches, mask);
    Mat pred_f = model.predict(f1_patches, f2_patches, mask);
    Var delta = difference_image_ag(t, pred_c, pred_f, grid);
    Var p2 = softargmax_ag(t, delta, tau);
    Mat p1m(1, 2);
    p1m << p1.row, p1.col;
    return ag::sub(t, p2, Tape::constant(p1m));
}

PerturbationMap export_perturbation_map(const PerturbationGenerator& gen,
                                        const NextFramePredictor& model, const FramePair& pair,
                                        int stride, const ProbeConfig& cfg) {
    if (stride < 1) throw ConfigError("perturbation map: stride must be >= 1");
    const PatchGrid& grid = model.grid();
    const int H = grid.rows * grid.patch_size, W = grid.cols * grid.patch_size;
    Mat f1p = patchify(pair.first, grid);
    Mat f2p = patchify(pair.second, grid);
    MaskSpec mask = sample_asymmetric_mask(grid, cfg.mask_alpha_reveal, stream_seed(cfg.seed, "map_mask"));
    PerturbationMap map;
    map.stride = stride;
    map.map_h = (H + stride - 1) / stride;
    map.map_w = (W + stride - 1) / stride;
    map.amp_r = Mat::Zero(map.map_h, map.map_w);
    map.amp_g = Mat::Zero(map.map_h, map.map_w);
    map.amp_b = Mat::Zero(map.map_h, map.map_w);
    map.sigma = Mat::Zero(map.map_h, map.map_w);
    map.dr = Mat::Zero(map.map_h, map.map_w);
    map.dc = Mat::Zero(map.map_h, map.map_w);
    for (int i = 0; i < map.map_h; ++i)
        for (int j = 0; j < map.map_w; ++j) {
            PixelLoc p1{static_cast<Scalar>(i * stride), static_cast<Scalar>(j * stride)};
            Mat token = model.encoder_token(f1p, f2p, mask, p1);
            auto params = gen.params_for_token(token);
            const auto& c0 = params.components.front();  // component 0 reported
            map.amp_r(i, j) = c0.amp[0];
            map.amp_g(i, j) = c0.amp[1];
            map.amp_b(i, j) = c0.amp[2];
            map.sigma(i, j) = c0.sigma;
            map.dr(i, j) = c0.drow;
            map.dc(i, j) = c0.dcol;
        }
    return map;
}

}  // namespace optcwm
