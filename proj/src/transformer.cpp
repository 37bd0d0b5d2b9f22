#include "optcwm/transformer.hpp"

#include <cmath>

namespace optcwm::tfm {

using ag::Var;

namespace {
Mat xavier_uniform(int in_dim, int out_dim, Rng& rng) {
    Scalar a = std::sqrt(6.0 / (in_dim + out_dim));
    Mat w(in_dim, out_dim);
    for (int r = 0; r < in_dim; ++r)
        for (int c = 0; c < out_dim; ++c) w(r, c) = rng.uniform(-a, a);
    return w;
}
}  // namespace

Var add_linear(ag::ParamStore& store, const std::string& prefix, int in_dim, int out_dim,
               Var* bias, Rng& rng) {
    Var w = store.add(prefix + ".w", xavier_uniform(in_dim, out_dim, rng), true);
    if (bias) *bias = store.add(prefix + ".b", Mat::Zero(1, out_dim), false);
    return w;
}

LnParams add_layernorm(ag::ParamStore& store, const std::string& prefix, int dim) {
    LnParams p;
    p.gamma = store.add(prefix + ".g", Mat::Ones(1, dim), false);
    p.beta = store.add(prefix + ".b", Mat::Zero(1, dim), false);
    return p;
}

AttnParams add_attention(ag::ParamStore& store, const std::string& prefix, int q_dim, int kv_dim,
                         int heads, Rng& rng) {
    if (q_dim % heads != 0) throw ConfigError("attention: dim not divisible by heads");
    AttnParams p;
    p.heads = heads;
    p.wq = add_linear(store, prefix + ".q", q_dim, q_dim, &p.bq, rng);
    p.wk = add_linear(store, prefix + ".k", kv_dim, q_dim, &p.bk, rng);
    p.wv = add_linear(store, prefix + ".v", kv_dim, q_dim, &p.bv, rng);
    p.wo = add_linear(store, prefix + ".o", q_dim, q_dim, &p.bo, rng);
    return p;
}

MlpParams add_mlp(ag::ParamStore& store, const std::string& prefix, int dim, int hidden, Rng& rng) {
    MlpParams p;
    p.w1 = add_linear(store, prefix + ".fc1", dim, hidden, &p.b1, rng);
    p.w2 = add_linear(store, prefix + ".fc2", hidden, dim, &p.b2, rng);
    return p;
}

BlockParams add_block(ag::ParamStore& store, const std::string& prefix, int dim, int heads, Rng& rng) {
    BlockParams p;
    p.ln1 = add_layernorm(store, prefix + ".ln1", dim);
    p.ln2 = add_layernorm(store, prefix + ".ln2", dim);
    p.attn = add_attention(store, prefix + ".attn", dim, dim, heads, rng);
    p.mlp = add_mlp(store, prefix + ".mlp", dim, 4 * dim, rng);
    return p;
}

Var attention(ag::Tape& t, Var q_in, Var kv_in, const AttnParams& p) {
    const int dim = static_cast<int>(p.wq->val.cols());
    const int dh = dim / p.heads;
    Var q = ag::add_rowvec(t, ag::matmul(t, q_in, p.wq), p.bq);
    Var k = ag::add_rowvec(t, ag::matmul(t, kv_in, p.wk), p.bk);
    Var v = ag::add_rowvec(t, ag::matmul(t, kv_in, p.wv), p.bv);
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<std::size_t>(p.heads));
    const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(dh));
    for (int h = 0; h < p.heads; ++h) {
        Var qh = ag::cols(t, q, h * dh, dh);
        Var kh = ag::cols(t, k, h * dh, dh);
        Var vh = ag::cols(t, v, h * dh, dh);
        Var scores = ag::scale(t, ag::matmul(t, qh, ag::transpose(t, kh)), scale);
        Var attn = ag::softmax_rows(t, scores);
        head_outs.push_back(ag::matmul(t, attn, vh));
    }
    Var cat = p.heads == 1 ? head_outs[0] : ag::concat_cols(t, head_outs);
    return ag::add_rowvec(t, ag::matmul(t, cat, p.wo), p.bo);
}

Var mlp(ag::Tape& t, Var x, const MlpParams& p) {
    Var h = ag::gelu(t, ag::add_rowvec(t, ag::matmul(t, x, p.w1), p.b1));
    return ag::add_rowvec(t, ag::matmul(t, h, p.w2), p.b2);
}

Var encoder_block(ag::Tape& t, Var x, const BlockParams& p) {
    Var n1 = ag::layernorm(t, x, p.ln1.gamma, p.ln1.beta);
    x = ag::add(t, x, attention(t, n1, n1, p.attn));
    Var n2 = ag::layernorm(t, x, p.ln2.gamma, p.ln2.beta);
    return ag::add(t, x, mlp(t, n2, p.mlp));
}

Var cross_attend(ag::Tape& t, Var x, Var ctx, const LnParams& ln_q, const LnParams& ln_kv,
                 const AttnParams& p) {
    Var nq = ag::layernorm(t, x, ln_q.gamma, ln_q.beta);
    Var nkv = ag::layernorm(t, ctx, ln_kv.gamma, ln_kv.beta);
    return ag::add(t, x, attention(t, nq, nkv, p));
}

Mat sinusoidal_positions_2d(int rows, int cols, int dim) {
    // first half encodes the row coordinate, second half the column
    Mat out = Mat::Zero(rows * cols, dim);
    int half = dim / 2;
    auto fill = [&](int offset, int span, auto coord) {
        for (int p = 0; p < rows * cols; ++p) {
            Scalar pos = coord(p);
            for (int i = 0; i + 1 < span; i += 2) {
                Scalar freq = std::pow(10000.0, -static_cast<Scalar>(i) / span);
                out(p, offset + i) = std::sin(pos * freq);
                out(p, offset + i + 1) = std::cos(pos * freq);
            }
        }
    };
    fill(0, half, [&](int p) { return static_cast<Scalar>(p / cols); });
    fill(half, dim - half, [&](int p) { return static_cast<Scalar>(p % cols); });
    return out;
}

}  // namespace optcwm::tfm
