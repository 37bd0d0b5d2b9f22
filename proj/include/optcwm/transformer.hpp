#pragma once

// ViT building blocks shared by the RGB-conditioned and the flow-conditioned
// predictors: pre-LN multi-head attention, MLP blocks, parameter init,
// positional encodings.

#include <string>

#include "optcwm/autograd.hpp"

namespace optcwm::tfm {

struct AttnParams {
    ag::Var wq, bq, wk, bk, wv, bv, wo, bo;
    int heads = 1;
};

struct MlpParams {
    ag::Var w1, b1, w2, b2;
};

struct LnParams {
    ag::Var gamma, beta;
};

struct BlockParams {
    LnParams ln1, ln2;
    AttnParams attn;
    MlpParams mlp;
};

// Xavier-uniform weight, zero bias.
ag::Var add_linear(ag::ParamStore& store, const std::string& prefix, int in_dim, int out_dim,
                   ag::Var* bias, Rng& rng);
LnParams add_layernorm(ag::ParamStore& store, const std::string& prefix, int dim);
AttnParams add_attention(ag::ParamStore& store, const std::string& prefix, int q_dim, int kv_dim,
                         int heads, Rng& rng);
MlpParams add_mlp(ag::ParamStore& store, const std::string& prefix, int dim, int hidden, Rng& rng);
BlockParams add_block(ag::ParamStore& store, const std::string& prefix, int dim, int heads, Rng& rng);

// Scaled dot-product attention; queries from `q_in`, keys/values from `kv_in`.
ag::Var attention(ag::Tape& t, ag::Var q_in, ag::Var kv_in, const AttnParams& p);
ag::Var mlp(ag::Tape& t, ag::Var x, const MlpParams& p);
// x + attn(LN(x)), then x + mlp(LN(x))
ag::Var encoder_block(ag::Tape& t, ag::Var x, const BlockParams& p);
// x + attn(LN(x), LN(ctx)) without the MLP half; used by cross-attention layers
ag::Var cross_attend(ag::Tape& t, ag::Var x, ag::Var ctx, const LnParams& ln_q,
                     const LnParams& ln_kv, const AttnParams& p);

// 2D sinusoidal table for a rows x cols grid, dim channels.
Mat sinusoidal_positions_2d(int rows, int cols, int dim);

}  // namespace optcwm::tfm
