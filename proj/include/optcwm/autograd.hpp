#pragma once

// Reverse-mode autograd over Eigen row-major matrices. Tape-based: every
// recorded node carries a closure that routes its output gradient to its
// parents. Custom ops (Gaussian render, softargmax, warp stubs) are built by
// the owning modules through Tape::record + acc_grad.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "optcwm/common.hpp"

namespace optcwm::ag {

struct Node {
    Mat val;
    Mat grad;  // empty until a gradient flows here
    bool requires_grad = false;
    std::function<void()> backward;  // empty for leaves
};

using Var = std::shared_ptr<Node>;

inline Mat& acc_grad(const Var& v) {
    if (v->grad.size() == 0) v->grad = Mat::Zero(v->val.rows(), v->val.cols());
    return v->grad;
}

class Tape {
public:
    // Leaf: participates in grad flow but has no parents (parameters, inputs).
    static Var leaf(Mat v, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->val = std::move(v);
        n->requires_grad = requires_grad;
        return n;
    }

    static Var constant(Mat v) { return leaf(std::move(v), false); }

    // Recorded intermediate node. `backward` may be empty when no parent
    // requires a gradient.
    Var record(Mat v, bool requires_grad, std::function<void()> backward) {
        auto n = std::make_shared<Node>();
        n->val = std::move(v);
        n->requires_grad = requires_grad;
        if (requires_grad) n->backward = std::move(backward);
        order_.push_back(n);
        return n;
    }

    // Seeds d(loss)/d(loss) = 1 and runs the tape in reverse creation order.
    void backward(const Var& loss);

    std::size_t size() const { return order_.size(); }
    void clear() { order_.clear(); }

private:
    std::vector<Var> order_;
};

// --- elementwise / structural ops -----------------------------------------
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, Scalar s);
Var add_scalar(Tape& t, Var a, Scalar s);
Var add_rowvec(Tape& t, Var a, Var row);  // row is 1xC, broadcast over rows
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var rows(Tape& t, Var a, int r0, int n);
Var cols(Tape& t, Var a, int c0, int n);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var gather_rows(Tape& t, Var a, std::vector<int> idx);
// out has `total_rows` rows; out.row(row_idx[i]) = entries.row(i), all other
// rows are a copy of `filler` (1xC). Duplicate targets keep the first entry.
Var assemble_rows(Tape& t, Var entries, std::vector<int> row_idx, Var filler, int total_rows);

// --- nonlinearities ---------------------------------------------------------
Var gelu(Tape& t, Var a);
Var tanh_op(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var exp_op(Tape& t, Var a);
Var clamp01(Tape& t, Var a);  // hard clamp; gradient zero outside (0,1)
Var softmax_rows(Tape& t, Var a);
Var layernorm(Tape& t, Var x, Var gamma, Var beta, Scalar eps = 1e-6);

// --- reductions -------------------------------------------------------------
Var sum_all(Tape& t, Var a);                      // 1x1
Var mean_all(Tape& t, Var a);                     // 1x1
Var mse_loss(Tape& t, Var pred, const Mat& target);  // 1x1, mean over entries

// ---------------------------------------------------------------------------
// Parameters and optimizer.
// ---------------------------------------------------------------------------

struct Param {
    std::string name;
    Var var;
    bool weight_decay = true;
};

class ParamStore {
public:
    Var add(const std::string& name, Mat init, bool weight_decay);
    void zero_grads();
    void freeze();  // requires_grad = false on every param
    std::size_t count_scalars() const;
    std::uint64_t content_hash() const;

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    const Param& at(const std::string& name) const;
    Var find(const std::string& name) const;  // nullptr if absent

    // Deep copy (independent value/grad buffers, same names/order).
    ParamStore clone() const;
    // Copy values from another store with identical layout.
    void load_values(const ParamStore& src);
    // Sum grads of `shards` into this store, shard order fixed.
    void accumulate_grads(const std::vector<const ParamStore*>& shards);

private:
    std::vector<Param> params_;
};

struct AdamWConfig {
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.95;
    Scalar eps = 1e-8;
    Scalar weight_decay = 0.05;
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore& store, Scalar lr);

    int step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

    // exposed for checkpointing
    std::vector<Mat>& moment1() { return m_; }
    std::vector<Mat>& moment2() { return v_; }
    void set_step_count(int t) { t_ = t; }

private:
    AdamWConfig cfg_;
    std::vector<Mat> m_, v_;
    int t_ = 0;
};

// Linear warmup then cosine decay to zero. step is 0-based.
Scalar warmup_cosine_lr(Scalar max_lr, std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps);

// Central finite-difference gradient of a scalar-valued rebuild function with
// respect to `param`'s value. Used by gradient-check tests.
Mat finite_difference(const std::function<Scalar()>& eval, Mat& value, Scalar h = 1e-5);

}  // namespace optcwm::ag
