#include "optcwm/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace optcwm::ag {

void Tape::backward(const Var& loss) {
    if (loss->val.rows() != 1 || loss->val.cols() != 1)
        throw NumericError("backward: loss must be 1x1");
    loss->grad = Mat::Ones(1, 1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node& n = **it;
        if (n.grad.size() == 0) continue;  // nothing flowed here
        if (n.backward) n.backward();
    }
}

Var add(Tape& t, Var a, Var b) {
    if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols())
        throw NumericError("add: shape mismatch");
    bool rg = a->requires_grad || b->requires_grad;
    Mat v = a->val + b->val;
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a, b] {
            if (a->requires_grad) acc_grad(a) += o->grad;
            if (b->requires_grad) acc_grad(b) += o->grad;
        };
    }
    return out;
}

Var sub(Tape& t, Var a, Var b) {
    if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols())
        throw NumericError("sub: shape mismatch");
    bool rg = a->requires_grad || b->requires_grad;
    auto out = t.record(a->val - b->val, rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a, b] {
            if (a->requires_grad) acc_grad(a) += o->grad;
            if (b->requires_grad) acc_grad(b) -= o->grad;
        };
    }
    return out;
}

Var mul(Tape& t, Var a, Var b) {
    if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols())
        throw NumericError("mul: shape mismatch");
    bool rg = a->requires_grad || b->requires_grad;
    auto out = t.record(a->val.cwiseProduct(b->val), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a, b] {
            if (a->requires_grad) acc_grad(a) += o->grad.cwiseProduct(b->val);
            if (b->requires_grad) acc_grad(b) += o->grad.cwiseProduct(a->val);
        };
    }
    return out;
}

Var scale(Tape& t, Var a, Scalar s) {
    bool rg = a->requires_grad;
    auto out = t.record(a->val * s, rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a, s] { acc_grad(a) += o->grad * s; };
    }
    return out;
}

Var add_scalar(Tape& t, Var a, Scalar s) {
    bool rg = a->requires_grad;
    auto out = t.record(a->val.array() + s, rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a] { acc_grad(a) += o->grad; };
    }
    return out;
}

Var add_rowvec(Tape& t, Var a, Var row) {
    if (row->val.rows() != 1 || row->val.cols() != a->val.cols())
        throw NumericError("add_rowvec: shape mismatch");
    bool rg = a->requires_grad || row->requires_grad;
    Mat v = a->val.rowwise() + row->val.row(0);
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a, row] {
            if (a->requires_grad) acc_grad(a) += o->grad;
            if (row->requires_grad) acc_grad(row) += o->grad.colwise().sum();
        };
    }
    return out;
}

Var matmul(Tape& t, Var a, Var b) {
    if (a->val.cols() != b->val.rows()) throw NumericError("matmul: inner dim mismatch");
    bool rg = a->requires_grad || b->requires_grad;
    Mat v;
    v.noalias() = a->val * b->val;
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a, b] {
            if (a->requires_grad) acc_grad(a).noalias() += o->grad * b->val.transpose();
            if (b->requires_grad) acc_grad(b).noalias() += a->val.transpose() * o->grad;
        };
    }
    return out;
}

Var transpose(Tape& t, Var a) {
    bool rg = a->requires_grad;
    auto out = t.record(a->val.transpose(), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a] { acc_grad(a) += o->grad.transpose(); };
    }
    return out;
}

Var rows(Tape& t, Var a, int r0, int n) {
    bool rg = a->requires_grad;
    auto out = t.record(a->val.middleRows(r0, n), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a, r0, n] { acc_grad(a).middleRows(r0, n) += o->grad; };
    }
    return out;
}

Var cols(Tape& t, Var a, int c0, int n) {
    bool rg = a->requires_grad;
    auto out = t.record(a->val.middleCols(c0, n), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a, c0, n] { acc_grad(a).middleCols(c0, n) += o->grad; };
    }
    return out;
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw NumericError("concat_rows: empty");
    int total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        total += static_cast<int>(p->val.rows());
        rg = rg || p->requires_grad;
    }
    Mat v(total, parts[0]->val.cols());
    int r = 0;
    for (const auto& p : parts) {
        v.middleRows(r, p->val.rows()) = p->val;
        r += static_cast<int>(p->val.rows());
    }
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        auto ps = parts;
        out->backward = [o, ps] {
            int r = 0;
            for (const auto& p : ps) {
                int n = static_cast<int>(p->val.rows());
                if (p->requires_grad) acc_grad(p) += o->grad.middleRows(r, n);
                r += n;
            }
        };
    }
    return out;
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw NumericError("concat_cols: empty");
    int total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        total += static_cast<int>(p->val.cols());
        rg = rg || p->requires_grad;
    }
    Mat v(parts[0]->val.rows(), total);
    int c = 0;
    for (const auto& p : parts) {
        v.middleCols(c, p->val.cols()) = p->val;
        c += static_cast<int>(p->val.cols());
    }
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        auto ps = parts;
        out->backward = [o, ps] {
            int c = 0;
            for (const auto& p : ps) {
                int n = static_cast<int>(p->val.cols());
                if (p->requires_grad) acc_grad(p) += o->grad.middleCols(c, n);
                c += n;
            }
        };
    }
    return out;
}

Var gather_rows(Tape& t, Var a, std::vector<int> idx) {
    bool rg = a->requires_grad;
    Mat v(static_cast<int>(idx.size()), a->val.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) v.row(static_cast<int>(i)) = a->val.row(idx[i]);
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a, idx = std::move(idx)] {
            Mat& g = acc_grad(a);
            for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += o->grad.row(static_cast<int>(i));
        };
    }
    return out;
}

Var assemble_rows(Tape& t, Var entries, std::vector<int> row_idx, Var filler, int total_rows) {
    if (static_cast<int>(row_idx.size()) != entries->val.rows())
        throw NumericError("assemble_rows: index/entry count mismatch");
    if (filler->val.rows() != 1 || filler->val.cols() != entries->val.cols())
        throw NumericError("assemble_rows: filler shape");
    bool rg = entries->requires_grad || filler->requires_grad;
    Mat v = filler->val.row(0).replicate(total_rows, 1);
    std::vector<char> taken(static_cast<std::size_t>(total_rows), 0);
    std::vector<int> placed;  // entry i actually placed (first wins)
    placed.reserve(row_idx.size());
    for (std::size_t i = 0; i < row_idx.size(); ++i) {
        int r = row_idx[i];
        if (r < 0 || r >= total_rows) throw NumericError("assemble_rows: index out of range");
        if (taken[static_cast<std::size_t>(r)]) {
            placed.push_back(-1);
            continue;
        }
        taken[static_cast<std::size_t>(r)] = 1;
        v.row(r) = entries->val.row(static_cast<int>(i));
        placed.push_back(r);
    }
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, entries, filler, placed = std::move(placed), taken = std::move(taken)] {
            if (entries->requires_grad) {
                Mat& g = acc_grad(entries);
                for (std::size_t i = 0; i < placed.size(); ++i)
                    if (placed[i] >= 0) g.row(static_cast<int>(i)) += o->grad.row(placed[i]);
            }
            if (filler->requires_grad) {
                Mat& g = acc_grad(filler);
                for (int r = 0; r < o->grad.rows(); ++r)
                    if (!taken[static_cast<std::size_t>(r)]) g.row(0) += o->grad.row(r);
            }
        };
    }
    return out;
}

Var gelu(Tape& t, Var a) {
    bool rg = a->requires_grad;
    const Scalar inv_sqrt2 = 0.7071067811865475244;
    Mat v = a->val.unaryExpr([&](Scalar x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a, inv_sqrt2] {
            const Scalar inv_sqrt2pi = 0.3989422804014326779;
            Mat d = a->val.unaryExpr([&](Scalar x) {
                Scalar cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                Scalar pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                return cdf + x * pdf;
            });
            acc_grad(a) += o->grad.cwiseProduct(d);
        };
    }
    return out;
}

Var tanh_op(Tape& t, Var a) {
    bool rg = a->requires_grad;
    Mat v = a->val.array().tanh();
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a] {
            Mat d = 1.0 - o->val.array().square();
            acc_grad(a) += o->grad.cwiseProduct(d);
        };
    }
    return out;
}

Var sigmoid(Tape& t, Var a) {
    bool rg = a->requires_grad;
    Mat v = a->val.unaryExpr([](Scalar x) { return 1.0 / (1.0 + std::exp(-x)); });
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a] {
            Mat d = o->val.array() * (1.0 - o->val.array());
            acc_grad(a) += o->grad.cwiseProduct(d);
        };
    }
    return out;
}

Var exp_op(Tape& t, Var a) {
    bool rg = a->requires_grad;
    Mat v = a->val.array().exp();
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a] { acc_grad(a) += o->grad.cwiseProduct(o->val); };
    }
    return out;
}

Var clamp01(Tape& t, Var a) {
    bool rg = a->requires_grad;
    Mat v = a->val.cwiseMax(0.0).cwiseMin(1.0);
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a] {
            Mat pass = ((a->val.array() > 0.0) && (a->val.array() < 1.0)).cast<Scalar>();
            acc_grad(a) += o->grad.cwiseProduct(pass.matrix());
        };
    }
    return out;
}

Var softmax_rows(Tape& t, Var a) {
    bool rg = a->requires_grad;
    Mat v(a->val.rows(), a->val.cols());
    for (int r = 0; r < a->val.rows(); ++r) {
        Scalar mx = a->val.row(r).maxCoeff();
        Eigen::Array<Scalar, 1, Eigen::Dynamic> e = (a->val.row(r).array() - mx).exp();
        v.row(r) = e / e.sum();
    }
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a] {
            Mat& g = acc_grad(a);
            for (int r = 0; r < o->val.rows(); ++r) {
                Scalar dot = o->grad.row(r).cwiseProduct(o->val.row(r)).sum();
                g.row(r) += (o->val.row(r).array() * (o->grad.row(r).array() - dot)).matrix();
            }
        };
    }
    return out;
}

Var layernorm(Tape& t, Var x, Var gamma, Var beta, Scalar eps) {
    const int R = static_cast<int>(x->val.rows());
    const int C = static_cast<int>(x->val.cols());
    if (gamma->val.cols() != C || beta->val.cols() != C)
        throw NumericError("layernorm: gamma/beta width mismatch");
    bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
    Mat xhat(R, C);
    Vec inv_std(R);
    for (int r = 0; r < R; ++r) {
        Scalar mu = x->val.row(r).mean();
        Scalar var = (x->val.row(r).array() - mu).square().mean();
        Scalar is = 1.0 / std::sqrt(var + eps);
        inv_std(r) = is;
        xhat.row(r) = (x->val.row(r).array() - mu) * is;
    }
    Mat v = (xhat.array().rowwise() * gamma->val.row(0).array()).rowwise() + beta->val.row(0).array();
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), C] {
            if (beta->requires_grad) acc_grad(beta) += o->grad.colwise().sum();
            if (gamma->requires_grad) acc_grad(gamma) += (o->grad.cwiseProduct(xhat)).colwise().sum();
            if (x->requires_grad) {
                Mat& g = acc_grad(x);
                for (int r = 0; r < o->grad.rows(); ++r) {
                    // d xhat = dy * gamma; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
                    Eigen::Array<Scalar, 1, Eigen::Dynamic> dxh =
                        o->grad.row(r).array() * gamma->val.row(0).array();
                    Scalar m1 = dxh.mean();
                    Scalar m2 = (dxh * xhat.row(r).array()).mean();
                    g.row(r) += ((dxh - m1 - xhat.row(r).array() * m2) * inv_std(r)).matrix();
                }
                (void)C;
            }
        };
    }
    return out;
}

Var sum_all(Tape& t, Var a) {
    bool rg = a->requires_grad;
    Mat v(1, 1);
    v(0, 0) = a->val.sum();
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, a] { acc_grad(a).array() += o->grad(0, 0); };
    }
    return out;
}

Var mean_all(Tape& t, Var a) {
    Scalar n = static_cast<Scalar>(a->val.size());
    return scale(t, sum_all(t, a), 1.0 / n);
}

Var mse_loss(Tape& t, Var pred, const Mat& target) {
    if (pred->val.rows() != target.rows() || pred->val.cols() != target.cols())
        throw NumericError("mse_loss: shape mismatch");
    bool rg = pred->requires_grad;
    Mat diff = pred->val - target;
    Mat v(1, 1);
    const Scalar n = static_cast<Scalar>(diff.size());
    v(0, 0) = diff.array().square().sum() / n;
    auto out = t.record(std::move(v), rg, nullptr);
    if (rg) {
        Node* o = out.get();
        out->backward = [o, pred, diff = std::move(diff), n] {
            acc_grad(pred) += (2.0 / n) * o->grad(0, 0) * diff;
        };
    }
    return out;
}

// --- ParamStore / AdamW ------------------------------------------------------

Var ParamStore::add(const std::string& name, Mat init, bool weight_decay) {
    for (const auto& p : params_)
        if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
    Param p;
    p.name = name;
    p.var = Tape::leaf(std::move(init), true);
    p.weight_decay = weight_decay;
    params_.push_back(std::move(p));
    return params_.back().var;
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p.var->grad.resize(0, 0);
}

void ParamStore::freeze() {
    for (auto& p : params_) p.var->requires_grad = false;
}

std::size_t ParamStore::count_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.var->val.size());
    return n;
}

std::uint64_t ParamStore::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : params_) {
        h = fnv1a(p.name.data(), p.name.size(), h);
        h = hash_mat(p.var->val, h);
    }
    return h;
}

const Param& ParamStore::at(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p;
    throw ConfigError("no such parameter: " + name);
}

Var ParamStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.var;
    return nullptr;
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& p : params_) out.add(p.name, p.var->val, p.weight_decay);
    return out;
}

void ParamStore::load_values(const ParamStore& src) {
    if (src.params_.size() != params_.size()) throw ConfigError("load_values: layout mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (src.params_[i].name != params_[i].name) throw ConfigError("load_values: name mismatch");
        params_[i].var->val = src.params_[i].var->val;
    }
}

void ParamStore::accumulate_grads(const std::vector<const ParamStore*>& shards) {
    for (const auto* shard : shards) {
        if (shard->params_.size() != params_.size())
            throw ConfigError("accumulate_grads: layout mismatch");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const Mat& g = shard->params_[i].var->grad;
            if (g.size() == 0) continue;
            acc_grad(params_[i].var) += g;
        }
    }
}

void AdamW::step(ParamStore& store, Scalar lr) {
    auto& ps = store.params();
    if (m_.empty()) {
        m_.resize(ps.size());
        v_.resize(ps.size());
        for (std::size_t i = 0; i < ps.size(); ++i) {
            m_[i] = Mat::Zero(ps[i].var->val.rows(), ps[i].var->val.cols());
            v_[i] = Mat::Zero(ps[i].var->val.rows(), ps[i].var->val.cols());
        }
    }
    ++t_;
    const Scalar bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const Scalar bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        Mat& pval = ps[i].var->val;
        const Mat& g = ps[i].var->grad.size() ? ps[i].var->grad : Mat::Zero(pval.rows(), pval.cols()).eval();
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        Mat mhat = m_[i] / bc1;
        Mat vhat = v_[i] / bc2;
        if (ps[i].weight_decay && cfg_.weight_decay > 0.0) pval -= lr * cfg_.weight_decay * pval;
        pval.array() -= lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps));
    }
}

Scalar warmup_cosine_lr(Scalar max_lr, std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps) {
    if (total_steps <= 0) return max_lr;
    if (warmup_steps > 0 && step < warmup_steps)
        return max_lr * static_cast<Scalar>(step + 1) / static_cast<Scalar>(warmup_steps);
    Scalar prog = total_steps == warmup_steps
                      ? 1.0
                      : static_cast<Scalar>(step - warmup_steps) / static_cast<Scalar>(total_steps - warmup_steps);
    prog = std::clamp(prog, Scalar(0), Scalar(1));
    return 0.5 * max_lr * (1.0 + std::cos(M_PI * prog));
}

Mat finite_difference(const std::function<Scalar()>& eval, Mat& value, Scalar h) {
    Mat g(value.rows(), value.cols());
    for (int r = 0; r < value.rows(); ++r) {
        for (int c = 0; c < value.cols(); ++c) {
            Scalar keep = value(r, c);
            value(r, c) = keep + h;
            Scalar up = eval();
            value(r, c) = keep - h;
            Scalar dn = eval();
            value(r, c) = keep;
            g(r, c) = (up - dn) / (2.0 * h);
        }
    }
    return g;
}

}  // namespace optcwm::ag
