#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "t5lab/tensor.hpp"

namespace t5lab {

// Additive attention-mask constant. exp(mask_value - anything reasonable) underflows to
// exactly zero, and masked positions are skipped explicitly in softmax anyway.
template <class Real>
constexpr Real mask_value();
template <>
constexpr float mask_value<float>() { return -1e9f; }
template <>
constexpr double mask_value<double>() { return -1e30; }

template <class Real>
constexpr bool is_masked(Real m) { return m <= mask_value<Real>() * Real(0.5); }

namespace detail {

// C = A[m x k] * B[k x n], accumulating when acc is set. Fixed ikj order: the inner
// reduction over p runs in ascending order for every output cell, which keeps results
// bit-identical across packed/unpacked layouts of the same rows.
template <class Real>
void gemm_nn(const Real* a, const Real* b, Real* c, int64_t m, int64_t k, int64_t n, bool acc) {
    for (int64_t i = 0; i < m; ++i) {
        Real* crow = c + i * n;
        if (!acc) std::fill(crow, crow + n, Real(0));
        const Real* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            Real aip = arow[p];
            const Real* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// C = A[m x k] * B[n x k]^T
template <class Real>
void gemm_nt(const Real* a, const Real* b, Real* c, int64_t m, int64_t k, int64_t n, bool acc) {
    for (int64_t i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        Real* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const Real* brow = b + j * k;
            Real s = 0;
            for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = acc ? crow[j] + s : s;
        }
    }
}

// C = A[k x m]^T * B[k x n]
template <class Real>
void gemm_tn(const Real* a, const Real* b, Real* c, int64_t m, int64_t k, int64_t n, bool acc) {
    if (!acc) std::fill(c, c + m * n, Real(0));
    for (int64_t p = 0; p < k; ++p) {
        const Real* arow = a + p * m;
        const Real* brow = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            Real api = arow[i];
            Real* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

template <class Real>
inline Real gelu_scalar(Real x) {
    // tanh approximation, T5 1.1 convention: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
    const Real c0 = Real(0.7978845608028654);  // sqrt(2/pi)
    const Real c1 = Real(0.044715);
    return Real(0.5) * x * (Real(1) + std::tanh(c0 * (x + c1 * x * x * x)));
}

template <class Real>
inline Real gelu_grad_scalar(Real x) {
    const Real c0 = Real(0.7978845608028654);
    const Real c1 = Real(0.044715);
    Real u = c0 * (x + c1 * x * x * x);
    Real t = std::tanh(u);
    Real sech2 = Real(1) - t * t;
    return Real(0.5) * (Real(1) + t) + Real(0.5) * x * sech2 * c0 * (Real(1) + Real(3) * c1 * x * x);
}

}  // namespace detail

// Reverse-mode tape over dense tensors. Nodes are recorded in construction order, which
// is a topological order by definition; backward() walks exactly the reverse of it, so
// gradient accumulation order is fixed for a fixed graph. Node values are immutable once
// created. In checked mode every op verifies its output is finite.
template <class Real>
class Graph {
public:
    using MaskPtr = std::shared_ptr<const std::vector<Real>>;
    using IndexPtr = std::shared_ptr<const std::vector<int64_t>>;

    explicit Graph(bool checked = true) : checked_(checked) {}

    // ---- leaves ----

    int constant(Tensor<Real> t) { return push_leaf(std::move(t), false, nullptr); }

    int leaf(Tensor<Real> t, bool needs_grad) { return push_leaf(std::move(t), needs_grad, nullptr); }

    // Bound leaf: after backward(), the node's gradient is accumulated into p->grad.
    // Registering the same tensor twice returns the same node.
    int param(Tensor<Real>* p) {
        auto it = param_nodes_.find(p);
        if (it != param_nodes_.end()) return it->second;
        int id = push_leaf(*p, true, p);
        param_nodes_.emplace(p, id);
        return id;
    }

    // ---- ops ----

    int add(int a, int b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        if (ta.shape != tb.shape) {
            throw ShapeError("add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
        }
        Tensor<Real> out = ta;
        for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += tb.data[i];
        return push(Op::add, {a, b}, std::move(out));
    }

    // matrix [m x n] + bias [n], broadcast over rows
    int add_bias(int m, int bias) {
        const auto& tm = val(m);
        const auto& tb = val(bias);
        if (tm.rank() != 2 || tb.rank() != 1 || tb.shape[0] != tm.cols()) {
            throw ShapeError("add_bias: " + shape_str(tm.shape) + " + " + shape_str(tb.shape));
        }
        Tensor<Real> out = tm;
        for (int64_t i = 0; i < tm.rows(); ++i)
            for (int64_t j = 0; j < tm.cols(); ++j) out.data[i * tm.cols() + j] += tb.data[j];
        return push(Op::add_bias, {m, bias}, std::move(out));
    }

    int mul(int a, int b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        if (ta.shape != tb.shape) {
            throw ShapeError("mul: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
        }
        Tensor<Real> out = ta;
        for (int64_t i = 0; i < out.numel(); ++i) out.data[i] *= tb.data[i];
        return push(Op::mul, {a, b}, std::move(out));
    }

    int scale(int a, Real s) {
        Tensor<Real> out = val(a);
        for (auto& v : out.data) v *= s;
        int id = push(Op::scale, {a}, std::move(out));
        nodes_[id].scalar = s;
        return id;
    }

    int matmul(int a, int b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
            throw ShapeError("matmul: " + shape_str(ta.shape) + " * " + shape_str(tb.shape));
        }
        Tensor<Real> out = Tensor<Real>::zeros({ta.rows(), tb.cols()});
        detail::gemm_nn(ta.data.data(), tb.data.data(), out.data.data(), ta.rows(), ta.cols(), tb.cols(), false);
        return push(Op::matmul, {a, b}, std::move(out));
    }

    // a [m x k] * b[n x k]^T -> [m x n]
    int matmul_nt(int a, int b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols()) {
            throw ShapeError("matmul_nt: " + shape_str(ta.shape) + " * " + shape_str(tb.shape) + "^T");
        }
        Tensor<Real> out = Tensor<Real>::zeros({ta.rows(), tb.rows()});
        detail::gemm_nt(ta.data.data(), tb.data.data(), out.data.data(), ta.rows(), ta.cols(), tb.rows(), false);
        return push(Op::matmul_nt, {a, b}, std::move(out));
    }

    int gelu(int x) {
        Tensor<Real> out = val(x);
        for (auto& v : out.data) v = detail::gelu_scalar(v);
        return push(Op::gelu, {x}, std::move(out));
    }

    // y = x / sqrt(mean(x^2, last dim) + eps) * scale
    int rms_norm(int x, int scale_v, Real eps) {
        const auto& tx = val(x);
        const auto& ts = val(scale_v);
        if (eps <= Real(0)) throw ShapeError("rms_norm: eps must be positive");
        int64_t d = tx.last_dim();
        if (ts.numel() != d) {
            throw ShapeError("rms_norm: scale " + shape_str(ts.shape) + " does not match last dim " +
                             std::to_string(d));
        }
        int64_t rows = tx.numel() / d;
        Tensor<Real> out = tx;
        std::vector<Real> inv(static_cast<size_t>(rows));
        for (int64_t r = 0; r < rows; ++r) {
            const Real* xr = tx.data.data() + r * d;
            Real ms = 0;
            for (int64_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
            ms /= Real(d);
            Real iv = Real(1) / std::sqrt(ms + eps);
            inv[static_cast<size_t>(r)] = iv;
            Real* yr = out.data.data() + r * d;
            for (int64_t j = 0; j < d; ++j) yr[j] = xr[j] * iv * ts.data[j];
        }
        int id = push(Op::rms_norm, {x, scale_v}, std::move(out));
        nodes_[id].aux = std::move(inv);
        nodes_[id].scalar = eps;
        return id;
    }

    // Softmax over the last dimension with an optional additive isolation mask of the
    // same numel. Masked positions get probability exactly 0; rows with every position
    // masked come back all-zeros.
    int softmax_lastdim(int x, MaskPtr mask = nullptr) {
        const auto& tx = val(x);
        if (mask && static_cast<int64_t>(mask->size()) != tx.numel()) {
            throw ShapeError("softmax_lastdim: mask size " + std::to_string(mask->size()) +
                             " != input numel " + std::to_string(tx.numel()));
        }
        int64_t d = tx.last_dim();
        int64_t rows = tx.numel() / d;
        Tensor<Real> out = Tensor<Real>::zeros(tx.shape);
        const Real* mp = mask ? mask->data() : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
            const Real* xr = tx.data.data() + r * d;
            const Real* mr = mp ? mp + r * d : nullptr;
            Real* yr = out.data.data() + r * d;
            Real mx = 0;
            bool any = false;
            for (int64_t j = 0; j < d; ++j) {
                if (mr && is_masked(mr[j])) continue;
                Real v = mr ? xr[j] + mr[j] : xr[j];
                if (!any || v > mx) mx = v;
                any = true;
            }
            if (!any) continue;  // fully masked row stays all-zeros
            Real sum = 0;
            for (int64_t j = 0; j < d; ++j) {
                if (mr && is_masked(mr[j])) continue;
                Real e = std::exp((mr ? xr[j] + mr[j] : xr[j]) - mx);
                yr[j] = e;
                sum += e;
            }
            for (int64_t j = 0; j < d; ++j) yr[j] /= sum;
        }
        int id = push(Op::softmax, {x}, std::move(out));
        nodes_[id].mask = std::move(mask);
        return id;
    }

    // out[i, :] = table[ids[i], :]
    int gather_rows(int table, std::vector<int64_t> ids) {
        const auto& tt = val(table);
        if (tt.rank() != 2) throw ShapeError("gather_rows: table must be rank 2");
        int64_t d = tt.cols();
        Tensor<Real> out = Tensor<Real>::zeros({static_cast<int64_t>(ids.size()), d});
        for (size_t i = 0; i < ids.size(); ++i) {
            int64_t r = ids[i];
            if (r < 0 || r >= tt.rows()) {
                throw ShapeError("gather_rows: id " + std::to_string(r) + " out of range [0, " +
                                 std::to_string(tt.rows()) + ")");
            }
            std::copy_n(tt.data.data() + r * d, d, out.data.data() + static_cast<int64_t>(i) * d);
        }
        int id = push(Op::gather_rows, {table}, std::move(out));
        nodes_[id].idx = std::make_shared<const std::vector<int64_t>>(std::move(ids));
        return id;
    }

    // out.flat[i] = table.flat[idx[i] + offset]; scatter-add on backward.
    int take(int table, IndexPtr idx, int64_t offset, Shape out_shape) {
        const auto& tt = val(table);
        if (shape_numel(out_shape) != static_cast<int64_t>(idx->size())) {
            throw ShapeError("take: index count does not match output shape");
        }
        Tensor<Real> out = Tensor<Real>::zeros(std::move(out_shape));
        for (size_t i = 0; i < idx->size(); ++i) {
            int64_t f = (*idx)[i] + offset;
            if (f < 0 || f >= tt.numel()) throw ShapeError("take: flat index out of range");
            out.data[i] = tt.data[static_cast<size_t>(f)];
        }
        int id = push(Op::take, {table}, std::move(out));
        nodes_[id].idx = std::move(idx);
        nodes_[id].int_scalar = offset;
        return id;
    }

    // vec [d] replicated into [rows x d]
    int broadcast_row(int vec, int64_t rows) {
        const auto& tv = val(vec);
        if (tv.rank() != 1) throw ShapeError("broadcast_row: input must be rank 1");
        int64_t d = tv.numel();
        Tensor<Real> out = Tensor<Real>::zeros({rows, d});
        for (int64_t r = 0; r < rows; ++r) std::copy_n(tv.data.data(), d, out.data.data() + r * d);
        return push(Op::broadcast_row, {vec}, std::move(out));
    }

    int slice_rows(int x, int64_t r0, int64_t r1) {
        const auto& tx = val(x);
        if (tx.rank() != 2 || r0 < 0 || r1 > tx.rows() || r0 >= r1) {
            throw ShapeError("slice_rows: bad range");
        }
        int64_t n = tx.cols();
        Tensor<Real> out({r1 - r0, n},
                         std::vector<Real>(tx.data.begin() + r0 * n, tx.data.begin() + r1 * n));
        int id = push(Op::slice_rows, {x}, std::move(out));
        nodes_[id].int_scalar = r0;
        return id;
    }

    int slice_cols(int x, int64_t c0, int64_t c1) {
        const auto& tx = val(x);
        if (tx.rank() != 2 || c0 < 0 || c1 > tx.cols() || c0 >= c1) {
            throw ShapeError("slice_cols: bad range");
        }
        int64_t m = tx.rows(), n = tx.cols(), w = c1 - c0;
        Tensor<Real> out = Tensor<Real>::zeros({m, w});
        for (int64_t i = 0; i < m; ++i) {
            std::copy_n(tx.data.data() + i * n + c0, w, out.data.data() + i * w);
        }
        int id = push(Op::slice_cols, {x}, std::move(out));
        nodes_[id].int_scalar = c0;
        return id;
    }

    int concat_cols(const std::vector<int>& xs) {
        if (xs.empty()) throw ShapeError("concat_cols: no inputs");
        int64_t m = val(xs[0]).rows();
        int64_t total = 0;
        for (int x : xs) {
            if (val(x).rank() != 2 || val(x).rows() != m) throw ShapeError("concat_cols: row mismatch");
            total += val(x).cols();
        }
        Tensor<Real> out = Tensor<Real>::zeros({m, total});
        int64_t off = 0;
        for (int x : xs) {
            const auto& t = val(x);
            for (int64_t i = 0; i < m; ++i) {
                std::copy_n(t.data.data() + i * t.cols(), t.cols(), out.data.data() + i * total + off);
            }
            off += t.cols();
        }
        return push(Op::concat_cols, xs, std::move(out));
    }

    int concat_rows(const std::vector<int>& xs) {
        if (xs.empty()) throw ShapeError("concat_rows: no inputs");
        int64_t n = val(xs[0]).cols();
        int64_t total = 0;
        for (int x : xs) {
            if (val(x).rank() != 2 || val(x).cols() != n) throw ShapeError("concat_rows: col mismatch");
            total += val(x).rows();
        }
        Tensor<Real> out = Tensor<Real>::zeros({total, n});
        int64_t off = 0;
        for (int x : xs) {
            const auto& t = val(x);
            std::copy_n(t.data.data(), t.numel(), out.data.data() + off * n);
            off += t.rows();
        }
        return push(Op::concat_rows, xs, std::move(out));
    }

    int reshape(int x, Shape s) {
        const auto& tx = val(x);
        if (shape_numel(s) != tx.numel()) {
            throw ShapeError("reshape: numel mismatch " + shape_str(tx.shape) + " -> " + shape_str(s));
        }
        Tensor<Real> out(std::move(s), tx.data);
        return push(Op::reshape, {x}, std::move(out));
    }

    int sum_all(int x) {
        const auto& tx = val(x);
        Real s = 0;
        for (Real v : tx.data) s += v;
        return push(Op::sum_all, {x}, Tensor<Real>({1}, {s}));
    }

    // Mask-weighted mean of -log softmax(logits)[target]. weight_mask entries are 0 or 1;
    // positions with mask 0 are skipped entirely, so they contribute exactly zero to the
    // value and to every gradient.
    int cross_entropy_masked(int logits, std::vector<int64_t> targets, std::vector<Real> weight_mask) {
        const auto& tl = val(logits);
        if (tl.rank() != 2) throw ShapeError("cross_entropy_masked: logits must be rank 2");
        int64_t n = tl.rows(), c = tl.cols();
        if (static_cast<int64_t>(targets.size()) != n || static_cast<int64_t>(weight_mask.size()) != n) {
            throw ShapeError("cross_entropy_masked: targets/mask length != logit rows");
        }
        Real wsum = 0;
        for (Real w : weight_mask) wsum += w;
        if (wsum <= Real(0)) throw Error("empty loss support");
        Real loss = 0;
        for (int64_t i = 0; i < n; ++i) {
            if (weight_mask[static_cast<size_t>(i)] == Real(0)) continue;
            int64_t t = targets[static_cast<size_t>(i)];
            if (t < 0 || t >= c) throw ShapeError("cross_entropy_masked: target out of range");
            const Real* row = tl.data.data() + i * c;
            Real mx = row[0];
            for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            Real z = 0;
            for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
            loss += weight_mask[static_cast<size_t>(i)] * (std::log(z) + mx - row[t]);
        }
        int id = push(Op::cross_entropy, {logits}, Tensor<Real>({1}, {loss / wsum}));
        nodes_[id].idx = std::make_shared<const std::vector<int64_t>>(std::move(targets));
        nodes_[id].aux = std::move(weight_mask);
        nodes_[id].scalar = wsum;
        return id;
    }

    // Mask-weighted mean of (pred - target)^2 over rank-1 predictions.
    int mse_masked(int pred, std::vector<Real> targets, std::vector<Real> weight_mask) {
        const auto& tp = val(pred);
        int64_t n = tp.numel();
        if (static_cast<int64_t>(targets.size()) != n || static_cast<int64_t>(weight_mask.size()) != n) {
            throw ShapeError("mse_masked: targets/mask length != prediction count");
        }
        Real wsum = 0;
        for (Real w : weight_mask) wsum += w;
        if (wsum <= Real(0)) throw Error("empty loss support");
        Real loss = 0;
        for (int64_t i = 0; i < n; ++i) {
            if (weight_mask[static_cast<size_t>(i)] == Real(0)) continue;
            Real d = tp.data[static_cast<size_t>(i)] - targets[static_cast<size_t>(i)];
            loss += weight_mask[static_cast<size_t>(i)] * d * d;
        }
        int id = push(Op::mse, {pred}, Tensor<Real>({1}, {loss / wsum}));
        nodes_[id].aux = std::move(targets);
        nodes_[id].aux2 = std::move(weight_mask);
        nodes_[id].scalar = wsum;
        return id;
    }

    // ---- execution ----

    const Tensor<Real>& value(int id) const { return vals_[static_cast<size_t>(id)]; }

    std::span<const Real> grad_of(int id) const {
        const auto& g = grads_[static_cast<size_t>(id)];
        return {g.data(), g.size()};
    }

    size_t num_nodes() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and walks the tape in exact reverse construction order.
    // Gradients of bound parameter leaves are accumulated into their tensors' grad.
    void backward(int loss) {
        if (val(loss).numel() != 1) throw ShapeError("backward: loss must be scalar");
        grads_.assign(nodes_.size(), {});
        grads_[static_cast<size_t>(loss)] = {Real(1)};
        for (int id = loss; id >= 0; --id) {
            auto& gout = grads_[static_cast<size_t>(id)];
            if (gout.empty()) continue;
            backward_node(id, gout.data());
        }
        for (auto& [ptr, id] : param_nodes_) {
            const auto& g = grads_[static_cast<size_t>(id)];
            if (g.empty()) continue;
            ptr->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) ptr->grad[i] += g[i];
        }
        if (checked_) {
            for (auto& [ptr, id] : param_nodes_) {
                for (Real v : ptr->grad) {
                    if (!std::isfinite(static_cast<double>(v))) {
                        throw NonFiniteError("backward: non-finite parameter gradient");
                    }
                }
            }
        }
    }

private:
    enum class Op {
        leaf,
        add,
        add_bias,
        mul,
        scale,
        matmul,
        matmul_nt,
        gelu,
        rms_norm,
        softmax,
        gather_rows,
        take,
        broadcast_row,
        slice_rows,
        slice_cols,
        concat_cols,
        concat_rows,
        reshape,
        sum_all,
        cross_entropy,
        mse,
    };

    struct Node {
        Op op = Op::leaf;
        std::vector<int> in;
        IndexPtr idx;            // gather/take indices, CE targets
        MaskPtr mask;            // softmax isolation mask
        std::vector<Real> aux;   // rms_norm inv factors, CE mask, MSE targets
        std::vector<Real> aux2;  // MSE mask
        Real scalar = 0;         // scale factor, eps, loss weight sum
        int64_t int_scalar = 0;  // slice origin, take offset
        bool needs_grad = false;
    };

    int push_leaf(Tensor<Real> t, bool needs_grad, Tensor<Real>* bound) {
        if (checked_ && !t.all_finite()) throw NonFiniteError("leaf: non-finite input tensor");
        vals_.push_back(std::move(t));
        Node n;
        n.op = Op::leaf;
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        (void)bound;
        return static_cast<int>(nodes_.size()) - 1;
    }

    int push(Op op, std::vector<int> in, Tensor<Real> out) {
        if (checked_ && !out.all_finite()) {
            throw NonFiniteError("op produced non-finite values (op code " +
                                 std::to_string(static_cast<int>(op)) + ")");
        }
        bool ng = false;
        for (int i : in) ng = ng || nodes_[static_cast<size_t>(i)].needs_grad;
        vals_.push_back(std::move(out));
        Node n;
        n.op = op;
        n.in = std::move(in);
        n.needs_grad = ng;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor<Real>& val(int id) const { return vals_[static_cast<size_t>(id)]; }

    std::vector<Real>& grad_buf(int id) {
        auto& g = grads_[static_cast<size_t>(id)];
        if (g.empty()) g.assign(val(id).data.size(), Real(0));
        return g;
    }

    void backward_node(int id, const Real* gout) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        const Tensor<Real>& out = val(id);
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::add: {
                for (int side = 0; side < 2; ++side) {
                    int src = n.in[static_cast<size_t>(side)];
                    if (!needs(src)) continue;
                    auto& g = grad_buf(src);
                    for (size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
                }
                break;
            }
            case Op::add_bias: {
                const auto& tm = val(n.in[0]);
                if (needs(n.in[0])) {
                    auto& g = grad_buf(n.in[0]);
                    for (size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
                }
                if (needs(n.in[1])) {
                    auto& g = grad_buf(n.in[1]);
                    for (int64_t i = 0; i < tm.rows(); ++i)
                        for (int64_t j = 0; j < tm.cols(); ++j)
                            g[static_cast<size_t>(j)] += gout[i * tm.cols() + j];
                }
                break;
            }
            case Op::mul: {
                const auto& ta = val(n.in[0]);
                const auto& tb = val(n.in[1]);
                if (needs(n.in[0])) {
                    auto& g = grad_buf(n.in[0]);
                    for (size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * tb.data[i];
                }
                if (needs(n.in[1])) {
                    auto& g = grad_buf(n.in[1]);
                    for (size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * ta.data[i];
                }
                break;
            }
            case Op::scale: {
                if (needs(n.in[0])) {
                    auto& g = grad_buf(n.in[0]);
                    for (size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * n.scalar;
                }
                break;
            }
            case Op::matmul: {
                const auto& ta = val(n.in[0]);
                const auto& tb = val(n.in[1]);
                int64_t m = ta.rows(), k = ta.cols(), c = tb.cols();
                if (needs(n.in[0])) {
                    detail::gemm_nt(gout, tb.data.data(), grad_buf(n.in[0]).data(), m, c, k, true);
                }
                if (needs(n.in[1])) {
                    detail::gemm_tn(ta.data.data(), gout, grad_buf(n.in[1]).data(), k, m, c, true);
                }
                break;
            }
            case Op::matmul_nt: {
                // C = A * B^T: dA = dC * B, dB = dC^T * A
                const auto& ta = val(n.in[0]);
                const auto& tb = val(n.in[1]);
                int64_t m = ta.rows(), k = ta.cols(), c = tb.rows();
                if (needs(n.in[0])) {
                    detail::gemm_nn(gout, tb.data.data(), grad_buf(n.in[0]).data(), m, c, k, true);
                }
                if (needs(n.in[1])) {
                    detail::gemm_tn(gout, ta.data.data(), grad_buf(n.in[1]).data(), c, m, k, true);
                }
                break;
            }
            case Op::gelu: {
                if (needs(n.in[0])) {
                    const auto& tx = val(n.in[0]);
                    auto& g = grad_buf(n.in[0]);
                    for (size_t i = 0; i < g.size(); ++i)
                        g[i] += gout[i] * detail::gelu_grad_scalar(tx.data[i]);
                }
                break;
            }
            case Op::rms_norm: {
                const auto& tx = val(n.in[0]);
                const auto& ts = val(n.in[1]);
                int64_t d = ts.numel();
                int64_t rows = tx.numel() / d;
                if (needs(n.in[1])) {
                    auto& gs = grad_buf(n.in[1]);
                    for (int64_t r = 0; r < rows; ++r) {
                        Real iv = n.aux[static_cast<size_t>(r)];
                        const Real* xr = tx.data.data() + r * d;
                        const Real* go = gout + r * d;
                        for (int64_t j = 0; j < d; ++j) gs[static_cast<size_t>(j)] += go[j] * xr[j] * iv;
                    }
                }
                if (needs(n.in[0])) {
                    auto& gx = grad_buf(n.in[0]);
                    for (int64_t r = 0; r < rows; ++r) {
                        Real iv = n.aux[static_cast<size_t>(r)];
                        const Real* xr = tx.data.data() + r * d;
                        const Real* go = gout + r * d;
                        Real dot = 0;
                        for (int64_t j = 0; j < d; ++j) dot += go[j] * ts.data[j] * xr[j];
                        Real coef = iv * iv * iv * dot / Real(d);
                        Real* gr = gx.data() + r * d;
                        for (int64_t j = 0; j < d; ++j) gr[j] += go[j] * ts.data[j] * iv - coef * xr[j];
                    }
                }
                break;
            }
            case Op::softmax: {
                if (needs(n.in[0])) {
                    int64_t d = out.last_dim();
                    int64_t rows = out.numel() / d;
                    auto& gx = grad_buf(n.in[0]);
                    for (int64_t r = 0; r < rows; ++r) {
                        const Real* yr = out.data.data() + r * d;
                        const Real* go = gout + r * d;
                        Real dot = 0;
                        for (int64_t j = 0; j < d; ++j) dot += go[j] * yr[j];
                        Real* gr = gx.data() + r * d;
                        for (int64_t j = 0; j < d; ++j) gr[j] += (go[j] - dot) * yr[j];
                    }
                }
                break;
            }
            case Op::gather_rows: {
                if (needs(n.in[0])) {
                    const auto& tt = val(n.in[0]);
                    int64_t d = tt.cols();
                    auto& g = grad_buf(n.in[0]);
                    const auto& ids = *n.idx;
                    for (size_t i = 0; i < ids.size(); ++i) {
                        Real* dst = g.data() + ids[i] * d;
                        const Real* src = gout + static_cast<int64_t>(i) * d;
                        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
                }
                break;
            }
            case Op::take: {
                if (needs(n.in[0])) {
                    auto& g = grad_buf(n.in[0]);
                    const auto& ids = *n.idx;
                    for (size_t i = 0; i < ids.size(); ++i) {
                        g[static_cast<size_t>(ids[i] + n.int_scalar)] += gout[i];
                    }
                }
                break;
            }
            case Op::broadcast_row: {
                if (needs(n.in[0])) {
                    int64_t d = val(n.in[0]).numel();
                    int64_t rows = out.numel() / d;
                    auto& g = grad_buf(n.in[0]);
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < d; ++j) g[static_cast<size_t>(j)] += gout[r * d + j];
                }
                break;
            }
            case Op::slice_rows: {
                if (needs(n.in[0])) {
                    int64_t ncols = val(n.in[0]).cols();
                    auto& g = grad_buf(n.in[0]);
                    Real* dst = g.data() + n.int_scalar * ncols;
                    for (int64_t i = 0; i < out.numel(); ++i) dst[i] += gout[i];
                }
                break;
            }
            case Op::slice_cols: {
                if (needs(n.in[0])) {
                    const auto& tx = val(n.in[0]);
                    int64_t w = out.cols();
                    auto& g = grad_buf(n.in[0]);
                    for (int64_t i = 0; i < out.rows(); ++i) {
                        Real* dst = g.data() + i * tx.cols() + n.int_scalar;
                        const Real* src = gout + i * w;
                        for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
                    }
                }
                break;
            }
            case Op::concat_cols: {
                int64_t total = out.cols();
                int64_t off = 0;
                for (int src : n.in) {
                    const auto& t = val(src);
                    if (needs(src)) {
                        auto& g = grad_buf(src);
                        for (int64_t i = 0; i < t.rows(); ++i) {
                            const Real* gsrc = gout + i * total + off;
                            Real* dst = g.data() + i * t.cols();
                            for (int64_t j = 0; j < t.cols(); ++j) dst[j] += gsrc[j];
                        }
                    }
                    off += t.cols();
                }
                break;
            }
            case Op::concat_rows: {
                int64_t ncols = out.cols();
                int64_t off = 0;
                for (int src : n.in) {
                    const auto& t = val(src);
                    if (needs(src)) {
                        auto& g = grad_buf(src);
                        const Real* gsrc = gout + off * ncols;
                        for (int64_t i = 0; i < t.numel(); ++i) g[static_cast<size_t>(i)] += gsrc[i];
                    }
                    off += t.rows();
                }
                break;
            }
            case Op::reshape: {
                if (needs(n.in[0])) {
                    auto& g = grad_buf(n.in[0]);
                    for (size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
                }
                break;
            }
            case Op::sum_all: {
                if (needs(n.in[0])) {
                    auto& g = grad_buf(n.in[0]);
                    for (auto& v : g) v += gout[0];
                }
                break;
            }
            case Op::cross_entropy: {
                if (needs(n.in[0])) {
                    const auto& tl = val(n.in[0]);
                    int64_t rows = tl.rows(), c = tl.cols();
                    const auto& targets = *n.idx;
                    auto& g = grad_buf(n.in[0]);
                    Real seed = gout[0] / n.scalar;
                    for (int64_t i = 0; i < rows; ++i) {
                        Real w = n.aux[static_cast<size_t>(i)];
                        if (w == Real(0)) continue;
                        const Real* row = tl.data.data() + i * c;
                        Real mx = row[0];
                        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                        Real z = 0;
                        for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
                        Real* gr = g.data() + i * c;
                        for (int64_t j = 0; j < c; ++j) {
                            Real p = std::exp(row[j] - mx) / z;
                            gr[j] += seed * w * (p - (j == targets[static_cast<size_t>(i)] ? Real(1) : Real(0)));
                        }
                    }
                }
                break;
            }
            case Op::mse: {
                if (needs(n.in[0])) {
                    const auto& tp = val(n.in[0]);
                    auto& g = grad_buf(n.in[0]);
                    Real seed = gout[0] / n.scalar;
                    for (size_t i = 0; i < g.size(); ++i) {
                        Real w = n.aux2[i];
                        if (w == Real(0)) continue;
                        g[i] += seed * w * Real(2) * (tp.data[i] - n.aux[i]);
                    }
                }
                break;
            }
        }
    }

    bool needs(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    bool checked_;
    std::vector<Tensor<Real>> vals_;
    std::vector<Node> nodes_;
    std::vector<std::vector<Real>> grads_;
    std::map<Tensor<Real>*, int> param_nodes_;
};

}  // namespace t5lab
