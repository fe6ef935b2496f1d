#include "rgbadit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_set>

namespace rgbadit {

namespace {

thread_local int g_no_grad_depth = 0;

constexpr double kInf        = std::numeric_limits<double>::infinity();
constexpr double kInvSqrt2   = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// below this many MACs a parallel dispatch costs more than it saves
constexpr int64_t kParallelMacs = 1 << 22;

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericsError(std::string("non-finite value produced by ") + op);
        }
    }
}

int64_t shape_size(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape");
        n *= d;
    }
    return n;
}

Tensor make_node(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                 std::function<void(TensorNode&)> bp, const char* op) {
    check_finite(data, op);
    auto n   = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data  = std::move(data);
    bool rg  = false;
    if (grad_enabled()) {
        for (auto& p : parents) {
            if (p && p->requires_grad) {
                rg = true;
                break;
            }
        }
    }
    n->requires_grad = rg;
    if (rg) {
        n->parents  = std::move(parents);
        n->backprop = std::move(bp);
    }
    return Tensor::wrap(std::move(n));
}

void require_2d(const Tensor& t, const char* op) {
    if (!t.defined() || t.ndim() != 2) {
        throw ShapeError(std::string(op) + ": expected a 2-D tensor");
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape mismatch");
}

int vec_len(const Tensor& v, const char* op) {
    if (v.ndim() == 1) return v.shape()[0];
    if (v.ndim() == 2 && v.shape()[0] == 1) return v.shape()[1];
    throw ShapeError(std::string(op) + ": expected a vector");
}

void transpose_buf(int rows, int cols, const double* src, double* dst) {
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            dst[static_cast<size_t>(j) * rows + i] = src[static_cast<size_t>(i) * cols + j];
        }
    }
}

}  // namespace

bool grad_enabled() {
    return g_no_grad_depth == 0;
}
NoGradGuard::NoGradGuard() {
    ++g_no_grad_depth;
}
NoGradGuard::~NoGradGuard() {
    --g_no_grad_depth;
}

namespace kernels {

void mm_nn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
    auto body = [&](int rb, int re) {
        for (int i = rb; i < re; ++i) {
            double* crow = c + static_cast<size_t>(i) * n;
            if (!accumulate) std::fill(crow, crow + n, 0.0);
            const double* arow = a + static_cast<size_t>(i) * k;
            for (int l = 0; l < k; ++l) {
                const double av    = arow[l];
                const double* brow = b + static_cast<size_t>(l) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (static_cast<int64_t>(m) * k * n >= kParallelMacs && m >= 2) {
        ThreadPool::instance().parallel_ranges(m, body);
    } else {
        body(0, m);
    }
}

void mm_tn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate) {
    auto body = [&](int rb, int re) {
        for (int i = rb; i < re; ++i) {
            double* crow = c + static_cast<size_t>(i) * n;
            if (!accumulate) std::fill(crow, crow + n, 0.0);
            for (int l = 0; l < k; ++l) {
                const double av    = a[static_cast<size_t>(l) * m + i];
                const double* brow = b + static_cast<size_t>(l) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (static_cast<int64_t>(m) * k * n >= kParallelMacs && m >= 2) {
        ThreadPool::instance().parallel_ranges(m, body);
    } else {
        body(0, m);
    }
}

}  // namespace kernels

// ---- Tensor basics ----

Tensor Tensor::zeros(const Shape& shape) {
    return from_data(shape, std::vector<double>(shape_size(shape), 0.0));
}

Tensor Tensor::full(const Shape& shape, double value) {
    return from_data(shape, std::vector<double>(shape_size(shape), value));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> values) {
    if (shape_size(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("from_data: shape does not match value count");
    }
    auto n   = std::make_shared<TensorNode>();
    n->shape = shape;
    n->data  = std::move(values);
    return Tensor::wrap(std::move(n));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stdev) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = rng.normal() * stdev;
    return from_data(shape, std::move(v));
}

Tensor Tensor::rand_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return from_data(shape, std::move(v));
}

int Tensor::rows() const {
    return n_->shape.empty() ? 1 : n_->shape[0];
}

int Tensor::cols() const {
    return n_->shape.size() >= 2 ? n_->shape[1] : 1;
}

double Tensor::value() const {
    if (size() != 1) throw ContractError("value(): tensor is not scalar");
    return n_->data[0];
}

const std::vector<double>& Tensor::grad() const {
    n_->ensure_grad();
    return n_->grad;
}

void Tensor::zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) throw ShapeError("matmul: inner dimensions disagree");
    std::vector<double> out(static_cast<size_t>(m) * n);
    kernels::mm_nn(m, k, n, a.raw().data(), b.raw().data(), out.data(), false);

    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    auto bp        = [an, bn, m, k, n](TensorNode& o) {
        const double* dc = o.grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            std::vector<double> bt(static_cast<size_t>(k) * n);
            transpose_buf(k, n, bn->data.data(), bt.data());  // -> [n x k]
            kernels::mm_nn(m, n, k, dc, bt.data(), an->grad.data(), true);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            kernels::mm_tn(k, m, n, an->data.data(), dc, bn->grad.data(), true);
        }
    };
    return make_node({m, n}, std::move(out), {a.handle(), b.handle()}, std::move(bp), "matmul");
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const int r = a.rows(), c = a.cols();
    std::vector<double> out(static_cast<size_t>(r) * c);
    transpose_buf(r, c, a.raw().data(), out.data());
    TensorNode* an = a.node();
    auto bp        = [an, r, c](TensorNode& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < c; ++i) {
            for (int j = 0; j < r; ++j) {
                an->grad[static_cast<size_t>(j) * c + i] += o.grad[static_cast<size_t>(i) * r + j];
            }
        }
    };
    return make_node({c, r}, std::move(out), {a.handle()}, std::move(bp), "transpose");
}

namespace {

Tensor elementwise_binary(const Tensor& a, const Tensor& b, double bsign, bool product,
                          const char* op) {
    require_same_shape(a, b, op);
    const auto& av = a.raw();
    const auto& bv = b.raw();
    std::vector<double> out(av.size());
    if (product) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    } else {
        for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bsign * bv[i];
    }
    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    auto bp        = [an, bn, bsign, product](TensorNode& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                an->grad[i] += product ? o.grad[i] * bn->data[i] : o.grad[i];
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                bn->grad[i] += product ? o.grad[i] * an->data[i] : bsign * o.grad[i];
            }
        }
    };
    return make_node(a.shape(), std::move(out), {a.handle(), b.handle()}, std::move(bp), op);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise_binary(a, b, 1.0, false, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise_binary(a, b, -1.0, false, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise_binary(a, b, 0.0, true, "mul");
}

Tensor scale(const Tensor& a, double s) {
    if (!std::isfinite(s)) throw NumericsError("scale: non-finite factor");
    std::vector<double> out(a.raw().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.raw()[i] * s;
    TensorNode* an = a.node();
    auto bp        = [an, s](TensorNode& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += s * o.grad[i];
    };
    return make_node(a.shape(), std::move(out), {a.handle()}, std::move(bp), "scale");
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    require_2d(x, "add_rowvec");
    return add_to_rows(x, v, 0, x.rows());
}

Tensor add_to_rows(const Tensor& x, const Tensor& v, int row_begin, int row_end) {
    require_2d(x, "add_to_rows");
    const int r = x.rows(), c = x.cols();
    if (vec_len(v, "add_to_rows") != c) throw ShapeError("add_to_rows: vector length != cols");
    if (row_begin < 0 || row_end > r || row_begin > row_end) {
        throw IndexError("add_to_rows: row range out of bounds");
    }
    std::vector<double> out = x.raw();
    for (int i = row_begin; i < row_end; ++i) {
        double* rp = out.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) rp[j] += v.raw()[j];
    }
    TensorNode* xn = x.node();
    TensorNode* vn = v.node();
    auto bp        = [xn, vn, row_begin, row_end, c](TensorNode& o) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        }
        if (vn->requires_grad) {
            vn->ensure_grad();
            for (int i = row_begin; i < row_end; ++i) {
                const double* gp = o.grad.data() + static_cast<size_t>(i) * c;
                for (int j = 0; j < c; ++j) vn->grad[j] += gp[j];
            }
        }
    };
    return make_node(x.shape(), std::move(out), {x.handle(), v.handle()}, std::move(bp),
                     "add_to_rows");
}

Tensor add_block_rows(const Tensor& x, const Tensor& block, int row_begin) {
    require_2d(x, "add_block_rows");
    require_2d(block, "add_block_rows");
    const int c = x.cols(), br = block.rows();
    if (block.cols() != c) throw ShapeError("add_block_rows: column mismatch");
    if (row_begin < 0 || row_begin + br > x.rows()) {
        throw IndexError("add_block_rows: block exceeds row range");
    }
    std::vector<double> out = x.raw();
    for (int i = 0; i < br; ++i) {
        double* rp       = out.data() + static_cast<size_t>(row_begin + i) * c;
        const double* bp_ = block.raw().data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) rp[j] += bp_[j];
    }
    TensorNode* xn = x.node();
    TensorNode* bn = block.node();
    auto bp        = [xn, bn, row_begin, br, c](TensorNode& o) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int i = 0; i < br; ++i) {
                const double* gp = o.grad.data() + static_cast<size_t>(row_begin + i) * c;
                double* dst      = bn->grad.data() + static_cast<size_t>(i) * c;
                for (int j = 0; j < c; ++j) dst[j] += gp[j];
            }
        }
    };
    return make_node(x.shape(), std::move(out), {x.handle(), block.handle()}, std::move(bp),
                     "add_block_rows");
}

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.raw().size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = x.raw()[i];
        out[i]         = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    TensorNode* xn = x.node();
    auto bp        = [xn](TensorNode& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            const double v   = xn->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            xn->grad[i] += o.grad[i] * (cdf + v * pdf);
        }
    };
    return make_node(x.shape(), std::move(out), {x.handle()}, std::move(bp), "gelu");
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.raw()) s += v;
    TensorNode* xn = x.node();
    auto bp        = [xn](TensorNode& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double g = o.grad[0];
        for (auto& gv : xn->grad) gv += g;
    };
    return make_node({1}, {s}, {x.handle()}, std::move(bp), "sum");
}

Tensor mean_squared_error(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mean_squared_error");
    const size_t n = a.raw().size();
    double s       = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = a.raw()[i] - b.raw()[i];
        s += d * d;
    }
    s /= static_cast<double>(n);
    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    auto bp        = [an, bn, n](TensorNode& o) {
        const double g = o.grad[0] * 2.0 / static_cast<double>(n);
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < n; ++i) an->grad[i] += g * (an->data[i] - bn->data[i]);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < n; ++i) bn->grad[i] -= g * (an->data[i] - bn->data[i]);
        }
    };
    return make_node({1}, {s}, {a.handle(), b.handle()}, std::move(bp), "mean_squared_error");
}

Tensor softmax_masked(const Tensor& logits, const Tensor& additive_mask) {
    require_2d(logits, "softmax_masked");
    require_same_shape(logits, additive_mask, "softmax_masked");
    if (additive_mask.requires_grad()) {
        throw ContractError("softmax_masked: mask must not require gradients");
    }
    const int r = logits.rows(), c = logits.cols();
    const auto& lv = logits.raw();
    const auto& mv = additive_mask.raw();
    for (double m : mv) {
        if (!(m == 0.0 || m == -kInf)) {
            throw ContractError("softmax_masked: mask entries must be 0 or -inf");
        }
    }
    std::vector<double> out(lv.size(), 0.0);
    std::vector<char> bad(static_cast<size_t>(r), 0);
    auto body = [&](int rb, int re) {
        for (int i = rb; i < re; ++i) {
            const double* lr = lv.data() + static_cast<size_t>(i) * c;
            const double* mr = mv.data() + static_cast<size_t>(i) * c;
            double* orow     = out.data() + static_cast<size_t>(i) * c;
            double mx        = -kInf;
            for (int j = 0; j < c; ++j) {
                if (mr[j] == 0.0 && lr[j] > mx) mx = lr[j];
            }
            if (mx == -kInf) {
                bad[static_cast<size_t>(i)] = 1;  // fully masked row
                continue;
            }
            double s = 0.0;
            for (int j = 0; j < c; ++j) {
                if (mr[j] == 0.0) {
                    const double e = std::exp(lr[j] - mx);
                    orow[j]        = e;
                    s += e;
                }
            }
            const double inv = 1.0 / s;
            for (int j = 0; j < c; ++j) orow[j] *= inv;  // masked entries stay exactly 0
        }
    };
    if (static_cast<int64_t>(r) * c >= 32768 && r >= 2) {
        ThreadPool::instance().parallel_ranges(r, body);
    } else {
        body(0, r);
    }
    for (int i = 0; i < r; ++i) {
        if (bad[static_cast<size_t>(i)]) {
            throw ContractError("softmax_masked: degenerate fully masked row " + std::to_string(i));
        }
    }
    TensorNode* ln = logits.node();
    auto bp        = [ln, r, c](TensorNode& o) {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        for (int i = 0; i < r; ++i) {
            const double* y  = o.data.data() + static_cast<size_t>(i) * c;
            const double* dy = o.grad.data() + static_cast<size_t>(i) * c;
            double dot       = 0.0;
            for (int j = 0; j < c; ++j) dot += dy[j] * y[j];
            double* dst = ln->grad.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) dst[j] += y[j] * (dy[j] - dot);
        }
    };
    return make_node(logits.shape(), std::move(out), {logits.handle(), additive_mask.handle()},
                     std::move(bp), "softmax_masked");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(x, "layer_norm");
    const int r = x.rows(), c = x.cols();
    if (c < 1) throw ShapeError("layer_norm: empty feature dimension");
    if (vec_len(gain, "layer_norm") != c || vec_len(bias, "layer_norm") != c) {
        throw ShapeError("layer_norm: gain/bias length != feature dim");
    }
    if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
    std::vector<double> out(x.raw().size());
    auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
    auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
    const auto& xv = x.raw();
    const auto& gv = gain.raw();
    const auto& bv = bias.raw();
    for (int i = 0; i < r; ++i) {
        const double* xp = xv.data() + static_cast<size_t>(i) * c;
        double m         = 0.0;
        for (int j = 0; j < c; ++j) m += xp[j];
        m /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = xp[j] - m;
            var += d * d;
        }
        var /= c;
        const double rs        = 1.0 / std::sqrt(var + eps);
        (*mean)[static_cast<size_t>(i)] = m;
        (*rstd)[static_cast<size_t>(i)] = rs;
        double* op             = out.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) op[j] = (xp[j] - m) * rs * gv[j] + bv[j];
    }
    TensorNode* xn = x.node();
    TensorNode* gn = gain.node();
    TensorNode* bn = bias.node();
    auto bp        = [xn, gn, bn, mean, rstd, r, c](TensorNode& o) {
        std::vector<double> dxhat(static_cast<size_t>(c));
        for (int i = 0; i < r; ++i) {
            const double m   = (*mean)[static_cast<size_t>(i)];
            const double rs  = (*rstd)[static_cast<size_t>(i)];
            const double* xp = xn->data.data() + static_cast<size_t>(i) * c;
            const double* dy = o.grad.data() + static_cast<size_t>(i) * c;
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int j = 0; j < c; ++j) gn->grad[j] += dy[j] * (xp[j] - m) * rs;
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int j = 0; j < c; ++j) bn->grad[j] += dy[j];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < c; ++j) {
                    dxhat[static_cast<size_t>(j)] = dy[j] * gn->data[j];
                    const double h                = (xp[j] - m) * rs;
                    m1 += dxhat[static_cast<size_t>(j)];
                    m2 += dxhat[static_cast<size_t>(j)] * h;
                }
                m1 /= c;
                m2 /= c;
                double* dst = xn->grad.data() + static_cast<size_t>(i) * c;
                for (int j = 0; j < c; ++j) {
                    const double h = (xp[j] - m) * rs;
                    dst[j] += rs * (dxhat[static_cast<size_t>(j)] - m1 - h * m2);
                }
            }
        }
    };
    return make_node(x.shape(), std::move(out), {x.handle(), gain.handle(), bias.handle()},
                     std::move(bp), "layer_norm");
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
    require_2d(x, "slice_rows");
    const int r = x.rows(), c = x.cols();
    if (begin < 0 || end > r || begin >= end) throw IndexError("slice_rows: bad range");
    const int nr = end - begin;
    std::vector<double> out(x.raw().begin() + static_cast<size_t>(begin) * c,
                            x.raw().begin() + static_cast<size_t>(end) * c);
    TensorNode* xn = x.node();
    auto bp        = [xn, begin, nr, c](TensorNode& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < nr; ++i) {
            const double* gp = o.grad.data() + static_cast<size_t>(i) * c;
            double* dst      = xn->grad.data() + static_cast<size_t>(begin + i) * c;
            for (int j = 0; j < c; ++j) dst[j] += gp[j];
        }
    };
    return make_node({nr, c}, std::move(out), {x.handle()}, std::move(bp), "slice_rows");
}

Tensor slice_cols(const Tensor& x, int begin, int end) {
    require_2d(x, "slice_cols");
    const int r = x.rows(), c = x.cols();
    if (begin < 0 || end > c || begin >= end) throw IndexError("slice_cols: bad range");
    const int nc = end - begin;
    std::vector<double> out(static_cast<size_t>(r) * nc);
    for (int i = 0; i < r; ++i) {
        const double* src = x.raw().data() + static_cast<size_t>(i) * c + begin;
        std::copy(src, src + nc, out.data() + static_cast<size_t>(i) * nc);
    }
    TensorNode* xn = x.node();
    auto bp        = [xn, begin, r, c, nc](TensorNode& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < r; ++i) {
            const double* gp = o.grad.data() + static_cast<size_t>(i) * nc;
            double* dst      = xn->grad.data() + static_cast<size_t>(i) * c + begin;
            for (int j = 0; j < nc; ++j) dst[j] += gp[j];
        }
    };
    return make_node({r, nc}, std::move(out), {x.handle()}, std::move(bp), "slice_cols");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const int c = parts[0].cols();
    int r       = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_rows");
        if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
        r += p.rows();
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(r) * c);
    std::vector<NodePtr> parents;
    std::vector<std::pair<TensorNode*, int>> segs;  // node, row count
    for (const auto& p : parts) {
        out.insert(out.end(), p.raw().begin(), p.raw().end());
        parents.push_back(p.handle());
        segs.emplace_back(p.node(), p.rows());
    }
    auto bp = [segs, c](TensorNode& o) {
        int row = 0;
        for (const auto& [node, nr] : segs) {
            if (node->requires_grad) {
                node->ensure_grad();
                const double* gp = o.grad.data() + static_cast<size_t>(row) * c;
                for (size_t i = 0; i < node->grad.size(); ++i) node->grad[i] += gp[i];
            }
            row += nr;
        }
    };
    return make_node({r, c}, std::move(out), std::move(parents), std::move(bp), "concat_rows");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const int r = parts[0].rows();
    int c       = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
        c += p.cols();
    }
    std::vector<double> out(static_cast<size_t>(r) * c);
    std::vector<NodePtr> parents;
    std::vector<std::pair<TensorNode*, int>> segs;
    int col = 0;
    for (const auto& p : parts) {
        const int pc = p.cols();
        for (int i = 0; i < r; ++i) {
            std::copy(p.raw().data() + static_cast<size_t>(i) * pc,
                      p.raw().data() + static_cast<size_t>(i + 1) * pc,
                      out.data() + static_cast<size_t>(i) * c + col);
        }
        parents.push_back(p.handle());
        segs.emplace_back(p.node(), pc);
        col += pc;
    }
    auto bp = [segs, r, c](TensorNode& o) {
        int cb = 0;
        for (const auto& [node, pc] : segs) {
            if (node->requires_grad) {
                node->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    const double* gp = o.grad.data() + static_cast<size_t>(i) * c + cb;
                    double* dst      = node->grad.data() + static_cast<size_t>(i) * pc;
                    for (int j = 0; j < pc; ++j) dst[j] += gp[j];
                }
            }
            cb += pc;
        }
    };
    return make_node({r, c}, std::move(out), std::move(parents), std::move(bp), "concat_cols");
}

Tensor rope_rotate(const Tensor& x, const std::vector<int>& positions, double theta_base) {
    require_2d(x, "rope_rotate");
    const int r = x.rows(), c = x.cols();
    if (c % 2 != 0) throw ConfigError("rope_rotate: feature dimension must be even");
    if (static_cast<int>(positions.size()) != r) {
        throw ShapeError("rope_rotate: positions length != rows");
    }
    if (!(theta_base > 0.0)) throw ConfigError("rope_rotate: theta_base must be positive");
    const int half = c / 2;
    std::vector<double> inv_freq(static_cast<size_t>(half));
    for (int i = 0; i < half; ++i) {
        inv_freq[static_cast<size_t>(i)] = std::pow(theta_base, -2.0 * i / c);
    }
    auto cs = std::make_shared<std::vector<double>>(static_cast<size_t>(r) * half);
    auto sn = std::make_shared<std::vector<double>>(static_cast<size_t>(r) * half);
    std::vector<double> out(x.raw().size());
    for (int row = 0; row < r; ++row) {
        const double pos = static_cast<double>(positions[static_cast<size_t>(row)]);
        const double* xp = x.raw().data() + static_cast<size_t>(row) * c;
        double* op       = out.data() + static_cast<size_t>(row) * c;
        for (int i = 0; i < half; ++i) {
            const double ang = pos * inv_freq[static_cast<size_t>(i)];
            const double cc  = std::cos(ang);
            const double ss  = std::sin(ang);
            (*cs)[static_cast<size_t>(row) * half + i] = cc;
            (*sn)[static_cast<size_t>(row) * half + i] = ss;
            const double a = xp[2 * i], b = xp[2 * i + 1];
            op[2 * i]     = a * cc - b * ss;
            op[2 * i + 1] = a * ss + b * cc;
        }
    }
    TensorNode* xn = x.node();
    auto bp        = [xn, cs, sn, r, half](TensorNode& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const int c2 = 2 * half;
        for (int row = 0; row < r; ++row) {
            const double* dy = o.grad.data() + static_cast<size_t>(row) * c2;
            double* dst      = xn->grad.data() + static_cast<size_t>(row) * c2;
            for (int i = 0; i < half; ++i) {
                const double cc = (*cs)[static_cast<size_t>(row) * half + i];
                const double ss = (*sn)[static_cast<size_t>(row) * half + i];
                const double ga = dy[2 * i], gb = dy[2 * i + 1];
                dst[2 * i] += ga * cc + gb * ss;
                dst[2 * i + 1] += -ga * ss + gb * cc;
            }
        }
    };
    return make_node(x.shape(), std::move(out), {x.handle()}, std::move(bp), "rope_rotate");
}

// ---- backward ----

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward: loss must be a scalar tensor");
    }
    TensorNode* root = loss.node();
    if (!root->requires_grad) return;  // nothing trainable upstream

    // iterative post-order DFS -> topological order with parents first
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backprop) {
            node->ensure_grad();
            node->backprop(*node);
        }
    }
}

// ---- finite differences ----

double finite_diff_check(const std::function<Tensor()>& f, const std::vector<Parameter*>& params,
                         double eps) {
    if (!(eps > 0.0 && eps <= 1e-3)) {
        throw ContractError("finite_diff_check: eps must lie in (0, 1e-3]");
    }
    for (Parameter* p : params) {
        if (!p || !p->trainable) {
            throw ContractError("finite_diff_check: all probed parameters must be trainable");
        }
    }
    double probe1, probe2;
    {
        NoGradGuard ng;
        probe1 = f().value();
        probe2 = f().value();
    }
    if (probe1 != probe2) {
        throw ContractError("finite_diff_check: oracle invalid, f is non-deterministic");
    }

    for (Parameter* p : params) p->tensor.zero_grad();
    Tensor loss = f();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->tensor.grad());

    double worst = 0.0;
    NoGradGuard ng;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = params[pi]->tensor.raw();
        for (size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i]           = orig + eps;
            const double fp   = f().value();
            data[i]           = orig - eps;
            const double fm   = f().value();
            data[i]           = orig;
            const double num  = (fp - fm) / (2.0 * eps);
            const double ana  = analytic[pi][i];
            const double den  = std::max({std::fabs(ana), std::fabs(num), 1e-8});
            worst             = std::max(worst, std::fabs(ana - num) / den);
        }
    }
    return worst;
}

// ---- optimizer ----

void RmsOptimizer::step(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        if (!p || !p->trainable) continue;
        TensorNode* n = p->tensor.node();
        if (n->grad.size() != n->data.size()) continue;  // no gradient reached it
        auto& acc = acc_[n];
        if (acc.size() != n->data.size()) acc.assign(n->data.size(), 0.0);
        for (size_t i = 0; i < n->data.size(); ++i) {
            const double g = n->grad[i];
            acc[i]         = decay_ * acc[i] + (1.0 - decay_) * g * g;
            n->data[i] -= lr_ * g / (std::sqrt(acc[i]) + eps_);
        }
        std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
}

}  // namespace rgbadit
