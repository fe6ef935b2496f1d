#ifndef RGBADIT_TENSOR_HPP
#define RGBADIT_TENSOR_HPP

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "rgbadit/common.hpp"

namespace rgbadit {

// Dense 64-bit tensors (1-D vectors and 2-D row-major matrices) with
// reverse-mode autodiff. Every op output is checked for NaN/Inf; raw leaves
// (masks carry -inf sentinels) are exempt. Graphs are built per forward pass
// and released with the loss handle.

using Shape = std::vector<int>;

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated on first use, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

// Thread-local switch: while disabled, ops run forward-only and record no graph.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor from_data(const Shape& shape, std::vector<double> values);
    static Tensor randn(const Shape& shape, Rng& rng, double stdev = 1.0);
    static Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int rows() const;
    int cols() const;
    int64_t size() const { return n_->size(); }
    bool same_shape(const Tensor& o) const { return n_->shape == o.n_->shape; }

    double value() const;  // scalar tensors only
    double at(int64_t i) const { return n_->data[static_cast<size_t>(i)]; }
    double at(int i, int j) const { return n_->data[static_cast<size_t>(i) * cols() + j]; }

    std::vector<double>& raw() { return n_->data; }
    const std::vector<double>& raw() const { return n_->data; }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool v) { n_->requires_grad = v; }
    const std::vector<double>& grad() const;
    void zero_grad();

    TensorNode* node() const { return n_.get(); }
    NodePtr handle() const { return n_; }
    static Tensor wrap(NodePtr n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

private:
    NodePtr n_;
};

// A named, optionally trainable leaf. trainable=false keeps the grad buffer
// untouched by backward().
struct Parameter {
    Tensor tensor;
    bool trainable = true;
    std::string name;

    Parameter() = default;
    Parameter(std::string n, Tensor t, bool train = true)
        : tensor(std::move(t)), trainable(train), name(std::move(n)) {
        tensor.set_requires_grad(train);
    }
    void set_trainable(bool v) {
        trainable = v;
        tensor.set_requires_grad(v);
    }
    int64_t size() const { return tensor.size(); }
};

// ---- ops (all differentiable unless stated) ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_rowvec(const Tensor& x, const Tensor& v);                       // [R x C] + [C]
Tensor add_to_rows(const Tensor& x, const Tensor& v, int row_begin, int row_end);
Tensor add_block_rows(const Tensor& x, const Tensor& block, int row_begin);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);                                               // -> scalar
Tensor mean_squared_error(const Tensor& a, const Tensor& b);               // -> scalar
Tensor softmax_masked(const Tensor& logits, const Tensor& additive_mask);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor slice_rows(const Tensor& x, int begin, int end);
Tensor slice_cols(const Tensor& x, int begin, int end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
// rotates channel pairs (2i, 2i+1) of row r by positions[r] * theta_base^(-2i/D)
Tensor rope_rotate(const Tensor& x, const std::vector<int>& positions, double theta_base);

// Backpropagate d(loss)/d(leaf) into the grad buffers of every reachable
// tensor with requires_grad. loss must be scalar.
void backward(const Tensor& loss);

// Central-difference gradient oracle. Evaluates f twice to detect
// non-determinism, then compares backward() gradients against
// (f(x+eps) - f(x-eps)) / 2eps per coordinate. Returns the worst relative
// error with denominator max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<Tensor()>& f,
                         const std::vector<Parameter*>& params, double eps);

// Momentum-free adaptive optimizer: per-parameter running RMS of gradients.
class RmsOptimizer {
public:
    explicit RmsOptimizer(double lr, double decay = 0.99, double eps = 1e-8)
        : lr_(lr), decay_(decay), eps_(eps) {}

    void step(const std::vector<Parameter*>& params);
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    double lr_, decay_, eps_;
    std::unordered_map<const TensorNode*, std::vector<double>> acc_;
};

// raw kernels, exposed for reuse by oracles and IO
namespace kernels {
// C[m x n] = A[m x k] * B[k x n], optionally accumulating into C
void mm_nn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);
// C[m x n] = A^T * B with A stored [k x m], B stored [k x n]
void mm_tn(int m, int k, int n, const double* a, const double* b, double* c, bool accumulate);
}  // namespace kernels

}  // namespace rgbadit

#endif  // RGBADIT_TENSOR_HPP
