#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qres/common.hpp"

namespace qres {

namespace detail {

struct TensorImpl {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized lazily, same length as data when present
    bool requires_grad = false;

    // Autograd graph edges. backward_fn reads this node's grad and
    // accumulates into the parents' grads.
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

// Grad recording is on by default; NoGradGuard switches it off for the
// current thread (inference paths: compress, decompress, sampling, metrics).
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// N-d array of doubles, row-major, with optional participation in the
// reverse-mode tape. Copying a Tensor copies the handle; clone() copies data.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<int64_t> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int64_t>& shape() const;
    int rank() const;
    int64_t dim(int i) const;
    int64_t numel() const;

    const double* data() const;
    double* data();  // in-place writes are for leaves only (init, optimizer)
    std::span<const double> values() const { return {data(), static_cast<size_t>(numel())}; }

    double item() const;  // scalar tensors

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    bool has_grad() const;
    const double* grad() const;
    double* grad_data();
    void zero_grad();

    Tensor clone() const;   // deep copy, detached from the graph
    Tensor detach() const;  // shares data, detached from the graph

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
    static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Runs reverse-mode accumulation from a scalar loss. Visits each graph node
// exactly once in reverse topological order; deterministic for a fixed graph.
void backward(const Tensor& loss);

// ---- elementwise / reduction ops -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double p);  // requires positive inputs
Tensor gelu(const Tensor& a);                  // exact form x * Phi(x)
Tensor softplus(const Tensor& a);

// Hard clamp. Out-of-range elements pass gradient only when it points back
// into the feasible interval, so clamped units keep a training signal.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);   // -> shape {1}; fixed pairwise reduction tree
Tensor mean(const Tensor& a);  // -> shape {1}

// ---- shape ops -------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b);          // NCHW, axis 1
Tensor slice_channels(const Tensor& a, int64_t c0, int64_t c1);    // [c0, c1)
Tensor pixel_shuffle(const Tensor& a, int64_t r);
Tensor pixel_unshuffle(const Tensor& a, int64_t r);
Tensor tile_spatial(const Tensor& a, int64_t h, int64_t w);        // (N,C,1,1) -> (N,C,h,w)
Tensor broadcast_batch(const Tensor& a, int64_t batch);            // (1,...) -> (batch,...)

// ---- neural-net ops --------------------------------------------------------------

// Cross-correlation, NCHW input, OIHW weight, zero padding.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int64_t stride,
              int64_t padding, int64_t groups = 1);

// Per-position channel mixing (equivalent to a 1x1 convolution):
// out[n,k,h,w] = sum_c W[k,c] * x[n,c,h,w] + b[k].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Normalizes over the channel axis at each (n, h, w) position.
Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps);

// 2x2 stride-2 average pooling with replicate handling of odd edges, so
// output sides are ceil(side/2).
Tensor avg_pool2d_2x2(const Tensor& input);

// ---- misc ------------------------------------------------------------------------

double pairwise_sum(const double* p, int64_t n);
void check_finite(const Tensor& t, const std::string& what);

namespace detail {

// Builds an op's output node, attaching parents and the backward closure
// only when grad recording is on and an input participates. Shared by the
// op implementations; not part of the public surface.
Tensor make_op_output(std::vector<int64_t> shape, std::vector<double> data,
                      std::vector<Tensor> inputs, std::function<void(TensorImpl&)> backward_fn);

}  // namespace detail

}  // namespace qres
