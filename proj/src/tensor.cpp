#include "qres/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "qres/gaussian.hpp"

namespace qres {

namespace {

thread_local bool g_grad_enabled = true;

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw ShapeError("negative dimension");
        n *= d;
    }
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---- Tensor core -----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    int64_t n = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<size_t>(n), 0.0);
    impl->requires_grad = requires_grad;
    return wrap(std::move(impl));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("from_data: size does not match shape");
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return wrap(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const std::vector<int64_t>& Tensor::shape() const { return impl_->shape; }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
int64_t Tensor::dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
int64_t Tensor::numel() const { return impl_->numel(); }

const double* Tensor::data() const { return impl_->data.data(); }
double* Tensor::data() { return impl_->data.data(); }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor is not scalar");
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
}
bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }
const double* Tensor::grad() const {
    if (!has_grad()) throw ContractError("grad(): no gradient present");
    return impl_->grad.data();
}
double* Tensor::grad_data() {
    impl_->ensure_grad();
    return impl_->grad.data();
}
void Tensor::zero_grad() {
    if (impl_) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = impl_->requires_grad;
    return wrap(std::move(impl));
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;  // copy; impls are immutable once built
    impl->requires_grad = false;
    return wrap(std::move(impl));
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

// ---- autograd machinery ----------------------------------------------------------

namespace detail {

// Creates the output node of an op, wiring parents and the backward closure
// only when grad recording is active and some input participates.
Tensor make_op_output(std::vector<int64_t> shape, std::vector<double> data,
                      std::vector<Tensor> inputs,
                      std::function<void(TensorImpl&)> backward_fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool track = false;
    if (g_grad_enabled) {
        for (const Tensor& t : inputs)
            if (t.defined() && t.requires_grad()) track = true;
    }
    if (track) {
        impl->requires_grad = true;
        for (const Tensor& t : inputs)
            if (t.defined()) impl->parents.push_back(t.impl());
        impl->backward_fn = std::move(backward_fn);
    }
    return Tensor::wrap(std::move(impl));
}

}  // namespace detail

using detail::make_op_output;
using detail::TensorImpl;

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward(): loss must be a defined scalar");
    if (!loss.requires_grad()) return;

    // Iterative DFS postorder; reverse postorder is a topological order of
    // the DAG, so each node's grad is complete before its backward_fn runs.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    struct Frame {
        TensorImpl* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.impl().get(), 0});
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorImpl* p = f.node->parents[f.next_parent++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

// ---- helpers ---------------------------------------------------------------------

double pairwise_sum(const double* p, int64_t n) {
    if (n <= 128) {
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i) s += p[i];
        return s;
    }
    int64_t half = n / 2;
    return pairwise_sum(p, half) + pairwise_sum(p + half, n - half);
}

void check_finite(const Tensor& t, const std::string& what) {
    const double* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(p[i]))
            throw ContractError(what + ": non-finite value at index " + std::to_string(i));
}

namespace {

void accumulate(const std::shared_ptr<TensorImpl>& target, const double* g, int64_t n) {
    if (!target->requires_grad) return;
    target->ensure_grad();
    for (int64_t i = 0; i < n; ++i) target->grad[i] += g[i];
}

bool wants_grad(const std::shared_ptr<TensorImpl>& t) {
    return t->requires_grad;
}

}  // namespace

// ---- elementwise ops -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] + pb[i];
    auto ai = a.impl(), bi = b.impl();
    return make_op_output(a.shape(), std::move(out), {a, b}, [ai, bi, n](TensorImpl& self) {
        accumulate(ai, self.grad.data(), n);
        accumulate(bi, self.grad.data(), n);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] - pb[i];
    auto ai = a.impl(), bi = b.impl();
    return make_op_output(a.shape(), std::move(out), {a, b}, [ai, bi, n](TensorImpl& self) {
        accumulate(ai, self.grad.data(), n);
        if (wants_grad(bi)) {
            bi->ensure_grad();
            for (int64_t i = 0; i < n; ++i) bi->grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] * pb[i];
    auto ai = a.impl(), bi = b.impl();
    return make_op_output(a.shape(), std::move(out), {a, b}, [ai, bi, n](TensorImpl& self) {
        if (wants_grad(ai)) {
            ai->ensure_grad();
            for (int64_t i = 0; i < n; ++i) ai->grad[i] += self.grad[i] * bi->data[i];
        }
        if (wants_grad(bi)) {
            bi->ensure_grad();
            for (int64_t i = 0; i < n; ++i) bi->grad[i] += self.grad[i] * ai->data[i];
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] / pb[i];
    auto ai = a.impl(), bi = b.impl();
    return make_op_output(a.shape(), std::move(out), {a, b}, [ai, bi, n](TensorImpl& self) {
        if (wants_grad(ai)) {
            ai->ensure_grad();
            for (int64_t i = 0; i < n; ++i) ai->grad[i] += self.grad[i] / bi->data[i];
        }
        if (wants_grad(bi)) {
            bi->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                double inv = 1.0 / bi->data[i];
                bi->grad[i] -= self.grad[i] * ai->data[i] * inv * inv;
            }
        }
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] + s;
    auto ai = a.impl();
    return make_op_output(a.shape(), std::move(out), {a}, [ai, n](TensorImpl& self) {
        accumulate(ai, self.grad.data(), n);
    });
}

Tensor mul_scalar(const Tensor& a, double s) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] * s;
    auto ai = a.impl();
    return make_op_output(a.shape(), std::move(out), {a}, [ai, n, s](TensorImpl& self) {
        if (wants_grad(ai)) {
            ai->ensure_grad();
            for (int64_t i = 0; i < n; ++i) ai->grad[i] += self.grad[i] * s;
        }
    });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor pow_scalar(const Tensor& a, double p) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) {
        if (pa[i] <= 0.0) throw ContractError("pow_scalar: input must be positive");
        out[static_cast<size_t>(i)] = std::pow(pa[i], p);
    }
    auto ai = a.impl();
    std::vector<double> saved = out;
    return make_op_output(a.shape(), std::move(out), {a},
                          [ai, n, p, saved = std::move(saved)](TensorImpl& self) {
                              if (!wants_grad(ai)) return;
                              ai->ensure_grad();
                              for (int64_t i = 0; i < n; ++i)
                                  ai->grad[i] += self.grad[i] * p * saved[static_cast<size_t>(i)] /
                                                 ai->data[i];
                          });
}

Tensor gelu(const Tensor& a) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[i] * std_normal_cdf(pa[i]);
    auto ai = a.impl();
    return make_op_output(a.shape(), std::move(out), {a}, [ai, n](TensorImpl& self) {
        if (!wants_grad(ai)) return;
        ai->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
            double x = ai->data[i];
            ai->grad[i] += self.grad[i] * (std_normal_cdf(x) + x * std_normal_pdf(x));
        }
    });
}

namespace {

double softplus_val(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double sigmoid_val(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor softplus(const Tensor& a) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = softplus_val(pa[i]);
    auto ai = a.impl();
    return make_op_output(a.shape(), std::move(out), {a}, [ai, n](TensorImpl& self) {
        if (!wants_grad(ai)) return;
        ai->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
            ai->grad[i] += self.grad[i] * sigmoid_val(ai->data[i]);
    });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw ContractError("clamp: lo must not exceed hi");
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = std::min(std::max(pa[i], lo), hi);
    auto ai = a.impl();
    return make_op_output(a.shape(), std::move(out), {a}, [ai, n, lo, hi](TensorImpl& self) {
        if (!wants_grad(ai)) return;
        ai->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
            double x = ai->data[i];
            double g = self.grad[i];
            bool pass = (x >= lo && x <= hi) || (x < lo && g < 0.0) || (x > hi && g > 0.0);
            if (pass) ai->grad[i] += g;
        }
    });
}

Tensor sum(const Tensor& a) {
    int64_t n = a.numel();
    double s = pairwise_sum(a.data(), n);
    auto ai = a.impl();
    return make_op_output({1}, {s}, {a}, [ai, n](TensorImpl& self) {
        if (!wants_grad(ai)) return;
        ai->ensure_grad();
        double g = self.grad[0];
        for (int64_t i = 0; i < n; ++i) ai->grad[i] += g;
    });
}

Tensor mean(const Tensor& a) {
    int64_t n = a.numel();
    if (n == 0) throw ShapeError("mean: empty tensor");
    double s = pairwise_sum(a.data(), n) / static_cast<double>(n);
    auto ai = a.impl();
    return make_op_output({1}, {s}, {a}, [ai, n](TensorImpl& self) {
        if (!wants_grad(ai)) return;
        ai->ensure_grad();
        double g = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) ai->grad[i] += g;
    });
}

// ---- shape ops -------------------------------------------------------------------

namespace {

void check_rank4(const Tensor& t, const char* op) {
    if (t.rank() != 4) throw ShapeError(std::string(op) + ": expected rank-4 NCHW tensor");
}

}  // namespace

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    check_rank4(a, "concat_channels");
    check_rank4(b, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: N/H/W mismatch");
    int64_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    int64_t hw = H * W;
    std::vector<double> out(static_cast<size_t>(N * (Ca + Cb) * hw));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t n = 0; n < N; ++n) {
        double* dst = out.data() + n * (Ca + Cb) * hw;
        std::copy(pa + n * Ca * hw, pa + (n + 1) * Ca * hw, dst);
        std::copy(pb + n * Cb * hw, pb + (n + 1) * Cb * hw, dst + Ca * hw);
    }
    auto ai = a.impl(), bi = b.impl();
    return make_op_output({N, Ca + Cb, H, W}, std::move(out), {a, b},
                          [ai, bi, N, Ca, Cb, hw](TensorImpl& self) {
                              int64_t ct = Ca + Cb;
                              if (wants_grad(ai)) {
                                  ai->ensure_grad();
                                  for (int64_t n = 0; n < N; ++n)
                                      for (int64_t i = 0; i < Ca * hw; ++i)
                                          ai->grad[n * Ca * hw + i] +=
                                              self.grad[n * ct * hw + i];
                              }
                              if (wants_grad(bi)) {
                                  bi->ensure_grad();
                                  for (int64_t n = 0; n < N; ++n)
                                      for (int64_t i = 0; i < Cb * hw; ++i)
                                          bi->grad[n * Cb * hw + i] +=
                                              self.grad[n * ct * hw + Ca * hw + i];
                              }
                          });
}

Tensor slice_channels(const Tensor& a, int64_t c0, int64_t c1) {
    check_rank4(a, "slice_channels");
    int64_t C = a.dim(1);
    if (c0 < 0 || c1 > C || c0 > c1) throw ShapeError("slice_channels: bad range");
    int64_t N = a.dim(0), H = a.dim(2), W = a.dim(3), hw = H * W, Cs = c1 - c0;
    std::vector<double> out(static_cast<size_t>(N * Cs * hw));
    const double* pa = a.data();
    for (int64_t n = 0; n < N; ++n)
        std::copy(pa + (n * C + c0) * hw, pa + (n * C + c1) * hw, out.data() + n * Cs * hw);
    auto ai = a.impl();
    return make_op_output({N, Cs, H, W}, std::move(out), {a},
                          [ai, N, C, c0, Cs, hw](TensorImpl& self) {
                              if (!wants_grad(ai)) return;
                              ai->ensure_grad();
                              for (int64_t n = 0; n < N; ++n)
                                  for (int64_t i = 0; i < Cs * hw; ++i)
                                      ai->grad[(n * C + c0) * hw + i] += self.grad[n * Cs * hw + i];
                          });
}

namespace {

// out[n][c][h][w] = in[n][c*r^2 + (h%r)*r + (w%r)][h/r][w/r]
void shuffle_map(int64_t N, int64_t Co, int64_t Ho, int64_t Wo, int64_t r, const double* in,
                 double* out, int64_t Hi, int64_t Wi) {
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < Co; ++c)
            for (int64_t h = 0; h < Ho; ++h)
                for (int64_t w = 0; w < Wo; ++w) {
                    int64_t ci = c * r * r + (h % r) * r + (w % r);
                    int64_t src = ((n * Co * r * r + ci) * Hi + h / r) * Wi + w / r;
                    out[((n * Co + c) * Ho + h) * Wo + w] = in[src];
                }
}

}  // namespace

Tensor pixel_shuffle(const Tensor& a, int64_t r) {
    check_rank4(a, "pixel_shuffle");
    if (r < 1) throw ShapeError("pixel_shuffle: r must be >= 1");
    int64_t N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    if (C % (r * r) != 0) throw ShapeError("pixel_shuffle: channels not divisible by r^2");
    int64_t Co = C / (r * r), Ho = H * r, Wo = W * r;
    std::vector<double> out(static_cast<size_t>(N * Co * Ho * Wo));
    shuffle_map(N, Co, Ho, Wo, r, a.data(), out.data(), H, W);
    auto ai = a.impl();
    return make_op_output({N, Co, Ho, Wo}, std::move(out), {a},
                          [ai, N, Co, Ho, Wo, r, H, W](TensorImpl& self) {
                              if (!wants_grad(ai)) return;
                              ai->ensure_grad();
                              for (int64_t n = 0; n < N; ++n)
                                  for (int64_t c = 0; c < Co; ++c)
                                      for (int64_t h = 0; h < Ho; ++h)
                                          for (int64_t w = 0; w < Wo; ++w) {
                                              int64_t ci = c * r * r + (h % r) * r + (w % r);
                                              int64_t src =
                                                  ((n * Co * r * r + ci) * H + h / r) * W + w / r;
                                              ai->grad[src] +=
                                                  self.grad[((n * Co + c) * Ho + h) * Wo + w];
                                          }
                          });
}

Tensor pixel_unshuffle(const Tensor& a, int64_t r) {
    check_rank4(a, "pixel_unshuffle");
    if (r < 1) throw ShapeError("pixel_unshuffle: r must be >= 1");
    int64_t N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    if (H % r != 0 || W % r != 0) throw ShapeError("pixel_unshuffle: H/W not divisible by r");
    int64_t Co = C * r * r, Ho = H / r, Wo = W / r;
    std::vector<double> out(static_cast<size_t>(N * Co * Ho * Wo));
    const double* in = a.data();
    // Inverse of shuffle_map.
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    int64_t co = c * r * r + (h % r) * r + (w % r);
                    out[((n * Co + co) * Ho + h / r) * Wo + w / r] =
                        in[((n * C + c) * H + h) * W + w];
                }
    auto ai = a.impl();
    return make_op_output({N, Co, Ho, Wo}, std::move(out), {a},
                          [ai, N, C, H, W, r, Ho, Wo](TensorImpl& self) {
                              if (!wants_grad(ai)) return;
                              ai->ensure_grad();
                              int64_t Co = C * r * r;
                              for (int64_t n = 0; n < N; ++n)
                                  for (int64_t c = 0; c < C; ++c)
                                      for (int64_t h = 0; h < H; ++h)
                                          for (int64_t w = 0; w < W; ++w) {
                                              int64_t co = c * r * r + (h % r) * r + (w % r);
                                              ai->grad[((n * C + c) * H + h) * W + w] +=
                                                  self.grad[((n * Co + co) * Ho + h / r) * Wo +
                                                            w / r];
                                          }
                          });
}

Tensor broadcast_batch(const Tensor& a, int64_t batch) {
    if (a.rank() < 1 || a.dim(0) != 1) throw ShapeError("broadcast_batch: leading dim must be 1");
    if (batch < 1) throw ShapeError("broadcast_batch: bad batch size");
    int64_t chunk = a.numel();
    std::vector<double> out(static_cast<size_t>(chunk * batch));
    for (int64_t b = 0; b < batch; ++b)
        std::copy(a.data(), a.data() + chunk, out.begin() + b * chunk);
    std::vector<int64_t> shape = a.shape();
    shape[0] = batch;
    auto ai = a.impl();
    return make_op_output(std::move(shape), std::move(out), {a},
                          [ai, batch, chunk](TensorImpl& self) {
                              if (!wants_grad(ai)) return;
                              ai->ensure_grad();
                              for (int64_t b = 0; b < batch; ++b)
                                  for (int64_t i = 0; i < chunk; ++i)
                                      ai->grad[i] += self.grad[b * chunk + i];
                          });
}

Tensor tile_spatial(const Tensor& a, int64_t h, int64_t w) {
    check_rank4(a, "tile_spatial");
    if (a.dim(2) != 1 || a.dim(3) != 1) throw ShapeError("tile_spatial: input must be (N,C,1,1)");
    if (h < 1 || w < 1) throw ShapeError("tile_spatial: bad target size");
    int64_t N = a.dim(0), C = a.dim(1);
    std::vector<double> out(static_cast<size_t>(N * C * h * w));
    const double* pa = a.data();
    for (int64_t nc = 0; nc < N * C; ++nc)
        std::fill(out.begin() + nc * h * w, out.begin() + (nc + 1) * h * w, pa[nc]);
    auto ai = a.impl();
    return make_op_output({N, C, h, w}, std::move(out), {a}, [ai, N, C, h, w](TensorImpl& self) {
        if (!wants_grad(ai)) return;
        ai->ensure_grad();
        for (int64_t nc = 0; nc < N * C; ++nc)
            ai->grad[nc] += pairwise_sum(self.grad.data() + nc * h * w, h * w);
    });
}

}  // namespace qres
