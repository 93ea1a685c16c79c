#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mvdetr/common.hpp"

// Minimal dense tensor with reverse-mode autodiff. Values are produced in
// the scalar type T (float for normal runs, double for finite-difference
// verification); the tape is the implicit graph of nodes, built per
// forward pass and dropped once backward() has run.

namespace mvdetr {

// When set, every op validates its output for NaN/Inf and aborts naming
// the op. Enabled by the training loop.
inline thread_local bool g_finite_checks = false;

template <class T>
struct TensorNode {
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized lazily, same shape as value
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backward_fn;

    std::size_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <class T>
class TensorT {
public:
    using Node = TensorNode<T>;

    TensorT() = default;
    explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static TensorT from_data(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ContractError("tensor shape dimensions must be positive");
            n *= static_cast<std::size_t>(d);
        }
        if (n != data.size())
            throw ContractError("tensor data length " + std::to_string(data.size()) +
                                " does not match shape product " + std::to_string(n));
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->requires_grad = requires_grad;
        return TensorT(std::move(node));
    }

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return from_data(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static TensorT full(std::vector<int> shape, T v) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return from_data(std::move(shape), std::vector<T>(n, v));
    }

    static TensorT scalar(T v) { return from_data({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& ptr() const { return node_; }

    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    int rows() const { return node_->shape.at(0); }
    int cols() const { return node_->shape.at(1); }

    const std::vector<T>& data() const { return node_->value; }
    std::vector<T>& mutable_data() { return node_->value; }
    const std::vector<T>& grad() const { return node_->grad; }

    T item() const {
        if (numel() != 1) throw ContractError("item() requires a scalar tensor");
        return node_->value[0];
    }

    T at(int r, int c) const {
        return node_->value[static_cast<std::size_t>(r) * cols() + c];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    // Value copy detached from the tape.
    TensorT detach() const { return from_data(node_->shape, node_->value, false); }

private:
    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;

namespace detail {

template <class T>
void check_finite(const TensorNode<T>& n) {
    if (!g_finite_checks) return;
    for (T v : n.value) {
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string("non-finite value produced by op '") + n.op + "'");
    }
}

template <class T>
std::shared_ptr<TensorNode<T>> make_node(std::vector<int> shape, std::size_t n, const char* op,
                                         std::vector<std::shared_ptr<TensorNode<T>>> parents) {
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->value.resize(n);
    node->op = op;
    for (auto& p : parents)
        if (p->requires_grad) node->requires_grad = true;
    node->parents = std::move(parents);
    return node;
}

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

template <class T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops

template <class T, class Fwd, class Bwd>
TensorT<T> elementwise_binary(const TensorT<T>& a, const TensorT<T>& b, const char* opname, Fwd f,
                              Bwd df) {
    detail::require_same_shape(a, b, opname);
    auto node = detail::make_node<T>(a.shape(), a.numel(), opname, {a.ptr(), b.ptr()});
    for (std::size_t i = 0; i < node->value.size(); ++i)
        node->value[i] = f(a.data()[i], b.data()[i]);
    detail::check_finite(*node);
    if (node->requires_grad) {
        auto pa = a.ptr(), pb = b.ptr();
        node->backward_fn = [pa, pb, df](TensorNode<T>& out) {
            if (pa->requires_grad) pa->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            for (std::size_t i = 0; i < out.value.size(); ++i) {
                auto [da, db] = df(pa->value[i], pb->value[i], out.value[i]);
                if (pa->requires_grad) pa->grad[i] += da * out.grad[i];
                if (pb->requires_grad) pb->grad[i] += db * out.grad[i];
            }
        };
    }
    return TensorT<T>(std::move(node));
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(a, b, "add", [](T x, T y) { return x + y; },
                              [](T, T, T) { return std::pair<T, T>(T(1), T(1)); });
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(a, b, "sub", [](T x, T y) { return x - y; },
                              [](T, T, T) { return std::pair<T, T>(T(1), T(-1)); });
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(a, b, "mul", [](T x, T y) { return x * y; },
                              [](T x, T y, T) { return std::pair<T, T>(y, x); });
}

template <class T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(a, b, "div", [](T x, T y) { return x / y; },
                              [](T x, T y, T) {
                                  return std::pair<T, T>(T(1) / y, -x / (y * y));
                              });
}

// Ties route the gradient to the first argument.
template <class T>
TensorT<T> maximum(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(a, b, "maximum", [](T x, T y) { return x >= y ? x : y; },
                              [](T x, T y, T) {
                                  return x >= y ? std::pair<T, T>(T(1), T(0))
                                                : std::pair<T, T>(T(0), T(1));
                              });
}

template <class T>
TensorT<T> minimum(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(a, b, "minimum", [](T x, T y) { return x <= y ? x : y; },
                              [](T x, T y, T) {
                                  return x <= y ? std::pair<T, T>(T(1), T(0))
                                                : std::pair<T, T>(T(0), T(1));
                              });
}

template <class T>
TensorT<T> atan2_el(const TensorT<T>& y, const TensorT<T>& x) {
    return elementwise_binary(y, x, "atan2", [](T a, T b) { return std::atan2(a, b); },
                              [](T a, T b, T) {
                                  T denom = a * a + b * b;
                                  return std::pair<T, T>(b / denom, -a / denom);
                              });
}

// ---------------------------------------------------------------------------
// elementwise unary ops

template <class T, class Fwd, class Bwd>
TensorT<T> elementwise_unary(const TensorT<T>& a, const char* opname, Fwd f, Bwd df) {
    auto node = detail::make_node<T>(a.shape(), a.numel(), opname, {a.ptr()});
    for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = f(a.data()[i]);
    detail::check_finite(*node);
    if (node->requires_grad) {
        auto pa = a.ptr();
        node->backward_fn = [pa, df](TensorNode<T>& out) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < out.value.size(); ++i)
                pa->grad[i] += df(pa->value[i], out.value[i]) * out.grad[i];
        };
    }
    return TensorT<T>(std::move(node));
}

template <class T>
TensorT<T> neg(const TensorT<T>& a) {
    return elementwise_unary(a, "neg", [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
    return elementwise_unary(a, "relu", [](T x) { return x > T(0) ? x : T(0); },
                             [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
TensorT<T> abs_el(const TensorT<T>& a) {
    return elementwise_unary(a, "abs", [](T x) { return std::abs(x); },
                             [](T x, T) { return x >= T(0) ? T(1) : T(-1); });
}

template <class T>
TensorT<T> exp_el(const TensorT<T>& a) {
    return elementwise_unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
TensorT<T> log_el(const TensorT<T>& a) {
    return elementwise_unary(a, "log", [](T x) { return std::log(x); },
                             [](T x, T) { return T(1) / x; });
}

template <class T>
TensorT<T> sin_el(const TensorT<T>& a) {
    return elementwise_unary(a, "sin", [](T x) { return std::sin(x); },
                             [](T x, T) { return std::cos(x); });
}

template <class T>
TensorT<T> cos_el(const TensorT<T>& a) {
    return elementwise_unary(a, "cos", [](T x) { return std::cos(x); },
                             [](T x, T) { return -std::sin(x); });
}

// Exact erf-form GELU: x * Phi(x).
template <class T>
TensorT<T> gelu(const TensorT<T>& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return elementwise_unary(
        a, "gelu",
        [](T x) {
            double xd = static_cast<double>(x);
            return static_cast<T>(xd * 0.5 * (1.0 + std::erf(xd * inv_sqrt2)));
        },
        [](T x, T) {
            double xd = static_cast<double>(x);
            double phi = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
            return static_cast<T>(phi + xd * pdf);
        });
}

// Wrap to (-pi, pi]; piecewise shift by 2*pi*k so the gradient is 1.
template <class T>
TensorT<T> wrap_angle(const TensorT<T>& a) {
    return elementwise_unary(
        a, "wrap_angle",
        [](T x) {
            double two_pi = 2.0 * M_PI;
            double r = std::remainder(static_cast<double>(x), two_pi);
            if (r <= -M_PI) r += two_pi;
            return static_cast<T>(r);
        },
        [](T, T) { return T(1); });
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    return elementwise_unary(a, "add_scalar", [s](T x) { return x + s; },
                             [](T, T) { return T(1); });
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
    return elementwise_unary(a, "mul_scalar", [s](T x) { return x * s; },
                             [s](T, T) { return s; });
}

// ---------------------------------------------------------------------------
// matrix ops (Eigen-backed kernels)

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
        throw ContractError("matmul: incompatible shapes " + detail::shape_str(a.shape()) +
                            " vs " + detail::shape_str(b.shape()));
    int n = a.rows(), k = a.cols(), m = b.cols();
    auto node = detail::make_node<T>({n, m}, static_cast<std::size_t>(n) * m, "matmul",
                                     {a.ptr(), b.ptr()});
    detail::ECMap<T> A(a.data().data(), n, k), B(b.data().data(), k, m);
    detail::EMap<T>(node->value.data(), n, m) = A * B;
    detail::check_finite(*node);
    if (node->requires_grad) {
        auto pa = a.ptr(), pb = b.ptr();
        node->backward_fn = [pa, pb, n, k, m](TensorNode<T>& out) {
            detail::ECMap<T> G(out.grad.data(), n, m);
            detail::ECMap<T> A2(pa->value.data(), n, k), B2(pb->value.data(), k, m);
            if (pa->requires_grad) {
                pa->ensure_grad();
                detail::EMap<T>(pa->grad.data(), n, k) += G * B2.transpose();
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                detail::EMap<T>(pb->grad.data(), k, m) += A2.transpose() * G;
            }
        };
    }
    return TensorT<T>(std::move(node));
}

template <class T>
TensorT<T> transpose(const TensorT<T>& a) {
    if (a.shape().size() != 2) throw ContractError("transpose: 2-d tensor required");
    int n = a.rows(), m = a.cols();
    auto node = detail::make_node<T>({m, n}, a.numel(), "transpose", {a.ptr()});
    detail::ECMap<T> A(a.data().data(), n, m);
    detail::EMap<T>(node->value.data(), m, n) = A.transpose();
    if (node->requires_grad) {
        auto pa = a.ptr();
        node->backward_fn = [pa, n, m](TensorNode<T>& out) {
            pa->ensure_grad();
            detail::ECMap<T> G(out.grad.data(), m, n);
            detail::EMap<T>(pa->grad.data(), n, m) += G.transpose();
        };
    }
    return TensorT<T>(std::move(node));
}

// Broadcast-add a length-C vector to every row of an NxC matrix.
template <class T>
TensorT<T> add_rowvec(const TensorT<T>& x, const TensorT<T>& v) {
    if (x.shape().size() != 2 || v.numel() != static_cast<std::size_t>(x.cols()))
        throw ContractError("add_rowvec: shape mismatch " + detail::shape_str(x.shape()) +
                            " vs " + detail::shape_str(v.shape()));
    int n = x.rows(), c = x.cols();
    auto node = detail::make_node<T>(x.shape(), x.numel(), "add_rowvec", {x.ptr(), v.ptr()});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            node->value[static_cast<std::size_t>(i) * c + j] =
                x.data()[static_cast<std::size_t>(i) * c + j] + v.data()[j];
    detail::check_finite(*node);
    if (node->requires_grad) {
        auto px = x.ptr(), pv = v.ptr();
        node->backward_fn = [px, pv, n, c](TensorNode<T>& out) {
            if (px->requires_grad) {
                px->ensure_grad();
                for (std::size_t i = 0; i < out.grad.size(); ++i) px->grad[i] += out.grad[i];
            }
            if (pv->requires_grad) {
                pv->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j)
                        pv->grad[j] += out.grad[static_cast<std::size_t>(i) * c + j];
            }
        };
    }
    return TensorT<T>(std::move(node));
}

// y = x.w + b, the workhorse behind every MLP.
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    return add_rowvec(matmul(x, w), b);
}

template <class T>
TensorT<T> sum_all(const TensorT<T>& a) {
    auto node = detail::make_node<T>({1}, 1, "sum", {a.ptr()});
    T s = T(0);
    for (T v : a.data()) s += v;
    node->value[0] = s;
    if (node->requires_grad) {
        auto pa = a.ptr();
        node->backward_fn = [pa](TensorNode<T>& out) {
            pa->ensure_grad();
            for (auto& g : pa->grad) g += out.grad[0];
        };
    }
    return TensorT<T>(std::move(node));
}

template <class T>
TensorT<T> mean_all(const TensorT<T>& a) {
    return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// row-structured ops

template <class T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
    if (x.shape().size() != 2) throw ContractError("softmax_rows: 2-d tensor required");
    int n = x.rows(), c = x.cols();
    auto node = detail::make_node<T>(x.shape(), x.numel(), "softmax_rows", {x.ptr()});
    for (int i = 0; i < n; ++i) {
        const T* row = x.data().data() + static_cast<std::size_t>(i) * c;
        T* out = node->value.data() + static_cast<std::size_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T s = T(0);
        for (int j = 0; j < c; ++j) {
            out[j] = std::exp(row[j] - mx);
            s += out[j];
        }
        for (int j = 0; j < c; ++j) out[j] /= s;
    }
    detail::check_finite(*node);
    if (node->requires_grad) {
        auto px = x.ptr();
        node->backward_fn = [px, n, c](TensorNode<T>& out) {
            px->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const T* y = out.value.data() + static_cast<std::size_t>(i) * c;
                const T* gy = out.grad.data() + static_cast<std::size_t>(i) * c;
                T dot = T(0);
                for (int j = 0; j < c; ++j) dot += gy[j] * y[j];
                T* gx = px->grad.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) gx[j] += (gy[j] - dot) * y[j];
            }
        };
    }
    return TensorT<T>(std::move(node));
}

template <class T>
TensorT<T> layernorm_rows(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                          T eps = T(1e-5)) {
    if (x.shape().size() != 2) throw ContractError("layernorm_rows: 2-d tensor required");
    int n = x.rows(), c = x.cols();
    if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c))
        throw ContractError("layernorm_rows: affine parameter size mismatch");
    auto node =
        detail::make_node<T>(x.shape(), x.numel(), "layernorm", {x.ptr(), gamma.ptr(), beta.ptr()});
    std::vector<T> xhat(x.numel()), inv_std(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const T* row = x.data().data() + static_cast<std::size_t>(i) * c;
        T mu = T(0);
        for (int j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<T>(c);
        T var = T(0);
        for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(c);
        T is = T(1) / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < c; ++j) {
            std::size_t k = static_cast<std::size_t>(i) * c + j;
            xhat[k] = (row[j] - mu) * is;
            node->value[k] = gamma.data()[j] * xhat[k] + beta.data()[j];
        }
    }
    detail::check_finite(*node);
    if (node->requires_grad) {
        auto px = x.ptr();
        auto pg = gamma.ptr(), pb = beta.ptr();
        node->backward_fn = [px, pg, pb, n, c, xhat = std::move(xhat),
                             inv_std = std::move(inv_std)](TensorNode<T>& out) {
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            if (px->requires_grad) px->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const T* gy = out.grad.data() + static_cast<std::size_t>(i) * c;
                const T* xh = xhat.data() + static_cast<std::size_t>(i) * c;
                if (pg->requires_grad || pb->requires_grad) {
                    for (int j = 0; j < c; ++j) {
                        if (pg->requires_grad) pg->grad[j] += gy[j] * xh[j];
                        if (pb->requires_grad) pb->grad[j] += gy[j];
                    }
                }
                if (px->requires_grad) {
                    T sum_g = T(0), sum_gx = T(0);
                    for (int j = 0; j < c; ++j) {
                        T gj = gy[j] * pg->value[j];
                        sum_g += gj;
                        sum_gx += gj * xh[j];
                    }
                    T* gx = px->grad.data() + static_cast<std::size_t>(i) * c;
                    T is = inv_std[static_cast<std::size_t>(i)];
                    for (int j = 0; j < c; ++j) {
                        T gj = gy[j] * pg->value[j];
                        gx[j] += is * (gj - sum_g / static_cast<T>(c) -
                                       xh[j] * sum_gx / static_cast<T>(c));
                    }
                }
            }
        };
    }
    return TensorT<T>(std::move(node));
}

// Per-channel running statistics for batch normalization.
template <class T>
struct BnStats {
    std::vector<T> mean;
    std::vector<T> var;
};

enum class BnMode { train, eval };

// Train mode normalizes by (biased) batch statistics and updates the
// running stats with momentum 0.1; eval mode normalizes by running stats.
template <class T>
TensorT<T> batchnorm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                     BnStats<T>& stats, BnMode mode, T momentum = T(0.1), T eps = T(1e-5)) {
    if (x.shape().size() != 2) throw ContractError("batchnorm: 2-d tensor required");
    int n = x.rows(), c = x.cols();
    if (n < 1) throw ContractError("batchnorm: empty batch");
    if (stats.mean.size() != static_cast<std::size_t>(c))
        throw ContractError("batchnorm: running-stat channel mismatch");
    auto node =
        detail::make_node<T>(x.shape(), x.numel(), "batchnorm", {x.ptr(), gamma.ptr(), beta.ptr()});
    std::vector<T> mu(static_cast<std::size_t>(c), T(0)), var(static_cast<std::size_t>(c), T(0));
    if (mode == BnMode::train) {
        // accumulate in double so the batch statistics are insensitive
        // to row order at T's precision
        std::vector<double> smu(static_cast<std::size_t>(c), 0.0), svar(static_cast<std::size_t>(c), 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
                smu[j] += static_cast<double>(x.data()[static_cast<std::size_t>(i) * c + j]);
        for (int j = 0; j < c; ++j) mu[j] = static_cast<T>(smu[j] / n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                double d = static_cast<double>(x.data()[static_cast<std::size_t>(i) * c + j]) -
                           static_cast<double>(mu[j]);
                svar[j] += d * d;
            }
        for (int j = 0; j < c; ++j) var[j] = static_cast<T>(svar[j] / n);
        for (int j = 0; j < c; ++j) {
            stats.mean[j] = (T(1) - momentum) * stats.mean[j] + momentum * mu[j];
            stats.var[j] = (T(1) - momentum) * stats.var[j] + momentum * var[j];
        }
    } else {
        mu = stats.mean;
        var = stats.var;
    }
    std::vector<T> xhat(x.numel()), inv_std(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) inv_std[j] = T(1) / std::sqrt(var[j] + eps);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            std::size_t k = static_cast<std::size_t>(i) * c + j;
            xhat[k] = (x.data()[k] - mu[j]) * inv_std[j];
            node->value[k] = gamma.data()[j] * xhat[k] + beta.data()[j];
        }
    detail::check_finite(*node);
    if (node->requires_grad) {
        auto px = x.ptr();
        auto pg = gamma.ptr(), pb = beta.ptr();
        bool train = mode == BnMode::train;
        node->backward_fn = [px, pg, pb, n, c, train, xhat = std::move(xhat),
                             inv_std = std::move(inv_std)](TensorNode<T>& out) {
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            if (px->requires_grad) px->ensure_grad();
            for (int j = 0; j < c; ++j) {
                T sum_g = T(0), sum_gx = T(0);
                for (int i = 0; i < n; ++i) {
                    std::size_t k = static_cast<std::size_t>(i) * c + j;
                    sum_g += out.grad[k];
                    sum_gx += out.grad[k] * xhat[k];
                }
                if (pg->requires_grad) pg->grad[j] += sum_gx;
                if (pb->requires_grad) pb->grad[j] += sum_g;
                if (px->requires_grad) {
                    T g = pg->value[j];
                    for (int i = 0; i < n; ++i) {
                        std::size_t k = static_cast<std::size_t>(i) * c + j;
                        if (train) {
                            px->grad[k] += g * inv_std[j] *
                                           (out.grad[k] - sum_g / static_cast<T>(n) -
                                            xhat[k] * sum_gx / static_cast<T>(n));
                        } else {
                            px->grad[k] += g * inv_std[j] * out.grad[k];
                        }
                    }
                }
            }
        };
    }
    return TensorT<T>(std::move(node));
}

// Weighted cross-entropy over rows; returns the sum of w_i * CE_i.
template <class T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& targets,
                         const std::vector<T>& weights) {
    if (logits.shape().size() != 2) throw ContractError("cross_entropy: 2-d logits required");
    int n = logits.rows(), c = logits.cols();
    if (targets.size() != static_cast<std::size_t>(n) || weights.size() != static_cast<std::size_t>(n))
        throw ContractError("cross_entropy: target/weight count mismatch");
    auto node = detail::make_node<T>({1}, 1, "cross_entropy", {logits.ptr()});
    std::vector<T> probs(logits.numel());
    T total = T(0);
    for (int i = 0; i < n; ++i) {
        const T* row = logits.data().data() + static_cast<std::size_t>(i) * c;
        T* p = probs.data() + static_cast<std::size_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T s = T(0);
        for (int j = 0; j < c; ++j) {
            p[j] = std::exp(row[j] - mx);
            s += p[j];
        }
        for (int j = 0; j < c; ++j) p[j] /= s;
        int t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= c) throw ContractError("cross_entropy: target class out of range");
        total += -weights[static_cast<std::size_t>(i)] * std::log(p[t]);
    }
    node->value[0] = total;
    detail::check_finite(*node);
    if (node->requires_grad) {
        auto pl = logits.ptr();
        node->backward_fn = [pl, n, c, targets, weights, probs = std::move(probs)](TensorNode<T>& out) {
            pl->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    std::size_t k = static_cast<std::size_t>(i) * c + j;
                    T onehot = j == targets[static_cast<std::size_t>(i)] ? T(1) : T(0);
                    pl->grad[k] += weights[static_cast<std::size_t>(i)] * (probs[k] - onehot) * out.grad[0];
                }
        };
    }
    return TensorT<T>(std::move(node));
}

// ---------------------------------------------------------------------------
// structural ops

template <class T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    if (n != a.numel()) throw ContractError("reshape: element count mismatch");
    auto node = detail::make_node<T>(std::move(shape), n, "reshape", {a.ptr()});
    node->value = a.data();
    if (node->requires_grad) {
        auto pa = a.ptr();
        node->backward_fn = [pa](TensorNode<T>& out) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) pa->grad[i] += out.grad[i];
        };
    }
    return TensorT<T>(std::move(node));
}

template <class T>
TensorT<T> concat_cols(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.rows() != b.rows())
        throw ContractError("concat_cols: row mismatch " + detail::shape_str(a.shape()) + " vs " +
                            detail::shape_str(b.shape()));
    int n = a.rows(), ca = a.cols(), cb = b.cols();
    auto node = detail::make_node<T>({n, ca + cb}, static_cast<std::size_t>(n) * (ca + cb),
                                     "concat_cols", {a.ptr(), b.ptr()});
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.data().data() + static_cast<std::size_t>(i) * ca, ca,
                    node->value.data() + static_cast<std::size_t>(i) * (ca + cb));
        std::copy_n(b.data().data() + static_cast<std::size_t>(i) * cb, cb,
                    node->value.data() + static_cast<std::size_t>(i) * (ca + cb) + ca);
    }
    if (node->requires_grad) {
        auto pa = a.ptr(), pb = b.ptr();
        node->backward_fn = [pa, pb, n, ca, cb](TensorNode<T>& out) {
            if (pa->requires_grad) pa->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const T* g = out.grad.data() + static_cast<std::size_t>(i) * (ca + cb);
                if (pa->requires_grad)
                    for (int j = 0; j < ca; ++j) pa->grad[static_cast<std::size_t>(i) * ca + j] += g[j];
                if (pb->requires_grad)
                    for (int j = 0; j < cb; ++j) pb->grad[static_cast<std::size_t>(i) * cb + j] += g[ca + j];
            }
        };
    }
    return TensorT<T>(std::move(node));
}

template <class T>
TensorT<T> slice_cols(const TensorT<T>& a, int c0, int c1) {
    if (a.shape().size() != 2 || c0 < 0 || c1 > a.cols() || c0 >= c1)
        throw ContractError("slice_cols: invalid column range");
    int n = a.rows(), c = a.cols(), w = c1 - c0;
    auto node = detail::make_node<T>({n, w}, static_cast<std::size_t>(n) * w, "slice_cols", {a.ptr()});
    for (int i = 0; i < n; ++i)
        std::copy_n(a.data().data() + static_cast<std::size_t>(i) * c + c0, w,
                    node->value.data() + static_cast<std::size_t>(i) * w);
    if (node->requires_grad) {
        auto pa = a.ptr();
        node->backward_fn = [pa, n, c, c0, w](TensorNode<T>& out) {
            pa->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < w; ++j)
                    pa->grad[static_cast<std::size_t>(i) * c + c0 + j] +=
                        out.grad[static_cast<std::size_t>(i) * w + j];
        };
    }
    return TensorT<T>(std::move(node));
}

template <class T>
TensorT<T> gather_rows(const TensorT<T>& a, const std::vector<int>& idx) {
    if (a.shape().size() != 2) throw ContractError("gather_rows: 2-d tensor required");
    int c = a.cols();
    int n = static_cast<int>(idx.size());
    for (int i : idx)
        if (i < 0 || i >= a.rows()) throw ContractError("gather_rows: index out of range");
    auto node = detail::make_node<T>({n, c}, static_cast<std::size_t>(n) * c, "gather_rows", {a.ptr()});
    for (int i = 0; i < n; ++i)
        std::copy_n(a.data().data() + static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) * c, c,
                    node->value.data() + static_cast<std::size_t>(i) * c);
    if (node->requires_grad) {
        auto pa = a.ptr();
        node->backward_fn = [pa, idx, n, c](TensorNode<T>& out) {
            pa->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    pa->grad[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) * c + j] +=
                        out.grad[static_cast<std::size_t>(i) * c + j];
        };
    }
    return TensorT<T>(std::move(node));
}

// Rowwise group max: input is (N*k) x C with the k rows of group i
// contiguous; output row i is the elementwise max over its group.
template <class T>
TensorT<T> group_max(const TensorT<T>& a, int k) {
    if (a.shape().size() != 2 || k < 1 || a.rows() % k != 0)
        throw ContractError("group_max: rows not divisible by group size");
    int n = a.rows() / k, c = a.cols();
    auto node = detail::make_node<T>({n, c}, static_cast<std::size_t>(n) * c, "group_max", {a.ptr()});
    std::vector<int> argmax(static_cast<std::size_t>(n) * c);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            int best = i * k;
            T bv = a.data()[static_cast<std::size_t>(best) * c + j];
            for (int g = 1; g < k; ++g) {
                T v = a.data()[static_cast<std::size_t>(i * k + g) * c + j];
                if (v > bv) {
                    bv = v;
                    best = i * k + g;
                }
            }
            node->value[static_cast<std::size_t>(i) * c + j] = bv;
            argmax[static_cast<std::size_t>(i) * c + j] = best;
        }
    if (node->requires_grad) {
        auto pa = a.ptr();
        node->backward_fn = [pa, n, c, argmax = std::move(argmax)](TensorNode<T>& out) {
            pa->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    pa->grad[static_cast<std::size_t>(argmax[static_cast<std::size_t>(i) * c + j]) * c + j] +=
                        out.grad[static_cast<std::size_t>(i) * c + j];
        };
    }
    return TensorT<T>(std::move(node));
}

// im2col for a 3x3 kernel with zero padding 1. Input is an (H*W) x C
// row-major image; output is (H' x W') rows of 9*C patch values in
// (ky, kx, channel) order, ready for a linear layer.
template <class T>
TensorT<T> im2col3x3(const TensorT<T>& img, int h, int w, int stride) {
    if (img.shape().size() != 2 || img.rows() != h * w)
        throw ContractError("im2col3x3: image shape mismatch");
    int c = img.cols();
    int ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1;
    int cols = 9 * c;
    auto node = detail::make_node<T>({ho * wo, cols}, static_cast<std::size_t>(ho) * wo * cols,
                                     "im2col", {img.ptr()});
    // source row index per output element, -1 for zero padding
    std::vector<int> src(static_cast<std::size_t>(ho) * wo * 9);
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    int iy = oy * stride + ky - 1;
                    int ix = ox * stride + kx - 1;
                    std::size_t s = (static_cast<std::size_t>(oy) * wo + ox) * 9 + ky * 3 + kx;
                    src[s] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? iy * w + ix : -1;
                }
    for (std::size_t p = 0; p < src.size(); ++p) {
        std::size_t out_row = p / 9, kpos = p % 9;
        T* dst = node->value.data() + out_row * cols + kpos * c;
        if (src[p] < 0) {
            std::fill_n(dst, c, T(0));
        } else {
            std::copy_n(img.data().data() + static_cast<std::size_t>(src[p]) * c, c, dst);
        }
    }
    if (node->requires_grad) {
        auto pi = img.ptr();
        node->backward_fn = [pi, c, cols, src = std::move(src)](TensorNode<T>& out) {
            pi->ensure_grad();
            for (std::size_t p = 0; p < src.size(); ++p) {
                if (src[p] < 0) continue;
                std::size_t out_row = p / 9, kpos = p % 9;
                const T* g = out.grad.data() + out_row * cols + kpos * c;
                T* dst = pi->grad.data() + static_cast<std::size_t>(src[p]) * c;
                for (int j = 0; j < c; ++j) dst[j] += g[j];
            }
        };
    }
    return TensorT<T>(std::move(node));
}

// Bilinear sampling of an (H'*W') x C feature grid at continuous feature
// coordinates, clamped to the border. Differentiable in the grid values.
template <class T>
TensorT<T> bilinear_sample(const TensorT<T>& grid, int h, int w,
                           const std::vector<std::pair<double, double>>& coords) {
    if (grid.shape().size() != 2 || grid.rows() != h * w)
        throw ContractError("bilinear_sample: grid shape mismatch");
    int c = grid.cols();
    int n = static_cast<int>(coords.size());
    auto node = detail::make_node<T>({n, c}, static_cast<std::size_t>(n) * c, "bilinear_sample",
                                     {grid.ptr()});
    struct Tap {
        int idx[4];
        T wgt[4];
    };
    std::vector<Tap> taps(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto [xf, yf] = coords[static_cast<std::size_t>(i)];
        if (!std::isfinite(xf) || !std::isfinite(yf))
            throw ContractError("bilinear_sample: non-finite coordinates");
        double x = std::clamp(xf, 0.0, static_cast<double>(w - 1));
        double y = std::clamp(yf, 0.0, static_cast<double>(h - 1));
        int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
        int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        double fx = x - x0, fy = y - y0;
        Tap& t = taps[static_cast<std::size_t>(i)];
        t.idx[0] = y0 * w + x0;
        t.idx[1] = y0 * w + x1;
        t.idx[2] = y1 * w + x0;
        t.idx[3] = y1 * w + x1;
        t.wgt[0] = static_cast<T>((1 - fx) * (1 - fy));
        t.wgt[1] = static_cast<T>(fx * (1 - fy));
        t.wgt[2] = static_cast<T>((1 - fx) * fy);
        t.wgt[3] = static_cast<T>(fx * fy);
        T* out = node->value.data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            T v = T(0);
            for (int q = 0; q < 4; ++q) v += t.wgt[q] * grid.data()[static_cast<std::size_t>(t.idx[q]) * c + j];
            out[j] = v;
        }
    }
    if (node->requires_grad) {
        auto pg = grid.ptr();
        node->backward_fn = [pg, n, c, taps = std::move(taps)](TensorNode<T>& out) {
            pg->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const Tap& t = taps[static_cast<std::size_t>(i)];
                const T* g = out.grad.data() + static_cast<std::size_t>(i) * c;
                for (int q = 0; q < 4; ++q)
                    for (int j = 0; j < c; ++j)
                        pg->grad[static_cast<std::size_t>(t.idx[q]) * c + j] += t.wgt[q] * g[j];
            }
        };
    }
    return TensorT<T>(std::move(node));
}

// ---------------------------------------------------------------------------
// backward pass

// Reverse-mode sweep from a scalar loss. Visits the recorded graph in
// reverse topological order; gradients accumulate, so a value used twice
// receives the sum of both contributions.
template <class T>
void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar tensor");
    if (!std::isfinite(static_cast<double>(loss.item())))
        throw NumericError("backward: loss is not finite");
    using NodeP = TensorNode<T>*;
    std::vector<NodeP> order;
    std::unordered_set<NodeP> seen;
    std::vector<std::pair<NodeP, std::size_t>> stack;
    stack.emplace_back(loss.ptr().get(), 0);
    seen.insert(loss.ptr().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeP p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.ptr()->ensure_grad();
    loss.ptr()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeP n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

}  // namespace mvdetr
