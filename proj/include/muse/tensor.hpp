#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "muse/common.hpp"
#include "muse/random.hpp"

// Reverse-mode autodiff on rank-2 tensors (rows x cols). Backward functions
// are themselves expressed through the public ops, so gradients are ordinary
// graph tensors and can be differentiated again (needed for the gradient
// penalty, which trains through the norm of an input gradient).
namespace muse::tensor {

class Tensor;
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& cotangent)>;

namespace detail {

inline thread_local int no_grad_depth = 0;

}  // namespace detail

struct NoGradGuard {
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

struct Node {
    std::vector<Real> value;
    int rows = 0;
    int cols = 0;
    bool requires_grad = false;
    std::vector<Tensor> parents;
    BackwardFn backward;  // set only on non-leaf nodes that require grad
    const char* op = "leaf";
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Tensor from_data(int rows, int cols, std::vector<Real> data, bool requires_grad = false) {
        require_shape(rows > 0 && cols > 0, "Tensor: non-positive dims");
        require_shape(data.size() == static_cast<std::size_t>(rows) * cols, "Tensor: data size mismatch");
        auto n = std::make_shared<Node>();
        n->value = std::move(data);
        n->rows = rows;
        n->cols = cols;
        n->requires_grad = requires_grad && grad_enabled();
        return Tensor(std::move(n));
    }

    static Tensor full(int rows, int cols, Real v, bool requires_grad = false) {
        return from_data(rows, cols, std::vector<Real>(static_cast<std::size_t>(rows) * cols, v), requires_grad);
    }

    static Tensor zeros(int rows, int cols, bool requires_grad = false) { return full(rows, cols, 0.0, requires_grad); }
    static Tensor ones(int rows, int cols) { return full(rows, cols, 1.0); }
    static Tensor scalar(Real v) { return full(1, 1, v); }

    static Tensor randn(Rng& rng, int rows, int cols, Real stddev = 1.0, bool requires_grad = false) {
        std::vector<Real> d(static_cast<std::size_t>(rows) * cols);
        for (auto& x : d) x = rng.normal(0.0, stddev);
        return from_data(rows, cols, std::move(d), requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    int rows() const { return n_->rows; }
    int cols() const { return n_->cols; }
    std::size_t numel() const { return n_->value.size(); }
    bool requires_grad() const { return n_->requires_grad; }
    const std::vector<Real>& value() const { return n_->value; }

    // Mutable access to a leaf's storage (optimizer updates). Never valid on
    // graph interior nodes.
    std::vector<Real>& raw() {
        require(!n_->backward, "Tensor::raw: only leaves are mutable");
        return n_->value;
    }

    Real item() const {
        require_shape(numel() == 1, "Tensor::item: not a scalar");
        return n_->value[0];
    }

    Real at(int r, int c) const { return n_->value[static_cast<std::size_t>(r) * cols() + c]; }

    Tensor detach() const {
        auto n = std::make_shared<Node>();
        n->value = n_->value;
        n->rows = n_->rows;
        n->cols = n_->cols;
        n->requires_grad = false;
        n->op = "detach";
        return Tensor(std::move(n));
    }

    Node* node() const { return n_.get(); }

private:
    std::shared_ptr<Node> n_;
};

namespace detail {

inline Tensor make_op(int rows, int cols, std::vector<Real> value, std::vector<Tensor> parents, BackwardFn backward,
                      const char* op) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->rows = rows;
    n->cols = cols;
    n->op = op;
    bool rg = false;
    if (grad_enabled())
        for (const auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
}

inline std::size_t bidx(const Tensor& t, int r, int c) {
    const int rr = t.rows() == 1 ? 0 : r;
    const int cc = t.cols() == 1 ? 0 : c;
    return static_cast<std::size_t>(rr) * t.cols() + cc;
}

inline void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
    const bool rows_ok = a.rows() == b.rows() || a.rows() == 1 || b.rows() == 1;
    const bool cols_ok = a.cols() == b.cols() || a.cols() == 1 || b.cols() == 1;
    require_shape(rows_ok && cols_ok, std::string(op) + ": incompatible shapes");
}

}  // namespace detail

// ---- reductions (declared early; broadcast backward needs them) ----

Tensor sum_rows(const Tensor& x);
Tensor sum_cols(const Tensor& x);

// Reduce a cotangent back to the shape of a broadcast operand.
inline Tensor reduce_to(const Tensor& t, int rows, int cols) {
    Tensor x = t;
    if (rows == 1 && x.rows() > 1) x = sum_rows(x);
    if (cols == 1 && x.cols() > 1) x = sum_cols(x);
    return x;
}

// ---- elementwise with broadcasting ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_broadcast(a, b, "add");
    const int R = std::max(a.rows(), b.rows());
    const int C = std::max(a.cols(), b.cols());
    std::vector<Real> v(static_cast<std::size_t>(R) * C);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            v[static_cast<std::size_t>(r) * C + c] = a.value()[detail::bidx(a, r, c)] + b.value()[detail::bidx(b, r, c)];
    const int ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    return detail::make_op(
        R, C, std::move(v), {a, b},
        [ar, ac, br, bc](const Tensor& cot) {
            return std::vector<Tensor>{reduce_to(cot, ar, ac), reduce_to(cot, br, bc)};
        },
        "add");
}

Tensor mul(const Tensor& a, const Tensor& b);

inline Tensor neg(const Tensor& a) {
    std::vector<Real> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = -a.value()[i];
    return detail::make_op(
        a.rows(), a.cols(), std::move(v), {a}, [](const Tensor& cot) { return std::vector<Tensor>{neg(cot)}; }, "neg");
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_broadcast(a, b, "mul");
    const int R = std::max(a.rows(), b.rows());
    const int C = std::max(a.cols(), b.cols());
    std::vector<Real> v(static_cast<std::size_t>(R) * C);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            v[static_cast<std::size_t>(r) * C + c] = a.value()[detail::bidx(a, r, c)] * b.value()[detail::bidx(b, r, c)];
    return detail::make_op(
        R, C, std::move(v), {a, b},
        [a, b](const Tensor& cot) {
            return std::vector<Tensor>{reduce_to(mul(cot, b), a.rows(), a.cols()),
                                       reduce_to(mul(cot, a), b.rows(), b.cols())};
        },
        "mul");
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_broadcast(a, b, "div");
    const int R = std::max(a.rows(), b.rows());
    const int C = std::max(a.cols(), b.cols());
    std::vector<Real> v(static_cast<std::size_t>(R) * C);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
            v[static_cast<std::size_t>(r) * C + c] = a.value()[detail::bidx(a, r, c)] / b.value()[detail::bidx(b, r, c)];
    return detail::make_op(
        R, C, std::move(v), {a, b},
        [a, b](const Tensor& cot) {
            // d/da = cot / b ; d/db = -cot * a / b^2
            Tensor da = reduce_to(div(cot, b), a.rows(), a.cols());
            Tensor db = reduce_to(neg(div(mul(cot, a), mul(b, b))), b.rows(), b.cols());
            return std::vector<Tensor>{da, db};
        },
        "div");
}

inline Tensor scale(const Tensor& a, Real s) { return mul(a, Tensor::scalar(s)); }
inline Tensor add_scalar(const Tensor& a, Real s) { return add(a, Tensor::scalar(s)); }

// ---- elementwise nonlinearities ----

inline Tensor exp_(const Tensor& a) {
    std::vector<Real> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a.value()[i]);
    return detail::make_op(
        a.rows(), a.cols(), std::move(v), {a},
        [a](const Tensor& cot) { return std::vector<Tensor>{mul(cot, exp_(a))}; }, "exp");
}

inline Tensor log_(const Tensor& a) {
    std::vector<Real> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(a.value()[i]);
    return detail::make_op(
        a.rows(), a.cols(), std::move(v), {a},
        [a](const Tensor& cot) { return std::vector<Tensor>{div(cot, a)}; }, "log");
}

inline Tensor sqrt_(const Tensor& a) {
    std::vector<Real> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(a.value()[i]);
    return detail::make_op(
        a.rows(), a.cols(), std::move(v), {a},
        [a](const Tensor& cot) {
            return std::vector<Tensor>{mul(cot, scale(div(Tensor::scalar(1.0), sqrt_(a)), 0.5))};
        },
        "sqrt");
}

inline Tensor tanh_(const Tensor& a) {
    std::vector<Real> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a.value()[i]);
    return detail::make_op(
        a.rows(), a.cols(), std::move(v), {a},
        [a](const Tensor& cot) {
            Tensor y = tanh_(a);
            return std::vector<Tensor>{mul(cot, sub(Tensor::scalar(1.0), mul(y, y)))};
        },
        "tanh");
}

inline Tensor sigmoid_(const Tensor& a) {
    std::vector<Real> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-a.value()[i]));
    return detail::make_op(
        a.rows(), a.cols(), std::move(v), {a},
        [a](const Tensor& cot) {
            Tensor y = sigmoid_(a);
            return std::vector<Tensor>{mul(cot, mul(y, sub(Tensor::scalar(1.0), y)))};
        },
        "sigmoid");
}

inline Tensor leaky_relu(const Tensor& a, Real slope) {
    std::vector<Real> v(a.numel());
    std::vector<Real> mask(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const bool pos = a.value()[i] > 0.0;
        v[i] = pos ? a.value()[i] : slope * a.value()[i];
        mask[i] = pos ? 1.0 : slope;
    }
    Tensor m = Tensor::from_data(a.rows(), a.cols(), std::move(mask));
    return detail::make_op(
        a.rows(), a.cols(), std::move(v), {a},
        [m](const Tensor& cot) { return std::vector<Tensor>{mul(cot, m)}; }, "leaky_relu");
}

// clamp with constant bounds; gradient passes through the interior only
inline Tensor clamp(const Tensor& a, Real lo, Real hi) {
    std::vector<Real> v(a.numel());
    std::vector<Real> mask(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Real x = a.value()[i];
        v[i] = std::clamp(x, lo, hi);
        mask[i] = (x > lo && x < hi) ? 1.0 : 0.0;
    }
    Tensor m = Tensor::from_data(a.rows(), a.cols(), std::move(mask));
    return detail::make_op(
        a.rows(), a.cols(), std::move(v), {a},
        [m](const Tensor& cot) { return std::vector<Tensor>{mul(cot, m)}; }, "clamp");
}

// elementwise min; ties go to the first argument
inline Tensor minimum(const Tensor& a, const Tensor& b) {
    require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "minimum: shape mismatch");
    std::vector<Real> v(a.numel());
    std::vector<Real> ma(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const bool take_a = a.value()[i] <= b.value()[i];
        v[i] = take_a ? a.value()[i] : b.value()[i];
        ma[i] = take_a ? 1.0 : 0.0;
    }
    Tensor mask_a = Tensor::from_data(a.rows(), a.cols(), std::move(ma));
    return detail::make_op(
        a.rows(), a.cols(), std::move(v), {a, b},
        [mask_a](const Tensor& cot) {
            Tensor da = mul(cot, mask_a);
            Tensor db = mul(cot, sub(Tensor::scalar(1.0), mask_a));
            return std::vector<Tensor>{da, db};
        },
        "minimum");
}

// ---- reductions ----

inline Tensor sum_all(const Tensor& x) {
    Real acc = 0.0;
    for (Real v : x.value()) acc += v;
    const int R = x.rows(), C = x.cols();
    return detail::make_op(
        1, 1, {acc}, {x},
        [R, C](const Tensor& cot) { return std::vector<Tensor>{mul(cot, Tensor::ones(R, C))}; }, "sum_all");
}

inline Tensor sum_rows(const Tensor& x) {
    std::vector<Real> v(static_cast<std::size_t>(x.cols()), 0.0);
    for (int r = 0; r < x.rows(); ++r)
        for (int c = 0; c < x.cols(); ++c) v[static_cast<std::size_t>(c)] += x.at(r, c);
    const int R = x.rows(), C = x.cols();
    return detail::make_op(
        1, C, std::move(v), {x},
        [R, C](const Tensor& cot) { return std::vector<Tensor>{mul(cot, Tensor::ones(R, C))}; }, "sum_rows");
}

inline Tensor sum_cols(const Tensor& x) {
    std::vector<Real> v(static_cast<std::size_t>(x.rows()), 0.0);
    for (int r = 0; r < x.rows(); ++r)
        for (int c = 0; c < x.cols(); ++c) v[static_cast<std::size_t>(r)] += x.at(r, c);
    const int R = x.rows(), C = x.cols();
    return detail::make_op(
        R, 1, std::move(v), {x},
        [R, C](const Tensor& cot) { return std::vector<Tensor>{mul(cot, Tensor::ones(R, C))}; }, "sum_cols");
}

inline Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<Real>(x.numel())); }
inline Tensor mean_rows(const Tensor& x) { return scale(sum_rows(x), 1.0 / static_cast<Real>(x.rows())); }
inline Tensor mean_cols(const Tensor& x) { return scale(sum_cols(x), 1.0 / static_cast<Real>(x.cols())); }

// constant per-row maximum, for numerically stable softmax
inline Tensor max_cols_detached(const Tensor& x) {
    std::vector<Real> v(static_cast<std::size_t>(x.rows()));
    for (int r = 0; r < x.rows(); ++r) {
        Real m = x.at(r, 0);
        for (int c = 1; c < x.cols(); ++c) m = std::max(m, x.at(r, c));
        v[static_cast<std::size_t>(r)] = m;
    }
    return Tensor::from_data(x.rows(), 1, std::move(v));
}

// ---- linear algebra / structure ----

Tensor transpose(const Tensor& a);

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require_shape(a.cols() == b.rows(), "matmul: inner dims mismatch");
    using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> ma(a.value().data(), a.rows(), a.cols());
    Eigen::Map<const Mat> mb(b.value().data(), b.rows(), b.cols());
    std::vector<Real> v(static_cast<std::size_t>(a.rows()) * b.cols());
    Eigen::Map<Mat>(v.data(), a.rows(), b.cols()) = ma * mb;
    return detail::make_op(
        a.rows(), b.cols(), std::move(v), {a, b},
        [a, b](const Tensor& cot) {
            return std::vector<Tensor>{matmul(cot, transpose(b)), matmul(transpose(a), cot)};
        },
        "matmul");
}

inline Tensor transpose(const Tensor& a) {
    std::vector<Real> v(a.numel());
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) v[static_cast<std::size_t>(c) * a.rows() + r] = a.at(r, c);
    return detail::make_op(
        a.cols(), a.rows(), std::move(v), {a},
        [](const Tensor& cot) { return std::vector<Tensor>{transpose(cot)}; }, "transpose");
}

inline Tensor reshape(const Tensor& a, int rows, int cols) {
    require_shape(static_cast<std::size_t>(rows) * cols == a.numel(), "reshape: numel mismatch");
    const int ar = a.rows(), ac = a.cols();
    return detail::make_op(
        rows, cols, a.value(), {a},
        [ar, ac](const Tensor& cot) { return std::vector<Tensor>{reshape(cot, ar, ac)}; }, "reshape");
}

Tensor slice_cols(const Tensor& a, int c0, int c1);

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_shape(a.rows() == b.rows(), "concat_cols: row mismatch");
    const int R = a.rows();
    const int Ca = a.cols(), Cb = b.cols();
    std::vector<Real> v(static_cast<std::size_t>(R) * (Ca + Cb));
    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < Ca; ++c) v[static_cast<std::size_t>(r) * (Ca + Cb) + c] = a.at(r, c);
        for (int c = 0; c < Cb; ++c) v[static_cast<std::size_t>(r) * (Ca + Cb) + Ca + c] = b.at(r, c);
    }
    return detail::make_op(
        R, Ca + Cb, std::move(v), {a, b},
        [Ca, Cb](const Tensor& cot) {
            return std::vector<Tensor>{slice_cols(cot, 0, Ca), slice_cols(cot, Ca, Ca + Cb)};
        },
        "concat_cols");
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
    require_shape(0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols: bad range");
    const int R = a.rows();
    const int C = c1 - c0;
    std::vector<Real> v(static_cast<std::size_t>(R) * C);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) v[static_cast<std::size_t>(r) * C + c] = a.at(r, c0 + c);
    const int Ctot = a.cols();
    return detail::make_op(
        R, C, std::move(v), {a},
        [c0, c1, Ctot, R](const Tensor& cot) {
            Tensor out = cot;
            if (c0 > 0) out = concat_cols(Tensor::zeros(R, c0), out);
            if (c1 < Ctot) out = concat_cols(out, Tensor::zeros(R, Ctot - c1));
            return std::vector<Tensor>{out};
        },
        "slice_cols");
}

// ---- im2col / col2im (adjoint pair; convolutions are matmuls on top) ----

struct ConvGeom {
    int n = 0, h = 0, w = 0, c = 0;  // image dims (the "image side" of the pair)
    int k = 0, stride = 0, pad = 0;

    int out_h() const { return (h + 2 * pad - k) / stride + 1; }
    int out_w() const { return (w + 2 * pad - k) / stride + 1; }
};

Tensor col2im(const Tensor& cols, const ConvGeom& g);

// x: (n*h*w, c) NHWC-flattened -> (n*oh*ow, c*k*k)
inline Tensor im2col(const Tensor& x, const ConvGeom& g) {
    require_shape(x.rows() == g.n * g.h * g.w && x.cols() == g.c, "im2col: input dims mismatch");
    const int oh = g.out_h(), ow = g.out_w();
    require_shape(oh > 0 && ow > 0, "im2col: geometry yields empty output");
    const int CKK = g.c * g.k * g.k;
    std::vector<Real> v(static_cast<std::size_t>(g.n) * oh * ow * CKK, 0.0);
    for (int n = 0; n < g.n; ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const std::size_t row = (static_cast<std::size_t>(n) * oh + oy) * ow + ox;
                for (int ky = 0; ky < g.k; ++ky) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    for (int kx = 0; kx < g.k; ++kx) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= g.w) continue;
                        const std::size_t src = ((static_cast<std::size_t>(n) * g.h + iy) * g.w + ix) * g.c;
                        for (int ch = 0; ch < g.c; ++ch)
                            v[row * CKK + (static_cast<std::size_t>(ch) * g.k + ky) * g.k + kx] = x.value()[src + ch];
                    }
                }
            }
    return detail::make_op(
        g.n * oh * ow, CKK, std::move(v), {x},
        [g](const Tensor& cot) { return std::vector<Tensor>{col2im(cot, g)}; }, "im2col");
}

// cols: (n*oh*ow, c*k*k) -> (n*h*w, c), scatter-add; adjoint of im2col
inline Tensor col2im(const Tensor& cols, const ConvGeom& g) {
    const int oh = g.out_h(), ow = g.out_w();
    const int CKK = g.c * g.k * g.k;
    require_shape(cols.rows() == g.n * oh * ow && cols.cols() == CKK, "col2im: input dims mismatch");
    std::vector<Real> v(static_cast<std::size_t>(g.n) * g.h * g.w * g.c, 0.0);
    for (int n = 0; n < g.n; ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const std::size_t row = (static_cast<std::size_t>(n) * oh + oy) * ow + ox;
                for (int ky = 0; ky < g.k; ++ky) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    for (int kx = 0; kx < g.k; ++kx) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= g.w) continue;
                        const std::size_t dst = ((static_cast<std::size_t>(n) * g.h + iy) * g.w + ix) * g.c;
                        for (int ch = 0; ch < g.c; ++ch)
                            v[dst + ch] += cols.value()[row * CKK + (static_cast<std::size_t>(ch) * g.k + ky) * g.k + kx];
                    }
                }
            }
    return detail::make_op(
        g.n * g.h * g.w, g.c, std::move(v), {cols},
        [g](const Tensor& cot) { return std::vector<Tensor>{im2col(cot, g)}; }, "col2im");
}

// ---- composites ----

inline Tensor softmax_rows(const Tensor& logits) {
    Tensor shifted = sub(logits, max_cols_detached(logits));
    Tensor e = exp_(shifted);
    return div(e, sum_cols(e));
}

inline Tensor log_softmax_rows(const Tensor& logits) {
    Tensor shifted = sub(logits, max_cols_detached(logits));
    return sub(shifted, log_(sum_cols(exp_(shifted))));
}

// ---- autodiff driver ----

inline std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt, bool create_graph = false) {
    require_shape(output.numel() == 1, "grad: output must be scalar");

    // reverse topological order over the subgraph that requires grad
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::unordered_map<Node*, Tensor> handle;  // keep shared_ptrs alive during traversal
    {
        std::vector<std::pair<Tensor, std::size_t>> stack;
        stack.emplace_back(output, 0);
        while (!stack.empty()) {
            auto& [t, child] = stack.back();
            Node* n = t.node();
            if (seen.count(n)) {
                stack.pop_back();
                continue;
            }
            if (child < n->parents.size()) {
                Tensor p = n->parents[child];
                ++child;
                if (p.requires_grad() && !seen.count(p.node())) stack.emplace_back(p, 0);
            } else {
                seen.insert(n);
                topo.push_back(n);
                handle.emplace(n, t);
                stack.pop_back();
            }
        }
    }

    std::unordered_map<Node*, Tensor> cot;
    cot.emplace(output.node(), Tensor::ones(1, 1));

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        auto found = cot.find(n);
        if (found == cot.end() || !n->backward) continue;
        std::vector<Tensor> parent_cots = n->backward(found->second);
        require(parent_cots.size() == n->parents.size(), "grad: backward arity mismatch");
        for (std::size_t i = 0; i < n->parents.size(); ++i) {
            const Tensor& p = n->parents[i];
            if (!p.requires_grad()) continue;
            Tensor g = create_graph ? parent_cots[i] : parent_cots[i].detach();
            auto at = cot.find(p.node());
            if (at == cot.end())
                cot.emplace(p.node(), g);
            else
                at->second = add(at->second, g);
        }
    }

    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (const auto& w : wrt) {
        auto found = cot.find(w.node());
        if (found == cot.end())
            out.push_back(Tensor::zeros(w.rows(), w.cols()));
        else
            out.push_back(found->second);
    }
    return out;
}

}  // namespace muse::tensor
