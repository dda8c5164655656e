#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muse/common.hpp"
#include "muse/random.hpp"
#include "muse/tensor.hpp"

// Minimal layer kit over the autodiff tensors: enough for the denoising
// policy MLP and the DCGAN-style conv stacks. Activations are stored as
// (n*h*w, c) NHWC-flattened matrices with dims carried in FeatureMap.
namespace muse::nn {

using tensor::ConvGeom;
using tensor::Tensor;

struct FeatureMap {
    Tensor t;  // (n*h*w, c)
    int n = 0, h = 0, w = 0, c = 0;
};

struct Linear {
    Tensor w;  // (out, in)
    Tensor b;  // (1, out); undefined when bias-free

    static Linear create(Rng& rng, int in, int out, bool bias = true, Real init_std = -1.0) {
        Linear l;
        const Real s = init_std > 0.0 ? init_std : 1.0 / std::sqrt(static_cast<Real>(in));
        l.w = Tensor::randn(rng, out, in, s, /*requires_grad=*/true);
        if (bias) l.b = Tensor::zeros(1, out, /*requires_grad=*/true);
        return l;
    }

    Tensor forward(const Tensor& x) const {
        Tensor y = tensor::matmul(x, tensor::transpose(w));
        if (b.defined()) y = tensor::add(y, b);
        return y;
    }

    void collect(std::vector<Tensor*>& out) {
        out.push_back(&w);
        if (b.defined()) out.push_back(&b);
    }

    std::int64_t param_count() const {
        return static_cast<std::int64_t>(w.numel()) + static_cast<std::int64_t>(b.defined() ? b.numel() : 0);
    }
};

// Low-rank adapter pair. delta(x) = scale * (x B^T) A^T with A zero-initialized,
// so a fresh adapter leaves the base output untouched.
struct LoraAdapter {
    Tensor a;  // (out, rank), zeros at init
    Tensor b;  // (rank, in)
    int rank = 0;
    Real scale = 1.0;

    static LoraAdapter create(Rng& rng, int in, int out, int rank, Real alpha) {
        require(rank > 0, "LoraAdapter: rank must be positive");
        LoraAdapter ad;
        ad.rank = rank;
        ad.scale = alpha / static_cast<Real>(rank);
        ad.a = Tensor::zeros(out, rank, /*requires_grad=*/true);
        ad.b = Tensor::randn(rng, rank, in, 1.0 / std::sqrt(static_cast<Real>(in)), /*requires_grad=*/true);
        return ad;
    }

    Tensor delta(const Tensor& x) const {
        return tensor::scale(tensor::matmul(tensor::matmul(x, tensor::transpose(b)), tensor::transpose(a)), scale);
    }

    // scale * A B, the effective weight delta
    Tensor delta_weight() const { return tensor::scale(tensor::matmul(a, b), scale); }

    void collect(std::vector<Tensor*>& out) {
        out.push_back(&a);
        out.push_back(&b);
    }

    std::int64_t param_count() const {
        return static_cast<std::int64_t>(a.numel()) + static_cast<std::int64_t>(b.numel());
    }
};

// Frozen linear layer with an optional trainable adapter on top.
struct AdaptedLinear {
    Linear base;
    bool has_adapter = false;
    LoraAdapter adapter;

    Tensor forward(const Tensor& x) const {
        Tensor y = base.forward(x);
        if (has_adapter) y = tensor::add(y, adapter.delta(x));
        return y;
    }

    void attach(Rng& rng, int rank, Real alpha) {
        adapter = LoraAdapter::create(rng, base.w.cols(), base.w.rows(), rank, alpha);
        has_adapter = true;
    }

    void collect_trainable(std::vector<Tensor*>& out) {
        if (has_adapter) adapter.collect(out);
    }
    void collect_frozen(std::vector<Tensor*>& out) { base.collect(out); }
};

struct Conv2d {
    Tensor w;  // (oc, ic*k*k)
    Tensor b;  // (1, oc); undefined when bias-free
    int ic = 0, oc = 0, k = 0, stride = 1, pad = 0;

    static Conv2d create(Rng& rng, int ic, int oc, int k, int stride, int pad, bool bias, Real init_std = 0.02) {
        Conv2d c;
        c.ic = ic;
        c.oc = oc;
        c.k = k;
        c.stride = stride;
        c.pad = pad;
        c.w = Tensor::randn(rng, oc, ic * k * k, init_std, /*requires_grad=*/true);
        if (bias) c.b = Tensor::zeros(1, oc, /*requires_grad=*/true);
        return c;
    }

    FeatureMap forward(const FeatureMap& x) const {
        require_shape(x.c == ic, "Conv2d: channel mismatch");
        ConvGeom g{x.n, x.h, x.w, x.c, k, stride, pad};
        Tensor cols = tensor::im2col(x.t, g);
        Tensor y = tensor::matmul(cols, tensor::transpose(w));
        if (b.defined()) y = tensor::add(y, b);
        return {y, x.n, g.out_h(), g.out_w(), oc};
    }

    void collect(std::vector<Tensor*>& out) {
        out.push_back(&w);
        if (b.defined()) out.push_back(&b);
    }

    std::int64_t param_count() const {
        return static_cast<std::int64_t>(w.numel()) + static_cast<std::int64_t>(b.defined() ? b.numel() : 0);
    }
};

struct ConvTranspose2d {
    Tensor w;  // (ic, oc*k*k)
    int ic = 0, oc = 0, k = 0, stride = 1, pad = 0;

    static ConvTranspose2d create(Rng& rng, int ic, int oc, int k, int stride, int pad, Real init_std = 0.02) {
        ConvTranspose2d c;
        c.ic = ic;
        c.oc = oc;
        c.k = k;
        c.stride = stride;
        c.pad = pad;
        c.w = Tensor::randn(rng, ic, oc * k * k, init_std, /*requires_grad=*/true);
        return c;
    }

    static int out_dim(int in_dim, int k, int stride, int pad) { return (in_dim - 1) * stride - 2 * pad + k; }

    FeatureMap forward(const FeatureMap& x) const {
        require_shape(x.c == ic, "ConvTranspose2d: channel mismatch");
        const int oh = out_dim(x.h, k, stride, pad);
        const int ow = out_dim(x.w, k, stride, pad);
        ConvGeom g{x.n, oh, ow, oc, k, stride, pad};
        require_shape(g.out_h() == x.h && g.out_w() == x.w, "ConvTranspose2d: geometry not invertible");
        Tensor cols = tensor::matmul(x.t, w);  // (n*ih*iw, oc*k*k)
        Tensor y = tensor::col2im(cols, g);
        return {y, x.n, oh, ow, oc};
    }

    void collect(std::vector<Tensor*>& out) { out.push_back(&w); }

    std::int64_t param_count() const { return static_cast<std::int64_t>(w.numel()); }
};

struct BatchNorm {
    Tensor gamma;  // (1, c)
    Tensor beta;   // (1, c)
    std::vector<Real> running_mean;
    std::vector<Real> running_var;
    Real momentum = 0.1;
    Real eps = 1e-5;

    static BatchNorm create(Rng& rng, int c) {
        BatchNorm bn;
        std::vector<Real> g(static_cast<std::size_t>(c));
        for (auto& v : g) v = 1.0 + rng.normal(0.0, 0.02);
        bn.gamma = Tensor::from_data(1, c, std::move(g), /*requires_grad=*/true);
        bn.beta = Tensor::zeros(1, c, /*requires_grad=*/true);
        bn.running_mean.assign(static_cast<std::size_t>(c), 0.0);
        bn.running_var.assign(static_cast<std::size_t>(c), 1.0);
        return bn;
    }

    // x: (rows, c); per-channel statistics over rows
    Tensor forward(const Tensor& x, bool training) {
        require_shape(x.cols() == gamma.cols(), "BatchNorm: channel mismatch");
        if (training) {
            const Real inv_r = 1.0 / static_cast<Real>(x.rows());
            Tensor mu = tensor::scale(tensor::sum_rows(x), inv_r);
            Tensor xc = tensor::sub(x, mu);
            Tensor var = tensor::scale(tensor::sum_rows(tensor::mul(xc, xc)), inv_r);
            for (int c = 0; c < x.cols(); ++c) {
                const auto i = static_cast<std::size_t>(c);
                running_mean[i] = (1.0 - momentum) * running_mean[i] + momentum * mu.value()[i];
                running_var[i] = (1.0 - momentum) * running_var[i] + momentum * var.value()[i];
            }
            Tensor inv_std = tensor::div(Tensor::scalar(1.0), tensor::sqrt_(tensor::add_scalar(var, eps)));
            return tensor::add(tensor::mul(tensor::mul(xc, inv_std), gamma), beta);
        }
        std::vector<Real> inv(running_var.size());
        for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / std::sqrt(running_var[i] + eps);
        Tensor mu = Tensor::from_data(1, x.cols(), running_mean);
        Tensor inv_std = Tensor::from_data(1, x.cols(), std::move(inv));
        return tensor::add(tensor::mul(tensor::mul(tensor::sub(x, mu), inv_std), gamma), beta);
    }

    void collect(std::vector<Tensor*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    std::int64_t param_count() const { return static_cast<std::int64_t>(gamma.numel() + beta.numel()); }
};

struct Dropout {
    Real p = 0.5;

    Tensor forward(const Tensor& x, Rng& rng, bool training) const {
        if (!training || p <= 0.0) return x;
        std::vector<Real> mask(x.numel());
        const Real keep = 1.0 - p;
        for (auto& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
        return tensor::mul(x, Tensor::from_data(x.rows(), x.cols(), std::move(mask)));
    }
};

// Decoupled weight decay Adam. step() skips nothing by itself; callers that
// want a no-op on all-zero gradients check before invoking.
class AdamW {
public:
    AdamW(Real lr, Real beta1, Real beta2, Real eps, Real weight_decay)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        require(params.size() == grads.size(), "AdamW: params/grads size mismatch");
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i]->numel(), 0.0);
                v_[i].assign(params[i]->numel(), 0.0);
            }
        }
        ++t_;
        const Real bc1 = 1.0 - std::pow(b1_, static_cast<Real>(t_));
        const Real bc2 = 1.0 - std::pow(b2_, static_cast<Real>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& data = params[i]->raw();
            const auto& g = grads[i].value();
            require(g.size() == data.size(), "AdamW: gradient shape mismatch");
            for (std::size_t j = 0; j < data.size(); ++j) {
                m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * g[j];
                v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * g[j] * g[j];
                const Real mhat = m_[i][j] / bc1;
                const Real vhat = v_[i][j] / bc2;
                data[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * data[j]);
            }
        }
    }

    int steps_taken() const { return t_; }

private:
    Real lr_, b1_, b2_, eps_, wd_;
    int t_ = 0;
    std::vector<std::vector<Real>> m_;
    std::vector<std::vector<Real>> v_;
};

inline Real grad_norm(const std::vector<tensor::Tensor>& grads) {
    Real acc = 0.0;
    for (const auto& g : grads)
        for (Real v : g.value()) acc += v * v;
    return std::sqrt(acc);
}

inline bool all_zero(const std::vector<tensor::Tensor>& grads) {
    for (const auto& g : grads)
        for (Real v : g.value())
            if (v != 0.0) return false;
    return true;
}

// Gaussian log-density of x under N(mean, sigma^2 I); x constant, mean in-graph.
inline Tensor gaussian_log_prob(const std::vector<Real>& x, const Tensor& mean, Real sigma) {
    require_shape(x.size() == mean.numel(), "gaussian_log_prob: dim mismatch");
    require(sigma > 0.0, "gaussian_log_prob: sigma must be positive");
    Tensor xt = Tensor::from_data(mean.rows(), mean.cols(), x);
    Tensor d = tensor::sub(xt, mean);
    Tensor quad = tensor::scale(tensor::sum_all(tensor::mul(d, d)), -0.5 / (sigma * sigma));
    const Real dim = static_cast<Real>(x.size());
    const Real log_norm = -0.5 * dim * std::log(2.0 * 3.14159265358979323846 * sigma * sigma);
    return tensor::add_scalar(quad, log_norm);
}

}  // namespace muse::nn
