#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "muse/common.hpp"
#include "muse/image.hpp"
#include "muse/nn.hpp"
#include "muse/random.hpp"
#include "muse/tensor.hpp"

// Noise schedules, the forward corruption process, and the stochastic DDIM
// reverse sampler with per-step log-probability logging. Samples are flat
// vectors in signal space ([-1, 1] pixels behind the identity codec, or a
// latent behind a real autoencoder adapter).
namespace muse::diffusion {

using tensor::Tensor;

constexpr Real kMinVariance = 1e-12;

struct NoiseSchedule {
    std::vector<Real> betas;       // betas[t-1] is beta_t, t = 1..T
    std::vector<Real> alpha_bars;  // alpha_bars[t], t = 0..T; alpha_bars[0] = 1

    // Final-transition convention for DDIM coefficients. true: the step into
    // t = 0 targets alpha_bar = 1 exactly (deterministic inversion identity
    // holds). false: it targets alpha_bar(1), the convention of production
    // schedulers, which keeps the final-step density non-degenerate for RL.
    bool snap_final_alpha = true;

    static NoiseSchedule from_betas(std::vector<Real> betas) {
        NoiseSchedule s;
        s.betas = std::move(betas);
        s.alpha_bars.resize(s.betas.size() + 1);
        s.alpha_bars[0] = 1.0;
        for (std::size_t t = 0; t < s.betas.size(); ++t)
            s.alpha_bars[t + 1] = s.alpha_bars[t] * (1.0 - s.betas[t]);
        s.validate();
        return s;
    }

    static NoiseSchedule linear(int T, Real beta_start = 1e-4, Real beta_end = 0.02) {
        require(T >= 1, "NoiseSchedule::linear: T must be >= 1");
        std::vector<Real> b(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t)
            b[static_cast<std::size_t>(t)] =
                T == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<Real>(t) / (T - 1);
        return from_betas(std::move(b));
    }

    static NoiseSchedule constant(int T, Real beta) {
        return from_betas(std::vector<Real>(static_cast<std::size_t>(T), beta));
    }

    int T() const { return static_cast<int>(betas.size()); }

    Real beta(int t) const {
        require(t >= 1 && t <= T(), "NoiseSchedule::beta: t out of range");
        return betas[static_cast<std::size_t>(t - 1)];
    }

    Real alpha_bar(int t) const {
        require(t >= 0 && t <= T(), "NoiseSchedule::alpha_bar: t out of range");
        return alpha_bars[static_cast<std::size_t>(t)];
    }

    // alpha_bar as seen by the reverse-step target (see snap_final_alpha).
    Real alpha_bar_prev(int t_prev) const {
        if (t_prev == 0 && !snap_final_alpha) return alpha_bar(1);
        return alpha_bar(t_prev);
    }

    void validate() const {
        require(!betas.empty(), "NoiseSchedule: empty");
        for (Real b : betas) require(b > 0.0 && b < 1.0, "NoiseSchedule: beta out of (0,1)");
        require(alpha_bars[0] == 1.0, "NoiseSchedule: alpha_bar(0) must be 1");
        for (std::size_t t = 1; t < alpha_bars.size(); ++t)
            require(alpha_bars[t] < alpha_bars[t - 1], "NoiseSchedule: alpha_bar must strictly decrease");
    }
};

// Closed-form forward marginal: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
struct ForwardSample {
    std::vector<Real> x_t;
    std::vector<Real> eps;
};

// t = 0 is the no-noise boundary and returns x0 unchanged.
inline ForwardSample forward_noise(const std::vector<Real>& x0, int t, const NoiseSchedule& schedule, Rng& rng) {
    require(t >= 0 && t <= schedule.T(), "forward_noise: t out of range");
    const Real abar = schedule.alpha_bar(t);
    const Real a = std::sqrt(abar);
    const Real b = std::sqrt(1.0 - abar);
    ForwardSample out;
    out.x_t.resize(x0.size());
    out.eps.resize(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const Real e = t == 0 ? 0.0 : rng.normal();
        out.eps[i] = e;
        out.x_t[i] = a * x0[i] + b * e;
    }
    return out;
}

// Context-conditioned noise predictor. Batched: x (S, D), t_norm (S, 1) in
// [0, 1], context (S, C); returns predicted noise (S, D).
class DenoisingPolicy {
public:
    virtual ~DenoisingPolicy() = default;
    virtual int sample_dim() const = 0;
    virtual int context_dim() const = 0;
    virtual Tensor predict_noise(const Tensor& x, const Tensor& t_norm, const Tensor& context) const = 0;
};

// DDIM update written as x_prev = c_xt * x_t + c_eps * eps_hat + sigma * z.
struct DdimCoeffs {
    Real c_xt = 0.0;
    Real c_eps = 0.0;
    Real sigma = 0.0;
};

inline DdimCoeffs ddim_coeffs(const NoiseSchedule& s, int t, int t_prev, Real eta) {
    require(t > t_prev && t_prev >= 0 && t <= s.T(), "ddim_coeffs: need T >= t > t_prev >= 0");
    require(eta >= 0.0 && eta <= 1.0, "ddim_coeffs: eta must lie in [0,1]");
    const Real a_t = s.alpha_bar(t);
    const Real a_prev = s.alpha_bar_prev(t_prev);
    DdimCoeffs c;
    Real sigma2 = 0.0;
    if (eta > 0.0) {
        const Real base = (1.0 - a_prev) / (1.0 - a_t) * (1.0 - a_t / a_prev);
        sigma2 = std::max(eta * eta * base, kMinVariance);
    }
    c.sigma = std::sqrt(sigma2);
    const Real dir = std::sqrt(std::max(1.0 - a_prev - sigma2, 0.0));
    c.c_xt = std::sqrt(a_prev) / std::sqrt(a_t);
    c.c_eps = dir - std::sqrt(a_prev) * std::sqrt(1.0 - a_t) / std::sqrt(a_t);
    return c;
}

struct TrajectoryStep {
    int t = 0;
    int t_prev = 0;
    std::vector<Real> x_t;
    std::vector<Real> x_prev;
    Real log_prob = 0.0;
};

struct Trajectory {
    std::string prompt;
    std::uint64_t seed = 0;
    Real eta = 1.0;
    std::vector<Real> context;
    std::vector<TrajectoryStep> steps;

    const std::vector<Real>& x0() const {
        require(!steps.empty(), "Trajectory: empty");
        return steps.back().x_prev;
    }

    void validate() const {
        require(!steps.empty(), "Trajectory: empty");
        for (std::size_t i = 0; i < steps.size(); ++i) {
            require(steps[i].t > steps[i].t_prev, "Trajectory: timesteps must decrease within a step");
            if (i > 0) require(steps[i].t == steps[i - 1].t_prev, "Trajectory: steps must chain");
            require(std::isfinite(steps[i].log_prob), "Trajectory: non-finite log_prob");
        }
        require(steps.back().t_prev == 0, "Trajectory: must terminate at t = 0");
    }
};

struct StepResult {
    std::vector<Real> x_prev;
    Real log_prob = 0.0;  // NaN when not tracked
};

namespace detail {

inline Tensor policy_mean(const DenoisingPolicy& policy, const std::vector<Real>& x_t, int t, int t_prev,
                          const std::vector<Real>& context, const NoiseSchedule& schedule, Real eta,
                          DdimCoeffs& coeffs_out) {
    coeffs_out = ddim_coeffs(schedule, t, t_prev, eta);
    const int D = static_cast<int>(x_t.size());
    Tensor xt = Tensor::from_data(1, D, x_t);
    Tensor tn = Tensor::scalar(static_cast<Real>(t) / static_cast<Real>(schedule.T()));
    Tensor ctx = context.empty() ? Tensor::zeros(1, std::max(1, policy.context_dim()))
                                 : Tensor::from_data(1, static_cast<int>(context.size()), context);
    Tensor eps_hat = policy.predict_noise(xt, tn, ctx);
    require_shape(eps_hat.rows() == 1 && eps_hat.cols() == D, "policy returned wrong sample shape");
    return tensor::add(tensor::scale(xt, coeffs_out.c_xt), tensor::scale(eps_hat, coeffs_out.c_eps));
}

}  // namespace detail

// One reverse step. With eta > 0 the update is stochastic and the Gaussian
// log-density of the realized x_prev is returned; requesting log-prob
// tracking at eta = 0 is a contract violation (no density exists).
inline StepResult reverse_step(const DenoisingPolicy& policy, const NoiseSchedule& schedule,
                               const std::vector<Real>& x_t, int t, int t_prev, const std::vector<Real>& context,
                               Real eta, Rng& rng, bool track_log_prob = true) {
    if (eta == 0.0 && track_log_prob)
        throw contract_violation("reverse_step: log-prob tracking requires eta > 0");
    tensor::NoGradGuard ng;
    DdimCoeffs c;
    Tensor mean = detail::policy_mean(policy, x_t, t, t_prev, context, schedule, eta, c);
    const int D = static_cast<int>(x_t.size());
    StepResult out;
    out.x_prev.resize(static_cast<std::size_t>(D));
    Real quad = 0.0;
    for (int i = 0; i < D; ++i) {
        const Real z = eta > 0.0 ? rng.normal() : 0.0;
        out.x_prev[static_cast<std::size_t>(i)] = mean.value()[static_cast<std::size_t>(i)] + c.sigma * z;
        quad += z * z;
    }
    if (track_log_prob) {
        out.log_prob = -0.5 * quad - 0.5 * D * std::log(2.0 * 3.14159265358979323846 * c.sigma * c.sigma);
    } else {
        out.log_prob = std::numeric_limits<Real>::quiet_NaN();
    }
    return out;
}

// Uniform subsampling of 1..T into n steps; ts(0) = T, ts(n) = 0.
inline std::vector<int> subsample_timesteps(int T, int n_steps) {
    require(n_steps >= 1 && n_steps <= T, "subsample_timesteps: need 1 <= n_steps <= T");
    std::vector<int> ts(static_cast<std::size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i)
        ts[static_cast<std::size_t>(i)] = static_cast<int>(static_cast<long long>(T) * (n_steps - i) / n_steps);
    return ts;
}

inline Trajectory sample_trajectory(const DenoisingPolicy& policy, const std::string& prompt,
                                    const std::vector<Real>& context, int n_steps, const NoiseSchedule& schedule,
                                    Real eta, std::uint64_t seed, bool track_log_prob = true) {
    const auto ts = subsample_timesteps(schedule.T(), n_steps);
    Trajectory traj;
    traj.prompt = prompt;
    traj.seed = seed;
    traj.eta = eta;
    traj.context = context;
    traj.steps.reserve(static_cast<std::size_t>(n_steps));

    Rng rng(derive_seed(seed, 0xd1fful));
    const int D = policy.sample_dim();
    std::vector<Real> x = rng.normal_vec(static_cast<std::size_t>(D));  // x_T ~ N(0, I)
    for (int i = 0; i < n_steps; ++i) {
        const int t = ts[static_cast<std::size_t>(i)];
        const int t_prev = ts[static_cast<std::size_t>(i) + 1];
        StepResult r = reverse_step(policy, schedule, x, t, t_prev, context, eta, rng, track_log_prob);
        TrajectoryStep step;
        step.t = t;
        step.t_prev = t_prev;
        step.x_t = x;
        step.x_prev = r.x_prev;
        step.log_prob = track_log_prob ? r.log_prob : 0.0;
        traj.steps.push_back(std::move(step));
        x = traj.steps.back().x_prev;
    }
    traj.validate();
    return traj;
}

// Log-density of a stored transition under the current parameters, as a graph
// tensor so the trainer can differentiate through it.
inline Tensor recompute_logprob_graph(const DenoisingPolicy& policy, const NoiseSchedule& schedule,
                                      const TrajectoryStep& step, const std::vector<Real>& context, Real eta) {
    require(!step.x_t.empty() && !step.x_prev.empty(), "recompute_logprob: step is missing stored states");
    require(eta > 0.0, "recompute_logprob: eta must be positive");
    DdimCoeffs c;
    Tensor mean = detail::policy_mean(policy, step.x_t, step.t, step.t_prev, context, schedule, eta, c);
    return nn::gaussian_log_prob(step.x_prev, mean, c.sigma);
}

inline Real recompute_logprob(const DenoisingPolicy& policy, const NoiseSchedule& schedule,
                              const TrajectoryStep& step, const std::vector<Real>& context, Real eta) {
    tensor::NoGradGuard ng;
    return recompute_logprob_graph(policy, schedule, step, context, eta).item();
}

// ---- latent codec boundary ----

class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    virtual int latent_dim() const = 0;
    virtual std::vector<Real> encode(const Image& image) const = 0;
    virtual Image decode(const std::vector<Real>& latent) const = 0;
    virtual bool frozen() const { return true; }
};

// Pixel-space codec for desk-scale runs: [0,1] HWC image <-> flat [-1,1]
// signal, no learned parameters.
class IdentityCodec : public LatentCodec {
public:
    IdentityCodec(int h, int w, int c) : h_(h), w_(w), c_(c) {}

    int latent_dim() const override { return h_ * w_ * c_; }

    std::vector<Real> encode(const Image& image) const override {
        require_image(image, "IdentityCodec::encode");
        require_shape(image.h == h_ && image.w == w_ && image.c == c_, "IdentityCodec::encode: dims mismatch");
        std::vector<Real> out(image.px.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * image.px[i] - 1.0;
        return out;
    }

    Image decode(const std::vector<Real>& latent) const override {
        require_shape(static_cast<int>(latent.size()) == latent_dim(), "IdentityCodec::decode: dims mismatch");
        Image img(h_, w_, c_);
        for (std::size_t i = 0; i < latent.size(); ++i) img.px[i] = std::clamp(0.5 * (latent[i] + 1.0), 0.0, 1.0);
        return img;
    }

private:
    int h_, w_, c_;
};

}  // namespace muse::diffusion
