#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "muse/diffusion.hpp"

using namespace muse;
using diffusion::NoiseSchedule;
using tensor::Tensor;

namespace {

// eps_hat = x M^T; linear in the state, which makes the two-step joint
// density a plain multivariate Gaussian we can evaluate directly.
struct LinearPolicy : diffusion::DenoisingPolicy {
    Tensor m;  // (D, D)
    int sample_dim() const override { return m.rows(); }
    int context_dim() const override { return 1; }
    Tensor predict_noise(const Tensor& x, const Tensor&, const Tensor&) const override {
        return tensor::matmul(x, tensor::transpose(m));
    }
};

struct ConstantPolicy : diffusion::DenoisingPolicy {
    std::vector<Real> eps;
    int sample_dim() const override { return static_cast<int>(eps.size()); }
    int context_dim() const override { return 1; }
    Tensor predict_noise(const Tensor& x, const Tensor&, const Tensor&) const override {
        Tensor row = Tensor::from_data(1, static_cast<int>(eps.size()), eps);
        return tensor::mul(tensor::add_scalar(tensor::scale(x, 0.0), 1.0), row);  // broadcast to x's rows
    }
};

}  // namespace

TEST_CASE("noise schedule invariants", "[diffusion]") {
    auto s = NoiseSchedule::linear(1000);
    REQUIRE(s.T() == 1000);
    REQUIRE(s.alpha_bar(0) == 1.0);
    for (int t = 1; t <= s.T(); ++t) REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));

    auto c = NoiseSchedule::constant(2, 0.1);
    REQUIRE_THAT(c.alpha_bar(2), Catch::Matchers::WithinAbs(0.81, 1e-12));

    REQUIRE_THROWS_AS(NoiseSchedule::constant(3, 1.5), error);
}

TEST_CASE("forward marginal matches closed form (Monte Carlo)", "[diffusion]") {
    struct Case {
        NoiseSchedule s;
        int t;
    };
    const std::vector<Case> cases = {
        {NoiseSchedule::linear(1000), 500},
        {NoiseSchedule::constant(2, 0.1), 2},
        {NoiseSchedule::linear(50, 0.05, 0.3), 25},
    };
    const int n = 10000;
    const std::vector<Real> x0 = {0.9, -0.4, 0.0, 0.25};

    for (const auto& cs : cases) {
        Rng rng(1234);
        const Real abar = cs.s.alpha_bar(cs.t);
        std::vector<Real> mean(x0.size(), 0.0), m2(x0.size(), 0.0);
        for (int i = 0; i < n; ++i) {
            auto f = diffusion::forward_noise(x0, cs.t, cs.s, rng);
            for (std::size_t d = 0; d < x0.size(); ++d) {
                const Real delta = f.x_t[d] - mean[d];
                mean[d] += delta / static_cast<Real>(i + 1);
                m2[d] += delta * (f.x_t[d] - mean[d]);
            }
        }
        const Real sd = std::sqrt(1.0 - abar);
        for (std::size_t d = 0; d < x0.size(); ++d) {
            const Real expect_mean = std::sqrt(abar) * x0[d];
            const Real mean_band = 3.0 * sd / std::sqrt(static_cast<Real>(n));
            REQUIRE_THAT(mean[d], Catch::Matchers::WithinAbs(expect_mean, mean_band));

            const Real var = m2[d] / static_cast<Real>(n);
            const Real var_band = 3.0 * std::sqrt(2.0 / (n - 1.0)) * (1.0 - abar);
            REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0 - abar, var_band));
        }
    }
}

TEST_CASE("forward boundary and range checks", "[diffusion]") {
    auto s = NoiseSchedule::linear(10);
    Rng rng(1);
    const std::vector<Real> x0 = {0.5, -0.5};
    auto f = diffusion::forward_noise(x0, 0, s, rng);
    REQUIRE(f.x_t == x0);  // alpha_bar(0) = 1: no noise
    REQUIRE_THROWS_AS(diffusion::forward_noise(x0, 11, s, rng), error);
    REQUIRE_THROWS_AS(diffusion::forward_noise(x0, -1, s, rng), error);
}

TEST_CASE("eta=0 single-step DDIM inversion recovers x0", "[diffusion]") {
    auto s = NoiseSchedule::linear(40, 0.01, 0.08);
    Rng rng(7);
    const std::vector<Real> x0 = {0.3, -0.8, 0.55, 0.0, 0.9};
    auto f = diffusion::forward_noise(x0, s.T(), s, rng);

    ConstantPolicy policy;
    policy.eps = f.eps;  // the true forward noise
    Rng step_rng(8);
    auto r = diffusion::reverse_step(policy, s, f.x_t, s.T(), 0, {}, /*eta=*/0.0, step_rng,
                                     /*track_log_prob=*/false);
    for (std::size_t i = 0; i < x0.size(); ++i)
        REQUIRE_THAT(r.x_prev[i], Catch::Matchers::WithinAbs(x0[i], 1e-6));
}

TEST_CASE("eta=0 with log-prob tracking is a contract violation", "[diffusion]") {
    auto s = NoiseSchedule::linear(10);
    ConstantPolicy policy;
    policy.eps = {0.0, 0.0};
    Rng rng(3);
    std::vector<Real> x = {1.0, 1.0};
    REQUIRE_THROWS_AS(diffusion::reverse_step(policy, s, x, 10, 5, {}, 0.0, rng, true),
                      contract_violation);
}

TEST_CASE("log-prob of the mean action equals the Gaussian normalizer", "[diffusion]") {
    auto s = NoiseSchedule::linear(20, 0.02, 0.1);
    ConstantPolicy policy;
    policy.eps = {0.4, -0.2, 0.1};
    const std::vector<Real> x_t = {0.5, 0.25, -0.75};
    const int t = 14, t_prev = 7;
    const int D = 3;

    auto mean_for = [&](Real eta) {
        auto c = diffusion::ddim_coeffs(s, t, t_prev, eta);
        std::vector<Real> m(static_cast<std::size_t>(D));
        for (int i = 0; i < D; ++i)
            m[static_cast<std::size_t>(i)] =
                c.c_xt * x_t[static_cast<std::size_t>(i)] + c.c_eps * policy.eps[static_cast<std::size_t>(i)];
        return m;
    };

    diffusion::TrajectoryStep step;
    step.t = t;
    step.t_prev = t_prev;
    step.x_t = x_t;

    const Real eta1 = 0.5;
    step.x_prev = mean_for(eta1);
    const Real lp1 = diffusion::recompute_logprob(policy, s, step, {}, eta1);
    const Real sigma1 = diffusion::ddim_coeffs(s, t, t_prev, eta1).sigma;
    REQUIRE_THAT(lp1, Catch::Matchers::WithinAbs(-0.5 * D * std::log(2.0 * M_PI * sigma1 * sigma1), 1e-10));

    // doubling sigma (eta 0.5 -> 1.0) drops the mean-action log-prob by D ln 2
    const Real eta2 = 1.0;
    step.x_prev = mean_for(eta2);
    const Real lp2 = diffusion::recompute_logprob(policy, s, step, {}, eta2);
    REQUIRE_THAT(diffusion::ddim_coeffs(s, t, t_prev, eta2).sigma, Catch::Matchers::WithinRel(2.0 * sigma1, 1e-12));
    REQUIRE_THAT(lp1 - lp2, Catch::Matchers::WithinAbs(D * std::log(2.0), 1e-10));
}

TEST_CASE("seeded trajectories are bit-identical", "[diffusion]") {
    auto s = NoiseSchedule::linear(60, 0.01, 0.12);
    Rng wrng(11);
    LinearPolicy policy;
    policy.m = Tensor::randn(wrng, 6, 6, 0.2);

    auto t1 = diffusion::sample_trajectory(policy, "painting", {}, 12, s, 1.0, 99);
    auto t2 = diffusion::sample_trajectory(policy, "painting", {}, 12, s, 1.0, 99);
    REQUIRE(t1.steps.size() == 12);
    REQUIRE(t1.x0() == t2.x0());  // bit-exact
    for (std::size_t i = 0; i < t1.steps.size(); ++i) {
        REQUIRE(t1.steps[i].x_prev == t2.steps[i].x_prev);
        REQUIRE(t1.steps[i].log_prob == t2.steps[i].log_prob);
    }

    auto t3 = diffusion::sample_trajectory(policy, "painting", {}, 12, s, 1.0, 100);
    REQUIRE(t1.x0() != t3.x0());
}

TEST_CASE("trajectory length equals configured inference steps", "[diffusion]") {
    auto s = NoiseSchedule::linear(1000);
    Rng wrng(13);
    LinearPolicy policy;
    policy.m = Tensor::randn(wrng, 4, 4, 0.1);
    REQUIRE(diffusion::sample_trajectory(policy, "art", {}, 30, s, 1.0, 5).steps.size() == 30);
    REQUIRE(diffusion::sample_trajectory(policy, "art", {}, 10, s, 1.0, 5).steps.size() == 10);

    const auto ts = diffusion::subsample_timesteps(1000, 30);
    REQUIRE(ts.front() == 1000);
    REQUIRE(ts.back() == 0);
    for (std::size_t i = 1; i < ts.size(); ++i) REQUIRE(ts[i] < ts[i - 1]);
}

TEST_CASE("two-step log-prob sum matches the joint Gaussian density", "[diffusion]") {
    const int D = 3;
    auto s = NoiseSchedule::linear(10, 0.05, 0.2);
    Rng wrng(17);
    LinearPolicy policy;
    policy.m = Tensor::randn(wrng, D, D, 0.3);

    // two-step chain at mid-schedule timesteps: 10 -> 6 -> 3
    const Real eta = 0.8;
    const int ta = 10, tb = 6, tc = 3;
    Rng chain_rng(41);
    std::vector<Real> xa = chain_rng.normal_vec(D);
    auto r1 = diffusion::reverse_step(policy, s, xa, ta, tb, {}, eta, chain_rng);
    auto r2 = diffusion::reverse_step(policy, s, r1.x_prev, tb, tc, {}, eta, chain_rng);
    const Real lp_sum = r1.log_prob + r2.log_prob;

    // Oracle: conditional chain xa -> xb -> xc with linear means
    // mean_t(x) = (c_xt I + c_eps M) x, so (xb, xc) | xa is jointly Gaussian.
    using Mat = Eigen::MatrixXd;
    using Vec = Eigen::VectorXd;
    Mat M(D, D);
    for (int r = 0; r < D; ++r)
        for (int c = 0; c < D; ++c) M(r, c) = policy.m.at(r, c);

    const auto c1 = diffusion::ddim_coeffs(s, ta, tb, eta);
    const auto c0 = diffusion::ddim_coeffs(s, tb, tc, eta);
    Mat A = c1.c_xt * Mat::Identity(D, D) + c1.c_eps * M;
    Mat B = c0.c_xt * Mat::Identity(D, D) + c0.c_eps * M;

    Vec x2(D), x1(D), x0v(D);
    for (int i = 0; i < D; ++i) {
        x2(i) = xa[static_cast<std::size_t>(i)];
        x1(i) = r1.x_prev[static_cast<std::size_t>(i)];
        x0v(i) = r2.x_prev[static_cast<std::size_t>(i)];
    }

    Vec mu(2 * D);
    mu.head(D) = A * x2;
    mu.tail(D) = B * A * x2;
    Mat cov(2 * D, 2 * D);
    const Real v1 = c1.sigma * c1.sigma;
    const Real v0 = c0.sigma * c0.sigma;
    cov.topLeftCorner(D, D) = v1 * Mat::Identity(D, D);
    cov.topRightCorner(D, D) = v1 * B.transpose();
    cov.bottomLeftCorner(D, D) = v1 * B;
    cov.bottomRightCorner(D, D) = v0 * Mat::Identity(D, D) + v1 * B * B.transpose();

    Vec z(2 * D);
    z.head(D) = x1;
    z.tail(D) = x0v;
    Eigen::LLT<Mat> llt(cov);
    REQUIRE(llt.info() == Eigen::Success);
    const Vec diff = z - mu;
    const Vec sol = llt.solve(diff);
    Real logdet = 0.0;
    for (int i = 0; i < 2 * D; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    const Real joint = -0.5 * diff.dot(sol) - 0.5 * logdet - 0.5 * 2.0 * D * std::log(2.0 * M_PI);

    REQUIRE_THAT(lp_sum, Catch::Matchers::WithinAbs(joint, 1e-6));
}

TEST_CASE("recompute_logprob matches stored values and reacts to parameters", "[diffusion]") {
    const int D = 4;
    auto s = NoiseSchedule::linear(30, 0.02, 0.1);
    Rng wrng(19);
    LinearPolicy policy;
    policy.m = Tensor::randn(wrng, D, D, 0.25);

    auto traj = diffusion::sample_trajectory(policy, "p", {}, 6, s, 1.0, 77);
    for (const auto& step : traj.steps) {
        const Real lp = diffusion::recompute_logprob(policy, s, step, traj.context, traj.eta);
        REQUIRE_THAT(lp, Catch::Matchers::WithinAbs(step.log_prob, 1e-6));
    }

    // perturb one weight: log-prob changes, importance ratio stays finite
    LinearPolicy perturbed;
    std::vector<Real> pm = policy.m.value();
    pm[0] += 0.05;
    perturbed.m = Tensor::from_data(D, D, pm);
    const auto& step = traj.steps[2];
    const Real lp_new = diffusion::recompute_logprob(perturbed, s, step, traj.context, traj.eta);
    REQUIRE(lp_new != step.log_prob);
    REQUIRE(std::isfinite(std::exp(lp_new - step.log_prob)));

    diffusion::TrajectoryStep empty;
    REQUIRE_THROWS_AS(diffusion::recompute_logprob(policy, s, empty, {}, 1.0), error);
}

TEST_CASE("identity codec round-trips pixel images", "[diffusion]") {
    diffusion::IdentityCodec codec(4, 5, 3);
    Rng rng(23);
    Image img(4, 5, 3);
    for (auto& p : img.px) p = rng.uniform();
    const auto z = codec.encode(img);
    REQUIRE(static_cast<int>(z.size()) == codec.latent_dim());
    for (Real v : z) {
        REQUIRE(v >= -1.0);
        REQUIRE(v <= 1.0);
    }
    const Image back = codec.decode(z);
    for (std::size_t i = 0; i < img.px.size(); ++i)
        REQUIRE_THAT(back.px[i], Catch::Matchers::WithinAbs(img.px[i], 1e-12));
}
