#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "muse/can.hpp"
#include "muse/ddpo.hpp"
#include "muse/diffusion.hpp"
#include "muse/image.hpp"
#include "muse/nn.hpp"
#include "muse/random.hpp"
#include "muse/style.hpp"

// Desk-scale fixtures: synthetic images, a frozen two-class pixel-statistic
// classifier, and supervised denoiser pretraining. Shared by the test suites
// and the CLI's toy mode.
namespace muse::toy {

// Smooth random image around a target brightness level.
inline Image toy_image(Rng& rng, int dim, Real level, Real amp = 0.18) {
    Image img(dim, dim, 1);
    const Real fy = 1.0 + rng.uniform() * 2.0;
    const Real fx = 1.0 + rng.uniform() * 2.0;
    const Real py = rng.uniform() * 6.283185307;
    const Real px = rng.uniform() * 6.283185307;
    for (int y = 0; y < dim; ++y)
        for (int x = 0; x < dim; ++x) {
            const Real v = level + amp * std::sin(fy * y / dim * 6.283185307 + py) *
                                       std::cos(fx * x / dim * 6.283185307 + px);
            img.at(y, x, 0) = std::clamp(v, 0.0, 1.0);
        }
    return img;
}

// Dataset in signal space ([-1, 1] flattened) for denoiser pretraining.
inline std::vector<std::vector<Real>> toy_signal_dataset(Rng& rng, int n, int dim, Real level) {
    diffusion::IdentityCodec codec(dim, dim, 1);
    std::vector<std::vector<Real>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(codec.encode(toy_image(rng, dim, level)));
    return out;
}

// Frozen two-class classifier on mean brightness: logits are
// +-gain * (mean(x) - threshold), so the output is uniform exactly at the
// threshold and saturates away from it.
class PixelMeanClassifier : public style::StyleClassifier {
public:
    PixelMeanClassifier(Real threshold, Real gain) : threshold_(threshold), gain_(gain) {}

    style::StyleDistribution classify(const Image& image) const override {
        require_image(image, "PixelMeanClassifier");
        Real mean = 0.0;
        for (Real p : image.px) mean += p;
        mean /= static_cast<Real>(image.px.size());
        const Real z = gain_ * (mean - threshold_);
        return {style::softmax({z, -z}), {"bright", "dark"}};
    }

    int n_classes() const override { return 2; }

private:
    Real threshold_;
    Real gain_;
};

// Supervised denoising pretraining on the closed-form forward marginal.
// Returns (mse_before, mse_after), both measured on the same held-out
// (x0, t, eps) draws.
inline std::pair<Real, Real> pretrain_denoiser(ddpo::MlpPolicy& policy, const diffusion::NoiseSchedule& schedule,
                                               const std::vector<std::vector<Real>>& signals, int steps,
                                               int batch, Real lr, Rng& rng) {
    require(!signals.empty(), "pretrain_denoiser: empty dataset");
    const int D = policy.sample_dim();
    auto params = policy.frozen_params();  // pretraining adjusts the base net; adapters come later
    nn::AdamW opt(lr, 0.9, 0.99, 1e-8, 0.0);

    auto make_batch = [&](Rng& r, int n, tensor::Tensor& x_t, tensor::Tensor& t_norm, tensor::Tensor& ctx,
                          tensor::Tensor& eps) {
        std::vector<Real> xs(static_cast<std::size_t>(n) * D), es(static_cast<std::size_t>(n) * D),
            ts(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const auto& x0 = signals[r.index(signals.size())];
            const int t = 1 + static_cast<int>(r.index(static_cast<std::uint64_t>(schedule.T())));
            auto f = diffusion::forward_noise(x0, t, schedule, r);
            std::copy(f.x_t.begin(), f.x_t.end(), xs.begin() + static_cast<std::ptrdiff_t>(i) * D);
            std::copy(f.eps.begin(), f.eps.end(), es.begin() + static_cast<std::ptrdiff_t>(i) * D);
            ts[static_cast<std::size_t>(i)] = static_cast<Real>(t) / schedule.T();
        }
        x_t = tensor::Tensor::from_data(n, D, std::move(xs));
        t_norm = tensor::Tensor::from_data(n, 1, std::move(ts));
        ctx = tensor::Tensor::zeros(n, policy.context_dim());
        eps = tensor::Tensor::from_data(n, D, std::move(es));
    };

    auto eval_mse = [&]() {
        tensor::NoGradGuard ng;
        Rng eval_rng(derive_seed(0xe7a1u, 0));
        tensor::Tensor x_t, t_norm, ctx, eps;
        make_batch(eval_rng, 256, x_t, t_norm, ctx, eps);
        tensor::Tensor d = tensor::sub(policy.predict_noise(x_t, t_norm, ctx), eps);
        return tensor::mean_all(tensor::mul(d, d)).item();
    };

    const Real before = eval_mse();
    for (int s = 0; s < steps; ++s) {
        tensor::Tensor x_t, t_norm, ctx, eps;
        make_batch(rng, batch, x_t, t_norm, ctx, eps);
        tensor::Tensor d = tensor::sub(policy.predict_noise(x_t, t_norm, ctx), eps);
        tensor::Tensor loss = tensor::mean_all(tensor::mul(d, d));
        std::vector<tensor::Tensor> handles;
        for (auto* p : params) handles.push_back(*p);
        auto grads = tensor::grad(loss, handles);
        opt.step(params, grads);
    }
    return {before, eval_mse()};
}

// Tuned desk-scale DDPO setup: policy, schedule, reward stack and trainer
// configuration that demonstrably move the ambiguity objective within a few
// seconds of CPU time.
struct ToyDdpoSetup {
    std::shared_ptr<ddpo::MlpPolicy> policy;
    diffusion::NoiseSchedule schedule;
    ddpo::RewardStack stack;
    ddpo::TrainerConfig config;
    std::shared_ptr<diffusion::IdentityCodec> codec;
    std::shared_ptr<backends::MockSuite> context_backend;
    Real pretrain_mse_before = 0.0;
    Real pretrain_mse_after = 0.0;

    ddpo::Trainer make_trainer() const {
        auto mock = context_backend;
        return ddpo::Trainer(policy, config, stack, codec, schedule,
                             [mock](const std::string& p) { return mock->embed_text(p).values; });
    }
};

inline ToyDdpoSetup make_toy_ddpo(std::uint64_t init_seed = 100, int epochs = 25) {
    ToyDdpoSetup s;
    Rng rng(init_seed);
    const int dim_px = 8, ctx = 8, hidden = 64;

    s.schedule = diffusion::NoiseSchedule::linear(50, 0.05, 0.3);
    s.schedule.snap_final_alpha = false;  // keep the final-step density non-degenerate

    auto signals = toy_signal_dataset(rng, 256, dim_px, 0.75);
    s.policy = std::make_shared<ddpo::MlpPolicy>(ddpo::MlpPolicy::create(rng, dim_px * dim_px, ctx, hidden));
    auto mse = pretrain_denoiser(*s.policy, s.schedule, signals, 600, 32, 0.01, rng);
    s.pretrain_mse_before = mse.first;
    s.pretrain_mse_after = mse.second;
    s.policy->attach_adapters(rng, 4, 4.0);

    s.stack.config = {1.0, 0.0, reward::ClassifierKind::zero_shot};
    s.stack.classifier = std::make_shared<PixelMeanClassifier>(0.25, 6.0);
    s.stack.similarity = std::make_shared<backends::MockSuite>(0, ctx);

    s.config.epochs = epochs;
    s.config.effective_batch = 16;
    s.config.batches_per_epoch = 16;
    s.config.inference_steps = 12;
    s.config.adapter_rank = 4;
    s.config.adapter_alpha = 4.0;
    s.config.lr = 0.008;
    s.config.clip_range = 0.05;
    s.config.max_grad_norm = 1.0;
    s.config.seed = 1000;

    s.codec = std::make_shared<diffusion::IdentityCodec>(dim_px, dim_px, 1);
    s.context_backend = std::make_shared<backends::MockSuite>(1, ctx);
    return s;
}

// Two synthetic texture styles for the CAN/data fixtures: horizontal versus
// vertical stripes with additive noise.
inline Image toy_styled_image(Rng& rng, int dim, int style_index) {
    Image img(dim, dim, 3);
    for (int y = 0; y < dim; ++y)
        for (int x = 0; x < dim; ++x) {
            const int band = style_index == 0 ? y : x;
            const Real base = (band / 2) % 2 == 0 ? 0.85 : 0.2;
            for (int c = 0; c < 3; ++c) {
                const Real noise = 0.08 * rng.normal();
                img.at(y, x, c) = std::clamp(base + 0.1 * c / 3.0 + noise, 0.0, 1.0);
            }
        }
    return img;
}

inline can::LabeledImages toy_styled_dataset(Rng& rng, int n, int dim) {
    can::LabeledImages out;
    out.n_styles = 2;
    for (int i = 0; i < n; ++i) {
        out.images.push_back(toy_styled_image(rng, dim, i % 2));
        out.labels.push_back(i % 2);
    }
    return out;
}

// Nudges the generator onto one style via a short reconstruction fit, so the
// ambiguity pressure has a confident starting point to pull away from (the
// fine-tuning setting: start from a model that already paints one style).
inline void warm_start_generator(can::Generator& g, const std::vector<Image>& targets, int steps, int batch, Real lr,
                                 Rng& rng) {
    require(!targets.empty(), "warm_start_generator: no targets");
    nn::AdamW opt(lr, 0.9, 0.99, 1e-8, 0.0);
    auto params = g.params();
    const int dim = g.spec().image_dim;
    for (int s = 0; s < steps; ++s) {
        tensor::Tensor z = tensor::Tensor::randn(rng, batch, g.spec().noise_dim);
        std::vector<Real> tgt(static_cast<std::size_t>(batch) * dim * dim * 3);
        for (int i = 0; i < batch; ++i) {
            const Image& img = targets[rng.index(targets.size())];
            for (std::size_t p = 0; p < img.px.size(); ++p)
                tgt[static_cast<std::size_t>(i) * img.px.size() + p] = 2.0 * img.px[p] - 1.0;
        }
        auto out = g.forward(z, /*training=*/true);
        tensor::Tensor d = tensor::sub(out.t, tensor::Tensor::from_data(batch * dim * dim, 3, std::move(tgt)));
        tensor::Tensor loss = tensor::mean_all(tensor::mul(d, d));
        std::vector<tensor::Tensor> handles;
        for (auto* p : params) handles.push_back(*p);
        opt.step(params, tensor::grad(loss, handles));
    }
}

// Tuned desk-scale CAN setup used by the toy training gates: two stripe
// styles at 16x16, a warm-started generator and a short discriminator-only
// warmup before alternation.
struct ToyCanSetup {
    can::LabeledImages train;
    can::LabeledImages held_out;
    std::unique_ptr<can::CanTrainer> trainer;
    int warmup_steps = 50;
};

inline ToyCanSetup make_toy_can(std::uint64_t seed = 2024) {
    ToyCanSetup s;
    Rng drng(77);
    s.train = toy_styled_dataset(drng, 128, 16);
    s.held_out = toy_styled_dataset(drng, 64, 16);

    can::CanTrainConfig cfg;
    cfg.batch = 16;
    cfg.seed = seed;
    cfg.d_warmup_steps = s.warmup_steps;
    s.trainer = std::make_unique<can::CanTrainer>(can::GeneratorSpec::toy(16, 64),
                                                  can::DiscriminatorSpec::toy(16, 2, 16, 1, 1, 64, 32), cfg);

    std::vector<Image> style0;
    for (std::size_t i = 0; i < s.train.images.size(); ++i)
        if (s.train.labels[i] == 0) style0.push_back(s.train.images[i]);
    Rng wrng(derive_seed(seed, 99));
    warm_start_generator(s.trainer->generator(), style0, 150, 16, 0.01, wrng);
    return s;
}

// Least-squares slope of a moving-average-smoothed series; the trend
// statistic used on logged training curves.
inline Real smoothed_slope(const std::vector<Real>& series, int window) {
    require(static_cast<int>(series.size()) > window, "smoothed_slope: series too short");
    std::vector<Real> smooth;
    for (std::size_t i = 0; i + static_cast<std::size_t>(window) <= series.size(); ++i) {
        Real m = 0.0;
        for (int j = 0; j < window; ++j) m += series[i + static_cast<std::size_t>(j)];
        smooth.push_back(m / window);
    }
    Real sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < smooth.size(); ++i) {
        const Real x = static_cast<Real>(i);
        sx += x;
        sy += smooth[i];
        sxx += x * x;
        sxy += x * smooth[i];
    }
    const Real n = static_cast<Real>(smooth.size());
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace muse::toy
