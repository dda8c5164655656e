#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "muse/archive.hpp"
#include "muse/common.hpp"
#include "muse/image.hpp"
#include "muse/nn.hpp"
#include "muse/random.hpp"
#include "muse/style.hpp"
#include "muse/tensor.hpp"

// Creative-adversarial-network baseline: DCGAN-style generator/discriminator
// builders with declared layer plans, the four losses, the optional gradient
// penalty and the alternating training loop plus the 16-run ablation grid.
namespace muse::can {

using nn::FeatureMap;
using tensor::Tensor;

constexpr Real kLeakySlope = 0.2;
constexpr Real kEpsProb = 1e-12;

// ---- specs ----

struct GeneratorSpec {
    int noise_dim = 100;
    int image_dim = 512;
    int base_channels = 2048;  // channels of the 4x4 root block

    // canonical dims only; the grid trains at 256 and 512
    static GeneratorSpec canonical(int image_dim) {
        if (image_dim != 256 && image_dim != 512)
            throw error("GeneratorSpec: unsupported image_dim " + std::to_string(image_dim));
        GeneratorSpec s;
        s.image_dim = image_dim;
        return s;
    }

    static GeneratorSpec toy(int image_dim, int base_channels, int noise_dim = 100) {
        GeneratorSpec s;
        require(image_dim >= 8 && (image_dim & (image_dim - 1)) == 0,
                "GeneratorSpec::toy: image_dim must be a power of two >= 8");
        s.image_dim = image_dim;
        s.base_channels = base_channels;
        s.noise_dim = noise_dim;
        return s;
    }

    // 4x4 root, doubling stack up to image_dim/2, final transpose conv to RGB
    int n_doubling() const {
        int n = 0;
        for (int d = 4; d < image_dim / 2; d *= 2) ++n;
        return n;
    }
};

struct DiscriminatorSpec {
    int image_dim = 512;
    int n_styles = 27;
    int first_channels = 32;
    int n_doubling = 5;
    int n_constant = 2;
    int style_hidden1 = 1024;
    int style_hidden2 = 512;
    Real dropout = 0.5;

    static DiscriminatorSpec canonical(int image_dim, int n_styles) {
        if (image_dim != 256 && image_dim != 512)
            throw error("DiscriminatorSpec: unsupported image_dim " + std::to_string(image_dim));
        require(n_styles >= 2, "DiscriminatorSpec: n_styles must be >= 2");
        DiscriminatorSpec s;
        s.image_dim = image_dim;
        s.n_styles = n_styles;
        return s;
    }

    static DiscriminatorSpec toy(int image_dim, int n_styles, int first_channels = 16, int n_doubling = 1,
                                 int n_constant = 1, int style_hidden1 = 64, int style_hidden2 = 32) {
        require(n_styles >= 2, "DiscriminatorSpec: n_styles must be >= 2");
        DiscriminatorSpec s;
        s.image_dim = image_dim;
        s.n_styles = n_styles;
        s.first_channels = first_channels;
        s.n_doubling = n_doubling;
        s.n_constant = n_constant;
        s.style_hidden1 = style_hidden1;
        s.style_hidden2 = style_hidden2;
        const int halvings = 1 + n_doubling + n_constant;
        require(image_dim >> halvings >= 1, "DiscriminatorSpec::toy: too many halvings for image_dim");
        return s;
    }

    int total_halvings() const { return 1 + n_doubling + n_constant; }
    int final_spatial() const { return image_dim >> total_halvings(); }
    int final_channels() const { return first_channels << n_doubling; }
    int flatten_dim() const { return final_spatial() * final_spatial() * final_channels(); }
};

// ---- layer plans (shape and parameter accounting without materialization) ----

struct LayerPlan {
    std::string kind;
    int in_ch = 0, out_ch = 0;
    int out_h = 0, out_w = 0;
    std::int64_t params = 0;
};

struct NetworkPlan {
    std::vector<LayerPlan> layers;

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& l : layers) n += l.params;
        return n;
    }

    // (h, w, c) after each spatial layer, the appendix-style shape trace
    std::vector<std::array<int, 3>> shape_trace() const {
        std::vector<std::array<int, 3>> out;
        for (const auto& l : layers)
            if (l.kind == "conv" || l.kind == "conv_transpose") out.push_back({l.out_h, l.out_w, l.out_ch});
        return out;
    }
};

// Transpose convs carry no bias; batch norm (affine) follows every block
// except the final RGB layer. This convention reproduces the published
// generator parameter count exactly.
inline NetworkPlan plan_generator(const GeneratorSpec& spec) {
    NetworkPlan plan;
    auto convt = [&](int ic, int oc, int h) {
        plan.layers.push_back({"conv_transpose", ic, oc, h, h, static_cast<std::int64_t>(ic) * oc * 16});
    };
    auto bn = [&](int c) {
        auto& prev = plan.layers.back();
        plan.layers.push_back({"batchnorm", c, c, prev.out_h, prev.out_w, 2ll * c});
    };
    int ch = spec.base_channels;
    int h = 4;
    convt(spec.noise_dim, ch, h);  // k4 s1 to the 4x4 root
    bn(ch);
    for (int i = 0; i < spec.n_doubling(); ++i) {
        h *= 2;
        convt(ch, ch / 2, h);
        ch /= 2;
        bn(ch);
    }
    convt(ch, 3, spec.image_dim);  // final k4 s2 to RGB, tanh
    return plan;
}

// First conv keeps its bias (no batch norm on it); all other convs are
// bias-free with affine batch norm; linear heads carry biases.
inline NetworkPlan plan_discriminator(const DiscriminatorSpec& spec) {
    NetworkPlan plan;
    int h = spec.image_dim / 2;
    int ch = spec.first_channels;
    plan.layers.push_back({"conv", 3, ch, h, h, 3ll * ch * 16 + ch});
    for (int i = 0; i < spec.n_doubling; ++i) {
        h /= 2;
        plan.layers.push_back({"conv", ch, ch * 2, h, h, static_cast<std::int64_t>(ch) * ch * 2 * 16});
        ch *= 2;
        plan.layers.push_back({"batchnorm", ch, ch, h, h, 2ll * ch});
    }
    for (int i = 0; i < spec.n_constant; ++i) {
        h /= 2;
        plan.layers.push_back({"conv", ch, ch, h, h, static_cast<std::int64_t>(ch) * ch * 16});
        plan.layers.push_back({"batchnorm", ch, ch, h, h, 2ll * ch});
    }
    const int flat = h * h * ch;
    require(flat == spec.flatten_dim(), "plan_discriminator: flatten accounting mismatch");
    plan.layers.push_back({"linear_binary", flat, 1, 0, 0, static_cast<std::int64_t>(flat) + 1});
    plan.layers.push_back(
        {"linear_style", flat, spec.style_hidden1, 0, 0, static_cast<std::int64_t>(flat) * spec.style_hidden1 + spec.style_hidden1});
    plan.layers.push_back({"linear_style", spec.style_hidden1, spec.style_hidden2, 0, 0,
                           static_cast<std::int64_t>(spec.style_hidden1) * spec.style_hidden2 + spec.style_hidden2});
    plan.layers.push_back({"linear_style", spec.style_hidden2, spec.n_styles, 0, 0,
                           static_cast<std::int64_t>(spec.style_hidden2) * spec.n_styles + spec.n_styles});
    return plan;
}

// Published reference counts for the 512 models, used for the derived-count
// report.
constexpr std::int64_t kReferenceGeneratorParams512 = 48014784;
constexpr std::int64_t kReferenceDiscriminatorParams512 = 20115932;

// ---- materialized networks ----

class Generator {
public:
    static Generator build(const GeneratorSpec& spec, Rng& rng) {
        Generator g;
        g.spec_ = spec;
        int ch = spec.base_channels;
        g.convs_.push_back(nn::ConvTranspose2d::create(rng, spec.noise_dim, ch, 4, 1, 0));
        g.bns_.push_back(nn::BatchNorm::create(rng, ch));
        for (int i = 0; i < spec.n_doubling(); ++i) {
            g.convs_.push_back(nn::ConvTranspose2d::create(rng, ch, ch / 2, 4, 2, 1));
            ch /= 2;
            g.bns_.push_back(nn::BatchNorm::create(rng, ch));
        }
        g.convs_.push_back(nn::ConvTranspose2d::create(rng, ch, 3, 4, 2, 1));
        return g;
    }

    // z: (N, noise_dim) -> images in (-1, 1), NHWC-flattened
    FeatureMap forward(const Tensor& z, bool training) {
        require_shape(z.cols() == spec_.noise_dim, "Generator: noise dim mismatch");
        FeatureMap x{z, z.rows(), 1, 1, spec_.noise_dim};
        for (std::size_t i = 0; i + 1 < convs_.size(); ++i) {
            x = convs_[i].forward(x);
            x.t = bns_[i].forward(x.t, training);
            x.t = tensor::leaky_relu(x.t, kLeakySlope);
        }
        x = convs_.back().forward(x);
        x.t = tensor::tanh_(x.t);
        return x;
    }

    // single sample from a seed, decoded to a [0,1] image
    Image sample_image(std::uint64_t seed, bool training = false) {
        tensor::NoGradGuard ng;
        Rng rng(derive_seed(seed, 0xca9ul));
        Tensor z = Tensor::randn(rng, 1, spec_.noise_dim);
        FeatureMap out = forward(z, training);
        Image img(out.h, out.w, out.c);
        for (std::size_t i = 0; i < img.px.size(); ++i) img.px[i] = std::clamp(0.5 * (out.t.value()[i] + 1.0), 0.0, 1.0);
        return img;
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (auto& c : convs_) c.collect(out);
        for (auto& b : bns_) b.collect(out);
        return out;
    }

    const GeneratorSpec& spec() const { return spec_; }

    void save(const std::filesystem::path& path, const std::string& config_hash) {
        std::vector<std::pair<std::string, const Tensor*>> entries;
        Tensor meta = Tensor::from_data(
            1, 3, {static_cast<Real>(spec_.noise_dim), static_cast<Real>(spec_.image_dim),
                   static_cast<Real>(spec_.base_channels)});
        entries.push_back({"spec", &meta});
        auto ps = params();
        std::vector<Tensor> running;
        for (std::size_t i = 0; i < ps.size(); ++i) entries.push_back({"param_" + std::to_string(i), ps[i]});
        for (std::size_t i = 0; i < bns_.size(); ++i) {
            running.push_back(Tensor::from_data(1, static_cast<int>(bns_[i].running_mean.size()), bns_[i].running_mean));
            running.push_back(Tensor::from_data(1, static_cast<int>(bns_[i].running_var.size()), bns_[i].running_var));
        }
        for (std::size_t i = 0; i < running.size(); ++i) entries.push_back({"bn_stat_" + std::to_string(i), &running[i]});
        archive::save_tensors(path, entries, config_hash);
    }

    static Generator load(const std::filesystem::path& path) {
        auto t = archive::load_tensors(path);
        const auto& meta = t.at("spec").value();
        GeneratorSpec spec = GeneratorSpec::toy(static_cast<int>(meta[1]), static_cast<int>(meta[2]),
                                                static_cast<int>(meta[0]));
        Rng rng(0);
        Generator g = Generator::build(spec, rng);
        auto ps = g.params();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto& src = t.at("param_" + std::to_string(i));
            require_shape(src.rows() == ps[i]->rows() && src.cols() == ps[i]->cols(), "Generator::load: shape mismatch");
            ps[i]->raw() = src.value();
        }
        for (std::size_t i = 0; i < g.bns_.size(); ++i) {
            g.bns_[i].running_mean = t.at("bn_stat_" + std::to_string(2 * i)).value();
            g.bns_[i].running_var = t.at("bn_stat_" + std::to_string(2 * i + 1)).value();
        }
        return g;
    }

private:
    GeneratorSpec spec_;
    std::vector<nn::ConvTranspose2d> convs_;
    std::vector<nn::BatchNorm> bns_;
};

class Discriminator {
public:
    static Discriminator build(const DiscriminatorSpec& spec, Rng& rng) {
        Discriminator d;
        d.spec_ = spec;
        d.first_ = nn::Conv2d::create(rng, 3, spec.first_channels, 4, 2, 1, /*bias=*/true);
        int ch = spec.first_channels;
        for (int i = 0; i < spec.n_doubling; ++i) {
            d.convs_.push_back(nn::Conv2d::create(rng, ch, ch * 2, 4, 2, 1, /*bias=*/false));
            ch *= 2;
            d.bns_.push_back(nn::BatchNorm::create(rng, ch));
        }
        for (int i = 0; i < spec.n_constant; ++i) {
            d.convs_.push_back(nn::Conv2d::create(rng, ch, ch, 4, 2, 1, /*bias=*/false));
            d.bns_.push_back(nn::BatchNorm::create(rng, ch));
        }
        const int flat = spec.flatten_dim();
        d.bin_head_ = nn::Linear::create(rng, flat, 1, true, 0.02);
        d.style1_ = nn::Linear::create(rng, flat, spec.style_hidden1, true, 0.02);
        d.style2_ = nn::Linear::create(rng, spec.style_hidden1, spec.style_hidden2, true, 0.02);
        d.style3_ = nn::Linear::create(rng, spec.style_hidden2, spec.n_styles, true, 0.02);
        return d;
    }

    struct Heads {
        Tensor bin_logits;    // (N, 1)
        Tensor style_logits;  // (N, n_styles)
    };

    // images: NHWC-flattened in (-1, 1)
    Heads forward(const FeatureMap& images, bool training, Rng* dropout_rng = nullptr) {
        require_shape(images.h == spec_.image_dim && images.w == spec_.image_dim && images.c == 3,
                      "Discriminator: image resolution mismatch");
        FeatureMap x = first_.forward(images);
        x.t = tensor::leaky_relu(x.t, kLeakySlope);
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            x = convs_[i].forward(x);
            x.t = bns_[i].forward(x.t, training);
            x.t = tensor::leaky_relu(x.t, kLeakySlope);
        }
        Tensor flat = tensor::reshape(x.t, images.n, spec_.flatten_dim());
        Heads out;
        out.bin_logits = bin_head_.forward(flat);
        Tensor s = tensor::leaky_relu(style1_.forward(flat), kLeakySlope);
        s = dropout_.forward(s, dropout_rng ? *dropout_rng : null_rng_(), training && dropout_rng != nullptr);
        s = tensor::leaky_relu(style2_.forward(s), kLeakySlope);
        s = dropout_.forward(s, dropout_rng ? *dropout_rng : null_rng_(), training && dropout_rng != nullptr);
        out.style_logits = style3_.forward(s);
        return out;
    }

    // StyleHead interface used by classify_discriminator (eval mode)
    int image_dim() const { return spec_.image_dim; }
    int n_styles() const { return spec_.n_styles; }

    std::vector<Real> style_logits(const Image& image) const {
        require_image(image, "Discriminator::style_logits");
        tensor::NoGradGuard ng;
        std::vector<Real> signal(image.px.size());
        for (std::size_t i = 0; i < signal.size(); ++i) signal[i] = 2.0 * image.px[i] - 1.0;
        FeatureMap fm{Tensor::from_data(image.h * image.w, image.c, std::move(signal)), 1, image.h, image.w, image.c};
        auto heads = const_cast<Discriminator*>(this)->forward(fm, /*training=*/false, nullptr);
        return heads.style_logits.value();
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        first_.collect(out);
        for (auto& c : convs_) c.collect(out);
        for (auto& b : bns_) b.collect(out);
        bin_head_.collect(out);
        style1_.collect(out);
        style2_.collect(out);
        style3_.collect(out);
        return out;
    }

    const DiscriminatorSpec& spec() const { return spec_; }

    void save(const std::filesystem::path& path, const std::string& config_hash) {
        std::vector<std::pair<std::string, const Tensor*>> entries;
        Tensor meta = Tensor::from_data(
            1, 8, {static_cast<Real>(spec_.image_dim), static_cast<Real>(spec_.n_styles),
                   static_cast<Real>(spec_.first_channels), static_cast<Real>(spec_.n_doubling),
                   static_cast<Real>(spec_.n_constant), static_cast<Real>(spec_.style_hidden1),
                   static_cast<Real>(spec_.style_hidden2), spec_.dropout});
        entries.push_back({"spec", &meta});
        auto ps = params();
        for (std::size_t i = 0; i < ps.size(); ++i) entries.push_back({"param_" + std::to_string(i), ps[i]});
        std::vector<Tensor> running;
        for (std::size_t i = 0; i < bns_.size(); ++i) {
            running.push_back(Tensor::from_data(1, static_cast<int>(bns_[i].running_mean.size()), bns_[i].running_mean));
            running.push_back(Tensor::from_data(1, static_cast<int>(bns_[i].running_var.size()), bns_[i].running_var));
        }
        for (std::size_t i = 0; i < running.size(); ++i) entries.push_back({"bn_stat_" + std::to_string(i), &running[i]});
        archive::save_tensors(path, entries, config_hash);
    }

    static Discriminator load(const std::filesystem::path& path) {
        auto t = archive::load_tensors(path);
        const auto& m = t.at("spec").value();
        DiscriminatorSpec spec;
        spec.image_dim = static_cast<int>(m[0]);
        spec.n_styles = static_cast<int>(m[1]);
        spec.first_channels = static_cast<int>(m[2]);
        spec.n_doubling = static_cast<int>(m[3]);
        spec.n_constant = static_cast<int>(m[4]);
        spec.style_hidden1 = static_cast<int>(m[5]);
        spec.style_hidden2 = static_cast<int>(m[6]);
        spec.dropout = m[7];
        Rng rng(0);
        Discriminator d = Discriminator::build(spec, rng);
        auto ps = d.params();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto& src = t.at("param_" + std::to_string(i));
            require_shape(src.rows() == ps[i]->rows() && src.cols() == ps[i]->cols(),
                          "Discriminator::load: shape mismatch");
            ps[i]->raw() = src.value();
        }
        for (std::size_t i = 0; i < d.bns_.size(); ++i) {
            d.bns_[i].running_mean = t.at("bn_stat_" + std::to_string(2 * i)).value();
            d.bns_[i].running_var = t.at("bn_stat_" + std::to_string(2 * i + 1)).value();
        }
        return d;
    }

private:
    static Rng& null_rng_() {
        static Rng r(0);
        return r;
    }

    DiscriminatorSpec spec_;
    nn::Conv2d first_;
    std::vector<nn::Conv2d> convs_;
    std::vector<nn::BatchNorm> bns_;
    nn::Linear bin_head_, style1_, style2_, style3_;
    nn::Dropout dropout_{0.5};
};

// ---- losses ----

// Inputs are probabilities: d_*_bin in (0,1), style rows summing to 1.
// loss_D = -E log D(x) - E log(1 - D(G(z))) + CE(D_C(x), labels)
// loss_G = -E log D(G(z)) + CE-to-uniform(C(G(z)))
struct CanLosses {
    Tensor loss_d;
    Tensor loss_g;
    Tensor adv_d_real;   // -E log D(x)
    Tensor adv_d_fake;   // -E log(1 - D(G(z)))
    Tensor style_loss;   // L_SL
    Tensor ambiguity;    // L_SA
};

inline CanLosses can_losses(const Tensor& d_real_bin, const Tensor& d_fake_bin, const Tensor& d_real_style,
                            const std::vector<int>& real_labels, const Tensor& c_fake_style) {
    require_shape(d_real_bin.cols() == 1 && d_fake_bin.cols() == 1, "can_losses: binary probs must be (N,1)");
    require_shape(static_cast<int>(real_labels.size()) == d_real_style.rows(), "can_losses: label batch mismatch");
    auto log_clamped = [](const Tensor& p) { return tensor::log_(tensor::clamp(p, kEpsProb, 1.0)); };

    CanLosses out;
    out.adv_d_real = tensor::neg(tensor::mean_all(log_clamped(d_real_bin)));
    out.adv_d_fake = tensor::neg(tensor::mean_all(log_clamped(tensor::sub(Tensor::scalar(1.0), d_fake_bin))));

    // L_SL: -E log D_C(x)[label]
    std::vector<Real> onehot(static_cast<std::size_t>(d_real_style.rows()) * d_real_style.cols(), 0.0);
    for (int r = 0; r < d_real_style.rows(); ++r) {
        const int idx = real_labels[static_cast<std::size_t>(r)];
        require(idx >= 0 && idx < d_real_style.cols(), "can_losses: label index out of range");
        onehot[static_cast<std::size_t>(r) * d_real_style.cols() + idx] = 1.0;
    }
    Tensor mask = Tensor::from_data(d_real_style.rows(), d_real_style.cols(), std::move(onehot));
    out.style_loss = tensor::neg(tensor::mean_all(tensor::sum_cols(tensor::mul(log_clamped(d_real_style), mask))));

    // L_SA: mean over batch of -(1/N) sum_i log C(G(z))_i
    out.ambiguity = tensor::neg(tensor::mean_all(tensor::mean_cols(log_clamped(c_fake_style))));

    Tensor adv_g = tensor::neg(tensor::mean_all(log_clamped(d_fake_bin)));
    out.loss_d = tensor::add(tensor::add(out.adv_d_real, out.adv_d_fake), out.style_loss);
    out.loss_g = tensor::add(adv_g, out.ambiguity);
    return out;
}

// lambda * E[(||grad_xhat D(xhat)||_2 - 1)^2] over random interpolates.
// DFn: (const FeatureMap&) -> (N, 1) critic scores. Differentiable w.r.t.
// whatever parameters DFn closes over (double backprop).
template <typename DFn>
Tensor gradient_penalty(DFn&& d_fn, const FeatureMap& real, const FeatureMap& fake, Real gp_lambda, Rng& rng) {
    require_shape(real.t.rows() == fake.t.rows() && real.t.cols() == fake.t.cols(),
                  "gradient_penalty: batch shape mismatch");
    const int rows = real.t.rows();
    const int cols = real.t.cols();
    const int n = real.n;
    const int per_sample = rows / n * cols;

    std::vector<Real> mix(static_cast<std::size_t>(rows) * cols);
    const int rows_per_sample = rows / n;
    std::vector<Real> u(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) u[static_cast<std::size_t>(i)] = rng.uniform();
    for (int r = 0; r < rows; ++r) {
        const Real ui = u[static_cast<std::size_t>(r / rows_per_sample)];
        for (int c = 0; c < cols; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * cols + c;
            mix[idx] = ui * real.t.value()[idx] + (1.0 - ui) * fake.t.value()[idx];
        }
    }
    Tensor x_hat = Tensor::from_data(rows, cols, std::move(mix), /*requires_grad=*/true);
    FeatureMap fm{x_hat, real.n, real.h, real.w, real.c};
    Tensor score = d_fn(fm);
    require_shape(score.rows() == n && score.cols() == 1, "gradient_penalty: critic must return (N,1)");
    Tensor g = tensor::grad(tensor::sum_all(score), {x_hat}, /*create_graph=*/true)[0];
    Tensor g_rows = tensor::reshape(g, n, per_sample);
    Tensor norms = tensor::sqrt_(tensor::sum_cols(tensor::mul(g_rows, g_rows)));
    Tensor excess = tensor::sub(norms, Tensor::scalar(1.0));
    return tensor::scale(tensor::mean_all(tensor::mul(excess, excess)), gp_lambda);
}

// ---- training ----

struct CanTrainConfig {
    int epochs = 100;
    int batch = 128;  // the grid trains at 128 and 256
    Real lr = 0.001;
    Real beta1 = 0.9;
    Real beta2 = 0.99;
    Real weight_decay = 0.0;
    Real adam_eps = 1e-8;
    bool use_gradient_penalty = false;
    Real gp_lambda = 10.0;
    Real style_loss_weight = 1.0;  // zeroing both weights reduces the loop to a plain GAN
    Real ambiguity_weight = 1.0;
    int d_warmup_steps = 0;  // D-only steps before alternating begins
    std::uint64_t seed = 0;

    void validate() const {
        require_cfg(epochs > 0 && batch > 0, "CanTrainConfig: positive sizes required");
        require_cfg(lr > 0.0 && adam_eps > 0.0, "CanTrainConfig: positive optimizer constants required");
        require_cfg(gp_lambda >= 0.0, "CanTrainConfig: gp_lambda must be non-negative");
    }
};

struct CanStepStats {
    int step = 0;
    Real loss_d = 0.0;
    Real loss_g = 0.0;
    Real style_loss = 0.0;
    Real ambiguity = 0.0;
    Real penalty = 0.0;
};

// In-memory labeled batch source at desk scale.
struct LabeledImages {
    std::vector<Image> images;
    std::vector<int> labels;
    int n_styles = 0;

    void validate() const {
        require(!images.empty() && images.size() == labels.size(), "LabeledImages: size mismatch");
        for (int l : labels) require(l >= 0 && l < n_styles, "LabeledImages: label out of range");
    }
};

class CanTrainer {
public:
    CanTrainer(GeneratorSpec gspec, DiscriminatorSpec dspec, CanTrainConfig config)
        : config_(config),
          rng_(derive_seed(config.seed, 0xca71ul)),
          g_(Generator::build(gspec, rng_)),
          d_(Discriminator::build(dspec, rng_)),
          opt_g_(config.lr, config.beta1, config.beta2, config.adam_eps, config.weight_decay),
          opt_d_(config.lr, config.beta1, config.beta2, config.adam_eps, config.weight_decay) {
        config_.validate();
        require(gspec.image_dim == dspec.image_dim, "CanTrainer: G/D resolution mismatch");
    }

    // One alternating step (D update then, past warmup, G update).
    CanStepStats step(const LabeledImages& data) {
        data.validate();
        const int B = std::min<int>(config_.batch, static_cast<int>(data.images.size()));
        const int dim = d_.spec().image_dim;

        // real batch
        std::vector<Real> real(static_cast<std::size_t>(B) * dim * dim * 3);
        std::vector<int> labels(static_cast<std::size_t>(B));
        for (int i = 0; i < B; ++i) {
            const std::size_t pick = rng_.index(data.images.size());
            const Image& img = data.images[pick];
            require_shape(img.h == dim && img.w == dim && img.c == 3, "CanTrainer: dataset resolution mismatch");
            for (std::size_t p = 0; p < img.px.size(); ++p)
                real[static_cast<std::size_t>(i) * img.px.size() + p] = 2.0 * img.px[p] - 1.0;
            labels[static_cast<std::size_t>(i)] = data.labels[pick];
        }
        FeatureMap real_fm{Tensor::from_data(B * dim * dim, 3, std::move(real)), B, dim, dim, 3};

        CanStepStats stats;
        stats.step = step_index_;

        // ---- discriminator update ----
        {
            Tensor z = Tensor::randn(rng_, B, g_.spec().noise_dim);
            FeatureMap fake = [&] {
                tensor::NoGradGuard ng;  // G is fixed during the D step
                return g_.forward(z, /*training=*/true);
            }();
            auto real_heads = d_.forward(real_fm, true, &rng_);
            auto fake_heads = d_.forward(fake, true, &rng_);
            auto losses = can_losses(tensor::sigmoid_(real_heads.bin_logits), tensor::sigmoid_(fake_heads.bin_logits),
                                     tensor::softmax_rows(real_heads.style_logits), labels,
                                     tensor::softmax_rows(fake_heads.style_logits));
            Tensor loss_d = tensor::add(tensor::add(losses.adv_d_real, losses.adv_d_fake),
                                        tensor::scale(losses.style_loss, config_.style_loss_weight));
            if (config_.use_gradient_penalty) {
                Tensor pen = gradient_penalty(
                    [&](const FeatureMap& fm) { return d_.forward(fm, true, nullptr).bin_logits; }, real_fm, fake,
                    config_.gp_lambda, rng_);
                stats.penalty = pen.item();
                loss_d = tensor::add(loss_d, pen);
            }
            auto params = d_.params();
            auto grads = tensor::grad(loss_d, handles(params));
            opt_d_.step(params, grads);
            stats.loss_d = loss_d.item();
            stats.style_loss = losses.style_loss.item();
        }

        // ---- generator update ----
        // The generator trains against the discriminator's inference
        // behavior: eval-mode batch norm, no dropout. Training-mode stats on
        // an all-fake batch would normalize away exactly the style signal
        // the ambiguity term needs.
        if (step_index_ >= config_.d_warmup_steps) {
            Tensor z = Tensor::randn(rng_, B, g_.spec().noise_dim);
            FeatureMap fake = g_.forward(z, /*training=*/true);
            auto fake_heads = d_.forward(fake, /*training=*/false, nullptr);
            Tensor fake_prob = tensor::sigmoid_(fake_heads.bin_logits);
            Tensor fake_style = tensor::softmax_rows(fake_heads.style_logits);
            Tensor adv_g = tensor::neg(tensor::mean_all(tensor::log_(tensor::clamp(fake_prob, kEpsProb, 1.0))));
            Tensor ambiguity =
                tensor::neg(tensor::mean_all(tensor::mean_cols(tensor::log_(tensor::clamp(fake_style, kEpsProb, 1.0)))));
            Tensor loss_g = tensor::add(adv_g, tensor::scale(ambiguity, config_.ambiguity_weight));
            auto params = g_.params();
            auto grads = tensor::grad(loss_g, handles(params));
            opt_g_.step(params, grads);
            stats.loss_g = loss_g.item();
            stats.ambiguity = ambiguity.item();
        }

        require(std::isfinite(stats.loss_d) && std::isfinite(stats.loss_g), "CanTrainer: non-finite loss, aborting");
        ++step_index_;
        history_.push_back(stats);
        return stats;
    }

    std::vector<CanStepStats> train(const LabeledImages& data, int steps) {
        std::vector<CanStepStats> out;
        out.reserve(static_cast<std::size_t>(steps));
        for (int i = 0; i < steps; ++i) out.push_back(step(data));
        return out;
    }

    // Held-out style-classification accuracy of the discriminator head.
    Real style_accuracy(const LabeledImages& data) {
        data.validate();
        int correct = 0;
        for (std::size_t i = 0; i < data.images.size(); ++i) {
            const auto logits = d_.style_logits(data.images[i]);
            int argmax = 0;
            for (int j = 1; j < static_cast<int>(logits.size()); ++j)
                if (logits[static_cast<std::size_t>(j)] > logits[static_cast<std::size_t>(argmax)]) argmax = j;
            if (argmax == data.labels[i]) ++correct;
        }
        return static_cast<Real>(correct) / static_cast<Real>(data.images.size());
    }

    Generator& generator() { return g_; }
    Discriminator& discriminator() { return d_; }
    const std::vector<CanStepStats>& history() const { return history_; }

private:
    static std::vector<Tensor> handles(const std::vector<Tensor*>& ptrs) {
        std::vector<Tensor> out;
        out.reserve(ptrs.size());
        for (auto* p : ptrs) out.push_back(*p);
        return out;
    }

    CanTrainConfig config_;
    Rng rng_;
    Generator g_;
    Discriminator d_;
    nn::AdamW opt_g_, opt_d_;
    int step_index_ = 0;
    std::vector<CanStepStats> history_;
};

// Supervised style-head pretraining on labeled data: the fast desk-scale
// route to a usable classification head (a full adversarial run also yields
// one). Returns the loss curve.
inline std::vector<Real> pretrain_discriminator_style(Discriminator& d, const LabeledImages& data, int steps,
                                                      int batch, Real lr, Rng& rng) {
    data.validate();
    const int dim = d.spec().image_dim;
    nn::AdamW opt(lr, 0.9, 0.99, 1e-8, 0.0);
    auto params = d.params();
    std::vector<Real> curve;
    curve.reserve(static_cast<std::size_t>(steps));
    for (int s = 0; s < steps; ++s) {
        const int B = std::min<int>(batch, static_cast<int>(data.images.size()));
        std::vector<Real> px(static_cast<std::size_t>(B) * dim * dim * 3);
        std::vector<int> labels(static_cast<std::size_t>(B));
        for (int i = 0; i < B; ++i) {
            const std::size_t pick = rng.index(data.images.size());
            const Image& img = data.images[pick];
            require_shape(img.h == dim && img.w == dim && img.c == 3,
                          "pretrain_discriminator_style: resolution mismatch");
            for (std::size_t p = 0; p < img.px.size(); ++p)
                px[static_cast<std::size_t>(i) * img.px.size() + p] = 2.0 * img.px[p] - 1.0;
            labels[static_cast<std::size_t>(i)] = data.labels[pick];
        }
        FeatureMap fm{Tensor::from_data(B * dim * dim, 3, std::move(px)), B, dim, dim, 3};
        auto heads = d.forward(fm, /*training=*/true, &rng);
        Tensor loss = style::classification_loss_from_logits(heads.style_logits, labels);
        std::vector<Tensor> handles;
        for (auto* p : params) handles.push_back(*p);
        opt.step(params, tensor::grad(loss, handles));
        curve.push_back(loss.item());
    }
    return curve;
}

// ---- the 16-run ablation grid ----

struct GridConfig {
    int image_dim = 256;
    std::string dataset;  // "full" | "mediums"
    int batch = 128;
    bool gradient_penalty = false;

    std::string name() const {
        return "dim" + std::to_string(image_dim) + "-" + dataset + "-b" + std::to_string(batch) +
               (gradient_penalty ? "-gp" : "-nogp");
    }

    int n_styles() const { return dataset == "full" ? 27 : 10; }
};

inline std::vector<GridConfig> enumerate_grid() {
    std::vector<GridConfig> out;
    for (int dim : {256, 512})
        for (const char* ds : {"full", "mediums"})
            for (int batch : {128, 256})
                for (bool gp : {false, true}) out.push_back({dim, ds, batch, gp});
    return out;
}

}  // namespace muse::can
