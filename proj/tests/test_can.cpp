#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <set>

#include "muse/can.hpp"
#include "muse/toy.hpp"

using namespace muse;
using can::DiscriminatorSpec;
using can::GeneratorSpec;
using tensor::Tensor;

TEST_CASE("generator plan matches the layer schedule for 512", "[can]") {
    auto plan = can::plan_generator(GeneratorSpec::canonical(512));
    const std::vector<std::array<int, 3>> expect = {
        {4, 4, 2048},   {8, 8, 1024},   {16, 16, 512}, {32, 32, 256},
        {64, 64, 128},  {128, 128, 64}, {256, 256, 32}, {512, 512, 3},
    };
    REQUIRE(plan.shape_trace() == expect);
    REQUIRE(plan.param_count() == can::kReferenceGeneratorParams512);  // 48,014,784 exactly
}

TEST_CASE("generator plan matches the layer schedule for 256", "[can]") {
    auto plan = can::plan_generator(GeneratorSpec::canonical(256));
    const std::vector<std::array<int, 3>> expect = {
        {4, 4, 2048}, {8, 8, 1024}, {16, 16, 512}, {32, 32, 256}, {64, 64, 128}, {128, 128, 64}, {256, 256, 3},
    };
    REQUIRE(plan.shape_trace() == expect);
}

TEST_CASE("generator rejects unsupported canonical dims", "[can]") {
    REQUIRE_THROWS_AS(GeneratorSpec::canonical(128), error);
    REQUIRE_THROWS_AS(GeneratorSpec::canonical(1024), error);
}

TEST_CASE("discriminator plan matches the layer schedule for 512", "[can]") {
    auto spec = DiscriminatorSpec::canonical(512, 27);
    auto plan = can::plan_discriminator(spec);
    const std::vector<std::array<int, 3>> expect = {
        {256, 256, 32}, {128, 128, 64}, {64, 64, 128}, {32, 32, 256},
        {16, 16, 512},  {8, 8, 1024},   {4, 4, 1024},  {2, 2, 1024},
    };
    REQUIRE(plan.shape_trace() == expect);
    REQUIRE(spec.flatten_dim() == 2 * 2 * 1024);

    // style head output length follows the dataset
    REQUIRE(DiscriminatorSpec::canonical(512, 27).n_styles == 27);
    REQUIRE(DiscriminatorSpec::canonical(512, 10).n_styles == 10);

    // derived parameter count (frozen regression) reported against the
    // published 20,115,932; the appendix constant-width reading lands higher.
    REQUIRE(plan.param_count() == 49476028);
    REQUIRE(plan.param_count() != can::kReferenceDiscriminatorParams512);
}

TEST_CASE("discriminator plan for 256 flattens to a single spatial cell", "[can]") {
    auto spec = DiscriminatorSpec::canonical(256, 10);
    auto plan = can::plan_discriminator(spec);
    REQUIRE(plan.shape_trace().back() == std::array<int, 3>{1, 1, 1024});
    REQUIRE(spec.flatten_dim() == 1024);
    REQUIRE_THROWS_AS(DiscriminatorSpec::canonical(64, 10), error);
}

TEST_CASE("toy generator emits tanh-bounded images of the right shape", "[can]") {
    Rng rng(3);
    auto g = can::Generator::build(GeneratorSpec::toy(16, 32), rng);
    Tensor z = Tensor::randn(rng, 2, 100);
    auto out = g.forward(z, /*training=*/true);
    REQUIRE(out.n == 2);
    REQUIRE(out.h == 16);
    REQUIRE(out.w == 16);
    REQUIRE(out.c == 3);
    for (Real v : out.t.value()) {
        REQUIRE(v > -1.0);
        REQUIRE(v < 1.0);
    }

    // materialized parameters match the plan accounting
    auto plan = can::plan_generator(g.spec());
    std::int64_t n = 0;
    for (auto* p : g.params()) n += static_cast<std::int64_t>(p->numel());
    REQUIRE(n == plan.param_count());
}

TEST_CASE("toy discriminator heads have contract shapes", "[can]") {
    Rng rng(5);
    auto spec = DiscriminatorSpec::toy(16, 2, 16, 1, 1, 64, 32);
    auto d = can::Discriminator::build(spec, rng);
    Rng irng(6);
    can::FeatureMap imgs{Tensor::randn(irng, 4 * 16 * 16, 3, 0.5), 4, 16, 16, 3};
    auto heads = d.forward(imgs, /*training=*/true, &irng);
    REQUIRE(heads.bin_logits.rows() == 4);
    REQUIRE(heads.bin_logits.cols() == 1);
    REQUIRE(heads.style_logits.rows() == 4);
    REQUIRE(heads.style_logits.cols() == 2);

    auto plan = can::plan_discriminator(spec);
    std::int64_t n = 0;
    for (auto* p : d.params()) n += static_cast<std::int64_t>(p->numel());
    REQUIRE(n == plan.param_count());

    // resolution mismatch
    can::FeatureMap bad{Tensor::randn(irng, 4 * 8 * 8, 3, 0.5), 4, 8, 8, 3};
    REQUIRE_THROWS_AS(d.forward(bad, false, nullptr), shape_error);
}

TEST_CASE("can_losses at the maximal-confusion fixed point", "[can]") {
    // D outputs 0.5 everywhere, style uniform over 2 classes
    Tensor half = Tensor::full(4, 1, 0.5);
    Tensor uni = Tensor::full(4, 2, 0.5);
    auto l = can::can_losses(half, half, uni, {0, 1, 0, 1}, uni);
    const Real ln2 = std::log(2.0);
    REQUIRE_THAT(l.adv_d_real.item(), Catch::Matchers::WithinAbs(ln2, 1e-12));
    REQUIRE_THAT(l.adv_d_fake.item(), Catch::Matchers::WithinAbs(ln2, 1e-12));
    REQUIRE_THAT(l.ambiguity.item(), Catch::Matchers::WithinAbs(ln2, 1e-12));
    REQUIRE_THAT(l.style_loss.item(), Catch::Matchers::WithinAbs(ln2, 1e-12));
    REQUIRE_THAT(l.loss_d.item(), Catch::Matchers::WithinAbs(3.0 * ln2, 1e-12));
    REQUIRE_THAT(l.loss_g.item(), Catch::Matchers::WithinAbs(2.0 * ln2, 1e-12));
}

TEST_CASE("can_losses saturation and one-hot cases", "[can]") {
    // perfect discriminator: 1 on real, 0 on fake
    Tensor ones = Tensor::full(3, 1, 1.0);
    Tensor zeros = Tensor::full(3, 1, 0.0);
    Tensor style = Tensor::from_data(3, 2, {1.0, 0.0, 0.0, 1.0, 1.0, 0.0});
    auto l = can::can_losses(ones, zeros, style, {0, 1, 0}, Tensor::full(3, 2, 0.5));
    REQUIRE_THAT(l.adv_d_real.item(), Catch::Matchers::WithinAbs(0.0, 1e-9));
    REQUIRE_THAT(l.adv_d_fake.item(), Catch::Matchers::WithinAbs(0.0, 1e-9));
    REQUIRE(l.loss_g.item() > 20.0);  // -log(clamped 1e-12) dominates

    // one-hot-correct style prediction contributes zero
    REQUIRE_THAT(l.style_loss.item(), Catch::Matchers::WithinAbs(0.0, 1e-9));

    // shape mismatch
    REQUIRE_THROWS_AS(can::can_losses(ones, zeros, style, {0, 1}, style), error);
}

TEST_CASE("gradient penalty closed forms on linear critics", "[can]") {
    Rng rng(11);
    const int n = 3, h = 4, w = 4, c = 3;
    const int dim = h * w * c;
    can::FeatureMap real{Tensor::randn(rng, n * h * w, c, 0.5), n, h, w, c};
    can::FeatureMap fake{Tensor::randn(rng, n * h * w, c, 0.5), n, h, w, c};

    // critic with unit gradient everywhere: penalty 0
    auto unit_critic = [&](const can::FeatureMap& fm) {
        Tensor rows = tensor::reshape(fm.t, n, dim);
        Tensor wvec = Tensor::full(dim, 1, 1.0 / std::sqrt(static_cast<Real>(dim)));
        return tensor::matmul(rows, wvec);
    };
    Rng gr1(12);
    REQUIRE_THAT(can::gradient_penalty(unit_critic, real, fake, 10.0, gr1).item(),
                 Catch::Matchers::WithinAbs(0.0, 1e-10));

    // critic = 2 * sum(pixels): gradient norm 2 sqrt(D), penalty lambda (2 sqrt(D) - 1)^2
    auto sum_critic = [&](const can::FeatureMap& fm) {
        Tensor rows = tensor::reshape(fm.t, n, dim);
        return tensor::scale(tensor::sum_cols(rows), 2.0);
    };
    Rng gr2(13);
    const Real expect = 10.0 * std::pow(2.0 * std::sqrt(static_cast<Real>(dim)) - 1.0, 2.0);
    REQUIRE_THAT(can::gradient_penalty(sum_critic, real, fake, 10.0, gr2).item(),
                 Catch::Matchers::WithinAbs(expect, 1e-5));

    // default Wasserstein lambda
    REQUIRE(can::CanTrainConfig{}.gp_lambda == 10.0);
}

TEST_CASE("zeroed style weights reduce the loop to a plain GAN", "[can]") {
    Rng rng(17);
    auto d = can::Discriminator::build(DiscriminatorSpec::toy(8, 2, 8, 1, 0, 16, 8), rng);
    Rng irng(18);
    can::FeatureMap imgs{Tensor::randn(irng, 2 * 8 * 8, 3, 0.5), 2, 8, 8, 3};
    auto heads = d.forward(imgs, true, nullptr);
    auto losses = can::can_losses(tensor::sigmoid_(heads.bin_logits), tensor::sigmoid_(heads.bin_logits),
                                  tensor::softmax_rows(heads.style_logits), {0, 1},
                                  tensor::softmax_rows(heads.style_logits));
    // loss with the style term weighted to zero
    Tensor loss = tensor::add(tensor::add(losses.adv_d_real, losses.adv_d_fake),
                              tensor::scale(losses.style_loss, 0.0));
    auto params = d.params();
    std::vector<Tensor> handles;
    for (auto* p : params) handles.push_back(*p);
    auto grads = tensor::grad(loss, handles);
    // style-head parameters are the last six (three linear layers w+b);
    // their gradients must vanish identically
    for (std::size_t i = params.size() - 6; i < params.size(); ++i)
        for (Real v : grads[i].value()) REQUIRE(v == 0.0);
    bool bin_has_grad = false;
    for (Real v : grads[params.size() - 8].value())  // binary head weight
        bin_has_grad = bin_has_grad || v != 0.0;
    REQUIRE(bin_has_grad);
}

TEST_CASE("seeded toy CAN steps are bit-reproducible", "[can]") {
    Rng drng(77);
    auto data = toy::toy_styled_dataset(drng, 32, 8);
    auto run = [&] {
        can::CanTrainConfig cfg;
        cfg.batch = 8;
        cfg.seed = 55;
        can::CanTrainer t(GeneratorSpec::toy(8, 16), DiscriminatorSpec::toy(8, 2, 8, 1, 0, 16, 8), cfg);
        return t.train(data, 6);
    };
    auto h1 = run();
    auto h2 = run();
    for (std::size_t i = 0; i < h1.size(); ++i) {
        REQUIRE(h1[i].loss_d == h2[i].loss_d);
        REQUIRE(h1[i].loss_g == h2[i].loss_g);
    }
}

TEST_CASE("gradient-penalty training path runs (double backprop smoke)", "[can]") {
    Rng drng(78);
    auto data = toy::toy_styled_dataset(drng, 16, 8);
    can::CanTrainConfig cfg;
    cfg.batch = 4;
    cfg.seed = 66;
    cfg.use_gradient_penalty = true;
    can::CanTrainer t(GeneratorSpec::toy(8, 16), DiscriminatorSpec::toy(8, 2, 8, 1, 0, 16, 8), cfg);
    auto stats = t.train(data, 3);
    for (const auto& s : stats) {
        REQUIRE(std::isfinite(s.loss_d));
        REQUIRE(s.penalty >= 0.0);
    }
}

TEST_CASE("the ablation grid enumerates exactly sixteen configurations", "[can]") {
    auto grid = can::enumerate_grid();
    REQUIRE(grid.size() == 16);
    std::set<std::string> names;
    int gp_count = 0, dim512 = 0, full = 0, b256 = 0;
    for (const auto& g : grid) {
        names.insert(g.name());
        gp_count += g.gradient_penalty ? 1 : 0;
        dim512 += g.image_dim == 512 ? 1 : 0;
        full += g.dataset == "full" ? 1 : 0;
        b256 += g.batch == 256 ? 1 : 0;
        REQUIRE((g.n_styles() == 27 || g.n_styles() == 10));
    }
    REQUIRE(names.size() == 16);
    REQUIRE(gp_count == 8);
    REQUIRE(dim512 == 8);
    REQUIRE(full == 8);
    REQUIRE(b256 == 8);
}

TEST_CASE("discriminator classifier integrates with the style module", "[can]") {
    Rng rng(21);
    auto d = can::Discriminator::build(DiscriminatorSpec::toy(16, 2, 16, 1, 1, 64, 32), rng);
    Rng irng(22);
    const Image img = toy::toy_styled_image(irng, 16, 0)
;
    auto dist = style::classify_discriminator(img, d);
    REQUIRE(dist.n() == 2);
    Real sum = 0.0;
    for (Real p : dist.probs) sum += p;
    REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));

    // independent softmax of the captured logits matches
    auto logits = d.style_logits(img);
    auto expect = style::softmax(logits);
    for (std::size_t i = 0; i < expect.size(); ++i)
        REQUIRE_THAT(dist.probs[i], Catch::Matchers::WithinAbs(expect[i], 1e-12));

    // resolution mismatch rejected
    Image small(8, 8, 3);
    REQUIRE_THROWS_AS(style::classify_discriminator(small, d), shape_error);
}

TEST_CASE("generator and discriminator checkpoints round-trip", "[can]") {
    Rng rng(23);
    auto g = can::Generator::build(GeneratorSpec::toy(16, 32), rng);
    auto d = can::Discriminator::build(DiscriminatorSpec::toy(16, 2, 16, 1, 1, 64, 32), rng);
    const auto dir = std::filesystem::temp_directory_path() / "muse_can_ckpt_test";
    std::filesystem::create_directories(dir);

    g.save(dir / "g.bin", "h1");
    d.save(dir / "d.bin", "h1");
    auto g2 = can::Generator::load(dir / "g.bin");
    auto d2 = can::Discriminator::load(dir / "d.bin");

    const Image img = g.sample_image(42);
    const Image img2 = g2.sample_image(42);
    REQUIRE(img.px == img2.px);
    Rng irng(24);
    const Image probe = toy::toy_styled_image(irng, 16, 1);
    REQUIRE(d.style_logits(probe) == d2.style_logits(probe));
    std::filesystem::remove_all(dir);
}
