// muse: training and evaluation workflows over one config file.
//
// Subcommands: subset-mediums, fit-clusters, train-disc, train-ddpo,
// train-can, eval-generate, eval-score, eval-similarity, eval-space, report.
// Exit codes: 0 success, 2 configuration error, 1 runtime failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "muse/archive.hpp"
#include "muse/backends.hpp"
#include "muse/can.hpp"
#include "muse/config.hpp"
#include "muse/data.hpp"
#include "muse/ddpo.hpp"
#include "muse/diffusion.hpp"
#include "muse/evaluation.hpp"
#include "muse/labels.hpp"
#include "muse/plot.hpp"
#include "muse/samplers.hpp"
#include "muse/style.hpp"
#include "muse/toy.hpp"

namespace fs = std::filesystem;
using namespace muse;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "muse-out";
    long long seed = -1;  // overrides run.seed when >= 0
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config file (key = value, [section] headers)");
    cmd->add_option("--override", args.overrides, "dotted-path override, key=value")->take_all();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "global seed (overrides run.seed)");
}

Config load_config(const CommonArgs& args) {
    Config cfg = args.config_path.empty() ? Config() : Config::parse_file(args.config_path);
    for (const auto& ov : args.overrides) cfg.apply_override(ov);
    if (args.seed >= 0) cfg.set("run.seed", std::to_string(args.seed));
    return cfg;
}

fs::path prepare_out(const Config& cfg, const CommonArgs& args) {
    fs::path out(args.out_dir);
    fs::create_directories(out);
    cfg.write_snapshot((out / "config.resolved.toml").string());
    return out;
}

std::uint64_t run_seed(const Config& cfg) { return static_cast<std::uint64_t>(cfg.get_int("run.seed", 0)); }

// "toy:<seed>:<n>:<dim>" | directory path. Toy specs materialize a labeled
// stripe dataset under the cache dir so downstream code sees a real layout.
fs::path resolve_dataset_dir(const std::string& spec) {
    if (spec.rfind("toy:", 0) != 0) return spec;
    std::uint64_t seed = 0;
    int n = 32, dim = 16;
    std::sscanf(spec.c_str(), "toy:%llu:%d:%d", reinterpret_cast<unsigned long long*>(&seed), &n, &dim);
    const fs::path dir = data::default_cache_dir() / ("toy_dataset_" + std::to_string(seed) + "_" +
                                                      std::to_string(n) + "_" + std::to_string(dim));
    if (fs::exists(dir / "style_0") && fs::exists(dir / "style_1")) return dir;
    Rng rng(seed);
    auto ds = toy::toy_styled_dataset(rng, n, dim);
    fs::create_directories(dir / "style_0");
    fs::create_directories(dir / "style_1");
    std::vector<int> counters(2, 0);
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const int label = ds.labels[i];
        char name[32];
        std::snprintf(name, sizeof(name), "img_%04d.png", counters[static_cast<std::size_t>(label)]++);
        write_png(dir / ("style_" + std::to_string(label)) / name, ds.images[i]);
    }
    return dir;
}

can::LabeledImages load_can_dataset(const fs::path& dir) {
    auto ds = data::load_dataset(dir);
    can::LabeledImages out;
    out.n_styles = static_cast<int>(ds.label_set.size());
    for (const auto& rec : ds.records) {
        out.images.push_back(data::load_image(rec));
        const auto it = std::find(ds.label_set.begin(), ds.label_set.end(), rec.label);
        out.labels.push_back(static_cast<int>(it - ds.label_set.begin()));
    }
    out.validate();
    return out;
}

std::shared_ptr<style::StyleClassifier> build_classifier(const Config& cfg, const backends::Suite& suite,
                                                         reward::ClassifierKind kind) {
    switch (kind) {
        case reward::ClassifierKind::none:
            return nullptr;
        case reward::ClassifierKind::zero_shot:
            return std::make_shared<style::ZeroShotClassifier>(
                labels::resolve_label_set(cfg.get_str("reward.labels", "builtin:full")), suite.similarity,
                cfg.get_real("reward.temperature", 1.0));
        case reward::ClassifierKind::kmeans:
            return std::make_shared<style::KMeansClassifier>(
                style::ClusterModel::load(cfg.get_str("reward.clusters")), suite.embedder,
                cfg.get_real("reward.temperature", 1.0));
        case reward::ClassifierKind::discriminator: {
            auto disc = std::make_shared<can::Discriminator>(
                can::Discriminator::load(cfg.get_str("reward.discriminator")));
            struct DiscClassifier : style::StyleClassifier {
                std::shared_ptr<can::Discriminator> d;
                Real tau;
                style::StyleDistribution classify(const Image& img) const override {
                    return style::classify_discriminator(img, *d, tau);
                }
                int n_classes() const override { return d->n_styles(); }
            };
            auto out = std::make_shared<DiscClassifier>();
            out->d = disc;
            out->tau = cfg.get_real("reward.temperature", 1.0);
            return out;
        }
    }
    return nullptr;
}

diffusion::NoiseSchedule build_schedule(const Config& cfg) {
    auto s = diffusion::NoiseSchedule::linear(static_cast<int>(cfg.get_int("diffusion.timesteps", 1000)),
                                              cfg.get_real("diffusion.beta_start", 1e-4),
                                              cfg.get_real("diffusion.beta_end", 0.02));
    s.snap_final_alpha = cfg.get_bool("diffusion.snap_final_alpha", true);
    return s;
}

ddpo::TrainerConfig build_trainer_config(const Config& cfg) {
    ddpo::TrainerConfig t;
    t.epochs = static_cast<int>(cfg.get_int("ddpo.epochs", t.epochs));
    t.effective_batch = static_cast<int>(cfg.get_int("ddpo.effective_batch", t.effective_batch));
    t.batches_per_epoch = static_cast<int>(cfg.get_int("ddpo.batches_per_epoch", t.batches_per_epoch));
    t.inference_steps = static_cast<int>(cfg.get_int("ddpo.inference_steps", t.inference_steps));
    t.adapter_rank = static_cast<int>(cfg.get_int("ddpo.lora_rank", t.adapter_rank));
    t.adapter_alpha = cfg.get_real("ddpo.lora_alpha", t.adapter_alpha);
    t.lr = cfg.get_real("ddpo.lr", t.lr);
    t.beta1 = cfg.get_real("ddpo.beta1", t.beta1);
    t.beta2 = cfg.get_real("ddpo.beta2", t.beta2);
    t.weight_decay = cfg.get_real("ddpo.weight_decay", t.weight_decay);
    t.adam_eps = cfg.get_real("ddpo.adam_eps", t.adam_eps);
    t.clip_range = cfg.get_real("ddpo.clip_range", t.clip_range);
    t.max_grad_norm = cfg.get_real("ddpo.max_grad_norm", t.max_grad_norm);
    t.eta = cfg.get_real("ddpo.eta", t.eta);
    t.seed = run_seed(cfg);
    t.prompts = cfg.get_str_list("ddpo.prompts", {"painting", "drawing", "art"});
    t.validate();
    return t;
}

// Policy from checkpoint or freshly initialized (optionally pretrained on the
// synthetic toy distribution).
std::shared_ptr<ddpo::MlpPolicy> build_policy(const Config& cfg, const ddpo::TrainerConfig& tcfg,
                                              const diffusion::NoiseSchedule& schedule, int* image_dim_out) {
    const int dim = static_cast<int>(cfg.get_int("policy.image_dim", 8));
    *image_dim_out = dim;
    auto policy = std::make_shared<ddpo::MlpPolicy>();
    if (cfg.has("policy.checkpoint")) {
        policy->load(cfg.get_str("policy.checkpoint"));
        return policy;
    }
    Rng rng(derive_seed(run_seed(cfg), 0x9017));
    *policy = ddpo::MlpPolicy::create(rng, dim * dim, static_cast<int>(cfg.get_int("backend.embed_dim", 8)),
                                      static_cast<int>(cfg.get_int("policy.hidden", 64)));
    const int pretrain_steps = static_cast<int>(cfg.get_int("policy.pretrain_steps", 0));
    if (pretrain_steps > 0) {
        auto signals = toy::toy_signal_dataset(rng, static_cast<int>(cfg.get_int("policy.pretrain_data", 256)), dim,
                                               cfg.get_real("policy.pretrain_level", 0.75));
        auto [before, after] = toy::pretrain_denoiser(*policy, schedule, signals, pretrain_steps,
                                                      static_cast<int>(cfg.get_int("policy.pretrain_batch", 32)),
                                                      cfg.get_real("policy.pretrain_lr", 0.01), rng);
        std::cout << "pretrain denoising mse " << before << " -> " << after << "\n";
    }
    policy->attach_adapters(rng, tcfg.adapter_rank, tcfg.adapter_alpha);
    return policy;
}

std::unique_ptr<eval::ImageSampler> build_model(const Config& cfg, const std::string& spec) {
    if (spec.rfind("noise", 0) == 0) {
        const int dim = static_cast<int>(cfg.get_int("eval.image_dim", 16));
        return std::make_unique<eval::NoiseSampler>(spec, dim);
    }
    if (spec.rfind("can:", 0) == 0) {
        auto g = std::make_shared<can::Generator>(can::Generator::load(spec.substr(4)));
        return std::make_unique<eval::CanSampler>(fs::path(spec.substr(4)).stem().string(), g);
    }
    if (spec.rfind("diffusion:", 0) == 0) {
        auto policy = std::make_shared<ddpo::MlpPolicy>();
        policy->load(spec.substr(10));
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<Real>(policy->sample_dim()))));
        require(side * side == policy->sample_dim(), "eval model: policy sample dim is not square");
        auto codec = std::make_shared<diffusion::IdentityCodec>(side, side, 1);
        auto suite = backends::make_suite(cfg);
        auto embedder = suite.embedder;
        return std::make_unique<eval::DiffusionSampler>(
            fs::path(spec.substr(10)).stem().string(), policy, build_schedule(cfg), codec,
            [embedder](const std::string& p) { return embedder->embed_text(p).values; },
            static_cast<int>(cfg.get_int("ddpo.inference_steps", 30)), cfg.get_real("ddpo.eta", 1.0));
    }
    throw config_error("unknown model spec: " + spec + " (expected noise | can:<ckpt> | diffusion:<ckpt>)");
}

// ---- subcommand bodies ----

int cmd_subset_mediums(const CommonArgs& common, const std::string& dataset) {
    Config cfg = load_config(common);
    const fs::path out = prepare_out(cfg, common);
    auto suite = backends::make_suite(cfg);
    auto ds = data::load_dataset(resolve_dataset_dir(dataset.empty() ? cfg.get_str("data.root") : dataset));
    data::CaptionCache cache(data::default_cache_dir() / "captions.jsonl");
    auto [subset, report] = data::build_mediums_subset(
        ds, *suite.captioner, cfg.get_str_list("data.keywords", {"painting", "drawing", "art"}),
        static_cast<int>(cfg.get_int("data.top_n", 10)), &cache);
    data::write_subset_report_csv(out / "subset_report.csv", report);
    labels::save_label_set((out / "subset_labels.txt").string(), subset.label_set);
    std::cout << "selected " << report.selected_classes.size() << " classes, " << subset.records.size()
              << " images; report: " << (out / "subset_report.csv").string() << "\n";
    return 0;
}

int cmd_fit_clusters(const CommonArgs& common, const std::string& dataset, int k) {
    Config cfg = load_config(common);
    const fs::path out = prepare_out(cfg, common);
    auto suite = backends::make_suite(cfg);
    auto ds = data::load_dataset(resolve_dataset_dir(dataset.empty() ? cfg.get_str("data.root") : dataset));
    auto model = data::fit_clusters(ds, *suite.embedder, k, run_seed(cfg),
                                    static_cast<int>(cfg.get_int("data.kmeans_max_iter", 300)),
                                    cfg.get_real("data.kmeans_tol", 1e-4));
    model.save((out / "clusters.json").string());
    std::cout << "fit k=" << model.k << " inertia=" << model.inertia << " -> "
              << (out / "clusters.json").string() << "\n";
    return 0;
}

int cmd_train_disc(const CommonArgs& common, const std::string& dataset) {
    Config cfg = load_config(common);
    const fs::path out = prepare_out(cfg, common);
    auto images = load_can_dataset(resolve_dataset_dir(dataset.empty() ? cfg.get_str("data.root") : dataset));
    const int dim = images.images.front().h;
    auto dspec = can::DiscriminatorSpec::toy(
        dim, images.n_styles, static_cast<int>(cfg.get_int("can.first_channels", 16)),
        static_cast<int>(cfg.get_int("can.n_doubling", 1)), static_cast<int>(cfg.get_int("can.n_constant", 1)),
        static_cast<int>(cfg.get_int("can.style_hidden1", 64)), static_cast<int>(cfg.get_int("can.style_hidden2", 32)));
    Rng rng(derive_seed(run_seed(cfg), 0xd15c));
    auto disc = can::Discriminator::build(dspec, rng);
    auto curve = can::pretrain_discriminator_style(disc, images, static_cast<int>(cfg.get_int("can.disc_steps", 200)),
                                                   static_cast<int>(cfg.get_int("can.batch", 16)),
                                                   cfg.get_real("can.lr", 0.001), rng);
    disc.save(out / "discriminator.bin", cfg.hash());
    std::ofstream csv(out / "disc_loss.csv");
    csv << "step,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) csv << i << "," << curve[i] << "\n";
    std::cout << "style loss " << curve.front() << " -> " << curve.back() << "; checkpoint: "
              << (out / "discriminator.bin").string() << "\n";
    return 0;
}

int cmd_train_ddpo(const CommonArgs& common) {
    Config cfg = load_config(common);
    const fs::path out = prepare_out(cfg, common);
    auto suite = backends::make_suite(cfg);
    auto schedule = build_schedule(cfg);
    auto tcfg = build_trainer_config(cfg);

    reward::RewardConfig rcfg;
    rcfg.lambda_novelty = cfg.get_real("reward.lambda_novelty", 1.0);
    rcfg.lambda_utility = cfg.get_real("reward.lambda_utility", 0.25);
    rcfg.classifier_kind = reward::classifier_kind_from_string(cfg.get_str("reward.classifier", "none"));
    ddpo::RewardStack stack{rcfg, build_classifier(cfg, suite, rcfg.classifier_kind), suite.similarity};

    int image_dim = 0;
    auto policy = build_policy(cfg, tcfg, schedule, &image_dim);
    auto codec = std::make_shared<diffusion::IdentityCodec>(image_dim, image_dim, 1);
    auto embedder = suite.embedder;
    ddpo::Trainer trainer(policy, tcfg, stack, codec, schedule,
                          [embedder](const std::string& p) { return embedder->embed_text(p).values; });
    trainer.set_epoch_log(std::make_shared<archive::JsonLinesWriter>(out / "epochs.jsonl"));
    trainer.set_reward_log(std::make_shared<archive::JsonLinesWriter>(out / "rewards.jsonl"));

    for (int e = 0; e < tcfg.epochs; ++e) {
        auto s = trainer.train_epoch(e);
        std::cout << "epoch " << e << " reward " << s.mean_reward << " clip " << s.clip_fraction << " gnorm "
                  << s.grad_norm << "\n";
    }
    policy->save(out / "policy.bin", cfg.hash());
    std::cout << "checkpoint: " << (out / "policy.bin").string() << "\n";
    return 0;
}

int cmd_train_can(const CommonArgs& common, const std::string& dataset, bool list_grid) {
    Config cfg = load_config(common);
    if (list_grid) {
        for (const auto& g : can::enumerate_grid()) std::cout << g.name() << "\n";
        return 0;
    }
    const fs::path out = prepare_out(cfg, common);
    auto images = load_can_dataset(resolve_dataset_dir(dataset.empty() ? cfg.get_str("data.root") : dataset));
    const int dim = images.images.front().h;

    can::CanTrainConfig ccfg;
    ccfg.batch = static_cast<int>(cfg.get_int("can.batch", 16));
    ccfg.lr = cfg.get_real("can.lr", 0.001);
    ccfg.beta1 = cfg.get_real("can.beta1", 0.9);
    ccfg.beta2 = cfg.get_real("can.beta2", 0.99);
    ccfg.use_gradient_penalty = cfg.get_bool("can.gradient_penalty", false);
    ccfg.gp_lambda = cfg.get_real("can.gp_lambda", 10.0);
    ccfg.d_warmup_steps = static_cast<int>(cfg.get_int("can.d_warmup_steps", 0));
    ccfg.seed = run_seed(cfg);
    ccfg.validate();

    auto gspec = dim == 256 || dim == 512
                     ? can::GeneratorSpec::canonical(dim)
                     : can::GeneratorSpec::toy(dim, static_cast<int>(cfg.get_int("can.base_channels", 64)));
    auto dspec = dim == 256 || dim == 512
                     ? can::DiscriminatorSpec::canonical(dim, images.n_styles)
                     : can::DiscriminatorSpec::toy(dim, images.n_styles,
                                                   static_cast<int>(cfg.get_int("can.first_channels", 16)),
                                                   static_cast<int>(cfg.get_int("can.n_doubling", 1)),
                                                   static_cast<int>(cfg.get_int("can.n_constant", 1)),
                                                   static_cast<int>(cfg.get_int("can.style_hidden1", 64)),
                                                   static_cast<int>(cfg.get_int("can.style_hidden2", 32)));
    can::CanTrainer trainer(gspec, dspec, ccfg);

    const int warm = static_cast<int>(cfg.get_int("can.g_warm_start_steps", 0));
    if (warm > 0) {
        std::vector<Image> style0;
        for (std::size_t i = 0; i < images.images.size(); ++i)
            if (images.labels[i] == 0) style0.push_back(images.images[i]);
        Rng wrng(derive_seed(ccfg.seed, 99));
        toy::warm_start_generator(trainer.generator(), style0, warm, ccfg.batch, 0.01, wrng);
    }

    const int steps = static_cast<int>(cfg.get_int("can.steps", 200));
    std::ofstream csv(out / "can_losses.csv");
    csv << "step,loss_d,loss_g,style_loss,ambiguity,penalty\n";
    for (int i = 0; i < steps; ++i) {
        auto s = trainer.step(images);
        csv << s.step << "," << s.loss_d << "," << s.loss_g << "," << s.style_loss << "," << s.ambiguity << ","
            << s.penalty << "\n";
        if (i % 25 == 0) std::cout << "step " << i << " loss_d " << s.loss_d << " loss_g " << s.loss_g << "\n";
    }
    trainer.generator().save(out / "generator.bin", cfg.hash());
    trainer.discriminator().save(out / "discriminator.bin", cfg.hash());

    // sample grid
    const int grid = 4;
    Image sheet(dim * grid, dim * grid, 3);
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            const Image s = trainer.generator().sample_image(derive_seed(ccfg.seed, gy * grid + gx));
            for (int y = 0; y < dim; ++y)
                for (int x = 0; x < dim; ++x)
                    for (int c = 0; c < 3; ++c) sheet.at(gy * dim + y, gx * dim + x, c) = s.at(y, x, c);
        }
    write_png(out / "samples.png", sheet);
    std::cout << "held-out style accuracy " << trainer.style_accuracy(images) << "\n";
    return 0;
}

int cmd_eval_generate(const CommonArgs& common, const std::string& model, int n, long long base_seed) {
    Config cfg = load_config(common);
    const fs::path out = prepare_out(cfg, common);
    auto sampler = build_model(cfg, model);
    auto prompts = cfg.get_str_list("eval.prompts", {"painting", "drawing", "art"});
    auto set = eval::generate_eval_set(*sampler, prompts, static_cast<std::uint64_t>(base_seed), n);
    eval::save_eval_set(set, out, cfg.hash());
    std::cout << "wrote " << set.size() << " images to " << out.string() << "\n";
    return 0;
}

int cmd_eval_score(const CommonArgs& common, const std::vector<std::string>& eval_dirs) {
    Config cfg = load_config(common);
    const fs::path out = prepare_out(cfg, common);
    auto suite = backends::make_suite(cfg);
    std::vector<eval::ScoreTable> tables;
    std::vector<std::pair<std::string, std::vector<Real>>> ava_groups, ir_groups;
    for (const auto& dir : eval_dirs) {
        auto set = eval::load_eval_set(dir);
        tables.push_back(eval::score_eval_set(set, suite.aesthetic.get(), suite.image_reward.get()));
        std::vector<Real> ava, ir;
        for (std::size_t i = 0; i < set.items.size(); ++i) {
            if (set.items[i].failed) continue;
            ava.push_back(suite.aesthetic->aesthetic_score(set.images[i]));
            ir.push_back(suite.image_reward->image_reward_score(set.items[i].prompt, set.images[i]));
        }
        ava_groups.emplace_back(set.model, std::move(ava));
        ir_groups.emplace_back(set.model, std::move(ir));
    }
    eval::write_score_csv(out / "scores.csv", tables);
    // quartile CSVs + box renders
    auto write_quartiles = [&](const fs::path& path,
                               const std::vector<std::pair<std::string, std::vector<Real>>>& groups) {
        std::ofstream q(path);
        q << "model,min,q1,median,q3,max\n";
        for (const auto& [name, vals] : groups) {
            auto qu = plot::quartiles(vals);
            q << name << "," << qu.min << "," << qu.q1 << "," << qu.median << "," << qu.q3 << "," << qu.max << "\n";
        }
    };
    write_quartiles(out / "ava_quartiles.csv", ava_groups);
    write_quartiles(out / "image_reward_quartiles.csv", ir_groups);
    plot::box_plot_png(out / "ava_box.png", ava_groups, "ava");
    plot::box_plot_png(out / "image_reward_box.png", ir_groups, "image reward");
    for (const auto& t : tables)
        for (const auto& [metric, cell] : t.cells)
            std::cout << t.model << " " << metric << " " << eval::format_cell(cell.mean, cell.stddev) << "\n";
    return 0;
}

int cmd_eval_similarity(const CommonArgs& common, const std::vector<std::string>& eval_dirs,
                        const std::string& mode) {
    Config cfg = load_config(common);
    const fs::path out = prepare_out(cfg, common);
    auto suite = backends::make_suite(cfg);
    std::vector<eval::EvalSet> sets;
    for (const auto& dir : eval_dirs) sets.push_back(eval::load_eval_set(dir));
    const auto m = mode == "style" ? eval::EmbeddingMode::style : eval::EmbeddingMode::content;
    if (mode != "style" && mode != "content") throw config_error("--mode must be content or style");
    auto mat = eval::similarity_matrix(sets, *suite.embedder, m);
    eval::write_similarity_csv(out / (mode + "_similarity.csv"), mat);
    std::cout << "wrote " << (out / (mode + "_similarity.csv")).string() << "\n";
    return 0;
}

int cmd_eval_space(const CommonArgs& common, const std::vector<std::string>& eval_dirs) {
    Config cfg = load_config(common);
    const fs::path out = prepare_out(cfg, common);
    auto suite = backends::make_suite(cfg);
    std::vector<eval::EvalSet> sets;
    for (const auto& dir : eval_dirs) sets.push_back(eval::load_eval_set(dir));
    auto pts = eval::possibility_space(sets, *suite.embedder, run_seed(cfg),
                                       static_cast<int>(cfg.get_int("eval.pca_dim", 50)),
                                       cfg.get_real("eval.perplexity", 30.0),
                                       static_cast<int>(cfg.get_int("eval.tsne_iters", 1000)));
    eval::write_space_csv(out / "space.csv", pts);
    std::vector<std::string> names;
    std::vector<plot::ScatterPoint> spts;
    for (const auto& p : pts) {
        auto it = std::find(names.begin(), names.end(), p.model);
        if (it == names.end()) {
            names.push_back(p.model);
            it = names.end() - 1;
        }
        spts.push_back({p.x, p.y, static_cast<std::size_t>(it - names.begin())});
    }
    plot::scatter_png(out / "space.png", spts, names, "possibility space");
    std::cout << "wrote " << (out / "space.csv").string() << "\n";
    return 0;
}

int cmd_report(const CommonArgs& common, const std::vector<std::string>& eval_dirs,
               const std::string& subset_report) {
    Config cfg = load_config(common);
    const fs::path out = prepare_out(cfg, common);
    auto suite = backends::make_suite(cfg);

    std::ofstream md(out / "report.md");
    md << "# run report\n\n";

    if (!eval_dirs.empty()) {
        md << "## scores\n\n| model | ava | image reward |\n|---|---|---|\n";
        std::vector<eval::EvalSet> sets;
        for (const auto& dir : eval_dirs) sets.push_back(eval::load_eval_set(dir));
        for (const auto& set : sets) {
            auto t = eval::score_eval_set(set, suite.aesthetic.get(), suite.image_reward.get());
            md << "| " << set.model << " | " << eval::format_cell(t.cells["ava"].mean, t.cells["ava"].stddev)
               << " | " << eval::format_cell(t.cells["image_reward"].mean, t.cells["image_reward"].stddev)
               << " |\n";
        }
        if (sets.size() >= 2) {
            for (auto mode : {eval::EmbeddingMode::content, eval::EmbeddingMode::style}) {
                auto mat = eval::similarity_matrix(sets, *suite.embedder, mode);
                md << "\n## " << (mode == eval::EmbeddingMode::content ? "content" : "style")
                   << " similarities\n\n|  |";
                for (const auto& m : mat.models) md << " " << m << " |";
                md << "\n|---|";
                for (std::size_t i = 0; i < mat.models.size(); ++i) md << "---|";
                md << "\n";
                for (std::size_t a = 0; a < mat.models.size(); ++a) {
                    md << "| " << mat.models[a] << " |";
                    char buf[32];
                    for (std::size_t b = 0; b < mat.models.size(); ++b) {
                        std::snprintf(buf, sizeof(buf), " %.2f |", mat.at(a, b));
                        md << buf;
                    }
                    md << "\n";
                }
            }
        }
    }

    // subset-report schema validation against the reference row
    md << "\n## mediums subset\n\n";
    const auto ref = labels::mediums_reference_row();
    if (!subset_report.empty()) {
        std::ifstream in(subset_report);
        require(static_cast<bool>(in), "report: cannot read subset report " + subset_report);
        std::string header;
        std::getline(in, header);
        require(header == "style_class,quantity,percentage",
                "report: subset report schema mismatch (expected style_class,quantity,percentage)");
        md << "| style class | quantity | percentage |\n|---|---|---|\n";
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::string cell = line;
            for (auto& ch : cell)
                if (ch == ',') ch = '|';
            md << "| " << cell << " |\n";
        }
    }
    char refbuf[96];
    std::snprintf(refbuf, sizeof(refbuf), "reference row: %s,%lld,%.2f\n", ref.style_class.c_str(),
                  static_cast<long long>(ref.quantity), ref.percentage);
    md << "\n" << refbuf;
    std::cout << "wrote " << (out / "report.md").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"muse: creative fine-tuning and evaluation toolkit"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string dataset, model, mode = "content", subset_report;
    std::vector<std::string> eval_dirs;
    int k = 10, n = 100;
    long long base_seed = 0;
    bool list_grid = false;

    auto* subset = app.add_subcommand("subset-mediums", "build the caption-driven subset");
    add_common(subset, common);
    subset->add_option("--dataset", dataset, "dataset dir or toy:<seed>:<n>:<dim>");

    auto* clusters = app.add_subcommand("fit-clusters", "k-means over image embeddings");
    add_common(clusters, common);
    clusters->add_option("--dataset", dataset, "dataset dir or toy:<seed>:<n>:<dim>");
    clusters->add_option("--k", k, "number of centers");

    auto* disc = app.add_subcommand("train-disc", "pretrain the discriminator style head");
    add_common(disc, common);
    disc->add_option("--dataset", dataset, "dataset dir or toy:<seed>:<n>:<dim>");

    auto* ddpo_cmd = app.add_subcommand("train-ddpo", "policy-gradient fine-tuning");
    add_common(ddpo_cmd, common);

    auto* can_cmd = app.add_subcommand("train-can", "adversarial baseline training");
    add_common(can_cmd, common);
    can_cmd->add_option("--dataset", dataset, "dataset dir or toy:<seed>:<n>:<dim>");
    can_cmd->add_flag("--list-grid", list_grid, "print the 16 ablation-grid configurations and exit");

    auto* gen = app.add_subcommand("eval-generate", "paired-seed evaluation set");
    add_common(gen, common);
    gen->add_option("--model", model, "noise | can:<ckpt> | diffusion:<ckpt>")->required();
    gen->add_option("--n", n, "set size");
    gen->add_option("--base-seed", base_seed, "pairing seed");

    auto* score = app.add_subcommand("eval-score", "score eval sets");
    add_common(score, common);
    score->add_option("--eval-dir", eval_dirs, "eval-set directories")->required()->take_all();

    auto* sim = app.add_subcommand("eval-similarity", "cross-model similarity matrix");
    add_common(sim, common);
    sim->add_option("--eval-dir", eval_dirs, "eval-set directories")->required()->take_all();
    sim->add_option("--mode", mode, "content | style");

    auto* space = app.add_subcommand("eval-space", "2d possibility-space projection");
    add_common(space, common);
    space->add_option("--eval-dir", eval_dirs, "eval-set directories")->required()->take_all();

    auto* report = app.add_subcommand("report", "combined run report");
    add_common(report, common);
    report->add_option("--eval-dir", eval_dirs, "eval-set directories")->take_all();
    report->add_option("--subset-report", subset_report, "subset report csv to validate and include");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (subset->parsed()) return cmd_subset_mediums(common, dataset);
        if (clusters->parsed()) return cmd_fit_clusters(common, dataset, k);
        if (disc->parsed()) return cmd_train_disc(common, dataset);
        if (ddpo_cmd->parsed()) return cmd_train_ddpo(common);
        if (can_cmd->parsed()) return cmd_train_can(common, dataset, list_grid);
        if (gen->parsed()) return cmd_eval_generate(common, model, n, base_seed);
        if (score->parsed()) return cmd_eval_score(common, eval_dirs);
        if (sim->parsed()) return cmd_eval_similarity(common, eval_dirs, mode);
        if (space->parsed()) return cmd_eval_space(common, eval_dirs);
        if (report->parsed()) return cmd_report(common, eval_dirs, subset_report);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
