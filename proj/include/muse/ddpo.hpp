#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "muse/archive.hpp"
#include "muse/common.hpp"
#include "muse/diffusion.hpp"
#include "muse/nn.hpp"
#include "muse/parallel.hpp"
#include "muse/reward.hpp"
#include "muse/tensor.hpp"

// Policy-gradient fine-tuning of the denoising policy: clipped importance
// ratios, per-prompt-normalized advantages broadcast over all timesteps, and
// low-rank adapters as the only trainable parameters.
namespace muse::ddpo {

using tensor::Tensor;

struct TrainerConfig {
    int epochs = 25;
    int effective_batch = 8;
    int batches_per_epoch = 32;
    int inference_steps = 30;
    int adapter_rank = 4;
    Real adapter_alpha = 4.0;
    Real lr = 0.0015;
    Real beta1 = 0.9;
    Real beta2 = 0.99;
    Real weight_decay = 1e-4;
    Real adam_eps = 1e-8;
    Real clip_range = 0.2;
    Real max_grad_norm = 1.0;  // <= 0 disables
    Real eta = 1.0;
    std::uint64_t seed = 0;
    std::vector<std::string> prompts = {"painting", "drawing", "art"};

    void validate() const {
        require_cfg(epochs > 0 && effective_batch > 0 && batches_per_epoch > 0 && inference_steps > 0,
                "TrainerConfig: loop sizes must be positive");
        require_cfg(adapter_rank > 0 && adapter_alpha > 0.0, "TrainerConfig: adapter shape must be positive");
        require_cfg(lr > 0.0 && adam_eps > 0.0, "TrainerConfig: optimizer constants must be positive");
        require_cfg(clip_range > 0.0 && clip_range < 1.0, "TrainerConfig: clip_range must lie in (0,1)");
        require_cfg(eta > 0.0 && eta <= 1.0, "TrainerConfig: eta must lie in (0,1] during RL");
        require_cfg(!prompts.empty(), "TrainerConfig: prompts must not be empty");
    }
};

// min(r A, clip(r, 1-eps, 1+eps) A) with r = exp(logp_new - logp_old);
// ascent on this is the update rule.
inline Real clipped_objective(Real logp_new, Real logp_old, Real advantage, Real clip_range) {
    require(std::isfinite(logp_new) && std::isfinite(logp_old) && std::isfinite(advantage),
            "clipped_objective: non-finite input");
    const Real r = std::exp(logp_new - logp_old);
    const Real clipped = std::clamp(r, 1.0 - clip_range, 1.0 + clip_range);
    return std::min(r * advantage, clipped * advantage);
}

// Batched graph form; rows are timesteps. logp_old and advantage enter as
// constants.
inline Tensor clipped_objective_graph(const Tensor& logp_new, const Tensor& logp_old, const Tensor& advantage,
                                      Real clip_range) {
    Tensor r = tensor::exp_(tensor::sub(logp_new, logp_old));
    Tensor unclipped = tensor::mul(r, advantage);
    Tensor clipped = tensor::mul(tensor::clamp(r, 1.0 - clip_range, 1.0 + clip_range), advantage);
    return tensor::minimum(unclipped, clipped);
}

// Two-layer context-conditioned noise predictor: the denoising policy used
// for desk-scale runs. Input row = [x_t | t/T | context].
class MlpPolicy : public diffusion::DenoisingPolicy {
public:
    static MlpPolicy create(Rng& rng, int sample_dim, int context_dim, int hidden) {
        MlpPolicy p;
        p.dim_ = sample_dim;
        p.ctx_ = context_dim;
        p.hidden_ = hidden;
        p.l1_.base = nn::Linear::create(rng, sample_dim + 1 + context_dim, hidden);
        p.l2_.base = nn::Linear::create(rng, hidden, sample_dim);
        return p;
    }

    int sample_dim() const override { return dim_; }
    int context_dim() const override { return ctx_; }

    Tensor predict_noise(const Tensor& x, const Tensor& t_norm, const Tensor& context) const override {
        require_shape(x.cols() == dim_, "MlpPolicy: sample dim mismatch");
        require_shape(context.cols() == ctx_, "MlpPolicy: context dim mismatch");
        Tensor in = tensor::concat_cols(tensor::concat_cols(x, t_norm), context);
        Tensor h = tensor::tanh_(l1_.forward(in));
        return l2_.forward(h);
    }

    void attach_adapters(Rng& rng, int rank, Real alpha) {
        l1_.attach(rng, rank, alpha);
        l2_.attach(rng, rank, alpha);
    }
    bool has_adapters() const { return l1_.has_adapter; }

    std::vector<Tensor*> trainable_params() {
        std::vector<Tensor*> out;
        l1_.collect_trainable(out);
        l2_.collect_trainable(out);
        return out;
    }

    std::vector<Tensor*> frozen_params() {
        std::vector<Tensor*> out;
        l1_.collect_frozen(out);
        l2_.collect_frozen(out);
        return out;
    }

    nn::AdaptedLinear& layer1() { return l1_; }
    nn::AdaptedLinear& layer2() { return l2_; }

    std::int64_t total_param_count() const {
        std::int64_t n = l1_.base.param_count() + l2_.base.param_count();
        if (l1_.has_adapter) n += l1_.adapter.param_count();
        if (l2_.has_adapter) n += l2_.adapter.param_count();
        return n;
    }

    std::int64_t trainable_param_count() const {
        std::int64_t n = 0;
        if (l1_.has_adapter) n += l1_.adapter.param_count();
        if (l2_.has_adapter) n += l2_.adapter.param_count();
        return n;
    }

    void save(const std::filesystem::path& path, const std::string& config_hash) const {
        std::vector<std::pair<std::string, const Tensor*>> t = {
            {"l1.w", &l1_.base.w}, {"l1.b", &l1_.base.b}, {"l2.w", &l2_.base.w}, {"l2.b", &l2_.base.b}};
        Tensor scales;
        if (l1_.has_adapter) {
            scales = Tensor::from_data(1, 2, {l1_.adapter.scale, l2_.adapter.scale});
            t.push_back({"l1.lora.a", &l1_.adapter.a});
            t.push_back({"l1.lora.b", &l1_.adapter.b});
            t.push_back({"l2.lora.a", &l2_.adapter.a});
            t.push_back({"l2.lora.b", &l2_.adapter.b});
            t.push_back({"lora.scales", &scales});
        }
        archive::save_tensors(path, t, config_hash);
    }

    void load(const std::filesystem::path& path) {
        auto t = archive::load_tensors(path);
        auto grab = [&](const std::string& name) {
            auto it = t.find(name);
            require(it != t.end(), "MlpPolicy::load: missing tensor " + name);
            std::vector<Real> data = it->second.value();
            return Tensor::from_data(it->second.rows(), it->second.cols(), std::move(data), /*requires_grad=*/true);
        };
        l1_.base.w = grab("l1.w");
        l1_.base.b = grab("l1.b");
        l2_.base.w = grab("l2.w");
        l2_.base.b = grab("l2.b");
        dim_ = l2_.base.w.rows();
        hidden_ = l1_.base.w.rows();
        ctx_ = l1_.base.w.cols() - dim_ - 1;
        if (t.count("l1.lora.a")) {
            const auto& scales = t.at("lora.scales");
            l1_.has_adapter = true;
            l1_.adapter.a = grab("l1.lora.a");
            l1_.adapter.b = grab("l1.lora.b");
            l1_.adapter.rank = l1_.adapter.a.cols();
            l1_.adapter.scale = scales.value()[0];
            l2_.has_adapter = true;
            l2_.adapter.a = grab("l2.lora.a");
            l2_.adapter.b = grab("l2.lora.b");
            l2_.adapter.rank = l2_.adapter.a.cols();
            l2_.adapter.scale = scales.value()[1];
        }
    }

private:
    nn::AdaptedLinear l1_, l2_;
    int dim_ = 0, ctx_ = 0, hidden_ = 0;
};

struct RewardStack {
    reward::RewardConfig config;
    std::shared_ptr<style::StyleClassifier> classifier;  // null for kind none
    std::shared_ptr<backends::SimilarityBackend> similarity;
};

struct EpochStats {
    int epoch = 0;
    Real mean_reward = 0.0;
    Real mean_advantage = 0.0;
    Real mean_novelty = 0.0;
    Real clip_fraction = 0.0;
    Real grad_norm = 0.0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["epoch"] = epoch;
        j["mean_reward"] = mean_reward;
        j["mean_advantage"] = mean_advantage;
        j["mean_novelty"] = mean_novelty;
        j["clip_fraction"] = clip_fraction;
        j["grad_norm"] = grad_norm;
        return j;
    }
};

class Trainer {
public:
    Trainer(std::shared_ptr<MlpPolicy> policy, TrainerConfig config, RewardStack stack,
            std::shared_ptr<diffusion::LatentCodec> codec, diffusion::NoiseSchedule schedule,
            std::function<std::vector<Real>(const std::string&)> encode_prompt)
        : policy_(std::move(policy)),
          config_(std::move(config)),
          stack_(std::move(stack)),
          codec_(std::move(codec)),
          schedule_(std::move(schedule)),
          encode_prompt_(std::move(encode_prompt)),
          opt_(config_.lr, config_.beta1, config_.beta2, config_.adam_eps, config_.weight_decay) {
        config_.validate();
        stack_.config.validate();
        require(policy_->has_adapters(), "Trainer: policy must carry adapters (frozen base contract)");
        require(codec_->latent_dim() == policy_->sample_dim(), "Trainer: codec/policy dim mismatch");
        for (const auto& p : config_.prompts) context_cache_[p] = encode_prompt_(p);
    }

    // One sampling round followed by one gradient epoch over it.
    EpochStats train_epoch(int epoch_index) {
        const int total = config_.batches_per_epoch * config_.effective_batch;
        Rng erng = Rng::stream(config_.seed, 0x5000u + static_cast<std::uint64_t>(epoch_index));

        // -- sampling phase (parallel across trajectories) --
        std::vector<std::string> prompts(static_cast<std::size_t>(total));
        std::vector<std::uint64_t> seeds(static_cast<std::size_t>(total));
        for (int i = 0; i < total; ++i) {
            prompts[static_cast<std::size_t>(i)] = config_.prompts[erng.index(config_.prompts.size())];
            seeds[static_cast<std::size_t>(i)] =
                derive_seed(config_.seed, (static_cast<std::uint64_t>(epoch_index) << 32) | static_cast<std::uint64_t>(i));
        }
        std::vector<diffusion::Trajectory> trajs(static_cast<std::size_t>(total));
        std::vector<reward::RewardRecord> records(static_cast<std::size_t>(total));
        parallel_for(static_cast<std::size_t>(total), [&](std::size_t i) {
            const auto& prompt = prompts[i];
            trajs[i] = diffusion::sample_trajectory(*policy_, prompt, context_cache_.at(prompt),
                                                    config_.inference_steps, schedule_, config_.eta, seeds[i]);
            const Image img = codec_->decode(trajs[i].x0());
            records[i] = reward::creative_reward(img, prompt, stack_.classifier.get(), *stack_.similarity,
                                                 stack_.config, static_cast<long long>(i));
        });

        // -- per-prompt normalization over the whole round --
        std::vector<Real> raw(static_cast<std::size_t>(total));
        for (int i = 0; i < total; ++i) raw[static_cast<std::size_t>(i)] = records[static_cast<std::size_t>(i)].total;
        const std::vector<Real> advantages = reward::update_and_normalize_batch(tracker_, prompts, raw);

        if (reward_log_) {
            for (int i = 0; i < total; ++i)
                reward_log_->append(records[static_cast<std::size_t>(i)].to_json(advantages[static_cast<std::size_t>(i)]));
        }

        // -- one gradient epoch over the sampled round --
        EpochStats stats;
        stats.epoch = epoch_index;
        auto params = policy_->trainable_params();
        long long clipped_steps = 0;
        long long total_steps = 0;
        Real grad_norm_acc = 0.0;
        int steps_taken = 0;

        for (int b = 0; b < config_.batches_per_epoch; ++b) {
            std::vector<Tensor> acc;
            for (int j = 0; j < config_.effective_batch; ++j) {
                const int i = b * config_.effective_batch + j;
                Tensor loss = trajectory_loss(trajs[static_cast<std::size_t>(i)],
                                              advantages[static_cast<std::size_t>(i)], clipped_steps, total_steps);
                auto grads = tensor::grad(loss, upcast(params));
                if (acc.empty()) {
                    acc = std::move(grads);
                } else {
                    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] = tensor::add(acc[k], grads[k]).detach();
                }
            }
            for (auto& g : acc) g = tensor::scale(g, 1.0 / static_cast<Real>(config_.effective_batch)).detach();
            if (!nn::all_zero(acc)) {  // epochs with no signal leave parameters untouched
                const Real norm = nn::grad_norm(acc);
                grad_norm_acc += norm;
                if (config_.max_grad_norm > 0.0 && norm > config_.max_grad_norm)
                    for (auto& g : acc) g = tensor::scale(g, config_.max_grad_norm / norm).detach();
                opt_.step(params, acc);
                ++steps_taken;
            }
        }

        for (int i = 0; i < total; ++i) {
            stats.mean_reward += records[static_cast<std::size_t>(i)].total;
            stats.mean_novelty += records[static_cast<std::size_t>(i)].novelty_term;
            stats.mean_advantage += advantages[static_cast<std::size_t>(i)];
        }
        stats.mean_reward /= total;
        stats.mean_novelty /= total;
        stats.mean_advantage /= total;
        stats.clip_fraction = total_steps > 0 ? static_cast<Real>(clipped_steps) / static_cast<Real>(total_steps) : 0.0;
        stats.grad_norm = steps_taken > 0 ? grad_norm_acc / steps_taken : 0.0;
        require(std::isfinite(stats.mean_reward) && std::isfinite(stats.grad_norm),
                "train_epoch: non-finite loss statistics, aborting");
        if (epoch_log_) epoch_log_->append(stats.to_json());
        return stats;
    }

    std::vector<EpochStats> train() {
        std::vector<EpochStats> out;
        out.reserve(static_cast<std::size_t>(config_.epochs));
        for (int e = 0; e < config_.epochs; ++e) out.push_back(train_epoch(e));
        return out;
    }

    // Mean style-ambiguity CE over fresh samples from the current policy;
    // the before/after measurement used by the toy end-to-end gates.
    std::vector<Real> ambiguity_probe(int n_samples, std::uint64_t probe_seed) const {
        require(stack_.classifier != nullptr, "ambiguity_probe: no classifier in the reward stack");
        std::vector<Real> out(static_cast<std::size_t>(n_samples));
        parallel_for(static_cast<std::size_t>(n_samples), [&](std::size_t i) {
            Rng prng = Rng::stream(probe_seed, i);
            const auto& prompt = config_.prompts[prng.index(config_.prompts.size())];
            auto traj = diffusion::sample_trajectory(*policy_, prompt, context_cache_.at(prompt),
                                                     config_.inference_steps, schedule_, config_.eta,
                                                     derive_seed(probe_seed, i));
            out[i] = style::style_ambiguity(stack_.classifier->classify(codec_->decode(traj.x0())));
        });
        return out;
    }

    void set_reward_log(std::shared_ptr<archive::JsonLinesWriter> log) { reward_log_ = std::move(log); }
    void set_epoch_log(std::shared_ptr<archive::JsonLinesWriter> log) { epoch_log_ = std::move(log); }

    MlpPolicy& policy() { return *policy_; }
    const reward::PromptStatTracker& tracker() const { return tracker_; }

private:
    static std::vector<Tensor> upcast(const std::vector<Tensor*>& ptrs) {
        std::vector<Tensor> out;
        out.reserve(ptrs.size());
        for (auto* p : ptrs) out.push_back(*p);
        return out;
    }

    // Joint loss over all steps of one trajectory; advantage broadcast to
    // every timestep (the reward exists only at x0).
    Tensor trajectory_loss(const diffusion::Trajectory& traj, Real advantage, long long& clipped_steps,
                           long long& total_steps) {
        const int S = static_cast<int>(traj.steps.size());
        const int D = policy_->sample_dim();
        std::vector<Real> xt(static_cast<std::size_t>(S) * D), xp(static_cast<std::size_t>(S) * D);
        std::vector<Real> tn(static_cast<std::size_t>(S)), cxt(static_cast<std::size_t>(S)),
            ceps(static_cast<std::size_t>(S)), inv2var(static_cast<std::size_t>(S)),
            lognorm(static_cast<std::size_t>(S)), lpold(static_cast<std::size_t>(S));
        for (int i = 0; i < S; ++i) {
            const auto& st = traj.steps[static_cast<std::size_t>(i)];
            std::copy(st.x_t.begin(), st.x_t.end(), xt.begin() + static_cast<std::ptrdiff_t>(i) * D);
            std::copy(st.x_prev.begin(), st.x_prev.end(), xp.begin() + static_cast<std::ptrdiff_t>(i) * D);
            tn[static_cast<std::size_t>(i)] = static_cast<Real>(st.t) / schedule_.T();
            const auto c = diffusion::ddim_coeffs(schedule_, st.t, st.t_prev, traj.eta);
            cxt[static_cast<std::size_t>(i)] = c.c_xt;
            ceps[static_cast<std::size_t>(i)] = c.c_eps;
            inv2var[static_cast<std::size_t>(i)] = 1.0 / (2.0 * c.sigma * c.sigma);
            lognorm[static_cast<std::size_t>(i)] = -0.5 * D * std::log(2.0 * 3.14159265358979323846 * c.sigma * c.sigma);
            lpold[static_cast<std::size_t>(i)] = st.log_prob;
        }
        Tensor X_t = Tensor::from_data(S, D, std::move(xt));
        Tensor X_prev = Tensor::from_data(S, D, std::move(xp));
        Tensor T_norm = Tensor::from_data(S, 1, std::move(tn));
        std::vector<Real> ctx_rows(static_cast<std::size_t>(S) * traj.context.size());
        for (int i = 0; i < S; ++i)
            std::copy(traj.context.begin(), traj.context.end(),
                      ctx_rows.begin() + static_cast<std::ptrdiff_t>(i) * static_cast<std::ptrdiff_t>(traj.context.size()));
        Tensor Ctx = Tensor::from_data(S, static_cast<int>(traj.context.size()), std::move(ctx_rows));

        Tensor eps_hat = policy_->predict_noise(X_t, T_norm, Ctx);
        Tensor mean = tensor::add(tensor::mul(X_t, Tensor::from_data(S, 1, std::move(cxt))),
                                  tensor::mul(eps_hat, Tensor::from_data(S, 1, std::move(ceps))));
        Tensor diff = tensor::sub(X_prev, mean);
        Tensor quad = tensor::sum_cols(tensor::mul(diff, diff));
        Tensor logp_new = tensor::add(tensor::neg(tensor::mul(quad, Tensor::from_data(S, 1, std::move(inv2var)))),
                                      Tensor::from_data(S, 1, std::move(lognorm)));
        Tensor logp_old = Tensor::from_data(S, 1, lpold);
        Tensor adv = Tensor::full(S, 1, advantage);
        Tensor obj = clipped_objective_graph(logp_new, logp_old, adv, config_.clip_range);

        for (int i = 0; i < S; ++i) {
            const Real r = std::exp(logp_new.value()[static_cast<std::size_t>(i)] - lpold[static_cast<std::size_t>(i)]);
            if (r < 1.0 - config_.clip_range || r > 1.0 + config_.clip_range) ++clipped_steps;
            ++total_steps;
        }
        return tensor::neg(tensor::mean_all(obj));
    }

    std::shared_ptr<MlpPolicy> policy_;
    TrainerConfig config_;
    RewardStack stack_;
    std::shared_ptr<diffusion::LatentCodec> codec_;
    diffusion::NoiseSchedule schedule_;
    std::function<std::vector<Real>(const std::string&)> encode_prompt_;
    nn::AdamW opt_;
    reward::PromptStatTracker tracker_;
    std::map<std::string, std::vector<Real>> context_cache_;
    std::shared_ptr<archive::JsonLinesWriter> reward_log_;
    std::shared_ptr<archive::JsonLinesWriter> epoch_log_;
};

}  // namespace muse::ddpo
