#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "muse/backends.hpp"
#include "muse/common.hpp"
#include "muse/style.hpp"

// Composite creative reward and the per-prompt normalizer that turns raw
// rewards into advantages.
namespace muse::reward {

constexpr Real kEpsStd = 1e-6;
constexpr int kMinCount = 2;

enum class ClassifierKind { discriminator, zero_shot, kmeans, none };

inline std::string to_string(ClassifierKind k) {
    switch (k) {
        case ClassifierKind::discriminator: return "discriminator";
        case ClassifierKind::zero_shot: return "zero_shot";
        case ClassifierKind::kmeans: return "kmeans";
        case ClassifierKind::none: return "none";
    }
    return "?";
}

inline ClassifierKind classifier_kind_from_string(const std::string& s) {
    if (s == "discriminator") return ClassifierKind::discriminator;
    if (s == "zero_shot") return ClassifierKind::zero_shot;
    if (s == "kmeans") return ClassifierKind::kmeans;
    if (s == "none") return ClassifierKind::none;
    throw config_error("unknown classifier kind: " + s);
}

struct RewardConfig {
    Real lambda_novelty = 0.0;
    Real lambda_utility = 0.0;
    ClassifierKind classifier_kind = ClassifierKind::none;

    void validate() const {
        require_cfg(lambda_novelty >= 0.0 && lambda_utility >= 0.0, "RewardConfig: lambdas must be non-negative");
        if (classifier_kind != ClassifierKind::none)
            require_cfg(lambda_novelty > 0.0 || lambda_utility > 0.0,
                    "RewardConfig: both lambdas zero is only valid for classifier_kind = none");
    }
};

struct RewardRecord {
    Real total = 0.0;
    Real novelty_term = 0.0;  // CE(C(x0), U), before the -lambda_novelty weight
    Real utility_term = 0.0;  // similarity score on the scorer's native scale
    std::string prompt;
    long long sample_id = 0;

    nlohmann::ordered_json to_json(Real advantage) const {
        nlohmann::ordered_json j;
        j["sample_id"] = sample_id;
        j["prompt"] = prompt;
        j["novelty"] = novelty_term;
        j["utility"] = utility_term;
        j["total"] = total;
        j["advantage"] = advantage;
        return j;
    }
};

// R(x0) = -lambda_novelty * CE(C(x0), U) + lambda_utility * sim(prompt, x0)
inline RewardRecord creative_reward(const Image& image, const std::string& prompt,
                                    const style::StyleClassifier* classifier,
                                    const backends::SimilarityBackend& similarity, const RewardConfig& config,
                                    long long sample_id = 0) {
    config.validate();
    RewardRecord rec;
    rec.prompt = prompt;
    rec.sample_id = sample_id;
    if (config.classifier_kind != ClassifierKind::none) {
        if (classifier == nullptr)
            throw error("creative_reward: classifier required for kind " + to_string(config.classifier_kind));
        rec.novelty_term = style::style_ambiguity(classifier->classify(image));
    }
    rec.utility_term = similarity.similarity(prompt, image).value;
    rec.total = -config.lambda_novelty * rec.novelty_term + config.lambda_utility * rec.utility_term;
    return rec;
}

// Streaming per-prompt moments (Welford), population-std convention.
class PromptStatTracker {
public:
    struct Moments {
        long long count = 0;
        Real mean = 0.0;
        Real m2 = 0.0;

        Real variance() const { return count > 0 ? m2 / static_cast<Real>(count) : 0.0; }
        Real stddev() const { return std::sqrt(variance()); }
    };

    void update(const std::string& prompt, Real reward) {
        require(std::isfinite(reward), "PromptStatTracker: non-finite reward");
        auto& m = stats_[prompt];
        m.count += 1;
        const Real delta = reward - m.mean;
        m.mean += delta / static_cast<Real>(m.count);
        m.m2 += delta * (reward - m.mean);
    }

    Real normalize(const std::string& prompt, Real reward) const {
        const auto it = stats_.find(prompt);
        require(it != stats_.end() && it->second.count > 0, "PromptStatTracker: prompt never updated");
        const auto& m = it->second;
        if (m.count < kMinCount) return reward - m.mean;  // std not yet trusted
        return (reward - m.mean) / std::max(m.stddev(), kEpsStd);
    }

    Moments moments(const std::string& prompt) const {
        const auto it = stats_.find(prompt);
        return it == stats_.end() ? Moments{} : it->second;
    }

private:
    std::map<std::string, Moments> stats_;
};

// Single-sample form: fold the reward into the tracker, then normalize it
// with the updated statistics.
inline Real update_and_normalize(PromptStatTracker& tracker, const std::string& prompt, Real raw_reward) {
    tracker.update(prompt, raw_reward);
    return tracker.normalize(prompt, raw_reward);
}

// Batch form used by the trainer: fold a whole sampling round into the
// tracker first, then normalize every sample with the final moments.
inline std::vector<Real> update_and_normalize_batch(PromptStatTracker& tracker,
                                                    const std::vector<std::string>& prompts,
                                                    const std::vector<Real>& rewards) {
    require(prompts.size() == rewards.size(), "update_and_normalize_batch: size mismatch");
    for (std::size_t i = 0; i < rewards.size(); ++i) tracker.update(prompts[i], rewards[i]);
    std::vector<Real> adv(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = tracker.normalize(prompts[i], rewards[i]);
    return adv;
}

}  // namespace muse::reward
