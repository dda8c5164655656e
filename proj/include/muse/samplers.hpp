#pragma once

#include <memory>
#include <string>
#include <utility>

#include "muse/can.hpp"
#include "muse/ddpo.hpp"
#include "muse/diffusion.hpp"
#include "muse/evaluation.hpp"

// ImageSampler adapters over the two model families, plus a trivial noise
// model for pipeline checks.
namespace muse::eval {

class DiffusionSampler : public ImageSampler {
public:
    DiffusionSampler(std::string name, std::shared_ptr<ddpo::MlpPolicy> policy, diffusion::NoiseSchedule schedule,
                     std::shared_ptr<diffusion::LatentCodec> codec,
                     std::function<std::vector<Real>(const std::string&)> encode_prompt, int steps, Real eta)
        : name_(std::move(name)),
          policy_(std::move(policy)),
          schedule_(std::move(schedule)),
          codec_(std::move(codec)),
          encode_prompt_(std::move(encode_prompt)),
          steps_(steps),
          eta_(eta) {
        require(codec_->latent_dim() == policy_->sample_dim(), "DiffusionSampler: codec/policy dim mismatch");
    }

    std::string name() const override { return name_; }

    Image sample(const std::string& prompt, std::uint64_t seed) const override {
        auto traj = diffusion::sample_trajectory(*policy_, prompt, encode_prompt_(prompt), steps_, schedule_, eta_,
                                                 seed, /*track_log_prob=*/eta_ > 0.0);
        return codec_->decode(traj.x0());
    }

private:
    std::string name_;
    std::shared_ptr<ddpo::MlpPolicy> policy_;
    diffusion::NoiseSchedule schedule_;
    std::shared_ptr<diffusion::LatentCodec> codec_;
    std::function<std::vector<Real>(const std::string&)> encode_prompt_;
    int steps_;
    Real eta_;
};

class CanSampler : public ImageSampler {
public:
    CanSampler(std::string name, std::shared_ptr<can::Generator> generator)
        : name_(std::move(name)), generator_(std::move(generator)) {}

    std::string name() const override { return name_; }

    Image sample(const std::string&, std::uint64_t seed) const override {
        return generator_->sample_image(seed);  // prompt-unconditioned
    }

private:
    std::string name_;
    std::shared_ptr<can::Generator> generator_;
};

// Seeded uniform noise; useful for exercising the evaluation pipeline
// without a trained model.
class NoiseSampler : public ImageSampler {
public:
    NoiseSampler(std::string name, int dim, int channels = 3) : name_(std::move(name)), dim_(dim), c_(channels) {}

    std::string name() const override { return name_; }

    Image sample(const std::string&, std::uint64_t seed) const override {
        Rng rng(derive_seed(seed, 0x015e));
        Image img(dim_, dim_, c_);
        for (auto& p : img.px) p = rng.uniform();
        return img;
    }

private:
    std::string name_;
    int dim_;
    int c_;
};

}  // namespace muse::eval
