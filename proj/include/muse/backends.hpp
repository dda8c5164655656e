#pragma once

#include <cmath>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "muse/common.hpp"
#include "muse/config.hpp"
#include "muse/image.hpp"
#include "muse/random.hpp"

// Uniform adapters over the pretrained scoring/embedding models plus a fully
// deterministic mock suite so every downstream module is testable offline.
// Nothing outside this module names a concrete checkpoint.
namespace muse::backends {

enum class Kind { similarity, embedder, captioner, aesthetic, image_reward, mock };

struct BackendDescriptor {
    std::string name;
    int embed_dim = 0;
    bool deterministic = false;
    Kind kind = Kind::mock;
};

struct EmbeddingVector {
    std::vector<Real> values;

    int dim() const { return static_cast<int>(values.size()); }
};

struct SimilarityScore {
    Real value = 0.0;
};

inline Real cosine(const std::vector<Real>& a, const std::vector<Real>& b) {
    require_shape(a.size() == b.size(), "cosine: dimension mismatch");
    Real dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---- interfaces ----

class SimilarityBackend {
public:
    virtual ~SimilarityBackend() = default;
    virtual BackendDescriptor descriptor() const = 0;
    virtual SimilarityScore similarity(const std::string& text, const Image& image) const = 0;
};

class EmbedderBackend {
public:
    virtual ~EmbedderBackend() = default;
    virtual BackendDescriptor descriptor() const = 0;
    virtual EmbeddingVector embed_image(const Image& image) const = 0;
    virtual EmbeddingVector embed_text(const std::string& text) const = 0;
    // the two declared channels used by the evaluation similarity matrices
    virtual EmbeddingVector embed_content(const Image& image) const { return embed_image(image); }
    virtual EmbeddingVector embed_style(const Image& image) const = 0;
};

class CaptionerBackend {
public:
    virtual ~CaptionerBackend() = default;
    virtual BackendDescriptor descriptor() const = 0;
    virtual std::string caption(const Image& image) const = 0;
};

class AestheticBackend {
public:
    virtual ~AestheticBackend() = default;
    virtual BackendDescriptor descriptor() const = 0;
    virtual Real aesthetic_score(const Image& image) const = 0;
};

class ImageRewardBackend {
public:
    virtual ~ImageRewardBackend() = default;
    virtual BackendDescriptor descriptor() const = 0;
    virtual Real image_reward_score(const std::string& text, const Image& image) const = 0;
};

// ---- deterministic mock suite ----
//
// Images are box-resampled to 8x8 gray, extended with mean/variance and a
// constant bias feature, then pushed through one seeded random projection.
// Text shares the same projection space (token feature vectors are seeded by
// token hash), so mock similarity is a plain cosine and downstream softmax
// classifiers see the same geometry they would on the real scorer.
class MockSuite : public SimilarityBackend,
                  public EmbedderBackend,
                  public CaptionerBackend,
                  public AestheticBackend,
                  public ImageRewardBackend {
public:
    static constexpr int kPatch = 8;
    static constexpr int kFeatures = kPatch * kPatch + 3;  // pixels + mean + var + bias

    explicit MockSuite(std::uint64_t seed, int embed_dim = 768,
                       std::vector<std::string> caption_words = {"painting", "drawing", "art"})
        : seed_(seed), dim_(embed_dim), caption_words_(std::move(caption_words)) {
        require(embed_dim > 0, "MockSuite: embed_dim must be positive");
        require(!caption_words_.empty(), "MockSuite: caption word list must not be empty");
        projection_ = seeded_matrix(derive_seed(seed, 1), dim_, kFeatures);
        style_projection_ = seeded_matrix(derive_seed(seed, 2), dim_, kFeatures);
        aesthetic_w_ = seeded_matrix(derive_seed(seed, 3), 1, dim_);
    }

    BackendDescriptor descriptor() const override {
        return {"mock:" + std::to_string(seed_), dim_, /*deterministic=*/true, Kind::mock};
    }

    EmbeddingVector embed_image(const Image& image) const override {
        require_image(image, "mock embed_image");
        return {project(projection_, featurize(image))};
    }

    EmbeddingVector embed_style(const Image& image) const override {
        require_image(image, "mock embed_style");
        return {project(style_projection_, featurize(image))};
    }

    EmbeddingVector embed_text(const std::string& text) const override {
        require(!text.empty(), "mock embed_text: empty text");
        return {project(projection_, text_features(text))};
    }

    SimilarityScore similarity(const std::string& text, const Image& image) const override {
        require(!text.empty(), "similarity: empty text");
        return {cosine(embed_text(text).values, embed_image(image).values)};
    }

    std::string caption(const Image& image) const override {
        require_image(image, "mock caption");
        static const char* nouns[] = {"forest", "river", "figure", "window", "storm", "garden", "portrait", "street"};
        static const char* adjs[] = {"quiet", "bright", "dark", "strange"};
        const std::uint64_t h = splitmix64(image_hash(image) ^ seed_);
        const auto& medium = caption_words_[h % caption_words_.size()];
        std::string out = "a " + std::string(adjs[(h >> 8) % 4]) + " " + medium + " of a " +
                          std::string(nouns[(h >> 16) % 8]);
        return out;
    }

    Real aesthetic_score(const Image& image) const override {
        const auto e = embed_image(image).values;
        Real z = 0.0;
        for (int i = 0; i < dim_; ++i) z += aesthetic_w_[static_cast<std::size_t>(i)] * e[static_cast<std::size_t>(i)];
        z /= std::sqrt(static_cast<Real>(dim_));
        return 1.0 + 9.0 / (1.0 + std::exp(-z));  // (1, 10), AVA-like scale
    }

    Real image_reward_score(const std::string& text, const Image& image) const override {
        return 2.0 * similarity(text, image).value;  // [-2, 2]
    }

    int embed_dim() const { return dim_; }

private:
    static std::vector<Real> seeded_matrix(std::uint64_t seed, int rows, int cols) {
        Rng rng(seed);
        std::vector<Real> m(static_cast<std::size_t>(rows) * cols);
        const Real s = 1.0 / std::sqrt(static_cast<Real>(cols));
        for (auto& v : m) v = rng.normal(0.0, s);
        return m;
    }

    std::vector<Real> project(const std::vector<Real>& mat, const std::vector<Real>& f) const {
        std::vector<Real> out(static_cast<std::size_t>(dim_), 0.0);
        for (int r = 0; r < dim_; ++r) {
            Real acc = 0.0;
            for (int c = 0; c < kFeatures; ++c)
                acc += mat[static_cast<std::size_t>(r) * kFeatures + c] * f[static_cast<std::size_t>(c)];
            out[static_cast<std::size_t>(r)] = acc;
        }
        return out;
    }

    static std::vector<Real> featurize(const Image& image) {
        const Image small = resample_box(to_gray(image), kPatch, kPatch);
        std::vector<Real> f(kFeatures, 0.0);
        Real mean = 0.0;
        for (int i = 0; i < kPatch * kPatch; ++i) {
            f[static_cast<std::size_t>(i)] = small.px[static_cast<std::size_t>(i)];
            mean += small.px[static_cast<std::size_t>(i)];
        }
        mean /= kPatch * kPatch;
        Real var = 0.0;
        for (int i = 0; i < kPatch * kPatch; ++i) {
            const Real d = small.px[static_cast<std::size_t>(i)] - mean;
            var += d * d;
        }
        var /= kPatch * kPatch;
        f[kPatch * kPatch] = mean;
        f[kPatch * kPatch + 1] = var;
        f[kPatch * kPatch + 2] = 1.0;  // bias keeps the zero image off the origin
        return f;
    }

    std::vector<Real> text_features(const std::string& text) const {
        std::vector<Real> f(kFeatures, 0.0);
        std::istringstream in(text);
        std::string token;
        int count = 0;
        while (in >> token) {
            Rng trng(derive_seed(fnv1a(token), 4));
            for (int i = 0; i < kFeatures - 1; ++i) f[static_cast<std::size_t>(i)] += trng.normal();
            ++count;
        }
        if (count > 0)
            for (int i = 0; i < kFeatures - 1; ++i) f[static_cast<std::size_t>(i)] /= count;
        f[kFeatures - 1] = 1.0;
        return f;
    }

    std::uint64_t seed_;
    int dim_;
    std::vector<std::string> caption_words_;
    std::vector<Real> projection_;
    std::vector<Real> style_projection_;
    std::vector<Real> aesthetic_w_;
};

// Similarity stub with preset per-text scores; the "mock forced" knob used by
// classifier tests.
class FixedSimilarity : public SimilarityBackend {
public:
    explicit FixedSimilarity(std::vector<std::pair<std::string, Real>> table, Real fallback = 0.0)
        : table_(std::move(table)), fallback_(fallback) {}

    BackendDescriptor descriptor() const override { return {"fixed", 0, true, Kind::similarity}; }

    SimilarityScore similarity(const std::string& text, const Image&) const override {
        require(!text.empty(), "similarity: empty text");
        for (const auto& [k, v] : table_)
            if (k == text) return {v};
        return {fallback_};
    }

private:
    std::vector<std::pair<std::string, Real>> table_;
    Real fallback_;
};

// ---- selection ----

struct Suite {
    std::shared_ptr<SimilarityBackend> similarity;
    std::shared_ptr<EmbedderBackend> embedder;
    std::shared_ptr<CaptionerBackend> captioner;
    std::shared_ptr<AestheticBackend> aesthetic;
    std::shared_ptr<ImageRewardBackend> image_reward;
};

inline std::shared_ptr<MockSuite> make_mock(const std::string& spec, int embed_dim) {
    const std::string seed_str = spec.substr(5);
    try {
        return std::make_shared<MockSuite>(std::stoull(seed_str), embed_dim);
    } catch (const std::exception&) {
        throw config_error("bad mock backend spec: " + spec);
    }
}

// Resolves one backend identifier. "mock:<seed>" is served in-process; any
// other identifier is an opaque checkpoint reference that needs a model
// provider, and this build ships none, so it reports backend-unavailable.
template <typename Interface>
std::shared_ptr<Interface> resolve(const std::string& spec, int embed_dim) {
    if (spec.rfind("mock:", 0) == 0) return make_mock(spec, embed_dim);
    throw backend_unavailable("backend '" + spec + "' cannot be loaded: no pretrained-model provider in this build");
}

inline Suite make_suite(const Config& cfg) {
    const int dim = static_cast<int>(cfg.get_int("backend.embed_dim", 768));
    Suite s;
    s.similarity = resolve<SimilarityBackend>(cfg.get_str("backend.similarity", "mock:0"), dim);
    s.embedder = resolve<EmbedderBackend>(cfg.get_str("backend.embedder", "mock:0"), dim);
    s.captioner = resolve<CaptionerBackend>(cfg.get_str("backend.captioner", "mock:0"), dim);
    s.aesthetic = resolve<AestheticBackend>(cfg.get_str("backend.aesthetic", "mock:0"), dim);
    s.image_reward = resolve<ImageRewardBackend>(cfg.get_str("backend.image_reward", "mock:0"), dim);
    return s;
}

}  // namespace muse::backends
