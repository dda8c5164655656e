#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "muse/backends.hpp"
#include "muse/common.hpp"
#include "muse/image.hpp"
#include "muse/tensor.hpp"

// The three interchangeable style classifiers and the ambiguity functional.
namespace muse::style {

constexpr Real kEpsProb = 1e-12;  // probability clamp before any log
constexpr Real kEpsDist = 1e-6;   // distance floor before inversion

struct StyleDistribution {
    std::vector<Real> probs;
    std::vector<std::string> labels;

    int n() const { return static_cast<int>(probs.size()); }

    void validate() const {
        require_shape(probs.size() >= 2, "StyleDistribution: need at least 2 classes");
        require_shape(labels.empty() || labels.size() == probs.size(), "StyleDistribution: label count mismatch");
        Real sum = 0.0;
        for (Real p : probs) {
            require(std::isfinite(p) && p >= 0.0, "StyleDistribution: invalid probability");
            sum += p;
        }
        require(std::abs(sum - 1.0) <= 1e-9, "StyleDistribution: probabilities must sum to 1");
    }
};

struct UniformTarget {
    int n_classes = 0;
};

struct ClusterModel {
    std::vector<Real> centers;  // k x dim, row-major
    int k = 0;
    int dim = 0;
    std::uint64_t seed = 0;
    Real inertia = 0.0;

    const Real* center(int j) const { return centers.data() + static_cast<std::size_t>(j) * dim; }

    void validate() const {
        require(k >= 2, "ClusterModel: k must be >= 2");
        require(dim > 0, "ClusterModel: dim must be positive");
        require(centers.size() == static_cast<std::size_t>(k) * dim, "ClusterModel: centers size mismatch");
        for (Real v : centers) require(std::isfinite(v), "ClusterModel: non-finite center");
        require(inertia >= 0.0, "ClusterModel: negative inertia");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["k"] = k;
        j["dim"] = dim;
        j["seed"] = seed;
        j["inertia"] = inertia;
        auto rows = nlohmann::ordered_json::array();
        for (int r = 0; r < k; ++r) {
            auto row = nlohmann::ordered_json::array();
            for (int c = 0; c < dim; ++c) row.push_back(centers[static_cast<std::size_t>(r) * dim + c]);
            rows.push_back(std::move(row));
        }
        j["centers"] = std::move(rows);
        return j;
    }

    static ClusterModel from_json(const nlohmann::json& j) {
        ClusterModel m;
        m.k = j.at("k").get<int>();
        m.dim = j.at("dim").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.inertia = j.at("inertia").get<Real>();
        for (const auto& row : j.at("centers"))
            for (const auto& v : row) m.centers.push_back(v.get<Real>());
        m.validate();
        return m;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        require(static_cast<bool>(out), "ClusterModel::save: cannot write " + path);
        out << to_json().dump(2) << "\n";
    }

    static ClusterModel load(const std::string& path) {
        std::ifstream in(path);
        require(static_cast<bool>(in), "ClusterModel::load: cannot read " + path);
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }
};

// Numerically stable softmax with optional temperature (tau = 1 everywhere
// by default, matching the formulas this implements).
inline std::vector<Real> softmax(const std::vector<Real>& scores, Real tau = 1.0) {
    require_shape(!scores.empty(), "softmax: empty input");
    require(tau > 0.0, "softmax: temperature must be positive");
    Real m = scores[0];
    for (Real s : scores) m = std::max(m, s);
    std::vector<Real> out(scores.size());
    Real z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp((scores[i] - m) / tau);
        z += out[i];
    }
    for (auto& p : out) p /= z;
    return out;
}

inline void check_labels(const std::vector<std::string>& labels) {
    require(labels.size() >= 2, "labels: need at least 2 classes");
    std::set<std::string> seen;
    for (const auto& l : labels) {
        require(!l.empty(), "labels: empty label");
        require(seen.insert(l).second, "labels: duplicate label '" + l + "'");
    }
}

// softmax over the text-image similarity of each class name, label order
// preserved; class names are used verbatim as the query text.
inline StyleDistribution classify_zero_shot(const Image& image, const std::vector<std::string>& labels,
                                            const backends::SimilarityBackend& sim, Real tau = 1.0) {
    check_labels(labels);
    std::vector<Real> scores;
    scores.reserve(labels.size());
    for (const auto& l : labels) scores.push_back(sim.similarity(l, image).value);
    StyleDistribution d{softmax(scores, tau), labels};
    d.validate();
    return d;
}

// softmax over inverse Euclidean distances to the k centers; distances are
// floored at kEpsDist so a point sitting on a center stays finite.
inline StyleDistribution classify_kmeans(const Image& image, const ClusterModel& clusters,
                                         const backends::EmbedderBackend& embedder, Real tau = 1.0) {
    clusters.validate();
    const auto e = embedder.embed_image(image);
    require_shape(e.dim() == clusters.dim,
                  "classify_kmeans: embedder dim " + std::to_string(e.dim()) + " != cluster dim " +
                      std::to_string(clusters.dim));
    std::vector<Real> scores(static_cast<std::size_t>(clusters.k));
    for (int j = 0; j < clusters.k; ++j) {
        Real d2 = 0.0;
        const Real* c = clusters.center(j);
        for (int i = 0; i < clusters.dim; ++i) {
            const Real diff = e.values[static_cast<std::size_t>(i)] - c[i];
            d2 += diff * diff;
        }
        scores[static_cast<std::size_t>(j)] = 1.0 / std::max(std::sqrt(d2), kEpsDist);
    }
    std::vector<std::string> labels(static_cast<std::size_t>(clusters.k));
    for (int j = 0; j < clusters.k; ++j) labels[static_cast<std::size_t>(j)] = "cluster_" + std::to_string(j);
    StyleDistribution d{softmax(scores, tau), std::move(labels)};
    d.validate();
    return d;
}

// softmax of the discriminator style head's logits. StyleHead provides
// image_dim(), n_styles() and style_logits(image).
template <typename StyleHead>
StyleDistribution classify_discriminator(const Image& image, const StyleHead& head, Real tau = 1.0) {
    require_image(image, "classify_discriminator");
    require_shape(image.h == head.image_dim() && image.w == head.image_dim(),
                  "classify_discriminator: image resolution " + std::to_string(image.h) + "x" +
                      std::to_string(image.w) + " does not match discriminator resolution " +
                      std::to_string(head.image_dim()));
    const std::vector<Real> logits = head.style_logits(image);
    require_shape(static_cast<int>(logits.size()) == head.n_styles(), "classify_discriminator: logit count mismatch");
    std::vector<std::string> labels(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) labels[j] = "style_" + std::to_string(j);
    StyleDistribution d{softmax(logits, tau), std::move(labels)};
    d.validate();
    return d;
}

// Cross-entropy against the uniform target, oriented so it actually depends
// on the prediction: -(1/N) sum_i log c_i. Minimum ln N, attained exactly at
// the uniform distribution.
inline Real style_ambiguity(const StyleDistribution& dist) {
    dist.validate();
    Real acc = 0.0;
    for (Real p : dist.probs) acc += std::log(std::max(p, kEpsProb));
    return -acc / static_cast<Real>(dist.n());
}

inline Real style_classification_loss(const StyleDistribution& dist, int true_label_index) {
    dist.validate();
    require(true_label_index >= 0 && true_label_index < dist.n(),
            "style_classification_loss: label index out of range");
    return -std::log(std::max(dist.probs[static_cast<std::size_t>(true_label_index)], kEpsProb));
}

// In-graph variants used by the training losses. logits: (batch, N).
// Mean over the batch of -(1/N) sum_i log softmax(logits)_i.
inline tensor::Tensor ambiguity_from_logits(const tensor::Tensor& logits) {
    tensor::Tensor per_sample = tensor::neg(tensor::mean_cols(tensor::log_softmax_rows(logits)));
    return tensor::mean_all(per_sample);
}

// Mean over the batch of -log softmax(logits)[label].
inline tensor::Tensor classification_loss_from_logits(const tensor::Tensor& logits,
                                                      const std::vector<int>& label_indices) {
    require_shape(static_cast<int>(label_indices.size()) == logits.rows(),
                  "classification_loss_from_logits: batch size mismatch");
    std::vector<Real> onehot(static_cast<std::size_t>(logits.rows()) * logits.cols(), 0.0);
    for (int r = 0; r < logits.rows(); ++r) {
        const int idx = label_indices[static_cast<std::size_t>(r)];
        require(idx >= 0 && idx < logits.cols(), "classification_loss_from_logits: label index out of range");
        onehot[static_cast<std::size_t>(r) * logits.cols() + idx] = 1.0;
    }
    tensor::Tensor mask = tensor::Tensor::from_data(logits.rows(), logits.cols(), std::move(onehot));
    tensor::Tensor picked = tensor::sum_cols(tensor::mul(tensor::log_softmax_rows(logits), mask));
    return tensor::neg(tensor::mean_all(picked));
}

// Classifier interface consumed by the reward stack.
class StyleClassifier {
public:
    virtual ~StyleClassifier() = default;
    virtual StyleDistribution classify(const Image& image) const = 0;
    virtual int n_classes() const = 0;
};

class ZeroShotClassifier : public StyleClassifier {
public:
    ZeroShotClassifier(std::vector<std::string> labels, std::shared_ptr<backends::SimilarityBackend> sim,
                       Real tau = 1.0)
        : labels_(std::move(labels)), sim_(std::move(sim)), tau_(tau) {
        check_labels(labels_);
    }

    StyleDistribution classify(const Image& image) const override {
        return classify_zero_shot(image, labels_, *sim_, tau_);
    }
    int n_classes() const override { return static_cast<int>(labels_.size()); }

private:
    std::vector<std::string> labels_;
    std::shared_ptr<backends::SimilarityBackend> sim_;
    Real tau_;
};

class KMeansClassifier : public StyleClassifier {
public:
    KMeansClassifier(ClusterModel clusters, std::shared_ptr<backends::EmbedderBackend> embedder, Real tau = 1.0)
        : clusters_(std::move(clusters)), embedder_(std::move(embedder)), tau_(tau) {
        clusters_.validate();
    }

    StyleDistribution classify(const Image& image) const override {
        return classify_kmeans(image, clusters_, *embedder_, tau_);
    }
    int n_classes() const override { return clusters_.k; }

private:
    ClusterModel clusters_;
    std::shared_ptr<backends::EmbedderBackend> embedder_;
    Real tau_;
};

}  // namespace muse::style
