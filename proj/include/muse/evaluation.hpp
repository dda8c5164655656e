#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "muse/backends.hpp"
#include "muse/common.hpp"
#include "muse/image.hpp"
#include "muse/parallel.hpp"
#include "muse/plot.hpp"
#include "muse/random.hpp"

// Paired-seed evaluation sets, metric scoring, cross-model content/style
// similarity matrices and the 2D possibility-space projection.
namespace muse::eval {

// Anything that can produce an image from (prompt, seed).
class ImageSampler {
public:
    virtual ~ImageSampler() = default;
    virtual std::string name() const = 0;
    virtual Image sample(const std::string& prompt, std::uint64_t seed) const = 0;
};

struct EvalItem {
    int index = 0;
    std::string prompt;
    std::uint64_t seed = 0;
    std::string file;   // relative png name within the archive
    bool failed = false;
};

struct EvalSet {
    std::string model;
    std::uint64_t base_seed = 0;
    std::vector<EvalItem> items;
    std::vector<Image> images;  // empty image at failed indices

    int size() const { return static_cast<int>(items.size()); }
};

// The (prompt, seed) pairing is derived from base_seed only, so every model
// evaluated with the same base_seed sees the identical sequence.
inline std::vector<std::pair<std::string, std::uint64_t>> paired_prompt_seeds(
    const std::vector<std::string>& prompts, std::uint64_t base_seed, int n) {
    require(!prompts.empty(), "paired_prompt_seeds: prompts must not be empty");
    require(n >= 1, "paired_prompt_seeds: n must be positive");
    Rng rng(derive_seed(base_seed, 0xe5a1ull));
    std::vector<std::pair<std::string, std::uint64_t>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        out.emplace_back(prompts[rng.index(prompts.size())], derive_seed(base_seed, static_cast<std::uint64_t>(i)));
    return out;
}

inline EvalSet generate_eval_set(const ImageSampler& model, const std::vector<std::string>& prompts,
                                 std::uint64_t base_seed, int n = 100) {
    const auto pairing = paired_prompt_seeds(prompts, base_seed, n);
    EvalSet set;
    set.model = model.name();
    set.base_seed = base_seed;
    set.items.resize(static_cast<std::size_t>(n));
    set.images.resize(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        auto& item = set.items[i];
        item.index = static_cast<int>(i);
        item.prompt = pairing[i].first;
        item.seed = pairing[i].second;
        char name[32];
        std::snprintf(name, sizeof(name), "img_%04d.png", static_cast<int>(i));
        item.file = name;
        try {
            set.images[i] = model.sample(item.prompt, item.seed);
        } catch (const std::exception&) {
            item.failed = true;  // recorded; the run continues
        }
    });
    return set;
}

// ---- archive: directory of PNGs + manifest.json ----

inline void save_eval_set(const EvalSet& set, const std::filesystem::path& dir, const std::string& config_hash = "") {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["model"] = set.model;
    manifest["base_seed"] = set.base_seed;
    if (!config_hash.empty()) manifest["config_hash"] = config_hash;
    auto items = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < set.items.size(); ++i) {
        const auto& it = set.items[i];
        nlohmann::ordered_json j;
        j["i"] = it.index;
        j["prompt"] = it.prompt;
        j["seed"] = it.seed;
        j["file"] = it.file;
        if (it.failed) j["failed"] = true;
        items.push_back(std::move(j));
        if (!it.failed) write_png(dir / it.file, set.images[i]);
    }
    manifest["items"] = std::move(items);
    std::ofstream out(dir / "manifest.json");
    require(static_cast<bool>(out), "save_eval_set: cannot write manifest in " + dir.string());
    out << manifest.dump(2) << "\n";
}

inline EvalSet load_eval_set(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    require(static_cast<bool>(in), "load_eval_set: missing manifest in " + dir.string());
    nlohmann::json manifest;
    in >> manifest;
    EvalSet set;
    set.model = manifest.at("model").get<std::string>();
    set.base_seed = manifest.at("base_seed").get<std::uint64_t>();
    for (const auto& j : manifest.at("items")) {
        EvalItem it;
        it.index = j.at("i").get<int>();
        it.prompt = j.at("prompt").get<std::string>();
        it.seed = j.at("seed").get<std::uint64_t>();
        it.file = j.at("file").get<std::string>();
        it.failed = j.value("failed", false);
        set.items.push_back(it);
        set.images.push_back(it.failed ? Image{} : read_png(dir / it.file));
    }
    return set;
}

// Paired semantics are a hard precondition for any cross-model comparison.
inline void require_paired(const std::vector<EvalSet>& sets) {
    require(sets.size() >= 2, "require_paired: need at least two sets");
    for (std::size_t s = 1; s < sets.size(); ++s) {
        require(sets[s].size() == sets[0].size(), "paired-seed violation: eval sets differ in size");
        for (int i = 0; i < sets[0].size(); ++i) {
            const auto& a = sets[0].items[static_cast<std::size_t>(i)];
            const auto& b = sets[s].items[static_cast<std::size_t>(i)];
            require(a.prompt == b.prompt && a.seed == b.seed,
                    "paired-seed violation: (prompt, seed) mismatch at index " + std::to_string(i));
        }
    }
}

// ---- scoring ----

struct ScoreCell {
    Real mean = 0.0;
    Real stddev = 0.0;  // population
    int scored = 0;
    int failures = 0;
};

struct ScoreTable {
    std::string model;
    std::map<std::string, ScoreCell> cells;  // metric -> cell
};

// The table convention used for report cells.
inline std::string format_cell(Real mean, Real stddev) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f ( %.2f )", mean, stddev);
    return buf;
}

inline ScoreCell summarize(const std::vector<Real>& values, int failures) {
    ScoreCell cell;
    cell.failures = failures;
    cell.scored = static_cast<int>(values.size());
    if (values.empty()) return cell;
    for (Real v : values) cell.mean += v;
    cell.mean /= static_cast<Real>(values.size());
    for (Real v : values) cell.stddev += (v - cell.mean) * (v - cell.mean);
    cell.stddev = std::sqrt(cell.stddev / static_cast<Real>(values.size()));
    return cell;
}

inline ScoreTable score_eval_set(const EvalSet& set, const backends::AestheticBackend* aesthetic,
                                 const backends::ImageRewardBackend* image_reward) {
    ScoreTable table;
    table.model = set.model;
    auto run_metric = [&](const std::string& name, auto&& score_fn) {
        std::vector<Real> values;
        int failures = 0;
        for (std::size_t i = 0; i < set.items.size(); ++i) {
            if (set.items[i].failed) {
                ++failures;
                continue;
            }
            try {
                values.push_back(score_fn(i));
            } catch (const std::exception&) {
                ++failures;  // per-image scorer failures excluded and counted
            }
        }
        table.cells[name] = summarize(values, failures);
    };
    if (aesthetic) run_metric("ava", [&](std::size_t i) { return aesthetic->aesthetic_score(set.images[i]); });
    if (image_reward)
        run_metric("image_reward",
                   [&](std::size_t i) { return image_reward->image_reward_score(set.items[i].prompt, set.images[i]); });
    return table;
}

inline void write_score_csv(const std::filesystem::path& path, const std::vector<ScoreTable>& tables) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "write_score_csv: cannot write " + path.string());
    out << "model,metric,mean,std,scored,failures,cell\n";
    for (const auto& t : tables)
        for (const auto& [metric, cell] : t.cells)
            out << t.model << "," << metric << "," << cell.mean << "," << cell.stddev << "," << cell.scored << ","
                << cell.failures << ",\"" << format_cell(cell.mean, cell.stddev) << "\"\n";
}

// ---- similarity matrices ----

enum class EmbeddingMode { content, style };

struct SimilarityMatrix {
    std::vector<std::string> models;
    std::vector<Real> values;  // square, row-major
    EmbeddingMode mode = EmbeddingMode::content;

    Real at(std::size_t a, std::size_t b) const { return values[a * models.size() + b]; }
};

inline SimilarityMatrix similarity_matrix(const std::vector<EvalSet>& sets,
                                          const backends::EmbedderBackend& embedder, EmbeddingMode mode) {
    require_paired(sets);
    const std::size_t m = sets.size();
    const int n = sets[0].size();

    // embed everything once
    std::vector<std::vector<std::vector<Real>>> embs(m);
    for (std::size_t s = 0; s < m; ++s) {
        embs[s].resize(static_cast<std::size_t>(n));
        parallel_for(static_cast<std::size_t>(n), [&, s](std::size_t i) {
            if (sets[s].items[i].failed) return;
            embs[s][i] = mode == EmbeddingMode::content ? embedder.embed_content(sets[s].images[i]).values
                                                        : embedder.embed_style(sets[s].images[i]).values;
        });
    }

    SimilarityMatrix out;
    out.mode = mode;
    for (const auto& s : sets) out.models.push_back(s.model);
    out.values.assign(m * m, 0.0);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b) {
            Real acc = 0.0;
            int counted = 0;
            for (int i = 0; i < n; ++i) {
                const auto& ea = embs[a][static_cast<std::size_t>(i)];
                const auto& eb = embs[b][static_cast<std::size_t>(i)];
                if (ea.empty() || eb.empty()) continue;
                acc += backends::cosine(ea, eb);
                ++counted;
            }
            require(counted > 0, "similarity_matrix: no scorable pairs");
            out.values[a * m + b] = acc / counted;
        }
    return out;
}

inline void write_similarity_csv(const std::filesystem::path& path, const SimilarityMatrix& mat) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "write_similarity_csv: cannot write " + path.string());
    out << "model";
    for (const auto& m : mat.models) out << "," << m;
    out << "\n";
    for (std::size_t a = 0; a < mat.models.size(); ++a) {
        out << mat.models[a];
        for (std::size_t b = 0; b < mat.models.size(); ++b) out << "," << mat.at(a, b);
        out << "\n";
    }
}

// ---- PCA ----

struct PcaResult {
    std::vector<Real> projected;  // n x out_dim
    int n = 0;
    int out_dim = 0;
    std::vector<Real> components;  // out_dim x d
};

inline PcaResult pca(const std::vector<Real>& data, int n, int d, int out_dim) {
    require(n >= 2 && d >= 1, "pca: need at least two points");
    require(static_cast<std::size_t>(n) * d == data.size(), "pca: buffer size mismatch");
    out_dim = std::min(out_dim, std::min(n - 1, d));
    require(out_dim >= 1, "pca: fewer points than components");

    using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Mat x(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = data[static_cast<std::size_t>(i) * d + j];
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;

    Eigen::BDCSVD<Mat> svd(x, Eigen::ComputeThinV);
    Mat v = svd.matrixV().leftCols(out_dim);  // d x out_dim
    // deterministic sign: largest-|loading| coordinate positive
    for (int c = 0; c < out_dim; ++c) {
        int arg = 0;
        for (int r = 1; r < d; ++r)
            if (std::abs(v(r, c)) > std::abs(v(arg, c))) arg = r;
        if (v(arg, c) < 0) v.col(c) *= -1.0;
    }
    Mat proj = x * v;

    PcaResult out;
    out.n = n;
    out.out_dim = out_dim;
    out.projected.resize(static_cast<std::size_t>(n) * out_dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_dim; ++j) out.projected[static_cast<std::size_t>(i) * out_dim + j] = proj(i, j);
    out.components.resize(static_cast<std::size_t>(out_dim) * d);
    for (int c = 0; c < out_dim; ++c)
        for (int r = 0; r < d; ++r) out.components[static_cast<std::size_t>(c) * d + r] = v(r, c);
    return out;
}

// ---- exact t-SNE (seeded, deterministic) ----

inline std::vector<Real> tsne_2d(const std::vector<Real>& data, int n, int d, std::uint64_t seed,
                                 Real perplexity = 30.0, int iters = 1000) {
    require(n >= 4, "tsne_2d: need at least 4 points");
    require(static_cast<std::size_t>(n) * d == data.size(), "tsne_2d: buffer size mismatch");
    perplexity = std::min(perplexity, (n - 1) / 3.0);
    require(perplexity >= 1.0, "tsne_2d: perplexity too small");

    // pairwise squared distances
    std::vector<Real> d2(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            Real acc = 0.0;
            for (int c = 0; c < d; ++c) {
                const Real diff = data[static_cast<std::size_t>(i) * d + c] - data[static_cast<std::size_t>(j) * d + c];
                acc += diff * diff;
            }
            d2[static_cast<std::size_t>(i) * n + j] = acc;
            d2[static_cast<std::size_t>(j) * n + i] = acc;
        }

    // conditional affinities via per-point binary search on beta
    std::vector<Real> p(static_cast<std::size_t>(n) * n, 0.0);
    const Real log_perp = std::log(perplexity);
    for (int i = 0; i < n; ++i) {
        Real beta = 1.0, beta_lo = 0.0, beta_hi = 1e300;
        for (int it = 0; it < 64; ++it) {
            Real sum = 0.0, sum_dp = 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                const Real e = std::exp(-d2[static_cast<std::size_t>(i) * n + j] * beta);
                sum += e;
                sum_dp += e * d2[static_cast<std::size_t>(i) * n + j];
            }
            sum = std::max(sum, 1e-300);
            const Real entropy = std::log(sum) + beta * sum_dp / sum;
            if (std::abs(entropy - log_perp) < 1e-5) break;
            if (entropy > log_perp) {
                beta_lo = beta;
                beta = beta_hi > 1e299 ? beta * 2.0 : 0.5 * (beta + beta_hi);
            } else {
                beta_hi = beta;
                beta = 0.5 * (beta + beta_lo);
            }
        }
        Real sum = 0.0;
        for (int j = 0; j < n; ++j)
            if (j != i) sum += std::exp(-d2[static_cast<std::size_t>(i) * n + j] * beta);
        sum = std::max(sum, 1e-300);
        for (int j = 0; j < n; ++j)
            if (j != i) p[static_cast<std::size_t>(i) * n + j] = std::exp(-d2[static_cast<std::size_t>(i) * n + j] * beta) / sum;
    }
    // symmetrize into a fresh buffer
    {
        std::vector<Real> sym(static_cast<std::size_t>(n) * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const Real v =
                    (p[static_cast<std::size_t>(i) * n + j] + p[static_cast<std::size_t>(j) * n + i]) / (2.0 * n);
                sym[static_cast<std::size_t>(i) * n + j] = std::max(v, 1e-12);
            }
        p = std::move(sym);
    }

    // init from seeded Gaussian; adaptive gains plus momentum, the canonical
    // optimization recipe
    Rng rng(derive_seed(seed, 0x75e3ull));
    std::vector<Real> y = rng.normal_vec(static_cast<std::size_t>(n) * 2, 0.0, 1e-4);
    std::vector<Real> vel(static_cast<std::size_t>(n) * 2, 0.0);
    std::vector<Real> gains(static_cast<std::size_t>(n) * 2, 1.0);
    std::vector<Real> q(static_cast<std::size_t>(n) * n, 0.0);

    const int exaggeration_until = 250;
    const Real lr = 200.0;
    for (int iter = 0; iter < iters; ++iter) {
        const Real exaggeration = iter < exaggeration_until ? 12.0 : 1.0;
        const Real momentum = iter < 250 ? 0.5 : 0.8;

        Real qsum = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const Real dx = y[2 * static_cast<std::size_t>(i)] - y[2 * static_cast<std::size_t>(j)];
                const Real dy = y[2 * static_cast<std::size_t>(i) + 1] - y[2 * static_cast<std::size_t>(j) + 1];
                const Real num = 1.0 / (1.0 + dx * dx + dy * dy);
                q[static_cast<std::size_t>(i) * n + j] = num;
                q[static_cast<std::size_t>(j) * n + i] = num;
                qsum += 2.0 * num;
            }
        qsum = std::max(qsum, 1e-300);

        for (int i = 0; i < n; ++i) {
            Real g[2] = {0.0, 0.0};
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                const Real num = q[static_cast<std::size_t>(i) * n + j];
                const Real coeff =
                    (exaggeration * p[static_cast<std::size_t>(i) * n + j] - num / qsum) * num;
                g[0] += coeff * (y[2 * static_cast<std::size_t>(i)] - y[2 * static_cast<std::size_t>(j)]);
                g[1] += coeff * (y[2 * static_cast<std::size_t>(i) + 1] - y[2 * static_cast<std::size_t>(j) + 1]);
            }
            for (int c = 0; c < 2; ++c) {
                const std::size_t k = 2 * static_cast<std::size_t>(i) + static_cast<std::size_t>(c);
                const Real grad = 4.0 * g[c];
                gains[k] = (grad > 0.0) != (vel[k] > 0.0) ? gains[k] + 0.2 : gains[k] * 0.8;
                gains[k] = std::max(gains[k], 0.01);
                vel[k] = momentum * vel[k] - lr * gains[k] * grad;
            }
        }
        Real mx = 0.0, my = 0.0;
        for (int i = 0; i < n; ++i) {
            y[2 * static_cast<std::size_t>(i)] += vel[2 * static_cast<std::size_t>(i)];
            y[2 * static_cast<std::size_t>(i) + 1] += vel[2 * static_cast<std::size_t>(i) + 1];
            mx += y[2 * static_cast<std::size_t>(i)];
            my += y[2 * static_cast<std::size_t>(i) + 1];
        }
        mx /= n;
        my /= n;
        for (int i = 0; i < n; ++i) {  // keep the embedding centered
            y[2 * static_cast<std::size_t>(i)] -= mx;
            y[2 * static_cast<std::size_t>(i) + 1] -= my;
        }
    }
    return y;
}

// ---- possibility space ----

struct SpacePoint {
    std::string model;
    int index = 0;
    Real x = 0.0;
    Real y = 0.0;
};

// PCA to an intermediate dimension, then t-SNE to 2D; deterministic given the
// seed. A degenerate (zero-variance) embedding cloud gets seeded jitter.
inline std::vector<SpacePoint> possibility_space(const std::vector<EvalSet>& sets,
                                                 const backends::EmbedderBackend& embedder, std::uint64_t seed,
                                                 int pca_dim = 50, Real perplexity = 30.0, int iters = 500) {
    require(sets.size() >= 2, "possibility_space: need at least two sets");
    require_paired(sets);

    std::vector<std::pair<std::size_t, int>> owners;  // (set, index)
    std::vector<std::vector<Real>> embs;
    for (std::size_t s = 0; s < sets.size(); ++s)
        for (int i = 0; i < sets[s].size(); ++i) {
            if (sets[s].items[static_cast<std::size_t>(i)].failed) continue;
            embs.push_back(embedder.embed_image(sets[s].images[static_cast<std::size_t>(i)]).values);
            owners.emplace_back(s, i);
        }
    const int n = static_cast<int>(embs.size());
    require(n >= 4, "possibility_space: not enough images");
    const int d = static_cast<int>(embs[0].size());

    std::vector<Real> data(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) std::copy(embs[static_cast<std::size_t>(i)].begin(), embs[static_cast<std::size_t>(i)].end(),
                                          data.begin() + static_cast<std::ptrdiff_t>(i) * d);

    // degenerate-input guard
    Real variance = 0.0;
    for (int j = 0; j < d; ++j) {
        Real mean = 0.0;
        for (int i = 0; i < n; ++i) mean += data[static_cast<std::size_t>(i) * d + j];
        mean /= n;
        for (int i = 0; i < n; ++i) {
            const Real diff = data[static_cast<std::size_t>(i) * d + j] - mean;
            variance += diff * diff;
        }
    }
    if (variance < 1e-18) {
        Rng jitter(derive_seed(seed, 0xf1fe));
        for (auto& v : data) v += 1e-8 * jitter.normal();
    }

    const auto reduced = pca(data, n, d, pca_dim);
    const auto coords = tsne_2d(reduced.projected, n, reduced.out_dim, seed, perplexity, iters);

    std::vector<SpacePoint> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = {sets[owners[static_cast<std::size_t>(i)].first].model,
                                            owners[static_cast<std::size_t>(i)].second,
                                            coords[2 * static_cast<std::size_t>(i)],
                                            coords[2 * static_cast<std::size_t>(i) + 1]};
    }
    return out;
}

inline void write_space_csv(const std::filesystem::path& path, const std::vector<SpacePoint>& points) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "write_space_csv: cannot write " + path.string());
    out << "model,index,x,y\n";
    for (const auto& p : points) out << p.model << "," << p.index << "," << p.x << "," << p.y << "\n";
}

}  // namespace muse::eval
