#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "muse/evaluation.hpp"

using namespace muse;
namespace fs = std::filesystem;

namespace {

// deterministic synthetic model: image is a flat field keyed by seed
struct FieldSampler : eval::ImageSampler {
    std::string model_name;
    Real offset = 0.0;
    int fail_index = -1;
    mutable int calls = 0;

    FieldSampler(std::string name, Real off) : model_name(std::move(name)), offset(off) {}

    std::string name() const override { return model_name; }
    Image sample(const std::string& prompt, std::uint64_t seed) const override {
        ++calls;
        if (fail_index >= 0 && static_cast<int>(seed % 1000) == fail_index) throw error("sampler failure");
        Rng rng(seed);
        Image img(8, 8, 1);
        const Real base = 0.2 + 0.6 * rng.uniform();
        for (auto& p : img.px) p = std::clamp(base + offset + 0.001 * static_cast<Real>(prompt.size()), 0.0, 1.0);
        return img;
    }
};

struct ConstantAesthetic : backends::AestheticBackend {
    Real value = 5.0;
    backends::BackendDescriptor descriptor() const override { return {"const", 0, true, backends::Kind::aesthetic}; }
    Real aesthetic_score(const Image&) const override { return value; }
};

struct IndexReward : backends::ImageRewardBackend {
    // recovers the image index from the stored brightness pattern is overkill;
    // tests instead key the score on a counter
    mutable int next = 0;
    backends::BackendDescriptor descriptor() const override { return {"index", 0, true, backends::Kind::image_reward}; }
    Real image_reward_score(const std::string&, const Image&) const override { return static_cast<Real>(next++); }
};

// embedder with hand-constructed per-image embeddings keyed on mean brightness
struct KeyedEmbedder : backends::EmbedderBackend {
    int dim = 4;
    backends::BackendDescriptor descriptor() const override { return {"keyed", dim, true, backends::Kind::embedder}; }
    backends::EmbeddingVector embed_image(const Image& img) const override {
        Real mean = 0.0;
        for (Real p : img.px) mean += p;
        mean /= static_cast<Real>(img.px.size());
        // two orthogonal axes selected by brightness threshold, with small
        // intra-cloud spread from the actual brightness value
        std::vector<Real> e(static_cast<std::size_t>(dim), 0.0);
        if (mean > 0.5)
            e[0] = 1.0;
        else
            e[1] = 1.0;
        e[2] = 0.05 * mean;
        e[3] = 0.05 * (1.0 - mean);
        return {e};
    }
    backends::EmbeddingVector embed_text(const std::string&) const override {
        return {std::vector<Real>(static_cast<std::size_t>(dim), 0.0)};
    }
    backends::EmbeddingVector embed_style(const Image& img) const override { return embed_image(img); }
};

eval::EvalSet make_set(const std::string& model, const std::vector<std::vector<Real>>& embeddings_as_pixels) {
    // encodes "embeddings" directly as tiny images for the keyed embedder path;
    // here each image is 1x2x1 with the two pixel values
    eval::EvalSet set;
    set.model = model;
    for (std::size_t i = 0; i < embeddings_as_pixels.size(); ++i) {
        eval::EvalItem item;
        item.index = static_cast<int>(i);
        item.prompt = "p";
        item.seed = i;
        item.file = "x.png";
        set.items.push_back(item);
        Image img(1, 2, 1);
        img.px = embeddings_as_pixels[i];
        set.images.push_back(img);
    }
    return set;
}

// embedder that reads the raw pixels back out as the embedding
struct RawEmbedder : backends::EmbedderBackend {
    backends::BackendDescriptor descriptor() const override { return {"raw", 2, true, backends::Kind::embedder}; }
    backends::EmbeddingVector embed_image(const Image& img) const override { return {img.px}; }
    backends::EmbeddingVector embed_text(const std::string&) const override { return {{0.0, 0.0}}; }
    backends::EmbeddingVector embed_style(const Image& img) const override { return {img.px}; }
};

}  // namespace

TEST_CASE("paired prompt/seed derivation is model-independent", "[evaluation]") {
    FieldSampler m1{"model-a", 0.0};
    FieldSampler m2{"model-b", 0.3};
    auto s1 = eval::generate_eval_set(m1, {"painting", "drawing", "art"}, 7, 20);
    auto s2 = eval::generate_eval_set(m2, {"painting", "drawing", "art"}, 7, 20);
    REQUIRE(s1.size() == 20);
    for (int i = 0; i < 20; ++i) {
        REQUIRE(s1.items[static_cast<std::size_t>(i)].prompt == s2.items[static_cast<std::size_t>(i)].prompt);
        REQUIRE(s1.items[static_cast<std::size_t>(i)].seed == s2.items[static_cast<std::size_t>(i)].seed);
    }
    REQUIRE_NOTHROW(eval::require_paired({s1, s2}));

    // default n is the 100-image evaluation set
    auto s3 = eval::generate_eval_set(m1, {"painting"}, 3);
    REQUIRE(s3.size() == 100);
}

TEST_CASE("same model twice gives identical images and unit self-similarity", "[evaluation]") {
    FieldSampler m{"model-a", 0.0};
    auto s1 = eval::generate_eval_set(m, {"painting"}, 11, 12);
    auto s2 = eval::generate_eval_set(m, {"painting"}, 11, 12);
    for (int i = 0; i < 12; ++i) REQUIRE(s1.images[static_cast<std::size_t>(i)].px == s2.images[static_cast<std::size_t>(i)].px);

    RawEmbedder emb;
    // identical sets: matrix of ones
    s2.model = "model-a-copy";
    auto mat = eval::similarity_matrix({s1, s2}, emb, eval::EmbeddingMode::content);
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) REQUIRE_THAT(mat.at(a, b), Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("sampling failures are recorded and the run continues", "[evaluation]") {
    FieldSampler m{"model-f", 0.0};
    m.fail_index = static_cast<int>(derive_seed(5, 3) % 1000);  // fail exactly index 3
    auto s = eval::generate_eval_set(m, {"painting"}, 5, 8);
    int failed = 0;
    for (const auto& it : s.items) failed += it.failed ? 1 : 0;
    REQUIRE(failed == 1);
    REQUIRE(s.items[3].failed);
}

TEST_CASE("score table: constant and index scorers", "[evaluation]") {
    FieldSampler m{"model-a", 0.0};
    auto s = eval::generate_eval_set(m, {"painting"}, 13, 10);

    ConstantAesthetic aest;
    IndexReward ir;
    auto table = eval::score_eval_set(s, &aest, &ir);
    REQUIRE_THAT(table.cells.at("ava").mean, Catch::Matchers::WithinAbs(5.0, 1e-12));
    REQUIRE_THAT(table.cells.at("ava").stddev, Catch::Matchers::WithinAbs(0.0, 1e-12));

    const int n = 10;
    const Real expect_mean = (n - 1) / 2.0;
    const Real expect_std = std::sqrt((static_cast<Real>(n) * n - 1.0) / 12.0);
    REQUIRE_THAT(table.cells.at("image_reward").mean, Catch::Matchers::WithinAbs(expect_mean, 1e-12));
    REQUIRE_THAT(table.cells.at("image_reward").stddev, Catch::Matchers::WithinAbs(expect_std, 1e-12));

    // report cell convention
    REQUIRE(eval::format_cell(5.49, 0.47) == "5.49 ( 0.47 )");
}

TEST_CASE("similarity matrix equals the brute-force oracle", "[evaluation]") {
    // three toy sets with hand-constructed 2-dim embeddings
    auto a = make_set("a", {{1.0, 0.0}, {0.8, 0.6}, {0.0, 1.0}});
    auto b = make_set("b", {{0.6, 0.8}, {1.0, 0.0}, {0.0, 1.0}});
    auto c = make_set("c", {{0.0, 1.0}, {0.5, 0.5}, {1.0, 0.0}});
    RawEmbedder emb;
    auto mat = eval::similarity_matrix({a, b, c}, emb, eval::EmbeddingMode::content);

    const std::vector<eval::EvalSet> sets = {a, b, c};
    for (std::size_t x = 0; x < 3; ++x)
        for (std::size_t y = 0; y < 3; ++y) {
            Real acc = 0.0;
            for (int i = 0; i < 3; ++i)
                acc += backends::cosine(sets[x].images[static_cast<std::size_t>(i)].px,
                                        sets[y].images[static_cast<std::size_t>(i)].px);
            REQUIRE_THAT(mat.at(x, y), Catch::Matchers::WithinAbs(acc / 3.0, 1e-9));
            REQUIRE_THAT(mat.at(x, y), Catch::Matchers::WithinAbs(mat.at(y, x), 1e-9));
        }
    for (std::size_t x = 0; x < 3; ++x) REQUIRE_THAT(mat.at(x, x), Catch::Matchers::WithinAbs(1.0, 1e-9));

    // orthogonal sets: off-diagonal zero
    auto o1 = make_set("o1", {{1.0, 0.0}, {1.0, 0.0}});
    auto o2 = make_set("o2", {{0.0, 1.0}, {0.0, 1.0}});
    auto omat = eval::similarity_matrix({o1, o2}, emb, eval::EmbeddingMode::content);
    REQUIRE_THAT(omat.at(0, 1), Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("mismatched pairings abort", "[evaluation]") {
    auto a = make_set("a", {{1.0, 0.0}, {0.0, 1.0}});
    auto b = make_set("b", {{1.0, 0.0}, {0.0, 1.0}});
    b.items[1].seed = 999;
    RawEmbedder emb;
    REQUIRE_THROWS_AS(eval::similarity_matrix({a, b}, emb, eval::EmbeddingMode::content), error);

    auto c = make_set("c", {{1.0, 0.0}});
    REQUIRE_THROWS_AS(eval::require_paired({a, c}), error);
}

TEST_CASE("eval-set archives round-trip and manifests are byte-stable", "[evaluation]") {
    const auto dir = fs::temp_directory_path() / "muse_eval_archive";
    fs::remove_all(dir);

    FieldSampler m{"model-a", 0.0};
    auto s = eval::generate_eval_set(m, {"painting", "art"}, 17, 6);
    eval::save_eval_set(s, dir / "one", "hash1");
    eval::save_eval_set(s, dir / "two", "hash1");

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    REQUIRE(slurp(dir / "one" / "manifest.json") == slurp(dir / "two" / "manifest.json"));

    auto loaded = eval::load_eval_set(dir / "one");
    REQUIRE(loaded.model == "model-a");
    REQUIRE(loaded.size() == 6);
    for (int i = 0; i < 6; ++i) {
        REQUIRE(loaded.items[static_cast<std::size_t>(i)].seed == s.items[static_cast<std::size_t>(i)].seed);
        // 8-bit quantization on disk
        for (std::size_t p = 0; p < s.images[static_cast<std::size_t>(i)].px.size(); ++p)
            REQUIRE_THAT(loaded.images[static_cast<std::size_t>(i)].px[p],
                         Catch::Matchers::WithinAbs(s.images[static_cast<std::size_t>(i)].px[p], 1.0 / 255.0));
    }
    fs::remove_all(dir);
}

TEST_CASE("pca puts variance-bearing axes first", "[evaluation]") {
    // 2-D data with variance only along x
    std::vector<Real> data;
    Rng rng(3);
    const int n = 40;
    for (int i = 0; i < n; ++i) {
        data.push_back(rng.normal(0.0, 2.0));
        data.push_back(0.5);  // constant y
    }
    auto res = eval::pca(data, n, 2, 2);
    // first component is the x axis within sign (made positive by convention)
    REQUIRE_THAT(std::abs(res.components[0]), Catch::Matchers::WithinAbs(1.0, 1e-9));
    REQUIRE_THAT(res.components[1], Catch::Matchers::WithinAbs(0.0, 1e-9));

    REQUIRE_THROWS_AS(eval::pca(data, 1, 2, 2), error);
}

namespace {

Real silhouette(const std::vector<eval::SpacePoint>& pts) {
    // two-group silhouette on the 2D coordinates
    auto dist = [](const eval::SpacePoint& a, const eval::SpacePoint& b) {
        return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y));
    };
    Real total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Real same = 0.0, other = 0.0;
        int same_n = 0, other_n = 0;
        for (std::size_t j = 0; j < pts.size(); ++j) {
            if (i == j) continue;
            if (pts[j].model == pts[i].model) {
                same += dist(pts[i], pts[j]);
                ++same_n;
            } else {
                other += dist(pts[i], pts[j]);
                ++other_n;
            }
        }
        const Real a = same / std::max(same_n, 1);
        const Real b = other / std::max(other_n, 1);
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<Real>(pts.size());
}

}  // namespace

TEST_CASE("possibility space separates distant clouds", "[evaluation]") {
    // model A images bright, model B images dark; keyed embedder maps them to
    // orthogonal axes, so the clouds are far apart in embedding space
    FieldSampler bright{"bright-model", 0.35};
    FieldSampler dark{"dark-model", -0.35};
    auto sa = eval::generate_eval_set(bright, {"p"}, 23, 20);
    auto sb = eval::generate_eval_set(dark, {"p"}, 23, 20);

    KeyedEmbedder emb;
    auto pts = eval::possibility_space({sa, sb}, emb, 5, 10, 8.0, 400);
    REQUIRE(pts.size() == 40);
    REQUIRE(silhouette(pts) > 0.5);

    // deterministic given the seed
    auto pts2 = eval::possibility_space({sa, sb}, emb, 5, 10, 8.0, 400);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        REQUIRE(pts[i].x == pts2[i].x);
        REQUIRE(pts[i].y == pts2[i].y);
    }
}

TEST_CASE("possibility space tolerates degenerate embeddings", "[evaluation]") {
    // every image identical: zero-variance embeddings get jitter, no crash
    FieldSampler flat{"flat", 0.0};
    auto sa = eval::generate_eval_set(flat, {"p"}, 29, 8);
    auto sb = sa;
    sb.model = "flat2";

    struct ConstEmbedder : backends::EmbedderBackend {
        backends::BackendDescriptor descriptor() const override { return {"const", 3, true, backends::Kind::embedder}; }
        backends::EmbeddingVector embed_image(const Image&) const override { return {{1.0, 2.0, 3.0}}; }
        backends::EmbeddingVector embed_text(const std::string&) const override { return {{0.0, 0.0, 0.0}}; }
        backends::EmbeddingVector embed_style(const Image&) const override { return {{1.0, 2.0, 3.0}}; }
    } emb;
    auto pts = eval::possibility_space({sa, sb}, emb, 7, 5, 3.0, 120);
    REQUIRE(pts.size() == 16);
    for (const auto& p : pts) {
        REQUIRE(std::isfinite(p.x));
        REQUIRE(std::isfinite(p.y));
    }
}

TEST_CASE("quartiles and plot emission", "[evaluation]") {
    auto q = plot::quartiles({1.0, 2.0, 3.0, 4.0, 5.0});
    REQUIRE(q.min == 1.0);
    REQUIRE(q.q1 == 2.0);
    REQUIRE(q.median == 3.0);
    REQUIRE(q.q3 == 4.0);
    REQUIRE(q.max == 5.0);

    const auto dir = fs::temp_directory_path() / "muse_eval_plots";
    fs::create_directories(dir);
    plot::box_plot_png(dir / "box.png", {{"model-a", {1, 2, 3, 4, 5}}, {"model-b", {2, 3, 4, 5, 9}}}, "scores");
    plot::scatter_png(dir / "scatter.png", {{0.1, 0.2, 0}, {2.0, 1.0, 1}}, {"a", "b"}, "space");
    REQUIRE(read_png(dir / "box.png").valid());
    REQUIRE(read_png(dir / "scatter.png").valid());
    fs::remove_all(dir);
}

TEST_CASE("score and similarity csv writers", "[evaluation]") {
    const auto dir = fs::temp_directory_path() / "muse_eval_csv";
    fs::create_directories(dir);

    eval::ScoreTable t;
    t.model = "m";
    t.cells["ava"] = {5.49, 0.47, 100, 0};
    eval::write_score_csv(dir / "scores.csv", {t});
    std::ifstream in(dir / "scores.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    REQUIRE(header == "model,metric,mean,std,scored,failures,cell");
    REQUIRE(row.find("\"5.49 ( 0.47 )\"") != std::string::npos);

    eval::SimilarityMatrix mat;
    mat.models = {"a", "b"};
    mat.values = {1.0, 0.25, 0.25, 1.0};
    eval::write_similarity_csv(dir / "sim.csv", mat);
    std::ifstream sin(dir / "sim.csv");
    std::getline(sin, header);
    REQUIRE(header == "model,a,b");
    fs::remove_all(dir);
}
