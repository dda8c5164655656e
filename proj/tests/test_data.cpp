#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>

#include "muse/data.hpp"
#include "muse/labels.hpp"
#include "muse/toy.hpp"

using namespace muse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// writes <n> small distinct images under root/<label>/
void write_fixture_class(const fs::path& root, const std::string& label, int n, int seed) {
    fs::create_directories(root / label);
    Rng rng(static_cast<std::uint64_t>(seed));
    for (int i = 0; i < n; ++i) {
        Image img(8, 8, 3);
        for (auto& p : img.px) p = rng.uniform();
        char name[32];
        std::snprintf(name, sizeof(name), "img_%03d.png", i);
        write_png(root / label / name, img);
    }
}

// captions depend on mean brightness: bright -> "a painting", dark -> "a photo"
struct BrightnessCaptioner : backends::CaptionerBackend {
    mutable std::atomic<int> calls{0};
    backends::BackendDescriptor descriptor() const override { return {"fixture", 0, true, backends::Kind::captioner}; }
    std::string caption(const Image& img) const override {
        ++calls;
        Real mean = 0.0;
        for (Real p : img.px) mean += p;
        mean /= static_cast<Real>(img.px.size());
        return mean > 0.5 ? "a painting of light" : "a photo of shadow";
    }
};

struct FlakyCaptioner : backends::CaptionerBackend {
    mutable std::atomic<int> calls{0};
    int fail_first = 2;
    backends::BackendDescriptor descriptor() const override { return {"flaky", 0, false, backends::Kind::captioner}; }
    std::string caption(const Image&) const override {
        if (calls++ < fail_first) throw error("captioner transient failure");
        return "a painting";
    }
};

void write_brightness_fixture(const fs::path& root) {
    fs::create_directories(root / "bright");
    fs::create_directories(root / "dark");
    for (int i = 0; i < 4; ++i) {
        Image b(8, 8, 3, 0.9 - 0.01 * i);
        Image d(8, 8, 3, 0.1 + 0.01 * i);
        write_png(root / "bright" / ("b" + std::to_string(i) + ".png"), b);
        write_png(root / "dark" / ("d" + std::to_string(i) + ".png"), d);
    }
}

}  // namespace

TEST_CASE("load_dataset enumerates deterministically", "[data]") {
    TempDir tmp("muse_data_fixture");
    write_fixture_class(tmp.path, "styleA", 3, 1);
    write_fixture_class(tmp.path, "styleB", 3, 2);

    auto ds = data::load_dataset(tmp.path);
    REQUIRE(ds.records.size() == 6);
    REQUIRE(ds.label_set == std::vector<std::string>{"styleA", "styleB"});
    REQUIRE(ds.skipped_unreadable == 0);

    auto ds2 = data::load_dataset(tmp.path);
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        REQUIRE(ds.records[i].path == ds2.records[i].path);
        REQUIRE(ds.records[i].label == ds2.records[i].label);
    }
}

TEST_CASE("load_dataset error paths", "[data]") {
    REQUIRE_THROWS_AS(data::load_dataset("/nonexistent/muse/dataset"), error);

    TempDir tmp("muse_data_unreadable");
    write_fixture_class(tmp.path, "ok", 2, 3);
    std::ofstream(tmp.path / "ok" / "corrupt.png") << "not a png";
    auto ds = data::load_dataset(tmp.path);
    REQUIRE(ds.records.size() == 2);
    REQUIRE(ds.skipped_unreadable == 1);
}

TEST_CASE("mediums subset selects caption-matching classes", "[data]") {
    TempDir tmp("muse_data_mediums");
    write_brightness_fixture(tmp.path);
    auto ds = data::load_dataset(tmp.path);

    BrightnessCaptioner captioner;
    auto [subset, report] = data::build_mediums_subset(ds, captioner, {"painting", "drawing", "art"}, 1);
    REQUIRE(report.selected_classes == std::vector<std::string>{"bright"});
    REQUIRE(report.rows.size() == 1);
    REQUIRE(report.rows[0].style_class == "bright");
    REQUIRE(report.rows[0].quantity == 4);
    REQUIRE_THAT(report.rows[0].percentage, Catch::Matchers::WithinAbs(100.0, 1e-12));
    REQUIRE(subset.records.size() == 4);
    for (const auto& r : subset.records) REQUIRE(r.label == "bright");
}

TEST_CASE("keyword matching uses the prefix-token rule", "[data]") {
    REQUIRE(data::caption_matches("two paintings on a wall", {"painting"}));
    REQUIRE(data::caption_matches("An ART piece", {"art"}));       // case-insensitive
    REQUIRE(data::caption_matches("artful dodger", {"art"}));      // prefix of token
    REQUIRE_FALSE(data::caption_matches("a depiction of art-less", {"painting", "drawing"}));
    REQUIRE_FALSE(data::caption_matches("smarting remark", {"art"}));  // not a token prefix
}

TEST_CASE("caption cache makes the subset reproducible without captioner calls", "[data]") {
    TempDir tmp("muse_data_cache");
    write_brightness_fixture(tmp.path / "ds");
    auto ds = data::load_dataset(tmp.path / "ds");

    data::CaptionCache cache(tmp.path / "captions.jsonl");
    BrightnessCaptioner c1;
    auto [subset1, report1] = data::build_mediums_subset(ds, c1, {"painting"}, 1, &cache);
    REQUIRE(c1.calls.load() == 8);

    data::CaptionCache cache2(tmp.path / "captions.jsonl");
    REQUIRE(cache2.size() == 8);
    BrightnessCaptioner c2;
    auto [subset2, report2] = data::build_mediums_subset(ds, c2, {"painting"}, 1, &cache2);
    REQUIRE(c2.calls.load() == 0);  // served from cache
    REQUIRE(report2.selected_classes == report1.selected_classes);
    REQUIRE(subset2.records.size() == subset1.records.size());
    for (std::size_t i = 0; i < subset1.records.size(); ++i) {
        REQUIRE(subset2.records[i].path == subset1.records[i].path);
        REQUIRE(subset2.records[i].caption == subset1.records[i].caption);
    }
}

TEST_CASE("captioner failures are retried up to the budget then propagate", "[data]") {
    TempDir tmp("muse_data_retry");
    write_fixture_class(tmp.path, "only", 1, 9);
    auto ds = data::load_dataset(tmp.path);

    FlakyCaptioner flaky;  // fails twice, succeeds on the third call
    REQUIRE_NOTHROW(data::caption_all(ds, flaky, nullptr, 2));
    REQUIRE(ds.records[0].caption == "a painting");

    auto ds2 = data::load_dataset(tmp.path);
    FlakyCaptioner dead;
    dead.fail_first = 1000;
    REQUIRE_THROWS_AS(data::caption_all(ds2, dead, nullptr, 2), error);
}

TEST_CASE("k-means recovers well-separated blobs (brute-force oracle)", "[data]") {
    Rng rng(101);
    const int per_blob = 40;
    const std::vector<std::pair<Real, Real>> blob_centers = {{0.0, 0.0}, {5.0, 0.0}, {0.0, 5.0}};
    std::vector<Real> pts;
    for (const auto& [cx, cy] : blob_centers)
        for (int i = 0; i < per_blob; ++i) {
            pts.push_back(cx + 0.05 * rng.normal());
            pts.push_back(cy + 0.05 * rng.normal());
        }
    auto res = kmeans::fit(pts, 3 * per_blob, 2, 3, 7);

    // recovered centers within 0.2 of the true centers (greedy match)
    std::vector<bool> used(3, false);
    for (const auto& [cx, cy] : blob_centers) {
        bool found = false;
        for (int j = 0; j < 3; ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            const Real dx = res.model.center(j)[0] - cx;
            const Real dy = res.model.center(j)[1] - cy;
            if (std::sqrt(dx * dx + dy * dy) < 0.2) {
                used[static_cast<std::size_t>(j)] = true;
                found = true;
                break;
            }
        }
        REQUIRE(found);
    }

    // every point's assignment equals the brute-force nearest center
    for (int i = 0; i < 3 * per_blob; ++i) {
        Real best = 1e300;
        int best_j = 0;
        for (int j = 0; j < 3; ++j) {
            const Real dx = pts[2 * static_cast<std::size_t>(i)] - res.model.center(j)[0];
            const Real dy = pts[2 * static_cast<std::size_t>(i) + 1] - res.model.center(j)[1];
            const Real d2 = dx * dx + dy * dy;
            if (d2 < best) {
                best = d2;
                best_j = j;
            }
        }
        REQUIRE(res.assignment[static_cast<std::size_t>(i)] == best_j);
    }
}

TEST_CASE("k-means inertia is monotone non-increasing and k=n gives zero", "[data]") {
    Rng rng(103);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 10 + static_cast<int>(rng.index(40));
        const int d = 1 + static_cast<int>(rng.index(4));
        const int k = 2 + static_cast<int>(rng.index(4));
        std::vector<Real> pts = rng.normal_vec(static_cast<std::size_t>(n) * d, 0.0, 2.0);
        auto res = kmeans::fit(pts, n, d, std::min(k, n), trial);
        for (std::size_t i = 1; i < res.inertia_history.size(); ++i)
            REQUIRE(res.inertia_history[i] <= res.inertia_history[i - 1] + 1e-9);
    }

    // k equal to the number of distinct points: zero inertia
    std::vector<Real> distinct = {0.0, 0.0, 1.0, 1.0, 2.0, 0.0, 3.0, 5.0};
    auto res = kmeans::fit(distinct, 4, 2, 4, 11);
    REQUIRE_THAT(res.model.inertia, Catch::Matchers::WithinAbs(0.0, 1e-12));

    REQUIRE_THROWS_AS(kmeans::fit(distinct, 4, 2, 5, 11), error);
    REQUIRE_THROWS_AS(kmeans::fit(distinct, 4, 2, 1, 11), error);
}

TEST_CASE("fit_clusters embeds a dataset and returns a valid model", "[data]") {
    TempDir tmp("muse_data_clusters");
    write_brightness_fixture(tmp.path);
    auto ds = data::load_dataset(tmp.path);
    backends::MockSuite mock(0, 16);
    auto model = data::fit_clusters(ds, mock, 2, 42);
    REQUIRE(model.k == 2);
    REQUIRE(model.dim == 16);
    REQUIRE(model.seed == 42);
    REQUIRE(model.inertia >= 0.0);

    REQUIRE_THROWS_AS(data::fit_clusters(ds, mock, 100, 42), error);
}

TEST_CASE("subset report csv carries the schema of the reference table", "[data]") {
    TempDir tmp("muse_data_csv");
    data::SubsetReport report;
    for (const auto& row : labels::mediums_reference_table())
        report.rows.push_back({row.style_class, row.quantity, row.percentage});
    data::write_subset_report_csv(tmp.path / "report.csv", report);

    std::ifstream in(tmp.path / "report.csv");
    std::string line;
    std::getline(in, line);
    REQUIRE(line == "style_class,quantity,percentage");
    std::getline(in, line);
    REQUIRE(line == "expressionism,6054,91.56");  // the reference fixture row
    int rows = 1;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 10);
}
