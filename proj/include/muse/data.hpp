#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "muse/backends.hpp"
#include "muse/common.hpp"
#include "muse/image.hpp"
#include "muse/kmeans.hpp"
#include "muse/parallel.hpp"
#include "muse/style.hpp"

// Dataset ingestion, the caption-driven mediums subset, and k-means fitting
// over image embeddings.
namespace muse::data {

struct ImageRecord {
    std::filesystem::path path;
    std::string label;
    std::string caption;  // filled by caption_all
};

struct LabeledImageSet {
    std::vector<ImageRecord> records;
    std::vector<std::string> label_set;  // sorted unique
    std::string name;                    // full | mediums | toy
    int skipped_unreadable = 0;

    void validate() const {
        require(!records.empty(), "LabeledImageSet: empty");
        for (const auto& r : records)
            require(std::find(label_set.begin(), label_set.end(), r.label) != label_set.end(),
                    "LabeledImageSet: record label missing from label_set: " + r.label);
    }
};

inline bool has_image_extension(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Layout: root/<label>/<image files>. Enumeration is deterministic (sorted
// paths); unreadable images are skipped and counted.
inline LabeledImageSet load_dataset(const std::filesystem::path& root, const std::string& name = "toy") {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw error("load_dataset: not a directory: " + root.string());

    std::vector<std::string> labels;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) labels.push_back(e.path().filename().string());
    std::sort(labels.begin(), labels.end());
    if (labels.empty()) throw error("load_dataset: no label directories under " + root.string());

    LabeledImageSet out;
    out.name = name;
    for (const auto& label : labels) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(root / label))
            if (e.is_regular_file() && has_image_extension(e.path())) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            try {
                read_png(f);  // readability check; pixels reloaded on demand
            } catch (const std::exception&) {
                ++out.skipped_unreadable;
                continue;
            }
            out.records.push_back({f, label, ""});
        }
    }
    if (out.records.empty()) throw error("load_dataset: no readable images under " + root.string());
    out.label_set = labels;
    out.validate();
    return out;
}

inline Image load_image(const ImageRecord& rec) { return read_png(rec.path); }

// ---- caption cache (json-lines {"hash", "caption"}) ----

inline std::filesystem::path default_cache_dir() {
    if (const char* env = std::getenv("CREATIVE_CACHE_DIR")) return env;
    return std::filesystem::temp_directory_path() / "muse_cache";
}

class CaptionCache {
public:
    explicit CaptionCache(const std::filesystem::path& file) : file_(file) {
        std::ifstream in(file_);
        std::string line;
        while (in && std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
            if (j.is_discarded()) continue;
            entries_[j.value("hash", "")] = j.value("caption", "");
        }
    }

    bool lookup(const std::string& hash, std::string& caption) const {
        const auto it = entries_.find(hash);
        if (it == entries_.end()) return false;
        caption = it->second;
        return true;
    }

    void insert(const std::string& hash, const std::string& caption) {
        if (entries_.count(hash)) return;
        entries_[hash] = caption;
        std::filesystem::create_directories(file_.parent_path());
        std::ofstream out(file_, std::ios::app);
        nlohmann::ordered_json j;
        j["hash"] = hash;
        j["caption"] = caption;
        out << j.dump() << "\n";
    }

    std::size_t size() const { return entries_.size(); }

private:
    std::filesystem::path file_;
    std::map<std::string, std::string> entries_;
};

// Captions every record, going through the cache; captioner failures are
// retried up to the budget, then propagate.
inline void caption_all(LabeledImageSet& dataset, const backends::CaptionerBackend& captioner,
                        CaptionCache* cache = nullptr, int retry_budget = 2) {
    std::vector<std::string> fresh(dataset.records.size());
    std::vector<char> need(dataset.records.size(), 0);
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        auto& rec = dataset.records[i];
        if (!rec.caption.empty()) continue;
        const std::string hash = hex64(image_hash(load_image(rec)));
        if (cache && cache->lookup(hash, rec.caption)) continue;
        need[i] = 1;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    parallel_for(dataset.records.size(), [&](std::size_t i) {
        if (!need[i]) return;
        for (int attempt = 0;; ++attempt) {
            try {
                fresh[i] = captioner.caption(load_image(dataset.records[i]));
                return;
            } catch (...) {
                if (attempt >= retry_budget) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        }
    });
    if (failure) std::rethrow_exception(failure);
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        if (!need[i]) continue;
        dataset.records[i].caption = fresh[i];
        if (cache) cache->insert(hex64(image_hash(load_image(dataset.records[i]))), fresh[i]);
    }
}

// ---- mediums subset ----

struct SubsetRow {
    std::string style_class;
    long long quantity = 0;
    Real percentage = 0.0;  // 0..100
};

struct SubsetReport {
    std::vector<SubsetRow> rows;               // selected classes, best fraction first
    std::vector<std::string> selected_classes;
};

// Prefix-token keyword match on lowercased whitespace tokens ("paintings"
// matches keyword "painting").
inline bool caption_matches(const std::string& caption, const std::vector<std::string>& keywords) {
    std::istringstream in(caption);
    std::string token;
    while (in >> token) {
        std::transform(token.begin(), token.end(), token.begin(), [](unsigned char c) { return std::tolower(c); });
        for (const auto& kw : keywords)
            if (token.rfind(kw, 0) == 0) return true;
    }
    return false;
}

inline std::pair<LabeledImageSet, SubsetReport> build_mediums_subset(
    const LabeledImageSet& dataset, const backends::CaptionerBackend& captioner,
    const std::vector<std::string>& keywords = {"painting", "drawing", "art"}, int top_n = 10,
    CaptionCache* cache = nullptr, int retry_budget = 2) {
    dataset.validate();
    require(top_n >= 1, "build_mediums_subset: top_n must be positive");
    require(!keywords.empty(), "build_mediums_subset: keywords must not be empty");

    LabeledImageSet captioned = dataset;
    caption_all(captioned, captioner, cache, retry_budget);

    std::map<std::string, std::pair<long long, long long>> per_class;  // label -> (matches, total)
    for (const auto& rec : captioned.records) {
        auto& [matches, total] = per_class[rec.label];
        ++total;
        if (caption_matches(rec.caption, keywords)) ++matches;
    }

    std::vector<SubsetRow> rows;
    for (const auto& [label, counts] : per_class)
        rows.push_back({label, counts.second, 100.0 * static_cast<Real>(counts.first) / counts.second});
    std::sort(rows.begin(), rows.end(), [](const SubsetRow& a, const SubsetRow& b) {
        if (a.percentage != b.percentage) return a.percentage > b.percentage;
        return a.style_class < b.style_class;
    });
    if (static_cast<int>(rows.size()) > top_n) rows.resize(static_cast<std::size_t>(top_n));

    SubsetReport report;
    report.rows = rows;
    for (const auto& r : rows) report.selected_classes.push_back(r.style_class);

    LabeledImageSet subset;
    subset.name = "mediums";
    for (const auto& rec : captioned.records)
        if (std::find(report.selected_classes.begin(), report.selected_classes.end(), rec.label) !=
            report.selected_classes.end())
            subset.records.push_back(rec);
    subset.label_set = report.selected_classes;
    std::sort(subset.label_set.begin(), subset.label_set.end());
    subset.validate();
    return {subset, report};
}

inline void write_subset_report_csv(const std::filesystem::path& path, const SubsetReport& report) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "write_subset_report_csv: cannot write " + path.string());
    out << "style_class,quantity,percentage\n";
    char buf[64];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%.2f", r.percentage);
        out << r.style_class << "," << r.quantity << "," << buf << "\n";
    }
}

// ---- k-means over image embeddings ----

inline style::ClusterModel fit_clusters(const LabeledImageSet& dataset, const backends::EmbedderBackend& embedder,
                                        int k, std::uint64_t seed, int max_iter = 300, Real tol = 1e-4) {
    dataset.validate();
    const int n = static_cast<int>(dataset.records.size());
    require(k >= 2, "fit_clusters: k must be >= 2");
    require(k <= n, "fit_clusters: k exceeds number of images");
    const int d = embedder.embed_image(load_image(dataset.records[0])).dim();

    std::vector<Real> points(static_cast<std::size_t>(n) * d);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        const auto e = embedder.embed_image(load_image(dataset.records[i]));
        require_shape(e.dim() == d, "fit_clusters: inconsistent embedding dims");
        std::copy(e.values.begin(), e.values.end(), points.begin() + static_cast<std::ptrdiff_t>(i) * d);
    });
    return kmeans::fit(points, n, d, k, seed, max_iter, tol).model;
}

}  // namespace muse::data
