#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "muse/common.hpp"

// Builtin label sets for the two WikiArt-derived datasets, plus the reference
// subset-report row used as a format fixture by the report tooling.
namespace muse::labels {

// The 27 style classes of the full dataset.
inline const std::vector<std::string>& wikiart_full() {
    static const std::vector<std::string> v = {
        "contemporary-realism", "art-nouveau-modern", "abstract-expressionism",
        "northern-renaissance", "mannerism-late-renaissance", "early-renaissance",
        "realism", "action-painting", "color-field-painting",
        "pop-art", "new-realism", "pointillism",
        "expressionism", "analytical-cubism", "symbolism",
        "fauvism", "minimalism", "cubism",
        "romanticism", "ukiyo-e", "high-renaissance",
        "synthetic-cubism", "baroque", "post-impressionism",
        "impressionism", "rococo", "na-ve-art-primitivism",
    };
    return v;
}

// The 10 classes whose captions most often mention the mediums word set.
inline const std::vector<std::string>& wikiart_mediums() {
    static const std::vector<std::string> v = {
        "expressionism", "post-impressionism", "fauvism", "abstract-expressionism",
        "na-ve-art-primitivism", "cubism", "synthetic-cubism", "analytical-cubism",
        "new-realism", "action-painting",
    };
    return v;
}

struct SubsetReferenceRow {
    std::string style_class;
    long long quantity = 0;
    Real percentage = 0.0;  // 0..100
};

// Reference row carried for report-schema validation.
inline SubsetReferenceRow mediums_reference_row() { return {"expressionism", 6054, 91.56}; }

// Full reference table for the mediums subset report.
inline const std::vector<SubsetReferenceRow>& mediums_reference_table() {
    static const std::vector<SubsetReferenceRow> v = {
        {"expressionism", 6054, 91.56},     {"post-impressionism", 5832, 89.25},
        {"fauvism", 841, 96.08},            {"abstract-expressionism", 2518, 89.95},
        {"na-ve-art-primitivism", 2148, 93.39}, {"cubism", 2027, 91.61},
        {"synthetic-cubism", 197, 89.85},   {"analytical-cubism", 105, 91.43},
        {"new-realism", 280, 96.07},        {"action-painting", 93, 93.55},
    };
    return v;
}

// Label sets persist as newline-delimited text files.
inline void save_label_set(const std::string& path, const std::vector<std::string>& labels) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "save_label_set: cannot write " + path);
    for (const auto& l : labels) out << l << "\n";
}

inline std::vector<std::string> load_label_set(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "load_label_set: cannot read " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    require(!out.empty(), "load_label_set: empty label set in " + path);
    return out;
}

// Resolve "builtin:full" / "builtin:mediums" or a file path.
inline std::vector<std::string> resolve_label_set(const std::string& spec) {
    if (spec == "builtin:full") return wikiart_full();
    if (spec == "builtin:mediums") return wikiart_mediums();
    return load_label_set(spec);
}

}  // namespace muse::labels
