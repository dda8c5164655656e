#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "muse/common.hpp"
#include "muse/tensor.hpp"

// Binary tensor archive used for checkpoints, plus a json-lines appender for
// run logs. Archives carry the config hash of the run that produced them.
namespace muse::archive {

constexpr char kMagic[8] = {'M', 'U', 'S', 'E', 'T', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

inline void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& in) {
    const std::uint32_t n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

}  // namespace detail

inline void save_tensors(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, const tensor::Tensor*>>& tensors,
                         const std::string& config_hash) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "save_tensors: cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    detail::write_u32(out, kVersion);
    detail::write_str(out, config_hash);
    detail::write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_str(out, name);
        detail::write_u32(out, static_cast<std::uint32_t>(t->rows()));
        detail::write_u32(out, static_cast<std::uint32_t>(t->cols()));
        out.write(reinterpret_cast<const char*>(t->value().data()),
                  static_cast<std::streamsize>(t->value().size() * sizeof(Real)));
    }
    require(static_cast<bool>(out), "save_tensors: write failed for " + path.string());
}

inline std::map<std::string, tensor::Tensor> load_tensors(const std::filesystem::path& path,
                                                          std::string* config_hash = nullptr) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "load_tensors: cannot read " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    require(std::memcmp(magic, kMagic, sizeof(kMagic)) == 0, "load_tensors: bad magic in " + path.string());
    const std::uint32_t version = detail::read_u32(in);
    require(version == kVersion, "load_tensors: unsupported version");
    const std::string hash = detail::read_str(in);
    if (config_hash) *config_hash = hash;
    const std::uint32_t count = detail::read_u32(in);
    std::map<std::string, tensor::Tensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = detail::read_str(in);
        const int rows = static_cast<int>(detail::read_u32(in));
        const int cols = static_cast<int>(detail::read_u32(in));
        std::vector<Real> data(static_cast<std::size_t>(rows) * cols);
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(Real)));
        require(static_cast<bool>(in), "load_tensors: truncated archive " + path.string());
        out.emplace(name, tensor::Tensor::from_data(rows, cols, std::move(data)));
    }
    return out;
}

class JsonLinesWriter {
public:
    explicit JsonLinesWriter(const std::filesystem::path& path) : out_(path, std::ios::app) {
        require(static_cast<bool>(out_), "JsonLinesWriter: cannot open " + path.string());
    }

    template <typename Json>
    void append(const Json& j) {
        out_ << j.dump() << "\n";
        out_.flush();
    }

private:
    std::ofstream out_;
};

}  // namespace muse::archive
