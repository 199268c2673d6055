#pragma once

#include "emrate/errors.hpp"

#include "json.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace emrate {

inline constexpr const char* kVersion = "1.0.0";

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string() + " for checksum");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
    std::array<char, 1 << 16> buffer{};
    while (in) {
        in.read(buffer.data(), buffer.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buffer.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &length);
    std::string hex;
    char byte[3];
    for (unsigned int i = 0; i < length; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", digest[i]);
        hex += byte;
    }
    return hex;
}

/// Record of one CLI run: configuration, seed, emitted files with checksums, timings.
class RunManifest {
public:
    RunManifest(std::string command, nlohmann::json config, std::uint64_t seed)
        : command_(std::move(command)), config_(std::move(config)), seed_(seed) {}

    void add_file(const std::filesystem::path& path) { files_.push_back(path); }

    template <typename Range>
    void add_files(const Range& paths) {
        for (const auto& p : paths) add_file(p);
    }

    void add_timing(const std::string& stage, double seconds) { timings_[stage] = seconds; }

    nlohmann::json to_json(const std::filesystem::path& base) const {
        nlohmann::json files = nlohmann::json::array();
        for (const auto& f : files_)
            files.push_back({{"path", std::filesystem::relative(f, base).generic_string()}, {"sha256", sha256_file(f)},
                             {"bytes", std::filesystem::file_size(f)}});
        return {{"artifact", "emrate"}, {"version", kVersion}, {"command", command_}, {"config", config_},
                {"master_seed", seed_}, {"files", files}, {"timings_seconds", timings_}};
    }

    /// Writes manifest.json into `dir`.
    std::filesystem::path write(const std::filesystem::path& dir) const {
        const auto path = dir / "manifest.json";
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write " + path.string());
        out << to_json(dir).dump(2) << '\n';
        return path;
    }

private:
    std::string command_;
    nlohmann::json config_;
    std::uint64_t seed_;
    std::vector<std::filesystem::path> files_;
    std::map<std::string, double> timings_;
};

class Stopwatch {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace emrate
