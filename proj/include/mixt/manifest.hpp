#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixt/common.hpp"
#include "mixt/dataset.hpp"

namespace mixt {

inline constexpr const char* kVersionTag = "mixt-0.1.0";

// Record of one command invocation: everything needed to rerun it and check
// that the inputs were the same. Timings are informational; commands whose
// output directories must be byte-identical across reruns leave them empty.
struct ExperimentManifest {
    std::string command;
    std::string config_snapshot;                          // flat key=value text
    std::map<std::string, std::string> dataset_checksums;  // label -> hex fingerprint
    std::string version = kVersionTag;
    uint64_t seed = 0;
    std::vector<std::string> artifacts;                   // paths relative to the run dir
    std::map<std::string, double> timings_sec;
};

// Fingerprint of a dataset directory. The checksums file already covers every
// image byte-for-byte, so hashing the three index files covers the dataset.
inline uint64_t dataset_fingerprint(const std::filesystem::path& dir) {
    std::string blob = read_file_bytes(dir / "manifest.jsonl");
    blob += read_file_bytes(dir / "checksums");
    blob += read_file_bytes(dir / "vocab.txt");
    return fnv1a64(blob);
}

inline nlohmann::json manifest_to_json(const ExperimentManifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["config"] = m.config_snapshot;
    j["dataset_checksums"] = m.dataset_checksums;
    j["version"] = m.version;
    j["seed"] = m.seed;
    j["artifacts"] = m.artifacts;
    j["timings_sec"] = m.timings_sec;
    return j;
}

inline ExperimentManifest manifest_from_json(const nlohmann::json& j) {
    ExperimentManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_snapshot = j.at("config").get<std::string>();
    m.dataset_checksums = j.at("dataset_checksums").get<std::map<std::string, std::string>>();
    m.version = j.at("version").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    m.timings_sec = j.at("timings_sec").get<std::map<std::string, double>>();
    return m;
}

// Write-to-temp then rename, so a manifest is either absent or complete.
inline void write_manifest(const std::filesystem::path& path, const ExperimentManifest& m) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) fail("cannot open manifest for writing: ", tmp.string());
        f << manifest_to_json(m).dump(2) << "\n";
        if (!f) fail("short write to manifest: ", tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline ExperimentManifest read_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file_bytes(path));
    } catch (const nlohmann::json::exception& e) {
        fail("manifest ", path.string(), ": ", e.what());
    }
    return manifest_from_json(j);
}

// Wall-clock span measurement for manifest timings.
class Stopwatch {
  public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}

    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace mixt
