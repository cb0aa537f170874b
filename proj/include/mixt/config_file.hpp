#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mixt/backbone.hpp"
#include "mixt/batching.hpp"
#include "mixt/common.hpp"
#include "mixt/dataset.hpp"
#include "mixt/trainer.hpp"

namespace mixt {

namespace detail {

inline double config_double(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos == value.size()) return v;
    } catch (const std::exception&) {
    }
    fail("config key ", key, ": cannot parse \"", value, "\" as a number");
}

inline int config_int(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const int v = std::stoi(value, &pos);
        if (pos == value.size()) return v;
    } catch (const std::exception&) {
    }
    fail("config key ", key, ": cannot parse \"", value, "\" as an integer");
}

inline uint64_t config_uint64(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos == value.size()) return static_cast<uint64_t>(v);
    } catch (const std::exception&) {
    }
    fail("config key ", key, ": cannot parse \"", value, "\" as an unsigned integer");
}

inline std::vector<std::string> split_csv(const std::string& value) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= value.size()) {
        auto comma = value.find(',', start);
        if (comma == std::string::npos) comma = value.size();
        const std::string part = value.substr(start, comma - start);
        if (!part.empty()) out.push_back(part);
        start = comma + 1;
    }
    return out;
}

inline std::string join_csv(const std::vector<std::string>& parts) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ',';
        out += parts[i];
    }
    return out;
}

}  // namespace detail

// Sets one training hyperparameter from its textual form. Keys are exactly
// the TrainConfig field names; anything else is rejected.
inline void apply_train_kv(TrainConfig& tc, const std::string& key, const std::string& value) {
    if (key == "lr")
        tc.lr = detail::config_double(key, value);
    else if (key == "warmup_ratio")
        tc.warmup_ratio = detail::config_double(key, value);
    else if (key == "weight_decay")
        tc.weight_decay = detail::config_double(key, value);
    else if (key == "grad_clip")
        tc.grad_clip = detail::config_double(key, value);
    else if (key == "epochs")
        tc.epochs = detail::config_int(key, value);
    else if (key == "batch_size")
        tc.batch_size = detail::config_int(key, value);
    else if (key == "shot_policy")
        tc.shot_policy = parse_shot_policy(value);
    else if (key == "rng_seed")
        tc.rng_seed = detail::config_uint64(key, value);
    else if (key == "mixture")
        tc.mixture = value;
    else if (key == "exclude_tasks")
        tc.exclude_tasks = detail::split_csv(value);
    else if (key == "train_target")
        tc.train_target = value;
    else if (key == "max_steps")
        tc.max_steps = detail::config_int(key, value);
    else if (key == "data_fraction")
        tc.data_fraction = detail::config_double(key, value);
    else
        fail("unknown training config key \"", key, "\"");
}

// Sets one architecture field from its textual form. Keys are exactly the
// BackboneConfig field names; anything else is rejected.
inline void apply_arch_kv(BackboneConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "d_model")
        cfg.d_model = detail::config_int(key, value);
    else if (key == "n_heads")
        cfg.n_heads = detail::config_int(key, value);
    else if (key == "enc_layers")
        cfg.enc_layers = detail::config_int(key, value);
    else if (key == "dec_layers")
        cfg.dec_layers = detail::config_int(key, value);
    else if (key == "ffn_dim")
        cfg.ffn_dim = detail::config_int(key, value);
    else if (key == "patch_size")
        cfg.patch_size = detail::config_int(key, value);
    else if (key == "vocab_size")
        cfg.vocab_size = detail::config_int(key, value);
    else if (key == "max_positions")
        cfg.max_positions = detail::config_int(key, value);
    else if (key == "max_target_positions")
        cfg.max_target_positions = detail::config_int(key, value);
    else if (key == "max_image_patches")
        cfg.max_image_patches = detail::config_int(key, value);
    else if (key == "dropout")
        cfg.dropout = detail::config_double(key, value);
    else
        fail("unknown architecture config key \"", key, "\"");
}

// Flat key=value text; order-preserving so files apply top to bottom. Blank
// lines and full-line # comments are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                          const std::string& origin) {
    std::vector<std::pair<std::string, std::string>> kv;
    size_t start = 0;
    size_t line_no = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            fail(origin, " line ", line_no, ": expected key=value, got \"", line, "\"");
        kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return kv;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    TrainConfig tc;
    for (const auto& [key, value] : parse_config_text(read_file_bytes(path), path.string()))
        apply_train_kv(tc, key, value);
    return tc;
}

inline BackboneConfig load_arch_config(const std::filesystem::path& path) {
    BackboneConfig cfg;
    for (const auto& [key, value] : parse_config_text(read_file_bytes(path), path.string()))
        apply_arch_kv(cfg, key, value);
    return cfg;
}

// Inverse of apply_train_kv over every field, used for manifests; feeding the
// text back through apply_train_kv reproduces the config.
inline std::string train_config_text(const TrainConfig& tc) {
    std::string out;
    const auto line = [&out](const std::string& k, const std::string& v) {
        out += k + "=" + v + "\n";
    };
    line("lr", format_double(tc.lr));
    line("warmup_ratio", format_double(tc.warmup_ratio));
    line("weight_decay", format_double(tc.weight_decay));
    line("grad_clip", format_double(tc.grad_clip));
    line("epochs", std::to_string(tc.epochs));
    line("batch_size", std::to_string(tc.batch_size));
    line("shot_policy", tc.shot_policy.to_string());
    line("rng_seed", std::to_string(tc.rng_seed));
    line("mixture", tc.mixture);
    line("exclude_tasks", detail::join_csv(tc.exclude_tasks));
    line("train_target", tc.train_target);
    line("max_steps", std::to_string(tc.max_steps));
    line("data_fraction", format_double(tc.data_fraction));
    return out;
}

}  // namespace mixt
