#pragma once

#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "midres/blob.hpp"
#include "midres/model.hpp"
#include "midres/train.hpp"

namespace midres {

/// Run configuration file: JSON with "network", "train", "kfold" sections
/// plus a few top-level keys. Unknown keys are rejected so typos cannot
/// silently fall back to defaults; omitted keys take the documented
/// defaults (lr 0.001, epochs 150, momentum 0.9, k 5).
struct RunConfig {
    NetworkConfig network;
    TrainConfig train;
    std::size_t k = 5;
    std::string precision = "f64";
    std::string manifest_path;
    std::string out_path;

    static RunConfig from_json(const nlohmann::json& j, const std::string& origin);
    static RunConfig load(const std::filesystem::path& path);
};

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                       const std::string& origin) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) {
            std::string known;
            for (const auto& k : allowed) known += (known.empty() ? "" : ", ") + k;
            throw io_error(origin + ": unknown key '" + key + "' (known keys: " + known + ")");
        }
    }
}

template <typename V>
void read_key(const nlohmann::json& obj, const std::string& key, V& out, const std::string& origin) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
        throw io_error(origin + ": bad value for '" + key + "': " + e.what());
    }
}

}  // namespace detail

inline RunConfig RunConfig::from_json(const nlohmann::json& j, const std::string& origin) {
    RunConfig cfg;
    detail::check_keys(j, {"seed", "k", "precision", "network", "train", "paths"}, origin);
    std::uint64_t seed = cfg.train.seed;
    detail::read_key(j, "seed", seed, origin);
    detail::read_key(j, "k", cfg.k, origin);
    detail::read_key(j, "precision", cfg.precision, origin);
    if (cfg.precision != "f32" && cfg.precision != "f64") {
        throw io_error(origin + ": precision must be 'f32' or 'f64', got '" + cfg.precision + "'");
    }

    if (j.contains("network")) {
        const auto& n = j.at("network");
        detail::check_keys(n, {"variant", "input_channels", "input_size", "channel_plan",
                               "fc_widths", "num_classes", "kernel"}, origin + ": network");
        std::string variant = variant_name(cfg.network.variant);
        detail::read_key(n, "variant", variant, origin);
        try {
            cfg.network.variant = parse_variant(variant);
        } catch (const std::invalid_argument& e) {
            throw io_error(origin + ": " + e.what());
        }
        detail::read_key(n, "input_channels", cfg.network.input_channels, origin);
        detail::read_key(n, "input_size", cfg.network.input_size, origin);
        detail::read_key(n, "channel_plan", cfg.network.channel_plan, origin);
        detail::read_key(n, "fc_widths", cfg.network.fc_widths, origin);
        detail::read_key(n, "num_classes", cfg.network.num_classes, origin);
        detail::read_key(n, "kernel", cfg.network.kernel, origin);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::check_keys(t, {"epochs", "batch_size", "learning_rate", "momentum", "shuffle",
                               "normalize"}, origin + ": train");
        detail::read_key(t, "epochs", cfg.train.epochs, origin);
        detail::read_key(t, "batch_size", cfg.train.batch_size, origin);
        detail::read_key(t, "learning_rate", cfg.train.learning_rate, origin);
        detail::read_key(t, "momentum", cfg.train.momentum, origin);
        detail::read_key(t, "shuffle", cfg.train.shuffle, origin);
        detail::read_key(t, "normalize", cfg.train.normalize, origin);
    }
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        detail::check_keys(p, {"manifest", "out"}, origin + ": paths");
        detail::read_key(p, "manifest", cfg.manifest_path, origin);
        detail::read_key(p, "out", cfg.out_path, origin);
    }
    cfg.train.seed = seed;

    try {
        cfg.network.validate();
        cfg.train.validate();
    } catch (const std::invalid_argument& e) {
        throw io_error(origin + ": " + e.what());
    }
    if (cfg.k < 2) throw io_error(origin + ": k must be at least 2");
    return cfg;
}

inline RunConfig RunConfig::load(const std::filesystem::path& path) {
    const std::string text = detail::read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw io_error(path.string() + ": config root must be an object");
    return from_json(j, path.string());
}

}  // namespace midres
