#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>

#include "midres/blob.hpp"
#include "midres/model.hpp"

namespace midres {

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

inline std::vector<std::size_t> split_sizes(const std::string& s, const std::string& origin) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        const std::string tok = s.substr(pos, next - pos);
        try {
            const long v = std::stol(tok);
            if (v <= 0) throw std::invalid_argument("");
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw io_error(origin + ": bad size list entry '" + tok + "'");
        }
        pos = next + 1;
    }
    return out;
}

}  // namespace detail

/// A checkpoint is a directory: one blob per named parameter under params/,
/// plus model.txt recording the format version, precision, and network
/// configuration. Writing goes through a temp directory and a final rename.
template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& dir,
                     const std::map<std::string, std::string>& extra_header = {}) {
    namespace fs = std::filesystem;
    const fs::path tmp = dir.string() + "._tmp";
    std::error_code ec;
    fs::remove_all(tmp, ec);
    fs::create_directories(tmp / "params", ec);
    if (ec) throw io_error("cannot create '" + (tmp / "params").string() + "': " + ec.message());

    const NetworkConfig& cfg = model.config();
    std::ostringstream head;
    head << "# midres checkpoint v1\n";
    head << "# precision: " << (sizeof(T) == 4 ? "f32" : "f64") << "\n";
    head << "# variant: " << variant_name(cfg.variant) << "\n";
    head << "# input_channels: " << cfg.input_channels << "\n";
    head << "# input_size: " << cfg.input_size << "\n";
    head << "# channel_plan: " << detail::join_sizes(cfg.channel_plan) << "\n";
    head << "# fc_widths: " << detail::join_sizes(cfg.fc_widths) << "\n";
    head << "# num_classes: " << cfg.num_classes << "\n";
    head << "# kernel: " << cfg.kernel << "\n";
    for (const auto& [key, value] : extra_header) {
        head << "# " << key << ": " << value << "\n";
    }
    std::string body;
    for (const Parameter<T>& p : model.parameters()) {
        const std::string rel = "params/" + p.name + ".tnsb";
        save_tensor_blob(p.value, tmp / rel);
        body += p.name + "," + rel + "\n";
    }
    detail::write_file_atomic(tmp / "model.txt", head.str() + body);

    fs::remove_all(dir, ec);
    fs::rename(tmp, dir, ec);
    if (ec) throw io_error("cannot move checkpoint into '" + dir.string() + "': " + ec.message());
}

/// All "# key: value" header entries of a checkpoint.
inline std::map<std::string, std::string> checkpoint_header(const std::filesystem::path& dir) {
    const std::string text = detail::read_file(dir / "model.txt");
    std::map<std::string, std::string> header;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] != '#') continue;
        const std::string body = line.substr(1);
        const std::size_t colon = body.find(':');
        if (colon == std::string::npos) continue;
        std::string key = body.substr(0, colon);
        std::string value = body.substr(colon + 1);
        auto trim = [](std::string& s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
        };
        trim(key);
        trim(value);
        header[key] = value;
    }
    return header;
}

/// Reads just the stored precision tag ("f32" or "f64").
inline std::string checkpoint_precision(const std::filesystem::path& dir) {
    const auto header = checkpoint_header(dir);
    const auto it = header.find("precision");
    if (it == header.end()) {
        throw io_error((dir / "model.txt").string() + ": missing precision header");
    }
    return it->second;
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& dir) {
    const std::string origin = (dir / "model.txt").string();
    const std::string text = detail::read_file(dir / "model.txt");

    std::map<std::string, std::string> header;
    std::vector<std::pair<std::string, std::string>> entries;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string body = line.substr(1);
            const std::size_t colon = body.find(':');
            if (colon == std::string::npos) continue;
            std::string key = body.substr(0, colon);
            std::string value = body.substr(colon + 1);
            auto trim = [](std::string& s) {
                s.erase(0, s.find_first_not_of(" \t"));
                s.erase(s.find_last_not_of(" \t") + 1);
            };
            trim(key);
            trim(value);
            header[key] = value;
            continue;
        }
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) {
            throw io_error(origin + ": expected 'name,blob', got '" + line + "'");
        }
        entries.emplace_back(line.substr(0, comma), line.substr(comma + 1));
    }

    auto require = [&](const std::string& key) -> const std::string& {
        auto it = header.find(key);
        if (it == header.end()) throw io_error(origin + ": missing '# " + key + ":' header");
        return it->second;
    };

    NetworkConfig cfg;
    try {
        cfg.variant = parse_variant(require("variant"));
        cfg.input_channels = static_cast<std::size_t>(std::stoul(require("input_channels")));
        cfg.input_size = static_cast<std::size_t>(std::stoul(require("input_size")));
        cfg.channel_plan = detail::split_sizes(require("channel_plan"), origin);
        cfg.fc_widths = detail::split_sizes(require("fc_widths"), origin);
        cfg.num_classes = static_cast<std::size_t>(std::stoul(require("num_classes")));
        cfg.kernel = static_cast<std::size_t>(std::stoul(require("kernel")));
        cfg.validate();
    } catch (const io_error&) {
        throw;
    } catch (const std::exception& e) {
        throw io_error(origin + ": bad checkpoint config: " + e.what());
    }

    Model<T> model(cfg);
    if (entries.size() != model.parameters().size()) {
        throw io_error(origin + ": " + std::to_string(entries.size()) + " parameter entries, config needs " +
                       std::to_string(model.parameters().size()));
    }
    for (const auto& [name, rel] : entries) {
        Parameter<T>* p_slot = nullptr;
        try {
            p_slot = &model.at(name);
        } catch (const std::invalid_argument&) {
            throw io_error(origin + ": parameter '" + name + "' is not part of the stored config");
        }
        Parameter<T>& p = *p_slot;
        Tensor<T> value = load_tensor_blob<T>(dir / rel);
        if (value.shape != p.value.shape) {
            throw io_error(origin + ": parameter '" + name + "' stored as " + shape_str(value.shape) +
                           ", config derives " + shape_str(p.value.shape));
        }
        p.value = std::move(value);
        p.zero_grad();
    }
    return model;
}

}  // namespace midres
