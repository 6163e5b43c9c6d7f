#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "midres/blob.hpp"
#include "midres/tensor.hpp"

namespace midres {

struct ManifestRecord {
    std::string blob_path;  // relative to the manifest's directory
    int label = 0;
    std::string class_name;
};

/// On-disk dataset description: a census header plus one record per sample.
struct DatasetManifest {
    std::size_t num_classes = 0;
    Shape input_shape;  // per-sample [C,H,W]
    std::vector<ManifestRecord> records;
    std::filesystem::path base_dir;

    std::vector<std::size_t> class_census() const {
        std::vector<std::size_t> census(num_classes, 0);
        for (const auto& r : records) census[static_cast<std::size_t>(r.label)]++;
        return census;
    }

    std::vector<std::string> class_names() const {
        std::vector<std::string> names(num_classes);
        for (const auto& r : records) {
            if (names[static_cast<std::size_t>(r.label)].empty()) {
                names[static_cast<std::size_t>(r.label)] = r.class_name;
            }
        }
        return names;
    }

    std::filesystem::path blob_file(std::size_t i) const {
        return base_dir / records[i].blob_path;
    }
};

inline std::string encode_manifest(const DatasetManifest& m) {
    std::ostringstream out;
    out << "# midres dataset manifest v1\n";
    out << "# num_classes: " << m.num_classes << "\n";
    out << "# input_shape: ";
    for (std::size_t i = 0; i < m.input_shape.size(); ++i) {
        if (i) out << "x";
        out << m.input_shape[i];
    }
    out << "\n";
    for (const auto& r : m.records) {
        out << r.blob_path << "," << r.label << "," << r.class_name << "\n";
    }
    return out.str();
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    detail::write_file_atomic(path, encode_manifest(m));
}

namespace detail {

inline Shape parse_shape_spec(const std::string& s, const std::string& origin) {
    Shape shape;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t next = s.find('x', pos);
        if (next == std::string::npos) next = s.size();
        const std::string tok = s.substr(pos, next - pos);
        try {
            const long v = std::stol(tok);
            if (v <= 0) throw std::invalid_argument("");
            shape.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw io_error(origin + ": bad shape token '" + tok + "' in '" + s + "'");
        }
        pos = next + 1;
    }
    if (shape.empty()) throw io_error(origin + ": empty input_shape");
    return shape;
}

}  // namespace detail

/// Parses and fully validates a manifest: header keys present, labels dense
/// in [0, num_classes), and every referenced blob present with the declared
/// shape. Throws io_error naming the offending record.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    const std::string text = detail::read_file(path);
    const std::string origin = path.string();
    DatasetManifest m;
    m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

    bool have_classes = false, have_shape = false;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (line[0] == '#') {
            const std::string body = line.substr(1);
            const std::size_t colon = body.find(':');
            if (colon == std::string::npos) continue;  // comment
            std::string key = body.substr(0, colon);
            std::string value = body.substr(colon + 1);
            auto trim = [](std::string& s) {
                s.erase(0, s.find_first_not_of(" \t"));
                s.erase(s.find_last_not_of(" \t") + 1);
            };
            trim(key);
            trim(value);
            if (key == "num_classes") {
                try {
                    const long v = std::stol(value);
                    if (v < 2) throw std::invalid_argument("");
                    m.num_classes = static_cast<std::size_t>(v);
                    have_classes = true;
                } catch (const std::exception&) {
                    throw io_error(where + ": bad num_classes '" + value + "'");
                }
            } else if (key == "input_shape") {
                m.input_shape = detail::parse_shape_spec(value, where);
                have_shape = true;
            }
            continue;
        }
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            throw io_error(where + ": expected 'blob_path,label,class_name', got '" + line + "'");
        }
        ManifestRecord r;
        r.blob_path = line.substr(0, c1);
        try {
            r.label = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
        } catch (const std::exception&) {
            throw io_error(where + ": bad label '" + line.substr(c1 + 1, c2 - c1 - 1) + "'");
        }
        r.class_name = line.substr(c2 + 1);
        m.records.push_back(std::move(r));
    }

    if (!have_classes) throw io_error(origin + ": missing '# num_classes:' header");
    if (!have_shape) throw io_error(origin + ": missing '# input_shape:' header");
    if (m.records.empty()) throw io_error(origin + ": no records");

    for (std::size_t i = 0; i < m.records.size(); ++i) {
        const auto& r = m.records[i];
        if (r.label < 0 || static_cast<std::size_t>(r.label) >= m.num_classes) {
            throw io_error(origin + ": record " + std::to_string(i) + " ('" + r.blob_path +
                           "') has label " + std::to_string(r.label) + " outside [0," +
                           std::to_string(m.num_classes) + ")");
        }
    }
    const auto census = m.class_census();
    for (std::size_t c = 0; c < census.size(); ++c) {
        if (census[c] == 0) {
            throw io_error(origin + ": class " + std::to_string(c) + " has no samples");
        }
    }
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        const auto f = m.blob_file(i);
        if (!std::filesystem::exists(f)) {
            throw io_error(origin + ": record " + std::to_string(i) + " references missing blob '" +
                           f.string() + "'");
        }
        const BlobHeader h = load_blob_header(f);
        if (h.shape != m.input_shape) {
            throw io_error(origin + ": record " + std::to_string(i) + " blob '" + f.string() +
                           "' has shape " + shape_str(h.shape) + ", manifest declares " +
                           shape_str(m.input_shape));
        }
    }
    return m;
}

/// Per-sample fold indices. Within every class the shuffled samples are
/// dealt round-robin, so per-class fold sizes differ by at most one.
struct FoldAssignment {
    std::size_t k = 0;
    std::vector<int> fold_of;  // parallel to manifest records

    std::string to_csv() const {
        std::string out = "sample_index,fold\n";
        for (std::size_t i = 0; i < fold_of.size(); ++i) {
            out += std::to_string(i) + "," + std::to_string(fold_of[i]) + "\n";
        }
        return out;
    }
};

inline FoldAssignment stratified_kfold(const DatasetManifest& m, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw std::invalid_argument("k must be positive");
    const auto census = m.class_census();
    for (std::size_t c = 0; c < census.size(); ++c) {
        if (census[c] < k) {
            throw std::invalid_argument("class " + std::to_string(c) + " has " +
                                        std::to_string(census[c]) + " samples, fewer than k=" +
                                        std::to_string(k));
        }
    }
    FoldAssignment fa;
    fa.k = k;
    fa.fold_of.assign(m.records.size(), -1);
    std::mt19937_64 rng(seed);
    // each class continues dealing where the previous one stopped, so the
    // per-class remainders spread over different folds and overall fold
    // sizes also stay within one of each other
    std::size_t next = 0;
    for (std::size_t c = 0; c < m.num_classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < m.records.size(); ++i) {
            if (static_cast<std::size_t>(m.records[i].label) == c) members.push_back(i);
        }
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t j = 0; j < members.size(); ++j) {
            fa.fold_of[members[j]] = static_cast<int>((next + j) % k);
        }
        next = (next + members.size()) % k;
    }
    return fa;
}

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Generates a labeled synthetic image set standing in for real scans:
/// class c gets a bright blob with a class-specific position and radius
/// pattern over low-amplitude noise, pixels in [0,1]. Content per sample is
/// a pure function of (seed, class, index). Returns the manifest path.
inline std::filesystem::path synth_dataset(std::size_t num_per_class, std::size_t image_size,
                                           std::size_t num_classes, std::uint64_t seed,
                                           const std::filesystem::path& out_dir) {
    if (image_size < 16 || image_size % 2 != 0) {
        throw std::invalid_argument("image size must be even and at least 16, got " +
                                    std::to_string(image_size));
    }
    if (num_per_class == 0) throw std::invalid_argument("need at least one sample per class");
    if (num_classes < 2) throw std::invalid_argument("need at least two classes");

    // populate a temp directory and rename it into place, so a failed run
    // never leaves a partial dataset
    const std::filesystem::path tmp_dir = out_dir.string() + "._tmp";
    std::error_code ec;
    std::filesystem::remove_all(tmp_dir, ec);
    std::filesystem::create_directories(tmp_dir / "blobs", ec);
    if (ec) throw io_error("cannot create '" + (tmp_dir / "blobs").string() + "': " + ec.message());

    DatasetManifest m;
    m.num_classes = num_classes;
    m.input_shape = {1, image_size, image_size};
    m.base_dir = tmp_dir;

    const double s = static_cast<double>(image_size);
    constexpr double pi = 3.14159265358979323846;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const double angle = 2.0 * pi * static_cast<double>(c) / static_cast<double>(num_classes);
        const double base_cx = s / 2 + 0.25 * s * std::cos(angle);
        const double base_cy = s / 2 + 0.25 * s * std::sin(angle);
        const double base_radius = s * (0.055 + 0.035 * static_cast<double>(c % 4));
        for (std::size_t i = 0; i < num_per_class; ++i) {
            std::mt19937_64 rng(detail::mix64(seed ^ detail::mix64(c * 1000003 + i)));
            std::uniform_real_distribution<double> noise(0.0, 0.15);
            std::uniform_real_distribution<double> jitter(-s / 20, s / 20);
            std::uniform_real_distribution<double> rscale(0.9, 1.1);
            std::uniform_real_distribution<double> peak(0.7, 1.0);

            Tensor<float> img({1, image_size, image_size});
            for (auto& v : img.data) v = static_cast<float>(noise(rng));
            const double cx = base_cx + jitter(rng);
            const double cy = base_cy + jitter(rng);
            const double radius = base_radius * rscale(rng);
            const double amp = peak(rng);
            for (std::size_t y = 0; y < image_size; ++y) {
                for (std::size_t x = 0; x < image_size; ++x) {
                    const double dx = (static_cast<double>(x) - cx) / radius;
                    const double dy = (static_cast<double>(y) - cy) / radius;
                    double v = img.data[y * image_size + x] + amp * std::exp(-0.5 * (dx * dx + dy * dy));
                    img.data[y * image_size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }

            char name[64];
            std::snprintf(name, sizeof(name), "blobs/c%zu_%04zu.tnsb", c, i);
            save_tensor_blob(img, tmp_dir / name);
            m.records.push_back({name, static_cast<int>(c), "class_" + std::to_string(c)});
        }
    }
    save_manifest(m, tmp_dir / "manifest.txt");

    std::filesystem::remove_all(out_dir, ec);
    std::filesystem::rename(tmp_dir, out_dir, ec);
    if (ec) throw io_error("cannot move dataset into '" + out_dir.string() + "': " + ec.message());
    return out_dir / "manifest.txt";
}

/// Scales every image in a [N,C,H,W] batch to zero mean and unit variance
/// (variance floor 1e-8). Applied the same way at train and eval time.
template <typename T>
void normalize_batch(Tensor<T>& batch) {
    const std::size_t n = batch.shape[0];
    const std::size_t per = batch.numel() / n;
    for (std::size_t i = 0; i < n; ++i) {
        T* img = batch.data.data() + i * per;
        double mean = 0;
        for (std::size_t j = 0; j < per; ++j) mean += img[j];
        mean /= static_cast<double>(per);
        double var = 0;
        for (std::size_t j = 0; j < per; ++j) {
            const double d = img[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(per);
        const double inv = 1.0 / std::sqrt(std::max(var, 1e-8));
        for (std::size_t j = 0; j < per; ++j) {
            img[j] = static_cast<T>((img[j] - mean) * inv);
        }
    }
}

/// Manifest pulled into memory, one tensor per sample.
template <typename T>
struct LoadedDataset {
    Shape sample_shape;  // [C,H,W]
    std::vector<Tensor<T>> images;
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::vector<std::string> class_names;

    std::size_t size() const { return images.size(); }
};

template <typename T>
LoadedDataset<T> load_dataset(const DatasetManifest& m) {
    LoadedDataset<T> d;
    d.sample_shape = m.input_shape;
    d.num_classes = m.num_classes;
    d.class_names = m.class_names();
    d.images.reserve(m.records.size());
    d.labels.reserve(m.records.size());
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        d.images.push_back(load_tensor_blob<T>(m.blob_file(i)));
        d.labels.push_back(m.records[i].label);
    }
    return d;
}

/// Stacks the given samples into one [n,C,H,W] batch.
template <typename T>
Tensor<T> make_batch(const LoadedDataset<T>& d, const std::vector<std::size_t>& indices,
                     std::vector<int>* labels_out = nullptr) {
    if (indices.empty()) throw std::invalid_argument("batch must not be empty");
    Shape shape = {indices.size()};
    for (auto v : d.sample_shape) shape.push_back(v);
    Tensor<T> batch(shape);
    const std::size_t per = shape_numel(d.sample_shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensor<T>& img = d.images[indices[i]];
        if (img.shape != d.sample_shape) {
            throw std::invalid_argument("sample " + std::to_string(indices[i]) + " has shape " +
                                        shape_str(img.shape) + ", dataset declares " +
                                        shape_str(d.sample_shape));
        }
        std::copy(img.data.begin(), img.data.end(), batch.data.begin() + i * per);
        if (labels_out) labels_out->push_back(d.labels[indices[i]]);
    }
    return batch;
}

}  // namespace midres
