#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "midres/parameter.hpp"
#include "midres/tape.hpp"
#include "midres/tensor.hpp"

namespace midres {

enum class Variant { baseline_lenet, midres_classifier };

inline std::string variant_name(Variant v) {
    return v == Variant::baseline_lenet ? "baseline_lenet" : "midres_classifier";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "baseline_lenet") return Variant::baseline_lenet;
    if (s == "midres_classifier") return Variant::midres_classifier;
    throw std::invalid_argument("unknown variant '" + s + "' (expected baseline_lenet or midres_classifier)");
}

/// One encoder block: conv -> relu -> maxpool gives the medial feature at
/// half resolution, a second conv -> relu refines it, and the block output
/// is medial + refined. The kernel must be odd so same-padding keeps the
/// spatial size; all resolution loss happens at the pooling step.
struct MidResBlockConfig {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 3;

    void validate() const {
        if (in_channels == 0 || out_channels == 0) {
            throw std::invalid_argument("block channels must be positive");
        }
        if (kernel == 0 || kernel % 2 == 0) {
            throw std::invalid_argument("block kernel must be odd, got " + std::to_string(kernel));
        }
    }
};

struct NetworkConfig {
    Variant variant = Variant::midres_classifier;
    std::size_t input_channels = 1;
    std::size_t input_size = 64;
    std::vector<std::size_t> channel_plan = {4, 8, 16, 32};
    std::vector<std::size_t> fc_widths = {64};
    std::size_t num_classes = 3;
    std::size_t kernel = 3;

    // Pools per forward pass: one per stage, plus the baseline's stem pool.
    std::size_t halvings() const {
        return channel_plan.size() + (variant == Variant::baseline_lenet ? 1 : 0);
    }

    void validate() const {
        if (input_channels == 0) throw std::invalid_argument("input_channels must be positive");
        if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
        if (channel_plan.empty()) throw std::invalid_argument("channel_plan must not be empty");
        for (auto c : channel_plan) {
            if (c == 0) throw std::invalid_argument("channel_plan entries must be positive");
        }
        for (auto w : fc_widths) {
            if (w == 0) throw std::invalid_argument("fc_widths entries must be positive");
        }
        if (kernel == 0 || kernel % 2 == 0) {
            throw std::invalid_argument("kernel must be odd, got " + std::to_string(kernel));
        }
        if (variant == Variant::midres_classifier && channel_plan.size() != 4) {
            throw std::invalid_argument("midres_classifier takes exactly 4 encoder channels, got " +
                                        std::to_string(channel_plan.size()));
        }
        const std::size_t div = std::size_t(1) << halvings();
        if (input_size == 0 || input_size % div != 0) {
            throw std::invalid_argument("input_size " + std::to_string(input_size) +
                                        " must be a positive multiple of " + std::to_string(div));
        }
    }

    /// Small configuration the whole test suite can train in seconds.
    static NetworkConfig desk_scale(Variant v) {
        NetworkConfig c;
        c.variant = v;
        c.input_size = 64;
        c.channel_plan = {4, 8, 16, 32};
        c.fc_widths = {64};
        return c;
    }

    /// The 512x512 single-channel configuration. The classifier head keeps
    /// one hidden 4096 layer; the baseline keeps two.
    static NetworkConfig full_scale(Variant v) {
        NetworkConfig c;
        c.variant = v;
        c.input_size = 512;
        c.channel_plan = {32, 64, 128, 256};
        c.fc_widths = v == Variant::baseline_lenet ? std::vector<std::size_t>{4096, 4096}
                                                   : std::vector<std::size_t>{4096};
        return c;
    }
};

struct ParamSpec {
    std::string name;
    Shape shape;
};

struct FeatureMapSpec {
    std::string after;  // layer that produced it
    std::size_t channels = 0, height = 0, width = 0;
};

/// Everything derivable from a NetworkConfig without allocating weights:
/// parameter names and shapes (in construction order), the feature map
/// trace, and the conv/pool layer census.
struct ModelPlan {
    std::vector<ParamSpec> params;
    std::vector<FeatureMapSpec> feature_maps;
    std::size_t conv_layers = 0;
    std::size_t pool_layers = 0;
    std::size_t flatten_width = 0;
    std::size_t final_channels = 0, final_height = 0, final_width = 0;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += shape_numel(p.shape);
        return n;
    }
};

inline ModelPlan plan_network(const NetworkConfig& cfg) {
    cfg.validate();
    ModelPlan plan;
    const std::size_t k = cfg.kernel;
    std::size_t ch = cfg.input_channels;
    std::size_t sz = cfg.input_size;

    auto conv = [&](const std::string& name, std::size_t out_ch) {
        plan.params.push_back({name + ".weight", {out_ch, ch, k, k}});
        plan.params.push_back({name + ".bias", {out_ch}});
        plan.conv_layers++;
        ch = out_ch;
        plan.feature_maps.push_back({name, ch, sz, sz});
    };
    auto pool = [&](const std::string& name) {
        if (sz % 2 != 0) {
            throw std::invalid_argument("odd feature map size " + std::to_string(sz) + " at " + name);
        }
        sz /= 2;
        plan.pool_layers++;
        plan.feature_maps.push_back({name, ch, sz, sz});
    };

    if (cfg.variant == Variant::midres_classifier) {
        for (std::size_t i = 0; i < cfg.channel_plan.size(); ++i) {
            const std::string enc = "enc" + std::to_string(i + 1);
            conv(enc + ".conv1", cfg.channel_plan[i]);
            pool(enc + ".pool");
            conv(enc + ".conv2", cfg.channel_plan[i]);
        }
    } else {
        conv("stem.conv", cfg.channel_plan[0]);
        pool("stem.pool");
        for (std::size_t i = 0; i < cfg.channel_plan.size(); ++i) {
            const std::string st = "stage" + std::to_string(i + 1);
            conv(st + ".conv1", cfg.channel_plan[i]);
            conv(st + ".conv2", cfg.channel_plan[i]);
            conv(st + ".conv3", cfg.channel_plan[i]);
            pool(st + ".pool");
        }
    }

    plan.final_channels = ch;
    plan.final_height = sz;
    plan.final_width = sz;
    plan.flatten_width = ch * sz * sz;

    std::size_t width = plan.flatten_width;
    for (std::size_t i = 0; i < cfg.fc_widths.size(); ++i) {
        const std::string fc = "fc" + std::to_string(i + 1);
        plan.params.push_back({fc + ".weight", {width, cfg.fc_widths[i]}});
        plan.params.push_back({fc + ".bias", {cfg.fc_widths[i]}});
        width = cfg.fc_widths[i];
    }
    plan.params.push_back({"out.weight", {width, cfg.num_classes}});
    plan.params.push_back({"out.bias", {cfg.num_classes}});
    return plan;
}

/// A built network: config plus its named parameters in a deterministic
/// order. Parameter addresses are stable for the life of the model.
template <typename T>
class Model {
public:
    explicit Model(NetworkConfig cfg) : config_(std::move(cfg)), plan_(plan_network(config_)) {
        for (const auto& spec : plan_.params) {
            params_.emplace_back(spec.name, Tensor<T>(spec.shape));
            index_.emplace(spec.name, params_.size() - 1);
        }
    }

    const NetworkConfig& config() const { return config_; }
    const ModelPlan& plan() const { return plan_; }

    std::deque<Parameter<T>>& parameters() { return params_; }
    const std::deque<Parameter<T>>& parameters() const { return params_; }

    Parameter<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
        return params_[it->second];
    }

    std::size_t parameter_count() const { return plan_.parameter_count(); }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    /// Records the variant's forward graph on the tape and returns the
    /// logits value ([N, num_classes]).
    Value forward(Tape<T>& tape, Value input) {
        const Tensor<T>& x = tape.value(input);
        if (x.rank() != 4 || x.shape[1] != config_.input_channels ||
            x.shape[2] != config_.input_size || x.shape[3] != config_.input_size) {
            throw std::invalid_argument(
                "input shape " + shape_str(x.shape) + " does not match configured [N," +
                std::to_string(config_.input_channels) + "," + std::to_string(config_.input_size) +
                "," + std::to_string(config_.input_size) + "]");
        }
        const std::size_t pad = config_.kernel / 2;
        Value v = input;
        if (config_.variant == Variant::midres_classifier) {
            for (std::size_t i = 0; i < config_.channel_plan.size(); ++i) {
                const std::string enc = "enc" + std::to_string(i + 1);
                v = block_forward(tape, v, at(enc + ".conv1.weight"), at(enc + ".conv1.bias"),
                                  at(enc + ".conv2.weight"), at(enc + ".conv2.bias"), pad);
            }
        } else {
            v = tape.maxpool2d(tape.relu(tape.conv2d(
                v, tape.param(at("stem.conv.weight")), tape.param(at("stem.conv.bias")), pad, 1)));
            for (std::size_t i = 0; i < config_.channel_plan.size(); ++i) {
                const std::string st = "stage" + std::to_string(i + 1);
                for (int c = 1; c <= 3; ++c) {
                    const std::string conv = st + ".conv" + std::to_string(c);
                    v = tape.relu(tape.conv2d(v, tape.param(at(conv + ".weight")),
                                              tape.param(at(conv + ".bias")), pad, 1));
                }
                v = tape.maxpool2d(v);
            }
        }
        v = tape.flatten(v);
        for (std::size_t i = 0; i < config_.fc_widths.size(); ++i) {
            const std::string fc = "fc" + std::to_string(i + 1);
            v = tape.relu(tape.dense(v, tape.param(at(fc + ".weight")), tape.param(at(fc + ".bias"))));
        }
        return tape.dense(v, tape.param(at("out.weight")), tape.param(at("out.bias")));
    }

private:
    NetworkConfig config_;
    ModelPlan plan_;
    std::deque<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;

    static Value block_forward(Tape<T>& tape, Value x, Parameter<T>& w1, Parameter<T>& b1,
                               Parameter<T>& w2, Parameter<T>& b2, std::size_t pad) {
        Value medial = tape.maxpool2d(tape.relu(tape.conv2d(x, tape.param(w1), tape.param(b1), pad, 1)));
        Value refined = tape.relu(tape.conv2d(medial, tape.param(w2), tape.param(b2), pad, 1));
        return tape.residual_add(medial, refined);
    }
};

/// Standalone encoder block: medial = maxpool(relu(conv1(x))), output =
/// medial + relu(conv2(medial)). Both convs use same padding, so medial and
/// output share a shape and the skip needs no projection.
template <typename T>
Value midres_block_forward(Tape<T>& tape, const MidResBlockConfig& cfg, Value input,
                           Parameter<T>& conv1_w, Parameter<T>& conv1_b, Parameter<T>& conv2_w,
                           Parameter<T>& conv2_b) {
    cfg.validate();
    const std::size_t pad = cfg.kernel / 2;
    Value medial =
        tape.maxpool2d(tape.relu(tape.conv2d(input, tape.param(conv1_w), tape.param(conv1_b), pad, 1)));
    Value refined = tape.relu(tape.conv2d(medial, tape.param(conv2_w), tape.param(conv2_b), pad, 1));
    return tape.residual_add(medial, refined);
}

template <typename T>
Model<T> build_midres_classifier(const NetworkConfig& cfg) {
    if (cfg.variant != Variant::midres_classifier) {
        throw std::invalid_argument("build_midres_classifier got variant " + variant_name(cfg.variant));
    }
    return Model<T>(cfg);
}

template <typename T>
Model<T> build_baseline_lenet(const NetworkConfig& cfg) {
    if (cfg.variant != Variant::baseline_lenet) {
        throw std::invalid_argument("build_baseline_lenet got variant " + variant_name(cfg.variant));
    }
    return Model<T>(cfg);
}

/// He-normal weights (stddev sqrt(2/fan_in)), zero biases, fully determined
/// by the seed.
template <typename T>
void init_parameters(Model<T>& model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& p : model.parameters()) {
        const bool is_weight = p.name.size() > 7 && p.name.rfind(".weight") == p.name.size() - 7;
        if (!is_weight) {
            p.value.fill(T(0));
        } else {
            std::size_t fan_in = 1;
            if (p.value.rank() == 4) {
                fan_in = p.value.shape[1] * p.value.shape[2] * p.value.shape[3];
            } else {
                fan_in = p.value.shape[0];
            }
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
            for (auto& v : p.value.data) v = static_cast<T>(dist(rng));
        }
        p.zero_grad();
    }
}

template <typename T>
Tensor<T> forward_logits(Model<T>& model, const Tensor<T>& batch) {
    Tape<T> tape;
    Value out = model.forward(tape, tape.constant(batch));
    return tape.value(out);
}

/// Argmax over logits per row, ties broken toward the lowest class index.
template <typename T>
std::vector<int> predict_class(Model<T>& model, const Tensor<T>& batch) {
    Tensor<T> logits = forward_logits(model, batch);
    std::vector<int> out(logits.shape[0]);
    for (std::size_t n = 0; n < logits.shape[0]; ++n) {
        const T* row = logits.data.data() + n * logits.shape[1];
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.shape[1]; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[n] = static_cast<int>(best);
    }
    return out;
}

}  // namespace midres
