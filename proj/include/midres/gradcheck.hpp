#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "midres/model.hpp"
#include "midres/tape.hpp"

namespace midres {

/// One recorded scalar-loss graph whose analytic gradients are to be
/// checked against central finite differences. Gradient checking is a
/// 64-bit-only affair; float tolerances loose enough to pass are not worth
/// asserting.
struct GradCheckCase {
    std::string name;
    std::uint64_t seed = 0;
    std::deque<Parameter<double>> local_params;
    std::unique_ptr<Model<double>> model;
    std::vector<Parameter<double>*> checked;
    Tape<double> tape;
    Value loss{};
};

struct GradCheckParamResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::string case_name;
    std::uint64_t seed = 0;
    double rel_tol = 1e-4;
    double step = 1e-5;
    std::vector<GradCheckParamResult> params;
    double worst_rel_err = 0.0;
    // Smallest distance to a relu/maxpool decision boundary seen in the
    // recorded forward. Finite differences are only meaningful when this
    // comfortably exceeds the step.
    double min_kink_margin = std::numeric_limits<double>::infinity();
    bool pass = true;
};

struct GradCheckOptions {
    double rel_tol = 1e-4;
    double step = 1e-5;
};

/// Distance to the nearest relu zero crossing or max-pool argmax flip in the
/// recorded graph.
inline double kink_margin(const Tape<double>& tape) {
    double margin = std::numeric_limits<double>::infinity();
    const auto& recs = tape.records();
    for (const auto& rec : recs) {
        if (rec.kind == OpKind::relu) {
            for (double v : recs[rec.in[0]].out.data) margin = std::min(margin, std::abs(v));
        } else if (rec.kind == OpKind::maxpool2d) {
            const Tensor<double>& x = recs[rec.in[0]].out;
            const std::size_t h = x.shape[2], w = x.shape[3];
            for (std::size_t n = 0; n < x.shape[0]; ++n) {
                for (std::size_t c = 0; c < x.shape[1]; ++c) {
                    const std::size_t base = (n * x.shape[1] + c) * h * w;
                    for (std::size_t y = 0; y + 1 < h; y += 2) {
                        for (std::size_t xo = 0; xo + 1 < w; xo += 2) {
                            const std::size_t i = base + y * w + xo;
                            double top = -std::numeric_limits<double>::infinity(), second = top;
                            for (std::size_t idx : {i, i + 1, i + w, i + w + 1}) {
                                const double v = x.data[idx];
                                if (v > top) {
                                    second = top;
                                    top = v;
                                } else if (v > second) {
                                    second = v;
                                }
                            }
                            // an exact tie of zeros (a fully dead window) only
                            // flips if a relu upstream flips, which the relu
                            // margin already measures
                            if (top == second && top == 0.0) continue;
                            margin = std::min(margin, top - second);
                        }
                    }
                }
            }
        }
    }
    return margin;
}

/// Compares whatever is currently in each checked parameter's grad against
/// central differences (f(x+h) - f(x-h)) / 2h evaluated through the recorded
/// tape. Failures are reported, never thrown.
inline GradCheckReport compare_with_fd(GradCheckCase& c, const GradCheckOptions& opt = {}) {
    GradCheckReport report;
    report.case_name = c.name;
    report.seed = c.seed;
    report.rel_tol = opt.rel_tol;
    report.step = opt.step;
    report.min_kink_margin = kink_margin(c.tape);
    for (Parameter<double>* p : c.checked) {
        GradCheckParamResult r;
        r.name = p->name;
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double up = c.tape.eval_perturbed(c.loss, *p, i, opt.step);
            const double down = c.tape.eval_perturbed(c.loss, *p, i, -opt.step);
            const double numeric = (up - down) / (2.0 * opt.step);
            const double analytic = p->grad.data[i];
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            r.max_rel_err = std::max(r.max_rel_err, rel);
        }
        r.pass = r.max_rel_err <= opt.rel_tol;
        report.worst_rel_err = std::max(report.worst_rel_err, r.max_rel_err);
        report.pass = report.pass && r.pass;
        report.params.push_back(std::move(r));
    }
    return report;
}

/// Zeroes grads, runs backward from the case's loss, then checks every
/// parameter against finite differences.
inline GradCheckReport run_gradcheck(GradCheckCase& c, const GradCheckOptions& opt = {}) {
    for (Parameter<double>* p : c.checked) p->zero_grad();
    c.tape.backward(c.loss);
    return compare_with_fd(c, opt);
}

namespace detail {

inline Parameter<double>& add_param(GradCheckCase& c, const std::string& name, Tensor<double> value) {
    c.local_params.emplace_back(name, std::move(value));
    c.checked.push_back(&c.local_params.back());
    return c.local_params.back();
}

inline Tensor<double> randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
    Tensor<double> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

// flatten if needed, project to 3 logits, cross-entropy on random labels
inline void attach_loss_head(GradCheckCase& c, Value features, std::mt19937_64& rng) {
    Value flat = c.tape.value(features).rank() == 4 ? c.tape.flatten(features) : features;
    const std::size_t f = c.tape.value(flat).shape[1];
    const std::size_t n = c.tape.value(flat).shape[0];
    Parameter<double>& hw = add_param(c, "head.weight", randn({f, 3}, rng, 1.0 / std::sqrt(double(f))));
    Parameter<double>& hb = add_param(c, "head.bias", Tensor<double>({3}));
    Value logits = c.tape.dense(flat, c.tape.param(hw), c.tape.param(hb));
    std::uniform_int_distribution<int> lab(0, 2);
    std::vector<int> labels(n);
    for (auto& l : labels) l = lab(rng);
    c.loss = c.tape.softmax_cross_entropy(logits, labels);
}

}  // namespace detail

inline std::vector<std::string> gradcheck_case_names() {
    return {"conv2d",       "maxpool2d",    "relu",
            "dense",        "flatten",      "residual_add",
            "softmax_cross_entropy", "midres_block", "midres_classifier"};
}

/// Builds the named gradient-check graph from a seed. Inputs to kinked ops
/// are kept away from their decision boundaries, matching the conditions
/// under which finite differences are trustworthy.
inline GradCheckCase make_gradcheck_case(const std::string& name, std::uint64_t seed) {
    GradCheckCase c;
    c.name = name;
    c.seed = seed;
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 12345);
    using detail::add_param;
    using detail::attach_loss_head;
    using detail::randn;

    if (name == "conv2d") {
        Value x = c.tape.constant(randn({2, 3, 8, 8}, rng));
        Parameter<double>& w1 = add_param(c, "conv1.weight", randn({4, 3, 3, 3}, rng, 0.3));
        Parameter<double>& b1 = add_param(c, "conv1.bias", randn({4}, rng, 0.1));
        Value v = c.tape.conv2d(x, c.tape.param(w1), c.tape.param(b1), 1, 1);
        Parameter<double>& w2 = add_param(c, "conv2.weight", randn({5, 4, 3, 3}, rng, 0.2));
        Parameter<double>& b2 = add_param(c, "conv2.bias", randn({5}, rng, 0.1));
        v = c.tape.conv2d(v, c.tape.param(w2), c.tape.param(b2), 0, 2);
        attach_loss_head(c, v, rng);
    } else if (name == "maxpool2d") {
        // quantized values plus a distinct sub-cell offset keep every window
        // gap at 1e-3 or more
        Tensor<double> x({1, 2, 6, 6});
        std::uniform_int_distribution<int> quant(0, 249);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const std::size_t h = (i / 6) % 6, w = i % 6;
            x.data[i] = quant(rng) * 4e-3 + ((h % 2) * 2 + w % 2) * 1e-3;
        }
        Parameter<double>& xp = add_param(c, "input", std::move(x));
        Value v = c.tape.maxpool2d(c.tape.param(xp));
        attach_loss_head(c, v, rng);
    } else if (name == "relu") {
        Tensor<double> x({2, 10});
        std::uniform_real_distribution<double> mag(0.1, 1.0);
        std::bernoulli_distribution sign(0.5);
        for (auto& v : x.data) v = sign(rng) ? mag(rng) : -mag(rng);
        Parameter<double>& xp = add_param(c, "input", std::move(x));
        attach_loss_head(c, c.tape.relu(c.tape.param(xp)), rng);
    } else if (name == "dense") {
        Value x = c.tape.constant(randn({3, 5}, rng));
        Parameter<double>& w1 = add_param(c, "dense1.weight", randn({5, 4}, rng, 0.5));
        Parameter<double>& b1 = add_param(c, "dense1.bias", randn({4}, rng, 0.1));
        Value v = c.tape.dense(x, c.tape.param(w1), c.tape.param(b1));
        attach_loss_head(c, v, rng);
    } else if (name == "flatten") {
        Parameter<double>& xp = add_param(c, "input", randn({2, 3, 4, 4}, rng));
        attach_loss_head(c, c.tape.flatten(c.tape.param(xp)), rng);
    } else if (name == "residual_add") {
        Parameter<double>& a = add_param(c, "a", randn({1, 2, 4, 4}, rng));
        Parameter<double>& b = add_param(c, "b", randn({1, 2, 4, 4}, rng));
        attach_loss_head(c, c.tape.residual_add(c.tape.param(a), c.tape.param(b)), rng);
    } else if (name == "softmax_cross_entropy") {
        Parameter<double>& logits = add_param(c, "logits", randn({4, 3}, rng));
        std::uniform_int_distribution<int> lab(0, 2);
        std::vector<int> labels(4);
        for (auto& l : labels) l = lab(rng);
        c.loss = c.tape.softmax_cross_entropy(c.tape.param(logits), labels);
    } else if (name == "midres_block") {
        std::uniform_real_distribution<double> pix(0.05, 0.95);
        Tensor<double> img({1, 2, 8, 8});
        for (auto& v : img.data) v = pix(rng);
        Value x = c.tape.constant(std::move(img));
        MidResBlockConfig bc{2, 4, 3};
        Parameter<double>& w1 = add_param(c, "block.conv1.weight", randn({4, 2, 3, 3}, rng, 0.4));
        Parameter<double>& b1 = add_param(c, "block.conv1.bias", randn({4}, rng, 0.05));
        Parameter<double>& w2 = add_param(c, "block.conv2.weight", randn({4, 4, 3, 3}, rng, 0.3));
        Parameter<double>& b2 = add_param(c, "block.conv2.bias", randn({4}, rng, 0.05));
        Value v = midres_block_forward(c.tape, bc, x, w1, b1, w2, b2);
        attach_loss_head(c, v, rng);
    } else if (name == "midres_classifier") {
        c.model = std::make_unique<Model<double>>(NetworkConfig::desk_scale(Variant::midres_classifier));
        init_parameters(*c.model, seed);
        std::uniform_real_distribution<double> pix(0.05, 0.95);
        Tensor<double> img({1, 1, 64, 64});
        for (auto& v : img.data) v = pix(rng);
        Value logits = c.model->forward(c.tape, c.tape.constant(std::move(img)));
        std::uniform_int_distribution<int> lab(0, 2);
        c.loss = c.tape.softmax_cross_entropy(logits, {lab(rng)});
        for (auto& p : c.model->parameters()) c.checked.push_back(&p);
    } else {
        throw std::invalid_argument("unknown gradcheck case '" + name + "'");
    }
    return c;
}

using GradCheckBuilder = std::function<GradCheckCase(std::uint64_t)>;

/// Runs the builder's graph once per seed and checks every parameter.
inline std::vector<GradCheckReport> gradcheck(const GradCheckBuilder& builder,
                                              const std::vector<std::uint64_t>& seeds,
                                              double rel_tol = 1e-4) {
    std::vector<GradCheckReport> reports;
    reports.reserve(seeds.size());
    for (std::uint64_t s : seeds) {
        GradCheckCase c = builder(s);
        GradCheckOptions opt;
        opt.rel_tol = rel_tol;
        reports.push_back(run_gradcheck(c, opt));
    }
    return reports;
}

}  // namespace midres
