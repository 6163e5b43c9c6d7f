#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "midres/dataset.hpp"
#include "midres/model.hpp"
#include "midres/optim.hpp"
#include "midres/tape.hpp"

namespace midres {

/// Training protocol knobs. The defaults are the reference protocol:
/// SGD with momentum 0.9, learning rate 0.001, 150 epochs.
struct TrainConfig {
    std::size_t epochs = 150;
    std::size_t batch_size = 16;
    double learning_rate = 0.001;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    bool shuffle = true;
    bool normalize = true;

    void validate() const {
        if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
        if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
        if (momentum < 0 || momentum >= 1) throw std::invalid_argument("momentum must lie in [0,1)");
    }
};

struct FoldReport {
    int fold_index = 0;
    std::size_t train_size = 0;
    std::size_t val_size = 0;
    std::vector<double> per_epoch_loss;
    double val_accuracy = 0.0;
};

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

/// [begin, end) ranges covering n samples in chunks of batch_size; the last
/// batch keeps the remainder.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n,
                                                                     std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t start = 0; start < n; start += batch_size) {
        ranges.emplace_back(start, std::min(n, start + batch_size));
    }
    return ranges;
}

/// One pass over the given samples in shuffled mini-batches; per batch:
/// forward, loss, zero_grad, backward, optimizer step. Returns the mean
/// batch loss. Deterministic given the rng state.
template <typename T>
double train_epoch(Model<T>& model, const LoadedDataset<T>& data, std::vector<std::size_t> indices,
                   SgdMomentum<T>& opt, const TrainConfig& cfg, std::mt19937_64& rng) {
    if (indices.empty()) throw std::invalid_argument("train_epoch needs a nonempty sample set");
    if (cfg.shuffle) std::shuffle(indices.begin(), indices.end(), rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& [start, end] : batch_ranges(indices.size(), cfg.batch_size)) {
        std::vector<std::size_t> batch_idx(indices.begin() + start, indices.begin() + end);
        std::vector<int> labels;
        Tensor<T> batch = make_batch(data, batch_idx, &labels);
        if (cfg.normalize) normalize_batch(batch);

        Tape<T> tape;
        Value logits = model.forward(tape, tape.constant(std::move(batch)));
        Value loss = tape.softmax_cross_entropy(logits, labels);
        model.zero_grad();
        tape.backward(loss);
        opt.step(model.parameters());

        loss_sum += static_cast<double>(tape.scalar(loss));
        ++batches;
    }
    return loss_sum / static_cast<double>(batches);
}

/// Runs cfg.epochs epochs over the given samples; the returned history has
/// exactly one mean loss per epoch.
template <typename T>
std::vector<double> fit(Model<T>& model, const LoadedDataset<T>& data,
                        const std::vector<std::size_t>& indices, const TrainConfig& cfg) {
    cfg.validate();
    SgdMomentum<T> opt(static_cast<T>(cfg.learning_rate), static_cast<T>(cfg.momentum));
    opt.init(model.parameters());
    std::mt19937_64 rng(cfg.seed);
    std::vector<double> history;
    history.reserve(cfg.epochs);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        history.push_back(train_epoch(model, data, indices, opt, cfg, rng));
    }
    return history;
}

template <typename T>
std::vector<double> fit(Model<T>& model, const LoadedDataset<T>& data, const TrainConfig& cfg) {
    return fit(model, data, all_indices(data.size()), cfg);
}

/// Fraction of correct predictions over the given samples. Parameters are
/// read, never written.
template <typename T>
double evaluate_accuracy(Model<T>& model, const LoadedDataset<T>& data,
                         const std::vector<std::size_t>& indices, bool normalize = true,
                         std::size_t batch_size = 32) {
    if (indices.empty()) throw std::invalid_argument("evaluate_accuracy needs a nonempty sample set");
    std::size_t correct = 0;
    for (const auto& [start, end] : batch_ranges(indices.size(), batch_size)) {
        std::vector<std::size_t> batch_idx(indices.begin() + start, indices.begin() + end);
        std::vector<int> labels;
        Tensor<T> batch = make_batch(data, batch_idx, &labels);
        if (normalize) normalize_batch(batch);
        const std::vector<int> pred = predict_class(model, batch);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

template <typename T>
double evaluate_accuracy(Model<T>& model, const LoadedDataset<T>& data, bool normalize = true) {
    return evaluate_accuracy(model, data, all_indices(data.size()), normalize);
}

struct KFoldResult {
    std::vector<FoldReport> folds;
    double mean_accuracy = 0.0;
    FoldAssignment assignment;
};

/// Stratified k-fold protocol: fold f trains a freshly initialized model
/// (seed + f) on everything outside fold f and validates on fold f. The
/// reported figure is the arithmetic mean of the per-fold accuracies.
template <typename T>
KFoldResult kfold_run(const DatasetManifest& manifest, const NetworkConfig& net_cfg,
                      const TrainConfig& train_cfg, std::size_t k) {
    if (k < 2) throw std::invalid_argument("k must be at least 2");
    train_cfg.validate();
    KFoldResult result;
    result.assignment = stratified_kfold(manifest, k, train_cfg.seed);
    const LoadedDataset<T> data = load_dataset<T>(manifest);

    double acc_sum = 0.0;
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> train_idx, val_idx;
        for (std::size_t i = 0; i < data.size(); ++i) {
            (result.assignment.fold_of[i] == static_cast<int>(f) ? val_idx : train_idx).push_back(i);
        }
        Model<T> model(net_cfg);
        init_parameters(model, train_cfg.seed + f);
        TrainConfig fold_cfg = train_cfg;
        fold_cfg.seed = train_cfg.seed + f;

        FoldReport report;
        report.fold_index = static_cast<int>(f);
        report.train_size = train_idx.size();
        report.val_size = val_idx.size();
        report.per_epoch_loss = fit(model, data, train_idx, fold_cfg);
        report.val_accuracy = evaluate_accuracy(model, data, val_idx, fold_cfg.normalize);
        acc_sum += report.val_accuracy;
        result.folds.push_back(std::move(report));
    }
    result.mean_accuracy = acc_sum / static_cast<double>(k);
    return result;
}

}  // namespace midres
