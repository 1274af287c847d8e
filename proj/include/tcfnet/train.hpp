// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <limits>
#include <ostream>

#include "tcfnet/eval.hpp"
#include "tcfnet/model.hpp"

namespace tcfnet {

struct TrainSchedule {
    int max_epochs = 200;
    int batch_size = 64;
    int patience = 20;  // epochs past the best validation CE
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    bool class_weighted = true;  // natural class distribution, weighted CE
    bool undersample = false;    // alternatively subsample the majority class
    uint64_t shuffle_seed = 1234;
};

struct EpochStats {
    int epoch = 0;
    double train_ce = 0.0, train_acc = 0.0;
    double val_ce = 0.0, val_acc = 0.0;
};

// Everything needed to continue an interrupted run bit-for-bit: optimizer
// moments, best-so-far snapshot, and the positions of every RNG stream.
struct TrainState {
    AdamState adam;
    int next_epoch = 0;
    int best_epoch = -1;
    double best_val_ce = std::numeric_limits<double>::infinity();
    std::map<std::string, Tensor> best_state;     // early-stopping snapshot
    std::map<std::string, Tensor> current_state;  // weights as of the last epoch boundary
    std::string shuffle_rng_state, model_rng_state, buffer_rng_state;
    std::vector<EpochStats> history;
    bool finished = false;
};

using EpochCallback = std::function<void(const ModelGraph&, const TrainState&)>;

// Minimizes class-weighted cross-entropy with ADAM over mini-batches; fuzzy
// centroids update at epoch boundaries only; early stopping on validation CE
// restores the best snapshot. Pass a primed `state` to resume.
TrainState train_model(ModelGraph& model, const std::vector<EEGEpoch>& epochs,
                       const SplitIndices& split, const TrainSchedule& schedule,
                       const TrainState* resume = nullptr, const EpochCallback& on_epoch = nullptr,
                       std::ostream* log = nullptr);

struct EvalMetrics {
    double accuracy_pct = 0.0;
    double cross_entropy = 0.0;
    std::vector<int> preds;
    std::vector<std::vector<double>> probs;
};

EvalMetrics evaluate_epochs(ModelGraph& model, const std::vector<EEGEpoch>& epochs,
                            const std::vector<size_t>& indices, int batch_size = 256);

// Per-class CE weights from the empirical label distribution, mean-one.
std::vector<double> balanced_class_weights(const std::vector<EEGEpoch>& epochs,
                                           const std::vector<size_t>& indices, int num_classes);

// Full-precision training state on disk (64-bit tensors; the public
// checkpoint format stays 32-bit). Loading and continuing reproduces the
// uninterrupted run exactly.
void save_train_state(const std::string& path, const TrainState& state);
TrainState load_train_state(const std::string& path);

}  // namespace tcfnet
