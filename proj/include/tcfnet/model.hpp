// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>

#include "tcfnet/adam.hpp"
#include "tcfnet/fnb.hpp"
#include "tcfnet/sequence.hpp"

namespace tcfnet {

enum class Topology {
    lenet,
    lenet_fnb,
    eeg_tcnet,
    eeg_tcnet_fnb,
    eeg_tcnet_lstm,
    eeg_tcfnet,
};

inline constexpr int kNumTopologies = 6;

std::string topology_name(Topology t);
Topology topology_from_string(const std::string& name);
const std::vector<std::string>& topology_names();
bool topology_has_fnb(Topology t);
// The FNB-free counterpart of an FNB topology (identity otherwise).
Topology topology_base(Topology t);

struct ModelConfig {
    int input_rows = 16;   // electrodes
    int input_cols = 120;  // samples per epoch
    int num_classes = 2;

    int fnb_rules = 4;          // K
    int fnb_buffer_capacity = 4096;
    bool fnb_input_grad = true;  // let the FNB branch backpropagate into the net

    int fc_branch_width = 16;  // merge-side dense width for the TCNet FNB variants
    int lstm_units = 30;

    double dropout_p = 0.5;
    double bn_momentum = 0.99;
    double bn_eps = 1e-3;
    double elu_alpha = 1.0;

    TcnConfig tcn;
    // Feed the TCN the flattened feature vector as a (48,1) sequence instead
    // of the pre-flatten (6,8) map.
    bool tcn_flatten_mode = false;

    uint64_t seed = 0;
};

struct LayerShapeRecord {
    std::string layer;
    Shape shape;  // per-example (batch axis dropped)
};

// One forward pass bound to a tape: the logits plus the tape handles of every
// trainable parameter, for gradient collection.
struct ForwardPass {
    Var logits;
    std::map<std::string, Var> bound;
};

// A built architecture: named parameters, optional fuzzy block state, and
// the forward pass for its topology. One instance = one training thread.
class ModelGraph {
public:
    ModelGraph(Topology topology, ModelConfig config);

    Topology topology() const { return topology_; }
    const ModelConfig& config() const { return config_; }

    ForwardPass forward_logits(Tape& tape, const Tensor& batch, Mode mode);
    // Convenience: softmax probabilities (B,2) with no gradient bookkeeping.
    Tensor forward_probs(const Tensor& batch, Mode mode);
    // label in {0,1} plus the target-class probability for one (16,W) epoch.
    std::pair<int, double> predict(const Tensor& epoch);

    int64_t count_parameters() const;
    std::vector<Parameter>& params() { return params_; }
    const std::vector<Parameter>& params() const { return params_; }
    Parameter& param(const std::string& name);
    const Parameter* find_param(const std::string& name) const;

    bool has_fnb() const { return fnb_buffer_.has_value(); }
    int fnb_input_dim() const;
    ActivationBuffer* fnb_buffer() { return fnb_buffer_ ? &*fnb_buffer_ : nullptr; }
    // Refit centroids from the collected activations; call once per training
    // epoch boundary. Centroids live in the "fnb.centroids" parameter.
    void fnb_epoch_end();

    // Shapes each stage is built to produce, and the shapes a probe forward
    // actually produces; the two must agree.
    const std::vector<LayerShapeRecord>& declared_shapes() const { return declared_shapes_; }
    std::vector<LayerShapeRecord> traced_shapes();

    std::mt19937_64& rng() { return rng_; }
    void reseed(uint64_t seed) { rng_.seed(seed); }

    // Full state (weights, bn running stats, fnb centroids/log a) for
    // checkpointing.
    const std::vector<Parameter>& state() const { return params_; }
    void load_state(const std::vector<Parameter>& state);

private:
    Var forward_impl(Tape& tape, const Tensor& batch, Mode mode,
                     std::map<std::string, Var>& bound, std::vector<LayerShapeRecord>* trace);

    Topology topology_;
    ModelConfig config_;
    std::vector<Parameter> params_;
    std::optional<ActivationBuffer> fnb_buffer_;
    std::vector<LayerShapeRecord> declared_shapes_;
    std::mt19937_64 rng_;
    bool bn_seen_training_ = false;
    bool warned_untrained_bn_ = false;
};

}  // namespace tcfnet
