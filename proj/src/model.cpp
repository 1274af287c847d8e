// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/model.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace tcfnet {

namespace {

const std::vector<std::string> kTopologyNames = {
    "lenet", "lenet-fnb", "eeg-tcnet", "eeg-tcnet-fnb", "eeg-tcnet-lstm", "eeg-tcfnet",
};

}  // namespace

std::string topology_name(Topology t) { return kTopologyNames[static_cast<size_t>(t)]; }

const std::vector<std::string>& topology_names() { return kTopologyNames; }

Topology topology_from_string(const std::string& name) {
    for (size_t i = 0; i < kTopologyNames.size(); ++i)
        if (kTopologyNames[i] == name) return static_cast<Topology>(i);
    std::string valid;
    for (const auto& n : kTopologyNames) valid += (valid.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown architecture '" + name + "'; valid ids: " + valid);
}

bool topology_has_fnb(Topology t) {
    return t == Topology::lenet_fnb || t == Topology::eeg_tcnet_fnb || t == Topology::eeg_tcfnet;
}

Topology topology_base(Topology t) {
    switch (t) {
        case Topology::lenet_fnb: return Topology::lenet;
        case Topology::eeg_tcnet_fnb: return Topology::eeg_tcnet;
        case Topology::eeg_tcfnet: return Topology::eeg_tcnet_lstm;
        default: return t;
    }
}

int ModelGraph::fnb_input_dim() const {
    switch (topology_) {
        case Topology::lenet_fnb: return 120;
        case Topology::eeg_tcnet_fnb: return config_.tcn.filters;
        case Topology::eeg_tcfnet: return config_.lstm_units;
        default: return 0;
    }
}

// --- construction ------------------------------------------------------------

namespace {

int conv_fan_in(const Shape& kernel) { return kernel[0] * kernel[1] * kernel[2]; }

}  // namespace

ModelGraph::ModelGraph(Topology topology, ModelConfig config)
    : topology_(topology), config_(std::move(config)), rng_(config_.seed) {
    const int R = config_.input_rows, Cls = config_.num_classes;
    const int K = config_.fnb_rules;
    const int F = config_.tcn.filters;
    const int N = config_.lstm_units;

    auto add_param = [&](const std::string& name, Tensor t, bool trainable = true) {
        params_.push_back(Parameter{name, std::move(t), trainable});
    };
    auto add_weight = [&](const std::string& name, Shape shape, int fan_in) {
        add_param(name, fan_in_init(shape, fan_in, rng_));
    };
    auto add_bias = [&](const std::string& name, int n) { add_param(name, Tensor({n})); };
    auto add_bn = [&](const std::string& prefix, int maps) {
        add_param(prefix + ".gamma", Tensor::full({maps}, 1.0));
        add_param(prefix + ".beta", Tensor({maps}));
        add_param(prefix + ".running_mean", Tensor({maps}), false);
        add_param(prefix + ".running_var", Tensor::full({maps}, 1.0), false);
    };
    auto add_lstm = [&](const std::string& prefix, int in_dim, int units) {
        for (const char* g : {"i", "f", "o", "c"}) {
            add_weight(prefix + ".w_" + g, {in_dim, units}, in_dim);
            add_weight(prefix + ".u_" + g, {units, units}, units);
        }
        add_bias(prefix + ".b_i", units);
        add_param(prefix + ".b_f", Tensor::full({units}, 1.0));  // open forget gate at start
        add_bias(prefix + ".b_o", units);
        add_bias(prefix + ".b_c", units);
    };
    auto add_fnb = [&](int d) {
        add_param("fnb.log_a", Tensor({d}));                // a = 1
        add_param("fnb.centroids", Tensor({K, d}), false);  // zero until the first epoch ends
        fnb_buffer_.emplace(config_.fnb_buffer_capacity, config_.seed ^ 0xfb);
    };
    auto add_head = [&](int in_dim) {
        // zero head: a fresh model predicts the uniform distribution, so the
        // first-batch loss on balanced data is ln(num classes)
        add_param("head.w", Tensor({in_dim, Cls}));
        add_bias("head.b", Cls);
    };
    auto rec = [&](std::string name, Shape s) {
        declared_shapes_.push_back({std::move(name), std::move(s)});
    };

    const bool is_lenet = topology_ == Topology::lenet || topology_ == Topology::lenet_fnb;
    if (is_lenet) {
        add_weight("conv1.w", {5, 5, 1, 6}, conv_fan_in({5, 5, 1, 6}));
        add_bias("conv1.b", 6);
        add_weight("conv2.w", {5, 5, 6, 16}, conv_fan_in({5, 5, 6, 16}));
        add_bias("conv2.b", 16);

        int h1 = R - 4, w1 = config_.input_cols - 4;  // valid 5x5
        int h1p = h1 / 2, w1p = w1 / 2;               // pool 2x2
        int h2 = h1p - 4, w2 = w1p - 4;
        int h2p = h2 / 2, w2p = w2 / 2;
        int flat = h2p * w2p * 16;
        add_weight("fc1.w", {flat, 120}, flat);
        add_bias("fc1.b", 120);
        add_weight("fc2.w", {120, 84}, 120);
        add_bias("fc2.b", 84);
        if (topology_ == Topology::lenet_fnb) {
            add_fnb(120);
            add_head(84 + K);
        } else {
            add_head(84);
        }

        rec("input", {R, config_.input_cols, 1});
        rec("conv1", {h1, w1, 6});
        rec("pool1", {h1p, w1p, 6});
        rec("conv2", {h2, w2, 16});
        rec("pool2", {h2p, w2p, 16});
        rec("flatten", {flat});
        rec("fc1", {120});
        rec("fc2", {84});
        rec("head", {Cls});
        return;
    }

    // EEG-TCNet family
    add_weight("conv1.w", {1, 20, 1, 8}, conv_fan_in({1, 20, 1, 8}));
    add_bias("conv1.b", 8);
    add_bn("bn1", 8);
    add_weight("dw.w", {R, 1, 8, 2}, R * 8);
    add_bias("dw.b", 16);
    add_bn("bn2", 16);
    add_weight("sep.dw", {1, 6, 16, 1}, 6);
    add_weight("sep.pw", {1, 1, 16, 8}, 16);
    add_bias("sep.b", 8);
    add_bn("bn3", 8);

    int tcn_in_ch = config_.tcn_flatten_mode ? 1 : 8;
    int prev = tcn_in_ch;
    for (size_t b = 0; b < config_.tcn.dilations.size(); ++b) {
        std::string p = "tcn.b" + std::to_string(b);
        add_weight(p + ".w1", {config_.tcn.kernel_size, prev, F}, config_.tcn.kernel_size * prev);
        add_bias(p + ".b1", F);
        add_weight(p + ".w2", {config_.tcn.kernel_size, F, F}, config_.tcn.kernel_size * F);
        add_bias(p + ".b2", F);
        if (prev != F) {
            add_weight(p + ".proj_w", {1, prev, F}, prev);
            add_bias(p + ".proj_b", F);
        }
        prev = F;
    }

    switch (topology_) {
        case Topology::eeg_tcnet:
            add_head(F);
            break;
        case Topology::eeg_tcnet_fnb:
            add_weight("fcb.w", {F, config_.fc_branch_width}, F);
            add_bias("fcb.b", config_.fc_branch_width);
            add_fnb(F);
            add_head(config_.fc_branch_width + K);
            break;
        case Topology::eeg_tcnet_lstm:
            add_lstm("lstm1", F, N);
            add_lstm("lstm2", N, N);
            add_head(N);
            break;
        case Topology::eeg_tcfnet:
            add_lstm("lstm1", F, N);
            add_lstm("lstm2", N, N);
            add_weight("fcb.w", {N, config_.fc_branch_width}, N);
            add_bias("fcb.b", config_.fc_branch_width);
            add_fnb(N);
            add_head(config_.fc_branch_width + K);
            break;
        default:
            throw std::logic_error("unreachable topology");
    }

    const int W = config_.input_cols;
    rec("input", {R, W, 1});
    // Same padding keeps all electrode rows (the depthwise stage needs them),
    // so the first conv height stays R.
    rec("conv1", {R, W, 8});
    rec("dw", {1, W, 16});
    rec("pool1", {1, W / 4, 16});
    rec("sep", {1, W / 4, 8});
    rec("pool2", {1, W / 20, 8});
    rec("flatten", {W / 20 * 8});
    if (topology_ == Topology::eeg_tcnet || topology_ == Topology::eeg_tcnet_fnb) {
        rec("tcn", {F});
    } else {
        rec("tcn", {W / 20, F});
        rec("lstm1", {W / 20, N});
        rec("lstm2", {N});
    }
    rec("head", {Cls});
}

// --- forward ------------------------------------------------------------------

ForwardPass ModelGraph::forward_logits(Tape& tape, const Tensor& batch, Mode mode) {
    std::map<std::string, Var> bound;
    Var logits = forward_impl(tape, batch, mode, bound, nullptr);
    return {logits, std::move(bound)};
}

Tensor ModelGraph::forward_probs(const Tensor& batch, Mode mode) {
    Tape tape;
    std::map<std::string, Var> bound;
    Var logits = forward_impl(tape, batch, mode, bound, nullptr);
    return softmax(logits).val();
}

std::pair<int, double> ModelGraph::predict(const Tensor& epoch) {
    if (epoch.rank() != 2 || epoch.dim(0) != config_.input_rows || epoch.dim(1) != config_.input_cols)
        throw std::invalid_argument("predict: expected a (" + std::to_string(config_.input_rows) + "," +
                                    std::to_string(config_.input_cols) + ") epoch, got " +
                                    shape_str(epoch.shape));
    Tensor batch({1, config_.input_rows, config_.input_cols, 1}, epoch.data);
    Tensor probs = forward_probs(batch, Mode::infer);
    int label = probs.data[1] >= probs.data[0] ? 1 : 0;
    return {label, probs.data[1]};
}

Var ModelGraph::forward_impl(Tape& tape, const Tensor& batch, Mode mode,
                             std::map<std::string, Var>& bound,
                             std::vector<LayerShapeRecord>* trace) {
    if (batch.rank() != 4 || batch.dim(1) != config_.input_rows ||
        batch.dim(2) != config_.input_cols || batch.dim(3) != 1)
        throw std::invalid_argument("forward: expected (B," + std::to_string(config_.input_rows) + "," +
                                    std::to_string(config_.input_cols) + ",1), got " +
                                    shape_str(batch.shape));

    for (Parameter& p : params_)
        if (p.trainable) bound.emplace(p.name, tape.leaf(p.tensor, true));
    auto P = [&](const std::string& name) -> Var { return bound.at(name); };
    auto state = [&](const std::string& name) -> Tensor& { return param(name).tensor; };

    auto rec = [&](const char* name, const Var& v) {
        if (!trace) return;
        Shape s(v.shape().begin() + 1, v.shape().end());
        trace->push_back({name, std::move(s)});
    };

    auto bn = [&](const char* prefix, Var x) {
        std::string p(prefix);
        if (mode == Mode::train) {
            bn_seen_training_ = true;
            return batch_norm_train(x, P(p + ".gamma"), P(p + ".beta"), state(p + ".running_mean"),
                                    state(p + ".running_var"), config_.bn_momentum, config_.bn_eps);
        }
        if (!bn_seen_training_ && !warned_untrained_bn_) {
            warned_untrained_bn_ = true;
            std::cerr << "[model] warning: inference before any training step; batch norm uses "
                         "initialized running statistics (mean 0, var 1)\n";
        }
        return batch_norm_infer(x, P(p + ".gamma"), P(p + ".beta"), state(p + ".running_mean"),
                                state(p + ".running_var"), config_.bn_eps);
    };

    Var x = tape.constant(batch);
    if (trace) trace->push_back({"input", {config_.input_rows, config_.input_cols, 1}});

    // Branch + merge head shared by every FNB variant.
    auto fnb_merge_head = [&](Var v, Var fc_branch) {
        if (mode == Mode::train && fnb_buffer_) fnb_buffer_->collect_batch(v.val());
        Var rules = fnb_forward(v, P("fnb.log_a"), state("fnb.centroids"), !config_.fnb_input_grad);
        Var merged = concat({fc_branch, rules}, 1);
        return dense(merged, P("head.w"), P("head.b"));
    };

    const bool is_lenet = topology_ == Topology::lenet || topology_ == Topology::lenet_fnb;
    if (is_lenet) {
        x = relu(conv2d(x, P("conv1.w"), P("conv1.b"), Padding::valid));
        rec("conv1", x);
        x = avg_pool2d(x, 2, 2);
        rec("pool1", x);
        x = relu(conv2d(x, P("conv2.w"), P("conv2.b"), Padding::valid));
        rec("conv2", x);
        x = avg_pool2d(x, 2, 2);
        rec("pool2", x);
        x = flatten(x);
        rec("flatten", x);
        Var f1 = relu(dense(x, P("fc1.w"), P("fc1.b")));
        rec("fc1", f1);
        Var f2 = relu(dense(f1, P("fc2.w"), P("fc2.b")));
        rec("fc2", f2);
        Var logits = topology_ == Topology::lenet_fnb ? fnb_merge_head(f1, f2)
                                                      : dense(f2, P("head.w"), P("head.b"));
        rec("head", logits);
        return logits;
    }

    // EEG-TCNet family
    x = conv2d(x, P("conv1.w"), P("conv1.b"), Padding::same);
    x = bn("bn1", x);
    rec("conv1", x);
    x = depthwise_conv2d(x, P("dw.w"), P("dw.b"), 2, Padding::valid);
    x = elu(bn("bn2", x), config_.elu_alpha);
    rec("dw", x);
    x = avg_pool2d(x, 1, 4);
    x = dropout(x, config_.dropout_p, mode, rng_);
    rec("pool1", x);
    x = separable_conv2d(x, P("sep.dw"), P("sep.pw"), P("sep.b"));
    x = elu(bn("bn3", x), config_.elu_alpha);
    rec("sep", x);
    x = avg_pool2d(x, 1, 5);
    x = dropout(x, config_.dropout_p, mode, rng_);
    rec("pool2", x);

    int B = batch.dim(0);
    int steps = x.val().dim(2);  // x is (B,1,T,8)
    Var flat = flatten(x);
    rec("flatten", flat);
    Var seq = config_.tcn_flatten_mode ? reshape(flat, {B, steps * 8, 1})
                                       : reshape(flat, {B, steps, 8});

    const bool with_lstm = topology_ == Topology::eeg_tcnet_lstm || topology_ == Topology::eeg_tcfnet;
    std::vector<TcnBlockVars> blocks;
    for (size_t b = 0; b < config_.tcn.dilations.size(); ++b) {
        std::string p = "tcn.b" + std::to_string(b);
        TcnBlockVars blk{P(p + ".w1"), P(p + ".b1"), P(p + ".w2"), P(p + ".b2"), std::nullopt,
                         std::nullopt};
        if (bound.count(p + ".proj_w")) {
            blk.proj_w = P(p + ".proj_w");
            blk.proj_b = P(p + ".proj_b");
        }
        blocks.push_back(blk);
    }
    Var tcn_out = tcn_forward(seq, blocks, config_.tcn, mode, rng_, /*return_sequence=*/with_lstm);
    rec("tcn", tcn_out);

    Var logits{nullptr, -1};
    switch (topology_) {
        case Topology::eeg_tcnet:
            logits = dense(tcn_out, P("head.w"), P("head.b"));
            break;
        case Topology::eeg_tcnet_fnb: {
            Var fc_branch = elu(dense(tcn_out, P("fcb.w"), P("fcb.b")), config_.elu_alpha);
            logits = fnb_merge_head(tcn_out, fc_branch);
            break;
        }
        case Topology::eeg_tcnet_lstm:
        case Topology::eeg_tcfnet: {
            LstmCellVars l1{P("lstm1.w_i"), P("lstm1.w_f"), P("lstm1.w_o"), P("lstm1.w_c"),
                            P("lstm1.u_i"), P("lstm1.u_f"), P("lstm1.u_o"), P("lstm1.u_c"),
                            P("lstm1.b_i"), P("lstm1.b_f"), P("lstm1.b_o"), P("lstm1.b_c")};
            LstmCellVars l2{P("lstm2.w_i"), P("lstm2.w_f"), P("lstm2.w_o"), P("lstm2.w_c"),
                            P("lstm2.u_i"), P("lstm2.u_f"), P("lstm2.u_o"), P("lstm2.u_c"),
                            P("lstm2.b_i"), P("lstm2.b_f"), P("lstm2.b_o"), P("lstm2.b_c")};
            Var h1 = lstm_layer(tcn_out, l1, LstmReturn::all);
            rec("lstm1", h1);
            Var h2 = lstm_layer(h1, l2, LstmReturn::last);
            rec("lstm2", h2);
            if (topology_ == Topology::eeg_tcfnet) {
                Var fc_branch = elu(dense(h2, P("fcb.w"), P("fcb.b")), config_.elu_alpha);
                logits = fnb_merge_head(h2, fc_branch);
            } else {
                logits = dense(h2, P("head.w"), P("head.b"));
            }
            break;
        }
        default:
            throw std::logic_error("unreachable topology");
    }
    rec("head", logits);
    return logits;
}

// --- bookkeeping ---------------------------------------------------------------

int64_t ModelGraph::count_parameters() const {
    int64_t n = 0;
    for (const Parameter& p : params_)
        if (p.trainable) n += p.tensor.size();
    return n;
}

Parameter& ModelGraph::param(const std::string& name) {
    for (Parameter& p : params_)
        if (p.name == name) return p;
    throw std::invalid_argument("no parameter named '" + name + "'");
}

const Parameter* ModelGraph::find_param(const std::string& name) const {
    for (const Parameter& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

void ModelGraph::fnb_epoch_end() {
    if (!fnb_buffer_) return;
    FuzzyRuleSet rules(config_.fnb_rules, fnb_input_dim());
    rules.centroids = param("fnb.centroids").tensor;
    rules.log_a = param("fnb.log_a").tensor;
    epoch_end_update(rules, *fnb_buffer_);
    param("fnb.centroids").tensor = rules.centroids;
}

std::vector<LayerShapeRecord> ModelGraph::traced_shapes() {
    Tensor probe({1, config_.input_rows, config_.input_cols, 1});
    Tape tape;
    std::map<std::string, Var> bound;
    std::vector<LayerShapeRecord> trace;
    forward_impl(tape, probe, Mode::infer, bound, &trace);
    return trace;
}

void ModelGraph::load_state(const std::vector<Parameter>& state) {
    for (const Parameter& incoming : state) {
        Parameter& mine = param(incoming.name);
        if (mine.tensor.shape != incoming.tensor.shape)
            throw std::invalid_argument("state shape mismatch for '" + incoming.name + "': " +
                                        shape_str(incoming.tensor.shape) + " vs " +
                                        shape_str(mine.tensor.shape));
        mine.tensor.data = incoming.tensor.data;
    }
    bn_seen_training_ = true;  // loaded stats are presumed trained
}

}  // namespace tcfnet
