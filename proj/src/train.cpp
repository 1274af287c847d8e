// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace tcfnet {

namespace {

Tensor assemble_batch(const std::vector<EEGEpoch>& epochs, const std::vector<size_t>& indices,
                      size_t begin, size_t end, std::vector<int>* labels) {
    int B = static_cast<int>(end - begin);
    int C = epochs[indices[begin]].data.dim(0);
    int W = epochs[indices[begin]].data.dim(1);
    Tensor batch({B, C, W, 1});
    if (labels) labels->clear();
    for (size_t i = begin; i < end; ++i) {
        const EEGEpoch& e = epochs[indices[i]];
        std::copy_n(e.data.data.begin(), static_cast<int64_t>(C) * W,
                    batch.data.begin() + static_cast<int64_t>(i - begin) * C * W);
        if (labels) labels->push_back(e.label);
    }
    return batch;
}

void check_disjoint(const std::vector<EEGEpoch>& epochs, const SplitIndices& split) {
    std::set<size_t> seen;
    std::set<std::array<int, 5>> keys;
    auto add = [&](const std::vector<size_t>& idx, const char* name) {
        for (size_t i : idx) {
            if (i >= epochs.size()) throw std::invalid_argument("split index out of range");
            if (!seen.insert(i).second)
                throw std::invalid_argument(std::string("overlapping splits: index in ") + name +
                                            " already assigned");
            if (!keys.insert(epochs[i].key()).second)
                throw std::invalid_argument(std::string("overlapping splits: duplicate epoch key in ") +
                                            name);
        }
    };
    add(split.train, "train");
    add(split.val, "val");
    add(split.test, "test");
}

std::string serialize_rng(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void deserialize_rng(std::mt19937_64& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw std::invalid_argument("bad RNG state string");
}

}  // namespace

std::vector<double> balanced_class_weights(const std::vector<EEGEpoch>& epochs,
                                           const std::vector<size_t>& indices, int num_classes) {
    std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
    for (size_t i : indices) {
        int y = epochs[i].label;
        if (y < 0 || y >= num_classes) throw std::invalid_argument("label out of range");
        counts[static_cast<size_t>(y)] += 1;
    }
    std::vector<double> w(static_cast<size_t>(num_classes));
    double total = static_cast<double>(indices.size());
    for (int c = 0; c < num_classes; ++c) {
        if (counts[static_cast<size_t>(c)] == 0)
            throw std::invalid_argument("class " + std::to_string(c) + " absent from the training split");
        w[static_cast<size_t>(c)] = total / (static_cast<double>(num_classes) *
                                             static_cast<double>(counts[static_cast<size_t>(c)]));
    }
    return w;
}

EvalMetrics evaluate_epochs(ModelGraph& model, const std::vector<EEGEpoch>& epochs,
                            const std::vector<size_t>& indices, int batch_size) {
    if (indices.empty()) throw std::invalid_argument("evaluate_epochs: empty index list");
    EvalMetrics m;
    std::vector<int> labels;
    for (size_t begin = 0; begin < indices.size(); begin += static_cast<size_t>(batch_size)) {
        size_t end = std::min(indices.size(), begin + static_cast<size_t>(batch_size));
        std::vector<int> batch_labels;
        Tensor batch = assemble_batch(epochs, indices, begin, end, &batch_labels);
        Tensor probs = model.forward_probs(batch, Mode::infer);
        int B = probs.dim(0), C = probs.dim(1);
        for (int b = 0; b < B; ++b) {
            std::vector<double> row(probs.data.begin() + static_cast<int64_t>(b) * C,
                                    probs.data.begin() + static_cast<int64_t>(b + 1) * C);
            int arg = 0;
            for (int c = 1; c < C; ++c)
                if (row[static_cast<size_t>(c)] > row[static_cast<size_t>(arg)]) arg = c;
            m.probs.push_back(std::move(row));
            m.preds.push_back(arg);
        }
        labels.insert(labels.end(), batch_labels.begin(), batch_labels.end());
    }
    m.accuracy_pct = accuracy_percent(m.preds, labels);
    m.cross_entropy = cross_entropy_nats(m.probs, labels);
    return m;
}

TrainState train_model(ModelGraph& model, const std::vector<EEGEpoch>& epochs,
                       const SplitIndices& split, const TrainSchedule& schedule,
                       const TrainState* resume, const EpochCallback& on_epoch, std::ostream* log) {
    check_disjoint(epochs, split);
    if (split.train.empty()) throw std::invalid_argument("train split is empty");

    std::vector<size_t> train_idx = split.train;
    std::mt19937_64 shuffle_rng(schedule.shuffle_seed);

    if (schedule.undersample) {
        std::vector<size_t> pos, neg;
        for (size_t i : train_idx) (epochs[i].label == 1 ? pos : neg).push_back(i);
        auto& majority = pos.size() > neg.size() ? pos : neg;
        auto& minority = pos.size() > neg.size() ? neg : pos;
        std::mt19937_64 sub_rng(schedule.shuffle_seed ^ 0x5abull);
        std::shuffle(majority.begin(), majority.end(), sub_rng);
        majority.resize(minority.size());
        train_idx.clear();
        train_idx.insert(train_idx.end(), pos.begin(), pos.end());
        train_idx.insert(train_idx.end(), neg.begin(), neg.end());
        std::sort(train_idx.begin(), train_idx.end());
    }

    int num_classes = model.config().num_classes;
    std::vector<double> class_weights(static_cast<size_t>(num_classes), 1.0);
    if (schedule.class_weighted) class_weights = balanced_class_weights(epochs, train_idx, num_classes);

    TrainState state;
    if (resume) {
        state = *resume;
        if (state.finished) {
            // already done: restore the trained weights and hand the state back
            if (!state.best_state.empty()) {
                std::vector<Parameter> best;
                for (const auto& [name, tensor] : state.best_state) best.push_back({name, tensor, true});
                model.load_state(best);
            }
            return state;
        }
        deserialize_rng(shuffle_rng, state.shuffle_rng_state);
        deserialize_rng(model.rng(), state.model_rng_state);
        if (model.fnb_buffer() && !state.buffer_rng_state.empty())
            deserialize_rng(model.fnb_buffer()->rng(), state.buffer_rng_state);
        if (!state.current_state.empty()) {
            std::vector<Parameter> cur;
            for (const auto& [name, tensor] : state.current_state) cur.push_back({name, tensor, true});
            model.load_state(cur);
        }
    } else {
        state.adam.lr = schedule.lr;
        state.adam.beta1 = schedule.beta1;
        state.adam.beta2 = schedule.beta2;
        state.adam.eps = schedule.adam_eps;
    }

    auto snapshot = [&]() {
        state.best_state.clear();
        for (const Parameter& p : model.params()) state.best_state[p.name] = p.tensor;
    };

    for (int epoch = state.next_epoch; epoch < schedule.max_epochs; ++epoch) {
        // shuffle a fresh copy of the canonical order: the permutation then
        // depends only on the rng state, which makes resumed runs exact
        std::vector<size_t> order = train_idx;
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double ce_sum = 0.0;
        int64_t ce_batches = 0, hits = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(schedule.batch_size)) {
            size_t end = std::min(order.size(), begin + static_cast<size_t>(schedule.batch_size));
            std::vector<int> labels;
            Tensor batch = assemble_batch(epochs, order, begin, end, &labels);

            Tape tape;
            ForwardPass pass = model.forward_logits(tape, batch, Mode::train);
            Var loss = softmax_cross_entropy(pass.logits, labels, class_weights);
            ce_sum += loss.val().item();
            ce_batches += 1;

            const Tensor& lv = pass.logits.val();
            for (size_t b = 0; b < labels.size(); ++b) {
                int arg = lv.data[b * 2 + 1] > lv.data[b * 2] ? 1 : 0;
                if (arg == labels[b]) ++hits;
            }

            tape.backward(loss);
            std::map<std::string, Tensor> grads;
            for (const auto& [name, var] : pass.bound) grads[name] = tape.grad(var);
            adam_step(model.params(), grads, state.adam);
        }
        model.fnb_epoch_end();

        EpochStats es;
        es.epoch = epoch;
        es.train_ce = ce_sum / static_cast<double>(std::max<int64_t>(1, ce_batches));
        es.train_acc = 100.0 * static_cast<double>(hits) / static_cast<double>(train_idx.size());
        double stop_metric;
        if (!split.val.empty()) {
            EvalMetrics vm = evaluate_epochs(model, epochs, split.val, schedule.batch_size);
            es.val_ce = vm.cross_entropy;
            es.val_acc = vm.accuracy_pct;
            stop_metric = vm.cross_entropy;
        } else {
            es.val_ce = es.train_ce;
            es.val_acc = es.train_acc;
            stop_metric = es.train_ce;
        }
        state.history.push_back(es);
        if (log)
            (*log) << "epoch " << epoch << " train_ce " << es.train_ce << " train_acc " << es.train_acc
                   << " val_ce " << es.val_ce << " val_acc " << es.val_acc << "\n";

        if (stop_metric < state.best_val_ce) {
            state.best_val_ce = stop_metric;
            state.best_epoch = epoch;
            snapshot();
        }

        state.next_epoch = epoch + 1;
        state.shuffle_rng_state = serialize_rng(shuffle_rng);
        state.model_rng_state = serialize_rng(model.rng());
        if (model.fnb_buffer()) state.buffer_rng_state = serialize_rng(model.fnb_buffer()->rng());
        state.current_state.clear();
        for (const Parameter& p : model.params()) state.current_state[p.name] = p.tensor;
        if (on_epoch) on_epoch(model, state);

        if (epoch - state.best_epoch >= schedule.patience) break;
    }

    // restore the best snapshot
    if (!state.best_state.empty()) {
        std::vector<Parameter> best;
        for (const auto& [name, tensor] : state.best_state) best.push_back({name, tensor, true});
        model.load_state(best);
    }
    state.finished = true;
    if (on_epoch) on_epoch(model, state);
    return state;
}

// --- state persistence (64-bit, exact) -------------------------------------------

namespace {

constexpr uint16_t kTrainStateVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("truncated training state file");
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put<uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& is) {
    uint64_t n = take<uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("truncated training state file");
    return s;
}

void put_tensor_map(std::ostream& os, const std::map<std::string, Tensor>& m) {
    put<uint64_t>(os, m.size());
    for (const auto& [name, t] : m) {
        put_string(os, name);
        put<uint8_t>(os, static_cast<uint8_t>(t.rank()));
        for (int d : t.shape) put<uint32_t>(os, static_cast<uint32_t>(d));
        for (double v : t.data) put<double>(os, v);
    }
}

std::map<std::string, Tensor> take_tensor_map(std::istream& is) {
    std::map<std::string, Tensor> m;
    uint64_t n = take<uint64_t>(is);
    for (uint64_t i = 0; i < n; ++i) {
        std::string name = take_string(is);
        uint8_t rank = take<uint8_t>(is);
        Shape shape;
        for (uint8_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(take<uint32_t>(is)));
        Tensor t(shape);
        for (double& v : t.data) v = take<double>(is);
        m.emplace(std::move(name), std::move(t));
    }
    return m;
}

}  // namespace

void save_train_state(const std::string& path, const TrainState& state) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write training state: " + path);
    os.write("TCFS", 4);
    put<uint16_t>(os, kTrainStateVersion);
    put<int64_t>(os, state.adam.step);
    put<double>(os, state.adam.lr);
    put<double>(os, state.adam.beta1);
    put<double>(os, state.adam.beta2);
    put<double>(os, state.adam.eps);
    put<int32_t>(os, state.next_epoch);
    put<int32_t>(os, state.best_epoch);
    put<double>(os, state.best_val_ce);
    put<uint8_t>(os, state.finished ? 1 : 0);
    put_string(os, state.shuffle_rng_state);
    put_string(os, state.model_rng_state);
    put_string(os, state.buffer_rng_state);
    put<uint64_t>(os, state.history.size());
    for (const EpochStats& e : state.history) {
        put<int32_t>(os, e.epoch);
        put<double>(os, e.train_ce);
        put<double>(os, e.train_acc);
        put<double>(os, e.val_ce);
        put<double>(os, e.val_acc);
    }
    put_tensor_map(os, state.adam.m);
    put_tensor_map(os, state.adam.v);
    put_tensor_map(os, state.best_state);
    put_tensor_map(os, state.current_state);
    if (!os) throw std::runtime_error("write failed: " + path);
}

TrainState load_train_state(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open training state: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "TCFS")
        throw std::runtime_error("bad training state magic in " + path);
    uint16_t version = take<uint16_t>(is);
    if (version != kTrainStateVersion)
        throw std::runtime_error("unknown training state version in " + path);
    TrainState state;
    state.adam.step = take<int64_t>(is);
    state.adam.lr = take<double>(is);
    state.adam.beta1 = take<double>(is);
    state.adam.beta2 = take<double>(is);
    state.adam.eps = take<double>(is);
    state.next_epoch = take<int32_t>(is);
    state.best_epoch = take<int32_t>(is);
    state.best_val_ce = take<double>(is);
    state.finished = take<uint8_t>(is) != 0;
    state.shuffle_rng_state = take_string(is);
    state.model_rng_state = take_string(is);
    state.buffer_rng_state = take_string(is);
    uint64_t n = take<uint64_t>(is);
    for (uint64_t i = 0; i < n; ++i) {
        EpochStats e;
        e.epoch = take<int32_t>(is);
        e.train_ce = take<double>(is);
        e.train_acc = take<double>(is);
        e.val_ce = take<double>(is);
        e.val_acc = take<double>(is);
        state.history.push_back(e);
    }
    state.adam.m = take_tensor_map(is);
    state.adam.v = take_tensor_map(is);
    state.best_state = take_tensor_map(is);
    state.current_state = take_tensor_map(is);
    return state;
}

}  // namespace tcfnet
