// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tcfnet {

std::string strategy_name(CvStrategy s) {
    return s == CvStrategy::leave_one_session_out ? "session" : "subject";
}

CvStrategy strategy_from_string(const std::string& name) {
    if (name == "session" || name == "leave-one-session-out") return CvStrategy::leave_one_session_out;
    if (name == "subject" || name == "leave-one-subject-out") return CvStrategy::leave_one_subject_out;
    throw std::invalid_argument("unknown strategy '" + name + "'; valid: session, subject");
}

FoldPlan make_folds(int subjects, int sessions, CvStrategy strategy) {
    FoldPlan plan;
    plan.strategy = strategy;
    if (strategy == CvStrategy::leave_one_session_out) {
        if (sessions < 2) throw std::invalid_argument("session folds need at least 2 sessions");
        for (int s = 1; s <= subjects; ++s)
            for (int se = 1; se <= sessions; ++se) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "S%02d-sess%d", s, se);
                plan.folds.push_back({buf, s, se, -1});
            }
    } else {
        if (subjects < 2) throw std::invalid_argument("subject folds need at least 2 subjects");
        for (int s = 1; s <= subjects; ++s) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "holdout-S%02d", s);
            plan.folds.push_back({buf, -1, -1, s});
        }
    }
    return plan;
}

SplitIndices split_epochs(const std::vector<EEGEpoch>& epochs, const Fold& fold, CvStrategy strategy,
                          double val_fraction, uint64_t seed) {
    SplitIndices out;
    std::vector<size_t> pool;
    for (size_t i = 0; i < epochs.size(); ++i) {
        const EEGEpoch& e = epochs[i];
        if (strategy == CvStrategy::leave_one_session_out) {
            if (e.subject != fold.subject) continue;  // session folds are within-subject
            if (e.session == fold.test_session)
                out.test.push_back(i);
            else
                pool.push_back(i);
        } else {
            if (e.subject == fold.test_subject)
                out.test.push_back(i);
            else
                pool.push_back(i);
        }
    }
    if (out.test.empty() || pool.empty())
        throw std::invalid_argument("fold '" + fold.id + "' has an empty split");

    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    size_t n_val = static_cast<size_t>(std::llround(val_fraction * static_cast<double>(pool.size())));
    n_val = std::min(n_val, pool.size() - 1);
    out.val.assign(pool.begin(), pool.begin() + static_cast<int64_t>(n_val));
    out.train.assign(pool.begin() + static_cast<int64_t>(n_val), pool.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.train.begin(), out.train.end());
    return out;
}

// --- metrics --------------------------------------------------------------------

double accuracy_percent(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size() || preds.empty())
        throw std::invalid_argument("accuracy: prediction/label lengths differ or are empty");
    int64_t hits = 0;
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == labels[i]) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(preds.size());
}

double cross_entropy_nats(const std::vector<std::vector<double>>& probs,
                          const std::vector<int>& labels) {
    if (probs.size() != labels.size() || probs.empty())
        throw std::invalid_argument("cross_entropy: probability/label lengths differ or are empty");
    double total = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        int y = labels[i];
        if (y < 0 || y >= static_cast<int>(probs[i].size()))
            throw std::invalid_argument("cross_entropy: label out of range");
        total += -std::log(std::max(probs[i][static_cast<size_t>(y)], 1e-12));
    }
    return total / static_cast<double>(probs.size());
}

// --- bitrate ---------------------------------------------------------------------

double wolpaw_bits_per_selection(double p, int n) {
    if (n < 2) throw std::invalid_argument("bitrate needs at least 2 alternatives");
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("selection accuracy must be in [0,1]");
    double log2n = std::log2(static_cast<double>(n));
    if (p >= 1.0) return log2n;
    if (p <= 0.0) return log2n + std::log2(1.0 / static_cast<double>(n - 1));
    return log2n + p * std::log2(p) + (1.0 - p) * std::log2((1.0 - p) / static_cast<double>(n - 1));
}

double bitrate_bits_per_min(double p, int n, double seconds_per_selection) {
    if (seconds_per_selection <= 0.0) throw std::invalid_argument("selection time must be positive");
    return wolpaw_bits_per_selection(p, n) * 60.0 / seconds_per_selection;
}

std::vector<CurvePoint> target_by_block_curve(ModelGraph& model, const std::vector<RawRun>& runs,
                                              const Preprocessor& prep, int max_blocks) {
    if (runs.empty()) throw std::invalid_argument("target_by_block_curve: no runs");
    if (max_blocks < 1) throw std::invalid_argument("target_by_block_curve: max_blocks must be >= 1");

    struct ScoredRun {
        std::vector<EEGEpoch> epochs;
        std::vector<double> score;  // target-class probability per epoch
        int target = 0;
    };
    double soa_s = 0.0;
    std::vector<ScoredRun> scored;
    for (const RawRun& raw : runs) {
        if (raw.events.size() >= 2 && soa_s == 0.0)
            soa_s = static_cast<double>(raw.events[1].onset_sample - raw.events[0].onset_sample) / raw.fs;
        ScoredRun sr;
        sr.target = run_target_item(raw);
        RawRun clean = preprocess_run(raw, prep.options);
        sr.epochs = extract_epochs(clean, prep.options.window_ms);
        standardize(sr.epochs, prep.stats);
        int blocks = 0;
        for (const EEGEpoch& e : sr.epochs) blocks = std::max(blocks, e.block + 1);
        if (blocks < max_blocks)
            throw std::invalid_argument("target_by_block_curve: run has " + std::to_string(blocks) +
                                        " blocks, need " + std::to_string(max_blocks));

        int B = static_cast<int>(sr.epochs.size());
        int C = model.config().input_rows, W = model.config().input_cols;
        Tensor batch({B, C, W, 1});
        for (int b = 0; b < B; ++b)
            std::copy_n(sr.epochs[static_cast<size_t>(b)].data.data.begin(),
                        static_cast<int64_t>(C) * W, batch.data.begin() + static_cast<int64_t>(b) * C * W);
        Tensor probs = model.forward_probs(batch, Mode::infer);
        sr.score.resize(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b) sr.score[static_cast<size_t>(b)] = probs.data[static_cast<size_t>(b) * 2 + 1];
        scored.push_back(std::move(sr));
    }

    std::vector<CurvePoint> curve;
    for (int n = 1; n <= max_blocks; ++n) {
        int correct = 0;
        for (const ScoredRun& sr : scored) {
            std::vector<double> conf(kNumItems, 0.0);
            std::vector<int> counts(kNumItems, 0);
            for (size_t i = 0; i < sr.epochs.size(); ++i) {
                const EEGEpoch& e = sr.epochs[i];
                if (e.block >= n) continue;
                conf[static_cast<size_t>(e.item_index)] += sr.score[i];
                counts[static_cast<size_t>(e.item_index)] += 1;
            }
            int best = 0;
            for (int i = 0; i < kNumItems; ++i) {
                if (counts[static_cast<size_t>(i)] > 0) conf[static_cast<size_t>(i)] /= counts[static_cast<size_t>(i)];
                if (i > 0 && conf[static_cast<size_t>(i)] > conf[static_cast<size_t>(best)]) best = i;
            }
            if (best == sr.target) ++correct;
        }
        CurvePoint pt;
        pt.time_s = n * kNumItems * soa_s;
        pt.accuracy = static_cast<double>(correct) / static_cast<double>(scored.size());
        pt.bitrate_per_min = bitrate_bits_per_min(pt.accuracy, kNumItems, pt.time_s);
        curve.push_back(pt);
    }
    return curve;
}

// --- Wilcoxon signed-rank ----------------------------------------------------------

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: unpaired inputs");
    std::vector<double> diffs;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        if (d != 0.0) diffs.push_back(d);
    }
    WilcoxonResult res;
    res.n_effective = static_cast<int>(diffs.size());
    if (diffs.empty()) {
        res.undefined = true;
        return res;
    }
    if (res.n_effective < 5)
        throw std::invalid_argument("wilcoxon: need >= 5 nonzero differences, got " +
                                    std::to_string(res.n_effective));

    // midranks of |d|
    size_t n = diffs.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t x, size_t y) { return std::abs(diffs[x]) < std::abs(diffs[y]); });
    std::vector<double> rank(n);
    for (size_t i = 0; i < n;) {
        size_t j = i;
        while (j + 1 < n &&
               std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]]))
            ++j;
        double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }

    double w_pos = 0.0, w_neg = 0.0;
    for (size_t i = 0; i < n; ++i)
        (diffs[i] > 0.0 ? w_pos : w_neg) += rank[i];
    res.w = std::min(w_pos, w_neg);

    if (n <= 25) {
        // Exact: count sign assignments whose positive-rank sum is <= w.
        // Midranks are multiples of 1/2, so double them into integers.
        std::vector<int64_t> r2(n);
        int64_t total2 = 0;
        for (size_t i = 0; i < n; ++i) {
            r2[i] = static_cast<int64_t>(std::llround(rank[i] * 2.0));
            total2 += r2[i];
        }
        int64_t w2 = static_cast<int64_t>(std::llround(res.w * 2.0));
        std::vector<double> count(static_cast<size_t>(total2) + 1, 0.0);
        count[0] = 1.0;
        for (size_t i = 0; i < n; ++i)
            for (int64_t s = total2; s >= r2[i]; --s)
                count[static_cast<size_t>(s)] += count[static_cast<size_t>(s - r2[i])];
        double below = 0.0;
        for (int64_t s = 0; s <= w2; ++s) below += count[static_cast<size_t>(s)];
        double p = 2.0 * below / std::pow(2.0, static_cast<double>(n));
        res.p_two_sided = std::min(1.0, p);
        res.exact = true;
    } else {
        double nn = static_cast<double>(n);
        double mean = nn * (nn + 1.0) / 4.0;
        double sd = std::sqrt(nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0);
        double z = (res.w - mean + 0.5) / sd;  // continuity correction toward the mean
        res.p_two_sided = std::min(1.0, 2.0 * normal_cdf(z));
        res.exact = false;
    }
    return res;
}

// --- Kolmogorov-Smirnov --------------------------------------------------------------

KsResult ks_normality(const std::vector<double>& samples) {
    if (samples.size() < 5)
        throw std::invalid_argument("ks_normality: need at least 5 samples, got " +
                                    std::to_string(samples.size()));
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (double v : samples) var += (v - mean) * (v - mean);
    var /= static_cast<double>(samples.size() - 1);
    if (var <= 0.0) throw std::invalid_argument("ks_normality: zero variance sample");
    double sd = std::sqrt(var);

    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    double n = static_cast<double>(sorted.size());
    KsResult res;
    for (size_t i = 0; i < sorted.size(); ++i) {
        double cdf = normal_cdf((sorted[i] - mean) / sd);
        double hi = (static_cast<double>(i) + 1.0) / n - cdf;
        double lo = cdf - static_cast<double>(i) / n;
        res.d = std::max({res.d, hi, lo});
    }
    // asymptotic Kolmogorov tail
    double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * res.d;
    double q = 0.0;
    for (int j = 1; j <= 100; ++j) {
        double term = 2.0 * std::pow(-1.0, j - 1) * std::exp(-2.0 * j * j * lambda * lambda);
        q += term;
        if (std::abs(term) < 1e-12) break;
    }
    res.p = std::clamp(q, 0.0, 1.0);
    return res;
}

// --- comparison report -----------------------------------------------------------------

namespace {

const std::vector<std::pair<std::string, std::string>> kPairs = {
    {"lenet", "lenet-fnb"},
    {"eeg-tcnet", "eeg-tcnet-fnb"},
    {"eeg-tcnet-lstm", "eeg-tcfnet"},
};

}  // namespace

std::vector<CompareRow> compare_report(const std::vector<ResultRecord>& records,
                                       const std::string& strategy_label) {
    std::map<std::string, std::vector<const ResultRecord*>> by_topology;
    for (const ResultRecord& r : records) by_topology[r.topology].push_back(&r);

    auto mean_sd = [](const std::vector<const ResultRecord*>& rs) {
        double mean = 0.0;
        for (const auto* r : rs) mean += r->accuracy_pct;
        mean /= static_cast<double>(rs.size());
        double var = 0.0;
        for (const auto* r : rs) var += (r->accuracy_pct - mean) * (r->accuracy_pct - mean);
        if (rs.size() > 1) var /= static_cast<double>(rs.size() - 1);
        return std::make_pair(mean, std::sqrt(var));
    };

    std::vector<CompareRow> rows;
    for (const auto& [base, fnb] : kPairs) {
        auto base_it = by_topology.find(base);
        auto fnb_it = by_topology.find(fnb);

        bool p_defined = false;
        double p_value = 1.0;
        std::string note;
        if (base_it != by_topology.end() && fnb_it != by_topology.end()) {
            // pair accuracies by (subject, fold)
            std::map<std::pair<int, std::string>, double> base_by_key;
            for (const auto* r : base_it->second) base_by_key[{r->subject, r->fold}] = r->accuracy_pct;
            std::vector<double> xs, ys;
            for (const auto* r : fnb_it->second) {
                auto it = base_by_key.find({r->subject, r->fold});
                if (it != base_by_key.end()) {
                    xs.push_back(r->accuracy_pct);
                    ys.push_back(it->second);
                }
            }
            if (xs.size() >= 5) {
                WilcoxonResult w = wilcoxon_signed_rank(xs, ys);
                if (w.undefined) {
                    note = "p undefined: all paired differences are zero";
                } else {
                    p_defined = true;
                    p_value = w.p_two_sided;
                }
            } else {
                note = "too few paired folds for the signed-rank test";
            }
        }

        for (const std::string& topo : {base, fnb}) {
            CompareRow row;
            row.strategy = strategy_label;
            row.topology = topo;
            auto it = by_topology.find(topo);
            if (it == by_topology.end()) {
                row.note = "incomplete";
                rows.push_back(row);
                continue;
            }
            auto [mean, sd] = mean_sd(it->second);
            row.mean_acc = mean;
            row.sd_acc = sd;
            row.p_defined = p_defined;
            row.p_value = p_value;
            if (!note.empty()) row.note = note;
            rows.push_back(row);
        }
    }
    return rows;
}

// --- CSV I/O ------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

void write_results_csv(const std::string& path, const std::vector<ResultRecord>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write results csv: " + path);
    os << "topology,subject,fold,accuracy_pct,cross_entropy,config_hash,seed\n";
    for (const ResultRecord& r : records)
        os << r.topology << "," << r.subject << "," << r.fold << "," << fmt_double(r.accuracy_pct)
           << "," << fmt_double(r.cross_entropy) << "," << r.config_hash << "," << r.seed << "\n";
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<ResultRecord> read_results_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open results csv: " + path);
    std::string line;
    std::getline(is, line);
    if (line != "topology,subject,fold,accuracy_pct,cross_entropy,config_hash,seed")
        throw std::runtime_error("unexpected results csv header in " + path);
    std::vector<ResultRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        ResultRecord r;
        std::string field;
        std::getline(row, r.topology, ',');
        std::getline(row, field, ',');
        r.subject = std::stoi(field);
        std::getline(row, r.fold, ',');
        std::getline(row, field, ',');
        r.accuracy_pct = std::stod(field);
        std::getline(row, field, ',');
        r.cross_entropy = std::stod(field);
        std::getline(row, r.config_hash, ',');
        std::getline(row, field, ',');
        r.seed = std::stoull(field);
        out.push_back(r);
    }
    return out;
}

void write_curves_csv(const std::string& path,
                      const std::vector<std::tuple<std::string, int, std::string, CurvePoint>>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write curves csv: " + path);
    os << "topology,subject,fold,time_s,accuracy,bitrate_per_min\n";
    for (const auto& [topo, subject, fold, pt] : rows)
        os << topo << "," << subject << "," << fold << "," << fmt_double(pt.time_s) << ","
           << fmt_double(pt.accuracy) << "," << fmt_double(pt.bitrate_per_min) << "\n";
    if (!os) throw std::runtime_error("write failed: " + path);
}

void write_compare_csv(const std::string& path, const std::vector<CompareRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write compare csv: " + path);
    os << "strategy,topology,mean_acc_pct,sd_acc_pct,p_value,note\n";
    for (const CompareRow& r : rows) {
        os << r.strategy << "," << r.topology << "," << fmt_double(r.mean_acc) << ","
           << fmt_double(r.sd_acc) << ",";
        if (r.p_defined) os << fmt_double(r.p_value);
        os << "," << r.note << "\n";
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace tcfnet
