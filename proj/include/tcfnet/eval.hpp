// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "tcfnet/sim.hpp"

namespace tcfnet {

// --- cross-validation folds ---------------------------------------------------

enum class CvStrategy { leave_one_session_out, leave_one_subject_out };

std::string strategy_name(CvStrategy s);
CvStrategy strategy_from_string(const std::string& name);

struct Fold {
    std::string id;        // "S01-sess2" or "holdout-S03"
    int subject = -1;      // session strategy: the subject the fold belongs to
    int test_session = -1; // session strategy
    int test_subject = -1; // subject strategy
};

struct FoldPlan {
    CvStrategy strategy;
    std::vector<Fold> folds;
};

// Session strategy: per subject, one fold per held-out session. Subject
// strategy: one fold per held-out subject.
FoldPlan make_folds(int subjects, int sessions, CvStrategy strategy);

struct SplitIndices {
    std::vector<size_t> train, val, test;
};

// Materialize a fold over concrete epochs; validation is a seeded fraction
// carved from the training portion. Splits are disjoint by construction.
SplitIndices split_epochs(const std::vector<EEGEpoch>& epochs, const Fold& fold, CvStrategy strategy,
                          double val_fraction, uint64_t seed);

// --- metrics --------------------------------------------------------------------

double accuracy_percent(const std::vector<int>& preds, const std::vector<int>& labels);
// Natural log, probabilities clipped at 1e-12.
double cross_entropy_nats(const std::vector<std::vector<double>>& probs,
                          const std::vector<int>& labels);

// --- bitrate ---------------------------------------------------------------------

// Wolpaw bits per selection over N alternatives at selection accuracy P;
// P in {0,1} by continuity.
double wolpaw_bits_per_selection(double p, int n);
double bitrate_bits_per_min(double p, int n, double seconds_per_selection);

// --- statistics -----------------------------------------------------------------

struct WilcoxonResult {
    double w = 0.0;           // min(W+, W-) on midranks
    double p_two_sided = 1.0;
    int n_effective = 0;      // pairs left after dropping zero differences
    bool undefined = false;   // every difference was zero
    bool exact = false;       // exact enumeration (n <= 25) vs normal approximation
};

// Paired two-sided signed-rank test. Exact null distribution up to n = 25,
// normal approximation with continuity correction beyond.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

struct KsResult {
    double d = 0.0;
    double p = 1.0;
};

// One-sample Kolmogorov-Smirnov against a normal with the sample's own
// mean/SD; p from the asymptotic Kolmogorov distribution.
KsResult ks_normality(const std::vector<double>& samples);

// --- result records and the comparison report -------------------------------------

struct ResultRecord {
    std::string topology;
    int subject = 0;
    std::string fold;
    double accuracy_pct = 0.0;
    double cross_entropy = 0.0;
    std::string config_hash;
    uint64_t seed = 0;
};

struct CurvePoint {
    double time_s = 0.0;
    double accuracy = 0.0;       // selection accuracy in [0,1]
    double bitrate_per_min = 0.0;
};

// Selection accuracy and bitrate as a function of how many blocks feed the
// item choice. Each run's epochs are conditioned and scored once; the n-block
// selection then averages the per-item scores over the first n blocks, as the
// interaction loop would. time = n blocks x 6 flashes x SOA.
std::vector<CurvePoint> target_by_block_curve(ModelGraph& model, const std::vector<RawRun>& runs,
                                              const Preprocessor& prep, int max_blocks);

struct CompareRow {
    std::string strategy;
    std::string topology;
    double mean_acc = 0.0;
    double sd_acc = 0.0;
    bool p_defined = false;
    double p_value = 1.0;
    std::string note;  // "incomplete" when a pair member is missing
};

// The paired base-vs-FNB table: 6 topologies per strategy, Wilcoxon p on the
// per-(subject,fold) paired accuracies, reported on both rows of each pair.
std::vector<CompareRow> compare_report(const std::vector<ResultRecord>& records,
                                       const std::string& strategy_label);

// --- CSV I/O --------------------------------------------------------------------

void write_results_csv(const std::string& path, const std::vector<ResultRecord>& records);
std::vector<ResultRecord> read_results_csv(const std::string& path);
void write_curves_csv(const std::string& path,
                      const std::vector<std::tuple<std::string, int, std::string, CurvePoint>>& rows);
void write_compare_csv(const std::string& path, const std::vector<CompareRow>& rows);

}  // namespace tcfnet
