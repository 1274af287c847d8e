// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: dataset generation, preprocessing + training,
// evaluation (epoch metrics and target-by-block curves), the paired
// comparison table, and the statistics report.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "tcfnet/checkpoint.hpp"
#include "tcfnet/config.hpp"
#include "tcfnet/eval.hpp"
#include "tcfnet/rng.hpp"
#include "tcfnet/sim.hpp"
#include "tcfnet/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace tcfnet;

namespace {

std::string default_data_dir() {
    const char* env = std::getenv("TCFNET_DATA_DIR");
    return env ? env : "";
}

PreprocessOptions preprocess_options_from(const RunConfig& cfg) {
    PreprocessOptions opt;
    opt.notch_hz = cfg.get_double("notch_hz", opt.notch_hz);
    opt.notch_q = cfg.get_double("notch_q", opt.notch_q);
    opt.bp_lo = cfg.get_double("bp_lo", opt.bp_lo);
    opt.bp_hi = cfg.get_double("bp_hi", opt.bp_hi);
    opt.bp_order = static_cast<int>(cfg.get_int("bp_order", opt.bp_order));
    opt.decim_factor = static_cast<int>(cfg.get_int("decim_factor", opt.decim_factor));
    opt.wins_lo = cfg.get_double("wins_lo", opt.wins_lo);
    opt.wins_hi = cfg.get_double("wins_hi", opt.wins_hi);
    opt.window_ms = static_cast<int>(cfg.get_int("window_ms", opt.window_ms));
    opt.decimate_first = cfg.get_int("decimate_first", 0) != 0;
    return opt;
}

ModelConfig model_config_from(const RunConfig& cfg, const PreprocessOptions& opt, double data_fs,
                              uint64_t seed) {
    ModelConfig mc;
    mc.input_cols = static_cast<int>(std::llround(opt.window_ms / 1000.0 * data_fs / opt.decim_factor));
    mc.fnb_rules = static_cast<int>(cfg.get_int("fnb_k", mc.fnb_rules));
    mc.fc_branch_width = static_cast<int>(cfg.get_int("fc_branch_width", mc.fc_branch_width));
    mc.fnb_input_grad = cfg.get_int("fnb_input_grad", 1) != 0;
    mc.tcn_flatten_mode = cfg.get_int("tcn_flatten_mode", 0) != 0;
    mc.dropout_p = cfg.get_double("dropout_p", mc.dropout_p);
    mc.seed = seed;
    return mc;
}

// Preprocess every run of one subject (or all) into labeled epochs.
std::vector<EEGEpoch> load_epochs(const SessionDataset& ds, const PreprocessOptions& opt,
                                  int subject_filter) {
    std::vector<EEGEpoch> epochs;
    int dropped_total = 0;
    for (int s = 1; s <= ds.config.subjects; ++s) {
        if (subject_filter > 0 && s != subject_filter) continue;
        for (int se = 1; se <= ds.config.sessions; ++se)
            for (int r = 1; r <= ds.config.runs_per_session; ++r) {
                RawRun raw = ds.load_run(s, se, r);
                RawRun clean = preprocess_run(raw, opt);
                int dropped = 0;
                auto eps = extract_epochs(clean, opt.window_ms, &dropped);
                dropped_total += dropped;
                epochs.insert(epochs.end(), eps.begin(), eps.end());
            }
    }
    if (dropped_total > 0)
        std::cerr << "[preprocess] dropped " << dropped_total << " epochs past the signal tail\n";
    return epochs;
}

struct FoldArtifacts {
    Fold fold;
    ResultRecord record;
    std::vector<EpochStats> history;
};

std::string fold_base(const std::string& out_dir, const std::string& fold_id) {
    return (fs::path(out_dir) / ("fold_" + fold_id)).string();
}

void write_fold_stats_json(const std::string& path, const Fold& fold, const ChannelStats& stats,
                           const RunConfig& cfg, const std::string& arch, CvStrategy strategy) {
    json j = {{"fold", fold.id},
              {"subject", fold.subject},
              {"test_session", fold.test_session},
              {"test_subject", fold.test_subject},
              {"strategy", strategy_name(strategy)},
              {"arch", arch},
              {"channel_mean", stats.mean},
              {"channel_sd", stats.sd},
              {"config", cfg.values()},
              {"config_hash", cfg.hash()}};
    std::ofstream os(path);
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("cannot write " + path);
}

// --- train -----------------------------------------------------------------

int cmd_train(const std::string& arch, const std::string& strategy_str, const std::string& data_dir,
              const std::string& config_file, const std::string& out_dir, RunConfig cli_overrides,
              int jobs, int subject_filter) {
    if (data_dir.empty()) throw std::runtime_error("no --data directory (or TCFNET_DATA_DIR) given");
    RunConfig cfg;
    if (!config_file.empty()) cfg = RunConfig::from_file(config_file);
    for (const auto& [k, v] : cli_overrides.values()) cfg.set(k, v);
    cfg.set("architecture", arch);
    cfg.set("strategy", strategy_str);

    Topology topo = topology_from_string(arch);
    CvStrategy strategy = strategy_from_string(strategy_str);
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 42));
    cfg.set("seed", std::to_string(seed));

    SessionDataset ds = load_dataset(data_dir);
    PreprocessOptions opt = preprocess_options_from(cfg);
    std::vector<EEGEpoch> epochs =
        load_epochs(ds, opt, strategy == CvStrategy::leave_one_session_out ? subject_filter : 0);

    TrainSchedule schedule;
    schedule.max_epochs = static_cast<int>(cfg.get_int("epochs", 200));
    schedule.batch_size = static_cast<int>(cfg.get_int("batch", 64));
    schedule.patience = static_cast<int>(cfg.get_int("patience", 20));
    schedule.lr = cfg.get_double("lr", 1e-4);
    schedule.class_weighted = cfg.get_int("class_weighted", 1) != 0;
    schedule.undersample = cfg.get_int("undersample", 0) != 0;

    FoldPlan plan = make_folds(ds.config.subjects, ds.config.sessions, strategy);
    std::vector<Fold> folds;
    for (const Fold& f : plan.folds) {
        if (strategy == CvStrategy::leave_one_session_out && subject_filter > 0 &&
            f.subject != subject_filter)
            continue;
        folds.push_back(f);
    }
    if (folds.empty()) throw std::runtime_error("no folds selected");

    fs::create_directories(out_dir);
    cfg.save((fs::path(out_dir) / "config.effective").string());

    double val_fraction = cfg.get_double("val_fraction", 0.1);
    std::vector<FoldArtifacts> artifacts(folds.size());
    std::mutex log_mutex;
    std::atomic<size_t> next{0};

    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= folds.size()) return;
            const Fold& fold = folds[i];
            uint64_t fold_seed = hash_combine(seed, fnv1a(fold.id));

            SplitIndices split = split_epochs(epochs, fold, strategy, val_fraction, fold_seed);
            ChannelStats stats;
            {
                std::vector<EEGEpoch> train_epochs;
                for (size_t idx : split.train) train_epochs.push_back(epochs[idx]);
                stats = compute_channel_stats(train_epochs);
            }
            // standardized copy, stats from the training portion only
            std::vector<EEGEpoch> folded = epochs;
            standardize(folded, stats);

            ModelConfig mc = model_config_from(cfg, opt, ds.config.fs, fold_seed);
            ModelGraph model(topo, mc);

            std::string base = fold_base(out_dir, fold.id);
            TrainState prior;
            const TrainState* resume = nullptr;
            if (fs::exists(base + ".tcfs")) {
                prior = load_train_state(base + ".tcfs");
                resume = &prior;
                std::lock_guard<std::mutex> lk(log_mutex);
                std::cerr << "[train] resuming fold " << fold.id << " at epoch " << prior.next_epoch
                          << "\n";
            }

            auto on_epoch = [&](const ModelGraph&, const TrainState& st) {
                save_train_state(base + ".tcfs", st);
            };
            TrainState state = train_model(model, folded, split, schedule, resume, on_epoch, nullptr);

            save_checkpoint(base + ".tcfn", model.state());
            write_fold_stats_json(base + ".json", fold, stats, cfg, arch, strategy);

            EvalMetrics test = evaluate_epochs(model, folded, split.test, schedule.batch_size);
            FoldArtifacts art;
            art.fold = fold;
            art.record = {arch,
                          strategy == CvStrategy::leave_one_session_out ? fold.subject
                                                                        : fold.test_subject,
                          fold.id,
                          test.accuracy_pct,
                          test.cross_entropy,
                          cfg.hash(),
                          seed};
            art.history = state.history;
            artifacts[i] = std::move(art);
            {
                std::lock_guard<std::mutex> lk(log_mutex);
                std::cerr << "[train] fold " << fold.id << ": test acc " << test.accuracy_pct
                          << "% ce " << test.cross_entropy << " (" << state.history.size()
                          << " epochs)\n";
            }
        }
    };

    int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(folds.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::vector<ResultRecord> records;
    for (const FoldArtifacts& art : artifacts) records.push_back(art.record);
    write_results_csv((fs::path(out_dir) / "results.csv").string(), records);

    std::ofstream hist((fs::path(out_dir) / "history.csv").string(), std::ios::trunc);
    hist << "fold,epoch,train_ce,train_acc,val_ce,val_acc\n";
    for (const FoldArtifacts& art : artifacts)
        for (const EpochStats& e : art.history) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%s,%d,%.10g,%.10g,%.10g,%.10g\n", art.fold.id.c_str(),
                          e.epoch, e.train_ce, e.train_acc, e.val_ce, e.val_acc);
            hist << buf;
        }
    return 0;
}

// --- evaluate --------------------------------------------------------------

int cmd_evaluate(const std::string& ckpt_dir, const std::string& data_dir, int max_blocks,
                 const std::string& out_dir) {
    if (data_dir.empty()) throw std::runtime_error("no --data directory (or TCFNET_DATA_DIR) given");
    SessionDataset ds = load_dataset(data_dir);
    fs::create_directories(out_dir);

    std::vector<ResultRecord> records;
    std::vector<std::tuple<std::string, int, std::string, CurvePoint>> curve_rows;
    std::ofstream preds((fs::path(out_dir) / "predictions.csv").string(), std::ios::trunc);
    preds << "fold,subject,session,run,block,item,label,pred,p_target\n";

    std::vector<fs::path> fold_jsons;
    for (const auto& entry : fs::directory_iterator(ckpt_dir)) {
        if (entry.path().extension() == ".json" &&
            entry.path().filename().string().rfind("fold_", 0) == 0)
            fold_jsons.push_back(entry.path());
    }
    std::sort(fold_jsons.begin(), fold_jsons.end());
    if (fold_jsons.empty()) throw std::runtime_error("no fold_*.json found in " + ckpt_dir);

    for (const fs::path& jp : fold_jsons) {
        std::ifstream is(jp);
        json j = json::parse(is);

        RunConfig cfg;
        for (const auto& [k, v] : j.at("config").items()) cfg.set(k, v.get<std::string>());
        PreprocessOptions opt = preprocess_options_from(cfg);
        std::string arch = j.at("arch");
        CvStrategy strategy = strategy_from_string(j.at("strategy").get<std::string>());
        Fold fold{j.at("fold"), j.at("subject"), j.at("test_session"), j.at("test_subject")};

        Preprocessor prep;
        prep.options = opt;
        prep.stats.mean = j.at("channel_mean").get<std::vector<double>>();
        prep.stats.sd = j.at("channel_sd").get<std::vector<double>>();

        uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 42));
        uint64_t fold_seed = hash_combine(seed, fnv1a(fold.id));
        ModelConfig mc = model_config_from(cfg, opt, ds.config.fs, fold_seed);
        ModelGraph model(topology_from_string(arch), mc);
        std::string base = (jp.parent_path() / jp.stem()).string();
        model.load_state(load_checkpoint(base + ".tcfn"));

        // held-out runs for this fold
        std::vector<std::pair<int, int>> sessions;  // (subject, session)
        if (strategy == CvStrategy::leave_one_session_out) {
            sessions.push_back({fold.subject, fold.test_session});
        } else {
            for (int se = 1; se <= ds.config.sessions; ++se)
                sessions.push_back({fold.test_subject, se});
        }
        std::vector<RawRun> held_runs;
        for (auto [subj, sess] : sessions)
            for (int r = 1; r <= ds.config.runs_per_session; ++r)
                held_runs.push_back(ds.load_run(subj, sess, r));

        // epoch-level metrics + per-epoch predictions on the held-out data
        std::vector<int> all_labels, all_preds;
        std::vector<std::vector<double>> all_probs;
        for (const RawRun& raw : held_runs) {
            RawRun clean = preprocess_run(raw, opt);
            std::vector<EEGEpoch> eps = extract_epochs(clean, opt.window_ms);
            standardize(eps, prep.stats);
            for (const EEGEpoch& e : eps) {
                auto [label, p_target] = model.predict(e.data);
                all_labels.push_back(e.label);
                all_preds.push_back(label);
                all_probs.push_back({1.0 - p_target, p_target});
                char buf[160];
                std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%d,%d,%d,%d,%.10g\n", fold.id.c_str(),
                              e.subject, e.session, e.run, e.block, e.item_index, e.label, label,
                              p_target);
                preds << buf;
            }
        }
        ResultRecord rec{arch,
                         strategy == CvStrategy::leave_one_session_out ? fold.subject
                                                                       : fold.test_subject,
                         fold.id,
                         accuracy_percent(all_preds, all_labels),
                         cross_entropy_nats(all_probs, all_labels),
                         cfg.hash(),
                         seed};
        records.push_back(rec);

        // target-by-block curve over the held-out runs
        for (const CurvePoint& pt : target_by_block_curve(model, held_runs, prep, max_blocks))
            curve_rows.emplace_back(arch, rec.subject, fold.id, pt);
        std::cerr << "[evaluate] fold " << fold.id << ": acc " << rec.accuracy_pct << "% ce "
                  << rec.cross_entropy << "\n";
    }

    write_results_csv((fs::path(out_dir) / "results.csv").string(), records);
    write_curves_csv((fs::path(out_dir) / "curves.csv").string(), curve_rows);
    return 0;
}

// --- compare / stats ---------------------------------------------------------

int cmd_compare(const std::vector<std::string>& labeled_results, const std::string& out_file) {
    std::vector<CompareRow> rows;
    for (const std::string& spec : labeled_results) {
        size_t eq = spec.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--results expects LABEL=FILE, got '" + spec + "'");
        std::string label = spec.substr(0, eq);
        auto records = read_results_csv(spec.substr(eq + 1));
        auto part = compare_report(records, label);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    write_compare_csv(out_file, rows);
    std::cerr << "[compare] wrote " << rows.size() << " rows to " << out_file << "\n";
    return 0;
}

int cmd_stats(const std::string& results_file, const std::string& out_file) {
    auto records = read_results_csv(results_file);
    std::map<std::string, std::vector<double>> acc_by_topo;
    std::map<std::string, std::map<std::pair<int, std::string>, double>> keyed;
    for (const ResultRecord& r : records) {
        acc_by_topo[r.topology].push_back(r.accuracy_pct);
        keyed[r.topology][{r.subject, r.fold}] = r.accuracy_pct;
    }

    std::ofstream os(out_file, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + out_file);
    os << "test,topology_a,topology_b,statistic,p_value,detail\n";
    for (const auto& [topo, accs] : acc_by_topo) {
        if (accs.size() < 5) continue;
        try {
            KsResult ks = ks_normality(accs);
            char buf[160];
            std::snprintf(buf, sizeof(buf), "ks-normality,%s,,%.6g,%.6g,n=%zu\n", topo.c_str(), ks.d,
                          ks.p, accs.size());
            os << buf;
        } catch (const std::exception& ex) {
            os << "ks-normality," << topo << ",,,," << ex.what() << "\n";
        }
    }
    const std::vector<std::pair<std::string, std::string>> pairs = {
        {"lenet", "lenet-fnb"},
        {"eeg-tcnet", "eeg-tcnet-fnb"},
        {"eeg-tcnet-lstm", "eeg-tcfnet"},
    };
    for (const auto& [base, fnb] : pairs) {
        if (!keyed.count(base) || !keyed.count(fnb)) continue;
        std::vector<double> xs, ys;
        for (const auto& [key, acc] : keyed[fnb]) {
            auto it = keyed[base].find(key);
            if (it != keyed[base].end()) {
                xs.push_back(acc);
                ys.push_back(it->second);
            }
        }
        if (xs.size() < 5) continue;
        WilcoxonResult w = wilcoxon_signed_rank(xs, ys);
        char buf[200];
        if (w.undefined)
            std::snprintf(buf, sizeof(buf), "wilcoxon,%s,%s,,,undefined: all differences zero\n",
                          fnb.c_str(), base.c_str());
        else
            std::snprintf(buf, sizeof(buf), "wilcoxon,%s,%s,%.6g,%.6g,n=%d %s\n", fnb.c_str(),
                          base.c_str(), w.w, w.p_two_sided, w.n_effective,
                          w.exact ? "exact" : "normal-approx");
        os << buf;
    }
    std::cerr << "[stats] wrote " << out_file << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"P300 decoding stack: synthetic sessions, preprocessing, training, evaluation"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "synthesize a session dataset");
    int g_subjects = 9, g_sessions = 4, g_runs = 6;
    uint64_t g_seed = 42;
    std::string g_snr = "medium", g_out;
    int g_blocks_min = 20, g_blocks_max = 25;
    double g_fs = 2400.0;
    gen->add_option("--subjects", g_subjects, "number of subjects");
    gen->add_option("--sessions", g_sessions, "sessions per subject");
    gen->add_option("--runs", g_runs, "runs per session (one per item)");
    gen->add_option("--seed", g_seed, "master seed");
    gen->add_option("--snr", g_snr, "noise preset: high, medium, street-noise");
    gen->add_option("--blocks-min", g_blocks_min, "minimum blocks per run");
    gen->add_option("--blocks-max", g_blocks_max, "maximum blocks per run");
    gen->add_option("--fs", g_fs, "sampling rate in Hz");
    gen->add_option("--out", g_out, "output dataset directory")->required();

    auto* tr = app.add_subcommand("train", "preprocess and train one architecture over all folds");
    std::string t_arch, t_strategy = "session", t_data = default_data_dir(), t_config, t_out;
    int t_jobs = 1, t_subject = 0;
    std::vector<std::string> t_set;
    tr->add_option("--arch", t_arch, "architecture id")->required();
    tr->add_option("--strategy", t_strategy, "session | subject");
    tr->add_option("--data", t_data, "dataset directory (default: TCFNET_DATA_DIR)");
    tr->add_option("--config", t_config, "key=value config file");
    tr->add_option("--out", t_out, "output directory")->required();
    tr->add_option("--jobs", t_jobs, "parallel fold workers (default 1, deterministic either way)");
    tr->add_option("--subject", t_subject, "restrict session-strategy folds to one subject");
    tr->add_option("--set", t_set, "config override KEY=VALUE (repeatable)");

    auto* ev = app.add_subcommand("evaluate", "epoch metrics + target-by-block curves from checkpoints");
    std::string e_ckpts, e_data = default_data_dir(), e_out;
    int e_max_blocks = 20;
    ev->add_option("--checkpoints", e_ckpts, "directory with fold_* checkpoints")->required();
    ev->add_option("--data", e_data, "dataset directory (default: TCFNET_DATA_DIR)");
    ev->add_option("--max-blocks", e_max_blocks, "curve length in blocks");
    ev->add_option("--out", e_out, "output directory")->required();

    auto* cp = app.add_subcommand("compare", "paired base-vs-FNB comparison table");
    std::vector<std::string> c_results;
    std::string c_out;
    cp->add_option("--results", c_results, "LABEL=results.csv (repeatable)")->required();
    cp->add_option("--out", c_out, "output csv")->required();

    auto* st = app.add_subcommand("stats", "normality + signed-rank report");
    std::string s_results, s_out;
    st->add_option("--results", s_results, "results.csv")->required();
    st->add_option("--out", s_out, "output csv")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            GeneratorConfig cfg = snr_preset(g_snr);
            cfg.subjects = g_subjects;
            cfg.sessions = g_sessions;
            cfg.runs_per_session = g_runs;
            cfg.master_seed = g_seed;
            cfg.blocks_min = g_blocks_min;
            cfg.blocks_max = g_blocks_max;
            cfg.fs = g_fs;
            SessionDataset ds = generate_dataset(cfg, g_out);
            std::cout << "dataset " << g_out << " hash " << ds.content_hash << "\n";
            return 0;
        }
        if (tr->parsed()) {
            RunConfig overrides;
            for (const std::string& kv : t_set) {
                size_t eq = kv.find('=');
                if (eq == std::string::npos)
                    throw std::runtime_error("--set expects KEY=VALUE, got '" + kv + "'");
                overrides.set(kv.substr(0, eq), kv.substr(eq + 1));
            }
            return cmd_train(t_arch, t_strategy, t_data, t_config, t_out, overrides, t_jobs, t_subject);
        }
        if (ev->parsed()) return cmd_evaluate(e_ckpts, e_data, e_max_blocks, e_out);
        if (cp->parsed()) return cmd_compare(c_results, c_out);
        if (st->parsed()) return cmd_stats(s_results, s_out);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
