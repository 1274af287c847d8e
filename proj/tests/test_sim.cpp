// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "tcfnet/sim.hpp"

using namespace tcfnet;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small_config() {
    GeneratorConfig c = snr_preset("high");
    c.subjects = 1;
    c.sessions = 1;
    c.runs_per_session = 2;
    c.fs = 600.0;  // light for tests; the protocol timing is rate-independent
    return c;
}

std::string temp_dir(const char* name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p.string();
}

}  // namespace

TEST_CASE("block count stays inside the protocol range across many seeds") {
    GeneratorConfig c = small_config();
    std::set<int> seen;
    for (uint64_t seed = 0; seed < 300; ++seed) {
        c.master_seed = seed;
        RawRun run = generate_run(c, 1, 1, 1);
        int blocks = run.events.back().block_index + 1;
        CHECK(blocks >= 20);
        CHECK(blocks <= 25);
        seen.insert(blocks);
    }
    CHECK(seen.size() == 6);  // every count in [20,25] occurs
}

TEST_CASE("event table: six flashes per block, each item once, one target") {
    GeneratorConfig c = small_config();
    RawRun run = generate_run(c, 1, 1, 3);
    int target = run_target_item(run);
    CHECK(target == 2);  // run 3 attends item index 2

    std::map<int, std::vector<const StimulusEvent*>> by_block;
    for (const StimulusEvent& e : run.events) by_block[e.block_index].push_back(&e);
    for (const auto& [block, events] : by_block) {
        CHECK(events.size() == 6);
        std::set<int> items;
        int targets = 0;
        for (const auto* e : events) {
            items.insert(e->item_index);
            targets += e->is_target ? 1 : 0;
            if (e->is_target) CHECK(e->item_index == target);
        }
        CHECK(items.size() == 6);
        CHECK(targets == 1);
    }
}

TEST_CASE("inter-onset interval is exactly the stimulus asynchrony") {
    GeneratorConfig c = small_config();
    c.fs = 2400.0;
    RawRun run = generate_run(c, 1, 1, 1);
    for (size_t i = 1; i < run.events.size(); ++i)
        CHECK(run.events[i].onset_sample - run.events[i - 1].onset_sample == 960);  // 400 ms @ 2400 Hz
}

TEST_CASE("zero-noise generation puts the response where the template says") {
    GeneratorConfig c = small_config();
    c.pink_level = c.white_level = c.alpha_level = c.line_level = 0.0;
    c.p300_jitter_sd_ms = 0.0;
    c.subject_attenuation_spread = 0.0;
    RawRun run = generate_run(c, 1, 1, 1);

    // average target minus non-target at the strongest channel (Pz = 10)
    int64_t window = static_cast<int64_t>(0.4 * c.fs);
    std::vector<double> target_avg(static_cast<size_t>(window), 0.0);
    std::vector<double> non_avg(static_cast<size_t>(window), 0.0);
    int nt = 0, nn = 0;
    for (const StimulusEvent& e : run.events) {
        auto& acc = e.is_target ? target_avg : non_avg;
        (e.is_target ? nt : nn) += 1;
        for (int64_t i = 0; i < window; ++i)
            acc[static_cast<size_t>(i)] += run.samples[10][static_cast<size_t>(e.onset_sample + i)];
    }
    int64_t peak_at = 0;
    double peak = -1e300;
    for (int64_t i = 0; i < window; ++i) {
        double diff = target_avg[static_cast<size_t>(i)] / nt - non_avg[static_cast<size_t>(i)] / nn;
        if (diff > peak) {
            peak = diff;
            peak_at = i;
        }
    }
    double peak_ms = static_cast<double>(peak_at) / c.fs * 1000.0;
    CHECK(std::abs(peak_ms - c.p300_latency_ms) < 10.0);
    CHECK(peak == doctest::Approx(c.p300_amplitude * 1.0).epsilon(0.02));  // Pz weight is 1
}

TEST_CASE("mean target excess at a weighted channel matches the template") {
    GeneratorConfig c = small_config();
    c.sessions = 2;
    c.runs_per_session = 6;
    c.p300_jitter_sd_ms = 0.0;
    c.subject_attenuation_spread = 0.0;
    c.master_seed = 99;

    // metric: signal averaged over [250,350] ms after onset at Pz
    int64_t lo = static_cast<int64_t>(0.25 * c.fs), hi = static_cast<int64_t>(0.35 * c.fs);
    std::vector<double> target_vals, non_vals;
    for (int se = 1; se <= c.sessions; ++se)
        for (int r = 1; r <= c.runs_per_session; ++r) {
            RawRun run = generate_run(c, 1, se, r);
            for (const StimulusEvent& e : run.events) {
                double mean = 0.0;
                for (int64_t i = lo; i < hi; ++i)
                    mean += run.samples[10][static_cast<size_t>(e.onset_sample + i)];
                mean /= static_cast<double>(hi - lo);
                (e.is_target ? target_vals : non_vals).push_back(mean);
            }
        }
    REQUIRE(target_vals.size() + non_vals.size() >= 1000);

    auto mean_se = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - m) * (x - m);
        var /= static_cast<double>(v.size() - 1);
        return std::make_pair(m, std::sqrt(var / static_cast<double>(v.size())));
    };
    auto [mt, se_t] = mean_se(target_vals);
    auto [mn, se_n] = mean_se(non_vals);

    // expected bump mean over the window, direct quadrature of the template
    double expected = 0.0;
    for (int64_t i = lo; i < hi; ++i) {
        double t_ms = static_cast<double>(i) / c.fs * 1000.0;
        double d = (t_ms - c.p300_latency_ms) / c.p300_width_ms;
        expected += c.p300_amplitude * std::exp(-0.5 * d * d);
    }
    expected /= static_cast<double>(hi - lo);

    double se_diff = std::sqrt(se_t * se_t + se_n * se_n);
    CHECK(std::abs((mt - mn) - expected) < 3.0 * se_diff + 0.05 * expected);
}

TEST_CASE("dataset save, load, and re-save are byte-identical") {
    GeneratorConfig c = small_config();
    std::string dir = temp_dir("tcfnet_ds_roundtrip");
    SessionDataset ds = generate_dataset(c, dir);

    RawRun loaded = ds.load_run(1, 1, 1);
    std::string copy = (fs::temp_directory_path() / "tcfnet_run_copy").string();
    save_raw_run(copy, loaded);

    auto slurp = [](const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        return std::vector<char>{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
    };
    CHECK(slurp(ds.run_path(1, 1, 1) + ".eeg") == slurp(copy + ".eeg"));
    CHECK(slurp(ds.run_path(1, 1, 1) + ".events.csv") == slurp(copy + ".events.csv"));

    SessionDataset reloaded = load_dataset(dir);
    CHECK(reloaded.content_hash == ds.content_hash);

    fs::remove_all(dir);
    fs::remove(copy + ".eeg");
    fs::remove(copy + ".events.csv");
}

TEST_CASE("same seed regenerates an identical dataset hash") {
    GeneratorConfig c = small_config();
    std::string d1 = temp_dir("tcfnet_ds_a"), d2 = temp_dir("tcfnet_ds_b");
    std::string h1 = generate_dataset(c, d1).content_hash;
    std::string h2 = generate_dataset(c, d2).content_hash;
    CHECK(h1 == h2);

    c.master_seed += 1;
    std::string d3 = temp_dir("tcfnet_ds_c");
    CHECK(generate_dataset(c, d3).content_hash != h1);
    fs::remove_all(d1);
    fs::remove_all(d2);
    fs::remove_all(d3);
}

TEST_CASE("corrupted run magic is rejected naming the file") {
    GeneratorConfig c = small_config();
    std::string dir = temp_dir("tcfnet_ds_corrupt");
    SessionDataset ds = generate_dataset(c, dir);
    {
        std::fstream f(ds.run_path(1, 1, 1) + ".eeg",
                       std::ios::binary | std::ios::in | std::ios::out);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_WITH_AS(load_raw_run(ds.run_path(1, 1, 1)), doctest::Contains("run1"),
                         std::runtime_error);
    // the dataset-level load also rejects: content hash no longer matches
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("hash mismatch"), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("oracle scorer always selects the true target, any block budget") {
    GeneratorConfig c = small_config();
    RawRun run = generate_run(c, 1, 1, 4);
    Preprocessor prep;
    prep.options.decim_factor = 5;  // 600 -> 120 Hz
    prep.stats.mean.assign(16, 0.0);
    prep.stats.sd.assign(16, 1.0);

    EpochScorer oracle = [](const std::vector<const EEGEpoch*>& used) {
        std::vector<double> s(used.size());
        for (size_t i = 0; i < used.size(); ++i) s[i] = used[i]->label;
        return s;
    };
    for (int n : {1, 5, 20}) {
        InteractionResult res = run_interaction_scored(run, prep, n, oracle);
        CHECK(res.predicted_item == run_target_item(run));
        CHECK_FALSE(res.tie);
    }
}

TEST_CASE("constant scorer ties and breaks to item 0") {
    GeneratorConfig c = small_config();
    RawRun run = generate_run(c, 1, 1, 2);
    Preprocessor prep;
    prep.options.decim_factor = 5;
    prep.stats.mean.assign(16, 0.0);
    prep.stats.sd.assign(16, 1.0);
    EpochScorer constant = [](const std::vector<const EEGEpoch*>& used) {
        return std::vector<double>(used.size(), 0.5);
    };
    InteractionResult res = run_interaction_scored(run, prep, 3, constant);
    CHECK(res.predicted_item == 0);
    CHECK(res.tie);
}

TEST_CASE("interaction rejects a block budget beyond the run") {
    GeneratorConfig c = small_config();
    RawRun run = generate_run(c, 1, 1, 1);
    Preprocessor prep;
    prep.options.decim_factor = 5;
    prep.stats.mean.assign(16, 0.0);
    prep.stats.sd.assign(16, 1.0);
    EpochScorer oracle = [](const std::vector<const EEGEpoch*>& used) {
        return std::vector<double>(used.size(), 0.0);
    };
    CHECK_THROWS_AS(run_interaction_scored(run, prep, 999, oracle), std::invalid_argument);
    CHECK_THROWS_AS(run_interaction_scored(run, prep, 0, oracle), std::invalid_argument);
}

TEST_CASE("unknown snr preset is rejected") {
    CHECK_THROWS_WITH_AS(snr_preset("crystal-clear"), doctest::Contains("street-noise"),
                         std::invalid_argument);
}
