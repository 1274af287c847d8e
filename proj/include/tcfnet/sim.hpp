// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "tcfnet/dsp.hpp"
#include "tcfnet/model.hpp"

namespace tcfnet {

inline constexpr int kNumItems = 6;
inline constexpr uint16_t kRawRunVersion = 1;

// Protocol + signal model of the synthetic session generator. The stimulation
// timeline is block-randomized: every block flashes each of the 6 items once,
// one of which is the run's target, at a fixed stimulus-onset asynchrony.
struct GeneratorConfig {
    int subjects = 9;
    int sessions = 4;
    int runs_per_session = 6;  // one run per target item
    int blocks_min = 20, blocks_max = 25;

    double fs = 2400.0;
    double soa_ms = 400.0;
    double flash_ms = 100.0;
    double lead_in_ms = 1000.0;
    double tail_ms = 1000.0;

    // target response template: gaussian bump per target flash
    double p300_amplitude = 8.0;  // microvolts at the best channel
    double p300_latency_ms = 300.0;
    double p300_jitter_sd_ms = 20.0;
    double p300_width_ms = 45.0;  // gaussian sd
    std::vector<double> channel_weights;  // 16 entries; centro-parietal emphasis by default

    // background mixture
    double pink_level = 1.0;
    double white_level = 1.0;
    double alpha_level = 1.0;   // 10 Hz rhythm
    double line_level = 1.0;    // mains
    double line_hz = 60.0;

    // multiplies the template per subject; the last stroke_subjects subjects
    // get a further fixed attenuation
    double subject_attenuation_spread = 0.2;
    int stroke_subjects = 3;
    double stroke_attenuation = 0.75;

    uint64_t master_seed = 42;
};

// Named noise presets: "high", "medium", "street-noise".
GeneratorConfig snr_preset(const std::string& name);

const std::vector<std::string>& electrode_names();  // 16-channel montage

RawRun generate_run(const GeneratorConfig& config, int subject, int session, int run);

// --- dataset persistence -----------------------------------------------------

// Directory tree of runs + a manifest carrying the config, seed, and a
// content hash over all run files.
struct SessionDataset {
    std::string dir;
    GeneratorConfig config;
    std::string content_hash;

    std::string run_path(int subject, int session, int run) const;
    RawRun load_run(int subject, int session, int run) const;
};

void save_raw_run(const std::string& path_base, const RawRun& run);
RawRun load_raw_run(const std::string& path_base);

SessionDataset generate_dataset(const GeneratorConfig& config, const std::string& dir);
SessionDataset load_dataset(const std::string& dir);
std::string dataset_content_hash(const GeneratorConfig& config, const std::string& dir);

// --- interaction loop -----------------------------------------------------------

// Conditioning chain + the training fold's standardization statistics.
struct Preprocessor {
    PreprocessOptions options;
    ChannelStats stats;
};

struct InteractionResult {
    int predicted_item = 0;
    std::vector<double> confidence;  // mean target-class probability per item
    bool tie = false;
};

// Buffers each flash epoch of the first n_blocks_used blocks, preprocesses,
// scores with the model, averages per item, and picks the argmax. Ties break
// to the lowest item index.
InteractionResult run_interaction(ModelGraph& model, const RawRun& raw, const Preprocessor& prep,
                                  int n_blocks_used);

// Same loop with an injected scorer (target-class confidence per epoch).
using EpochScorer = std::function<std::vector<double>(const std::vector<const EEGEpoch*>&)>;
InteractionResult run_interaction_scored(const RawRun& raw, const Preprocessor& prep,
                                         int n_blocks_used, const EpochScorer& score);

// Ground truth of a run: the item whose flashes are marked as targets.
int run_target_item(const RawRun& run);

}  // namespace tcfnet
