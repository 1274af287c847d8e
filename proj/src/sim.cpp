// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/sim.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "tcfnet/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace tcfnet {

namespace {

constexpr double kPi = std::numbers::pi;

const std::vector<std::string> kElectrodes = {"Fz", "FC1", "FC2", "C3", "Cz", "C4", "CP1", "CP2",
                                              "P7", "P3", "Pz", "P4", "P8", "O1", "O2", "Oz"};

// Centro-parietal emphasis: the target response is strongest around Pz/CP.
const std::vector<double> kDefaultWeights = {0.50, 0.60, 0.60, 0.60, 0.90, 0.60, 0.95, 0.95,
                                             0.50, 0.80, 1.00, 0.80, 0.50, 0.40, 0.40, 0.45};

// Economy pink-noise filter (Kellet); scaled to roughly unit variance.
struct PinkNoise {
    double b0 = 0, b1 = 0, b2 = 0;
    double step(double white) {
        b0 = 0.99765 * b0 + white * 0.0990460;
        b1 = 0.96300 * b1 + white * 0.2965164;
        b2 = 0.57000 * b2 + white * 1.0526913;
        return (b0 + b1 + b2 + white * 0.1848) * 0.25;
    }
};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("truncated run file: " + path);
    return v;
}

json config_to_json(const GeneratorConfig& c) {
    return json{{"subjects", c.subjects},
                {"sessions", c.sessions},
                {"runs_per_session", c.runs_per_session},
                {"blocks_min", c.blocks_min},
                {"blocks_max", c.blocks_max},
                {"fs", c.fs},
                {"soa_ms", c.soa_ms},
                {"flash_ms", c.flash_ms},
                {"lead_in_ms", c.lead_in_ms},
                {"tail_ms", c.tail_ms},
                {"p300_amplitude", c.p300_amplitude},
                {"p300_latency_ms", c.p300_latency_ms},
                {"p300_jitter_sd_ms", c.p300_jitter_sd_ms},
                {"p300_width_ms", c.p300_width_ms},
                {"channel_weights", c.channel_weights},
                {"pink_level", c.pink_level},
                {"white_level", c.white_level},
                {"alpha_level", c.alpha_level},
                {"line_level", c.line_level},
                {"line_hz", c.line_hz},
                {"subject_attenuation_spread", c.subject_attenuation_spread},
                {"stroke_subjects", c.stroke_subjects},
                {"stroke_attenuation", c.stroke_attenuation},
                {"master_seed", c.master_seed}};
}

GeneratorConfig config_from_json(const json& j) {
    GeneratorConfig c;
    c.subjects = j.at("subjects");
    c.sessions = j.at("sessions");
    c.runs_per_session = j.at("runs_per_session");
    c.blocks_min = j.at("blocks_min");
    c.blocks_max = j.at("blocks_max");
    c.fs = j.at("fs");
    c.soa_ms = j.at("soa_ms");
    c.flash_ms = j.at("flash_ms");
    c.lead_in_ms = j.at("lead_in_ms");
    c.tail_ms = j.at("tail_ms");
    c.p300_amplitude = j.at("p300_amplitude");
    c.p300_latency_ms = j.at("p300_latency_ms");
    c.p300_jitter_sd_ms = j.at("p300_jitter_sd_ms");
    c.p300_width_ms = j.at("p300_width_ms");
    c.channel_weights = j.at("channel_weights").get<std::vector<double>>();
    c.pink_level = j.at("pink_level");
    c.white_level = j.at("white_level");
    c.alpha_level = j.at("alpha_level");
    c.line_level = j.at("line_level");
    c.line_hz = j.at("line_hz");
    c.subject_attenuation_spread = j.at("subject_attenuation_spread");
    c.stroke_subjects = j.at("stroke_subjects");
    c.stroke_attenuation = j.at("stroke_attenuation");
    c.master_seed = j.at("master_seed");
    return c;
}

}  // namespace

const std::vector<std::string>& electrode_names() { return kElectrodes; }

GeneratorConfig snr_preset(const std::string& name) {
    GeneratorConfig c;
    c.channel_weights = kDefaultWeights;
    if (name == "high") {
        c.p300_amplitude = 14.0;
        c.pink_level = 0.8;
        c.white_level = 0.6;
        c.alpha_level = 0.5;
        c.line_level = 0.5;
    } else if (name == "medium") {
        c.p300_amplitude = 8.0;
        c.pink_level = 1.5;
        c.white_level = 1.2;
        c.alpha_level = 1.0;
        c.line_level = 1.0;
    } else if (name == "street-noise") {
        // non-shielded room with appliances running and street-level noise
        c.p300_amplitude = 6.0;
        c.pink_level = 2.5;
        c.white_level = 2.0;
        c.alpha_level = 1.5;
        c.line_level = 3.0;
    } else {
        throw std::invalid_argument("unknown snr preset '" + name +
                                    "'; valid: high, medium, street-noise");
    }
    return c;
}

RawRun generate_run(const GeneratorConfig& config, int subject, int session, int run) {
    if (config.channel_weights.size() != kElectrodes.size())
        throw std::invalid_argument("generator needs " + std::to_string(kElectrodes.size()) +
                                    " channel weights");
    if (config.blocks_min < 1 || config.blocks_max < config.blocks_min)
        throw std::invalid_argument("invalid block count range");

    std::mt19937_64 rng = derived_rng(config.master_seed, static_cast<uint64_t>(subject),
                                      static_cast<uint64_t>(session), static_cast<uint64_t>(run));
    // Subject-level template scale is a function of the subject only.
    std::mt19937_64 subject_rng = derived_rng(config.master_seed, static_cast<uint64_t>(subject), 0xa77);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double subject_factor = 1.0 - config.subject_attenuation_spread * unit(subject_rng);
    int healthy = config.subjects - config.stroke_subjects;
    if (healthy > 0 && subject > healthy) subject_factor *= config.stroke_attenuation;

    std::uniform_int_distribution<int> blocks_dist(config.blocks_min, config.blocks_max);
    int blocks = blocks_dist(rng);

    int64_t soa = static_cast<int64_t>(std::llround(config.soa_ms * config.fs / 1000.0));
    int64_t lead_in = static_cast<int64_t>(std::llround(config.lead_in_ms * config.fs / 1000.0));
    int64_t tail = static_cast<int64_t>(std::llround(config.tail_ms * config.fs / 1000.0));
    int64_t total = lead_in + static_cast<int64_t>(blocks) * kNumItems * soa + tail;

    RawRun out;
    out.fs = config.fs;
    out.subject = subject;
    out.session = session;
    out.run = run;
    out.samples.assign(kElectrodes.size(), std::vector<double>(static_cast<size_t>(total), 0.0));

    // One randomized flash order per block; the run's target item is its run
    // index (one run per item).
    int target_item = (run - 1) % kNumItems;
    std::vector<int> order(kNumItems);
    for (int b = 0; b < blocks; ++b) {
        for (int i = 0; i < kNumItems; ++i) order[static_cast<size_t>(i)] = i;
        for (int i = kNumItems - 1; i > 0; --i) {
            std::uniform_int_distribution<int> pick(0, i);
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(pick(rng))]);
        }
        for (int i = 0; i < kNumItems; ++i) {
            StimulusEvent e;
            e.onset_sample = lead_in + (static_cast<int64_t>(b) * kNumItems + i) * soa;
            e.item_index = order[static_cast<size_t>(i)];
            e.is_target = order[static_cast<size_t>(i)] == target_item;
            e.block_index = b;
            out.events.push_back(e);
        }
    }

    // Background: pink + white per channel, a 10 Hz rhythm with per-channel
    // phase, and a common-phase mains component.
    std::normal_distribution<double> gauss(0.0, 1.0);
    double line_phase = 2.0 * kPi * unit(rng);
    for (size_t ch = 0; ch < kElectrodes.size(); ++ch) {
        PinkNoise pink;
        double alpha_phase = 2.0 * kPi * unit(rng);
        std::vector<double>& sig = out.samples[ch];
        for (int64_t t = 0; t < total; ++t) {
            double w = gauss(rng);
            double v = config.pink_level * pink.step(w) + config.white_level * gauss(rng);
            double secs = static_cast<double>(t) / config.fs;
            v += config.alpha_level * std::sin(2.0 * kPi * 10.0 * secs + alpha_phase);
            v += config.line_level * std::sin(2.0 * kPi * config.line_hz * secs + line_phase);
            sig[static_cast<size_t>(t)] = v;
        }
    }

    // Target response after every target flash.
    std::normal_distribution<double> jitter(0.0, config.p300_jitter_sd_ms);
    double width = config.p300_width_ms * config.fs / 1000.0;
    for (const StimulusEvent& e : out.events) {
        if (!e.is_target) continue;
        double latency_ms = config.p300_latency_ms + jitter(rng);
        double center = static_cast<double>(e.onset_sample) + latency_ms * config.fs / 1000.0;
        int64_t lo = std::max<int64_t>(0, static_cast<int64_t>(center - 5.0 * width));
        int64_t hi = std::min<int64_t>(total - 1, static_cast<int64_t>(center + 5.0 * width));
        for (int64_t t = lo; t <= hi; ++t) {
            double d = (static_cast<double>(t) - center) / width;
            double bump = config.p300_amplitude * subject_factor * std::exp(-0.5 * d * d);
            for (size_t ch = 0; ch < kElectrodes.size(); ++ch)
                out.samples[ch][static_cast<size_t>(t)] += config.channel_weights[ch] * bump;
        }
    }
    return out;
}

// --- persistence -----------------------------------------------------------------

void save_raw_run(const std::string& path_base, const RawRun& run) {
    std::ofstream os(path_base + ".eeg", std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write run file: " + path_base + ".eeg");
    os.write("EEGR", 4);
    write_pod<uint16_t>(os, kRawRunVersion);
    write_pod<uint32_t>(os, static_cast<uint32_t>(run.channels()));
    write_pod<uint64_t>(os, static_cast<uint64_t>(run.length()));
    write_pod<float>(os, static_cast<float>(run.fs));
    for (const auto& ch : run.samples)
        for (double v : ch) write_pod<float>(os, static_cast<float>(v));
    if (!os) throw std::runtime_error("write failed: " + path_base + ".eeg");

    std::ofstream ev(path_base + ".events.csv", std::ios::trunc);
    ev << "onset_sample,item_index,is_target,block_index\n";
    for (const StimulusEvent& e : run.events)
        ev << e.onset_sample << "," << e.item_index << "," << (e.is_target ? 1 : 0) << ","
           << e.block_index << "\n";
    if (!ev) throw std::runtime_error("write failed: " + path_base + ".events.csv");
}

RawRun load_raw_run(const std::string& path_base) {
    std::string eeg_path = path_base + ".eeg";
    std::ifstream is(eeg_path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open run file: " + eeg_path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "EEGR", 4) != 0)
        throw std::runtime_error("bad run magic in " + eeg_path);
    uint16_t version = read_pod<uint16_t>(is, eeg_path);
    if (version != kRawRunVersion)
        throw std::runtime_error("unknown run version " + std::to_string(version) + " in " + eeg_path);
    uint32_t channels = read_pod<uint32_t>(is, eeg_path);
    uint64_t samples = read_pod<uint64_t>(is, eeg_path);
    float fs = read_pod<float>(is, eeg_path);

    RawRun run;
    run.fs = static_cast<double>(fs);
    run.samples.assign(channels, std::vector<double>(samples));
    for (uint32_t ch = 0; ch < channels; ++ch)
        for (uint64_t t = 0; t < samples; ++t)
            run.samples[ch][t] = static_cast<double>(read_pod<float>(is, eeg_path));

    std::string ev_path = path_base + ".events.csv";
    std::ifstream ev(ev_path);
    if (!ev) throw std::runtime_error("cannot open event table: " + ev_path);
    std::string line;
    std::getline(ev, line);  // header
    while (std::getline(ev, line)) {
        if (line.empty()) continue;
        StimulusEvent e;
        int is_target = 0;
        if (std::sscanf(line.c_str(), "%lld,%d,%d,%d", reinterpret_cast<long long*>(&e.onset_sample),
                        &e.item_index, &is_target, &e.block_index) != 4)
            throw std::runtime_error("malformed event row in " + ev_path + ": " + line);
        e.is_target = is_target != 0;
        run.events.push_back(e);
    }
    return run;
}

std::string SessionDataset::run_path(int subject, int session, int run) const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "S%02d/sess%d/run%d", subject, session, run);
    return (fs::path(dir) / buf).string();
}

RawRun SessionDataset::load_run(int subject, int session, int run) const {
    RawRun r = load_raw_run(run_path(subject, session, run));
    r.subject = subject;
    r.session = session;
    r.run = run;
    return r;
}

std::string dataset_content_hash(const GeneratorConfig& config, const std::string& dir) {
    uint64_t h = 14695981039346656037ull;
    SessionDataset probe{dir, config, ""};
    for (int s = 1; s <= config.subjects; ++s)
        for (int se = 1; se <= config.sessions; ++se)
            for (int r = 1; r <= config.runs_per_session; ++r) {
                for (const char* ext : {".eeg", ".events.csv"}) {
                    std::ifstream is(probe.run_path(s, se, r) + ext, std::ios::binary);
                    if (!is)
                        throw std::runtime_error("missing dataset file: " + probe.run_path(s, se, r) + ext);
                    std::vector<char> bytes{std::istreambuf_iterator<char>(is),
                                            std::istreambuf_iterator<char>()};
                    h = fnv1a(bytes.data(), bytes.size(), h);
                }
            }
    return hex64(h);
}

SessionDataset generate_dataset(const GeneratorConfig& config, const std::string& dir) {
    for (int s = 1; s <= config.subjects; ++s)
        for (int se = 1; se <= config.sessions; ++se) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "S%02d/sess%d", s, se);
            fs::create_directories(fs::path(dir) / buf);
            for (int r = 1; r <= config.runs_per_session; ++r) {
                RawRun run = generate_run(config, s, se, r);
                char rbuf[64];
                std::snprintf(rbuf, sizeof(rbuf), "S%02d/sess%d/run%d", s, se, r);
                save_raw_run((fs::path(dir) / rbuf).string(), run);
            }
        }
    SessionDataset ds{dir, config, dataset_content_hash(config, dir)};
    json manifest = {{"format", "tcfnet-dataset"},
                     {"version", 1},
                     {"config", config_to_json(config)},
                     {"content_hash", ds.content_hash}};
    std::ofstream os(fs::path(dir) / "manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw std::runtime_error("cannot write manifest in " + dir);
    return ds;
}

SessionDataset load_dataset(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw std::runtime_error("missing manifest.json in " + dir);
    json manifest = json::parse(is);
    if (manifest.at("format") != "tcfnet-dataset" || manifest.at("version") != 1)
        throw std::runtime_error("unknown dataset format in " + dir + "/manifest.json");
    SessionDataset ds{dir, config_from_json(manifest.at("config")), manifest.at("content_hash")};
    std::string actual = dataset_content_hash(ds.config, dir);
    if (actual != ds.content_hash)
        throw std::runtime_error("dataset content hash mismatch in " + dir + ": manifest " +
                                 ds.content_hash + " vs files " + actual);
    return ds;
}

// --- interaction loop -----------------------------------------------------------

int run_target_item(const RawRun& run) {
    for (const StimulusEvent& e : run.events)
        if (e.is_target) return e.item_index;
    throw std::invalid_argument("run has no target flashes");
}

InteractionResult run_interaction_scored(const RawRun& raw, const Preprocessor& prep,
                                         int n_blocks_used, const EpochScorer& score) {
    if (n_blocks_used < 1) throw std::invalid_argument("run_interaction: need at least one block");
    RawRun conditioned = preprocess_run(raw, prep.options);
    std::vector<EEGEpoch> epochs = extract_epochs(conditioned, prep.options.window_ms);
    standardize(epochs, prep.stats);

    int max_block = 0;
    for (const EEGEpoch& e : epochs) max_block = std::max(max_block, e.block + 1);
    if (n_blocks_used > max_block)
        throw std::invalid_argument("run_interaction: asked for " + std::to_string(n_blocks_used) +
                                    " blocks but the run has " + std::to_string(max_block));

    std::vector<const EEGEpoch*> used;
    for (const EEGEpoch& e : epochs)
        if (e.block < n_blocks_used) used.push_back(&e);

    std::vector<double> scores = score(used);
    if (scores.size() != used.size())
        throw std::logic_error("scorer returned " + std::to_string(scores.size()) + " scores for " +
                               std::to_string(used.size()) + " epochs");

    InteractionResult res;
    res.confidence.assign(kNumItems, 0.0);
    std::vector<int> counts(kNumItems, 0);
    for (size_t b = 0; b < used.size(); ++b) {
        int item = used[b]->item_index;
        res.confidence[static_cast<size_t>(item)] += scores[b];
        counts[static_cast<size_t>(item)] += 1;
    }
    for (int i = 0; i < kNumItems; ++i)
        if (counts[static_cast<size_t>(i)] > 0)
            res.confidence[static_cast<size_t>(i)] /= counts[static_cast<size_t>(i)];

    res.predicted_item = 0;
    for (int i = 1; i < kNumItems; ++i)
        if (res.confidence[static_cast<size_t>(i)] > res.confidence[static_cast<size_t>(res.predicted_item)])
            res.predicted_item = i;
    for (int i = 0; i < kNumItems; ++i)
        if (i != res.predicted_item && res.confidence[static_cast<size_t>(i)] ==
                                           res.confidence[static_cast<size_t>(res.predicted_item)])
            res.tie = true;  // broken toward the lower index
    return res;
}

InteractionResult run_interaction(ModelGraph& model, const RawRun& raw, const Preprocessor& prep,
                                  int n_blocks_used) {
    return run_interaction_scored(
        raw, prep, n_blocks_used, [&](const std::vector<const EEGEpoch*>& used) {
            int B = static_cast<int>(used.size());
            int C = model.config().input_rows, W = model.config().input_cols;
            Tensor batch({B, C, W, 1});
            for (int b = 0; b < B; ++b)
                std::copy_n(used[static_cast<size_t>(b)]->data.data.begin(),
                            static_cast<int64_t>(C) * W,
                            batch.data.begin() + static_cast<int64_t>(b) * C * W);
            Tensor probs = model.forward_probs(batch, Mode::infer);
            std::vector<double> scores(used.size());
            for (int b = 0; b < B; ++b) scores[static_cast<size_t>(b)] = probs.data[static_cast<size_t>(b) * 2 + 1];
            return scores;
        });
}

}  // namespace tcfnet
