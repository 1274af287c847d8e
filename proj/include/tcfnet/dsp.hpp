// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <complex>
#include <string>

#include "tcfnet/tensor.hpp"

namespace tcfnet {

struct StimulusEvent {
    int64_t onset_sample = 0;
    int item_index = 0;
    bool is_target = false;
    int block_index = 0;
};

// Continuous multichannel recording plus its event table.
struct RawRun {
    std::vector<std::vector<double>> samples;  // [channel][time]
    double fs = 0.0;
    std::vector<StimulusEvent> events;
    int subject = 0, session = 0, run = 0;

    int channels() const { return static_cast<int>(samples.size()); }
    int64_t length() const { return samples.empty() ? 0 : static_cast<int64_t>(samples[0].size()); }
};

// --- IIR filters ------------------------------------------------------------

struct Biquad {
    double b0, b1, b2, a1, a2;
};

struct BiquadCascade {
    std::vector<Biquad> sections;
    std::string design;  // human-readable design metadata
    double fs = 0.0;

    // |poles| all below 1 - margin
    bool stable(double margin = 1e-6) const;
    std::complex<double> response(double freq_hz) const;
    double gain(double freq_hz) const { return std::abs(response(freq_hz)); }
};

// Bandpass Butterworth: `order` total poles (so an order/2 lowpass prototype),
// analog bandpass transform, then bilinear transform with frequency
// pre-warping. Gain is exactly 1 at the (digital) center frequency and 1/sqrt(2)
// at the band edges.
BiquadCascade design_butterworth_bandpass(int order, double f_lo, double f_hi, double fs);

// Second-order notch, unity gain away from f0.
BiquadCascade design_notch(double f0, double q, double fs);

enum class FilterMode { causal, zero_phase };

// Per-section direct-form II transposed state for streaming use.
struct FilterState {
    std::vector<std::array<double, 2>> s;
    explicit FilterState(size_t sections = 0) : s(sections, {0.0, 0.0}) {}
};

// Causal chunk application; feeding chunks of any size matches the
// whole-signal result bit for bit.
void filter_chunk(const BiquadCascade& cascade, const double* x, double* y, size_t n,
                  FilterState& state);

std::vector<double> filter_apply(const BiquadCascade& cascade, const std::vector<double>& x,
                                 FilterMode mode);

// Keep every factor-th sample. Anti-aliasing comes from the bandpass stage of
// the pipeline, not from this op.
std::vector<double> decimate(const std::vector<double>& x, int factor);

// Clip below/above the given percentiles (linear-interpolation order
// statistics), in place.
void winsorize(std::vector<double>& x, double p_lo = 10.0, double p_hi = 90.0);
double percentile(const std::vector<double>& x, double p);

// --- epoching ---------------------------------------------------------------

struct EEGEpoch {
    Tensor data;  // (channels, window)
    int label = 0;  // 1 = target flash
    int item_index = 0;
    int block = 0, run = 0, session = 0, subject = 0;

    std::array<int, 5> key() const { return {subject, session, run, block, item_index}; }
};

struct PreprocessOptions {
    double notch_hz = 60.0;  // mains
    double notch_q = 30.0;
    double bp_lo = 1.0, bp_hi = 15.0;
    int bp_order = 6;  // total poles
    int decim_factor = 20;
    double wins_lo = 10.0, wins_hi = 90.0;
    int window_ms = 1000;
    FilterMode filter_mode = FilterMode::causal;
    // Decimate before filtering (protocol-faithful order; aliasing is then
    // uncontrolled). Default filters at the acquisition rate first.
    bool decimate_first = false;
};

// Conditioning chain: notch -> bandpass -> decimate -> winsorize (default
// order), with event onsets rescaled to the decimated rate. The notch always
// runs at the acquisition rate: a 60 Hz notch is degenerate at the 120 Hz
// post-decimation Nyquist.
RawRun preprocess_run(const RawRun& raw, const PreprocessOptions& options);

// Epochs are [onset, onset + window); windows running past the signal tail
// are dropped and counted.
std::vector<EEGEpoch> extract_epochs(const RawRun& run, int window_ms, int* dropped_count = nullptr);

struct ChannelStats {
    std::vector<double> mean, sd;
};

// Statistics come from the training fold only; apply them to every split.
ChannelStats compute_channel_stats(const std::vector<EEGEpoch>& train_epochs);
void standardize(std::vector<EEGEpoch>& epochs, const ChannelStats& stats);

}  // namespace tcfnet
