// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tcfnet {

namespace {

using cd = std::complex<double>;
constexpr double kPi = std::numbers::pi;

// Roots of z^2 + a1 z + a2.
std::pair<cd, cd> biquad_poles(const Biquad& s) {
    cd disc = std::sqrt(cd(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
    return {(-s.a1 + disc) / 2.0, (-s.a1 - disc) / 2.0};
}

}  // namespace

bool BiquadCascade::stable(double margin) const {
    for (const Biquad& s : sections) {
        auto [p1, p2] = biquad_poles(s);
        if (std::abs(p1) >= 1.0 - margin || std::abs(p2) >= 1.0 - margin) return false;
    }
    return true;
}

std::complex<double> BiquadCascade::response(double freq_hz) const {
    double w = 2.0 * kPi * freq_hz / fs;
    cd z1 = std::exp(cd(0.0, -w));
    cd z2 = z1 * z1;
    cd h(1.0, 0.0);
    for (const Biquad& s : sections)
        h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    return h;
}

BiquadCascade design_butterworth_bandpass(int order, double f_lo, double f_hi, double fs) {
    if (order < 2 || order % 2 != 0)
        throw std::invalid_argument("bandpass order must be even and >= 2, got " + std::to_string(order));
    if (!(0.0 < f_lo && f_lo < f_hi && f_hi < fs / 2.0))
        throw std::invalid_argument("band edges must satisfy 0 < " + std::to_string(f_lo) + " < " +
                                    std::to_string(f_hi) + " < fs/2 = " + std::to_string(fs / 2.0));
    int n = order / 2;  // lowpass prototype order

    // Pre-warped analog band edges.
    double w_lo = 2.0 * fs * std::tan(kPi * f_lo / fs);
    double w_hi = 2.0 * fs * std::tan(kPi * f_hi / fs);
    double w0 = std::sqrt(w_lo * w_hi);
    double bw = w_hi - w_lo;

    // Butterworth prototype poles (unit cutoff), then the lowpass->bandpass
    // substitution s -> (s^2 + w0^2)/(bw s): each prototype pole yields two.
    std::vector<cd> analog_poles;
    for (int k = 1; k <= n; ++k) {
        double theta = kPi * (2.0 * k + n - 1.0) / (2.0 * n);
        cd p(std::cos(theta), std::sin(theta));
        cd pb = p * bw;
        cd disc = std::sqrt(pb * pb - 4.0 * w0 * w0);
        analog_poles.push_back((pb + disc) / 2.0);
        analog_poles.push_back((pb - disc) / 2.0);
    }

    // Bilinear transform; zeros land at z = +1 (n of them) and z = -1 (n).
    std::vector<cd> digital_poles;
    for (cd s : analog_poles) digital_poles.push_back((2.0 * fs + s) / (2.0 * fs - s));

    // Group into real-coefficient sections: conjugate pairs first, leftover
    // real poles pairwise.
    std::vector<cd> upper;
    std::vector<double> reals;
    for (cd p : digital_poles) {
        if (std::abs(p.imag()) < 1e-12)
            reals.push_back(p.real());
        else if (p.imag() > 0.0)
            upper.push_back(p);
    }
    BiquadCascade cascade;
    cascade.fs = fs;
    cascade.design = "butterworth bandpass order " + std::to_string(order) + " [" +
                     std::to_string(f_lo) + "," + std::to_string(f_hi) + "] Hz @ " +
                     std::to_string(fs) + " Hz";
    for (cd p : upper)
        cascade.sections.push_back({1.0, 0.0, -1.0, -2.0 * p.real(), std::norm(p)});
    std::sort(reals.begin(), reals.end());
    for (size_t i = 0; i + 1 < reals.size(); i += 2)
        cascade.sections.push_back({1.0, 0.0, -1.0, -(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]});
    if (static_cast<int>(cascade.sections.size()) != n)
        throw std::logic_error("bandpass design produced an unexpected section count");

    // Unity gain at the digital image of the analog center frequency.
    double f_center = fs / kPi * std::atan(w0 / (2.0 * fs));
    double g = cascade.gain(f_center);
    cascade.sections[0].b0 /= g;
    cascade.sections[0].b1 /= g;
    cascade.sections[0].b2 /= g;
    return cascade;
}

BiquadCascade design_notch(double f0, double q, double fs) {
    if (!(0.0 < f0 && f0 < fs / 2.0))
        throw std::invalid_argument("notch frequency " + std::to_string(f0) +
                                    " must lie below fs/2 = " + std::to_string(fs / 2.0));
    if (q <= 0.0) throw std::invalid_argument("notch Q must be positive");
    double w0 = 2.0 * kPi * f0 / fs;
    double alpha = std::sin(w0) / (2.0 * q);
    double a0 = 1.0 + alpha;
    BiquadCascade cascade;
    cascade.fs = fs;
    cascade.design = "notch " + std::to_string(f0) + " Hz Q " + std::to_string(q) + " @ " +
                     std::to_string(fs) + " Hz";
    cascade.sections.push_back({1.0 / a0, -2.0 * std::cos(w0) / a0, 1.0 / a0,
                                -2.0 * std::cos(w0) / a0, (1.0 - alpha) / a0});
    return cascade;
}

void filter_chunk(const BiquadCascade& cascade, const double* x, double* y, size_t n,
                  FilterState& state) {
    if (state.s.size() != cascade.sections.size())
        throw std::invalid_argument("filter state section count mismatch");
    for (size_t i = 0; i < n; ++i) {
        double v = x[i];
        for (size_t k = 0; k < cascade.sections.size(); ++k) {
            const Biquad& s = cascade.sections[k];
            double out = s.b0 * v + state.s[k][0];
            state.s[k][0] = s.b1 * v - s.a1 * out + state.s[k][1];
            state.s[k][1] = s.b2 * v - s.a2 * out;
            v = out;
        }
        y[i] = v;
    }
}

std::vector<double> filter_apply(const BiquadCascade& cascade, const std::vector<double>& x,
                                 FilterMode mode) {
    std::vector<double> y(x.size());
    FilterState state(cascade.sections.size());
    filter_chunk(cascade, x.data(), y.data(), x.size(), state);
    if (mode == FilterMode::causal) return y;
    // forward-backward: squared magnitude, zero phase
    std::reverse(y.begin(), y.end());
    std::vector<double> z(y.size());
    FilterState state2(cascade.sections.size());
    filter_chunk(cascade, y.data(), z.data(), y.size(), state2);
    std::reverse(z.begin(), z.end());
    return z;
}

std::vector<double> decimate(const std::vector<double>& x, int factor) {
    if (factor < 1) throw std::invalid_argument("decimation factor must be >= 1");
    std::vector<double> y;
    y.reserve(x.size() / static_cast<size_t>(factor) + 1);
    for (size_t i = 0; i < x.size(); i += static_cast<size_t>(factor)) y.push_back(x[i]);
    return y;
}

double percentile(const std::vector<double>& x, double p) {
    if (x.empty()) throw std::invalid_argument("percentile of empty data");
    if (p < 0.0 || p > 100.0) throw std::invalid_argument("percentile must be in [0,100]");
    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    double rank = p / 100.0 * (static_cast<double>(sorted.size()) - 1.0);
    size_t lo = static_cast<size_t>(std::floor(rank));
    size_t hi = static_cast<size_t>(std::ceil(rank));
    double frac = rank - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

void winsorize(std::vector<double>& x, double p_lo, double p_hi) {
    if (p_lo >= p_hi) throw std::invalid_argument("winsorize: p_lo must be below p_hi");
    if (x.empty()) throw std::invalid_argument("winsorize of empty data");
    // Classical winsorization clips to order statistics (ceil of the low
    // rank, floor of the high), not interpolated percentiles: the thresholds
    // are then fixed points of the operator, which interpolation is not.
    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    double n1 = static_cast<double>(sorted.size()) - 1.0;
    double lo = sorted[static_cast<size_t>(std::ceil(p_lo / 100.0 * n1))];
    double hi = sorted[static_cast<size_t>(std::floor(p_hi / 100.0 * n1))];
    for (double& v : x) v = std::clamp(v, lo, hi);
}

RawRun preprocess_run(const RawRun& raw, const PreprocessOptions& options) {
    if (raw.fs <= 0.0) throw std::invalid_argument("preprocess_run: run has no sampling rate");
    RawRun out;
    out.subject = raw.subject;
    out.session = raw.session;
    out.run = raw.run;

    BiquadCascade notch = design_notch(options.notch_hz, options.notch_q, raw.fs);
    double post_fs = raw.fs / options.decim_factor;
    BiquadCascade bandpass = design_butterworth_bandpass(
        options.bp_order, options.bp_lo, options.bp_hi, options.decimate_first ? post_fs : raw.fs);
    if (!notch.stable() || !bandpass.stable())
        throw std::runtime_error("unstable filter design: " + notch.design + " / " + bandpass.design);

    out.samples.resize(raw.samples.size());
    for (size_t ch = 0; ch < raw.samples.size(); ++ch) {
        std::vector<double> sig = filter_apply(notch, raw.samples[ch], options.filter_mode);
        if (options.decimate_first) {
            sig = decimate(sig, options.decim_factor);
            sig = filter_apply(bandpass, sig, options.filter_mode);
        } else {
            sig = filter_apply(bandpass, sig, options.filter_mode);
            sig = decimate(sig, options.decim_factor);
        }
        winsorize(sig, options.wins_lo, options.wins_hi);
        out.samples[ch] = std::move(sig);
    }
    out.fs = post_fs;
    out.events = raw.events;
    for (StimulusEvent& e : out.events) e.onset_sample /= options.decim_factor;
    return out;
}

std::vector<EEGEpoch> extract_epochs(const RawRun& run, int window_ms, int* dropped_count) {
    int64_t window = static_cast<int64_t>(std::llround(window_ms * run.fs / 1000.0));
    if (window < 1) throw std::invalid_argument("extract_epochs: window too short");
    int C = run.channels();
    std::vector<EEGEpoch> epochs;
    int dropped = 0;
    for (const StimulusEvent& e : run.events) {
        if (e.onset_sample < 0 || e.onset_sample + window > run.length()) {
            ++dropped;
            continue;
        }
        EEGEpoch ep;
        ep.data = Tensor({C, static_cast<int>(window)});
        for (int ch = 0; ch < C; ++ch)
            std::copy_n(run.samples[static_cast<size_t>(ch)].begin() + e.onset_sample, window,
                        ep.data.data.begin() + static_cast<int64_t>(ch) * window);
        ep.label = e.is_target ? 1 : 0;
        ep.item_index = e.item_index;
        ep.block = e.block_index;
        ep.run = run.run;
        ep.session = run.session;
        ep.subject = run.subject;
        epochs.push_back(std::move(ep));
    }
    if (dropped_count) *dropped_count = dropped;
    return epochs;
}

ChannelStats compute_channel_stats(const std::vector<EEGEpoch>& train_epochs) {
    if (train_epochs.empty()) throw std::invalid_argument("channel stats need at least one epoch");
    int C = train_epochs[0].data.dim(0);
    int W = train_epochs[0].data.dim(1);
    ChannelStats st;
    st.mean.assign(static_cast<size_t>(C), 0.0);
    st.sd.assign(static_cast<size_t>(C), 0.0);
    int64_t n = static_cast<int64_t>(train_epochs.size()) * W;
    for (const EEGEpoch& ep : train_epochs)
        for (int ch = 0; ch < C; ++ch)
            for (int i = 0; i < W; ++i)
                st.mean[static_cast<size_t>(ch)] += ep.data.data[static_cast<size_t>(ch) * W + i];
    for (int ch = 0; ch < C; ++ch) st.mean[static_cast<size_t>(ch)] /= static_cast<double>(n);
    for (const EEGEpoch& ep : train_epochs)
        for (int ch = 0; ch < C; ++ch)
            for (int i = 0; i < W; ++i) {
                double d = ep.data.data[static_cast<size_t>(ch) * W + i] - st.mean[static_cast<size_t>(ch)];
                st.sd[static_cast<size_t>(ch)] += d * d;
            }
    for (int ch = 0; ch < C; ++ch) {
        st.sd[static_cast<size_t>(ch)] = std::sqrt(st.sd[static_cast<size_t>(ch)] / static_cast<double>(n));
        if (st.sd[static_cast<size_t>(ch)] < 1e-12) st.sd[static_cast<size_t>(ch)] = 1.0;  // dead channel
    }
    return st;
}

void standardize(std::vector<EEGEpoch>& epochs, const ChannelStats& stats) {
    for (EEGEpoch& ep : epochs) {
        int C = ep.data.dim(0), W = ep.data.dim(1);
        if (C != static_cast<int>(stats.mean.size()))
            throw std::invalid_argument("standardize: channel count mismatch");
        for (int ch = 0; ch < C; ++ch)
            for (int i = 0; i < W; ++i) {
                double& v = ep.data.data[static_cast<size_t>(ch) * W + i];
                v = (v - stats.mean[static_cast<size_t>(ch)]) / stats.sd[static_cast<size_t>(ch)];
            }
    }
}

}  // namespace tcfnet
