#pragma once
// Objective intelligibility metrics (STOI, ESTOI), a spectral-distance proxy,
// band-limited resampling, and batch evaluation with a CSV report.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vts/common.hpp"
#include "vts/dataio.hpp"
#include "vts/dsp.hpp"

namespace vts::metrics {

// ---- resampling ------------------------------------------------------------------

// Windowed-sinc band-limited resampling. The cutoff shrinks for downsampling
// so aliases stay suppressed; same-rate input is returned unchanged.
inline dsp::Waveform resample(const dsp::Waveform& w, int target_sr) {
    if (target_sr <= 0) throw ConfigError("target sample rate must be positive");
    if (target_sr == w.sample_rate) return w;

    const double ratio = static_cast<double>(target_sr) / w.sample_rate;
    const double cut = std::min(1.0, ratio);
    const int half_width = 32;  // taps each side, in cutoff-scaled samples
    const double reach = half_width / cut;

    dsp::Waveform out;
    out.sample_rate = target_sr;
    const auto n_in = static_cast<long>(w.samples.size());
    out.samples.resize(static_cast<std::size_t>(std::llround(n_in * ratio)));

    auto kernel = [&](double u) {
        const double v = cut * u;
        const double sinc = (v == 0.0) ? 1.0 : std::sin(M_PI * v) / (M_PI * v);
        const double win = 0.5 * (1.0 + std::cos(M_PI * v / half_width));
        return cut * sinc * win;
    };
    for (std::size_t n = 0; n < out.samples.size(); ++n) {
        const double t = n / ratio;
        const long lo = std::max(0L, static_cast<long>(std::ceil(t - reach)));
        const long hi = std::min(n_in - 1, static_cast<long>(std::floor(t + reach)));
        double acc = 0.0;
        for (long m = lo; m <= hi; ++m) acc += w.samples[m] * kernel(t - m);
        out.samples[n] = acc;
    }
    return out;
}

// ---- STOI / ESTOI ----------------------------------------------------------------

struct OctaveBandConfig {
    int n_bands = 15;
    double first_center_hz = 150.0;  // centers at 150 * 2^(j/3)
    int sample_rate = 10000;
    int frame_length = 256;
    int hop_length = 128;
    int fft_size = 512;
    int segment_frames = 30;  // 384 ms
    double clip_db = -15.0;
    double silence_range_db = 40.0;

    double center(int j) const { return first_center_hz * std::pow(2.0, j / 3.0); }

    dsp::StftConfig stft() const {
        dsp::StftConfig cfg;
        cfg.frame_length = frame_length;
        cfg.hop_length = hop_length;
        cfg.fft_size = fft_size;
        cfg.window = dsp::Window::hann;
        return cfg;
    }
};

namespace detail {

// Binary one-third-octave grouping of FFT bins: H(j, k) = 1 when bin k's
// frequency lies in [center/2^(1/6), center*2^(1/6)).
inline Mat band_matrix(const OctaveBandConfig& cfg) {
    const int bins = cfg.fft_size / 2 + 1;
    Mat h = Mat::Zero(cfg.n_bands, bins);
    const double edge = std::pow(2.0, 1.0 / 6.0);
    for (int j = 0; j < cfg.n_bands; ++j) {
        const double lo = cfg.center(j) / edge;
        const double hi = cfg.center(j) * edge;
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
            if (lo <= f && f < hi) h(j, k) = 1.0;
        }
    }
    return h;
}

// Correlation that is exactly 1 on bitwise-identical inputs (including the
// all-zero degenerate case) and 0 when only one side is degenerate.
inline double safe_corr(const Vec& x, const Vec& y) {
    const double sx = x.squaredNorm();
    const double sy = y.squaredNorm();
    if (sx == sy) return sx == 0.0 ? 1.0 : x.dot(y) / sx;
    if (sx == 0.0 || sy == 0.0) return 0.0;
    return x.dot(y) / std::sqrt(sx * sy);
}

struct EnvelopePair {
    Mat clean;     // n_bands x kept frames
    Mat degraded;  // same shape
};

// Shared STOI/ESTOI front end: resample both signals to the analysis rate,
// drop frames more than silence_range_db below the clean maximum (the mask
// comes from the clean signal alone), then group |STFT|^2 into band
// envelopes sqrt(H |X|^2).
inline EnvelopePair band_envelopes(const dsp::Waveform& clean, const dsp::Waveform& degraded,
                                   const OctaveBandConfig& cfg) {
    const dsp::Waveform c = resample(clean, cfg.sample_rate);
    const dsp::Waveform d = resample(degraded, cfg.sample_rate);
    if (c.samples.size() != d.samples.size())
        throw DataError("clean and degraded signals differ in duration");
    if (c.samples.size() < static_cast<std::size_t>(cfg.frame_length))
        throw DataError("insufficient duration for intelligibility scoring");

    const dsp::ComplexSpectrogram sc = dsp::stft(c, cfg.stft());
    const dsp::ComplexSpectrogram sd = dsp::stft(d, cfg.stft());
    const Mat pc = sc.frames.cwiseAbs2();  // T x bins
    const Mat pd = sd.frames.cwiseAbs2();

    // Frame energy with the symmetric-bin double count (relative use only).
    Vec energy(pc.rows());
    for (Eigen::Index t = 0; t < pc.rows(); ++t) {
        double e = pc(t, 0) + pc(t, pc.cols() - 1);
        for (Eigen::Index k = 1; k + 1 < pc.cols(); ++k) e += 2.0 * pc(t, k);
        energy[t] = e;
    }
    const double thresh = energy.maxCoeff() * std::pow(10.0, -cfg.silence_range_db / 10.0);
    std::vector<Eigen::Index> kept;
    for (Eigen::Index t = 0; t < energy.size(); ++t)
        if (energy[t] > thresh) kept.push_back(t);

    const Mat h = band_matrix(cfg);
    EnvelopePair out;
    out.clean.resize(cfg.n_bands, static_cast<Eigen::Index>(kept.size()));
    out.degraded.resize(cfg.n_bands, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t i = 0; i < kept.size(); ++i) {
        out.clean.col(i) = (h * pc.row(kept[i]).transpose()).cwiseSqrt();
        out.degraded.col(i) = (h * pd.row(kept[i]).transpose()).cwiseSqrt();
    }
    return out;
}

inline void require_segments(const EnvelopePair& env, const OctaveBandConfig& cfg) {
    if (env.clean.cols() < cfg.segment_frames)
        throw DataError("insufficient duration for intelligibility scoring");
}

}  // namespace detail

// Mean correlation between short-time band envelopes of the clean signal and
// the normalized, clipped degraded envelopes, over sliding 384 ms segments.
inline double stoi(const dsp::Waveform& clean, const dsp::Waveform& degraded,
                   const OctaveBandConfig& cfg = {}) {
    const detail::EnvelopePair env = detail::band_envelopes(clean, degraded, cfg);
    detail::require_segments(env, cfg);

    const int seg = cfg.segment_frames;
    // clip_db is a signal-to-distortion lower bound: the normalized degraded
    // envelope may not exceed the clean one by more than -clip_db.
    const double clip = 1.0 + std::pow(10.0, -cfg.clip_db / 20.0);
    double sum = 0.0;
    long count = 0;
    for (Eigen::Index m = seg; m <= env.clean.cols(); ++m) {
        for (int j = 0; j < cfg.n_bands; ++j) {
            const Vec x = env.clean.row(j).segment(m - seg, seg).transpose();
            const Vec y = env.degraded.row(j).segment(m - seg, seg).transpose();
            const double sx = x.squaredNorm();
            const double sy = y.squaredNorm();
            const double alpha = (sx == sy) ? 1.0 : (sy == 0.0 ? 0.0 : std::sqrt(sx / sy));
            const Vec ybar = (alpha * y.array()).min(clip * x.array()).matrix();
            const Vec cx = (x.array() - x.mean()).matrix();
            const Vec cy = (ybar.array() - ybar.mean()).matrix();
            sum += detail::safe_corr(cx, cy);
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

// Segment-level spectral correlation: within each segment the band x frame
// envelope matrices are row-normalized, then corresponding columns are
// mean-centered and correlated; scores average over columns and segments.
inline double estoi(const dsp::Waveform& clean, const dsp::Waveform& degraded,
                    const OctaveBandConfig& cfg = {}) {
    const detail::EnvelopePair env = detail::band_envelopes(clean, degraded, cfg);
    detail::require_segments(env, cfg);

    const int seg = cfg.segment_frames;
    auto row_normalize = [&](Mat block) {
        for (Eigen::Index j = 0; j < block.rows(); ++j) {
            const Vec r = (block.row(j).array() - block.row(j).mean()).transpose().matrix();
            const double nrm = r.norm();
            if (nrm == 0.0)
                block.row(j).setZero();
            else
                block.row(j) = (r / nrm).transpose();
        }
        return block;
    };

    double sum = 0.0;
    long count = 0;
    for (Eigen::Index m = seg; m <= env.clean.cols(); ++m) {
        const Mat u = row_normalize(env.clean.middleCols(m - seg, seg));
        const Mat v = row_normalize(env.degraded.middleCols(m - seg, seg));
        for (int n = 0; n < seg; ++n) {
            const Vec cu = (u.col(n).array() - u.col(n).mean()).matrix();
            const Vec cv = (v.col(n).array() - v.col(n).mean()).matrix();
            sum += detail::safe_corr(cu, cv);
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

// ---- spectral distance -------------------------------------------------------------

// Mean absolute difference over all cells of two equally shaped feature
// matrices (log-mel frames here).
inline double mel_l1(const Mat& ref, const Mat& hyp) {
    if (ref.rows() != hyp.rows() || ref.cols() != hyp.cols())
        throw DataError("mel_l1 requires equally shaped inputs");
    if (ref.size() == 0) throw DataError("mel_l1 requires nonempty inputs");
    return (ref - hyp).cwiseAbs().mean();
}

// ---- batch evaluation ----------------------------------------------------------------

struct IntelligibilityScore {
    std::string file;
    double stoi = 0.0;
    double estoi = 0.0;
    double mel_l1 = 0.0;
    bool ok = false;
    std::string error;
};

struct EvalReport {
    std::vector<IntelligibilityScore> rows;
    double mean_stoi = 0.0;
    double mean_estoi = 0.0;
    double mean_mel_l1 = 0.0;
    int n_scored = 0;
};

struct EvalPair {
    std::string name;
    std::filesystem::path ref;
    std::filesystem::path hyp;
};

// Scores each (reference, generated) WAV pair; unreadable or mismatched pairs
// become error rows and the batch continues. Means cover scored rows only.
inline EvalReport evaluate_batch(const std::vector<EvalPair>& pairs,
                                 const dataio::FrontendConfig& mel_cfg = {}) {
    if (pairs.empty()) throw DataError("no file pairs to evaluate");
    EvalReport rep;
    for (const EvalPair& p : pairs) {
        IntelligibilityScore row;
        row.file = p.name;
        try {
            const dsp::Waveform ref = dataio::load_wav(p.ref);
            const dsp::Waveform hyp = dataio::load_wav(p.hyp);
            row.stoi = stoi(ref, hyp);
            row.estoi = estoi(ref, hyp);
            const dsp::Waveform ref_m = resample(ref, mel_cfg.sample_rate);
            const dsp::Waveform hyp_m = resample(hyp, mel_cfg.sample_rate);
            const Mat fb = mel_cfg.filterbank();
            row.mel_l1 =
                mel_l1(dsp::mel_spectrogram(ref_m, fb, mel_cfg.stft(), mel_cfg.log_floor).frames,
                       dsp::mel_spectrogram(hyp_m, fb, mel_cfg.stft(), mel_cfg.log_floor).frames);
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rep.rows.push_back(std::move(row));
    }
    for (const IntelligibilityScore& row : rep.rows) {
        if (!row.ok) continue;
        rep.mean_stoi += row.stoi;
        rep.mean_estoi += row.estoi;
        rep.mean_mel_l1 += row.mel_l1;
        ++rep.n_scored;
    }
    if (rep.n_scored > 0) {
        rep.mean_stoi /= rep.n_scored;
        rep.mean_estoi /= rep.n_scored;
        rep.mean_mel_l1 /= rep.n_scored;
    }
    return rep;
}

// header, one row per pair (error rows keep the batch auditable), MEAN last.
inline std::string to_csv(const EvalReport& rep) {
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    std::string out = "file,stoi,estoi,mel_l1\n";
    for (const IntelligibilityScore& row : rep.rows) {
        if (row.ok)
            out += row.file + "," + num(row.stoi) + "," + num(row.estoi) + "," +
                   num(row.mel_l1) + "\n";
        else
            out += row.file + ",error,error,error\n";
    }
    if (rep.n_scored > 0)
        out += "MEAN," + num(rep.mean_stoi) + "," + num(rep.mean_estoi) + "," +
               num(rep.mean_mel_l1) + "\n";
    else
        out += "MEAN,error,error,error\n";
    return out;
}

}  // namespace vts::metrics
