#pragma once

#include "vts/common.hpp"

#include <algorithm>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace vts::dsp {

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    double duration() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

enum class Window { hann, rect };

inline Window window_from_name(const std::string& name) {
    if (name == "hann") return Window::hann;
    if (name == "rect") return Window::rect;
    throw ConfigError("unknown window function: " + name);
}

inline std::string window_name(Window w) {
    return w == Window::hann ? "hann" : "rect";
}

struct StftConfig {
    int frame_length = 400;
    int hop_length = 160;
    int fft_size = 512;
    Window window = Window::hann;

    int bins() const { return fft_size / 2 + 1; }

    void validate() const {
        if (!(0 < hop_length && hop_length <= frame_length && frame_length <= fft_size))
            throw DspError("require 0 < hop_length <= frame_length <= fft_size");
        if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0)
            throw DspError("fft_size must be a power of two");
    }

    // Periodic window, length frame_length, values in [0, 1].
    Vec make_window() const {
        Vec w(frame_length);
        switch (window) {
            case Window::hann:
                for (int n = 0; n < frame_length; ++n)
                    w[n] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / frame_length));
                break;
            case Window::rect:
                w.setOnes();
                break;
        }
        return w;
    }
};

struct ComplexSpectrogram {
    CMat frames;  // T x (fft_size/2 + 1)
    StftConfig config;
    int sample_rate = 16000;

    int frame_count() const { return static_cast<int>(frames.rows()); }
};

struct MelSpectrogram {
    Mat frames;  // T x n_mels, log-compressed
    int n_mels = 80;
    StftConfig config;
    double log_floor = 1e-5;
    int sample_rate = 16000;
};

// In-place iterative radix-2 FFT. n must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw DspError("fft size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (auto& x : a) x *= inv_n;
    }
}

inline int stft_frame_count(std::size_t n_samples, const StftConfig& cfg) {
    return 1 + static_cast<int>((n_samples - static_cast<std::size_t>(cfg.frame_length)) /
                                static_cast<std::size_t>(cfg.hop_length));
}

// Frame t is the DFT of window .* samples[t*hop : t*hop + frame_length],
// zero-padded to fft_size; non-negative frequency bins only.
inline ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg) {
    cfg.validate();
    if (w.samples.size() < static_cast<std::size_t>(cfg.frame_length))
        throw DspError("signal too short");
    const int frames = stft_frame_count(w.samples.size(), cfg);
    const Vec win = cfg.make_window();

    ComplexSpectrogram out;
    out.config = cfg;
    out.sample_rate = w.sample_rate;
    out.frames.resize(frames, cfg.bins());

    std::vector<std::complex<double>> buf(cfg.fft_size);
    for (int t = 0; t < frames; ++t) {
        const int off = t * cfg.hop_length;
        for (int n = 0; n < cfg.frame_length; ++n)
            buf[n] = win[n] * w.samples[off + n];
        std::fill(buf.begin() + cfg.frame_length, buf.end(), std::complex<double>(0.0));
        fft_inplace(buf, false);
        for (int k = 0; k < cfg.bins(); ++k) out.frames(t, k) = buf[k];
    }
    return out;
}

// Weighted overlap-add with window-squared normalization: the least-squares
// signal for the given (possibly modified) spectrogram. Samples outside the
// fully-overlapped interior whose normalization weight is zero carry no
// windowed energy and are emitted as 0; a zero weight strictly inside the
// interior means the analysis cannot be inverted.
inline Waveform istft(const ComplexSpectrogram& s) {
    const StftConfig& cfg = s.config;
    cfg.validate();
    const int frames = s.frame_count();
    if (frames == 0) throw DspError("empty spectrogram");
    if (s.frames.cols() != cfg.bins())
        throw DspError("spectrogram bin count does not match config");
    const Vec win = cfg.make_window();
    const int out_len = (frames - 1) * cfg.hop_length + cfg.frame_length;

    std::vector<double> num(out_len, 0.0);
    std::vector<double> den(out_len, 0.0);
    std::vector<std::complex<double>> buf(cfg.fft_size);
    for (int t = 0; t < frames; ++t) {
        for (int k = 0; k < cfg.bins(); ++k) buf[k] = s.frames(t, k);
        for (int k = cfg.bins(); k < cfg.fft_size; ++k)
            buf[k] = std::conj(s.frames(t, cfg.fft_size - k));
        fft_inplace(buf, true);
        const int off = t * cfg.hop_length;
        for (int n = 0; n < cfg.frame_length; ++n) {
            num[off + n] += win[n] * buf[n].real();
            den[off + n] += win[n] * win[n];
        }
    }

    const int interior_lo = cfg.frame_length - cfg.hop_length;
    const int interior_hi = out_len - (cfg.frame_length - cfg.hop_length);
    Waveform w;
    w.sample_rate = s.sample_rate;
    w.samples.resize(out_len);
    for (int n = 0; n < out_len; ++n) {
        if (den[n] > 0.0) {
            w.samples[n] = num[n] / den[n];
        } else {
            if (n >= interior_lo && n < interior_hi)
                throw DspError("window/hop combination not invertible");
            w.samples[n] = 0.0;
        }
    }
    return w;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters, peak value 1, peaks equally spaced on the mel scale.
// Returns n_mels x (fft_size/2 + 1).
inline Mat mel_filterbank(int n_mels, const StftConfig& cfg, int sample_rate,
                          double f_min, double f_max) {
    cfg.validate();
    if (n_mels < 1) throw DspError("n_mels must be >= 1");
    if (!(0.0 <= f_min && f_min < f_max))
        throw DspError("require 0 <= f_min < f_max");
    if (f_max > 0.5 * sample_rate + 1e-9)
        throw DspError("f_max exceeds Nyquist frequency");

    const int bins = cfg.bins();
    const double mel_lo = hz_to_mel(f_min);
    const double mel_hi = hz_to_mel(f_max);
    std::vector<double> edges(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

    Mat fb = Mat::Zero(n_mels, bins);
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
        for (int b = 0; b < bins; ++b) {
            const double f = static_cast<double>(b) * sample_rate / cfg.fft_size;
            double v = 0.0;
            if (f > lo && f <= center)
                v = (f - lo) / (center - lo);
            else if (f > center && f < hi)
                v = (hi - f) / (hi - center);
            fb(m, b) = std::max(0.0, v);
        }
    }
    return fb;
}

// frames = log(max(fb . |stft(w)|, log_floor)), elementwise.
inline MelSpectrogram mel_spectrogram(const Waveform& w, const Mat& fb,
                                      const StftConfig& cfg, double log_floor) {
    if (log_floor <= 0.0) throw DspError("log_floor must be positive");
    const ComplexSpectrogram s = stft(w, cfg);
    if (fb.cols() != s.frames.cols())
        throw DspError("filterbank built for a different fft_size");

    MelSpectrogram m;
    m.config = cfg;
    m.n_mels = static_cast<int>(fb.rows());
    m.log_floor = log_floor;
    m.sample_rate = w.sample_rate;
    m.frames = (s.frames.cwiseAbs() * fb.transpose())
                   .cwiseMax(log_floor)
                   .array()
                   .log()
                   .matrix();
    return m;
}

// exp, then the Moore-Penrose pseudo-inverse of fb, then clamp negatives.
// Returns T x (fft_size/2 + 1) nonnegative magnitudes.
inline Mat invert_mel(const MelSpectrogram& m, const Mat& fb) {
    if (fb.rows() != m.n_mels || m.frames.cols() != m.n_mels)
        throw DspError("mel spectrogram and filterbank shapes are incompatible");
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(fb);
    const Mat pinv = cod.pseudoInverse();  // bins x n_mels
    Mat mag = m.frames.array().exp().matrix() * pinv.transpose();
    return mag.cwiseMax(0.0);
}

struct GriffinLimResult {
    Waveform waveform;
    // consistency[i] = ||«|stft(x_i)|» - mag||_F / ||mag||_F for iterate i,
    // starting from the seeded random-phase estimate (i = 0).
    std::vector<double> consistency;
};

// Alternating projection from a seeded random-phase start:
//   x <- istft(mag .* phase(stft(x)))
// Plain Griffin-Lim (no momentum), so the consistency error is
// non-increasing per iteration. The returned waveform is peak-normalized.
// Accelerated alternating projection with a monotonicity safeguard: each
// iteration first tries a momentum-extrapolated phase; if that would raise
// the consistency error the plain projection step (never increasing) is
// taken instead, so the recorded error sequence is non-increasing by
// construction.
inline GriffinLimResult griffin_lim(const Mat& mag, const StftConfig& cfg,
                                    int sample_rate, int iters, std::uint64_t seed,
                                    double momentum = 0.99) {
    cfg.validate();
    if (iters < 0) throw DspError("iteration count must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0)
        throw DspError("momentum must lie in [0, 1)");
    if (mag.cols() != cfg.bins())
        throw DspError("magnitude spectrogram bin count does not match config");
    if ((mag.array() < 0.0).any())
        throw DspError("magnitude spectrogram must be nonnegative");

    const double mag_norm = mag.norm();
    const double gamma = momentum / (1.0 + momentum);
    Rng rng(seed);

    auto with_phase_of = [&](const CMat& src) {
        CMat out(mag.rows(), mag.cols());
        for (Eigen::Index t = 0; t < mag.rows(); ++t)
            for (Eigen::Index k = 0; k < mag.cols(); ++k) {
                const std::complex<double> v = src(t, k);
                const double a = std::abs(v);
                out(t, k) = a > 0.0 ? mag(t, k) * (v / a)
                                    : std::complex<double>(mag(t, k), 0.0);
            }
        return out;
    };

    ComplexSpectrogram spec;
    spec.config = cfg;
    spec.sample_rate = sample_rate;
    spec.frames.resize(mag.rows(), mag.cols());
    for (Eigen::Index t = 0; t < mag.rows(); ++t)
        for (Eigen::Index k = 0; k < mag.cols(); ++k) {
            const double theta = 2.0 * M_PI * rng.uniform();
            spec.frames(t, k) = mag(t, k) * std::complex<double>(std::cos(theta), std::sin(theta));
        }

    // rebuild(P) = stft(istft(mag with phase P)), the full projection cycle
    auto rebuild = [&](const CMat& phased) {
        spec.frames = phased;
        return stft(istft(spec), cfg).frames;
    };
    auto rel_err = [&](const CMat& s) {
        return mag_norm > 0.0 ? (s.cwiseAbs() - mag).norm() / mag_norm : 0.0;
    };

    GriffinLimResult result;
    result.consistency.reserve(iters + 1);

    CMat s = rebuild(spec.frames);
    double err = rel_err(s);
    result.consistency.push_back(err);
    CMat s_prev = s;

    for (int i = 0; i < iters; ++i) {
        const CMat extrapolated = s - gamma * s_prev;
        CMat cand = rebuild(with_phase_of(extrapolated));
        double cand_err = rel_err(cand);
        if (cand_err > err) {
            cand = rebuild(with_phase_of(s));
            cand_err = rel_err(cand);
        }
        s_prev = std::move(s);
        s = std::move(cand);
        err = cand_err;
        result.consistency.push_back(err);
    }

    spec.frames = with_phase_of(s);
    Waveform x = istft(spec);
    double peak = 0.0;
    for (double v : x.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.0)
        for (double& v : x.samples) v /= peak;
    result.waveform = std::move(x);
    return result;
}

// ---- flat binary feature container ------------------------------------
// magic "MELV1", u32 rows, u32 cols, row-major float64, little-endian.

inline void save_features(const Mat& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out.write("MELV1", 5);
    const std::uint32_t rows = static_cast<std::uint32_t>(m.rows());
    const std::uint32_t cols = static_cast<std::uint32_t>(m.cols());
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c) {
            const double v = m(r, c);
            out.write(reinterpret_cast<const char*>(&v), 8);
        }
    if (!out) throw DataError("write failed: " + path.string());
}

inline Mat load_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    char magic[5];
    if (!in.read(magic, 5) || std::memcmp(magic, "MELV1", 5) != 0)
        throw DataError("not a MELV1 feature file: " + path.string());
    std::uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    if (!in) throw DataError("truncated MELV1 header: " + path.string());
    Mat m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c) {
            double v;
            if (!in.read(reinterpret_cast<char*>(&v), 8))
                throw DataError("truncated MELV1 payload: " + path.string());
            m(r, c) = v;
        }
    return m;
}

}  // namespace vts::dsp
