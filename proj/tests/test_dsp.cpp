#include <catch2/catch_amalgamated.hpp>

#include "vts/dsp.hpp"

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <vector>

using namespace vts;
using namespace vts::dsp;
using Catch::Approx;

namespace {

// Direct O(n^2) DFT, the oracle for the radix-2 transform.
std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc(0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const double ang = -2.0 * M_PI * static_cast<double>(k * j % n) / static_cast<double>(n);
            acc += x[j] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

Waveform white_noise(int n, int sr, std::uint64_t seed) {
    Rng rng(seed);
    Waveform w;
    w.sample_rate = sr;
    w.samples.resize(n);
    for (int i = 0; i < n; ++i) w.samples[i] = rng.uniform(-0.9, 0.9);
    return w;
}

Waveform harmonic_tone(int n, int sr, const std::vector<double>& freqs,
                       const std::vector<double>& amps) {
    Waveform w;
    w.sample_rate = sr;
    w.samples.resize(n);
    for (int i = 0; i < n; ++i) {
        double v = 0.0;
        for (std::size_t h = 0; h < freqs.size(); ++h)
            v += amps[h] * std::sin(2.0 * M_PI * freqs[h] * i / sr);
        w.samples[i] = v;
    }
    double peak = 1e-12;
    for (double v : w.samples) peak = std::max(peak, std::abs(v));
    for (double& v : w.samples) v *= 0.9 / peak;
    return w;
}

}  // namespace

TEST_CASE("radix-2 fft matches the direct dft") {
    Rng rng(7);
    std::vector<std::complex<double>> x(64);
    for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto expect = naive_dft(x);
    auto got = x;
    fft_inplace(got, false);
    for (std::size_t k = 0; k < x.size(); ++k)
        REQUIRE(std::abs(got[k] - expect[k]) < 1e-10);

    fft_inplace(got, true);
    for (std::size_t k = 0; k < x.size(); ++k)
        REQUIRE(std::abs(got[k] - x[k]) < 1e-12);
}

TEST_CASE("stft of silence is all-zero") {
    Waveform w;
    w.sample_rate = 8000;
    w.samples.assign(1024, 0.0);
    StftConfig cfg{256, 128, 256, Window::hann};
    auto s = stft(w, cfg);
    REQUIRE(s.frame_count() == 1 + (1024 - 256) / 128);
    REQUIRE(s.frames.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stft concentrates a bin-centered cosine in its bin") {
    const int n = 256, k = 32, sr = 8000;
    StftConfig cfg{n, n, n, Window::rect};
    Waveform w;
    w.sample_rate = sr;
    w.samples.resize(2 * n);
    for (int i = 0; i < 2 * n; ++i)
        w.samples[i] = std::cos(2.0 * M_PI * k * i / n);
    auto s = stft(w, cfg);
    const double peak = std::abs(s.frames(0, k));
    REQUIRE(peak == Approx(n / 2.0).epsilon(1e-12));
    for (int b = 0; b < cfg.bins(); ++b) {
        if (b == k) continue;
        REQUIRE(std::abs(s.frames(0, b)) <= 1e-9 * peak);
    }
}

TEST_CASE("stft satisfies Parseval's identity per frame set") {
    auto w = white_noise(1024, 8000, 11);
    StftConfig cfg{256, 128, 256, Window::hann};
    const Vec win = cfg.make_window();
    auto s = stft(w, cfg);

    double time_energy = 0.0;
    for (int t = 0; t < s.frame_count(); ++t)
        for (int i = 0; i < cfg.frame_length; ++i) {
            const double v = win[i] * w.samples[t * cfg.hop_length + i];
            time_energy += v * v;
        }

    double spec_energy = 0.0;
    for (int t = 0; t < s.frame_count(); ++t) {
        spec_energy += std::norm(s.frames(t, 0));
        spec_energy += std::norm(s.frames(t, cfg.bins() - 1));
        for (int b = 1; b < cfg.bins() - 1; ++b)
            spec_energy += 2.0 * std::norm(s.frames(t, b));
    }
    REQUIRE(spec_energy == Approx(cfg.fft_size * time_energy).epsilon(1e-8));
}

TEST_CASE("stft rejects signals shorter than one frame") {
    Waveform w;
    w.sample_rate = 8000;
    w.samples.assign(100, 0.1);
    StftConfig cfg{256, 128, 256, Window::hann};
    REQUIRE_THROWS_WITH(stft(w, cfg), Catch::Matchers::ContainsSubstring("signal too short"));
}

TEST_CASE("istft inverts stft on the fully-overlapped interior") {
    auto w = white_noise(4096, 8000, 3);
    StftConfig cfg{256, 64, 256, Window::hann};  // 75% overlap
    auto back = istft(stft(w, cfg));
    REQUIRE(back.sample_rate == w.sample_rate);
    const int lo = cfg.frame_length - cfg.hop_length;
    const int hi = static_cast<int>(back.samples.size()) - lo;
    double max_err = 0.0;
    for (int n = lo; n < hi; ++n)
        max_err = std::max(max_err, std::abs(back.samples[n] - w.samples[n]));
    REQUIRE(max_err < 1e-10);
}

TEST_CASE("istft of an all-zero spectrogram is silence") {
    ComplexSpectrogram s;
    s.config = StftConfig{256, 64, 256, Window::hann};
    s.sample_rate = 8000;
    s.frames = CMat::Zero(10, s.config.bins());
    auto w = istft(s);
    for (double v : w.samples) REQUIRE(v == 0.0);
}

TEST_CASE("istft recovers a single windowed frame after normalization") {
    StftConfig cfg{200, 80, 256, Window::hann};
    Waveform ramp;
    ramp.sample_rate = 8000;
    ramp.samples.resize(200);
    for (int i = 0; i < 200; ++i) ramp.samples[i] = i / 200.0;

    auto back = istft(stft(ramp, cfg));
    REQUIRE(back.samples.size() == 200);

    // Hand-computed overlap-add for one frame: w*(w*x)/w^2 = x where w > 0.
    const Vec win = cfg.make_window();
    for (int n = 0; n < 200; ++n) {
        const double expect = win[n] > 0.0 ? ramp.samples[n] : 0.0;
        REQUIRE(back.samples[n] == Approx(expect).margin(1e-10));
    }
}

TEST_CASE("istft reports non-invertible window/hop combinations") {
    auto w = white_noise(1024, 8000, 5);
    StftConfig cfg{256, 256, 256, Window::hann};  // hop == frame, Hann zeros uncovered
    auto s = stft(w, cfg);
    REQUIRE_THROWS_WITH(istft(s), Catch::Matchers::ContainsSubstring("not invertible"));
}

TEST_CASE("mel scale formula") {
    REQUIRE(hz_to_mel(1000.0) == Approx(999.9855371396244).epsilon(1e-12));
    REQUIRE(hz_to_mel(0.0) == 0.0);
    // monotone
    double prev = -1.0;
    for (double f = 0.0; f <= 8000.0; f += 250.0) {
        REQUIRE(hz_to_mel(f) > prev);
        prev = hz_to_mel(f);
    }
}

TEST_CASE("mel filterbank structure") {
    StftConfig cfg{200, 80, 256, Window::hann};
    const int sr = 8000, n_mels = 32;
    Mat fb = mel_filterbank(n_mels, cfg, sr, 55.0, 4000.0);
    REQUIRE(fb.rows() == n_mels);
    REQUIRE(fb.cols() == cfg.bins());
    REQUIRE((fb.array() >= 0.0).all());

    // every row has exactly one maximal contiguous support interval,
    // and peak center frequencies strictly increase
    int prev_peak = -1;
    for (int m = 0; m < n_mels; ++m) {
        int first = -1, last = -1;
        for (int b = 0; b < cfg.bins(); ++b) {
            if (fb(m, b) > 0.0) {
                if (first < 0) first = b;
                last = b;
            }
        }
        REQUIRE(first >= 0);
        for (int b = first; b <= last; ++b) REQUIRE(fb(m, b) > 0.0);

        int peak;
        fb.row(m).maxCoeff(&peak);
        REQUIRE(peak > prev_peak);
        prev_peak = peak;
    }

    // supports of filters i and i+2 are disjoint
    for (int m = 0; m + 2 < n_mels; ++m)
        for (int b = 0; b < cfg.bins(); ++b)
            REQUIRE_FALSE((fb(m, b) > 0.0 && fb(m + 2, b) > 0.0));
}

TEST_CASE("mel filterbank rejects f_max beyond Nyquist") {
    StftConfig cfg{200, 80, 256, Window::hann};
    REQUIRE_THROWS_AS(mel_filterbank(32, cfg, 8000, 55.0, 4100.0), DspError);
}

TEST_CASE("mel spectrogram of silence sits at the log floor") {
    Waveform w;
    w.sample_rate = 8000;
    w.samples.assign(2000, 0.0);
    StftConfig cfg{200, 80, 256, Window::hann};
    Mat fb = mel_filterbank(32, cfg, 8000, 55.0, 4000.0);
    auto m = mel_spectrogram(w, fb, cfg, 1e-5);
    REQUIRE((m.frames.array() == std::log(1e-5)).all());
}

TEST_CASE("mel spectrogram peaks in the band containing a sinusoid") {
    StftConfig cfg{200, 80, 256, Window::hann};
    const int sr = 8000, n_mels = 32, band = 10;
    Mat fb = mel_filterbank(n_mels, cfg, sr, 55.0, 4000.0);

    // reconstruct the band's center frequency from the construction
    const double mel_lo = hz_to_mel(55.0), mel_hi = hz_to_mel(4000.0);
    const double center = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (band + 1) / (n_mels + 1));

    auto w = harmonic_tone(4000, sr, {center}, {1.0});
    auto m = mel_spectrogram(w, fb, cfg, 1e-5);
    for (int t = 0; t < m.frames.rows(); ++t) {
        int argmax;
        m.frames.row(t).maxCoeff(&argmax);
        REQUIRE(argmax == band);
    }
}

TEST_CASE("doubling input amplitude shifts unfloored log-mels by log 2") {
    StftConfig cfg{200, 80, 256, Window::hann};
    Mat fb = mel_filterbank(32, cfg, 8000, 55.0, 4000.0);
    auto w = harmonic_tone(4000, 8000, {300.0, 600.0}, {0.45, 0.2});
    Waveform w2 = w;
    for (double& v : w2.samples) v *= 2.0;

    auto m1 = mel_spectrogram(w, fb, cfg, 1e-5);
    auto m2 = mel_spectrogram(w2, fb, cfg, 1e-5);
    const double floor_log = std::log(1e-5);
    int checked = 0;
    for (int t = 0; t < m1.frames.rows(); ++t)
        for (int b = 0; b < m1.frames.cols(); ++b) {
            if (m1.frames(t, b) <= floor_log + 1e-9) continue;
            REQUIRE(m2.frames(t, b) - m1.frames(t, b) ==
                    Approx(0.6931471805599453).margin(1e-12));
            ++checked;
        }
    REQUIRE(checked > 100);
}

TEST_CASE("invert_mel round trip re-projects within 5%") {
    StftConfig cfg{200, 80, 256, Window::hann};
    const int sr = 8000;
    Mat fb = mel_filterbank(32, cfg, sr, 55.0, 4000.0);
    auto w = harmonic_tone(8000, sr, {250.0, 500.0, 750.0}, {1.0, 0.5, 0.25});

    auto m = mel_spectrogram(w, fb, cfg, 1e-5);
    Mat mag_hat = invert_mel(m, fb);
    REQUIRE((mag_hat.array() >= 0.0).all());

    Mat ref_energy = stft(w, cfg).frames.cwiseAbs() * fb.transpose();
    Mat hat_energy = mag_hat * fb.transpose();
    REQUIRE((hat_energy - ref_energy).norm() / ref_energy.norm() < 0.05);
}

TEST_CASE("invert_mel of an all-floor input is tiny and nonnegative") {
    StftConfig cfg{200, 80, 256, Window::hann};
    Mat fb = mel_filterbank(32, cfg, 8000, 55.0, 4000.0);
    MelSpectrogram m;
    m.config = cfg;
    m.n_mels = 32;
    m.log_floor = 1e-5;
    m.sample_rate = 8000;
    m.frames = Mat::Constant(6, 32, std::log(1e-5));

    Mat mag = invert_mel(m, fb);
    REQUIRE((mag.array() >= 0.0).all());
    Mat reproj = mag * fb.transpose();
    REQUIRE((reproj.array() - 1e-5).abs().maxCoeff() < 1e-8);
}

TEST_CASE("invert_mel with the identity filterbank is an exact exp round trip") {
    StftConfig cfg{64, 32, 64, Window::hann};
    const int bins = cfg.bins();
    Mat fb = Mat::Identity(bins, bins);
    auto w = harmonic_tone(1024, 8000, {500.0, 1500.0}, {0.7, 0.3});

    auto m = mel_spectrogram(w, fb, cfg, 1e-5);
    Mat mag_hat = invert_mel(m, fb);
    Mat expect = stft(w, cfg).frames.cwiseAbs().cwiseMax(1e-5);
    REQUIRE((mag_hat - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("griffin_lim reaches low consistency error on a harmonic signal") {
    StftConfig cfg{256, 64, 256, Window::hann};
    const int sr = 8000;
    auto w = harmonic_tone(4800, sr, {200.0, 400.0, 600.0}, {1.0, 0.6, 0.3});
    Mat mag = stft(w, cfg).frames.cwiseAbs();

    auto res = griffin_lim(mag, cfg, sr, 60, 42);
    REQUIRE(res.consistency.size() == 61);
    REQUIRE(res.consistency.back() < 0.05);
    for (std::size_t i = 1; i < res.consistency.size(); ++i)
        REQUIRE(res.consistency[i] <= res.consistency[i - 1] + 1e-9);

    double peak = 0.0;
    for (double v : res.waveform.samples) peak = std::max(peak, std::abs(v));
    REQUIRE(peak == Approx(1.0));
}

TEST_CASE("griffin_lim of zero magnitude is silence") {
    StftConfig cfg{256, 64, 256, Window::hann};
    Mat mag = Mat::Zero(12, cfg.bins());
    auto res = griffin_lim(mag, cfg, 8000, 10, 1);
    for (double v : res.waveform.samples) REQUIRE(v == 0.0);
    for (double e : res.consistency) REQUIRE(e == 0.0);
}

TEST_CASE("griffin_lim is deterministic for a fixed seed") {
    StftConfig cfg{256, 64, 256, Window::hann};
    auto w = harmonic_tone(2400, 8000, {300.0}, {1.0});
    Mat mag = stft(w, cfg).frames.cwiseAbs();
    auto a = griffin_lim(mag, cfg, 8000, 8, 9);
    auto b = griffin_lim(mag, cfg, 8000, 8, 9);
    REQUIRE(a.waveform.samples == b.waveform.samples);
    auto c = griffin_lim(mag, cfg, 8000, 8, 10);
    REQUIRE(a.waveform.samples != c.waveform.samples);
}

TEST_CASE("MELV1 container round-trips bit-exactly") {
    Rng rng(77);
    Mat m(13, 9);
    for (int r = 0; r < 13; ++r)
        for (int c = 0; c < 9; ++c) m(r, c) = rng.normal();

    auto path = std::filesystem::temp_directory_path() / "vts_test_features.mel";
    save_features(m, path);
    Mat back = load_features(path);
    REQUIRE(back.rows() == 13);
    REQUIRE(back.cols() == 9);
    REQUIRE((back.array() == m.array()).all());
    std::filesystem::remove(path);
}

TEST_CASE("MELV1 loader rejects malformed files") {
    auto path = std::filesystem::temp_directory_path() / "vts_test_bad.mel";
    {
        std::ofstream out(path, std::ios::binary);
        out.write("MELV1\x02\x00\x00\x00", 9);  // truncated
    }
    REQUIRE_THROWS_AS(load_features(path), DataError);
    {
        std::ofstream out(path, std::ios::binary);
        out.write("NOTME", 5);
    }
    REQUIRE_THROWS_AS(load_features(path), DataError);
    std::filesystem::remove(path);
}
