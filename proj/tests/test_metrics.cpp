#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vts/metrics.hpp"

using vts::Mat;
using vts::Rng;
using vts::Vec;
namespace dsp = vts::dsp;
namespace dataio = vts::dataio;
namespace metrics = vts::metrics;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;

namespace {

// Harmonic tone with a slow loudness sweep, so every analysis frame is live
// and every one-third-octave band sees some leakage energy.
dsp::Waveform speechy(double seconds, int sr, double f0 = 220.0) {
    dsp::Waveform w;
    w.sample_rate = sr;
    const auto n = static_cast<std::size_t>(seconds * sr);
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double env = 0.6 + 0.35 * std::sin(2.0 * M_PI * 1.3 * t);
        w.samples[i] = 0.3 * env *
                       (std::sin(2.0 * M_PI * f0 * t) + 0.5 * std::sin(2.0 * M_PI * 2 * f0 * t) +
                        0.25 * std::sin(2.0 * M_PI * 3 * f0 * t));
    }
    return w;
}

dsp::Waveform noise_like(const dsp::Waveform& ref, std::uint64_t seed) {
    dsp::Waveform w;
    w.sample_rate = ref.sample_rate;
    w.samples.resize(ref.samples.size());
    Rng rng(seed);
    for (double& s : w.samples) s = rng.normal();
    return w;
}

dsp::Waveform mix_at_snr(const dsp::Waveform& clean, const dsp::Waveform& noise, double snr_db) {
    double pc = 0.0;
    double pn = 0.0;
    for (double s : clean.samples) pc += s * s;
    for (double s : noise.samples) pn += s * s;
    const double gain = std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
    dsp::Waveform out = clean;
    for (std::size_t i = 0; i < out.samples.size(); ++i)
        out.samples[i] += gain * noise.samples[i];
    return out;
}

double mean_power(const std::vector<double>& s, std::size_t trim) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = trim; i + trim < s.size(); ++i, ++n) acc += s[i] * s[i];
    return acc / static_cast<double>(n);
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("vts_metrics_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("resample returns same-rate input unchanged") {
    const dsp::Waveform w = speechy(0.25, 8000);
    const dsp::Waveform r = metrics::resample(w, 8000);
    REQUIRE(r.sample_rate == 8000);
    REQUIRE(r.samples == w.samples);
}

TEST_CASE("resample scales the sample count by the rate ratio") {
    dsp::Waveform w;
    w.sample_rate = 8000;
    w.samples.assign(1920, 0.0);
    REQUIRE(metrics::resample(w, 10000).samples.size() == 2400);
    REQUIRE(metrics::resample(w, 4000).samples.size() == 960);
}

TEST_CASE("resample preserves a sinusoid's frequency and power") {
    dsp::Waveform w;
    w.sample_rate = 8000;
    w.samples.resize(8000);
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = std::sin(2.0 * M_PI * 440.0 * static_cast<double>(i) / 8000.0);

    for (int target : {10000, 4000}) {
        const dsp::Waveform r = metrics::resample(w, target);
        REQUIRE(r.sample_rate == target);

        const double p_in = mean_power(w.samples, 128);
        const double p_out = mean_power(r.samples, 128);
        REQUIRE(std::abs(p_out - p_in) / p_in < 0.01);

        dsp::StftConfig cfg;
        cfg.frame_length = 2048;
        cfg.hop_length = 2048;
        cfg.fft_size = 4096;
        cfg.window = dsp::Window::hann;
        const dsp::ComplexSpectrogram s = dsp::stft(r, cfg);
        Eigen::Index peak = 0;
        s.frames.row(0).cwiseAbs().maxCoeff(&peak);
        const double peak_hz = static_cast<double>(peak) * target / cfg.fft_size;
        REQUIRE(std::abs(peak_hz - 440.0) < 2.0 * target / static_cast<double>(cfg.fft_size));
    }
}

TEST_CASE("resample rejects a nonpositive target rate") {
    const dsp::Waveform w = speechy(0.1, 8000);
    REQUIRE_THROWS_AS(metrics::resample(w, 0), vts::ConfigError);
    REQUIRE_THROWS_AS(metrics::resample(w, -8000), vts::ConfigError);
}

TEST_CASE("band centers follow the one-third-octave ladder") {
    const metrics::OctaveBandConfig cfg;
    REQUIRE(cfg.center(0) == 150.0);
    for (int j = 0; j + 1 < cfg.n_bands; ++j)
        REQUIRE_THAT(cfg.center(j + 1) / cfg.center(j),
                     Catch::Matchers::WithinAbs(std::pow(2.0, 1.0 / 3.0), 1e-12));
    const double top_edge = cfg.center(cfg.n_bands - 1) * std::pow(2.0, 1.0 / 6.0);
    REQUIRE(top_edge < cfg.sample_rate / 2.0);

    const Mat h = metrics::detail::band_matrix(cfg);
    REQUIRE(h.rows() == 15);
    REQUIRE(h.cols() == 257);
    for (int j = 0; j < cfg.n_bands; ++j) REQUIRE(h.row(j).sum() >= 1.0);
    REQUIRE((h.colwise().sum().array() <= 1.0).all());
}

TEST_CASE("identical signals score exactly one") {
    const dsp::Waveform x = speechy(0.6, 8000);
    REQUIRE(metrics::stoi(x, x) == 1.0);
    REQUIRE(metrics::estoi(x, x) == 1.0);
}

TEST_CASE("scores are invariant to degraded-signal gain") {
    const dsp::Waveform x = speechy(0.8, 8000);
    dsp::Waveform y = mix_at_snr(x, noise_like(x, 11), 12.0);
    dsp::Waveform y_loud = y;
    for (double& s : y_loud.samples) s *= 3.7;

    REQUIRE(std::abs(metrics::stoi(x, y) - metrics::stoi(x, y_loud)) < 1e-9);
    REQUIRE(std::abs(metrics::estoi(x, y) - metrics::estoi(x, y_loud)) < 1e-9);
}

TEST_CASE("scores decrease as signal-to-noise ratio drops") {
    const dsp::Waveform x = speechy(1.0, 8000);
    const dsp::Waveform n = noise_like(x, 77);

    const double s20 = metrics::stoi(x, mix_at_snr(x, n, 20.0));
    const double s10 = metrics::stoi(x, mix_at_snr(x, n, 10.0));
    const double s0 = metrics::stoi(x, mix_at_snr(x, n, 0.0));
    REQUIRE(s20 > s10);
    REQUIRE(s10 > s0);

    const double e20 = metrics::estoi(x, mix_at_snr(x, n, 20.0));
    const double e10 = metrics::estoi(x, mix_at_snr(x, n, 10.0));
    const double e0 = metrics::estoi(x, mix_at_snr(x, n, 0.0));
    REQUIRE(e20 > e10);
    REQUIRE(e10 > e0);

    dsp::Waveform pure = n;
    for (double& s : pure.samples) s *= 0.1;
    REQUIRE(metrics::stoi(x, pure) < 0.2);
}

TEST_CASE("scoring rejects short or mismatched signals") {
    const dsp::Waveform x = speechy(0.2, 8000);
    REQUIRE_THROWS_WITH(metrics::stoi(x, x), ContainsSubstring("insufficient duration"));

    const dsp::Waveform tiny = speechy(0.01, 8000);
    REQUIRE_THROWS_WITH(metrics::estoi(tiny, tiny), ContainsSubstring("insufficient duration"));

    const dsp::Waveform a = speechy(0.8, 8000);
    dsp::Waveform b = a;
    b.samples.resize(b.samples.size() - 100);
    REQUIRE_THROWS_WITH(metrics::stoi(a, b), ContainsSubstring("duration"));
}

TEST_CASE("mel_l1 measures mean absolute spectral difference") {
    Rng rng(5);
    const Mat ref = rng.normal_mat(9, 4);
    REQUIRE(metrics::mel_l1(ref, ref) == 0.0);

    const Mat shifted = ref.array() + 1.0;
    REQUIRE_THAT(metrics::mel_l1(ref, shifted), Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE(metrics::mel_l1(ref, shifted) == metrics::mel_l1(shifted, ref));

    const Mat narrow = ref.leftCols(3);
    REQUIRE_THROWS_AS(metrics::mel_l1(ref, narrow), vts::DataError);
}

TEST_CASE("evaluate_batch scores file pairs and reports means") {
    const fs::path dir = fresh_dir("batch");
    const dsp::Waveform a = speechy(0.6, 8000, 220.0);
    const dsp::Waveform b = speechy(0.6, 8000, 277.0);
    dataio::save_wav(a, dir / "a_ref.wav");
    dataio::save_wav(a, dir / "a_hyp.wav");
    dataio::save_wav(b, dir / "b_ref.wav");
    dataio::save_wav(b, dir / "b_hyp.wav");

    const std::vector<metrics::EvalPair> pairs = {
        {"a", dir / "a_ref.wav", dir / "a_hyp.wav"},
        {"b", dir / "b_ref.wav", dir / "b_hyp.wav"},
    };
    const metrics::EvalReport rep = metrics::evaluate_batch(pairs);
    REQUIRE(rep.rows.size() == 2);
    REQUIRE(rep.n_scored == 2);
    for (const auto& row : rep.rows) {
        REQUIRE(row.ok);
        REQUIRE(row.stoi == 1.0);
        REQUIRE(row.estoi == 1.0);
        REQUIRE(row.mel_l1 == 0.0);
    }
    REQUIRE(rep.mean_stoi == 1.0);
    REQUIRE(rep.mean_estoi == 1.0);
    REQUIRE(rep.mean_mel_l1 == 0.0);

    const std::string csv = metrics::to_csv(rep);
    REQUIRE(csv.rfind("file,stoi,estoi,mel_l1\n", 0) == 0);
    REQUIRE_THAT(csv, ContainsSubstring("a,1.000000,1.000000,0.000000\n"));
    REQUIRE_THAT(csv, ContainsSubstring("\nMEAN,1.000000,1.000000,0.000000\n"));
}

TEST_CASE("evaluate_batch keeps going past unreadable files") {
    const fs::path dir = fresh_dir("batch_err");
    const dsp::Waveform a = speechy(0.6, 8000);
    dataio::save_wav(a, dir / "good_ref.wav");
    dataio::save_wav(a, dir / "good_hyp.wav");

    const std::vector<metrics::EvalPair> pairs = {
        {"missing", dir / "absent_ref.wav", dir / "good_hyp.wav"},
        {"good", dir / "good_ref.wav", dir / "good_hyp.wav"},
    };
    const metrics::EvalReport rep = metrics::evaluate_batch(pairs);
    REQUIRE(rep.rows.size() == 2);
    REQUIRE(rep.n_scored == 1);
    REQUIRE_FALSE(rep.rows[0].ok);
    REQUIRE_FALSE(rep.rows[0].error.empty());
    REQUIRE(rep.rows[1].ok);
    REQUIRE(rep.mean_stoi == 1.0);

    const std::string csv = metrics::to_csv(rep);
    REQUIRE_THAT(csv, ContainsSubstring("missing,error,error,error\n"));
    REQUIRE_THAT(csv, ContainsSubstring("good,1.000000,1.000000,0.000000\n"));
}

TEST_CASE("evaluate_batch is order-independent up to row permutation") {
    const fs::path dir = fresh_dir("batch_order");
    const dsp::Waveform a = speechy(0.6, 8000, 220.0);
    const dsp::Waveform b = speechy(0.6, 8000, 330.0);
    dataio::save_wav(a, dir / "a.wav");
    dataio::save_wav(b, dir / "b.wav");
    dataio::save_wav(a, dir / "a2.wav");
    dataio::save_wav(b, dir / "b2.wav");

    const metrics::EvalPair pa{"a", dir / "a.wav", dir / "a2.wav"};
    const metrics::EvalPair pb{"b", dir / "b.wav", dir / "b2.wav"};
    const metrics::EvalReport fwd = metrics::evaluate_batch({pa, pb});
    const metrics::EvalReport rev = metrics::evaluate_batch({pb, pa});

    REQUIRE(fwd.rows[0].file == rev.rows[1].file);
    REQUIRE(fwd.rows[0].stoi == rev.rows[1].stoi);
    REQUIRE(fwd.rows[1].estoi == rev.rows[0].estoi);
    REQUIRE(fwd.mean_stoi == rev.mean_stoi);
    REQUIRE(fwd.mean_mel_l1 == rev.mean_mel_l1);
}

TEST_CASE("evaluate_batch rejects an empty batch") {
    REQUIRE_THROWS_AS(metrics::evaluate_batch({}), vts::DataError);
}
