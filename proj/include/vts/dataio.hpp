#pragma once
// Dataset plumbing: context-clip construction, audio/video stream alignment,
// WAV and PNG file I/O, and a synthetic one-to-many paired task.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vts/common.hpp"
#include "vts/dsp.hpp"
#include "vts/model.hpp"
#include "vts/png.hpp"

namespace vts::dataio {

// Audio frontend shared by synthesis, training, and generation. Each video
// frame owns group() consecutive mel frames, concatenated into one model
// feature row of width audio_dim().
struct FrontendConfig {
    int sample_rate = 8000;
    int frame_length = 200;  // 25 ms
    int hop_length = 80;     // 10 ms
    int fft_size = 256;
    int n_mels = 32;
    double f_min = 55.0;
    double f_max = 4000.0;
    double log_floor = 1e-5;
    int video_fps = 25;

    dsp::StftConfig stft() const {
        dsp::StftConfig cfg;
        cfg.frame_length = frame_length;
        cfg.hop_length = hop_length;
        cfg.fft_size = fft_size;
        cfg.window = dsp::Window::hann;
        return cfg;
    }

    int samples_per_video_frame() const { return sample_rate / video_fps; }
    int group() const { return samples_per_video_frame() / hop_length; }
    int audio_dim() const { return n_mels * group(); }

    void validate() const {
        stft().validate();
        if (sample_rate <= 0 || video_fps <= 0) throw ConfigError("sample_rate and video_fps must be positive");
        if (n_mels < 1) throw ConfigError("n_mels must be >= 1");
        if (!(0.0 <= f_min && f_min < f_max)) throw ConfigError("need 0 <= f_min < f_max");
        if (log_floor <= 0.0) throw ConfigError("log_floor must be positive");
        if (sample_rate % video_fps != 0)
            throw ConfigError("sample_rate must be divisible by video_fps");
        if (samples_per_video_frame() % hop_length != 0)
            throw ConfigError("video frame interval must be a whole number of hops");
    }

    std::map<std::string, std::string> to_map() const {
        auto num = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return std::string(buf);
        };
        return {{"sample_rate", std::to_string(sample_rate)},
                {"frame_length", std::to_string(frame_length)},
                {"hop_length", std::to_string(hop_length)},
                {"fft_size", std::to_string(fft_size)},
                {"n_mels", std::to_string(n_mels)},
                {"f_min", num(f_min)},
                {"f_max", num(f_max)},
                {"log_floor", num(log_floor)},
                {"video_fps", std::to_string(video_fps)}};
    }

    static FrontendConfig from_map(const std::map<std::string, std::string>& m) {
        auto get = [&](const char* key) -> const std::string& {
            auto it = m.find(key);
            if (it == m.end()) throw DataError(std::string("missing frontend key: ") + key);
            return it->second;
        };
        FrontendConfig fc;
        fc.sample_rate = std::stoi(get("sample_rate"));
        fc.frame_length = std::stoi(get("frame_length"));
        fc.hop_length = std::stoi(get("hop_length"));
        fc.fft_size = std::stoi(get("fft_size"));
        fc.n_mels = std::stoi(get("n_mels"));
        fc.f_min = std::stod(get("f_min"));
        fc.f_max = std::stod(get("f_max"));
        fc.log_floor = std::stod(get("log_floor"));
        fc.video_fps = std::stoi(get("video_fps"));
        fc.validate();
        return fc;
    }

    Mat filterbank() const { return dsp::mel_filterbank(n_mels, stft(), sample_rate, f_min, f_max); }
};

// One training example: frames.size() == audio.rows() by construction.
struct PairedSequence {
    model::FrameStream frames;
    Mat audio;  // N x audio_dim
    std::string id;
};

inline void validate_paired(const PairedSequence& ps) {
    if (ps.audio.rows() != static_cast<Eigen::Index>(ps.frames.size()))
        throw DataError("paired sequence streams have unequal length: " + ps.id);
}

// ---- context clips ---------------------------------------------------------

// Clip i holds the K frames centered at i, with edge replication at the ends.
inline model::FrameStream make_context_clips(const std::vector<Mat>& raw, int K) {
    if (raw.empty()) throw DataError("no frames to clip");
    if (K < 1 || K % 2 == 0) throw ConfigError("context size K must be odd");
    const int n = static_cast<int>(raw.size());
    model::FrameStream out(n);
    for (int i = 0; i < n; ++i) {
        out[i].center_index = i;
        out[i].frames.reserve(K);
        for (int k = 0; k < K; ++k) {
            const int idx = std::clamp(i + k - K / 2, 0, n - 1);
            out[i].frames.push_back(raw[idx]);
        }
    }
    return out;
}

// ---- stream alignment --------------------------------------------------------

// Rows of a grouped feature matrix: row i = concat of G consecutive mel rows.
inline Mat group_mel(const Mat& mel, int group) {
    if (group < 1 || mel.rows() % group != 0)
        throw DataError("mel frame count is not a multiple of the group size");
    const Eigen::Index n = mel.rows() / group;
    const Eigen::Index width = mel.cols();
    Mat out(n, width * group);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int g = 0; g < group; ++g) out.row(i).segment(g * width, width) = mel.row(i * group + g);
    return out;
}

// Inverse of group_mel: N x (G*n_mels) back to (N*G) x n_mels.
inline Mat ungroup_mel(const Mat& grouped, int n_mels) {
    if (n_mels < 1 || grouped.cols() % n_mels != 0)
        throw DataError("grouped feature width is not a multiple of n_mels");
    const int group = static_cast<int>(grouped.cols()) / n_mels;
    Mat out(grouped.rows() * group, n_mels);
    for (Eigen::Index i = 0; i < grouped.rows(); ++i)
        for (int g = 0; g < group; ++g) out.row(i * group + g) = grouped.row(i).segment(g * n_mels, n_mels);
    return out;
}

// Pairs a waveform with a frame sequence: duration must match within one hop;
// the tail is zero-padded so every video frame owns exactly group() mel rows.
inline PairedSequence align_streams(const dsp::Waveform& wav, const std::vector<Mat>& raw_frames,
                                    const FrontendConfig& fc, int K, std::string id = "") {
    fc.validate();
    if (raw_frames.empty()) throw DataError("zero-length video");
    if (wav.sample_rate != fc.sample_rate)
        throw DataError("waveform sample rate " + std::to_string(wav.sample_rate) +
                        " does not match frontend " + std::to_string(fc.sample_rate));

    const int n = static_cast<int>(raw_frames.size());
    const long spf = fc.samples_per_video_frame();
    const long want = static_cast<long>(n) * spf;
    const long got = static_cast<long>(wav.samples.size());
    if (std::labs(got - want) > fc.hop_length) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "audio/video duration mismatch: audio %.4f s, video %.4f s",
                      static_cast<double>(got) / fc.sample_rate,
                      static_cast<double>(want) / fc.sample_rate);
        throw DataError(buf);
    }

    const int mel_frames = n * fc.group();
    const std::size_t needed = static_cast<std::size_t>(mel_frames - 1) * fc.hop_length + fc.frame_length;
    dsp::Waveform padded = wav;
    if (padded.samples.size() < needed) padded.samples.resize(needed, 0.0);

    const dsp::MelSpectrogram mel = dsp::mel_spectrogram(padded, fc.filterbank(), fc.stft(), fc.log_floor);
    PairedSequence ps;
    ps.frames = make_context_clips(raw_frames, K);
    ps.audio = group_mel(mel.frames.topRows(mel_frames), fc.group());
    ps.id = std::move(id);
    validate_paired(ps);
    return ps;
}

// ---- WAV I/O -----------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
    s.append(reinterpret_cast<const char*>(&v), 4);
}

inline void put_u16(std::string& s, std::uint16_t v) {
    s.append(reinterpret_cast<const char*>(&v), 2);
}

}  // namespace detail

// PCM16 mono RIFF/WAVE; samples scaled by 32768 and saturated to [-32768, 32767].
inline void save_wav(const dsp::Waveform& w, const std::filesystem::path& path) {
    std::string out;
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    out.append("RIFF");
    detail::put_u32(out, 36 + data_bytes);
    out.append("WAVE");
    out.append("fmt ");
    detail::put_u32(out, 16);
    detail::put_u16(out, 1);  // PCM
    detail::put_u16(out, 1);  // mono
    detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
    detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate * 2));
    detail::put_u16(out, 2);
    detail::put_u16(out, 16);
    out.append("data");
    detail::put_u32(out, data_bytes);
    for (double s : w.samples) {
        long v = std::lround(s * 32768.0);
        v = std::clamp(v, -32768L, 32767L);
        const std::int16_t pcm = static_cast<std::int16_t>(v);
        out.append(reinterpret_cast<const char*>(&pcm), 2);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write: " + path.string());
}

inline dsp::Waveform load_wav(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    auto u32 = [&](std::size_t at) {
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + at, 4);
        return v;
    };
    auto u16 = [&](std::size_t at) {
        std::uint16_t v;
        std::memcpy(&v, bytes.data() + at, 2);
        return v;
    };

    if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
        throw DataError("malformed header (not RIFF/WAVE): " + path.string());

    bool have_fmt = false;
    int sample_rate = 0;
    std::size_t data_at = 0, data_len = 0;
    std::size_t at = 12;
    while (at + 8 <= bytes.size()) {
        const std::string id = bytes.substr(at, 4);
        const std::uint32_t len = u32(at + 4);
        const std::size_t body = at + 8;
        if (body + len > bytes.size())
            throw DataError("malformed header (truncated chunk): " + path.string());
        if (id == "fmt ") {
            if (len < 16) throw DataError("malformed header (fmt too short): " + path.string());
            if (u16(body) != 1) throw DataError("unsupported encoding (need PCM): " + path.string());
            if (u16(body + 2) != 1)
                throw DataError("multi-channel WAV is not supported: " + path.string());
            if (u16(body + 14) != 16)
                throw DataError("unsupported encoding (need 16-bit): " + path.string());
            sample_rate = static_cast<int>(u32(body + 4));
            have_fmt = true;
        } else if (id == "data") {
            data_at = body;
            data_len = len;
        }
        at = body + len + (len & 1);  // chunks are word-aligned
    }
    if (!have_fmt || data_at == 0)
        throw DataError("malformed header (missing fmt or data): " + path.string());

    dsp::Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        std::int16_t pcm;
        std::memcpy(&pcm, bytes.data() + data_at + 2 * i, 2);
        w.samples[i] = static_cast<double>(pcm) / 32768.0;
    }
    return w;
}

// ---- synthetic one-to-many task ------------------------------------------------

// A horizontal bar "mouth": its openness tracks the loudness envelope and its
// horizontal position selects a pitch-class SET. The realized pitch within
// the set is drawn independently of the render, so one frame stream is
// consistent with modes_per_input distinct audios.
struct SyntheticTaskConfig {
    int n_sequences = 12;
    int seq_length = 20;  // video frames
    int image_h = 32;
    int image_w = 32;
    int modes_per_input = 2;  // 1 = deterministic control
    double noise_level = 0.0;
    std::uint64_t seed = 0;
    int K = 5;
    FrontendConfig frontend;

    void validate() const {
        frontend.validate();
        if (n_sequences < 1) throw ConfigError("n_sequences must be >= 1");
        if (seq_length < 1) throw ConfigError("seq_length must be >= 1");
        if (image_h < 8 || image_w < 8) throw ConfigError("images must be at least 8x8");
        if (modes_per_input < 1) throw ConfigError("modes_per_input must be >= 1");
        if (noise_level < 0.0) throw ConfigError("noise_level must be >= 0");
        if (K < 1 || K % 2 == 0) throw ConfigError("context size K must be odd");
    }
};

inline constexpr int kMouthPositions = 3;

namespace detail {

// Pitch classes are spaced 5 semitones apart; consecutive modes at one
// position land between the classes of neighboring positions, so every
// (position, mode) pair gets a distinct fundamental.
inline double mode_pitch(int position, int mode) {
    return 220.0 * std::pow(2.0, (2.0 * position + mode) * 5.0 / 12.0);
}

// Smooth openness curve in [0.15, 0.95].
inline Vec loudness_envelope(int n_steps, Rng& rng) {
    const double cycles = rng.uniform(0.5, 1.5);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    Vec env(n_steps);
    for (int i = 0; i < n_steps; ++i) {
        const double x = static_cast<double>(i) / std::max(1, n_steps - 1);
        env[i] = 0.55 + 0.4 * std::sin(2.0 * M_PI * cycles * x + phase);
    }
    return env;
}

inline Mat render_frame(int h, int w, int position, double openness) {
    Mat img = Mat::Zero(h, w);
    const int bar_w = std::max(1, w / 4);
    const double stride = static_cast<double>(w - bar_w - 2) / (kMouthPositions - 1);
    const int x0 = 1 + static_cast<int>(std::lround(position * stride));
    const int cy = h / 2;
    const int half = std::max(1, static_cast<int>(std::lround(openness * h / 4.0)));
    for (int y = std::max(0, cy - half); y < std::min(h, cy + half); ++y)
        for (int x = x0; x < std::min(w, x0 + bar_w); ++x) img(y, x) = 1.0;
    return img;
}

// Harmonic tone (3 partials at 1 / 0.5 / 0.25) amplitude-modulated by the
// per-step envelope, linearly interpolated at sample rate.
inline dsp::Waveform synth_tone(double pitch_hz, const Vec& env, const FrontendConfig& fc) {
    const int spf = fc.samples_per_video_frame();
    const int n_steps = static_cast<int>(env.size());
    dsp::Waveform w;
    w.sample_rate = fc.sample_rate;
    w.samples.resize(static_cast<std::size_t>(n_steps) * spf);
    const double amps[3] = {1.0, 0.5, 0.25};
    for (std::size_t s = 0; s < w.samples.size(); ++s) {
        const int step = static_cast<int>(s) / spf;
        const double frac = static_cast<double>(static_cast<int>(s) % spf) / spf;
        const double e = (step + 1 < n_steps)
                             ? env[step] + frac * (env[step + 1] - env[step])
                             : env[step];
        double v = 0.0;
        const double t = static_cast<double>(s) / fc.sample_rate;
        for (int k = 0; k < 3; ++k) v += amps[k] * std::sin(2.0 * M_PI * pitch_hz * (k + 1) * t);
        w.samples[s] = 0.3 * e * v;
    }
    return w;
}

}  // namespace detail

// Frame render is a function of (position, envelope) only; the mode never
// enters, which is what makes the task one-to-many.
inline std::vector<Mat> render_frames(const SyntheticTaskConfig& cfg, int position,
                                      const Vec& envelope) {
    std::vector<Mat> out;
    out.reserve(envelope.size());
    for (Eigen::Index i = 0; i < envelope.size(); ++i)
        out.push_back(detail::render_frame(cfg.image_h, cfg.image_w, position, envelope[i]));
    return out;
}

struct ModeAudio {
    dsp::Waveform wav;
    Mat audio;  // grouped features, seq_length x audio_dim
};

inline ModeAudio render_mode_audio(const SyntheticTaskConfig& cfg, int position,
                                   const Vec& envelope, int mode) {
    ModeAudio out;
    out.wav = detail::synth_tone(detail::mode_pitch(position, mode), envelope, cfg.frontend);
    const std::vector<Mat> raw = render_frames(cfg, position, envelope);
    out.audio = align_streams(out.wav, raw, cfg.frontend, cfg.K).audio;
    return out;
}

struct SyntheticSequence {
    PairedSequence pair;
    std::vector<Mat> raw_frames;
    dsp::Waveform wav;
    Vec envelope;
    int position = 0;
    int mode = 0;
    std::uint64_t seed = 0;
};

inline std::vector<SyntheticSequence> generate_synthetic(const SyntheticTaskConfig& cfg) {
    cfg.validate();
    std::vector<SyntheticSequence> out;
    out.reserve(cfg.n_sequences);
    for (int i = 0; i < cfg.n_sequences; ++i) {
        Rng rng(cfg.seed, static_cast<std::uint64_t>(i) + 1);
        SyntheticSequence seq;
        seq.seed = cfg.seed;
        seq.position = rng.uniform_int(kMouthPositions);
        seq.mode = rng.uniform_int(cfg.modes_per_input);
        seq.envelope = detail::loudness_envelope(cfg.seq_length, rng);
        seq.raw_frames = render_frames(cfg, seq.position, seq.envelope);
        if (cfg.noise_level > 0.0)
            for (Mat& img : seq.raw_frames)
                img = (img + cfg.noise_level * rng.normal_mat(cfg.image_h, cfg.image_w))
                          .cwiseMax(0.0)
                          .cwiseMin(1.0);
        seq.wav = detail::synth_tone(detail::mode_pitch(seq.position, seq.mode), seq.envelope,
                                     cfg.frontend);
        char id[32];
        std::snprintf(id, sizeof id, "seq_%03d", i);
        seq.pair = align_streams(seq.wav, seq.raw_frames, cfg.frontend, cfg.K, id);
        out.push_back(std::move(seq));
    }
    return out;
}

// ---- dataset layout on disk ----------------------------------------------------
//
//   <root>/<id>/audio.wav
//   <root>/<id>/frames/000001.png ...
//   <root>/manifest.tsv   (id <tab> mode <tab> seed)

inline void write_dataset(const std::vector<SyntheticSequence>& data,
                          const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root);
    std::ofstream manifest(root / "manifest.tsv");
    if (!manifest) throw DataError("cannot open for writing: " + (root / "manifest.tsv").string());
    manifest << "id\tmode\tseed\n";
    for (const SyntheticSequence& seq : data) {
        const fs::path dir = root / seq.pair.id;
        fs::create_directories(dir / "frames");
        save_wav(seq.wav, dir / "audio.wav");
        for (std::size_t i = 0; i < seq.raw_frames.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "%06zu.png", i + 1);
            png::save_gray8(seq.raw_frames[i], dir / "frames" / name);
        }
        manifest << seq.pair.id << '\t' << seq.mode << '\t' << seq.seed << '\n';
    }
    if (!manifest) throw DataError("short write: " + (root / "manifest.tsv").string());
}

struct LoadedSequence {
    std::string id;
    std::vector<Mat> raw_frames;
    dsp::Waveform wav;
};

// Reads every <root>/<id>/ directory (sorted by id); manifest.tsv is ignored.
inline std::vector<LoadedSequence> load_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) ids.push_back(entry.path().filename().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw DataError("dataset root contains no sequences: " + root.string());

    std::vector<LoadedSequence> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) {
        LoadedSequence seq;
        seq.id = id;
        seq.wav = load_wav(root / id / "audio.wav");
        const fs::path frames_dir = root / id / "frames";
        if (!fs::is_directory(frames_dir))
            throw DataError("missing frames directory: " + frames_dir.string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(frames_dir))
            if (entry.path().extension() == ".png") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("no frames in: " + frames_dir.string());
        for (const fs::path& f : files) seq.raw_frames.push_back(png::load_gray8(f));
        out.push_back(std::move(seq));
    }
    return out;
}

inline std::vector<PairedSequence> load_paired_dataset(const std::filesystem::path& root,
                                                       const FrontendConfig& fc, int K) {
    std::vector<PairedSequence> out;
    for (LoadedSequence& seq : load_dataset(root))
        out.push_back(align_streams(seq.wav, seq.raw_frames, fc, K, seq.id));
    return out;
}

}  // namespace vts::dataio
