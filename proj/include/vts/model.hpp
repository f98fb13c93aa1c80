#pragma once

// The conditional-prior sequence VAE. An audio encoder LSTM produces a
// per-step posterior over the latent; a frame encoder + LSTM produces a
// learned per-step prior from the video stream; a decoder LSTM maps latent
// samples back to audio features. At test time only the prior path runs.

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vts/common.hpp"
#include "vts/nn.hpp"
#include "vts/tape.hpp"

namespace vts::model {

struct ModelDims {
    int audio_dim = 128;  // entries per audio step feature vector
    int latent_dim = 16;
    int hidden_dim = 64;
    int embed_dim = 64;
    int K = 5;  // frames per context clip, stacked as conv channels
    int image_h = 32, image_w = 32;
    std::array<int, 3> conv_channels{8, 16, 32};

    void validate() const {
        auto positive = [](int v, const char* what) {
            if (v <= 0) throw ConfigError(std::string(what) + " must be positive");
        };
        positive(audio_dim, "audio_dim");
        positive(latent_dim, "latent_dim");
        positive(hidden_dim, "hidden_dim");
        positive(embed_dim, "embed_dim");
        positive(K, "K");
        if (K % 2 == 0) throw ConfigError("K must be odd");
        positive(image_h, "image_h");
        positive(image_w, "image_w");
        if (image_h % 8 != 0 || image_w % 8 != 0)
            throw ConfigError("image size must be divisible by 8 (three 2x2 pools)");
        for (int c : conv_channels) positive(c, "conv channel count");
    }

    nn::ConvShape conv_shape() const { return {K, image_h, image_w, conv_channels}; }
    int conv_out_dim() const { return conv_channels[2] * (image_h / 8) * (image_w / 8); }

    bool operator==(const ModelDims&) const = default;
};

struct FrameClip {
    std::vector<Mat> frames;  // K images, each image_h x image_w, values in [0, 1]
    int center_index = 0;
};
using FrameStream = std::vector<FrameClip>;

struct DiagGaussian {
    Vec mean;
    Vec log_var;
};

struct LatentSample {
    Vec z;
};

struct LstmState {
    Vec hidden;
    Vec cell;
};

constexpr double kLogVarClamp = 14.0;

// ---- parameters ------------------------------------------------------------

template <class T>
struct ParamsT {
    nn::Mlp3<T> audio_embed;     // audio_dim -> embed -> embed -> embed
    nn::Lstm<T> audio_lstm;      // in = embed
    nn::Mlp2<T> posterior_mean_head;    // hidden -> hidden -> latent
    nn::Mlp2<T> posterior_logvar_head;
    nn::FrameEnc<T> frame_encoder;
    nn::Lstm<T> frame_lstm;      // in = embed
    nn::Mlp2<T> prior_mean_head;
    nn::Mlp2<T> prior_logvar_head;
    nn::Lstm<T> decoder_lstm;    // in = latent
    nn::Mlp3<T> audio_decoder;   // hidden -> embed -> embed -> audio_dim
};

struct ModelParams : ParamsT<Mat> {
    ModelDims dims;
};

using ParamIds = ParamsT<int>;

namespace detail {

template <class T, class F>
void visit_mlp3(nn::Mlp3<T>& m, const std::string& prefix, F&& f) {
    for (int l = 0; l < 3; ++l) {
        f(prefix + ".w" + std::to_string(l), m.w[l]);
        f(prefix + ".b" + std::to_string(l), m.b[l]);
    }
}

template <class T, class F>
void visit_mlp2(nn::Mlp2<T>& m, const std::string& prefix, F&& f) {
    for (int l = 0; l < 2; ++l) {
        f(prefix + ".w" + std::to_string(l), m.w[l]);
        f(prefix + ".b" + std::to_string(l), m.b[l]);
    }
}

template <class T, class F>
void visit_lstm(nn::Lstm<T>& m, const std::string& prefix, F&& f) {
    f(prefix + ".wx", m.wx);
    f(prefix + ".wh", m.wh);
    f(prefix + ".b", m.b);
}

}  // namespace detail

// Fixed tensor registry order; checkpoints, optimizer state, and gradient
// containers all rely on it.
template <class T, class F>
void for_each_tensor(ParamsT<T>& p, F&& f) {
    detail::visit_mlp3(p.audio_embed, "audio_embed", f);
    detail::visit_lstm(p.audio_lstm, "audio_lstm", f);
    detail::visit_mlp2(p.posterior_mean_head, "posterior_mean_head", f);
    detail::visit_mlp2(p.posterior_logvar_head, "posterior_logvar_head", f);
    for (int l = 0; l < 3; ++l) {
        f("frame_encoder.conv" + std::to_string(l) + ".w", p.frame_encoder.conv[l].w);
        f("frame_encoder.conv" + std::to_string(l) + ".b", p.frame_encoder.conv[l].b);
    }
    f("frame_encoder.fc.w", p.frame_encoder.fc_w);
    f("frame_encoder.fc.b", p.frame_encoder.fc_b);
    detail::visit_lstm(p.frame_lstm, "frame_lstm", f);
    detail::visit_mlp2(p.prior_mean_head, "prior_mean_head", f);
    detail::visit_mlp2(p.prior_logvar_head, "prior_logvar_head", f);
    detail::visit_lstm(p.decoder_lstm, "decoder_lstm", f);
    detail::visit_mlp3(p.audio_decoder, "audio_decoder", f);
}

template <class T, class F>
void for_each_tensor(const ParamsT<T>& p, F&& f) {
    for_each_tensor(const_cast<ParamsT<T>&>(p),
                    [&](const std::string& name, T& t) { f(name, std::as_const(t)); });
}

template <class A, class B, class F>
void zip_tensors(A& a, B& b, F&& f) {
    std::vector<std::pair<std::string, decltype(&a.audio_lstm.wx)>> av;
    for_each_tensor(a, [&](const std::string& n, auto& t) { av.emplace_back(n, &t); });
    std::size_t i = 0;
    for_each_tensor(b, [&](const std::string&, auto& t) { f(av[i].first, *av[i].second, t); ++i; });
}

// Same-shape zero clone, the container for gradients and optimizer moments.
inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams out = p;
    for_each_tensor(static_cast<ParamsT<Mat>&>(out),
                    [](const std::string&, Mat& t) { t.setZero(); });
    return out;
}

inline ModelParams zero_params(const ModelDims& d) {
    d.validate();
    ModelParams p;
    p.dims = d;
    const int A = d.audio_dim, L = d.latent_dim, H = d.hidden_dim, E = d.embed_dim;
    auto mlp3 = [](nn::Mlp3<Mat>& m, int in, int mid, int out) {
        m.w = {Mat::Zero(mid, in), Mat::Zero(mid, mid), Mat::Zero(out, mid)};
        m.b = {Mat::Zero(mid, 1), Mat::Zero(mid, 1), Mat::Zero(out, 1)};
    };
    auto mlp2 = [](nn::Mlp2<Mat>& m, int in, int mid, int out) {
        m.w = {Mat::Zero(mid, in), Mat::Zero(out, mid)};
        m.b = {Mat::Zero(mid, 1), Mat::Zero(out, 1)};
    };
    auto lstm = [](nn::Lstm<Mat>& m, int in, int hidden) {
        m.wx = Mat::Zero(4 * hidden, in);
        m.wh = Mat::Zero(4 * hidden, hidden);
        m.b = Mat::Zero(4 * hidden, 1);
    };
    mlp3(p.audio_embed, A, E, E);
    lstm(p.audio_lstm, E, H);
    mlp2(p.posterior_mean_head, H, H, L);
    mlp2(p.posterior_logvar_head, H, H, L);
    int in_ch = d.K;
    for (int l = 0; l < 3; ++l) {
        const int out_ch = d.conv_channels[l];
        p.frame_encoder.conv[l].w = Mat::Zero(out_ch, in_ch * 9);
        p.frame_encoder.conv[l].b = Mat::Zero(out_ch, 1);
        in_ch = out_ch;
    }
    p.frame_encoder.fc_w = Mat::Zero(E, d.conv_out_dim());
    p.frame_encoder.fc_b = Mat::Zero(E, 1);
    lstm(p.frame_lstm, E, H);
    mlp2(p.prior_mean_head, H, H, L);
    mlp2(p.prior_logvar_head, H, H, L);
    lstm(p.decoder_lstm, L, H);
    mlp3(p.audio_decoder, H, E, A);
    return p;
}

// Scaled-normal init (1/sqrt(fan_in)), zero biases, forget-gate bias +1.
inline ModelParams init_params(const ModelDims& d, std::uint64_t seed) {
    ModelParams p = zero_params(d);
    Rng rng(seed);
    for_each_tensor(static_cast<ParamsT<Mat>&>(p), [&](const std::string& name, Mat& t) {
        if (name.ends_with(".b") || name.find(".b") != std::string::npos) return;
        const double std = 1.0 / std::sqrt(static_cast<double>(t.cols()));
        for (Eigen::Index c = 0; c < t.cols(); ++c)
            for (Eigen::Index r = 0; r < t.rows(); ++r) t(r, c) = std * rng.normal();
    });
    const int H = d.hidden_dim;
    p.audio_lstm.b.middleRows(H, H).setOnes();
    p.frame_lstm.b.middleRows(H, H).setOnes();
    p.decoder_lstm.b.middleRows(H, H).setOnes();
    return p;
}

inline std::size_t count_params(const ModelParams& p) {
    std::size_t n = 0;
    for_each_tensor(static_cast<const ParamsT<Mat>&>(p),
                    [&](const std::string&, const Mat& t) { n += t.size(); });
    return n;
}

inline void validate_params(const ModelParams& p) {
    const ModelParams ref = zero_params(p.dims);
    zip_tensors(static_cast<const ParamsT<Mat>&>(p), static_cast<const ParamsT<Mat>&>(ref),
                [](const std::string& name, const Mat& got, const Mat& want) {
                    if (got.rows() != want.rows() || got.cols() != want.cols())
                        throw ConfigError("parameter tensor " + name + " has inconsistent shape");
                    require_finite(got, "parameter tensor " + name);
                });
}

inline ParamIds register_params(Tape& t, const ModelParams& p) {
    ParamIds ids;
    zip_tensors(static_cast<const ParamsT<Mat>&>(p), static_cast<ParamsT<int>&>(ids),
                [&](const std::string&, const Mat& m, int& id) { id = t.leaf(m); });
    return ids;
}

inline void collect_grads(const Tape& t, const ParamIds& ids, ModelParams& grads) {
    zip_tensors(static_cast<const ParamsT<int>&>(ids), static_cast<ParamsT<Mat>&>(grads),
                [&](const std::string&, const int& id, Mat& g) { g = t.grad(id); });
}

// ---- forward pieces --------------------------------------------------------

inline Mat clips_to_columns(const FrameStream& frames, const ModelDims& d) {
    if (frames.empty()) throw DataError("empty frame stream");
    Mat out(static_cast<Eigen::Index>(d.K) * d.image_h * d.image_w, frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const FrameClip& clip = frames[i];
        if (static_cast<int>(clip.frames.size()) != d.K)
            throw DataError("clip does not contain K frames");
        for (int k = 0; k < d.K; ++k) {
            const Mat& img = clip.frames[k];
            if (img.rows() != d.image_h || img.cols() != d.image_w)
                throw DataError("frame image size does not match model dims");
            for (int y = 0; y < d.image_h; ++y)
                for (int x = 0; x < d.image_w; ++x)
                    out(static_cast<Eigen::Index>(k) * d.image_h * d.image_w + y * d.image_w + x,
                        i) = img(y, x);
        }
    }
    return out;
}

inline Vec audio_embed(const ModelParams& p, const Vec& a_t) {
    if (a_t.size() != p.dims.audio_dim)
        throw ConfigError("audio feature length does not match audio_dim");
    return nn::mlp3_forward(p.audio_embed, a_t);
}

inline std::pair<LstmState, Vec> lstm_step(const nn::Lstm<Mat>& w, const LstmState& s,
                                           const Vec& x) {
    nn::LstmBatchState bs{s.hidden, s.cell};
    nn::LstmBatchState ns = nn::lstm_step(w, bs, x);
    LstmState out{ns.h.col(0), ns.c.col(0)};
    return {out, out.hidden};
}

inline DiagGaussian heads_to_gaussian(const nn::Mlp2<Mat>& mean_head,
                                      const nn::Mlp2<Mat>& logvar_head, const Vec& h) {
    DiagGaussian g;
    g.mean = nn::mlp2_forward(mean_head, h);
    g.log_var = nn::mlp2_forward(logvar_head, h)
                    .cwiseMax(-kLogVarClamp)
                    .cwiseMin(kLogVarClamp);
    return g;
}

inline DiagGaussian posterior_from_audio(const ModelParams& p, const LstmState& audio_state) {
    return heads_to_gaussian(p.posterior_mean_head, p.posterior_logvar_head, audio_state.hidden);
}

inline DiagGaussian prior_from_frames(const ModelParams& p, const LstmState& frame_state) {
    return heads_to_gaussian(p.prior_mean_head, p.prior_logvar_head, frame_state.hidden);
}

inline Vec frame_encode(const ModelParams& p, const FrameClip& clip) {
    const Mat cols = clips_to_columns({clip}, p.dims);
    return nn::frame_encoder_forward(p.frame_encoder, cols, p.dims.conv_shape());
}

inline LatentSample reparameterize(const DiagGaussian& g, const Vec& noise) {
    if (noise.size() != g.mean.size())
        throw ConfigError("noise length does not match latent dimension");
    return {(g.mean.array() + (0.5 * g.log_var.array()).exp() * noise.array()).matrix()};
}

inline double kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p) {
    if (q.mean.size() != p.mean.size())
        throw ConfigError("KL between Gaussians of different dimension");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < q.mean.size(); ++i) {
        const double dlv = q.log_var[i] - p.log_var[i];
        const double dmu = q.mean[i] - p.mean[i];
        acc += -dlv + std::exp(dlv) + dmu * dmu * std::exp(-p.log_var[i]) - 1.0;
    }
    return std::max(0.0, 0.5 * acc);
}

inline std::pair<LstmState, Vec> decode_step(const ModelParams& p, const LstmState& s,
                                             const LatentSample& z) {
    auto [ns, h] = lstm_step(p.decoder_lstm, s, z.z);
    Vec a_hat = nn::mlp3_forward(p.audio_decoder, h);
    return {ns, a_hat};
}

// ---- sequence paths ----------------------------------------------------------

namespace detail {

// Runs an LSTM over the columns of inputs (one step per column) and returns
// the hidden states as columns.
inline Mat unroll_lstm(const nn::Lstm<Mat>& w, const Mat& inputs, int hidden) {
    nn::LstmBatchState s = nn::lstm_zero_state(hidden, 1);
    Mat hs(hidden, inputs.cols());
    for (Eigen::Index t = 0; t < inputs.cols(); ++t) {
        s = nn::lstm_step(w, s, inputs.col(t));
        hs.col(t) = s.h;
    }
    return hs;
}

inline Mat clamp_logvar(const Mat& lv) {
    return lv.cwiseMax(-kLogVarClamp).cwiseMin(kLogVarClamp);
}

// z = mean + exp(lv/2) ⊙ eps, columns are steps
inline Mat sample_latents(const Mat& mean, const Mat& lv, const Mat& eps) {
    return (mean.array() + (0.5 * lv.array()).exp() * eps.array()).matrix();
}

inline Mat decode_latents(const ModelParams& p, const Mat& z) {
    Mat hs = unroll_lstm(p.decoder_lstm, z, p.dims.hidden_dim);
    return nn::mlp3_forward(p.audio_decoder, hs).transpose();  // N x audio_dim
}

}  // namespace detail

// Test-time path: prior parameters from the frame stream alone, one sampled
// latent per step, decoded to N audio feature rows. Same seed, same output.
inline Mat generate(const FrameStream& frames, const ModelParams& p, std::uint64_t seed) {
    const Mat clips = clips_to_columns(frames, p.dims);
    const Mat embeds = nn::frame_encoder_forward(p.frame_encoder, clips, p.dims.conv_shape());
    const Mat hs = detail::unroll_lstm(p.frame_lstm, embeds, p.dims.hidden_dim);
    const Mat mean = nn::mlp2_forward(p.prior_mean_head, hs);
    const Mat lv = detail::clamp_logvar(nn::mlp2_forward(p.prior_logvar_head, hs));
    Rng rng(seed);
    const Mat eps = rng.normal_mat(p.dims.latent_dim, static_cast<int>(frames.size()));
    return detail::decode_latents(p, detail::sample_latents(mean, lv, eps));
}

// Training-mode reconstruction: posterior from the audio itself.
// audio: N x audio_dim, one feature row per step.
inline Mat reconstruct(const Mat& audio, const ModelParams& p, std::uint64_t seed) {
    if (audio.rows() == 0) throw DataError("empty audio feature sequence");
    if (audio.cols() != p.dims.audio_dim)
        throw ConfigError("audio feature length does not match audio_dim");
    const Mat embeds = nn::mlp3_forward(p.audio_embed, audio.transpose());
    const Mat hs = detail::unroll_lstm(p.audio_lstm, embeds, p.dims.hidden_dim);
    const Mat mean = nn::mlp2_forward(p.posterior_mean_head, hs);
    const Mat lv = detail::clamp_logvar(nn::mlp2_forward(p.posterior_logvar_head, hs));
    Rng rng(seed);
    const Mat eps = rng.normal_mat(p.dims.latent_dim, static_cast<int>(audio.rows()));
    return detail::decode_latents(p, detail::sample_latents(mean, lv, eps));
}

// ---- checkpoint I/O ----------------------------------------------------------
// magic "MVCK1", u32 header length, UTF-8 key=value header lines, then every
// tensor in registry order as u32 rank, u32 dims..., row-major float64.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw DataError(std::string("checkpoint truncated reading ") + what);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path,
                            const std::map<std::string, std::string>& extra = {}) {
    validate_params(p);
    std::string header;
    const ModelDims& d = p.dims;
    header += "audio_dim=" + std::to_string(d.audio_dim) + "\n";
    header += "latent_dim=" + std::to_string(d.latent_dim) + "\n";
    header += "hidden_dim=" + std::to_string(d.hidden_dim) + "\n";
    header += "embed_dim=" + std::to_string(d.embed_dim) + "\n";
    header += "K=" + std::to_string(d.K) + "\n";
    header += "image_h=" + std::to_string(d.image_h) + "\n";
    header += "image_w=" + std::to_string(d.image_w) + "\n";
    header += "conv_channels=" + std::to_string(d.conv_channels[0]) + "," +
              std::to_string(d.conv_channels[1]) + "," + std::to_string(d.conv_channels[2]) +
              "\n";
    for (const auto& [k, v] : extra) {
        if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
            v.find('\n') != std::string::npos)
            throw ConfigError("checkpoint header entries must be single-line key=value");
        header += k + "=" + v + "\n";
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
    out.write("MVCK1", 5);
    detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for_each_tensor(static_cast<const ParamsT<Mat>&>(p), [&](const std::string&, const Mat& t) {
        detail::put_u32(out, 2);
        detail::put_u32(out, static_cast<std::uint32_t>(t.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(t.cols()));
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                const double v = t(r, c);
                out.write(reinterpret_cast<const char*>(&v), 8);
            }
    });
    if (!out) throw DataError("checkpoint write failed: " + path.string());
}

inline std::pair<ModelParams, std::map<std::string, std::string>> load_checkpoint(
    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, "MVCK1", 5) != 0)
        throw DataError("not a checkpoint file (bad magic): " + path.string());

    const std::uint32_t header_len = detail::get_u32(in, "header length");
    std::string header(header_len, '\0');
    in.read(header.data(), header_len);
    if (!in) throw DataError("checkpoint truncated reading header");

    std::map<std::string, std::string> kv;
    std::size_t at = 0;
    while (at < header.size()) {
        std::size_t nl = header.find('\n', at);
        if (nl == std::string::npos) nl = header.size();
        const std::string line = header.substr(at, nl - at);
        at = nl + 1;
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint header line missing '='");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }

    auto need_int = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end())
            throw DataError(std::string("checkpoint header missing key: ") + key);
        return std::stoi(it->second);
    };
    ModelDims d;
    d.audio_dim = need_int("audio_dim");
    d.latent_dim = need_int("latent_dim");
    d.hidden_dim = need_int("hidden_dim");
    d.embed_dim = need_int("embed_dim");
    d.K = need_int("K");
    d.image_h = need_int("image_h");
    d.image_w = need_int("image_w");
    {
        auto it = kv.find("conv_channels");
        if (it == kv.end()) throw DataError("checkpoint header missing key: conv_channels");
        if (std::sscanf(it->second.c_str(), "%d,%d,%d", &d.conv_channels[0], &d.conv_channels[1],
                        &d.conv_channels[2]) != 3)
            throw DataError("checkpoint header conv_channels malformed");
    }
    d.validate();

    ModelParams p = zero_params(d);
    for_each_tensor(static_cast<ParamsT<Mat>&>(p), [&](const std::string& name, Mat& t) {
        const std::uint32_t rank = detail::get_u32(in, name.c_str());
        if (rank != 2) throw DataError("checkpoint tensor " + name + " has unsupported rank");
        const std::uint32_t rows = detail::get_u32(in, name.c_str());
        const std::uint32_t cols = detail::get_u32(in, name.c_str());
        if (rows != static_cast<std::uint32_t>(t.rows()) ||
            cols != static_cast<std::uint32_t>(t.cols()))
            throw DataError("checkpoint tensor " + name + " has mismatched shape");
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) {
                double v;
                in.read(reinterpret_cast<char*>(&v), 8);
                if (!in) throw DataError("checkpoint truncated in tensor " + name);
                t(r, c) = v;
            }
    });
    validate_params(p);
    return {std::move(p), std::move(kv)};
}

}  // namespace vts::model
