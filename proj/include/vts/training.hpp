#pragma once
// ELBO objective, reverse-mode gradients through the unrolled sequence model,
// a finite-difference gradient checker, and the Adam training loop.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vts/common.hpp"
#include "vts/model.hpp"
#include "vts/nn.hpp"
#include "vts/tape.hpp"

namespace vts::training {

// One paired example: frames.size() == audio.rows(), audio is N x audio_dim.
struct TrainingExample {
    model::FrameStream frames;
    Mat audio;
};

struct ElboBreakdown {
    double recon_term = 0.0;
    double kl_term = 0.0;
    double elbo = 0.0;
    double lambda = 1.0;
    double beta = 1e-6;
};

struct TrainConfig {
    double lambda = 1.0;
    double beta = 1e-6;
    double learning_rate = 1e-3;
    int epochs = 200;
    int batch_size = 8;
    std::uint64_t seed = 0;
    double grad_clip = 5.0;
};

// learning_rate = 0 is accepted so a no-op training run stays expressible.
inline void validate(const TrainConfig& cfg) {
    if (!(cfg.lambda > 0.0)) throw ConfigError("lambda must be > 0");
    if (!(cfg.beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (!(cfg.learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(cfg.grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
}

struct EpochRecord {
    int epoch = 0;  // 1-based: number of completed epochs
    double elbo = 0.0;
    double recon_term = 0.0;
    double kl_term = 0.0;
    double wall_ms = 0.0;
};

inline std::string format_epoch(const EpochRecord& r) {
    char buf[192];
    std::snprintf(buf, sizeof buf,
                  "epoch=%d elbo=%.17g recon_term=%.17g kl_term=%.17g wall_ms=%.3f", r.epoch,
                  r.elbo, r.recon_term, r.kl_term, r.wall_ms);
    return buf;
}

namespace detail {

inline void check_batch(const std::vector<TrainingExample>& batch, const model::ModelDims& d) {
    if (batch.empty()) throw DataError("empty training batch");
    for (const TrainingExample& ex : batch) {
        if (ex.audio.rows() != static_cast<Eigen::Index>(ex.frames.size()))
            throw DataError("paired streams must have equal length");
        if (ex.audio.cols() != d.audio_dim)
            throw DataError("audio feature width does not match model dims");
    }
}

// One eps matrix (latent_dim x N) per example, drawn in batch order so the
// plain and tape paths see identical noise for a given seed.
inline std::vector<Mat> draw_noise(const std::vector<TrainingExample>& batch, int latent_dim,
                                   std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Mat> eps;
    eps.reserve(batch.size());
    for (const TrainingExample& ex : batch)
        eps.push_back(rng.normal_mat(latent_dim, static_cast<int>(ex.audio.rows())));
    return eps;
}

struct ExampleTerms {
    double recon = 0.0;
    double kl = 0.0;
};

// Mirrors example_terms_tape operation for operation; keep the two in sync.
inline ExampleTerms example_terms(const TrainingExample& ex, const model::ModelParams& p,
                                  double lambda, const Mat& eps) {
    const model::ModelDims& d = p.dims;
    const Mat a_cols = ex.audio.transpose();
    const Mat emb_a = nn::mlp3_forward(p.audio_embed, a_cols);
    const Mat hs_a = model::detail::unroll_lstm(p.audio_lstm, emb_a, d.hidden_dim);
    const Mat mu_q = nn::mlp2_forward(p.posterior_mean_head, hs_a);
    const Mat lv_q = model::detail::clamp_logvar(nn::mlp2_forward(p.posterior_logvar_head, hs_a));

    const Mat clips = model::clips_to_columns(ex.frames, d);
    const Mat emb_f = nn::frame_encoder_forward(p.frame_encoder, clips, d.conv_shape());
    const Mat hs_f = model::detail::unroll_lstm(p.frame_lstm, emb_f, d.hidden_dim);
    const Mat mu_p = nn::mlp2_forward(p.prior_mean_head, hs_f);
    const Mat lv_p = model::detail::clamp_logvar(nn::mlp2_forward(p.prior_logvar_head, hs_f));

    const Mat z = model::detail::sample_latents(mu_q, lv_q, eps);
    const Mat hs_d = model::detail::unroll_lstm(p.decoder_lstm, z, d.hidden_dim);
    const Mat ahat = nn::mlp3_forward(p.audio_decoder, hs_d);

    ExampleTerms out;
    out.recon = -0.5 * lambda * (a_cols - ahat).squaredNorm();
    const Mat dlv = lv_q - lv_p;
    const Mat dmu = mu_q - mu_p;
    const double n = static_cast<double>(dlv.size());
    out.kl = 0.5 * (((-dlv.sum()) + dlv.array().exp().sum()) +
                    ((dmu.array().square() * (-lv_p.array()).exp()).sum() - n));
    return out;
}

inline int unroll_lstm_tape(Tape& t, const nn::Lstm<int>& w, int xs, int hidden) {
    const int n = static_cast<int>(t.value(xs).cols());
    nn::LstmStateIds s{t.leaf(Mat::Zero(hidden, 1)), t.leaf(Mat::Zero(hidden, 1))};
    std::vector<int> hs;
    hs.reserve(n);
    for (int step = 0; step < n; ++step) {
        s = nn::lstm_step_tape(t, w, s, t.cols(xs, step, 1), hidden);
        hs.push_back(s.h);
    }
    return t.concat_cols(hs);
}

struct ExampleTermIds {
    int recon = -1;
    int kl = -1;
};

inline ExampleTermIds example_terms_tape(Tape& t, const TrainingExample& ex,
                                         const model::ParamIds& ids, const model::ModelDims& d,
                                         double lambda, const Mat& eps) {
    const int a_cols = t.leaf(ex.audio.transpose());
    const int emb_a = nn::mlp3_tape(t, ids.audio_embed, a_cols);
    const int hs_a = unroll_lstm_tape(t, ids.audio_lstm, emb_a, d.hidden_dim);
    const int mu_q = nn::mlp2_tape(t, ids.posterior_mean_head, hs_a);
    const int lv_q = t.clamp_(nn::mlp2_tape(t, ids.posterior_logvar_head, hs_a),
                              -model::kLogVarClamp, model::kLogVarClamp);

    const int clips = t.leaf(model::clips_to_columns(ex.frames, d));
    const int emb_f = nn::frame_encoder_tape(t, ids.frame_encoder, clips, d.conv_shape());
    const int hs_f = unroll_lstm_tape(t, ids.frame_lstm, emb_f, d.hidden_dim);
    const int mu_p = nn::mlp2_tape(t, ids.prior_mean_head, hs_f);
    const int lv_p = t.clamp_(nn::mlp2_tape(t, ids.prior_logvar_head, hs_f),
                              -model::kLogVarClamp, model::kLogVarClamp);

    const int z = t.add(mu_q, t.hadamard(t.exp_(t.scale(lv_q, 0.5)), t.leaf(eps)));
    const int hs_d = unroll_lstm_tape(t, ids.decoder_lstm, z, d.hidden_dim);
    const int ahat = nn::mlp3_tape(t, ids.audio_decoder, hs_d);

    ExampleTermIds out;
    out.recon = t.scale(t.sum_squares(t.sub(a_cols, ahat)), -0.5 * lambda);
    const int dlv = t.sub(lv_q, lv_p);
    const int dmu = t.sub(mu_q, mu_p);
    const double n = static_cast<double>(t.value(dlv).size());
    const int t1 = t.scale(t.sum(dlv), -1.0);
    const int t2 = t.sum(t.exp_(dlv));
    const int t3 =
        t.add_scalar(t.sum(t.hadamard(t.hadamard(dmu, dmu), t.exp_(t.scale(lv_p, -1.0)))), -n);
    out.kl = t.scale(t.add(t.add(t1, t2), t3), 0.5);
    return out;
}

// Scalar objective exactly as the tape builds it: -(sum_e elbo_e) / B.
inline double batch_loss(const std::vector<TrainingExample>& batch, const model::ModelParams& p,
                         const TrainConfig& cfg, std::uint64_t seed) {
    const std::vector<Mat> eps = draw_noise(batch, p.dims.latent_dim, seed);
    double recon_sum = 0.0, kl_sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const ExampleTerms terms = example_terms(batch[i], p, cfg.lambda, eps[i]);
        recon_sum += terms.recon;
        kl_sum += terms.kl;
    }
    return -(recon_sum - cfg.beta * kl_sum) / static_cast<double>(batch.size());
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
}

inline std::vector<Mat*> tensor_ptrs(model::ModelParams& p) {
    std::vector<Mat*> out;
    model::for_each_tensor(static_cast<model::ParamsT<Mat>&>(p),
                           [&](const std::string&, Mat& m) { out.push_back(&m); });
    return out;
}

}  // namespace detail

// Batch-mean evidence lower bound. The reported kl_term is clamped at zero
// (it is nonnegative up to rounding) and elbo = recon_term - beta * kl_term
// holds exactly on the reported values.
inline ElboBreakdown elbo(const std::vector<TrainingExample>& batch, const model::ModelParams& p,
                          const TrainConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    detail::check_batch(batch, p.dims);
    const std::vector<Mat> eps = detail::draw_noise(batch, p.dims.latent_dim, seed);
    double recon_sum = 0.0, kl_sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const detail::ExampleTerms terms = detail::example_terms(batch[i], p, cfg.lambda, eps[i]);
        recon_sum += terms.recon;
        kl_sum += terms.kl;
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    ElboBreakdown out;
    out.lambda = cfg.lambda;
    out.beta = cfg.beta;
    out.recon_term = recon_sum * inv_b;
    out.kl_term = std::max(0.0, kl_sum * inv_b);
    out.elbo = out.recon_term - cfg.beta * out.kl_term;
    return out;
}

struct BackwardResult {
    model::ModelParams grads;  // d(-elbo)/dw, batch mean
    double loss = 0.0;         // -elbo as the tape computed it
};

inline BackwardResult backward(const std::vector<TrainingExample>& batch,
                               const model::ModelParams& p, const TrainConfig& cfg,
                               std::uint64_t seed) {
    validate(cfg);
    detail::check_batch(batch, p.dims);
    const std::vector<Mat> eps = detail::draw_noise(batch, p.dims.latent_dim, seed);

    Tape t;
    const model::ParamIds ids = model::register_params(t, p);
    int recon_total = -1, kl_total = -1;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const detail::ExampleTermIds terms =
            detail::example_terms_tape(t, batch[i], ids, p.dims, cfg.lambda, eps[i]);
        recon_total = (i == 0) ? terms.recon : t.add(recon_total, terms.recon);
        kl_total = (i == 0) ? terms.kl : t.add(kl_total, terms.kl);
    }
    const int loss = t.scale(t.sub(recon_total, t.scale(kl_total, cfg.beta)),
                             -1.0 / static_cast<double>(batch.size()));
    t.backward(loss);

    BackwardResult out{model::zeros_like(p), t.value(loss)(0, 0)};
    model::collect_grads(t, ids, out.grads);
    return out;
}

struct TrainResult {
    model::ModelParams params;
    std::vector<EpochRecord> log;
};

using EpochCallback = std::function<void(const model::ModelParams&, const EpochRecord&)>;

// Adam with global gradient-norm clipping over fixed-order consecutive
// batches. Per-step sampling noise is derived from (seed, epoch, batch); the
// logged breakdown is evaluated on the full dataset with a fixed noise seed
// so the curve is comparable across epochs.
inline TrainResult train(const std::vector<TrainingExample>& dataset,
                         const model::ModelParams& initial, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
    validate(cfg);
    if (dataset.empty()) throw DataError("empty training dataset");
    detail::check_batch(dataset, initial.dims);
    model::validate_params(initial);

    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    TrainResult out{initial, {}};
    model::ModelParams mom = model::zeros_like(initial);
    model::ModelParams vel = model::zeros_like(initial);
    const std::vector<Mat*> pw = detail::tensor_ptrs(out.params);
    const std::vector<Mat*> pm = detail::tensor_ptrs(mom);
    const std::vector<Mat*> pv = detail::tensor_ptrs(vel);
    long step = 0;

    const std::size_t n = dataset.size();
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::size_t batch_idx = 0;
        for (std::size_t start = 0; start < n; start += bs, ++batch_idx) {
            const std::size_t stop = std::min(n, start + bs);
            const std::vector<TrainingExample> batch(dataset.begin() + start,
                                                     dataset.begin() + stop);
            const std::uint64_t step_seed = detail::derive_seed(
                cfg.seed, 1 + static_cast<std::uint64_t>(epoch) * 1000003ULL + batch_idx);
            const BackwardResult br = backward(batch, out.params, cfg, step_seed);
            if (!std::isfinite(br.loss))
                throw NumericError("training diverged: objective is not finite");

            model::ModelParams grads = br.grads;
            const std::vector<Mat*> pg = detail::tensor_ptrs(grads);
            double sq = 0.0;
            for (const Mat* g : pg) sq += g->squaredNorm();
            const double gn = std::sqrt(sq);
            if (gn > cfg.grad_clip)
                for (Mat* g : pg) *g *= cfg.grad_clip / gn;

            ++step;
            const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
            for (std::size_t i = 0; i < pw.size(); ++i) {
                const Mat& g = *pg[i];
                *pm[i] = kBeta1 * *pm[i] + (1.0 - kBeta1) * g;
                *pv[i] = (kBeta2 * pv[i]->array() + (1.0 - kBeta2) * g.array().square()).matrix();
                *pw[i] -= (cfg.learning_rate * (pm[i]->array() / c1) /
                           ((pv[i]->array() / c2).sqrt() + kEps))
                              .matrix();
            }
        }
        const ElboBreakdown bd = elbo(dataset, out.params, cfg, detail::derive_seed(cfg.seed, 0));
        if (!std::isfinite(bd.elbo))
            throw NumericError("training diverged: objective is not finite");
        const auto t1 = std::chrono::steady_clock::now();
        const EpochRecord rec{epoch, bd.elbo, bd.recon_term, bd.kl_term,
                              std::chrono::duration<double, std::milli>(t1 - t0).count()};
        out.log.push_back(rec);
        if (on_epoch) on_epoch(out.params, rec);
    }
    return out;
}

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradReport {
    std::vector<GradCheckEntry> entries;  // largest error first
    double overall_max = 0.0;
};

// Central differences against the reverse-mode gradient, one entry per
// parameter tensor. Relative error uses max(|fd|, |analytic|, 1e-3) as the
// denominator so near-zero gradients are compared on an absolute scale.
inline GradReport grad_check(const model::ModelParams& params,
                             const std::vector<TrainingExample>& batch, const TrainConfig& cfg,
                             std::uint64_t seed, double h = 1e-5) {
    validate(cfg);
    if (model::count_params(params) > 10000)
        throw ConfigError("grad_check needs a toy-sized model (at most 1e4 parameters)");
    const BackwardResult br = backward(batch, params, cfg, seed);

    model::ModelParams work = params;
    std::vector<std::pair<std::string, Mat*>> wt;
    model::for_each_tensor(static_cast<model::ParamsT<Mat>&>(work),
                           [&](const std::string& nm, Mat& m) { wt.emplace_back(nm, &m); });
    std::vector<const Mat*> gt;
    model::for_each_tensor(static_cast<const model::ParamsT<Mat>&>(br.grads),
                           [&](const std::string&, const Mat& m) { gt.push_back(&m); });

    GradReport rep;
    for (std::size_t i = 0; i < wt.size(); ++i) {
        Mat& w = *wt[i].second;
        const Mat& g = *gt[i];
        double worst = 0.0;
        for (Eigen::Index k = 0; k < w.size(); ++k) {
            const double saved = w(k);
            w(k) = saved + h;
            const double lp = detail::batch_loss(batch, work, cfg, seed);
            w(k) = saved - h;
            const double lm = detail::batch_loss(batch, work, cfg, seed);
            w(k) = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(g(k)), 1e-3});
            worst = std::max(worst, std::abs(fd - g(k)) / denom);
        }
        rep.entries.push_back({wt[i].first, worst});
        rep.overall_max = std::max(rep.overall_max, worst);
    }
    std::sort(rep.entries.begin(), rep.entries.end(),
              [](const GradCheckEntry& a, const GradCheckEntry& b) {
                  if (a.max_rel_err != b.max_rel_err) return a.max_rel_err > b.max_rel_err;
                  return a.name < b.name;
              });
    return rep;
}

}  // namespace vts::training
