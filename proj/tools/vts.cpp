// Command-line surface for the video-to-speech pipeline: dataset synthesis,
// training, seeded generation, diversity sampling, and evaluation.
//
// Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
// abort. Every run appends one JSON record to run_manifest.jsonl next to its
// primary output; the manifest is a run log, not a reproducible artifact.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "vts/checkpoint.hpp"
#include "vts/config.hpp"
#include "vts/dataio.hpp"
#include "vts/metrics.hpp"
#include "vts/model.hpp"
#include "vts/png.hpp"
#include "vts/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vts;

namespace {

const std::set<std::string> kFrontendKeys = {
    "sample_rate", "frame_length", "hop_length", "fft_size", "n_mels",
    "f_min",       "f_max",        "log_floor",  "video_fps"};

dataio::FrontendConfig frontend_from_kv(const config::KV& kv) {
    dataio::FrontendConfig fc;
    fc.sample_rate = config::get_int(kv, "sample_rate", fc.sample_rate);
    fc.frame_length = config::get_int(kv, "frame_length", fc.frame_length);
    fc.hop_length = config::get_int(kv, "hop_length", fc.hop_length);
    fc.fft_size = config::get_int(kv, "fft_size", fc.fft_size);
    fc.n_mels = config::get_int(kv, "n_mels", fc.n_mels);
    fc.f_min = config::get_double(kv, "f_min", fc.f_min);
    fc.f_max = config::get_double(kv, "f_max", fc.f_max);
    fc.log_floor = config::get_double(kv, "log_floor", fc.log_floor);
    fc.video_fps = config::get_int(kv, "video_fps", fc.video_fps);
    fc.validate();
    return fc;
}

std::set<std::string> with_frontend(std::set<std::string> keys) {
    keys.insert(kFrontendKeys.begin(), kFrontendKeys.end());
    return keys;
}

// Registers one --key flag per config key; flags passed on the command line
// override config-file entries.
struct KvFlags {
    std::vector<std::pair<std::string, std::shared_ptr<std::string>>> values;
    std::vector<CLI::Option*> opts;

    void add(CLI::App* sub, const std::set<std::string>& keys) {
        for (const std::string& key : keys) {
            auto store = std::make_shared<std::string>();
            opts.push_back(sub->add_option("--" + key, *store, "override config key " + key));
            values.emplace_back(key, store);
        }
    }
    config::KV overrides() const {
        config::KV kv;
        for (std::size_t i = 0; i < values.size(); ++i)
            if (opts[i]->count() > 0) kv[values[i].first] = *values[i].second;
        return kv;
    }
};

config::KV load_kv(const std::string& config_path, const KvFlags& flags,
                   const std::set<std::string>& allowed) {
    config::KV kv;
    if (!config_path.empty()) kv = config::parse_file(config_path);
    kv = config::merge(std::move(kv), flags.overrides());
    config::require_known(kv, allowed);
    return kv;
}

void append_manifest(const fs::path& primary_out, json record) {
    fs::path dir = fs::is_directory(primary_out) ? primary_out : primary_out.parent_path();
    if (dir.empty()) dir = ".";
    fs::create_directories(dir);
    std::ofstream out(dir / "run_manifest.jsonl", std::ios::app);
    if (!out) throw DataError("cannot append manifest in: " + dir.string());
    out << record.dump() << "\n";
}

json manifest_record(const std::string& command, const config::KV& kv, std::uint64_t seed,
                     const std::string& ckpt, const std::vector<std::string>& outputs,
                     double wall_ms) {
    json j;
    j["command"] = command;
    j["config"] = kv;
    j["seed"] = seed;
    j["checkpoint"] = ckpt;
    j["outputs"] = outputs;
    j["wall_ms"] = wall_ms;
    return j;
}

std::vector<Mat> load_frames_dir(fs::path dir) {
    if (fs::is_directory(dir / "frames")) dir /= "frames";
    if (!fs::is_directory(dir)) throw DataError("frames directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            files.push_back(entry.path());
    if (files.empty()) throw DataError("no .png frames in: " + dir.string());
    std::sort(files.begin(), files.end());
    std::vector<Mat> frames;
    frames.reserve(files.size());
    for (const fs::path& f : files) frames.push_back(png::load_gray8(f));
    return frames;
}

void check_frame_dims(const model::ModelDims& d, const std::vector<Mat>& raw) {
    if (raw[0].rows() != d.image_h || raw[0].cols() != d.image_w) {
        char buf[200];
        std::snprintf(buf, sizeof buf,
                      "checkpoint expects %dx%d frames (K=%d), frames directory provides %ldx%ld",
                      d.image_h, d.image_w, d.K, static_cast<long>(raw[0].rows()),
                      static_cast<long>(raw[0].cols()));
        throw DataError(buf);
    }
}

// Log-mel image with a fixed [-80, 0] dB range, low bands at the bottom.
void save_mel_png(const Mat& logmel, const fs::path& path) {
    const double to_db = 10.0 / std::log(10.0);
    Mat img(logmel.cols(), logmel.rows());
    for (Eigen::Index t = 0; t < logmel.rows(); ++t)
        for (Eigen::Index m = 0; m < logmel.cols(); ++m) {
            const double db = std::clamp(logmel(t, m) * to_db, -80.0, 0.0);
            img(logmel.cols() - 1 - m, t) = (db + 80.0) / 80.0;
        }
    png::save_gray8(img, path);
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    }
};

// ---- synth -------------------------------------------------------------------------

const std::set<std::string> kSynthKeys = with_frontend(
    {"n_sequences", "seq_length", "image_h", "image_w", "modes_per_input", "noise_level",
     "seed", "context_frames"});

int cmd_synth(const std::string& config_path, const KvFlags& flags, const fs::path& out) {
    Timer timer;
    const config::KV kv = load_kv(config_path, flags, kSynthKeys);

    dataio::SyntheticTaskConfig cfg;
    cfg.frontend = frontend_from_kv(kv);
    cfg.n_sequences = config::get_int(kv, "n_sequences", cfg.n_sequences);
    cfg.seq_length = config::get_int(kv, "seq_length", cfg.seq_length);
    cfg.image_h = config::get_int(kv, "image_h", cfg.image_h);
    cfg.image_w = config::get_int(kv, "image_w", cfg.image_w);
    cfg.modes_per_input = config::get_int(kv, "modes_per_input", cfg.modes_per_input);
    cfg.noise_level = config::get_double(kv, "noise_level", cfg.noise_level);
    cfg.seed = config::get_u64(kv, "seed", cfg.seed);
    cfg.K = config::get_int(kv, "context_frames", cfg.K);
    cfg.validate();

    const auto data = dataio::generate_synthetic(cfg);
    dataio::write_dataset(data, out);
    std::printf("wrote %zu sequences to %s\n", data.size(), out.string().c_str());

    append_manifest(out, manifest_record("synth", kv, cfg.seed, "", {out.string()}, timer.ms()));
    return 0;
}

// ---- train -------------------------------------------------------------------------

const std::set<std::string> kTrainKeys = with_frontend(
    {"epochs", "batch_size", "learning_rate", "lambda", "beta", "grad_clip", "seed",
     "latent_dim", "hidden_dim", "embed_dim", "context_frames"});

int cmd_train(const fs::path& data_dir, const std::string& config_path, const KvFlags& flags,
              const fs::path& out) {
    Timer timer;
    const config::KV kv = load_kv(config_path, flags, kTrainKeys);
    const dataio::FrontendConfig fc = frontend_from_kv(kv);
    const int K = config::get_int(kv, "context_frames", 5);

    const auto paired = dataio::load_paired_dataset(data_dir, fc, K);
    if (paired.empty()) throw DataError("dataset is empty: " + data_dir.string());
    std::vector<training::TrainingExample> examples;
    examples.reserve(paired.size());
    for (const auto& ps : paired) examples.push_back({ps.frames, ps.audio});

    model::ModelDims dims;
    dims.audio_dim = static_cast<int>(examples[0].audio.cols());
    dims.image_h = static_cast<int>(examples[0].frames[0].frames[0].rows());
    dims.image_w = static_cast<int>(examples[0].frames[0].frames[0].cols());
    dims.K = K;
    dims.latent_dim = config::get_int(kv, "latent_dim", dims.latent_dim);
    dims.hidden_dim = config::get_int(kv, "hidden_dim", dims.hidden_dim);
    dims.embed_dim = config::get_int(kv, "embed_dim", dims.embed_dim);

    training::TrainConfig tc;
    tc.lambda = config::get_double(kv, "lambda", tc.lambda);
    tc.beta = config::get_double(kv, "beta", tc.beta);
    tc.learning_rate = config::get_double(kv, "learning_rate", tc.learning_rate);
    tc.epochs = config::get_int(kv, "epochs", tc.epochs);
    tc.batch_size = config::get_int(kv, "batch_size", tc.batch_size);
    tc.seed = config::get_u64(kv, "seed", tc.seed);
    tc.grad_clip = config::get_double(kv, "grad_clip", tc.grad_clip);

    const fs::path log_path = out.string() + ".log";
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    std::ofstream log(log_path);
    if (!log) throw DataError("cannot write epoch log: " + log_path.string());

    const model::ModelParams initial = model::init_params(dims, tc.seed);
    const training::TrainResult result = training::train(
        examples, initial, tc, [&](const model::ModelParams&, const training::EpochRecord& r) {
            const std::string line = training::format_epoch(r);
            log << line << "\n";
            std::printf("%s\n", line.c_str());
        });

    checkpoint::save_checkpoint({result.params, fc}, out);
    std::printf("wrote checkpoint %s (%d epochs)\n", out.string().c_str(), tc.epochs);

    append_manifest(out, manifest_record("train", kv, tc.seed, out.string(),
                                         {out.string(), log_path.string()}, timer.ms()));
    return 0;
}

// ---- generate ------------------------------------------------------------------------

const std::set<std::string> kGenerateKeys = {"seed", "gl_iters", "gl_momentum"};

struct Generation {
    Mat mel_rows;  // N x audio_dim, model output
    Mat logmel;    // (N*group) x n_mels
    dsp::Waveform wav;
};

Generation run_generation(const checkpoint::Checkpoint& ckpt, const model::FrameStream& clips,
                          std::uint64_t seed, int gl_iters, double gl_momentum) {
    Generation g;
    g.mel_rows = model::generate(clips, ckpt.params, seed);
    g.logmel = dataio::ungroup_mel(g.mel_rows, ckpt.frontend.n_mels);

    dsp::MelSpectrogram mel;
    mel.frames = g.logmel;
    mel.n_mels = ckpt.frontend.n_mels;
    mel.config = ckpt.frontend.stft();
    mel.log_floor = ckpt.frontend.log_floor;
    mel.sample_rate = ckpt.frontend.sample_rate;
    const Mat mag = dsp::invert_mel(mel, ckpt.frontend.filterbank());
    g.wav = dsp::griffin_lim(mag, ckpt.frontend.stft(), ckpt.frontend.sample_rate, gl_iters,
                             seed, gl_momentum)
                .waveform;
    return g;
}

int cmd_generate(const fs::path& ckpt_path, const fs::path& frames_dir,
                 const std::string& config_path, const KvFlags& flags, const fs::path& out) {
    Timer timer;
    const config::KV kv = load_kv(config_path, flags, kGenerateKeys);
    const std::uint64_t seed = config::get_u64(kv, "seed", 0);
    const int gl_iters = config::get_int(kv, "gl_iters", 60);
    const double gl_momentum = config::get_double(kv, "gl_momentum", 0.99);

    const checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(ckpt_path);
    const std::vector<Mat> raw = load_frames_dir(frames_dir);
    check_frame_dims(ckpt.params.dims, raw);
    const model::FrameStream clips = dataio::make_context_clips(raw, ckpt.params.dims.K);

    const Generation g = run_generation(ckpt, clips, seed, gl_iters, gl_momentum);
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    dataio::save_wav(g.wav, out);
    fs::path mel_png = out;
    mel_png.replace_extension(".png");
    save_mel_png(g.logmel, mel_png);
    std::printf("wrote %s and %s (%ld samples)\n", out.string().c_str(),
                mel_png.string().c_str(), static_cast<long>(g.wav.samples.size()));

    append_manifest(out, manifest_record("generate", kv, seed, ckpt_path.string(),
                                         {out.string(), mel_png.string()}, timer.ms()));
    return 0;
}

// ---- diversity -----------------------------------------------------------------------

const std::set<std::string> kDiversityKeys = {"seed", "n_samples", "gl_iters", "gl_momentum"};

int cmd_diversity(const fs::path& ckpt_path, const fs::path& frames_dir,
                  const std::string& config_path, const KvFlags& flags, const fs::path& out) {
    Timer timer;
    const config::KV kv = load_kv(config_path, flags, kDiversityKeys);
    const std::uint64_t seed = config::get_u64(kv, "seed", 0);
    const int n = config::get_int(kv, "n_samples", 8);
    const int gl_iters = config::get_int(kv, "gl_iters", 60);
    const double gl_momentum = config::get_double(kv, "gl_momentum", 0.99);
    if (n < 2) throw ConfigError("n_samples must be at least 2");

    const checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(ckpt_path);
    const std::vector<Mat> raw = load_frames_dir(frames_dir);
    check_frame_dims(ckpt.params.dims, raw);
    const model::FrameStream clips = dataio::make_context_clips(raw, ckpt.params.dims.K);

    fs::create_directories(out);
    std::vector<Mat> mels;
    std::vector<std::string> outputs;
    for (int i = 0; i < n; ++i) {
        // Sample i uses seed + i, so the whole set is pinned by the base seed.
        const Generation g = run_generation(ckpt, clips, seed + static_cast<std::uint64_t>(i),
                                            gl_iters, gl_momentum);
        char name[32];
        std::snprintf(name, sizeof name, "sample_%02d.wav", i);
        dataio::save_wav(g.wav, out / name);
        outputs.push_back((out / name).string());
        mels.push_back(g.mel_rows);
    }

    double dmin = 0.0, dmax = 0.0, dsum = 0.0;
    long count = 0;
    std::string csv = "a,b,mel_l2\n";
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) {
            const double d = (mels[a] - mels[b]).norm();
            char row[64];
            std::snprintf(row, sizeof row, "%d,%d,%.17g\n", a, b, d);
            csv += row;
            dmin = (count == 0) ? d : std::min(dmin, d);
            dmax = (count == 0) ? d : std::max(dmax, d);
            dsum += d;
            ++count;
        }
    char summary[128];
    std::snprintf(summary, sizeof summary, "SUMMARY,min,%.17g\nSUMMARY,mean,%.17g\nSUMMARY,max,%.17g\n",
                  dmin, dsum / static_cast<double>(count), dmax);
    csv += summary;
    const fs::path csv_path = out / "distances.csv";
    std::ofstream csv_out(csv_path, std::ios::binary);
    csv_out << csv;
    csv_out.close();
    outputs.push_back(csv_path.string());
    std::printf("wrote %d samples and %s (mean pairwise mel L2 %.6g)\n", n,
                csv_path.string().c_str(), dsum / static_cast<double>(count));

    append_manifest(out, manifest_record("diversity", kv, seed, ckpt_path.string(), outputs,
                                         timer.ms()));
    return 0;
}

// ---- evaluate ------------------------------------------------------------------------

const std::set<std::string> kEvaluateKeys = with_frontend({});

std::set<std::string> wav_names(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::set<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".wav")
            names.insert(entry.path().filename().string());
    return names;
}

int cmd_evaluate(const fs::path& ref_dir, const fs::path& hyp_dir,
                 const std::string& config_path, const KvFlags& flags, const fs::path& out) {
    Timer timer;
    const config::KV kv = load_kv(config_path, flags, kEvaluateKeys);
    const dataio::FrontendConfig fc = frontend_from_kv(kv);

    const std::set<std::string> ref_names = wav_names(ref_dir);
    const std::set<std::string> hyp_names = wav_names(hyp_dir);
    std::string only_ref, only_hyp;
    for (const std::string& n : ref_names)
        if (!hyp_names.count(n)) only_ref += " " + n;
    for (const std::string& n : hyp_names)
        if (!ref_names.count(n)) only_hyp += " " + n;
    if (!only_ref.empty() || !only_hyp.empty())
        throw DataError("file sets differ; only in ref:" + only_ref + "; only in hyp:" + only_hyp);
    if (ref_names.empty()) throw DataError("no .wav files to evaluate");

    std::vector<metrics::EvalPair> pairs;
    for (const std::string& n : ref_names) pairs.push_back({n, ref_dir / n, hyp_dir / n});

    const metrics::EvalReport rep = metrics::evaluate_batch(pairs, fc);
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    std::ofstream csv(out, std::ios::binary);
    if (!csv) throw DataError("cannot write report: " + out.string());
    csv << metrics::to_csv(rep);
    csv.close();
    std::printf("evaluated %zu pairs (%d scored): mean stoi %.4f estoi %.4f mel_l1 %.4f\n",
                pairs.size(), rep.n_scored, rep.mean_stoi, rep.mean_estoi, rep.mean_mel_l1);

    append_manifest(out, manifest_record("evaluate", kv, 0, "", {out.string()}, timer.ms()));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stochastic video-to-speech pipeline"};
    app.require_subcommand(1);

    std::string config_path, data_dir, ckpt_path, frames_dir, ref_dir, hyp_dir, out_path;

    CLI::App* synth = app.add_subcommand("synth", "render a synthetic paired dataset");
    synth->add_option("--config", config_path, "key = value config file");
    synth->add_option("--out", out_path, "dataset output directory")->required();
    KvFlags synth_flags;
    synth_flags.add(synth, kSynthKeys);

    CLI::App* train = app.add_subcommand("train", "train a model on a dataset directory");
    train->add_option("--data", data_dir, "dataset root directory")->required();
    train->add_option("--config", config_path, "key = value config file");
    train->add_option("--out", out_path, "checkpoint output path (epoch log at <out>.log)")
        ->required();
    KvFlags train_flags;
    train_flags.add(train, kTrainKeys);

    CLI::App* generate = app.add_subcommand("generate", "sample speech for a frame stream");
    generate->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    generate->add_option("--frames", frames_dir, "directory of frame PNGs")->required();
    generate->add_option("--config", config_path, "key = value config file");
    generate->add_option("--out", out_path, "output WAV path (mel image at <out>.png)")
        ->required();
    KvFlags generate_flags;
    generate_flags.add(generate, kGenerateKeys);

    CLI::App* diversity =
        app.add_subcommand("diversity", "draw several samples for one frame stream");
    diversity->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    diversity->add_option("--frames", frames_dir, "directory of frame PNGs")->required();
    diversity->add_option("--config", config_path, "key = value config file");
    diversity->add_option("--out", out_path, "output directory")->required();
    KvFlags diversity_flags;
    diversity_flags.add(diversity, kDiversityKeys);

    CLI::App* evaluate = app.add_subcommand("evaluate", "score generated audio against references");
    evaluate->add_option("--ref", ref_dir, "reference WAV directory")->required();
    evaluate->add_option("--hyp", hyp_dir, "generated WAV directory")->required();
    evaluate->add_option("--config", config_path, "key = value config file");
    evaluate->add_option("--out", out_path, "report CSV path")->required();
    KvFlags evaluate_flags;
    evaluate_flags.add(evaluate, kEvaluateKeys);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(config_path, synth_flags, out_path);
        if (train->parsed()) return cmd_train(data_dir, config_path, train_flags, out_path);
        if (generate->parsed())
            return cmd_generate(ckpt_path, frames_dir, config_path, generate_flags, out_path);
        if (diversity->parsed())
            return cmd_diversity(ckpt_path, frames_dir, config_path, diversity_flags, out_path);
        if (evaluate->parsed())
            return cmd_evaluate(ref_dir, hyp_dir, config_path, evaluate_flags, out_path);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
