#pragma once
// On-disk model checkpoints: a text header (audio frontend + model dims)
// followed by named raw-float64 parameter tensors in a fixed traversal
// order, so identical training runs produce byte-identical files.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "vts/common.hpp"
#include "vts/dataio.hpp"
#include "vts/model.hpp"

namespace vts::checkpoint {

struct Checkpoint {
    model::ModelParams params;  // carries ModelDims
    dataio::FrontendConfig frontend;
};

namespace detail {

constexpr const char* kMagic = "VTSCKPT1";

inline std::string dims_line(const model::ModelDims& d) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "dims=%d,%d,%d,%d,%d,%d,%d,%d,%d,%d", d.audio_dim,
                  d.latent_dim, d.hidden_dim, d.embed_dim, d.K, d.image_h, d.image_w,
                  d.conv_channels[0], d.conv_channels[1], d.conv_channels[2]);
    return buf;
}

inline model::ModelDims parse_dims(const std::string& line) {
    model::ModelDims d;
    if (std::sscanf(line.c_str(), "dims=%d,%d,%d,%d,%d,%d,%d,%d,%d,%d", &d.audio_dim,
                    &d.latent_dim, &d.hidden_dim, &d.embed_dim, &d.K, &d.image_h, &d.image_w,
                    &d.conv_channels[0], &d.conv_channels[1], &d.conv_channels[2]) != 10)
        throw DataError("checkpoint has a malformed dims record: " + line);
    return d;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out << detail::kMagic << "\n";
    for (const auto& [k, v] : ckpt.frontend.to_map()) out << "frontend." << k << "=" << v << "\n";
    out << detail::dims_line(ckpt.params.dims) << "\n";

    std::size_t count = 0;
    model::for_each_tensor(static_cast<const model::ParamsT<Mat>&>(ckpt.params),
                           [&](const std::string&, const Mat&) { ++count; });
    out << "tensors=" << count << "\n";
    model::for_each_tensor(
        static_cast<const model::ParamsT<Mat>&>(ckpt.params),
        [&](const std::string& name, const Mat& t) {
            out << name << "," << t.rows() << "," << t.cols() << "\n";
            out.write(reinterpret_cast<const char*>(t.data()),
                      static_cast<std::streamsize>(sizeof(double) * t.size()));
        });
    if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != detail::kMagic)
        throw DataError("not a checkpoint file: " + path.string());

    std::map<std::string, std::string> fkv;
    model::ModelDims dims;
    bool have_dims = false;
    while (std::getline(in, line)) {
        if (line.rfind("frontend.", 0) == 0) {
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw DataError("checkpoint has a malformed frontend record: " + line);
            fkv[line.substr(9, eq - 9)] = line.substr(eq + 1);
        } else if (line.rfind("dims=", 0) == 0) {
            dims = detail::parse_dims(line);
            have_dims = true;
        } else if (line.rfind("tensors=", 0) == 0) {
            break;
        } else {
            throw DataError("checkpoint has an unexpected record: " + line);
        }
    }
    if (!have_dims) throw DataError("checkpoint is missing its dims record");
    if (line.rfind("tensors=", 0) != 0) throw DataError("checkpoint is missing its tensor table");

    Checkpoint ckpt;
    ckpt.frontend = dataio::FrontendConfig::from_map(fkv);
    ckpt.params = model::zero_params(dims);
    model::for_each_tensor(
        static_cast<model::ParamsT<Mat>&>(ckpt.params), [&](const std::string& name, Mat& t) {
            std::string header;
            if (!std::getline(in, header))
                throw DataError("checkpoint ends before tensor " + name);
            char expect[160];
            std::snprintf(expect, sizeof expect, "%s,%ld,%ld", name.c_str(),
                          static_cast<long>(t.rows()), static_cast<long>(t.cols()));
            if (header != expect)
                throw DataError("checkpoint tensor mismatch: expected " + std::string(expect) +
                                ", found " + header);
            in.read(reinterpret_cast<char*>(t.data()),
                    static_cast<std::streamsize>(sizeof(double) * t.size()));
            if (!in) throw DataError("checkpoint ends inside tensor " + name);
        });
    return ckpt;
}

}  // namespace vts::checkpoint
