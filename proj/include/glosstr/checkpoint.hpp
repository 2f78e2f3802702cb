#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glosstr/errors.hpp"
#include "glosstr/model.hpp"

namespace glosstr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

/// Container layout: 8-byte magic, u32 version, u64 metadata length, metadata JSON,
/// then float32 tensors in the order listed under metadata["tensors"].
struct Container {
    nlohmann::json metadata;
    std::vector<std::pair<std::string, Mat<float>>> tensors;
};

inline constexpr char kCheckpointMagic[9] = "GLTRCKPT";
inline constexpr char kAdapterMagic[9] = "GLTRLORA";
inline constexpr std::uint32_t kContainerVersion = 1;

inline void write_container(const std::string &path, const char (&magic)[9], Container c) {
    c.metadata["tensors"] = nlohmann::json::array();
    for (const auto &[name, m] : c.tensors)
        c.metadata["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    const std::string meta = c.metadata.dump(1);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError("cannot write " + path);
    out.write(magic, 8);
    const std::uint32_t version = kContainerVersion;
    const std::uint64_t len = meta.size();
    out.write(reinterpret_cast<const char *>(&version), sizeof version);
    out.write(reinterpret_cast<const char *>(&len), sizeof len);
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    for (const auto &[name, m] : c.tensors)
        out.write(reinterpret_cast<const char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!out)
        throw FormatError("failed writing " + path);
}

inline Container read_container(const std::string &path, const char (&magic)[9]) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open " + path);
    char got[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(got, 8);
    if (!in || std::memcmp(got, magic, 8) != 0)
        throw FormatError(path + ": not a " + std::string(magic, 8) + " container");
    in.read(reinterpret_cast<char *>(&version), sizeof version);
    in.read(reinterpret_cast<char *>(&len), sizeof len);
    if (!in || version != kContainerVersion)
        throw FormatError(path + ": unsupported container version");
    std::string meta(len, '\0');
    in.read(meta.data(), static_cast<std::streamsize>(len));
    Container c;
    try {
        c.metadata = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(path + ": bad metadata: " + e.what());
    }
    for (const auto &t : c.metadata.at("tensors")) {
        Mat<float> m(t.at("rows").get<Index>(), t.at("cols").get<Index>());
        in.read(reinterpret_cast<char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
        if (!in)
            throw FormatError(path + ": truncated tensor data");
        c.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
    return c;
}

/// Writes every non-adapter tensor. `extra` lands in the metadata (vocab checksum, step, metrics).
template <class Model>
void save_checkpoint(const Model &model, const std::string &path, nlohmann::json extra = nlohmann::json::object()) {
    Container c;
    c.metadata = std::move(extra);
    c.metadata["format"] = "glosstr-checkpoint";
    c.metadata["config"] = to_json(model.config());
    c.metadata["base_checksum"] = hex64(model.params().checksum(false));
    const auto &p = model.params();
    for (std::size_t i = 0; i < p.size(); ++i)
        if (!p.info(i).lora)
            c.tensors.emplace_back(p.info(i).name, p.value(i).template cast<float>());
    write_container(path, kCheckpointMagic, std::move(c));
}

inline nlohmann::json read_checkpoint_metadata(const std::string &path) {
    return read_container(path, kCheckpointMagic).metadata;
}

template <class Model>
void assign_tensors(Model &model, const Container &c) {
    auto &p = model.params();
    for (const auto &[name, m] : c.tensors) {
        std::size_t i = p.find(name);
        if (p.value(i).rows() != m.rows() || p.value(i).cols() != m.cols())
            throw FormatError("tensor '" + name + "' has mismatched shape");
        p.value(i) = m.template cast<typename Model::Scalar>();
    }
}

/// Loads a model of the given type; the architecture recorded in the file must match.
template <class Model>
Model load_checkpoint(const std::string &path, nlohmann::json *metadata = nullptr) {
    Container c = read_container(path, kCheckpointMagic);
    ModelConfig cfg = model_config_from_json(c.metadata.at("config"));
    if (cfg.architecture != Model::kArchitecture)
        throw FormatError(path + ": checkpoint holds a " + std::string(to_string(cfg.architecture)) + " model");
    Model model(cfg);
    assign_tensors(model, c);
    if (metadata)
        *metadata = std::move(c.metadata);
    return model;
}

/// Adapter container: only LoRA tensors, tied to the base weights by checksum.
template <class Model>
void save_adapter(Model &model, const std::string &path, double alpha) {
    Container c;
    c.metadata["format"] = "glosstr-adapter";
    c.metadata["base_checksum"] = hex64(model.params().checksum(false));
    c.metadata["alpha"] = alpha;
    c.metadata["layers"] = adapted_layers(model);
    Index rank = 0;
    model.for_each_linear([&](auto &lin) {
        if (lin.has_lora)
            rank = lin.rank;
    });
    c.metadata["rank"] = rank;
    const auto &p = model.params();
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p.info(i).lora)
            c.tensors.emplace_back(p.info(i).name, p.value(i).template cast<float>());
    write_container(path, kAdapterMagic, std::move(c));
}

template <class Model>
void load_adapter(Model &model, const std::string &path) {
    Container c = read_container(path, kAdapterMagic);
    if (c.metadata.at("base_checksum").get<std::string>() != hex64(model.params().checksum(false)))
        throw FormatError(path + ": adapter was trained on different base weights");
    auto layers = c.metadata.at("layers").get<std::vector<std::string>>();
    attach_lora(
        model, c.metadata.at("rank").get<Index>(), c.metadata.at("alpha").get<double>(),
        [&](const std::string &n) { return std::find(layers.begin(), layers.end(), n) != layers.end(); });
    assign_tensors(model, c);
}

} // namespace glosstr
