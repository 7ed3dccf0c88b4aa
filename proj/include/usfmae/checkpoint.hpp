#pragma once

// Checkpoint container: magic "USFM", u16 format version, u32-length-prefixed
// UTF-8 JSON header (config, parameter directory, provenance meta), then
// little-endian float32 payloads. Round-trips are byte-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "usfmae/errors.hpp"
#include "usfmae/model.hpp"

namespace usfmae {

inline constexpr char kCheckpointMagic[4] = {'U', 'S', 'F', 'M'};
inline constexpr uint16_t kCheckpointVersion = 1;

inline nlohmann::ordered_json config_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["image_size"] = c.image_size;
    j["patch_size"] = c.patch_size;
    j["in_channels"] = c.in_channels;
    j["encoder_dim"] = c.encoder_dim;
    j["encoder_depth"] = c.encoder_depth;
    j["encoder_heads"] = c.encoder_heads;
    j["decoder_dim"] = c.decoder_dim;
    j["decoder_depth"] = c.decoder_depth;
    j["decoder_heads"] = c.decoder_heads;
    j["mlp_ratio"] = c.mlp_ratio;
    j["mask_ratio"] = c.mask_ratio;
    j["num_classes"] = c.num_classes;
    j["head_hidden"] = c.head_hidden;
    j["mean_pool"] = c.mean_pool;
    return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.encoder_dim = j.at("encoder_dim").get<int>();
    c.encoder_depth = j.at("encoder_depth").get<int>();
    c.encoder_heads = j.at("encoder_heads").get<int>();
    c.decoder_dim = j.at("decoder_dim").get<int>();
    c.decoder_depth = j.at("decoder_depth").get<int>();
    c.decoder_heads = j.at("decoder_heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.mask_ratio = j.at("mask_ratio").get<float>();
    c.num_classes = j.at("num_classes").get<int>();
    c.head_hidden = j.value("head_hidden", 0);
    c.mean_pool = j.value("mean_pool", false);
    return c;
}

inline void save_checkpoint(const VitMae<float>& model, const std::string& path,
                            const nlohmann::ordered_json& meta = {}) {
    nlohmann::ordered_json header;
    header["config"] = config_to_json(model.config);
    nlohmann::ordered_json dir = nlohmann::ordered_json::array();
    uint64_t offset = 0;
    for (const auto& name : model.param_names()) {
        const auto& p = model.param(name);
        nlohmann::ordered_json e;
        e["name"] = name;
        e["shape"] = p.shape();
        e["offset"] = offset;
        dir.push_back(e);
        offset += p.numel() * sizeof(float);
    }
    header["params"] = dir;
    if (!meta.is_null() && !meta.empty()) header["meta"] = meta;
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, 4);
    const uint16_t ver = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const uint32_t hlen = static_cast<uint32_t>(htext.size());
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& name : model.param_names()) {
        const auto& d = model.param(name).data();
        out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(float)));
    }
    if (!out) throw DataError("short write while saving checkpoint: " + path);
}

inline VitMae<float> load_checkpoint(const std::string& path, nlohmann::json* meta_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError("not a checkpoint file (bad magic): " + path);
    uint16_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (ver != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(ver) + ": " + path);
    uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    in.read(htext.data(), hlen);
    if (!in) throw DataError("truncated checkpoint header: " + path);
    nlohmann::json header = nlohmann::json::parse(htext, nullptr, false);
    if (header.is_discarded()) throw DataError("corrupt checkpoint header: " + path);

    VitMae<float> model;
    model.config = config_from_json(header.at("config"));
    model.config.validate();
    for (const auto& e : header.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        const Shape shape = e.at("shape").get<Shape>();
        std::vector<float> data(shape_numel(shape));
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
        if (!in) throw DataError("truncated checkpoint payload at '" + name + "': " + path);
        model.add_param(name, Tensor<float>::from_data(shape, std::move(data)));
    }
    model.rebuild_position_tables();
    if (meta_out) *meta_out = header.value("meta", nlohmann::json::object());
    return model;
}

}  // namespace usfmae
