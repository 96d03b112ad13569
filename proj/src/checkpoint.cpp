#include "promptaug/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "promptaug/errors.hpp"
#include "promptaug/util.hpp"

namespace promptaug {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'U', 'G', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

}  // namespace

void save_checkpoint(const std::string& path, nlohmann::json meta,
                     std::span<const Parameter> params) {
    nlohmann::json plist = nlohmann::json::array();
    for (const Parameter& p : params) {
        plist.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"trainable", p.trainable}});
    }
    meta["params"] = std::move(plist);
    meta["byte_order"] = "le";
    const std::string header = meta.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = header.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const Parameter& p : params) {
        out.write(reinterpret_cast<const char*>(p.tensor.data()),
                  static_cast<std::streamsize>(p.tensor.numel() * sizeof(float)));
    }
    if (!out) throw IoError("short write to checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("not a checkpoint file: " + path);
    }
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("truncated checkpoint header: " + path);

    LoadedCheckpoint result;
    result.meta = nlohmann::json::parse(header);
    if (result.meta.value("byte_order", "le") != "le") {
        throw IoError("checkpoint byte order mismatch: " + path);
    }
    for (const auto& entry : result.meta.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        const auto shape = entry.at("shape").get<std::vector<size_t>>();
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!in) throw IoError("truncated buffer '" + name + "' in " + path);
        result.buffers.emplace_back(name, std::move(t));
    }
    return result;
}

uint64_t fingerprint_params(std::span<const Parameter> params) {
    Fnv1a h;
    for (const Parameter& p : params) {
        h.update(p.name);
        for (size_t d : p.tensor.shape()) h.update_value(d);
        h.update(p.tensor.data(), p.tensor.numel() * sizeof(float));
    }
    return h.digest();
}

}  // namespace promptaug
