#include "gatefusion/model_io.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

using nlohmann::json;

namespace gatefusion {

namespace {

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& buf, size_t& pos) {
    if (pos + 4 > buf.size()) throw ModelIoError("model file truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

}  // namespace

void save_container(const std::string& path, const char magic[4],
                    const nlohmann::json& metadata,
                    const std::vector<const Parameter*>& params) {
    std::string payload;
    put_u32(payload, kModelFormatVersion);
    const std::string meta = metadata.dump();
    put_u32(payload, static_cast<uint32_t>(meta.size()));
    payload.append(meta);
    put_u32(payload, static_cast<uint32_t>(params.size()));
    for (const Parameter* p : params) {
        put_u32(payload, static_cast<uint32_t>(p->name.size()));
        payload.append(p->name);
        put_u32(payload, static_cast<uint32_t>(p->value.ndim()));
        for (int d : p->value.shape()) put_u32(payload, static_cast<uint32_t>(d));
        const size_t bytes = p->value.size() * sizeof(float);
        const size_t off = payload.size();
        payload.resize(off + bytes);
        std::memcpy(payload.data() + off, p->value.data(), bytes);
    }
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));

    const std::filesystem::path parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ModelIoError("cannot open model file for writing: " + path);
    out.write(magic, 4);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::string tail;
    put_u32(tail, crc);
    out.write(tail.data(), 4);
    if (!out) throw ModelIoError("write failed: " + path);
}

ModelContainer load_container(const std::string& path, const char expected_magic[4]) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelIoError("cannot open model file: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw ModelIoError("model file truncated: " + path);
    if (std::memcmp(buf.data(), expected_magic, 4) != 0) {
        throw ModelIoError("bad magic in " + path + ": expected '" +
                           std::string(expected_magic, 4) + "', got '" + buf.substr(0, 4) + "'");
    }
    const std::string payload = buf.substr(4, buf.size() - 8);
    size_t crc_pos = buf.size() - 4;
    const uint32_t stored_crc = get_u32(buf, crc_pos);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
    if (crc != stored_crc) throw ModelIoError("checksum mismatch in " + path);

    size_t pos = 0;
    const uint32_t version = get_u32(payload, pos);
    if (version != kModelFormatVersion) {
        throw ModelIoError("incompatible model format_version " + std::to_string(version) +
                           " in " + path + " (this build reads version " +
                           std::to_string(kModelFormatVersion) + ")");
    }
    const uint32_t meta_len = get_u32(payload, pos);
    if (pos + meta_len > payload.size()) throw ModelIoError("model file truncated: " + path);
    ModelContainer container;
    container.metadata = json::parse(payload.substr(pos, meta_len));
    pos += meta_len;

    const uint32_t nparams = get_u32(payload, pos);
    for (uint32_t i = 0; i < nparams; ++i) {
        const uint32_t name_len = get_u32(payload, pos);
        if (pos + name_len > payload.size()) throw ModelIoError("model file truncated: " + path);
        std::string name = payload.substr(pos, name_len);
        pos += name_len;
        const uint32_t ndim = get_u32(payload, pos);
        std::vector<int> shape;
        for (uint32_t d = 0; d < ndim; ++d)
            shape.push_back(static_cast<int>(get_u32(payload, pos)));
        const size_t count = Tensor::shape_size(shape);
        if (pos + count * sizeof(float) > payload.size())
            throw ModelIoError("model file truncated: " + path);
        std::vector<float> data(count);
        std::memcpy(data.data(), payload.data() + pos, count * sizeof(float));
        pos += count * sizeof(float);
        container.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return container;
}

}  // namespace gatefusion
