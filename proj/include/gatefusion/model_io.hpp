#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "gatefusion/tensor.hpp"

namespace gatefusion {

struct ModelIoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary model container: 4 magic bytes, little-endian u32 format version,
// JSON metadata block, named float32 parameter blobs with shape headers,
// then a CRC32 over everything after the magic.
inline constexpr uint32_t kModelFormatVersion = 1;

void save_container(const std::string& path, const char magic[4],
                    const nlohmann::json& metadata,
                    const std::vector<const Parameter*>& params);

struct ModelContainer {
    nlohmann::json metadata;
    std::vector<Parameter> params;
};

ModelContainer load_container(const std::string& path, const char expected_magic[4]);

}  // namespace gatefusion
