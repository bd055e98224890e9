#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aqcast/tensor.hpp"

namespace aqcast {

/// Binary container shared by checkpoints and dataset archives:
///
///   magic (4 bytes) | u32 version | u64 header length | JSON header | payload
///
/// Integers and payload doubles are little-endian. The header carries a
/// "tensors" array of {name, shape, offset}; offsets count doubles from the
/// payload start. The file ends exactly at the payload end.
struct ContainerContents {
    std::uint32_t version = 0;
    nlohmann::json header;
    std::map<std::string, Tensor> tensors;

    const Tensor& tensor(const std::string& name) const;  // FormatError if absent
};

using NamedTensor = std::pair<std::string, const Tensor*>;

void write_container(const std::filesystem::path& path, std::string_view magic, std::uint32_t version,
                     nlohmann::json header, const std::vector<NamedTensor>& tensors);

// FormatError on a wrong magic, truncation or an inconsistent directory;
// VersionError when the version is not in `supported`.
ContainerContents read_container(const std::filesystem::path& path, std::string_view magic,
                                 const std::vector<std::uint32_t>& supported);

}  // namespace aqcast
