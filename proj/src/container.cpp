#include "aqcast/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "aqcast/error.hpp"

namespace aqcast {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

const Tensor& ContainerContents::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("container has no tensor '" + name + "'");
    return it->second;
}

void write_container(const std::filesystem::path& path, std::string_view magic, std::uint32_t version,
                     nlohmann::json header, const std::vector<NamedTensor>& tensors) {
    if (magic.size() != 4) throw ContractError("container magic must be 4 bytes");
    auto directory = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        directory.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
        offset += t->size();
    }
    header["tensors"] = std::move(directory);
    const std::string text = header.dump();
    const std::uint64_t length = text.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(magic.data(), 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!out) throw DataError("write to " + path.string() + " failed");
}

ContainerContents read_container(const std::filesystem::path& path, std::string_view magic,
                                 const std::vector<std::uint32_t>& supported) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto fail = [&](const std::string& why) { return FormatError(path.string() + ": " + why); };

    constexpr std::size_t prefix = 4 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (bytes.size() < prefix) throw fail("truncated preamble");
    if (bytes.compare(0, 4, magic) != 0) throw fail("not a '" + std::string(magic) + "' file");
    ContainerContents c;
    std::memcpy(&c.version, bytes.data() + 4, sizeof c.version);
    std::uint64_t length = 0;
    std::memcpy(&length, bytes.data() + 8, sizeof length);
    if (std::find(supported.begin(), supported.end(), c.version) == supported.end())
        throw VersionError(path.string() + ": unsupported format version " + std::to_string(c.version));
    if (length > bytes.size() - prefix) throw fail("truncated header");
    try {
        c.header = nlohmann::json::parse(bytes.begin() + prefix, bytes.begin() + static_cast<std::ptrdiff_t>(prefix + length));
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("corrupt header: ") + e.what());
    }
    const std::size_t payload = prefix + length;
    const std::size_t available = (bytes.size() - payload) / sizeof(double);
    std::size_t expected = 0;
    try {
        for (const auto& entry : c.header.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<Shape>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            if (shape.empty() || std::find(shape.begin(), shape.end(), 0u) != shape.end())
                throw fail("tensor '" + name + "' has an invalid shape");
            const auto n = shape_size(shape);
            if (offset != expected || offset + n > available) throw fail("payload truncated at tensor '" + name + "'");
            std::vector<double> values(n);
            std::memcpy(values.data(), bytes.data() + payload + offset * sizeof(double), n * sizeof(double));
            c.tensors.emplace(name, Tensor(shape, std::move(values)));
            expected += n;
        }
    } catch (const nlohmann::json::exception& e) {
        throw fail(std::string("corrupt tensor directory: ") + e.what());
    }
    if (payload + expected * sizeof(double) != bytes.size()) throw fail("trailing bytes after payload");
    return c;
}

}  // namespace aqcast
