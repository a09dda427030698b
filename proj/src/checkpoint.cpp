#include "adaptfed/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace adaptfed {

namespace {

std::string header_json(const Checkpoint& ckpt) {
    nlohmann::json h;
    h["schema_version"] = 1;
    h["kind"] = ckpt.kind;
    h["sections"] = nlohmann::json::array();
    for (const auto& [name, data] : ckpt.sections)
        h["sections"].push_back({{"name", name}, {"count", data.size()}});
    return h.dump();
}

void append_le(std::string& out, const std::vector<double>& v) {
    static_assert(sizeof(double) == 8);
    for (double d : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        if constexpr (std::endian::native == std::endian::big)
            bits = __builtin_bswap64(bits);
        char buf[8];
        std::memcpy(buf, &bits, 8);
        out.append(buf, 8);
    }
}

}  // namespace

std::size_t Checkpoint::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, data] : sections) n += data.size();
    return n;
}

const std::vector<double>& Checkpoint::section(const std::string& name) const {
    for (const auto& [n, data] : sections)
        if (n == name) return data;
    throw std::runtime_error("checkpoint: no section named '" + name + "'");
}

void atomic_write_text(const std::string& path, const std::string& text) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        out << text;
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("rename failed: " + path);
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string blob = header_json(ckpt);
    blob += '\n';
    for (const auto& [name, data] : ckpt.sections) append_le(blob, data);
    atomic_write_text(path, blob);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string header;
    std::getline(in, header);
    auto h = nlohmann::json::parse(header);
    if (h.at("schema_version") != 1)
        throw std::runtime_error("checkpoint: unsupported schema_version");
    Checkpoint ckpt;
    ckpt.kind = h.at("kind");
    for (const auto& s : h.at("sections")) {
        std::size_t count = s.at("count");
        std::vector<double> data(count);
        std::vector<char> raw(count * 8);
        in.read(raw.data(), std::streamsize(raw.size()));
        if (std::size_t(in.gcount()) != raw.size())
            throw std::runtime_error("checkpoint: truncated payload in " + path);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, raw.data() + i * 8, 8);
            if constexpr (std::endian::native == std::endian::big)
                bits = __builtin_bswap64(bits);
            std::memcpy(&data[i], &bits, 8);
        }
        ckpt.sections.emplace_back(s.at("name"), std::move(data));
    }
    return ckpt;
}

std::size_t checkpoint_byte_size(const Checkpoint& ckpt) {
    return header_json(ckpt).size() + 1 + 8 * ckpt.scalar_count();
}

}  // namespace adaptfed
