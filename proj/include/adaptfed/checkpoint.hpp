#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace adaptfed {

/// On-disk format: a JSON header line {"schema_version":1,"kind":...,
/// "sections":[{"name":...,"count":...},...]} followed by '\n' and the
/// concatenated section payloads as little-endian float64.
struct Checkpoint {
    std::string kind;
    std::vector<std::pair<std::string, std::vector<double>>> sections;

    std::size_t scalar_count() const;
    const std::vector<double>& section(const std::string& name) const;  // throws if absent
};

/// Written atomically (temp file + rename).
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Size in bytes of the serialized form, header included.
std::size_t checkpoint_byte_size(const Checkpoint& ckpt);

/// Write text atomically (temp file + rename); used for metrics and CSVs.
void atomic_write_text(const std::string& path, const std::string& text);

}  // namespace adaptfed
