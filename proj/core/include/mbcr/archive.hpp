#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mbcr/model.hpp"

namespace mbcr {

/// Versioned binary tensor container shared by checkpoints and the
/// preprocessed cache. Layout, all integers little-endian:
///
///   "MBCR" | u32 version | u32 meta_len | meta (key=value text)
///   | u64 tensor_count | tensor*
///   tensor = u32 name_len | name | u32 rank | u64 extent[rank] | f64 data[...]
struct TensorArchive {
    static constexpr std::uint32_t kVersion = 1;

    std::string meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    void write(std::ostream& os) const;
    /// `source` names the stream in error messages.
    static TensorArchive read(std::istream& is, const std::string& source);

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

    const Tensor& at(const std::string& name) const;
};

/// Parameters and batchnorm running statistics, with the ModelSpec as meta.
TensorArchive to_archive(Model& model);
Model from_archive(const TensorArchive& archive);

void save_checkpoint(Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mbcr
