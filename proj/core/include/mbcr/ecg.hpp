#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mbcr/tensor.hpp"

namespace mbcr {

/// The eight mutually independent leads, in network row order.
inline const std::array<std::string, 8> kCanonicalLeads = {"II", "III", "V1", "V2", "V3", "V4", "V5", "V6"};

struct EcgRecord {
    std::string id;
    int sample_rate_hz = 0;
    std::vector<std::string> lead_names;
    std::vector<std::vector<double>> samples;  // [lead][time], millivolts
    std::string label_text;
    std::optional<int> label;

    std::size_t n_leads() const { return samples.size(); }
    std::size_t n_samples() const { return samples.empty() ? 0 : samples.front().size(); }
    double duration_seconds() const;

    friend bool operator==(const EcgRecord&, const EcgRecord&) = default;
};

/// Text record format:
///   line 1: id,sample_rate_hz,n_leads,n_samples,label_text  (fields may be "quoted")
///   line 2: lead names, comma separated
///   then n_samples lines of n_leads decimal values (time-major)
/// Errors carry the 1-based line number.
EcgRecord parse_record(std::istream& is);
void write_record(std::ostream& os, const EcgRecord& rec);
EcgRecord read_record_file(const std::filesystem::path& path);
void write_record_file(const std::filesystem::path& path, const EcgRecord& rec);

struct Rejection {
    std::string id;
    std::string reason;
};

struct FilterResult {
    std::vector<EcgRecord> kept;
    std::vector<Rejection> rejected;
};

/// Keeps records at least `min_seconds` long (inclusive) whose samples are all
/// finite and which carry every canonical lead.
FilterResult filter_valid(std::vector<EcgRecord> records, double min_seconds = 8.0);

/// 0 for "normal electrocardiogram" / "normal sinus rhythm" (trimmed,
/// case-insensitive), 1 for anything else. Empty text is an error.
int map_label(std::string_view label_text);

/// Integer decimation: keeps samples 0, k, 2k, ... with k = rate / target.
EcgRecord downsample(const EcgRecord& rec, int target_hz);

/// Rows reordered to `order`; throws "missing lead X".
EcgRecord select_leads(const EcgRecord& rec, std::span<const std::string> order = kCanonicalLeads);

/// Leading window of `seconds` as a [n_leads, seconds*rate] tensor.
Tensor window(const EcgRecord& rec, double seconds = 8.0);

struct LabeledId {
    std::string id;
    int label = 0;
};

/// Stratified fold assignment. The majority class is subsampled (seeded) to
/// the minority count first; dropped ids are listed in `excluded`.
struct FoldPlan {
    std::uint64_t seed = 0;
    std::size_t n_folds = 10;
    std::map<std::string, std::size_t> assignments;
    std::vector<std::string> excluded;

    /// Ids in fold `f`, sorted.
    std::vector<std::string> fold_ids(std::size_t f) const;
};

FoldPlan make_folds(std::span<const LabeledId> ids, std::uint64_t seed, std::size_t n_folds = 10);

struct PreprocessConfig {
    int target_hz = 250;
    double window_s = 8.0;
    double min_seconds = 8.0;

    static PreprocessConfig profile(std::string_view name);
};

/// Preprocessed examples: inputs[i] is [8, window_s*target_hz].
struct Dataset {
    std::vector<std::string> ids;
    std::vector<Tensor> inputs;
    std::vector<int> labels;

    std::size_t size() const { return ids.size(); }
    /// Stack selected examples into [N, leads, time]; `lead` picks one row.
    Tensor batch(std::span<const std::size_t> indices, std::optional<std::size_t> lead = std::nullopt) const;
    std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

struct PreprocessResult {
    Dataset data;
    std::vector<Rejection> rejected;
};

/// filter -> label -> downsample -> select_leads -> window, in record order.
PreprocessResult preprocess(const std::vector<EcgRecord>& records, const PreprocessConfig& cfg);

/// One record path per line; blank lines and '#' comments are skipped.
/// Relative paths resolve against the manifest's directory.
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<std::string>& entries);

void save_cache(const Dataset& data, const std::filesystem::path& path);
Dataset load_cache(const std::filesystem::path& path);

std::optional<std::size_t> lead_index(std::string_view name);

}  // namespace mbcr
