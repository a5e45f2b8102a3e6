#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mbcr/ecg.hpp"

namespace mbcr {

enum class Abnormality { irregular_rhythm, lead_localized_inversion, both };

std::string to_string(Abnormality a);
Abnormality parse_abnormality(std::string_view text);

struct SynthConfig {
    std::uint64_t seed = 0;
    std::size_t n_records = 100;
    std::size_t n_leads = 8;  // 8 canonical leads, or 12 with the derived limb leads
    int sample_rate_hz = 500;
    double duration_s = 10.0;
    double class_balance = 0.5;  // fraction labelled abnormal
    double noise_std = 0.05;
    Abnormality abnormality = Abnormality::lead_localized_inversion;
};

/// Synthetic ECG-like records. Normal records are pulse trains of Gaussian
/// QRS/T bumps at 60-90 bpm with a per-lead amplitude profile plus white
/// noise. Abnormal records add the configured abnormality: RR intervals
/// jittered by 25-45%, and/or inverted beats on V1-V3. Output is a pure
/// function of the config.
std::vector<EcgRecord> generate(const SynthConfig& config);

/// Writes one <id>.csv per record plus manifest.txt into `dir`.
void write_dataset(const std::vector<EcgRecord>& records, const std::filesystem::path& dir);

}  // namespace mbcr
