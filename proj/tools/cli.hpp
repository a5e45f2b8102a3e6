#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mbcr/ecg.hpp"
#include "mbcr/synth.hpp"
#include "mbcr/train.hpp"

namespace mbcr::cli {

/// Every setting the commands read. Defaults are overridden by a JSON config
/// file (flat keys, same names as the fields) and then by command-line flags.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string variant = "L";
    std::string profile = "paper";
    std::string lead;  // empty: multi-lead
    std::size_t folds = 10;
    std::string out = ".";
    std::string manifest;    // default <out>/manifest.txt
    std::string cache;       // default <out>/cache.mbcr
    std::string checkpoint;  // default <out>/model.mbcr

    std::string optimizer = "adam";
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    double dropout_rate = 0.5;

    std::size_t n_records = 100;
    double class_balance = 0.5;
    double noise_std = 0.05;
    std::string abnormality = "lead_localized_inversion";
    int sample_rate_hz = 0;  // 0: profile default (500 paper, 50 mini)
    double duration_s = 10.0;
    std::size_t n_leads = 12;

    int target_hz = 0;  // 0: profile default (250 paper, 25 mini)
    double window_s = 8.0;
    double min_seconds = 8.0;

    nlohmann::ordered_json to_json() const;
    static RunConfig from_json(const nlohmann::ordered_json& j);

    std::filesystem::path manifest_path() const;
    std::filesystem::path cache_path() const;
    std::filesystem::path checkpoint_path() const;

    TrainConfig train_config() const;
    SynthConfig synth_config() const;
    PreprocessConfig preprocess_config() const;
};

/// Layers a JSON object over the defaults; unknown keys and type mismatches throw.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const nlohmann::ordered_json& overrides);

/// Entry point shared by the executable and the tests. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mbcr::cli
