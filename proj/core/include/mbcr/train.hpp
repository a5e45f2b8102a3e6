#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mbcr/ecg.hpp"
#include "mbcr/model.hpp"

namespace mbcr {

enum class Optimizer { sgd, adam };

std::string to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view text);

struct TrainConfig {
    Optimizer optimizer = Optimizer::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    double dropout_rate = 0.5;
    std::uint64_t seed = 0;
    Variant variant = Variant::L;
    std::string profile = "mini";
    /// Canonical lead index for single-lead runs.
    std::optional<std::size_t> lead;
    std::size_t n_folds = 10;
    /// Written after training when non-empty.
    std::filesystem::path checkpoint;

    void validate() const;
    /// ModelSpec implied by profile, variant, lead and dropout rate.
    ModelSpec model_spec() const;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
void adam_step(std::span<Parameter* const> params, AdamState& state, double lr, double beta1, double beta2,
               double eps);
void sgd_step(std::span<Parameter* const> params, double lr);

/// Confusion counts with abnormal (label 1) as the positive class.
struct Metrics {
    std::size_t tp = 0;
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + tn + fp + fn; }
    double acc() const;
    /// NaN when the evaluation set holds no positives.
    double se() const;

    static Metrics from(std::span<const int> predictions, std::span<const int> labels);
    friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Argmax over a probability row; an exact tie resolves to class 0.
int predicted_class(std::span<const double> probs);

struct TrainResult {
    std::vector<double> loss_trace;  // mean batch loss per epoch
};

/// Seeded mini-batch training over `indices` of `data`. Throws if any batch
/// loss is non-finite.
TrainResult train(Model& model, const Dataset& data, std::span<const std::size_t> indices, const TrainConfig& cfg);

/// Eval-mode predictions for `indices`.
std::vector<int> predict(Model& model, const Dataset& data, std::span<const std::size_t> indices,
                         std::optional<std::size_t> lead, std::size_t batch_size = 64);
Metrics evaluate(Model& model, const Dataset& data, std::span<const std::size_t> indices,
                 std::optional<std::size_t> lead, std::size_t batch_size = 64);

struct FoldResult {
    Metrics metrics;
    std::vector<double> loss_trace;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
};

struct CrossvalResult {
    Variant variant = Variant::L;
    FoldPlan plan;
    std::vector<FoldResult> folds;
    double mean_acc = 0.0;
    /// Mean over folds with a defined Se; NaN if none.
    double mean_se = 0.0;
};

/// Train on all folds but one, evaluate on the held-out fold, for every fold.
/// Folds run in parallel, each with its own model and derived seed.
CrossvalResult crossval(const Dataset& data, const TrainConfig& cfg);

/// Splits `plan` into (train, test) dataset indices for `fold`; throws if a
/// test id appears among the training ids.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> fold_split(const Dataset& data,
                                                                         const FoldPlan& plan, std::size_t fold);

struct AblationResult {
    std::vector<std::pair<std::string, Metrics>> single_lead;
    Metrics fused;
    Variant fused_variant = Variant::L;
};

/// Trains one fused model and one single-lead model per canonical lead with
/// identical budgets, evaluating all on the first fold of the plan.
AblationResult lead_ablation(const Dataset& data, const TrainConfig& cfg);

/// Plain-text table: Fold-1..Fold-k then Average, ACC/Se columns per variant.
std::string format_crossval_table(std::span<const CrossvalResult> results);
/// key=value lines for the same numbers.
std::string format_crossval_kv(std::span<const CrossvalResult> results);
std::string format_ablation_table(const AblationResult& result);

std::string format_percent(double v);

}  // namespace mbcr
