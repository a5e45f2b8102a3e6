#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbcr/ops.hpp"

namespace mbcr {

/// Order of the three stages inside a ConvUnit.
enum class UnitOrder { conv_bn_relu, conv_relu_bn };

struct UnitConfig {
    UnitOrder order = UnitOrder::conv_bn_relu;
    BatchNormOptions bn;
};

/// Running statistics of one batchnorm, addressed by name for checkpoints.
struct NamedStats {
    std::string name;
    BatchNormStats* stats;
};

/// Conv (no bias) followed by batchnorm and ReLU.
class ConvUnit {
public:
    ConvUnit() = default;
    ConvUnit(const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw,
             ConvOptions opts);

    Var forward(Tape& tape, Var input, Mode mode, const UnitConfig& cfg);
    Shape output_shape(const Shape& input) const;

    std::size_t in_channels() const { return kernel.value.shape[1]; }
    std::size_t out_channels() const { return kernel.value.shape[0]; }

    void collect(std::vector<Parameter*>& out);
    void collect_stats(std::vector<NamedStats>& out);

    std::string name;
    Parameter kernel;
    Parameter gamma;
    Parameter beta;
    BatchNormStats stats;
    ConvOptions conv;
};

/// Double-branch convolution followed by an identity-shortcut residual stage.
///
/// Each branch is a stride-(1,2) valid unit followed by a stride-1 same unit;
/// both branches share hyperparameters but not weights. Their outputs are
/// summed into `s`, and the block returns s + res2(res1(s)) without a
/// trailing activation.
class DbcrnBlock {
public:
    DbcrnBlock() = default;
    DbcrnBlock(const std::string& name, std::size_t c_in, std::size_t depth, std::size_t kernel_len);

    Var forward(Tape& tape, Var input, Mode mode, const UnitConfig& cfg);
    /// Sum of the two branches only (the residual stage input).
    Var branch_sum(Tape& tape, Var input, Mode mode, const UnitConfig& cfg);
    Shape output_shape(const Shape& input) const;

    std::size_t depth() const { return res1.out_channels(); }

    void collect(std::vector<Parameter*>& out);
    void collect_stats(std::vector<NamedStats>& out);

    std::array<ConvUnit, 2> branch_a;
    std::array<ConvUnit, 2> branch_b;
    ConvUnit res1;
    ConvUnit res2;
};

enum class FusionVariant { T, L, F };

/// Lead-feature fusion before the classifier. T convolves across leads at
/// each time step, L convolves across time within each lead, F only flattens.
class FusionHead {
public:
    FusionHead() = default;
    FusionHead(FusionVariant variant, std::size_t channels, std::size_t leads, std::size_t time);

    /// Returns flattened features [N, flat_size()].
    Var forward(Tape& tape, Var features, Mode mode, const UnitConfig& cfg);
    std::size_t flat_size() const;

    void collect(std::vector<Parameter*>& out);
    void collect_stats(std::vector<NamedStats>& out);

    FusionVariant variant = FusionVariant::F;
    std::size_t channels = 0;
    std::size_t leads = 0;
    std::size_t time = 0;
    std::optional<ConvUnit> conv;
};

struct DenseLayer {
    DenseLayer() = default;
    DenseLayer(const std::string& name, std::size_t f_in, std::size_t f_out);

    Var forward(Tape& tape, Var input);
    void collect(std::vector<Parameter*>& out);

    Parameter weight;
    Parameter bias;
};

/// He-normal weights (std sqrt(2/fan_in)), unit gamma, zero beta and bias.
/// Draws come from one stream in the order given, so a shared prefix of
/// parameters initializes identically across models.
void init_params(std::span<Parameter* const> params, std::uint64_t seed);

}  // namespace mbcr
