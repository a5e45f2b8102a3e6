#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mbcr/nn.hpp"

namespace mbcr {

enum class Variant { T, L, F, SingleLead };

std::string to_string(Variant v);
/// Accepts T, L, F, single (case-insensitive).
Variant parse_variant(std::string_view text);

struct ModelSpec {
    Variant variant = Variant::L;
    std::size_t n_leads = 8;
    std::size_t time_len = 2000;
    std::size_t kernel_len = 50;
    std::size_t conv1_depth = 8;
    std::array<std::size_t, 4> block_depths{8, 16, 32, 64};
    std::size_t fc_hidden = 1000;
    std::size_t n_classes = 2;
    double dropout_rate = 0.5;
    UnitOrder unit_order = UnitOrder::conv_bn_relu;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    /// Full-size network: 8x2000 input, 1x50 kernels, depths 8/16/32/64.
    static ModelSpec paper(Variant v);
    /// Desk-scale network used by tests and smoke runs.
    static ModelSpec mini(Variant v);
    static ModelSpec profile(std::string_view name, Variant v);

    /// Throws naming the first stage whose time extent cannot fit the kernel.
    void validate() const;

    /// key=value lines, one per field, stable order.
    std::string to_text() const;
    static ModelSpec from_text(std::string_view text);

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct StageShape {
    std::string stage;
    Shape shape;
};

class Model {
public:
    static Model build(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    UnitConfig unit_config() const;

    /// Logits [N, n_classes] for a batch [N, n_leads, time_len]. When `trace`
    /// is set, every stage's output shape is appended to it.
    Var forward(Tape& tape, Var batch, Mode mode, std::uint64_t dropout_seed = 0,
                std::vector<StageShape>* trace = nullptr);
    Var forward(Tape& tape, const Tensor& batch, Mode mode, std::uint64_t dropout_seed = 0,
                std::vector<StageShape>* trace = nullptr);

    /// Eval-mode class probabilities [N, n_classes].
    Tensor predict(const Tensor& batch);

    /// Stage output shapes derived from the layer configuration alone.
    std::vector<StageShape> shape_walk(std::size_t batch) const;

    std::vector<Parameter*> parameters();
    std::vector<NamedStats> running_stats();
    /// Trainable scalars; running statistics are excluded.
    std::size_t param_count() const;

    ConvUnit conv1;
    std::array<DbcrnBlock, 4> blocks;
    FusionHead head;
    DenseLayer fc1;
    DenseLayer fc2;

private:
    ModelSpec spec_;
};

}  // namespace mbcr
