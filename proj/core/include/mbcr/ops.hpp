#pragma once

#include <cstdint>
#include <span>

#include "mbcr/autodiff.hpp"

namespace mbcr {

enum class Mode { train, eval };
enum class Padding { valid, same };

struct Stride {
    std::size_t h = 1;
    std::size_t w = 1;
};

struct ConvOptions {
    Stride stride;
    Padding padding = Padding::valid;
};

/// Zero padding applied before/after one axis for `same` convolution.
struct PadSplit {
    std::size_t before = 0;
    std::size_t after = 0;
};

PadSplit same_padding(std::size_t kernel_extent);
/// Output extent along one axis; throws "kernel exceeds input" when infeasible.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

// Value-level kernels (no tape). conv2d takes input [N,Cin,H,W] and kernel
// [Cout,Cin,kh,kw]; `same` pads floor(p/2) before and ceil(p/2) after with
// p = k-1 and requires stride 1 on every padded axis.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvOptions& opts);
Tensor softmax(const Tensor& logits);

// Differentiable ops recorded on the tape of their first argument.
Var conv2d(Var input, Var kernel, const ConvOptions& opts);
Var relu(Var x);

/// While alive, folds the active set of every relu evaluated on this thread
/// into a signature. Finite-difference checks compare signatures to notice a
/// probe that stepped across a kink.
class ReluPatternProbe {
public:
    ReluPatternProbe();
    ~ReluPatternProbe();
    ReluPatternProbe(const ReluPatternProbe&) = delete;
    ReluPatternProbe& operator=(const ReluPatternProbe&) = delete;
    std::uint64_t signature() const { return signature_; }
    /// Folds into the innermost probe on this thread, if any.
    static void observe(std::span<const double> pre_activation);

private:
    ReluPatternProbe* outer_;
    std::uint64_t signature_ = 0x9e3779b97f4a7c15ULL;
};
Var add(Var a, Var b);
Var dense(Var input, Var weight, Var bias);
Var reshape(Var x, Shape shape);
Var sum(Var x);
/// sum(x * w) for a constant weight tensor of the same shape.
Var weighted_sum(Var x, const Tensor& weights);

struct BatchNormStats {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    explicit BatchNormStats(std::size_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

struct BatchNormOptions {
    double eps = 1e-5;
    double momentum = 0.1;
    /// When false, train mode still uses batch statistics but leaves the
    /// running stats untouched (used by gradient checks).
    bool update_stats = true;
};

/// Per-channel normalization over (N,H,W). Train mode uses the biased batch
/// variance and folds it into `stats` by exponential moving average.
Var batchnorm(Var input, Var gamma, Var beta, BatchNormStats& stats, Mode mode,
              const BatchNormOptions& opts = {});

/// Inverted dropout; the mask is a pure function of `seed`.
Var dropout(Var x, double rate, Mode mode, std::uint64_t seed);

struct SoftmaxXent {
    Var loss;
    Tensor probs;
};

/// Mean negative log-likelihood of integer labels under a row softmax.
SoftmaxXent softmax_xent(Var logits, std::span<const int> labels);

}  // namespace mbcr
