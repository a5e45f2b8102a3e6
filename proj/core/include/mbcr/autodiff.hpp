#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "mbcr/tensor.hpp"

namespace mbcr {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// tape that produced it is alive.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
};

/// What a backward rule sees: the output gradient, the forward values, and
/// one gradient accumulator per input (null when that input needs no grad).
struct BackwardArgs {
    std::span<const double> out_grad;
    const Tensor& out;
    std::span<const Tensor* const> in;
    std::span<std::vector<double>* const> in_grad;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

/// Linear record of operations for reverse-mode differentiation. Nodes are
/// appended in evaluation order, so every input precedes its consumers and a
/// reverse sweep is a valid topological replay.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    /// Leaf whose gradient is kept on the tape (read back with grad()).
    Var leaf(Tensor value, bool requires_grad = true);
    /// Leaf bound to a Parameter; backward() adds into param.grad.
    Var parameter(Parameter& param);

    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Gradients
    /// sum at fan-out. Throws unless `loss` holds exactly one element.
    void backward(Var loss);

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    /// Gradient of the last backward() w.r.t. `v`; zeros if `v` was not on the path.
    std::vector<double> grad(Var v) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        Parameter* param = nullptr;
        std::vector<double> grad;
    };

    std::deque<Node> nodes_;
};

}  // namespace mbcr
