#include "mbcr/autodiff.hpp"

namespace mbcr {

const Tensor& Var::value() const {
    if (!tape) throw Error("unbound variable");
    return tape->value(id);
}

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& param) {
    Var v = leaf(param.value, true);
    nodes_.back().param = &param;
    return v;
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    for (std::size_t in : inputs) {
        if (in >= nodes_.size()) throw Error("tape input recorded out of order");
        node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    node.inputs = std::move(inputs);
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw Error("loss was not recorded on this tape");
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) throw Error("backward requires a scalar loss");

    for (auto& n : nodes_) n.grad.clear();
    root.grad.assign(1, 1.0);

    std::vector<const Tensor*> in_values;
    std::vector<std::vector<double>*> in_grads;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (node.grad.empty() || !node.backward) continue;
        in_values.clear();
        in_grads.clear();
        for (std::size_t in : node.inputs) {
            Node& src = nodes_[in];
            in_values.push_back(&src.value);
            if (src.requires_grad) {
                if (src.grad.empty()) src.grad.assign(src.value.size(), 0.0);
                in_grads.push_back(&src.grad);
            } else {
                in_grads.push_back(nullptr);
            }
        }
        node.backward(BackwardArgs{node.grad, node.value, in_values, in_grads});
    }

    for (auto& n : nodes_) {
        if (!n.param || n.grad.empty()) continue;
        auto& acc = n.param->grad;
        if (acc.size() != n.grad.size()) acc.assign(n.grad.size(), 0.0);
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += n.grad[k];
    }
}

std::vector<double> Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
    return n.grad;
}

}  // namespace mbcr
