#include "mbcr/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace mbcr {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (numel(shape) != data.size())
        throw Error("tensor shape " + to_string(shape) + " does not match " +
                    std::to_string(data.size()) + " values");
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape.size()) throw Error("axis out of range");
    return shape[axis];
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::reshaped(Shape s) const {
    if (numel(s) != data.size())
        throw Error("cannot reshape " + to_string(shape) + " to " + to_string(s));
    return Tensor(std::move(s), data);
}

Parameter::Parameter(std::string n, Kind k, Shape shape, std::size_t fan)
    : name(std::move(n)), kind(k), fan_in(fan), value(std::move(shape)), grad(value.size(), 0.0) {}

void Parameter::zero_grad() { grad.assign(value.size(), 0.0); }

}  // namespace mbcr
