#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbcr {

/// Raised for every contract violation inside the library. The message is a
/// short lowercase reason ("channel mismatch", "missing lead V3", ...).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major tensor of doubles. Gradient bookkeeping lives on the Tape
/// and in Parameter, so a Tensor is a plain value.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t axis) const;

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool all_finite() const;
    Tensor reshaped(Shape s) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// A trainable tensor together with its accumulated gradient.
struct Parameter {
    enum class Kind { conv_kernel, dense_weight, dense_bias, bn_gamma, bn_beta };

    std::string name;
    Kind kind = Kind::conv_kernel;
    std::size_t fan_in = 1;
    Tensor value;
    std::vector<double> grad;

    Parameter() = default;
    Parameter(std::string n, Kind k, Shape shape, std::size_t fan);

    void zero_grad();
};

}  // namespace mbcr
