#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mtlpose {

using Shape = std::vector<std::int64_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float64 tensor.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    /// Throws ShapeError when data.size() differs from the shape's element count.
    Tensor(Shape s, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t dim(int axis) const { return shape.at(static_cast<std::size_t>(axis)); }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace mtlpose
