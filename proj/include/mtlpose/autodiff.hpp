#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtlpose/tensor.hpp"

namespace mtlpose {

/// A named trainable tensor with a gradient accumulator of the same size.
struct Parameter {
    std::string name;
    Tensor value;
    std::vector<double> grad;

    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.size(), 0.0) {}
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Handle to a node recorded on a Tape.
struct Var {
    std::size_t id = 0;
};

/// Reverse-mode tape. Ops append nodes; backward() walks them in reverse and
/// pushes gradients into inputs and finally into any bound Parameter.
///
/// Broadcasting is deliberately narrow: add/mul accept a right operand whose
/// shape equals the trailing dims of the left one (bias style) or a single element.
class Tape {
public:
    Var constant(Tensor value);
    /// Leaf bound to p; backward() adds this node's gradient into p.grad.
    Var parameter(Parameter& p);

    Var add(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var offset(Var a, double c);
    /// [M, K] x [K, N].
    Var matmul(Var a, Var b);
    /// x [N, C, H, W], w [O, C, 3, 3], b [O]; zero padding 1, stride 1 or 2.
    Var conv2d(Var x, Var w, Var b, int stride);
    Var relu(Var a);
    Var sigmoid(Var a);
    Var softplus(Var a);
    /// Nearest-neighbour 2x upsampling of an NCHW tensor.
    Var upsample2x(Var x);
    Var reshape(Var a, Shape shape);
    /// Mean over axes [from_axis, rank). from_axis = 0 gives a scalar of shape {1}.
    Var reduce_mean(Var a, int from_axis = 0);
    Var concat(std::span<const Var> parts, int axis);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    /// Gradient of v after backward(); zeros if nothing flowed into v.
    std::span<const double> grad(Var v);

    /// Adds g into v's upstream gradient. Call before backward().
    void seed(Var v, std::span<const double> g);
    /// Seeds a scalar v with 1 and runs backward().
    void backward(Var scalar_root);
    void backward();
    /// Clears accumulated node gradients so the same graph can be replayed with new seeds.
    void zero_grad();

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;  // empty until something flows in
        std::function<void(Tape&, std::size_t)> backward;
        Parameter* param = nullptr;
    };

    Var push(Tensor value, std::function<void(Tape&, std::size_t)> backward);
    std::vector<double>& grad_buffer(std::size_t id);
    const Node& node(Var v) const { return nodes_.at(v.id); }

    std::vector<Node> nodes_;
};

}  // namespace mtlpose
