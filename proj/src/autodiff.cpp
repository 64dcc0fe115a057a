#include "mtlpose/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "mtlpose/errors.hpp"

namespace mtlpose {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Size of the right operand's repeat period when it broadcasts over the left one, 0 if it cannot.
std::size_t broadcast_period(const Shape& a, const Shape& b) {
    if (a == b) return shape_numel(a);
    if (shape_numel(b) == 1) return 1;
    if (b.size() > a.size()) return 0;
    if (!std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) return 0;
    return shape_numel(b);
}

double softplus_value(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// 3x3, pad 1: col[(c*9 + ky*3 + kx), oy*wo + ox] = x[c, oy*s + ky - 1, ox*s + kx - 1].
void im2col(const double* x, int channels, int h, int w, int stride, int ho, int wo, double* col) {
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    for (int c = 0; c < channels; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                double* row = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * plane;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + ky - 1;
                    double* dst = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, 0.0);
                        continue;
                    }
                    const double* src = xc + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + kx - 1;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, int channels, int h, int w, int stride, int ho, int wo, double* dx) {
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    for (int c = 0; c < channels; ++c) {
        double* xc = dx + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const double* row = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * plane;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= h) continue;
                    const double* src = row + static_cast<std::size_t>(oy) * wo;
                    double* dst = xc + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + kx - 1;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {
    for (auto d : shape)
        if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    for (auto d : shape)
        if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    if (data.size() != shape_numel(shape))
        throw ShapeError("tensor of shape " + shape_str(shape) + " given " + std::to_string(data.size()) + " values");
}

Var Tape::push(Tensor value, std::function<void(Tape&, std::size_t)> backward) {
    nodes_.push_back(Node{std::move(value), {}, std::move(backward), nullptr});
    return Var{nodes_.size() - 1};
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

Var Tape::constant(Tensor value) { return push(std::move(value), nullptr); }

Var Tape::parameter(Parameter& p) {
    Var v = push(p.value, nullptr);
    nodes_[v.id].param = &p;
    return v;
}

std::span<const double> Tape::grad(Var v) { return grad_buffer(v.id); }

void Tape::seed(Var v, std::span<const double> g) {
    auto& buf = grad_buffer(v.id);
    if (g.size() != buf.size())
        throw ShapeError("seed: gradient of size " + std::to_string(g.size()) + " for " + shape_str(node(v).value.shape));
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var scalar_root) {
    if (node(scalar_root).value.size() != 1) throw ShapeError("backward root must be a scalar");
    const double one = 1.0;
    seed(scalar_root, {&one, 1});
    backward();
}

void Tape::backward() {
    for (std::size_t id = nodes_.size(); id-- > 0;) {
        Node& n = nodes_[id];
        if (n.grad.empty()) continue;
        if (n.backward) n.backward(*this, id);
        if (n.param != nullptr) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
        }
    }
}

void Tape::zero_grad() {
    for (auto& n : nodes_) n.grad.clear();
}

Var Tape::add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const std::size_t period = broadcast_period(av.shape, bv.shape);
    if (period == 0) shape_fail("add", av.shape, bv.shape);
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i % period];
    return push(std::move(out), [a, b, period](Tape& t, std::size_t self) {
        const auto& g = t.nodes_[self].grad;
        auto& ga = t.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        auto& gb = t.grad_buffer(b.id);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] += g[i];
    });
}

Var Tape::mul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const std::size_t period = broadcast_period(av.shape, bv.shape);
    if (period == 0) shape_fail("mul", av.shape, bv.shape);
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i % period];
    return push(std::move(out), [a, b, period](Tape& t, std::size_t self) {
        const auto& g = t.nodes_[self].grad;
        const auto& ad = t.nodes_[a.id].value.data;
        const auto& bd = t.nodes_[b.id].value.data;
        auto& ga = t.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i % period];
        auto& gb = t.grad_buffer(b.id);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] += g[i] * ad[i];
    });
}

Var Tape::scale(Var a, double s) { return mul(a, constant(Tensor({1}, s))); }

Var Tape::offset(Var a, double c) { return add(a, constant(Tensor({1}, c))); }

Var Tape::matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_fail("matmul", av.shape, bv.shape);
    const auto m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    MapMat(out.data.data(), m, n).noalias() = ConstMapMat(av.data.data(), m, k) * ConstMapMat(bv.data.data(), k, n);
    return push(std::move(out), [a, b, m, k, n](Tape& t, std::size_t self) {
        ConstMapMat g(t.nodes_[self].grad.data(), m, n);
        ConstMapMat am(t.nodes_[a.id].value.data.data(), m, k);
        ConstMapMat bm(t.nodes_[b.id].value.data.data(), k, n);
        MapMat(t.grad_buffer(a.id).data(), m, k).noalias() += g * bm.transpose();
        MapMat(t.grad_buffer(b.id).data(), k, n).noalias() += am.transpose() * g;
    });
}

Var Tape::conv2d(Var x, Var w, Var b, int stride) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
    if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(2) != 3 || wv.dim(3) != 3 || wv.dim(1) != xv.dim(1))
        shape_fail("conv2d", xv.shape, wv.shape);
    if (bv.rank() != 1 || bv.dim(0) != wv.dim(0)) shape_fail("conv2d bias", wv.shape, bv.shape);
    const int batch = static_cast<int>(xv.dim(0));
    const int cin = static_cast<int>(xv.dim(1));
    const int h = static_cast<int>(xv.dim(2));
    const int wd = static_cast<int>(xv.dim(3));
    const int cout = static_cast<int>(wv.dim(0));
    const int ho = (h - 1) / stride + 1;
    const int wo = (wd - 1) / stride + 1;
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    const std::size_t krows = static_cast<std::size_t>(cin) * 9;

    Tensor out({batch, cout, ho, wo});
    std::vector<double> col(krows * plane);
    ConstMapMat wm(wv.data.data(), cout, static_cast<Eigen::Index>(krows));
    for (int n = 0; n < batch; ++n) {
        im2col(xv.data.data() + static_cast<std::size_t>(n) * cin * h * wd, cin, h, wd, stride, ho, wo, col.data());
        MapMat om(out.data.data() + static_cast<std::size_t>(n) * cout * plane, cout, static_cast<Eigen::Index>(plane));
        om.noalias() = wm * ConstMapMat(col.data(), static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(plane));
        for (int o = 0; o < cout; ++o) om.row(o).array() += bv.data[o];
    }
    return push(std::move(out), [=](Tape& t, std::size_t self) {
        const auto& g = t.nodes_[self].grad;
        const auto& xd = t.nodes_[x.id].value.data;
        ConstMapMat wmat(t.nodes_[w.id].value.data.data(), cout, static_cast<Eigen::Index>(krows));
        auto& gx = t.grad_buffer(x.id);
        auto& gw = t.grad_buffer(w.id);
        auto& gb = t.grad_buffer(b.id);
        MapMat gwm(gw.data(), cout, static_cast<Eigen::Index>(krows));
        std::vector<double> col_buf(krows * plane);
        std::vector<double> dcol(krows * plane);
        for (int n = 0; n < batch; ++n) {
            ConstMapMat gm(g.data() + static_cast<std::size_t>(n) * cout * plane, cout, static_cast<Eigen::Index>(plane));
            im2col(xd.data() + static_cast<std::size_t>(n) * cin * h * wd, cin, h, wd, stride, ho, wo, col_buf.data());
            ConstMapMat cm(col_buf.data(), static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(plane));
            gwm.noalias() += gm * cm.transpose();
            for (int o = 0; o < cout; ++o) gb[o] += gm.row(o).sum();
            MapMat(dcol.data(), static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(plane)).noalias() =
                wmat.transpose() * gm;
            col2im_add(dcol.data(), cin, h, wd, stride, ho, wo, gx.data() + static_cast<std::size_t>(n) * cin * h * wd);
        }
    });
}

Var Tape::relu(Var a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(out), [a](Tape& t, std::size_t self) {
        const auto& g = t.nodes_[self].grad;
        const auto& ad = t.nodes_[a.id].value.data;
        auto& ga = t.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (ad[i] > 0.0) ga[i] += g[i];
    });
}

Var Tape::sigmoid(Var a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = sigmoid_value(v);
    return push(std::move(out), [a](Tape& t, std::size_t self) {
        const auto& g = t.nodes_[self].grad;
        const auto& y = t.nodes_[self].value.data;
        auto& ga = t.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var Tape::softplus(Var a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = softplus_value(v);
    return push(std::move(out), [a](Tape& t, std::size_t self) {
        const auto& g = t.nodes_[self].grad;
        const auto& ad = t.nodes_[a.id].value.data;
        auto& ga = t.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid_value(ad[i]);
    });
}

Var Tape::upsample2x(Var x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 4) throw ShapeError("upsample2x: expected NCHW input, got " + shape_str(xv.shape));
    const auto planes = xv.dim(0) * xv.dim(1);
    const auto h = xv.dim(2), w = xv.dim(3);
    Tensor out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* src = xv.data.data() + p * h * w;
        double* dst = out.data.data() + p * 4 * h * w;
        for (std::int64_t r = 0; r < 2 * h; ++r)
            for (std::int64_t c = 0; c < 2 * w; ++c) dst[r * 2 * w + c] = src[(r / 2) * w + c / 2];
    }
    return push(std::move(out), [x, planes, h, w](Tape& t, std::size_t self) {
        const auto& g = t.nodes_[self].grad;
        auto& gx = t.grad_buffer(x.id);
        for (std::int64_t p = 0; p < planes; ++p) {
            const double* src = g.data() + p * 4 * h * w;
            double* dst = gx.data() + p * h * w;
            for (std::int64_t r = 0; r < 2 * h; ++r)
                for (std::int64_t c = 0; c < 2 * w; ++c) dst[(r / 2) * w + c / 2] += src[r * 2 * w + c];
        }
    });
}

Var Tape::reshape(Var a, Shape shape) {
    const Tensor& av = value(a);
    if (shape_numel(shape) != av.size()) shape_fail("reshape", av.shape, shape);
    Tensor out(std::move(shape), av.data);
    return push(std::move(out), [a](Tape& t, std::size_t self) {
        const auto& g = t.nodes_[self].grad;
        auto& ga = t.grad_buffer(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var Tape::reduce_mean(Var a, int from_axis) {
    const Tensor& av = value(a);
    if (from_axis < 0 || from_axis > av.rank()) throw ShapeError("reduce_mean: axis out of range for " + shape_str(av.shape));
    Shape kept(av.shape.begin(), av.shape.begin() + from_axis);
    const std::size_t groups = shape_numel(kept);
    const std::size_t span = groups == 0 ? 0 : av.size() / groups;
    if (kept.empty()) kept = {1};
    Tensor out(kept);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        double s = 0.0;
        for (std::size_t j = 0; j < span; ++j) s += av.data[gi * span + j];
        out.data[gi] = s / static_cast<double>(span);
    }
    return push(std::move(out), [a, groups, span](Tape& t, std::size_t self) {
        const auto& g = t.nodes_[self].grad;
        auto& ga = t.grad_buffer(a.id);
        const double inv = 1.0 / static_cast<double>(span);
        for (std::size_t gi = 0; gi < groups; ++gi)
            for (std::size_t j = 0; j < span; ++j) ga[gi * span + j] += g[gi] * inv;
    });
}

Var Tape::concat(std::span<const Var> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = value(parts[0]).shape;
    if (axis < 0 || axis >= static_cast<int>(first.size())) throw ShapeError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> inner;  // contiguous chunk per outer index for each part
    for (Var p : parts) {
        const Shape& s = value(p).shape;
        if (s.size() != first.size()) shape_fail("concat", first, s);
        for (std::size_t d = 0; d < s.size(); ++d)
            if (static_cast<int>(d) != axis && s[d] != first[d]) shape_fail("concat", first, s);
        out_shape[axis] += s[axis];
        inner.push_back(shape_numel(Shape(s.begin() + axis, s.end())));
    }
    const std::size_t outer = shape_numel(Shape(first.begin(), first.begin() + axis));
    const std::size_t row = std::accumulate(inner.begin(), inner.end(), std::size_t{0});
    Tensor out(out_shape);
    std::size_t col_offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& src = value(parts[pi]).data;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * inner[pi]), inner[pi],
                        out.data.begin() + static_cast<std::ptrdiff_t>(o * row + col_offset));
        col_offset += inner[pi];
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return push(std::move(out), [ins, inner, outer, row](Tape& t, std::size_t self) {
        const auto& g = t.nodes_[self].grad;
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < ins.size(); ++pi) {
            auto& gp = t.grad_buffer(ins[pi].id);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t j = 0; j < inner[pi]; ++j) gp[o * inner[pi] + j] += g[o * row + off + j];
            off += inner[pi];
        }
    });
}

}  // namespace mtlpose
