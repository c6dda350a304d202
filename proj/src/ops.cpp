#include "vpr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace vpr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

GradGraph* recording_for(std::initializer_list<const Tensor*> inputs) {
    GradGraph* g = GradGraph::current();
    if (!g) return nullptr;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return g;
    }
    return nullptr;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

// Records an elementwise op whose input derivative is `dydx` (captured).
Tensor unary_elementwise(const Tensor& x, Array y, Array dydx) {
    Tensor out = Tensor::from_array(x.shape(), std::move(y));
    if (GradGraph* g = recording_for({&x})) {
        out.set_requires_grad(true);
        auto xi = x.ptr();
        auto oi = out.ptr();
        auto d = std::make_shared<Array>(std::move(dydx));
        g->record(out, [xi, oi, d] {
            if (xi->requires_grad) xi->accumulate_grad(oi->grad * (*d));
        });
    }
    return out;
}

double stable_sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::from_array(a.shape(), a.array() + b.array());
    if (GradGraph* g = recording_for({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.ptr(), bi = b.ptr(), oi = out.ptr();
        g->record(out, [ai, bi, oi] {
            if (ai->requires_grad) ai->accumulate_grad(oi->grad);
            if (bi->requires_grad) bi->accumulate_grad(oi->grad);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::from_array(a.shape(), a.array() - b.array());
    if (GradGraph* g = recording_for({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.ptr(), bi = b.ptr(), oi = out.ptr();
        g->record(out, [ai, bi, oi] {
            if (ai->requires_grad) ai->accumulate_grad(oi->grad);
            if (bi->requires_grad) bi->accumulate_grad(-oi->grad);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::from_array(a.shape(), a.array() * b.array());
    if (GradGraph* g = recording_for({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.ptr(), bi = b.ptr(), oi = out.ptr();
        g->record(out, [ai, bi, oi] {
            if (ai->requires_grad) ai->accumulate_grad(oi->grad * bi->data);
            if (bi->requires_grad) bi->accumulate_grad(oi->grad * ai->data);
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& x, double c) {
    return unary_elementwise(x, x.array() + c, Array::Ones(x.size()));
}

Tensor mul_scalar(const Tensor& x, double c) {
    return unary_elementwise(x, x.array() * c, Array::Constant(x.size(), c));
}

Tensor rsub_scalar(double c, const Tensor& x) {
    return unary_elementwise(x, c - x.array(), Array::Constant(x.size(), -1.0));
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor relu(const Tensor& x) {
    return unary_elementwise(x, x.array().max(0.0),
                             (x.array() > 0.0).cast<double>());
}

Tensor leaky_relu(const Tensor& x, double slope) {
    Array y = (x.array() > 0.0).select(x.array(), slope * x.array());
    Array d = (x.array() > 0.0).select(Array::Ones(x.size()),
                                       Array::Constant(x.size(), slope));
    return unary_elementwise(x, std::move(y), std::move(d));
}

Tensor sigmoid(const Tensor& x) {
    Array y = x.array().unaryExpr([](double v) { return stable_sigmoid(v); });
    Array d = y * (1.0 - y);
    return unary_elementwise(x, std::move(y), std::move(d));
}

Tensor softplus(const Tensor& x) {
    Array y = x.array().unaryExpr(
        [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
    Array d = x.array().unaryExpr([](double v) { return stable_sigmoid(v); });
    return unary_elementwise(x, std::move(y), std::move(d));
}

Tensor exp(const Tensor& x) {
    Array y = x.array().exp();
    Array d = y;
    return unary_elementwise(x, std::move(y), std::move(d));
}

Tensor log(const Tensor& x) {
    if ((x.array() <= 0.0).any()) throw DomainError("log: nonpositive input");
    Array y = x.array().log();
    Array d = x.array().inverse();
    return unary_elementwise(x, std::move(y), std::move(d));
}

namespace {

Tensor pow_impl(const Tensor& x, const Tensor* p_tensor, double p_value) {
    if ((x.array() < 0.0).any()) throw DomainError("pow: negative base");
    const double p = p_tensor ? p_tensor->value() : p_value;
    Array y(x.size());
    if (p == 1.0) {
        y = x.array();
    } else {
        y = x.array().unaryExpr([p](double v) { return std::pow(v, p); });
    }
    Tensor out = Tensor::from_array(x.shape(), std::move(y));
    GradGraph* g = p_tensor ? recording_for({&x, p_tensor}) : recording_for({&x});
    if (g) {
        out.set_requires_grad(true);
        auto xi = x.ptr();
        auto oi = out.ptr();
        auto pi = p_tensor ? p_tensor->ptr() : nullptr;
        g->record(out, [xi, oi, pi, p] {
            if (xi->requires_grad) {
                Array d(xi->data.size());
                for (Eigen::Index i = 0; i < xi->data.size(); ++i) {
                    const double v = xi->data(i);
                    // Subgradient 0 at v == 0 keeps 1/p exponents finite.
                    d(i) = (v > 0.0) ? p * std::pow(v, p - 1.0) : (p == 1.0 ? 1.0 : 0.0);
                }
                xi->accumulate_grad(oi->grad * d);
            }
            if (pi && pi->requires_grad) {
                double acc = 0.0;
                for (Eigen::Index i = 0; i < xi->data.size(); ++i) {
                    const double v = xi->data(i);
                    if (v > 0.0) acc += oi->grad(i) * oi->data(i) * std::log(v);
                }
                pi->accumulate_grad(Array::Constant(1, acc));
            }
        });
    }
    return out;
}

}  // namespace

Tensor pow_elem(const Tensor& x, const Tensor& p) {
    if (p.size() != 1) throw DimensionError("pow_elem: exponent must be scalar");
    return pow_impl(x, &p, 0.0);
}

Tensor pow_scalar(const Tensor& x, double p) { return pow_impl(x, nullptr, p); }

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& s0 = parts.front().shape();
    const int nd = static_cast<int>(s0.size());
    if (axis < 0 || axis >= nd) throw DimensionError("concat: axis out of range");
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const Tensor& t : parts) {
        const Shape& s = t.shape();
        if (static_cast<int>(s.size()) != nd)
            throw DimensionError("concat: rank mismatch");
        for (int d = 0; d < nd; ++d) {
            if (d != axis && s[d] != s0[d])
                throw DimensionError("concat: extent mismatch off the concat axis");
        }
        out_shape[axis] += s[axis];
    }
    std::int64_t inner = 1;
    for (int d = axis + 1; d < nd; ++d) inner *= s0[d];
    std::int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= s0[d];

    Array out_data(numel(out_shape));
    const std::int64_t out_row = out_shape[axis] * inner;
    std::int64_t offset = 0;  // start of each part within an outer slice
    for (const Tensor& t : parts) {
        const std::int64_t block = t.shape()[axis] * inner;
        for (std::int64_t o = 0; o < outer; ++o) {
            out_data.segment(o * out_row + offset, block) = t.array().segment(o * block, block);
        }
        offset += block;
    }
    Tensor out = Tensor::from_array(out_shape, std::move(out_data));

    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : parts) ptrs.push_back(&t);
    GradGraph* g = GradGraph::current();
    bool any_grad = false;
    for (const Tensor& t : parts) any_grad = any_grad || t.requires_grad();
    if (g && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl>> impls;
        std::vector<std::int64_t> blocks;
        for (const Tensor& t : parts) {
            impls.push_back(t.ptr());
            blocks.push_back(t.shape()[axis] * inner);
        }
        auto oi = out.ptr();
        g->record(out, [impls, blocks, oi, outer, out_row] {
            std::int64_t off = 0;
            for (std::size_t k = 0; k < impls.size(); ++k) {
                auto& ti = impls[k];
                if (ti->requires_grad) {
                    ti->ensure_grad();
                    for (std::int64_t o = 0; o < outer; ++o) {
                        ti->grad.segment(o * blocks[k], blocks[k]) +=
                            oi->grad.segment(o * out_row + off, blocks[k]);
                    }
                }
                off += blocks[k];
            }
        });
    }
    return out;
}

Tensor broadcast_mul(const Tensor& x, const Tensor& m) {
    if (x.ndim() != 3 || m.ndim() != 3)
        throw DimensionError("broadcast_mul: expects C×H×W and 1×H×W");
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (m.extent(0) != 1 || m.extent(1) != h || m.extent(2) != w)
        throw DimensionError("broadcast_mul: map shape " + shape_str(m.shape()) +
                             " does not match features " + shape_str(x.shape()));
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    Array y(x.size());
    for (int ch = 0; ch < c; ++ch)
        y.segment(ch * hw, hw) = x.array().segment(ch * hw, hw) * m.array();
    Tensor out = Tensor::from_array(x.shape(), std::move(y));
    if (GradGraph* g = recording_for({&x, &m})) {
        out.set_requires_grad(true);
        auto xi = x.ptr(), mi = m.ptr(), oi = out.ptr();
        g->record(out, [xi, mi, oi, c, hw] {
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (int ch = 0; ch < c; ++ch)
                    xi->grad.segment(ch * hw, hw) += oi->grad.segment(ch * hw, hw) * mi->data;
            }
            if (mi->requires_grad) {
                mi->ensure_grad();
                for (int ch = 0; ch < c; ++ch)
                    mi->grad += oi->grad.segment(ch * hw, hw) * xi->data.segment(ch * hw, hw);
            }
        });
    }
    return out;
}

Tensor upsample_nearest(const Tensor& x, int target_h, int target_w) {
    if (x.ndim() != 3) throw DimensionError("upsample_nearest: expects C×H×W");
    if (target_h <= 0 || target_w <= 0)
        throw DimensionError("upsample_nearest: zero target extent");
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (target_h < h || target_w < w)
        throw DimensionError("upsample_nearest: target smaller than source");

    std::vector<int> src_i(target_h), src_j(target_w);
    for (int i = 0; i < target_h; ++i) src_i[i] = static_cast<int>((static_cast<std::int64_t>(i) * h) / target_h);
    for (int j = 0; j < target_w; ++j) src_j[j] = static_cast<int>((static_cast<std::int64_t>(j) * w) / target_w);

    Array y(static_cast<std::int64_t>(c) * target_h * target_w);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = x.array().data() + static_cast<std::int64_t>(ch) * h * w;
        double* dst = y.data() + static_cast<std::int64_t>(ch) * target_h * target_w;
        for (int i = 0; i < target_h; ++i)
            for (int j = 0; j < target_w; ++j)
                dst[i * target_w + j] = src[src_i[i] * w + src_j[j]];
    }
    Tensor out = Tensor::from_array({c, target_h, target_w}, std::move(y));
    if (GradGraph* g = recording_for({&x})) {
        out.set_requires_grad(true);
        auto xi = x.ptr(), oi = out.ptr();
        g->record(out, [xi, oi, c, h, w, target_h, target_w, src_i, src_j] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                const double* gsrc = oi->grad.data() + static_cast<std::int64_t>(ch) * target_h * target_w;
                double* gdst = xi->grad.data() + static_cast<std::int64_t>(ch) * h * w;
                for (int i = 0; i < target_h; ++i)
                    for (int j = 0; j < target_w; ++j)
                        gdst[src_i[i] * w + src_j[j]] += gsrc[i * target_w + j];
            }
        });
    }
    return out;
}

namespace {

// col(c*k*k + ki*k + kj, oy*out_w + ox) = padded input value.
void im2col(const double* x, int c, int h, int w, int k, int stride, int pad,
            int out_h, int out_w, Eigen::MatrixXd& col) {
    col.setZero(static_cast<Eigen::Index>(c) * k * k,
                static_cast<Eigen::Index>(out_h) * out_w);
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            const Eigen::Index column = static_cast<Eigen::Index>(oy) * out_w + ox;
            for (int ch = 0; ch < c; ++ch) {
                for (int ki = 0; ki < k; ++ki) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    for (int kj = 0; kj < k; ++kj) {
                        const int ix = ox * stride - pad + kj;
                        if (ix < 0 || ix >= w) continue;
                        col((static_cast<Eigen::Index>(ch) * k + ki) * k + kj, column) =
                            x[(static_cast<std::int64_t>(ch) * h + iy) * w + ix];
                    }
                }
            }
        }
    }
}

void col2im_accumulate(const Eigen::MatrixXd& dcol, int c, int h, int w, int k, int stride,
                       int pad, int out_h, int out_w, double* dx) {
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            const Eigen::Index column = static_cast<Eigen::Index>(oy) * out_w + ox;
            for (int ch = 0; ch < c; ++ch) {
                for (int ki = 0; ki < k; ++ki) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    for (int kj = 0; kj < k; ++kj) {
                        const int ix = ox * stride - pad + kj;
                        if (ix < 0 || ix >= w) continue;
                        dx[(static_cast<std::int64_t>(ch) * h + iy) * w + ix] +=
                            dcol((static_cast<Eigen::Index>(ch) * k + ki) * k + kj, column);
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    if (x.ndim() != 3) throw DimensionError("conv2d: input must be C×H×W");
    if (w.ndim() != 4) throw DimensionError("conv2d: weight must be O×C×k×k");
    if (w.extent(2) != w.extent(3)) throw DimensionError("conv2d: kernel must be square");
    if (stride < 1) throw ParameterError("conv2d: stride must be positive");
    if (padding < 0) throw ParameterError("conv2d: padding must be nonnegative");
    const int c = x.extent(0), h = x.extent(1), ww = x.extent(2);
    const int o = w.extent(0), k = w.extent(2);
    if (w.extent(1) != c)
        throw DimensionError("conv2d: input channels " + std::to_string(c) +
                             " do not match weight channels " + std::to_string(w.extent(1)));
    if (!b.defined() || b.ndim() != 1 || b.extent(0) != o)
        throw DimensionError("conv2d: bias must have one value per output channel");
    if (k > h + 2 * padding || k > ww + 2 * padding)
        throw DimensionError("conv2d: kernel larger than padded input");
    const int out_h = (h + 2 * padding - k) / stride + 1;
    const int out_w = (ww + 2 * padding - k) / stride + 1;

    auto col = std::make_shared<Eigen::MatrixXd>();
    im2col(x.array().data(), c, h, ww, k, stride, padding, out_h, out_w, *col);

    ConstRowMap w_mat(w.array().data(), o, static_cast<Eigen::Index>(c) * k * k);
    Array y(static_cast<std::int64_t>(o) * out_h * out_w);
    RowMap y_mat(y.data(), o, static_cast<Eigen::Index>(out_h) * out_w);
    y_mat.noalias() = w_mat * (*col);
    for (int oc = 0; oc < o; ++oc) y_mat.row(oc).array() += b.array()(oc);

    Tensor out = Tensor::from_array({o, out_h, out_w}, std::move(y));
    if (GradGraph* g = recording_for({&x, &w, &b})) {
        out.set_requires_grad(true);
        auto xi = x.ptr(), wi = w.ptr(), bi = b.ptr(), oi = out.ptr();
        g->record(out, [xi, wi, bi, oi, col, c, h, ww, o, k, stride, padding, out_h, out_w] {
            ConstRowMap gmat(oi->grad.data(), o, static_cast<Eigen::Index>(out_h) * out_w);
            if (wi->requires_grad) {
                wi->ensure_grad();
                RowMap dw(wi->grad.data(), o, static_cast<Eigen::Index>(c) * k * k);
                dw.noalias() += gmat * col->transpose();
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int oc = 0; oc < o; ++oc) bi->grad(oc) += gmat.row(oc).sum();
            }
            if (xi->requires_grad) {
                xi->ensure_grad();
                ConstRowMap wmat(wi->data.data(), o, static_cast<Eigen::Index>(c) * k * k);
                Eigen::MatrixXd dcol = wmat.transpose() * gmat;
                col2im_accumulate(dcol, c, h, ww, k, stride, padding, out_h, out_w,
                                  xi->grad.data());
            }
        });
    }
    return out;
}

namespace {

// out_index_of[i] = flat index in the reduced tensor for input element i.
std::vector<std::int64_t> reduction_map(const Shape& shape, const std::vector<int>& axes,
                                        Shape& out_shape) {
    const int nd = static_cast<int>(shape.size());
    std::vector<bool> reduced(nd, false);
    for (int a : axes) {
        if (a < 0 || a >= nd) throw DimensionError("reduction: axis out of range");
        reduced[a] = true;
    }
    out_shape.clear();
    for (int d = 0; d < nd; ++d)
        if (!reduced[d]) out_shape.push_back(shape[d]);
    if (out_shape.empty()) out_shape.push_back(1);

    std::vector<std::int64_t> out_stride(nd, 0);
    std::int64_t stride = 1;
    for (int d = nd - 1; d >= 0; --d) {
        if (!reduced[d]) {
            out_stride[d] = stride;
            stride *= shape[d];
        }
    }
    const std::int64_t n = numel(shape);
    std::vector<std::int64_t> map(static_cast<std::size_t>(n));
    std::vector<int> coord(nd, 0);
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t oi = 0;
        for (int d = 0; d < nd; ++d) oi += out_stride[d] * coord[d];
        map[static_cast<std::size_t>(i)] = oi;
        for (int d = nd - 1; d >= 0; --d) {
            if (++coord[d] < shape[d]) break;
            coord[d] = 0;
        }
    }
    return map;
}

Tensor reduce_impl(const Tensor& x, std::vector<int> axes, bool mean) {
    Shape out_shape;
    auto map = std::make_shared<std::vector<std::int64_t>>(
        reduction_map(x.shape(), axes, out_shape));
    const std::int64_t out_n = numel(out_shape);
    const double scale = mean ? static_cast<double>(out_n) / static_cast<double>(x.size()) : 1.0;
    Array y = Array::Zero(out_n);
    for (std::int64_t i = 0; i < x.size(); ++i) y((*map)[static_cast<std::size_t>(i)]) += x.array()(i);
    if (mean) y *= scale;
    Tensor out = Tensor::from_array(out_shape, std::move(y));
    if (GradGraph* g = recording_for({&x})) {
        out.set_requires_grad(true);
        auto xi = x.ptr(), oi = out.ptr();
        g->record(out, [xi, oi, map, scale, mean] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            const double f = mean ? scale : 1.0;
            for (Eigen::Index i = 0; i < xi->data.size(); ++i)
                xi->grad(i) += f * oi->grad((*map)[static_cast<std::size_t>(i)]);
        });
    }
    return out;
}

}  // namespace

Tensor sum_axes(const Tensor& x, std::vector<int> axes) { return reduce_impl(x, std::move(axes), false); }
Tensor mean_axes(const Tensor& x, std::vector<int> axes) { return reduce_impl(x, std::move(axes), true); }

Tensor sum_all(const Tensor& x) {
    std::vector<int> axes(static_cast<std::size_t>(x.ndim()));
    std::iota(axes.begin(), axes.end(), 0);
    return sum_axes(x, axes);
}

Tensor mean_all(const Tensor& x) {
    std::vector<int> axes(static_cast<std::size_t>(x.ndim()));
    std::iota(axes.begin(), axes.end(), 0);
    return mean_axes(x, axes);
}

namespace {

// Shared normalization backward for one group: dx = (g - y*(y·g)) / n.
void l2_group_backward(const double* y, const double* gout, double n, std::int64_t len,
                       double* gx) {
    if (n == 0.0) {
        for (std::int64_t i = 0; i < len; ++i) gx[i] += gout[i];
        return;
    }
    double dot = 0.0;
    for (std::int64_t i = 0; i < len; ++i) dot += y[i] * gout[i];
    for (std::int64_t i = 0; i < len; ++i) gx[i] += (gout[i] - y[i] * dot) / n;
}

}  // namespace

Tensor l2_normalize_all(const Tensor& x) {
    const double n = std::sqrt(x.array().square().sum());
    Array y = (n > 0.0) ? Array(x.array() / n) : Array(x.array());
    Tensor out = Tensor::from_array(x.shape(), std::move(y));
    if (GradGraph* g = recording_for({&x})) {
        out.set_requires_grad(true);
        auto xi = x.ptr(), oi = out.ptr();
        g->record(out, [xi, oi, n] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            l2_group_backward(oi->data.data(), oi->grad.data(), n, xi->data.size(),
                              xi->grad.data());
        });
    }
    return out;
}

Tensor l2_normalize_per_channel(const Tensor& x) {
    if (x.ndim() != 3) throw DimensionError("l2_normalize_per_channel: expects C×H×W");
    const int c = x.extent(0);
    const std::int64_t hw = static_cast<std::int64_t>(x.extent(1)) * x.extent(2);
    Array y(x.size());
    auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
        const double n = std::sqrt(x.array().segment(ch * hw, hw).square().sum());
        (*norms)[static_cast<std::size_t>(ch)] = n;
        y.segment(ch * hw, hw) =
            (n > 0.0) ? Array(x.array().segment(ch * hw, hw) / n)
                      : Array(x.array().segment(ch * hw, hw));
    }
    Tensor out = Tensor::from_array(x.shape(), std::move(y));
    if (GradGraph* g = recording_for({&x})) {
        out.set_requires_grad(true);
        auto xi = x.ptr(), oi = out.ptr();
        g->record(out, [xi, oi, norms, c, hw] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (int ch = 0; ch < c; ++ch)
                l2_group_backward(oi->data.data() + ch * hw, oi->grad.data() + ch * hw,
                                  (*norms)[static_cast<std::size_t>(ch)], hw,
                                  xi->grad.data() + ch * hw);
        });
    }
    return out;
}

Tensor log_softmax_channels(const Tensor& x) {
    if (x.ndim() != 3) throw DimensionError("log_softmax_channels: expects C×H×W");
    const int c = x.extent(0);
    const std::int64_t hw = static_cast<std::int64_t>(x.extent(1)) * x.extent(2);
    Array y(x.size());
    for (std::int64_t p = 0; p < hw; ++p) {
        double m = -std::numeric_limits<double>::infinity();
        for (int ch = 0; ch < c; ++ch) m = std::max(m, x.array()(ch * hw + p));
        double s = 0.0;
        for (int ch = 0; ch < c; ++ch) s += std::exp(x.array()(ch * hw + p) - m);
        const double lse = m + std::log(s);
        for (int ch = 0; ch < c; ++ch) y(ch * hw + p) = x.array()(ch * hw + p) - lse;
    }
    Tensor out = Tensor::from_array(x.shape(), std::move(y));
    if (GradGraph* g = recording_for({&x})) {
        out.set_requires_grad(true);
        auto xi = x.ptr(), oi = out.ptr();
        g->record(out, [xi, oi, c, hw] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (std::int64_t p = 0; p < hw; ++p) {
                double gsum = 0.0;
                for (int ch = 0; ch < c; ++ch) gsum += oi->grad(ch * hw + p);
                for (int ch = 0; ch < c; ++ch)
                    xi->grad(ch * hw + p) +=
                        oi->grad(ch * hw + p) - std::exp(oi->data(ch * hw + p)) * gsum;
            }
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw DimensionError("matmul: expects 2-D operands");
    const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
    if (b.extent(0) != k)
        throw DimensionError("matmul: inner extents " + std::to_string(k) + " vs " +
                             std::to_string(b.extent(0)));
    ConstRowMap am(a.array().data(), m, k);
    ConstRowMap bm(b.array().data(), k, n);
    Array y(static_cast<std::int64_t>(m) * n);
    RowMap ym(y.data(), m, n);
    ym.noalias() = am * bm;
    Tensor out = Tensor::from_array({m, n}, std::move(y));
    if (GradGraph* g = recording_for({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.ptr(), bi = b.ptr(), oi = out.ptr();
        g->record(out, [ai, bi, oi, m, k, n] {
            ConstRowMap gm(oi->grad.data(), m, n);
            if (ai->requires_grad) {
                ai->ensure_grad();
                RowMap da(ai->grad.data(), m, k);
                ConstRowMap bm2(bi->data.data(), k, n);
                da.noalias() += gm * bm2.transpose();
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                RowMap db(bi->grad.data(), k, n);
                ConstRowMap am2(ai->data.data(), m, k);
                db.noalias() += am2.transpose() * gm;
            }
        });
    }
    return out;
}

Tensor euclidean_distance(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size())
        throw DimensionError("euclidean_distance: length mismatch " + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()));
    Array diff = a.array() - b.array();
    const double d = std::sqrt(diff.square().sum());
    Tensor out = Tensor::scalar(d);
    if (GradGraph* g = recording_for({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.ptr(), bi = b.ptr(), oi = out.ptr();
        auto dp = std::make_shared<Array>(std::move(diff));
        g->record(out, [ai, bi, oi, dp, d] {
            if (d == 0.0) return;  // subgradient 0 at coincident points
            const double gscale = oi->grad(0) / d;
            if (ai->requires_grad) ai->accumulate_grad(gscale * (*dp));
            if (bi->requires_grad) bi->accumulate_grad(-gscale * (*dp));
        });
    }
    return out;
}

Tensor masked_nll(const Tensor& log_probs, const std::vector<std::uint8_t>& labels,
                  int ignore_id) {
    if (log_probs.ndim() != 3) throw DimensionError("masked_nll: expects C×H×W log-probs");
    const int c = log_probs.extent(0);
    const std::int64_t hw = static_cast<std::int64_t>(log_probs.extent(1)) * log_probs.extent(2);
    if (static_cast<std::int64_t>(labels.size()) != hw)
        throw DimensionError("masked_nll: label count does not match spatial extent");
    double acc = 0.0;
    std::int64_t valid = 0;
    for (std::int64_t p = 0; p < hw; ++p) {
        const int y = labels[static_cast<std::size_t>(p)];
        if (y == ignore_id) continue;
        if (y < 0 || y >= c)
            throw DomainError("masked_nll: label " + std::to_string(y) + " outside [0," +
                              std::to_string(c) + ")");
        acc -= log_probs.array()(y * hw + p);
        ++valid;
    }
    if (valid == 0) throw UndefinedMeanError("masked_nll: every pixel is ignored");
    Tensor out = Tensor::scalar(acc / static_cast<double>(valid));
    if (GradGraph* g = recording_for({&log_probs})) {
        out.set_requires_grad(true);
        auto xi = log_probs.ptr(), oi = out.ptr();
        auto labels_copy = std::make_shared<std::vector<std::uint8_t>>(labels);
        g->record(out, [xi, oi, labels_copy, hw, valid, ignore_id] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            const double gs = oi->grad(0) / static_cast<double>(valid);
            for (std::int64_t p = 0; p < hw; ++p) {
                const int y = (*labels_copy)[static_cast<std::size_t>(p)];
                if (y == ignore_id) continue;
                xi->grad(y * hw + p) -= gs;
            }
        });
    }
    return out;
}

void backward(const Tensor& loss) {
    GradGraph* g = GradGraph::current();
    if (!g) throw ContractViolation("backward: no active gradient graph");
    g->backward(loss);
}

Tensor crop3d(const Tensor& x, int top, int left, int height, int width) {
    if (x.ndim() != 3) throw DimensionError("crop3d: expects C×H×W");
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (top < 0 || left < 0 || height <= 0 || width <= 0 || top + height > h || left + width > w)
        throw DimensionError("crop3d: window out of bounds");
    Array y(static_cast<std::int64_t>(c) * height * width);
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < height; ++i)
            for (int j = 0; j < width; ++j)
                y((static_cast<std::int64_t>(ch) * height + i) * width + j) =
                    x.array()((static_cast<std::int64_t>(ch) * h + top + i) * w + left + j);
    return Tensor::from_array({c, height, width}, std::move(y));
}

Tensor flip_w(const Tensor& x) {
    if (x.ndim() != 3) throw DimensionError("flip_w: expects C×H×W");
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    Array y(x.size());
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                y((static_cast<std::int64_t>(ch) * h + i) * w + j) =
                    x.array()((static_cast<std::int64_t>(ch) * h + i) * w + (w - 1 - j));
    return Tensor::from_array({c, h, w}, std::move(y));
}

}  // namespace vpr
