#pragma once

// Test-only reference implementations, kept independent of the library's
// computation paths so they can serve as oracles.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vpr/ops.hpp"
#include "vpr/rng.hpp"
#include "vpr/tensor.hpp"

namespace oracle {

// Direct sextuple-loop convolution.
inline vpr::Tensor naive_conv2d(const vpr::Tensor& x, const vpr::Tensor& w,
                                const vpr::Tensor& b, int stride, int padding) {
    const int c = x.extent(0), h = x.extent(1), ww = x.extent(2);
    const int o = w.extent(0), k = w.extent(2);
    const int out_h = (h + 2 * padding - k) / stride + 1;
    const int out_w = (ww + 2 * padding - k) / stride + 1;
    vpr::Tensor out = vpr::Tensor::zeros({o, out_h, out_w});
    for (int oc = 0; oc < o; ++oc)
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                double acc = b.at({oc});
                for (int ic = 0; ic < c; ++ic)
                    for (int ki = 0; ki < k; ++ki)
                        for (int kj = 0; kj < k; ++kj) {
                            const int iy = oy * stride - padding + ki;
                            const int ix = ox * stride - padding + kj;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
                            acc += x.at({ic, iy, ix}) * w.at({oc, ic, ki, kj});
                        }
                out.set({oc, oy, ox}, acc);
            }
    return out;
}

// Central finite differences against analytic grads. `build_loss` must
// reconstruct the forward graph from the leaves' current data. Coordinates
// are sampled when a leaf is larger than max_coords. Relative error uses a
// unit floor so near-zero gradients compare absolutely.
struct GradCheck {
    double h = 1e-5;
    int max_coords = 0;  // 0 → every coordinate
    vpr::Rng* picker = nullptr;

    double max_rel_error(const std::function<vpr::Tensor()>& build_loss,
                         const std::vector<vpr::Tensor>& leaves) const {
        std::vector<vpr::Array> analytic;
        {
            vpr::GradGraph graph;
            vpr::GradGraph::Scope scope(graph);
            for (const vpr::Tensor& leaf : leaves) {
                vpr::Tensor l = leaf;
                l.zero_grad();
            }
            vpr::Tensor loss = build_loss();
            graph.backward(loss);
            for (const vpr::Tensor& leaf : leaves)
                analytic.push_back(leaf.has_grad() ? leaf.grad_array()
                                                   : vpr::Array::Zero(leaf.size()));
        }
        double worst = 0.0;
        for (std::size_t li = 0; li < leaves.size(); ++li) {
            vpr::Tensor leaf = leaves[li];
            std::vector<Eigen::Index> coords;
            if (max_coords <= 0 || leaf.size() <= max_coords) {
                for (Eigen::Index i = 0; i < leaf.size(); ++i) coords.push_back(i);
            } else {
                for (int i = 0; i < max_coords; ++i)
                    coords.push_back(static_cast<Eigen::Index>(picker->uniform_index(
                        static_cast<std::uint64_t>(leaf.size()))));
            }
            for (Eigen::Index i : coords) {
                const double orig = leaf.array()(i);
                leaf.array()(i) = orig + h;
                const double f_plus = build_loss().value();
                leaf.array()(i) = orig - h;
                const double f_minus = build_loss().value();
                leaf.array()(i) = orig;
                const double fd = (f_plus - f_minus) / (2.0 * h);
                const double an = analytic[li](i);
                const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
                worst = std::max(worst, std::abs(fd - an) / denom);
            }
        }
        return worst;
    }
};

// Exhaustive-sort nearest neighbors with loop-computed distances.
inline std::vector<std::pair<std::uint64_t, double>> exhaustive_knn(
    const std::vector<std::pair<std::uint64_t, std::vector<double>>>& gallery,
    const std::vector<double>& query, int k) {
    std::vector<std::pair<double, std::uint64_t>> scored;
    for (const auto& [id, vec] : gallery) {
        double acc = 0.0;
        for (std::size_t i = 0; i < vec.size(); ++i) {
            const double d = vec[i] - query[i];
            acc += d * d;
        }
        scored.emplace_back(std::sqrt(acc), id);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::pair<std::uint64_t, double>> out;
    for (int i = 0; i < k && i < static_cast<int>(scored.size()); ++i)
        out.emplace_back(scored[static_cast<std::size_t>(i)].second,
                         scored[static_cast<std::size_t>(i)].first);
    return out;
}

// Random tensor with entries kept away from relu/hinge kinks.
inline vpr::Tensor random_tensor(const vpr::Shape& shape, vpr::Rng& rng, double lo = -2.0,
                                 double hi = 2.0, double dead_zone = 0.05) {
    vpr::Array data(vpr::numel(shape));
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        double v = rng.uniform(lo, hi);
        while (std::abs(v) < dead_zone) v = rng.uniform(lo, hi);
        data(i) = v;
    }
    return vpr::Tensor::from_array(shape, std::move(data), true);
}

}  // namespace oracle
