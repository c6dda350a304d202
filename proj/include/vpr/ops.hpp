#pragma once

#include <cstdint>
#include <vector>

#include "vpr/tensor.hpp"

namespace vpr {

// Every operation here computes forward immediately and, when a GradGraph is
// active on the current thread and any input requires grad, records a node
// whose backward rule accumulates into the inputs' grad buffers.

// ---- arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor rsub_scalar(double c, const Tensor& x);  // c - x
Tensor neg(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- elementwise ----
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
// Overflow-safe softplus: max(x,0) + log1p(exp(-|x|)). Strictly positive.
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
// x^p with x >= 0 and a scalar-tensor exponent; differentiable in both.
// At x == 0 the x-derivative is taken as 0 unless p == 1.
Tensor pow_elem(const Tensor& x, const Tensor& p);
Tensor pow_scalar(const Tensor& x, double p);

// ---- structure ----
Tensor concat(const std::vector<Tensor>& parts, int axis);
// x: C×H×W weighted per pixel by m: 1×H×W.
Tensor broadcast_mul(const Tensor& x, const Tensor& m);
// out[c,i,j] = x[c, floor(i*H/Ht), floor(j*W/Wt)]; backward sums replicas.
Tensor upsample_nearest(const Tensor& x, int target_h, int target_w);
// x: C×H×W, w: O×C×k×k, b: O. Output O×H'×W' with
// H' = floor((H + 2*padding - k)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);

// ---- reductions ----
Tensor sum_axes(const Tensor& x, std::vector<int> axes);
Tensor mean_axes(const Tensor& x, std::vector<int> axes);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---- normalization & similarity ----
Tensor l2_normalize_all(const Tensor& x);
// C×H×W: each channel's spatial block scaled to unit Frobenius norm.
Tensor l2_normalize_per_channel(const Tensor& x);
// C×H×W: log softmax over the channel axis, per pixel.
Tensor log_softmax_channels(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor euclidean_distance(const Tensor& a, const Tensor& b);
// Mean over non-ignored pixels of -log_probs[label, pixel]. labels has one
// class id per pixel, row-major, ignore_id pixels excluded.
Tensor masked_nll(const Tensor& log_probs, const std::vector<std::uint8_t>& labels,
                  int ignore_id = 255);

// Runs backward on the graph active on this thread.
void backward(const Tensor& loss);

// ---- grad-free data helpers (input preprocessing only) ----
Tensor crop3d(const Tensor& x, int top, int left, int height, int width);
Tensor flip_w(const Tensor& x);

}  // namespace vpr
