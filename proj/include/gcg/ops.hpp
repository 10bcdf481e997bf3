#pragma once

#include <vector>

#include "gcg/rng.hpp"
#include "gcg/tensor.hpp"

namespace gcg::ops {

// Elementwise / scalar -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
/// Numerically stable logistic; outputs are clamped into the open (0,1).
Tensor sigmoid(const Tensor& a);
Tensor log_elem(const Tensor& a);
/// Softmax over the last axis, with max subtraction per slice.
Tensor softmax(const Tensor& a);

// Reductions -----------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_abs(const Tensor& a);    // d/dx uses sign(x), sign(0) = 0
Tensor sum_square(const Tensor& a);

// Linear algebra -------------------------------------------------------------

/// x: [in] or [n,in]; w: [in,out]; b: [out] (pass undefined Tensor for none).
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
/// 1x1 convolution. x: [H,W,Cin]; w: [Cin,Cout]; b: [Cout] or undefined.
Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& b);
/// Same-padded 3x3 convolution. x: [H,W,Cin]; w: [3,3,Cin,Cout]; b: [Cout].
Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b);
/// 2x2 average pool, stride 2. Ragged edge cells average over the valid
/// window only. [H,W,C] -> [ceil(H/2),ceil(W/2),C].
Tensor avg_pool2(const Tensor& x);

// Normalization --------------------------------------------------------------

/// Normalizes the last axis. scale/shift: rank-1 matching the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                  double eps = 1e-5);

/// Normalizes per channel (last axis) with statistics over all other axes;
/// variance is the biased estimator. In training mode the batch statistics
/// are used and the running buffers are updated in place:
///   running = momentum * running + (1 - momentum) * batch.
/// In eval mode the running buffers are used and left untouched.
Tensor batch_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum = 0.99, double eps = 1e-5);

/// Inverted dropout. rate in [0,1); rate 0 or eval mode is an identity that
/// consumes no rng draws. forced_keep, when given, supplies the keep mask
/// (1 = keep) instead of sampling.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training,
               const std::vector<unsigned char>* forced_keep = nullptr);

// Broadcast / spatial --------------------------------------------------------

/// x: [H,W,D] + v: [D], v added at every spatial position.
Tensor broadcast_add_channel(const Tensor& x, const Tensor& v);
/// x: [H,W,D]; gate: [H,W,1] (broadcast over channels) or [H,W,D].
Tensor mul_gate(const Tensor& x, const Tensor& gate);
/// x: [H,W,D]; s: [D], per-channel scaling.
Tensor channel_scale(const Tensor& x, const Tensor& s);
/// x: [H,W,D]; w: [H,W] or [H,W,1]. out[d] = sum_{h,w} w[h,w] * x[h,w,d].
Tensor weighted_spatial_sum(const Tensor& x, const Tensor& w);
/// Global average pool. [H,W,D] -> [D].
Tensor spatial_mean(const Tensor& x);

// Structure ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape);
/// k rank-1 tensors of size D -> [k,D].
Tensor stack_rows(const std::vector<Tensor>& rows);
/// Rows [start, start+count) of a rank-2 [N,M] tensor -> [count,M].
Tensor slice_rows(const Tensor& x, int start, int count);

bool all_finite(const Tensor& t);

} // namespace gcg::ops
