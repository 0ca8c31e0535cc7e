#pragma once

#include "posegauss/tape.hpp"

#include <vector>

namespace pg {

// Differentiable tensor ops recorded on a Tape.
//
// Binary ops accept `b` either with the same shape as `a`, as H×W×1 (broadcast
// over channels), as 1×1×C (broadcast over pixels) or as 1×1×1.

template <typename Scalar> Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);

/// a·s + t with constant s, t.
template <typename Scalar> Var<Scalar> affine(Var<Scalar> a, Scalar s, Scalar t = Scalar(0));
template <typename Scalar> Var<Scalar> one_minus(Var<Scalar> a) {
  return affine(a, Scalar(-1), Scalar(1));
}

template <typename Scalar> Var<Scalar> relu(Var<Scalar> a);
template <typename Scalar> Var<Scalar> sigmoid(Var<Scalar> a);
template <typename Scalar> Var<Scalar> tanh(Var<Scalar> a);
template <typename Scalar> Var<Scalar> softplus(Var<Scalar> a);
/// max(a, floor); the gradient is zero where the floor is active.
template <typename Scalar> Var<Scalar> clamp_min(Var<Scalar> a, Scalar floor);

template <typename Scalar> Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts);
template <typename Scalar> Var<Scalar> slice_channels(Var<Scalar> a, int begin, int count);

/// Mean over pixels → 1×1×C.
template <typename Scalar> Var<Scalar> global_avg_pool(Var<Scalar> a);
/// Sum / mean of every element → 1×1×1.
template <typename Scalar> Var<Scalar> sum(Var<Scalar> a);
template <typename Scalar> Var<Scalar> mean(Var<Scalar> a);
/// Σ w_i·a_i over scalar (1×1×1) vars with constant weights.
template <typename Scalar>
Var<Scalar> weighted_sum(const std::vector<Var<Scalar>>& terms, const std::vector<Scalar>& weights);

/// Nearest-neighbour upsampling by an integer factor.
template <typename Scalar> Var<Scalar> upsample_nearest(Var<Scalar> a, int factor);
/// Bilinear upsampling by an integer factor. Output pixel (y, x) samples the
/// input at (y/f, x/f) with edge clamping, so input pixel i sits on output
/// pixel f·i.
template <typename Scalar> Var<Scalar> upsample_bilinear(Var<Scalar> a, int factor);

/// Plain (non-recorded) bilinear upsampling with the same convention.
template <typename Scalar>
Tensor3<Scalar> upsample_bilinear_value(const Tensor3<Scalar>& a, int factor);

}  // namespace pg
