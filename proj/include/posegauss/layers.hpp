#pragma once

#include "posegauss/ops.hpp"
#include "posegauss/rng.hpp"

#include <optional>
#include <string>

namespace pg {

/// Convolution weights, shape (kh, kw, in, out), plus bias (out).
template <typename Scalar>
struct ConvParams {
  ParamBuffer<Scalar>* weight = nullptr;
  ParamBuffer<Scalar>* bias = nullptr;
  int kh = 0, kw = 0, in_channels = 0, out_channels = 0;
};

/// Registers a conv layer and fills it with fan-in-scaled uniform weights
/// U(±sqrt(3/fan_in)) from a stream derived from (seed, name). Bias is zero.
template <typename Scalar>
ConvParams<Scalar> make_conv(ParamStore<Scalar>& store, const std::string& name, int kh, int kw,
                             int in_channels, int out_channels, std::uint64_t seed);

template <typename Scalar>
void init_fan_in_uniform(ParamBuffer<Scalar>& p, int fan_in, std::uint64_t seed,
                         double gain = 1.0);

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> input, const ConvParams<Scalar>& params, int stride,
                   int padding);

/// Squeeze-and-excitation: x · sigmoid(fc2(relu(fc1(gap(x))))).
template <typename Scalar>
struct SEParams {
  ConvParams<Scalar> squeeze;  // 1×1, C → C/r
  ConvParams<Scalar> excite;   // 1×1, C/r → C
};

template <typename Scalar>
SEParams<Scalar> make_se(ParamStore<Scalar>& store, const std::string& name, int channels,
                         int reduction, std::uint64_t seed);

template <typename Scalar>
Var<Scalar> se_block(Var<Scalar> input, const SEParams<Scalar>& params);
/// Gate vector g ∈ (0,1)^C that se_block multiplies in (1×1×C).
template <typename Scalar>
Var<Scalar> se_gate(Var<Scalar> input, const SEParams<Scalar>& params);

/// relu(SE(conv2(relu(conv1(x))))) + skip(x); skip is a 1×1 projection
/// whenever the width or the stride changes, the identity otherwise.
template <typename Scalar>
struct ResidualParams {
  ConvParams<Scalar> conv1;
  ConvParams<Scalar> conv2;
  SEParams<Scalar> se;
  std::optional<ConvParams<Scalar>> projection;
  int stride = 1;
};

template <typename Scalar>
ResidualParams<Scalar> make_residual(ParamStore<Scalar>& store, const std::string& name,
                                     int in_channels, int out_channels, int stride,
                                     int se_reduction, std::uint64_t seed);

template <typename Scalar>
Var<Scalar> residual_block(Var<Scalar> input, const ResidualParams<Scalar>& params);

/// Convolutional GRU with 3×3 gates over concat(hidden, input):
///   z = σ(Wz ⋆ [h,x]),  r = σ(Wr ⋆ [h,x]),  h̃ = tanh(Wq ⋆ [r·h, x]),
///   h' = (1 − z)·h + z·h̃.
template <typename Scalar>
struct GRUParams {
  ConvParams<Scalar> update;
  ConvParams<Scalar> reset;
  ConvParams<Scalar> candidate;
  int hidden = 0;
  int input = 0;
};

template <typename Scalar>
GRUParams<Scalar> make_conv_gru(ParamStore<Scalar>& store, const std::string& name, int hidden,
                                int input, std::uint64_t seed);

template <typename Scalar>
Var<Scalar> conv_gru_step(Var<Scalar> hidden, Var<Scalar> input, const GRUParams<Scalar>& params);

}  // namespace pg
