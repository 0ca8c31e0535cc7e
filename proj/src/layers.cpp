#include "posegauss/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace pg {
namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  int H, W, C, kh, kw, stride, pad, Ho, Wo;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename Scalar>
void im2col(const Tensor3<Scalar>& x, const ConvGeometry& g, RowMatrix<Scalar>& col) {
  col.resize(Eigen::Index(g.Ho) * g.Wo, Eigen::Index(g.kh) * g.kw * g.C);
  for (int oy = 0; oy < g.Ho; ++oy) {
    for (int ox = 0; ox < g.Wo; ++ox) {
      Scalar* row = col.data() + (Eigen::Index(oy) * g.Wo + ox) * col.cols();
      for (int ky = 0; ky < g.kh; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          Scalar* dst = row + (ky * g.kw + kx) * g.C;
          if (iy < 0 || iy >= g.H || ix < 0 || ix >= g.W) {
            std::fill(dst, dst + g.C, Scalar(0));
          } else {
            const Scalar* src = x.ptr() + (Eigen::Index(iy) * g.W + ix) * g.C;
            std::copy(src, src + g.C, dst);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& col, const ConvGeometry& g, Tensor3<Scalar>& dx) {
  for (int oy = 0; oy < g.Ho; ++oy) {
    for (int ox = 0; ox < g.Wo; ++ox) {
      const Scalar* row = col.data() + (Eigen::Index(oy) * g.Wo + ox) * col.cols();
      for (int ky = 0; ky < g.kh; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.H) continue;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.W) continue;
          const Scalar* src = row + (ky * g.kw + kx) * g.C;
          Scalar* dst = dx.ptr() + (Eigen::Index(iy) * g.W + ix) * g.C;
          for (int c = 0; c < g.C; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
void init_fan_in_uniform(ParamBuffer<Scalar>& p, int fan_in, std::uint64_t seed, double gain) {
  Rng rng(mix_seed(seed, p.name));
  const double bound = gain * std::sqrt(3.0 / std::max(1, fan_in));
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value[i] = Scalar(rng.uniform(-bound, bound));
}

template <typename Scalar>
ConvParams<Scalar> make_conv(ParamStore<Scalar>& store, const std::string& name, int kh, int kw,
                             int in_channels, int out_channels, std::uint64_t seed) {
  ConvParams<Scalar> p;
  p.kh = kh;
  p.kw = kw;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.weight = &store.add(name + ".weight", {kh, kw, in_channels, out_channels});
  p.bias = &store.add(name + ".bias", {out_channels});
  init_fan_in_uniform(*p.weight, kh * kw * in_channels, seed);
  return p;
}

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> input, const ConvParams<Scalar>& params, int stride, int padding) {
  const Tensor3<Scalar>& x = input.value();
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  if (x.channels() != params.in_channels)
    throw std::invalid_argument("conv2d: input " + x.shape_string() + " does not match kernel " +
                                std::to_string(params.kh) + "x" + std::to_string(params.kw) + "x" +
                                std::to_string(params.in_channels) + "x" +
                                std::to_string(params.out_channels));
  ConvGeometry g{x.height(), x.width(), x.channels(), params.kh, params.kw, stride, padding, 0, 0};
  g.Ho = (g.H + 2 * padding - g.kh) / stride + 1;
  g.Wo = (g.W + 2 * padding - g.kw) / stride + 1;
  if (g.H + 2 * padding < g.kh || g.W + 2 * padding < g.kw || g.Ho <= 0 || g.Wo <= 0)
    throw std::invalid_argument("conv2d: input " + x.shape_string() + " smaller than kernel");

  const Eigen::Index K = Eigen::Index(g.kh) * g.kw * g.C;
  const int Cout = params.out_channels;
  Eigen::Map<const RowMatrix<Scalar>> Wm(params.weight->value.data(), K, Cout);

  Tensor3<Scalar> out(g.Ho, g.Wo, Cout);
  if (g.pointwise()) {
    out.pixels().noalias() = x.pixels() * Wm;
  } else {
    RowMatrix<Scalar> col;
    im2col(x, g, col);
    out.pixels().noalias() = col * Wm;
  }
  out.pixels().rowwise() += params.bias->value.transpose();

  Tape<Scalar>& tape = *input.tape;
  ParamBuffer<Scalar>* weight = params.weight;
  ParamBuffer<Scalar>* bias = params.bias;
  return tape.push(std::move(out), true, [input, g, weight, bias, K, Cout](Tape<Scalar>& t, int self) {
    const Tensor3<Scalar>& dy = t.grad(self);
    const Tensor3<Scalar>& x = t.value(input);
    Eigen::Map<const RowMatrix<Scalar>> Wm(weight->value.data(), K, Cout);
    Eigen::Map<RowMatrix<Scalar>> dW(weight->grad.data(), K, Cout);
    bias->grad += dy.pixels().colwise().sum().transpose();
    const bool need_dx = t.requires_grad(input);
    if (g.pointwise()) {
      dW.noalias() += x.pixels().transpose() * dy.pixels();
      if (need_dx) t.grad(input).pixels().noalias() += dy.pixels() * Wm.transpose();
      return;
    }
    RowMatrix<Scalar> col;
    im2col(x, g, col);
    dW.noalias() += col.transpose() * dy.pixels();
    if (need_dx) {
      col.noalias() = dy.pixels() * Wm.transpose();
      col2im_add(col, g, t.grad(input));
    }
  });
}

template <typename Scalar>
SEParams<Scalar> make_se(ParamStore<Scalar>& store, const std::string& name, int channels,
                         int reduction, std::uint64_t seed) {
  if (reduction < 1 || channels % reduction != 0)
    throw std::invalid_argument("make_se: reduction " + std::to_string(reduction) +
                                " does not divide " + std::to_string(channels) + " channels");
  const int mid = channels / reduction;
  return SEParams<Scalar>{make_conv(store, name + ".squeeze", 1, 1, channels, mid, seed),
                          make_conv(store, name + ".excite", 1, 1, mid, channels, seed)};
}

template <typename Scalar>
Var<Scalar> se_gate(Var<Scalar> input, const SEParams<Scalar>& params) {
  Var<Scalar> pooled = global_avg_pool(input);
  Var<Scalar> hidden = relu(conv2d(pooled, params.squeeze, 1, 0));
  return sigmoid(conv2d(hidden, params.excite, 1, 0));
}

template <typename Scalar>
Var<Scalar> se_block(Var<Scalar> input, const SEParams<Scalar>& params) {
  return mul(input, se_gate(input, params));
}

template <typename Scalar>
ResidualParams<Scalar> make_residual(ParamStore<Scalar>& store, const std::string& name,
                                     int in_channels, int out_channels, int stride,
                                     int se_reduction, std::uint64_t seed) {
  ResidualParams<Scalar> p;
  p.stride = stride;
  p.conv1 = make_conv(store, name + ".conv1", 3, 3, in_channels, out_channels, seed);
  p.conv2 = make_conv(store, name + ".conv2", 3, 3, out_channels, out_channels, seed);
  p.se = make_se(store, name + ".se", out_channels, se_reduction, seed);
  if (in_channels != out_channels || stride != 1)
    p.projection = make_conv(store, name + ".proj", 1, 1, in_channels, out_channels, seed);
  return p;
}

template <typename Scalar>
Var<Scalar> residual_block(Var<Scalar> input, const ResidualParams<Scalar>& params) {
  Var<Scalar> h = relu(conv2d(input, params.conv1, params.stride, 1));
  h = se_block(conv2d(h, params.conv2, 1, 1), params.se);
  Var<Scalar> skip = params.projection ? conv2d(input, *params.projection, params.stride, 0) : input;
  return add(relu(h), skip);
}

template <typename Scalar>
GRUParams<Scalar> make_conv_gru(ParamStore<Scalar>& store, const std::string& name, int hidden,
                                int input, std::uint64_t seed) {
  GRUParams<Scalar> p;
  p.hidden = hidden;
  p.input = input;
  p.update = make_conv(store, name + ".update", 3, 3, hidden + input, hidden, seed);
  p.reset = make_conv(store, name + ".reset", 3, 3, hidden + input, hidden, seed);
  p.candidate = make_conv(store, name + ".candidate", 3, 3, hidden + input, hidden, seed);
  return p;
}

template <typename Scalar>
Var<Scalar> conv_gru_step(Var<Scalar> hidden, Var<Scalar> input, const GRUParams<Scalar>& params) {
  require_same_spatial(hidden.value(), input.value(), "conv_gru_step");
  Var<Scalar> hx = concat_channels<Scalar>({hidden, input});
  Var<Scalar> z = sigmoid(conv2d(hx, params.update, 1, 1));
  Var<Scalar> r = sigmoid(conv2d(hx, params.reset, 1, 1));
  Var<Scalar> q = tanh(conv2d(concat_channels<Scalar>({mul(r, hidden), input}), params.candidate, 1, 1));
  // (1 - z)·h + z·q
  return add(mul(one_minus(z), hidden), mul(z, q));
}

#define PG_INSTANTIATE_LAYERS(S)                                                                  \
  template void init_fan_in_uniform(ParamBuffer<S>&, int, std::uint64_t, double);                 \
  template ConvParams<S> make_conv(ParamStore<S>&, const std::string&, int, int, int, int,        \
                                   std::uint64_t);                                                \
  template Var<S> conv2d(Var<S>, const ConvParams<S>&, int, int);                                 \
  template SEParams<S> make_se(ParamStore<S>&, const std::string&, int, int, std::uint64_t);      \
  template Var<S> se_gate(Var<S>, const SEParams<S>&);                                            \
  template Var<S> se_block(Var<S>, const SEParams<S>&);                                           \
  template ResidualParams<S> make_residual(ParamStore<S>&, const std::string&, int, int, int, int, \
                                           std::uint64_t);                                        \
  template Var<S> residual_block(Var<S>, const ResidualParams<S>&);                               \
  template GRUParams<S> make_conv_gru(ParamStore<S>&, const std::string&, int, int, std::uint64_t); \
  template Var<S> conv_gru_step(Var<S>, Var<S>, const GRUParams<S>&);

PG_INSTANTIATE_LAYERS(float)
PG_INSTANTIATE_LAYERS(double)

}  // namespace pg
