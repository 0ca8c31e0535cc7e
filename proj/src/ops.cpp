#include "posegauss/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace pg {
namespace {

enum class Broadcast { Same, PerPixel, PerChannel, Scalar };

template <typename Scalar>
Broadcast broadcast_mode(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b,
                         const char* what) {
  if (a.same_shape(b)) return Broadcast::Same;
  if (b.height() == 1 && b.width() == 1 && b.channels() == 1) return Broadcast::Scalar;
  if (a.same_spatial(b) && b.channels() == 1) return Broadcast::PerPixel;
  if (b.height() == 1 && b.width() == 1 && b.channels() == a.channels())
    return Broadcast::PerChannel;
  throw std::invalid_argument(std::string(what) + ": cannot broadcast " +
                              b.shape_string() + " onto " + a.shape_string());
}

// Index of the b element paired with flat index i of a.
inline Eigen::Index b_index(Broadcast mode, Eigen::Index i, int channels) {
  switch (mode) {
    case Broadcast::Same: return i;
    case Broadcast::PerPixel: return i / channels;
    case Broadcast::PerChannel: return i % channels;
    case Broadcast::Scalar: return 0;
  }
  return 0;
}

template <typename Scalar, typename Fwd, typename GradA, typename GradB>
Var<Scalar> binary(Var<Scalar> a, Var<Scalar> b, const char* what, Fwd fwd, GradA ga,
                   GradB gb) {
  Tape<Scalar>& tape = *a.tape;
  const Tensor3<Scalar>& av = a.value();
  const Tensor3<Scalar>& bv = b.value();
  const Broadcast mode = broadcast_mode(av, bv, what);
  const int c = av.channels();
  Tensor3<Scalar> out = Tensor3<Scalar>::zeros_like(av);
  if (mode == Broadcast::Same) {
    for (Eigen::Index i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    for (Eigen::Index i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[b_index(mode, i, c)]);
  }
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), rg, [a, b, mode, c, ga, gb](Tape<Scalar>& t, int self) {
    const Tensor3<Scalar>& g = t.grad(self);
    const Tensor3<Scalar>& av = t.value(a);
    const Tensor3<Scalar>& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor3<Scalar>& gA = t.grad(a);
      for (Eigen::Index i = 0; i < g.size(); ++i)
        gA[i] += g[i] * ga(av[i], bv[b_index(mode, i, c)]);
    }
    if (t.requires_grad(b)) {
      Tensor3<Scalar>& gB = t.grad(b);
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        const Eigen::Index j = b_index(mode, i, c);
        gB[j] += g[i] * gb(av[i], bv[j]);
      }
    }
  });
}

// Unary op; `deriv(x, y)` gives dy/dx from the input and output values.
template <typename Scalar, typename Fwd, typename Deriv>
Var<Scalar> unary(Var<Scalar> a, Fwd fwd, Deriv deriv) {
  Tape<Scalar>& tape = *a.tape;
  const Tensor3<Scalar>& av = a.value();
  Tensor3<Scalar> out = Tensor3<Scalar>::zeros_like(av);
  for (Eigen::Index i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return tape.push(std::move(out), tape.requires_grad(a), [a, deriv](Tape<Scalar>& t, int self) {
    const Tensor3<Scalar>& g = t.grad(self);
    const Tensor3<Scalar>& y = t.value(Var<Scalar>{&t, self});
    const Tensor3<Scalar>& x = t.value(a);
    Tensor3<Scalar>& gA = t.grad(a);
    for (Eigen::Index i = 0; i < g.size(); ++i) gA[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  return binary(
      a, b, "add", [](Scalar x, Scalar y) { return x + y; },
      [](Scalar, Scalar) { return Scalar(1); }, [](Scalar, Scalar) { return Scalar(1); });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  return binary(
      a, b, "sub", [](Scalar x, Scalar y) { return x - y; },
      [](Scalar, Scalar) { return Scalar(1); }, [](Scalar, Scalar) { return Scalar(-1); });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  return binary(
      a, b, "mul", [](Scalar x, Scalar y) { return x * y; },
      [](Scalar, Scalar y) { return y; }, [](Scalar x, Scalar) { return x; });
}

template <typename Scalar>
Var<Scalar> affine(Var<Scalar> a, Scalar s, Scalar t) {
  return unary(
      a, [s, t](Scalar x) { return x * s + t; }, [s](Scalar, Scalar) { return s; });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  return unary(
      a, [](Scalar x) { return x > Scalar(0) ? x : Scalar(0); },
      [](Scalar x, Scalar) { return x > Scalar(0) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  return unary(
      a, [](Scalar x) { return pg::sigmoid(x); },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a) {
  return unary(
      a, [](Scalar x) { return std::tanh(x); },
      [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

template <typename Scalar>
Var<Scalar> softplus(Var<Scalar> a) {
  return unary(
      a, [](Scalar x) { return pg::softplus(x); },
      [](Scalar x, Scalar) { return pg::sigmoid(x); });
}

template <typename Scalar>
Var<Scalar> clamp_min(Var<Scalar> a, Scalar floor) {
  return unary(
      a, [floor](Scalar x) { return x > floor ? x : floor; },
      [floor](Scalar x, Scalar) { return x > floor ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  Tape<Scalar>& tape = *parts.front().tape;
  const Tensor3<Scalar>& first = parts.front().value();
  int total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require_same_spatial(first, p.value(), "concat_channels");
    total += p.channels();
    rg = rg || tape.requires_grad(p);
  }
  Tensor3<Scalar> out(first.height(), first.width(), total);
  int offset = 0;
  for (const auto& p : parts) {
    out.pixels().middleCols(offset, p.channels()) = p.value().pixels();
    offset += p.channels();
  }
  return tape.push(std::move(out), rg, [parts](Tape<Scalar>& t, int self) {
    const Tensor3<Scalar>& g = t.grad(self);
    int offset = 0;
    for (const auto& p : parts) {
      const int c = t.value(p).channels();
      if (t.requires_grad(p)) t.grad(p).pixels() += g.pixels().middleCols(offset, c);
      offset += c;
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_channels(Var<Scalar> a, int begin, int count) {
  const Tensor3<Scalar>& av = a.value();
  if (begin < 0 || count < 0 || begin + count > av.channels())
    throw std::invalid_argument("slice_channels: range out of bounds for " + av.shape_string());
  return a.tape->push(av.slice_channels(begin, count), a.tape->requires_grad(a),
                      [a, begin, count](Tape<Scalar>& t, int self) {
                        t.grad(a).pixels().middleCols(begin, count) += t.grad(self).pixels();
                      });
}

template <typename Scalar>
Var<Scalar> global_avg_pool(Var<Scalar> a) {
  const Tensor3<Scalar>& av = a.value();
  const Eigen::Index n = Eigen::Index(av.height()) * av.width();
  Tensor3<Scalar> out(1, 1, av.channels());
  out.pixels() = av.pixels().colwise().sum() / Scalar(n);
  return a.tape->push(std::move(out), a.tape->requires_grad(a), [a, n](Tape<Scalar>& t, int self) {
    const auto g = t.grad(self).pixels();
    t.grad(a).pixels().rowwise() += g.row(0) / Scalar(n);
  });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  Tensor3<Scalar> out(1, 1, 1);
  out[0] = a.value().data().sum();
  return a.tape->push(std::move(out), a.tape->requires_grad(a), [a](Tape<Scalar>& t, int self) {
    t.grad(a).data().array() += t.grad(self)[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> a) {
  const Eigen::Index n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return affine(sum(a), Scalar(1) / Scalar(n));
}

template <typename Scalar>
Var<Scalar> weighted_sum(const std::vector<Var<Scalar>>& terms,
                         const std::vector<Scalar>& weights) {
  if (terms.empty() || terms.size() != weights.size())
    throw std::invalid_argument("weighted_sum: terms/weights size mismatch");
  Tape<Scalar>& tape = *terms.front().tape;
  Tensor3<Scalar> out(1, 1, 1);
  bool rg = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1)
      throw std::invalid_argument("weighted_sum: terms must be scalars");
    out[0] += weights[i] * terms[i].value()[0];
    rg = rg || tape.requires_grad(terms[i]);
  }
  return tape.push(std::move(out), rg, [terms, weights](Tape<Scalar>& t, int self) {
    const Scalar g = t.grad(self)[0];
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (t.requires_grad(terms[i])) t.grad(terms[i])[0] += weights[i] * g;
  });
}

template <typename Scalar>
Var<Scalar> upsample_nearest(Var<Scalar> a, int factor) {
  const Tensor3<Scalar>& av = a.value();
  const int H = av.height() * factor, W = av.width() * factor, C = av.channels();
  Tensor3<Scalar> out(H, W, C);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) out(y, x, c) = av(y / factor, x / factor, c);
  return a.tape->push(std::move(out), a.tape->requires_grad(a),
                      [a, factor, H, W, C](Tape<Scalar>& t, int self) {
                        const Tensor3<Scalar>& g = t.grad(self);
                        Tensor3<Scalar>& gA = t.grad(a);
                        for (int y = 0; y < H; ++y)
                          for (int x = 0; x < W; ++x)
                            for (int c = 0; c < C; ++c) gA(y / factor, x / factor, c) += g(y, x, c);
                      });
}

namespace {

struct BilinearTap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

inline BilinearTap upsample_tap(int out_index, int factor, int in_size) {
  const double s = double(out_index) / factor;
  int i0 = int(std::floor(s));
  double w1 = s - i0;
  if (i0 >= in_size - 1) return {in_size - 1, in_size - 1, 0.0};
  return {i0, i0 + 1, w1};
}

}  // namespace

template <typename Scalar>
Tensor3<Scalar> upsample_bilinear_value(const Tensor3<Scalar>& av, int factor) {
  const int H = av.height() * factor, W = av.width() * factor, C = av.channels();
  Tensor3<Scalar> out(H, W, C);
  for (int y = 0; y < H; ++y) {
    const BilinearTap ty = upsample_tap(y, factor, av.height());
    for (int x = 0; x < W; ++x) {
      const BilinearTap tx = upsample_tap(x, factor, av.width());
      const Scalar wy = Scalar(ty.w1), wx = Scalar(tx.w1);
      for (int c = 0; c < C; ++c) {
        out(y, x, c) = (Scalar(1) - wy) * ((Scalar(1) - wx) * av(ty.i0, tx.i0, c) + wx * av(ty.i0, tx.i1, c)) +
                       wy * ((Scalar(1) - wx) * av(ty.i1, tx.i0, c) + wx * av(ty.i1, tx.i1, c));
      }
    }
  }
  return out;
}

template <typename Scalar>
Var<Scalar> upsample_bilinear(Var<Scalar> a, int factor) {
  const Tensor3<Scalar>& av = a.value();
  const int h = av.height(), w = av.width();
  return a.tape->push(upsample_bilinear_value(av, factor), a.tape->requires_grad(a),
                      [a, factor, h, w](Tape<Scalar>& t, int self) {
                        const Tensor3<Scalar>& g = t.grad(self);
                        Tensor3<Scalar>& gA = t.grad(a);
                        const int C = g.channels();
                        for (int y = 0; y < g.height(); ++y) {
                          const BilinearTap ty = upsample_tap(y, factor, h);
                          for (int x = 0; x < g.width(); ++x) {
                            const BilinearTap tx = upsample_tap(x, factor, w);
                            const Scalar wy = Scalar(ty.w1), wx = Scalar(tx.w1);
                            for (int c = 0; c < C; ++c) {
                              const Scalar v = g(y, x, c);
                              gA(ty.i0, tx.i0, c) += (Scalar(1) - wy) * (Scalar(1) - wx) * v;
                              gA(ty.i0, tx.i1, c) += (Scalar(1) - wy) * wx * v;
                              gA(ty.i1, tx.i0, c) += wy * (Scalar(1) - wx) * v;
                              gA(ty.i1, tx.i1, c) += wy * wx * v;
                            }
                          }
                        }
                      });
}

#define PG_INSTANTIATE_OPS(S)                                                        \
  template Var<S> add(Var<S>, Var<S>);                                               \
  template Var<S> sub(Var<S>, Var<S>);                                               \
  template Var<S> mul(Var<S>, Var<S>);                                               \
  template Var<S> affine(Var<S>, S, S);                                              \
  template Var<S> relu(Var<S>);                                                      \
  template Var<S> sigmoid(Var<S>);                                                   \
  template Var<S> tanh(Var<S>);                                                      \
  template Var<S> softplus(Var<S>);                                                  \
  template Var<S> clamp_min(Var<S>, S);                                              \
  template Var<S> concat_channels(const std::vector<Var<S>>&);                       \
  template Var<S> slice_channels(Var<S>, int, int);                                  \
  template Var<S> global_avg_pool(Var<S>);                                           \
  template Var<S> sum(Var<S>);                                                       \
  template Var<S> mean(Var<S>);                                                      \
  template Var<S> weighted_sum(const std::vector<Var<S>>&, const std::vector<S>&);   \
  template Var<S> upsample_nearest(Var<S>, int);                                     \
  template Var<S> upsample_bilinear(Var<S>, int);                                    \
  template Tensor3<S> upsample_bilinear_value(const Tensor3<S>&, int);

PG_INSTANTIATE_OPS(float)
PG_INSTANTIATE_OPS(double)

}  // namespace pg
