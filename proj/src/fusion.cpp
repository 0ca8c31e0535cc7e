#include "posegauss/fusion.hpp"

#include "posegauss/parallel.hpp"

#include <cmath>
#include <stdexcept>

namespace pg {

const std::vector<FusionStrategy>& all_fusion_strategies() {
  static const std::vector<FusionStrategy> all{
      FusionStrategy::Concat,           FusionStrategy::Add,   FusionStrategy::Mul,
      FusionStrategy::WeightedAverage,  FusionStrategy::FeatureAttention,
      FusionStrategy::Gated,            FusionStrategy::OuterProduct};
  return all;
}

std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::Concat: return "concat";
    case FusionStrategy::Add: return "add";
    case FusionStrategy::Mul: return "mul";
    case FusionStrategy::WeightedAverage: return "weighted_average";
    case FusionStrategy::FeatureAttention: return "feature_attention";
    case FusionStrategy::Gated: return "gated";
    case FusionStrategy::OuterProduct: return "outer_product";
  }
  return "?";
}

FusionStrategy parse_fusion_strategy(const std::string& name) {
  for (FusionStrategy s : all_fusion_strategies())
    if (to_string(s) == name) return s;
  throw std::invalid_argument("unknown fusion strategy '" + name + "'");
}

template <typename Scalar>
FusionParams<Scalar> make_fusion(ParamStore<Scalar>& store, const std::string& name,
                                 FusionStrategy strategy, int image_channels, int pose_channels,
                                 std::uint64_t seed, int outer_rank) {
  FusionParams<Scalar> p;
  p.strategy = strategy;
  p.image_channels = image_channels;
  p.pose_channels = pose_channels;
  if (strategy == FusionStrategy::Concat) return p;
  p.projection = make_conv(store, name + ".pose_proj", 1, 1, pose_channels, image_channels, seed);
  switch (strategy) {
    case FusionStrategy::WeightedAverage:
      p.mix_logit = &store.add(name + ".mix_logit", {1});
      break;
    case FusionStrategy::FeatureAttention:
    case FusionStrategy::Gated:
      p.gate = make_conv(store, name + ".gate", 1, 1, 2 * image_channels, image_channels, seed);
      break;
    case FusionStrategy::OuterProduct:
      p.outer_rank = outer_rank;
      p.outer_a = make_conv(store, name + ".outer_a", 1, 1, image_channels, outer_rank, seed);
      p.outer_b = make_conv(store, name + ".outer_b", 1, 1, image_channels, outer_rank, seed);
      p.outer_out =
          make_conv(store, name + ".outer_out", 1, 1, outer_rank * outer_rank, image_channels, seed);
      break;
    default: break;
  }
  return p;
}

template <typename Scalar>
Var<Scalar> outer_channels(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& tape = *a.tape;
  const Tensor3<Scalar>& av = a.value();
  const Tensor3<Scalar>& bv = b.value();
  require_same_spatial(av, bv, "outer_channels");
  const int ca = av.channels(), cb = bv.channels();
  const Eigen::Index n = Eigen::Index(av.height()) * av.width();
  Tensor3<Scalar> out(av.height(), av.width(), ca * cb);
  for (Eigen::Index p = 0; p < n; ++p)
    for (int i = 0; i < ca; ++i)
      for (int j = 0; j < cb; ++j) out[(p * ca + i) * cb + j] = av[p * ca + i] * bv[p * cb + j];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), rg, [a, b, ca, cb, n](Tape<Scalar>& t, int self) {
    const Tensor3<Scalar>& g = t.grad(self);
    const Tensor3<Scalar>& av = t.value(a);
    const Tensor3<Scalar>& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor3<Scalar>& ga = t.grad(a);
      for (Eigen::Index p = 0; p < n; ++p)
        for (int i = 0; i < ca; ++i)
          for (int j = 0; j < cb; ++j) ga[p * ca + i] += g[(p * ca + i) * cb + j] * bv[p * cb + j];
    }
    if (t.requires_grad(b)) {
      Tensor3<Scalar>& gb = t.grad(b);
      for (Eigen::Index p = 0; p < n; ++p)
        for (int i = 0; i < ca; ++i)
          for (int j = 0; j < cb; ++j) gb[p * cb + j] += g[(p * ca + i) * cb + j] * av[p * ca + i];
    }
  });
}

namespace {

// Records a 1×1×1 parameter as a tape value that feeds its ParamBuffer.
template <typename Scalar>
Var<Scalar> scalar_param(Tape<Scalar>& tape, ParamBuffer<Scalar>* p) {
  Tensor3<Scalar> v(1, 1, 1);
  v[0] = p->value[0];
  return tape.push(std::move(v), true, [p](Tape<Scalar>& t, int self) { p->grad[0] += t.grad(self)[0]; });
}

}  // namespace

template <typename Scalar>
Var<Scalar> fuse(Var<Scalar> image, Var<Scalar> pose, const FusionParams<Scalar>& params) {
  require_same_spatial(image.value(), pose.value(), "fuse");
  if (image.channels() != params.image_channels || pose.channels() != params.pose_channels)
    throw std::invalid_argument("fuse: expected " + std::to_string(params.image_channels) + "+" +
                                std::to_string(params.pose_channels) + " channels, got " +
                                image.value().shape_string() + " and " + pose.value().shape_string());
  if (params.strategy == FusionStrategy::Concat) return concat_channels<Scalar>({image, pose});

  Var<Scalar> p = conv2d(pose, *params.projection, 1, 0);
  switch (params.strategy) {
    case FusionStrategy::Add: return add(image, p);
    case FusionStrategy::Mul: return mul(image, p);
    case FusionStrategy::WeightedAverage: {
      Var<Scalar> w = sigmoid(scalar_param(*image.tape, params.mix_logit));
      return add(mul(image, w), mul(p, one_minus(w)));
    }
    case FusionStrategy::FeatureAttention: {
      Var<Scalar> a = sigmoid(conv2d(global_avg_pool(concat_channels<Scalar>({image, p})), *params.gate, 1, 0));
      return add(mul(image, a), mul(p, one_minus(a)));
    }
    case FusionStrategy::Gated: {
      Var<Scalar> g = sigmoid(conv2d(concat_channels<Scalar>({image, p}), *params.gate, 1, 0));
      return add(mul(image, g), mul(p, one_minus(g)));
    }
    case FusionStrategy::OuterProduct: {
      Var<Scalar> a = conv2d(image, *params.outer_a, 1, 0);
      Var<Scalar> b = conv2d(p, *params.outer_b, 1, 0);
      return add(image, conv2d(outer_channels(a, b), *params.outer_out, 1, 0));
    }
    default: break;
  }
  throw std::logic_error("fuse: unhandled strategy");
}

template <typename Scalar>
Var<Scalar> correlation_volume(Var<Scalar> target, const std::vector<Var<Scalar>>& sources) {
  using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<RowMat>;
  using CMap = Eigen::Map<const RowMat>;
  Tape<Scalar>& tape = *target.tape;
  const Tensor3<Scalar>& tv = target.value();
  if (sources.empty()) throw std::invalid_argument("correlation_volume: no source views");
  for (const auto& s : sources) require_same_shape(tv, s.value(), "correlation_volume");
  const int h = tv.height(), w = tv.width(), d = tv.channels();
  const Scalar norm = Scalar(1) / std::sqrt(Scalar(d));

  // Σ_s f_s first: the volume is bilinear, so one GEMM per row suffices.
  Tensor3<Scalar> summed = sources[0].value();
  for (std::size_t s = 1; s < sources.size(); ++s) summed.data() += sources[s].value().data();

  Tensor3<Scalar> out(h, w, w);
  parallel_for(h, [&](int i) {
    CMap ft(tv.ptr() + Eigen::Index(i) * w * d, w, d);
    CMap fs(summed.ptr() + Eigen::Index(i) * w * d, w, d);
    Map(out.ptr() + Eigen::Index(i) * w * w, w, w).noalias() = norm * (ft * fs.transpose());
  });

  bool rg = tape.requires_grad(target);
  for (const auto& s : sources) rg = rg || tape.requires_grad(s);
  return tape.push(std::move(out), rg,
                   [target, sources, summed = std::move(summed), h, w, d, norm](Tape<Scalar>& t, int self) {
                     const Tensor3<Scalar>& g = t.grad(self);
                     const Tensor3<Scalar>& tv = t.value(target);
                     if (t.requires_grad(target)) {
                       Tensor3<Scalar>& gt = t.grad(target);
                       parallel_for(h, [&](int i) {
                         CMap gi(g.ptr() + Eigen::Index(i) * w * w, w, w);
                         CMap fs(summed.ptr() + Eigen::Index(i) * w * d, w, d);
                         Map(gt.ptr() + Eigen::Index(i) * w * d, w, d).noalias() += norm * (gi * fs);
                       });
                     }
                     // Every source receives the same gradient.
                     Tensor3<Scalar> gs(h, w, d);
                     parallel_for(h, [&](int i) {
                       CMap gi(g.ptr() + Eigen::Index(i) * w * w, w, w);
                       CMap ft(tv.ptr() + Eigen::Index(i) * w * d, w, d);
                       Map(gs.ptr() + Eigen::Index(i) * w * d, w, d).noalias() = norm * (gi.transpose() * ft);
                     });
                     for (const auto& s : sources)
                       if (t.requires_grad(s)) t.grad(s).data() += gs.data();
                   });
}

template <typename Scalar>
bool LookupGeometry<Scalar>::column(int /*i*/, int j, Scalar depth, Scalar& k, Scalar& dk_dd) const {
  const Vec3<Scalar>& c = source_center;
  const Scalar rx = (j - intrinsics.cx) / intrinsics.fx;
  const Scalar den = depth - c.z();
  if (!(std::abs(den) > Scalar(1e-6))) return false;
  const Scalar lambda = (plane_depth - c.z()) / den;
  if (!(lambda > 0) || !std::isfinite(lambda)) return false;
  const Scalar ex = depth * rx - c.x();
  const Scalar qx = c.x() + lambda * ex;
  k = intrinsics.fx * qx / plane_depth + intrinsics.cx;
  const Scalar dlambda = -lambda / den;
  dk_dd = intrinsics.fx / plane_depth * (dlambda * ex + lambda * rx);
  return std::isfinite(k) && std::isfinite(dk_dd);
}

template <typename Scalar>
Var<Scalar> lookup_correlation(Var<Scalar> volume, Var<Scalar> depth,
                               const LookupGeometry<Scalar>& geometry, int radius) {
  Tape<Scalar>& tape = *volume.tape;
  const Tensor3<Scalar>& vol = volume.value();
  const Tensor3<Scalar>& dv = depth.value();
  if (radius < 0) throw std::invalid_argument("lookup_correlation: radius must be >= 0");
  const int h = vol.height(), w = vol.width();
  if (vol.channels() != w || dv.height() != h || dv.width() != w || dv.channels() != 1)
    throw std::invalid_argument("lookup_correlation: volume " + vol.shape_string() +
                                " and depth " + dv.shape_string() + " do not match");
  const int taps = 2 * radius + 1;

  // Per pixel: k*, dk*/dD, validity.
  struct Site {
    Scalar k = 0, dk = 0;
    bool ok = false;
  };
  std::vector<Site> sites(std::size_t(h) * w);
  Tensor3<Scalar> out(h, w, taps);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      Site& s = sites[std::size_t(i) * w + j];
      s.ok = geometry.column(i, j, dv(i, j, 0), s.k, s.dk);
      if (!s.ok) continue;
      const Scalar* row = vol.ptr() + (Eigen::Index(i) * w + j) * w;
      for (int m = 0; m < taps; ++m) {
        const Scalar pos = s.k + Scalar(m - radius);
        const Scalar f = std::floor(pos);
        const int k0 = int(f);
        const Scalar a = pos - f;
        Scalar v = 0;
        if (k0 >= 0 && k0 < w) v += (1 - a) * row[k0];
        if (k0 + 1 >= 0 && k0 + 1 < w) v += a * row[k0 + 1];
        out(i, j, m) = v;
      }
    }
  const bool rg = tape.requires_grad(volume) || tape.requires_grad(depth);
  return tape.push(std::move(out), rg,
                   [volume, depth, sites = std::move(sites), h, w, taps, radius](Tape<Scalar>& t, int self) {
                     const Tensor3<Scalar>& g = t.grad(self);
                     const Tensor3<Scalar>& vol = t.value(volume);
                     const bool gv = t.requires_grad(volume), gd = t.requires_grad(depth);
                     Tensor3<Scalar>* gvol = gv ? &t.grad(volume) : nullptr;
                     Tensor3<Scalar>* gdep = gd ? &t.grad(depth) : nullptr;
                     for (int i = 0; i < h; ++i)
                       for (int j = 0; j < w; ++j) {
                         const Site& s = sites[std::size_t(i) * w + j];
                         if (!s.ok) continue;
                         const Eigen::Index base = (Eigen::Index(i) * w + j) * w;
                         Scalar dpos = 0;
                         for (int m = 0; m < taps; ++m) {
                           const Scalar gm = g(i, j, m);
                           if (gm == 0) continue;
                           const Scalar pos = s.k + Scalar(m - radius);
                           const Scalar f = std::floor(pos);
                           const int k0 = int(f);
                           const Scalar a = pos - f;
                           const bool in0 = k0 >= 0 && k0 < w, in1 = k0 + 1 >= 0 && k0 + 1 < w;
                           const Scalar v0 = in0 ? vol[base + k0] : Scalar(0);
                           const Scalar v1 = in1 ? vol[base + k0 + 1] : Scalar(0);
                           dpos += gm * (v1 - v0);
                           if (gvol) {
                             if (in0) (*gvol)[base + k0] += gm * (1 - a);
                             if (in1) (*gvol)[base + k0 + 1] += gm * a;
                           }
                         }
                         if (gdep) (*gdep)(i, j, 0) += dpos * s.dk;
                       }
                   });
}

#define PG_INSTANTIATE_FUSION(S)                                                                   \
  template FusionParams<S> make_fusion(ParamStore<S>&, const std::string&, FusionStrategy, int, int, \
                                       std::uint64_t, int);                                        \
  template Var<S> fuse(Var<S>, Var<S>, const FusionParams<S>&);                                    \
  template Var<S> outer_channels(Var<S>, Var<S>);                                                  \
  template Var<S> correlation_volume(Var<S>, const std::vector<Var<S>>&);                          \
  template struct LookupGeometry<S>;                                                               \
  template Var<S> lookup_correlation(Var<S>, Var<S>, const LookupGeometry<S>&, int);

PG_INSTANTIATE_FUSION(float)
PG_INSTANTIATE_FUSION(double)

}  // namespace pg
