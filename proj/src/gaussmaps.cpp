#include "posegauss/gaussmaps.hpp"

#include "posegauss/ops.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pg {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename Scalar>
Tensor3<Scalar> GaussianCloud<Scalar>::to_tensor() const {
  Tensor3<Scalar> t(size(), 1, cloud_layout::kFloats);
  if (size() > 0) std::memcpy(t.ptr(), params.data(), sizeof(Scalar) * std::size_t(params.size()));
  return t;
}

template <typename Scalar>
GaussianCloud<Scalar> GaussianCloud<Scalar>::from_tensor(const Tensor3<Scalar>& packed) {
  if (packed.width() != 1 || packed.channels() != cloud_layout::kFloats)
    throw std::invalid_argument("cloud: packed tensor must be Nx1x14, got " + packed.shape_string());
  GaussianCloud c;
  c.params.resize(packed.height(), cloud_layout::kFloats);
  if (packed.height() > 0)
    std::memcpy(c.params.data(), packed.ptr(), sizeof(Scalar) * std::size_t(packed.size()));
  return c;
}

namespace {

// q = (cos(θ/2), s(θ)·v) with s = sin(θ/2)/θ, θ = |v| ≤ π.
template <typename Scalar>
void exp_map(const Scalar* v, Scalar* q, Eigen::Matrix<Scalar, 4, 3>* jac) {
  const Vec3<Scalar> r(v[0], v[1], v[2]);
  Scalar theta = r.norm();
  Vec3<Scalar> u = r;
  Mat3<Scalar> clamp_jac = Mat3<Scalar>::Identity();
  const Scalar pi = Scalar(M_PI);
  if (theta > pi) {
    u = r * (pi / theta);
    clamp_jac = (pi / theta) * (Mat3<Scalar>::Identity() - r * r.transpose() / (theta * theta));
    theta = pi;
  }
  Scalar s, ds_over_theta;
  if (theta < Scalar(1e-4)) {
    const Scalar t2 = theta * theta;
    s = Scalar(0.5) - t2 / 48;
    ds_over_theta = Scalar(-1) / 24 + t2 / 960;
  } else {
    const Scalar sh = std::sin(theta / 2), ch = std::cos(theta / 2);
    s = sh / theta;
    ds_over_theta = (Scalar(0.5) * ch * theta - sh) / (theta * theta * theta);
  }
  q[0] = std::cos(theta / 2);
  q[1] = s * u.x();
  q[2] = s * u.y();
  q[3] = s * u.z();
  if (jac) {
    Eigen::Matrix<Scalar, 4, 3> j;
    j.row(0) = Scalar(-0.5) * s * u.transpose();
    j.template bottomRows<3>() = s * Mat3<Scalar>::Identity() + ds_over_theta * u * u.transpose();
    *jac = j * clamp_jac;
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> axis_angle_to_quat(Var<Scalar> rotation) {
  Tape<Scalar>& tape = *rotation.tape;
  const Tensor3<Scalar>& r = rotation.value();
  if (r.channels() != 3) throw std::invalid_argument("axis_angle_to_quat: expected 3 channels, got " + r.shape_string());
  const Eigen::Index n = Eigen::Index(r.height()) * r.width();
  Tensor3<Scalar> out(r.height(), r.width(), 4);
  for (Eigen::Index p = 0; p < n; ++p) exp_map<Scalar>(r.ptr() + 3 * p, out.ptr() + 4 * p, nullptr);
  return tape.push(std::move(out), tape.requires_grad(rotation), [rotation, n](Tape<Scalar>& t, int self) {
    const Tensor3<Scalar>& g = t.grad(self);
    const Tensor3<Scalar>& r = t.value(rotation);
    Tensor3<Scalar>& gr = t.grad(rotation);
    Scalar q[4];
    Eigen::Matrix<Scalar, 4, 3> jac;
    for (Eigen::Index p = 0; p < n; ++p) {
      exp_map<Scalar>(r.ptr() + 3 * p, q, &jac);
      const Eigen::Map<const Eigen::Matrix<Scalar, 4, 1>> gq(g.ptr() + 4 * p);
      Eigen::Map<Vec3<Scalar>>(gr.ptr() + 3 * p) += jac.transpose() * gq;
    }
  });
}

template <typename Scalar>
Var<Scalar> normalize_quat_channels(Var<Scalar> a, int begin) {
  Tape<Scalar>& tape = *a.tape;
  const Tensor3<Scalar>& av = a.value();
  const int c = av.channels();
  if (begin < 0 || begin + 4 > c) throw std::invalid_argument("normalize_quat_channels: bad channel range");
  const Eigen::Index n = Eigen::Index(av.height()) * av.width();
  Tensor3<Scalar> out = av;
  for (Eigen::Index p = 0; p < n; ++p) {
    Eigen::Map<Eigen::Matrix<Scalar, 4, 1>> q(out.ptr() + p * c + begin);
    const Scalar norm = q.norm();
    if (!(norm > 0)) throw std::domain_error("normalize_quat_channels: zero quaternion");
    q /= norm;
  }
  return tape.push(std::move(out), tape.requires_grad(a), [a, begin, c, n](Tape<Scalar>& t, int self) {
    const Tensor3<Scalar>& g = t.grad(self);
    const Tensor3<Scalar>& av = t.value(a);
    const Tensor3<Scalar>& y = t.value(Var<Scalar>{&t, self});
    Tensor3<Scalar>& ga = t.grad(a);
    ga.data() += g.data();
    for (Eigen::Index p = 0; p < n; ++p) {
      const Eigen::Map<const Eigen::Matrix<Scalar, 4, 1>> x(av.ptr() + p * c + begin);
      const Eigen::Map<const Eigen::Matrix<Scalar, 4, 1>> yq(y.ptr() + p * c + begin);
      const Eigen::Map<const Eigen::Matrix<Scalar, 4, 1>> gq(g.ptr() + p * c + begin);
      Eigen::Map<Eigen::Matrix<Scalar, 4, 1>> gx(ga.ptr() + p * c + begin);
      // Replace the pass-through added above with (I − y yᵀ)/|x| · g.
      gx -= gq;
      gx += (gq - yq * yq.dot(gq)) / x.norm();
    }
  });
}

template <typename Scalar>
Var<Scalar> activate(Var<Scalar> raw) {
  using namespace raw_layout;
  if (raw.channels() != kChannels)
    throw std::invalid_argument("activate: expected 8 raw channels, got " + raw.value().shape_string());
  Var<Scalar> scale = softplus(slice_channels(raw, kScale, 3));
  Var<Scalar> quat = axis_angle_to_quat(slice_channels(raw, kRotation, 3));
  Var<Scalar> opacity = sigmoid(slice_channels(raw, kOpacity, 2));
  return concat_channels<Scalar>({scale, quat, opacity});
}

template <typename Scalar>
Tensor3<Scalar> build_prior(const Tensor3<Scalar>& depth, const Tensor3<Scalar>& mask,
                            const Intrinsics<Scalar>& intrinsics, Scalar s0) {
  require_same_shape(depth, mask, "build_prior");
  if (depth.channels() != 1) throw std::invalid_argument("build_prior: depth must have one channel");
  using namespace map_layout;
  Tensor3<Scalar> prior(depth.height(), depth.width(), kChannels);
  for (Eigen::Index p = 0; p < depth.size(); ++p) {
    const Scalar m = mask[p];
    const Scalar d = depth[p];
    if (m > 0 && !(d > 0))
      throw std::invalid_argument("build_prior: non-positive depth under the mask at pixel " + std::to_string(p));
    const Scalar s = s0 * (d > 0 ? d : Scalar(1)) / intrinsics.fx;
    Scalar* px = prior.ptr() + p * kChannels;
    px[kScale] = px[kScale + 1] = px[kScale + 2] = s;
    px[kQuat] = 1;
    px[kOpacity] = m;
    px[kAux] = m;
  }
  return prior;
}

template <typename Scalar>
Var<Scalar> confidence_blend(Var<Scalar> dec, Var<Scalar> prior, Var<Scalar> confidence) {
  require_same_shape(dec.value(), prior.value(), "confidence_blend");
  Var<Scalar> g = sigmoid(confidence);
  Var<Scalar> blended = add(mul(dec, g), mul(prior, one_minus(g)));
  return normalize_quat_channels(blended, map_layout::kQuat);
}

template <typename Scalar>
Var<Scalar> lift_to_gaussians(Var<Scalar> map, Var<Scalar> depth, const Tensor3<Scalar>& mask,
                              const Tensor3<Scalar>& image, const Camera<Scalar>& camera) {
  using namespace cloud_layout;
  namespace ml = map_layout;
  Tape<Scalar>& tape = *map.tape;
  const Tensor3<Scalar>& mv = map.value();
  const Tensor3<Scalar>& dv = depth.value();
  if (mv.channels() != ml::kChannels) throw std::invalid_argument("lift: map must have 9 channels");
  require_same_spatial(mv, dv, "lift (map vs depth)");
  require_same_spatial(mv, mask, "lift (map vs mask)");
  require_same_spatial(mv, image, "lift (map vs image)");
  const int w = mv.width();
  std::vector<Eigen::Index> pixels;
  for (Eigen::Index p = 0; p < mask.size(); ++p)
    if (mask[p] > Scalar(0.5)) pixels.push_back(p);

  const int n = int(pixels.size());
  Tensor3<Scalar> out(n, 1, kFloats);
  const Mat3<Scalar> rt = camera.pose.rotation.transpose();
  std::vector<Vec3<Scalar>> dirs(n);  // d mean / d depth
  for (int i = 0; i < n; ++i) {
    const Eigen::Index p = pixels[i];
    const Scalar* m = mv.ptr() + p * ml::kChannels;
    Scalar* o = out.ptr() + Eigen::Index(i) * kFloats;
    const Vec2<Scalar> px(Scalar(p % w), Scalar(p / w));
    dirs[i] = rt * pixel_ray(px, camera.intrinsics);
    const Vec3<Scalar> mean = unproject(px, dv[p], camera);
    for (int k = 0; k < 3; ++k) o[kMean + k] = mean[k];
    for (int k = 0; k < 4; ++k) o[kQuat + k] = m[ml::kQuat + k];
    for (int k = 0; k < 3; ++k) o[kScale + k] = m[ml::kScale + k];
    o[kOpacity] = m[ml::kOpacity] * m[ml::kAux];
    for (int k = 0; k < 3; ++k) o[kRgb + k] = image[p * image.channels() + k];
  }
  const bool rg = tape.requires_grad(map) || tape.requires_grad(depth);
  return tape.push(std::move(out), rg,
                   [map, depth, pixels = std::move(pixels), dirs = std::move(dirs)](Tape<Scalar>& t, int self) {
                     const Tensor3<Scalar>& g = t.grad(self);
                     const Tensor3<Scalar>& mv = t.value(map);
                     const bool gm = t.requires_grad(map), gd = t.requires_grad(depth);
                     Tensor3<Scalar>* gmap = gm ? &t.grad(map) : nullptr;
                     Tensor3<Scalar>* gdep = gd ? &t.grad(depth) : nullptr;
                     for (std::size_t i = 0; i < pixels.size(); ++i) {
                       const Eigen::Index p = pixels[i];
                       const Scalar* gi = g.ptr() + Eigen::Index(i) * kFloats;
                       if (gdep)
                         (*gdep)[p] += gi[kMean] * dirs[i].x() + gi[kMean + 1] * dirs[i].y() +
                                       gi[kMean + 2] * dirs[i].z();
                       if (gmap) {
                         Scalar* gmp = gmap->ptr() + p * ml::kChannels;
                         const Scalar* m = mv.ptr() + p * ml::kChannels;
                         for (int k = 0; k < 4; ++k) gmp[ml::kQuat + k] += gi[kQuat + k];
                         for (int k = 0; k < 3; ++k) gmp[ml::kScale + k] += gi[kScale + k];
                         gmp[ml::kOpacity] += gi[kOpacity] * m[ml::kAux];
                         gmp[ml::kAux] += gi[kOpacity] * m[ml::kOpacity];
                       }
                     }
                   });
}

template <typename Scalar>
Var<Scalar> merge_clouds(const std::vector<Var<Scalar>>& clouds) {
  if (clouds.empty()) throw std::invalid_argument("merge_clouds: no clouds");
  Tape<Scalar>& tape = *clouds.front().tape;
  int total = 0;
  bool rg = false;
  for (const auto& c : clouds) {
    if (c.width() != 1 || c.channels() != cloud_layout::kFloats)
      throw std::invalid_argument("merge_clouds: expected Nx1x14, got " + c.value().shape_string());
    total += c.height();
    rg = rg || tape.requires_grad(c);
  }
  Tensor3<Scalar> out(total, 1, cloud_layout::kFloats);
  Eigen::Index offset = 0;
  for (const auto& c : clouds) {
    out.data().segment(offset, c.value().size()) = c.value().data();
    offset += c.value().size();
  }
  return tape.push(std::move(out), rg, [clouds](Tape<Scalar>& t, int self) {
    const Tensor3<Scalar>& g = t.grad(self);
    Eigen::Index offset = 0;
    for (const auto& c : clouds) {
      const Eigen::Index sz = t.value(c).size();
      if (t.requires_grad(c)) t.grad(c).data() += g.data().segment(offset, sz);
      offset += sz;
    }
  });
}

template <typename Scalar>
void write_cloud(const std::string& path, const GaussianCloud<Scalar>& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write cloud file " + path);
  const std::uint32_t version = kCloudFormatVersion;
  const std::uint64_t count = std::uint64_t(cloud.size());
  out.write("PGCL", 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  const Eigen::Matrix<float, Eigen::Dynamic, cloud_layout::kFloats, Eigen::RowMajor> f =
      cloud.params.template cast<float>();
  out.write(reinterpret_cast<const char*>(f.data()), std::streamsize(sizeof(float) * f.size()));
  if (!out) throw std::runtime_error("failed writing cloud file " + path);
}

GaussianCloud<float> read_cloud(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open cloud file " + path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t count = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || std::memcmp(magic, "PGCL", 4) != 0) throw std::runtime_error(path + ": not a PGCL file");
  if (version != kCloudFormatVersion)
    throw std::runtime_error(path + ": unsupported PGCL version " + std::to_string(version));
  GaussianCloud<float> c;
  c.params.resize(Eigen::Index(count), cloud_layout::kFloats);
  in.read(reinterpret_cast<char*>(c.params.data()), std::streamsize(sizeof(float) * c.params.size()));
  if (!in) throw std::runtime_error(path + ": truncated PGCL payload");
  return c;
}

#define PG_INSTANTIATE_GAUSSMAPS(S)                                                               \
  template struct GaussianCloud<S>;                                                               \
  template Var<S> axis_angle_to_quat(Var<S>);                                                     \
  template Var<S> normalize_quat_channels(Var<S>, int);                                           \
  template Var<S> activate(Var<S>);                                                               \
  template Tensor3<S> build_prior(const Tensor3<S>&, const Tensor3<S>&, const Intrinsics<S>&, S); \
  template Var<S> confidence_blend(Var<S>, Var<S>, Var<S>);                                       \
  template Var<S> lift_to_gaussians(Var<S>, Var<S>, const Tensor3<S>&, const Tensor3<S>&,         \
                                    const Camera<S>&);                                            \
  template Var<S> merge_clouds(const std::vector<Var<S>>&);                                       \
  template void write_cloud(const std::string&, const GaussianCloud<S>&);

PG_INSTANTIATE_GAUSSMAPS(float)
PG_INSTANTIATE_GAUSSMAPS(double)

}  // namespace pg
