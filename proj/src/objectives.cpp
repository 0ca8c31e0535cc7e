#include "posegauss/objectives.hpp"

#include "posegauss/log.hpp"

#include <cmath>
#include <stdexcept>

namespace pg {

void LossWeights::validate() const {
  if (!(beta >= 0 && gamma >= 0 && lambda >= 0)) throw std::invalid_argument("loss weights must be >= 0");
  if (!(mu > 0 && mu <= 1)) throw std::invalid_argument("loss weights: mu must be in (0, 1]");
}

LossReport total_loss(double render, double depth, double pose_fusion) {
  return {render, depth, pose_fusion, render + depth + pose_fusion};
}

namespace {

constexpr double kLuma[3] = {0.299, 0.587, 0.114};

std::vector<double> gaussian_window(const SSIMConfig& config) {
  std::vector<double> w(config.window);
  const double c = 0.5 * (config.window - 1);
  double total = 0;
  for (int i = 0; i < config.window; ++i) {
    w[i] = std::exp(-(i - c) * (i - c) / (2 * config.sigma * config.sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

using Grid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Separable "valid" correlation with the window.
Grid filter_valid(const Grid& in, const std::vector<double>& w) {
  const int n = int(w.size());
  const int ho = int(in.rows()) - n + 1, wo = int(in.cols()) - n + 1;
  Grid tmp = Grid::Zero(in.rows(), wo);
  for (int v = 0; v < n; ++v) tmp += w[v] * in.middleCols(v, wo);
  Grid out = Grid::Zero(ho, wo);
  for (int u = 0; u < n; ++u) out += w[u] * tmp.middleRows(u, ho);
  return out;
}

// Adjoint of filter_valid.
Grid filter_transpose(const Grid& g, const std::vector<double>& w, int h, int width) {
  const int n = int(w.size());
  const int ho = int(g.rows()), wo = int(g.cols());
  Grid tmp = Grid::Zero(h, wo);
  for (int u = 0; u < n; ++u) tmp.middleRows(u, ho) += w[u] * g;
  Grid out = Grid::Zero(h, width);
  for (int v = 0; v < n; ++v) out.middleCols(v, wo) += w[v] * tmp;
  return out;
}

template <typename Scalar>
Grid luma_grid(const Tensor3<Scalar>& image) {
  if (image.channels() != 1 && image.channels() != 3)
    throw std::invalid_argument("ssim: expected 1 or 3 channels, got " + image.shape_string());
  Grid g(image.height(), image.width());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      g(y, x) = image.channels() == 1 ? double(image(y, x, 0))
                                      : kLuma[0] * image(y, x, 0) + kLuma[1] * image(y, x, 1) +
                                            kLuma[2] * image(y, x, 2);
  return g;
}

struct SSIMTerms {
  Grid mx, my, vx, vy, cxy, s;
};

SSIMTerms ssim_terms(const Grid& x, const Grid& y, const SSIMConfig& config) {
  if (x.rows() < config.window || x.cols() < config.window)
    throw std::invalid_argument("ssim: image " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                                " is smaller than the " + std::to_string(config.window) + "x" +
                                std::to_string(config.window) + " window");
  const auto w = gaussian_window(config);
  SSIMTerms t;
  t.mx = filter_valid(x, w);
  t.my = filter_valid(y, w);
  t.vx = filter_valid(x.cwiseProduct(x), w) - t.mx.cwiseProduct(t.mx);
  t.vy = filter_valid(y.cwiseProduct(y), w) - t.my.cwiseProduct(t.my);
  t.cxy = filter_valid(x.cwiseProduct(y), w) - t.mx.cwiseProduct(t.my);
  const Grid n1 = (2 * t.mx.cwiseProduct(t.my)).array() + config.c1;
  const Grid n2 = (2 * t.cxy).array() + config.c2;
  const Grid d1 = (t.mx.cwiseProduct(t.mx) + t.my.cwiseProduct(t.my)).array() + config.c1;
  const Grid d2 = (t.vx + t.vy).array() + config.c2;
  t.s = (n1.cwiseProduct(n2)).cwiseQuotient(d1.cwiseProduct(d2));
  return t;
}

template <typename Scalar>
void require_shape(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b, const char* what) {
  require_same_shape(a, b, what);
}

template <typename Scalar>
Scalar sign(Scalar v) {
  return Scalar((v > 0) - (v < 0));
}

}  // namespace

template <typename Scalar>
Tensor3<Scalar> to_luma(const Tensor3<Scalar>& image) {
  const Grid g = luma_grid(image);
  Tensor3<Scalar> out(image.height(), image.width(), 1);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) out(y, x, 0) = Scalar(g(y, x));
  return out;
}

template <typename Scalar>
Tensor3<Scalar> ssim_map(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b, const SSIMConfig& config) {
  require_shape(a, b, "ssim");
  const SSIMTerms t = ssim_terms(luma_grid(a), luma_grid(b), config);
  Tensor3<Scalar> out(int(t.s.rows()), int(t.s.cols()), 1);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) out(y, x, 0) = Scalar(t.s(y, x));
  return out;
}

template <typename Scalar>
double ssim(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b, const SSIMConfig& config) {
  require_shape(a, b, "ssim");
  return ssim_terms(luma_grid(a), luma_grid(b), config).s.mean();
}

template <typename Scalar>
Var<Scalar> ssim_var(Var<Scalar> pred, const Tensor3<Scalar>& target, const SSIMConfig& config) {
  require_shape(pred.value(), target, "ssim");
  const Grid x = luma_grid(pred.value());
  const Grid y = luma_grid(target);
  SSIMTerms t = ssim_terms(x, y, config);
  Tensor3<Scalar> value(1, 1, 1);
  value[0] = Scalar(t.s.mean());
  Tape<Scalar>& tape = *pred.tape;
  const int src = pred.id;
  const int channels = pred.channels();
  return tape.push(std::move(value), tape.requires_grad(pred),
                   [x, y, t = std::move(t), config, src, channels](Tape<Scalar>& tp, int self) {
                     const double g = double(tp.grad(self)[0]) / double(t.s.size());
                     const auto w = gaussian_window(config);
                     const Grid n1 = (2 * t.mx.cwiseProduct(t.my)).array() + config.c1;
                     const Grid n2 = (2 * t.cxy).array() + config.c2;
                     const Grid d1 = (t.mx.cwiseProduct(t.mx) + t.my.cwiseProduct(t.my)).array() + config.c1;
                     const Grid d2 = (t.vx + t.vy).array() + config.c2;
                     const Grid d12 = d1.cwiseProduct(d2);
                     // ∂S/∂μx, ∂S/∂σx², ∂S/∂σxy per window position
                     const Grid ds_dmx = (2 * t.my.cwiseProduct(n2)).cwiseQuotient(d12) -
                                         (2 * t.s.cwiseProduct(t.mx)).cwiseQuotient(d1);
                     const Grid ds_dvx = -t.s.cwiseQuotient(d2);
                     const Grid ds_dcxy = (2 * n1).cwiseQuotient(d12);
                     const Grid a = g * (ds_dmx - 2 * ds_dvx.cwiseProduct(t.mx) - ds_dcxy.cwiseProduct(t.my));
                     const int h = int(x.rows()), wd = int(x.cols());
                     const Grid gx = filter_transpose(a, w, h, wd) +
                                     2 * x.cwiseProduct(filter_transpose(g * ds_dvx, w, h, wd)) +
                                     y.cwiseProduct(filter_transpose(g * ds_dcxy, w, h, wd));
                     Tensor3<Scalar>& dst = tp.grad(src);
                     for (int yy = 0; yy < h; ++yy)
                       for (int xx = 0; xx < wd; ++xx) {
                         if (channels == 1) {
                           dst(yy, xx, 0) += Scalar(gx(yy, xx));
                         } else {
                           for (int c = 0; c < 3; ++c) dst(yy, xx, c) += Scalar(kLuma[c] * gx(yy, xx));
                         }
                       }
                   });
}

template <typename Scalar>
Var<Scalar> mae(Var<Scalar> pred, const Tensor3<Scalar>& target) {
  require_shape(pred.value(), target, "mae");
  const auto& p = pred.value();
  const double n = double(p.size());
  Tensor3<Scalar> value(1, 1, 1);
  value[0] = Scalar((p.data() - target.data()).cwiseAbs().sum() / n);
  Tape<Scalar>& tape = *pred.tape;
  const int src = pred.id;
  return tape.push(std::move(value), tape.requires_grad(pred), [target, src, n](Tape<Scalar>& t, int self) {
    const Scalar g = Scalar(double(t.grad(self)[0]) / n);
    const auto& p = t.value(Var<Scalar>{&t, src});
    Tensor3<Scalar>& dst = t.grad(src);
    for (Eigen::Index i = 0; i < p.size(); ++i) dst[i] += g * sign(p[i] - target[i]);
  });
}

template <typename Scalar>
Var<Scalar> masked_l1(Var<Scalar> pred, const Tensor3<Scalar>& target, const Tensor3<Scalar>& mask) {
  require_shape(pred.value(), target, "masked_l1");
  if (mask.channels() != 1) throw std::invalid_argument("masked_l1: mask must have one channel");
  require_same_spatial(pred.value(), mask, "masked_l1");
  const auto& p = pred.value();
  const int c = p.channels();
  double count = 0, total = 0;
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x)
      if (mask(y, x, 0) > Scalar(0.5)) {
        count += c;
        for (int k = 0; k < c; ++k) total += std::abs(double(p(y, x, k)) - double(target(y, x, k)));
      }
  Tensor3<Scalar> value(1, 1, 1);
  value[0] = count > 0 ? Scalar(total / count) : Scalar(0);
  Tape<Scalar>& tape = *pred.tape;
  const int src = pred.id;
  return tape.push(std::move(value), tape.requires_grad(pred) && count > 0,
                   [target, mask, src, count](Tape<Scalar>& t, int self) {
                     const Scalar g = Scalar(double(t.grad(self)[0]) / count);
                     const auto& p = t.value(Var<Scalar>{&t, src});
                     Tensor3<Scalar>& dst = t.grad(src);
                     for (int y = 0; y < p.height(); ++y)
                       for (int x = 0; x < p.width(); ++x)
                         if (mask(y, x, 0) > Scalar(0.5))
                           for (int k = 0; k < p.channels(); ++k)
                             dst(y, x, k) += g * sign(p(y, x, k) - target(y, x, k));
                   });
}

template <typename Scalar>
Var<Scalar> render_loss(Var<Scalar> pred, const Tensor3<Scalar>& gt, double beta, double gamma,
                        const SSIMConfig& config) {
  require_shape(pred.value(), gt, "render_loss");
  Var<Scalar> l1 = mae(pred, gt);
  Var<Scalar> s = ssim_var(pred, gt, config);
  // β·MAE − γ·SSIM + γ
  return affine(weighted_sum<Scalar>({l1, s}, {Scalar(beta), Scalar(-gamma)}), Scalar(1), Scalar(gamma));
}

template <typename Scalar>
Var<Scalar> depth_loss(const std::vector<Var<Scalar>>& depths, const Tensor3<Scalar>& gt,
                       const Tensor3<Scalar>& mask, double mu) {
  if (depths.empty()) throw std::invalid_argument("depth_loss: need at least one stage");
  if (!(mu > 0 && mu <= 1)) throw std::invalid_argument("depth_loss: mu must be in (0, 1]");
  bool any = false;
  for (Eigen::Index i = 0; i < mask.size(); ++i) any = any || mask[i] > Scalar(0.5);
  if (!any) log_warning("depth_loss: empty mask, loss is 0");
  const int T = int(depths.size());
  std::vector<Var<Scalar>> terms;
  std::vector<Scalar> weights;
  for (int t = 0; t < T; ++t) {
    terms.push_back(masked_l1(depths[t], gt, mask));
    weights.push_back(Scalar(std::pow(mu, T - 1 - t)));
  }
  return weighted_sum(terms, weights);
}

template <typename Scalar>
Var<Scalar> pose_fusion_loss(Var<Scalar> f_joint, Var<Scalar> f_pose, double lambda) {
  require_shape(f_joint.value(), f_pose.value(), "pose_fusion_loss");
  if (!(lambda >= 0)) throw std::invalid_argument("pose_fusion_loss: lambda must be >= 0");
  return affine(mae(f_joint, f_pose.value()), Scalar(lambda));
}

template <typename Scalar>
double psnr(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b) {
  require_shape(a, b, "psnr");
  if (a.size() == 0) throw std::invalid_argument("psnr: empty image");
  const double mse = (a.data().template cast<double>() - b.data().template cast<double>()).squaredNorm() /
                     double(a.size());
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

DeltaSSIM summarize(const std::vector<double>& d) {
  DeltaSSIM out;
  for (double v : d) out.mean += v;
  out.mean /= double(d.size());
  double var = 0;
  for (double v : d) var += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(var / double(d.size()));
  return out;
}

}  // namespace

DeltaSSIM delta_stats(const std::vector<double>& s) {
  if (s.size() < 2) throw std::invalid_argument("delta_ssim: need at least 2 frames");
  std::vector<double> d;
  for (std::size_t t = 1; t < s.size(); ++t) d.push_back(std::abs(s[t] - s[t - 1]));
  return summarize(d);
}

template <typename Scalar>
DeltaSSIM delta_ssim_stats(const std::vector<Tensor3<Scalar>>& pred, const std::vector<Tensor3<Scalar>>& gt,
                           bool pred_to_pred, const SSIMConfig& config) {
  if (pred.size() != gt.size()) throw std::invalid_argument("delta_ssim: sequence lengths differ");
  if (pred.size() < 2) throw std::invalid_argument("delta_ssim: need at least 2 frames");
  if (!pred_to_pred) {
    std::vector<double> s;
    for (std::size_t t = 0; t < pred.size(); ++t) s.push_back(ssim(pred[t], gt[t], config));
    return delta_stats(s);
  }
  std::vector<double> d;
  for (std::size_t t = 1; t < pred.size(); ++t)
    d.push_back(std::abs(ssim(pred[t], pred[t - 1], config) - ssim(gt[t], gt[t - 1], config)));
  return summarize(d);
}

template <typename Scalar>
DepthAccuracy epe_1px(const Tensor3<Scalar>& pred, const Tensor3<Scalar>& gt, const Tensor3<Scalar>& mask,
                      double disparity_scale) {
  require_shape(pred, gt, "epe_1px");
  require_same_spatial(pred, mask, "epe_1px");
  if (!(disparity_scale > 0)) throw std::invalid_argument("epe_1px: disparity scale must be positive");
  double total = 0;
  long count = 0, within = 0;
  for (int y = 0; y < pred.height(); ++y)
    for (int x = 0; x < pred.width(); ++x) {
      if (!(mask(y, x, 0) > Scalar(0.5))) continue;
      const double p = pred(y, x, 0), g = gt(y, x, 0);
      if (!(p > 0 && g > 0)) throw std::invalid_argument("epe_1px: non-positive depth under the mask");
      const double err = std::abs(disparity_scale / p - disparity_scale / g);
      total += err;
      within += err < 1.0;
      ++count;
    }
  if (count == 0) throw std::invalid_argument("epe_1px: empty mask");
  return {total / double(count), 100.0 * double(within) / double(count)};
}

#define PG_INSTANTIATE_OBJECTIVES(S)                                                                 \
  template Tensor3<S> to_luma(const Tensor3<S>&);                                                    \
  template Tensor3<S> ssim_map(const Tensor3<S>&, const Tensor3<S>&, const SSIMConfig&);             \
  template double ssim(const Tensor3<S>&, const Tensor3<S>&, const SSIMConfig&);                     \
  template Var<S> ssim_var(Var<S>, const Tensor3<S>&, const SSIMConfig&);                            \
  template Var<S> mae(Var<S>, const Tensor3<S>&);                                                    \
  template Var<S> masked_l1(Var<S>, const Tensor3<S>&, const Tensor3<S>&);                           \
  template Var<S> render_loss(Var<S>, const Tensor3<S>&, double, double, const SSIMConfig&);         \
  template Var<S> depth_loss(const std::vector<Var<S>>&, const Tensor3<S>&, const Tensor3<S>&, double); \
  template Var<S> pose_fusion_loss(Var<S>, Var<S>, double);                                          \
  template double psnr(const Tensor3<S>&, const Tensor3<S>&);                                        \
  template DeltaSSIM delta_ssim_stats(const std::vector<Tensor3<S>>&, const std::vector<Tensor3<S>>&, \
                                      bool, const SSIMConfig&);                                      \
  template DepthAccuracy epe_1px(const Tensor3<S>&, const Tensor3<S>&, const Tensor3<S>&, double);

PG_INSTANTIATE_OBJECTIVES(float)
PG_INSTANTIATE_OBJECTIVES(double)

}  // namespace pg
