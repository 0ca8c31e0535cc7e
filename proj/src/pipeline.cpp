#include "posegauss/pipeline.hpp"

#include "posegauss/log.hpp"
#include "posegauss/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pg {

using nlohmann::json;

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (k != 3 && k != 4) fail("k must be 3 or 4");
  if (image_channels < 4 || image_channels % 4 != 0) fail("image_channels must be a positive multiple of 4");
  if (joints < 1) fail("joints must be >= 1");
  if (pose_channels != joints) fail("pose_channels must equal joints");
  if (resolution < 1 || resolution % factor() != 0 || resolution / factor() < 2)
    fail("resolution must be divisible by 2^k with at least 2 feature pixels");
  if (sources < 2) fail("sources must be >= 2 (the correlation volume needs a second view)");
  if (!(omega >= 0 && omega <= 1)) fail("omega must lie in [0, 1]");
  if (!(depth_fallback > 0)) fail("depth_fallback must be positive");
  if (!(heatmap_sigma > 0 && feature_heatmap_sigma > 0)) fail("heatmap sigmas must be positive");
  if (!(prior_scale > 0)) fail("prior_scale must be positive");
  if (se_reduction < 1) fail("se_reduction must be >= 1");
  if (!(learning_rate >= 0)) fail("learning_rate must be >= 0");
  loss.validate();
  solver().validate();
  raster.validate();
}

SolverConfig ModelConfig::solver() const {
  SolverConfig s;
  s.iterations = iterations;
  s.downsample = k;
  s.radius = lookup_radius;
  s.hidden = gru_hidden;
  s.context = gru_context;
  s.d_min = d_min;
  return s;
}

json model_config_to_json(const ModelConfig& c) {
  json j;
  j["k"] = c.k;
  j["image_channels"] = c.image_channels;
  j["pose_channels"] = c.pose_channels;
  j["joints"] = c.joints;
  j["resolution"] = c.resolution;
  j["sources"] = c.sources;
  j["omega"] = c.omega;
  j["fusion"] = to_string(c.fusion);
  j["beta"] = c.loss.beta;
  j["gamma"] = c.loss.gamma;
  j["lambda"] = c.loss.lambda;
  j["mu"] = c.loss.mu;
  j["iterations"] = c.iterations;
  j["lookup_radius"] = c.lookup_radius;
  j["gru_hidden"] = c.gru_hidden;
  j["gru_context"] = c.gru_context;
  j["d_min"] = c.d_min;
  j["depth_fallback"] = c.depth_fallback;
  j["heatmap_sigma"] = c.heatmap_sigma;
  j["feature_heatmap_sigma"] = c.feature_heatmap_sigma;
  j["prior_scale"] = c.prior_scale;
  j["se_reduction"] = c.se_reduction;
  j["tile"] = c.raster.tile;
  j["alpha_min"] = c.raster.alpha_min;
  j["transmittance_min"] = c.raster.transmittance_min;
  j["sigma_extent"] = c.raster.sigma_extent;
  j["pose_in_depth"] = c.pose_in_depth;
  j["pose_in_skips"] = c.pose_in_skips;
  j["tps_in_fusion"] = c.tps_in_fusion;
  j["share_tps"] = c.share_tps;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  return j;
}

const std::vector<std::pair<std::string, std::string>>& model_config_docs() {
  static const std::vector<std::pair<std::string, std::string>> docs = {
      {"k", "encoder downsampling stages (3 or 4)"},
      {"image_channels", "deepest image-encoder width D_i"},
      {"pose_channels", "pose feature width D_p (= joints)"},
      {"joints", "heatmap channels J"},
      {"resolution", "input/output image size (square)"},
      {"sources", "source views per target"},
      {"omega", "TPS blend factor (1 disables smoothing)"},
      {"fusion", "concat|add|mul|weighted_average|feature_attention|gated|outer_product"},
      {"beta", "MAE weight of the render loss"},
      {"gamma", "SSIM weight of the render loss"},
      {"lambda", "pose-fusion loss weight"},
      {"mu", "depth-stage decay"},
      {"iterations", "depth refinement steps T"},
      {"lookup_radius", "correlation lookup half-width"},
      {"gru_hidden", "depth GRU width"},
      {"gru_context", "depth context width"},
      {"d_min", "depth floor (m)"},
      {"depth_fallback", "initial depth when no joint is visible (m)"},
      {"heatmap_sigma", "pose heatmap sigma at full resolution (px)"},
      {"feature_heatmap_sigma", "pose heatmap sigma at feature resolution (px)"},
      {"prior_scale", "prior Gaussian footprint s0"},
      {"se_reduction", "squeeze-excitation reduction"},
      {"tile", "rasterizer tile size (px)"},
      {"alpha_min", "smallest composited alpha"},
      {"transmittance_min", "early-stop transmittance"},
      {"sigma_extent", "minimum splat extent in sigma"},
      {"pose_in_depth", "fuse heatmaps into the depth features"},
      {"pose_in_skips", "pose-encoder features in the decoder skips"},
      {"tps_in_fusion", "smooth the fusion heatmaps with TPS"},
      {"share_tps", "one TPS state shared by all source views"},
      {"learning_rate", "Adam step size"},
      {"seed", "weight initialisation seed"},
  };
  return docs;
}

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("model config: key '") + key + "' has the wrong type");
  }
}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("model config: expected a JSON object");
  const json defaults = model_config_to_json(ModelConfig{});
  for (const auto& item : j.items())
    if (!defaults.contains(item.key())) throw std::invalid_argument("model config: unknown key '" + item.key() + "'");
  ModelConfig c;
  read_key(j, "k", c.k);
  read_key(j, "image_channels", c.image_channels);
  read_key(j, "pose_channels", c.pose_channels);
  read_key(j, "joints", c.joints);
  read_key(j, "resolution", c.resolution);
  read_key(j, "sources", c.sources);
  read_key(j, "omega", c.omega);
  if (j.contains("fusion")) {
    std::string name;
    read_key(j, "fusion", name);
    c.fusion = parse_fusion_strategy(name);
  }
  read_key(j, "beta", c.loss.beta);
  read_key(j, "gamma", c.loss.gamma);
  read_key(j, "lambda", c.loss.lambda);
  read_key(j, "mu", c.loss.mu);
  read_key(j, "iterations", c.iterations);
  read_key(j, "lookup_radius", c.lookup_radius);
  read_key(j, "gru_hidden", c.gru_hidden);
  read_key(j, "gru_context", c.gru_context);
  read_key(j, "d_min", c.d_min);
  read_key(j, "depth_fallback", c.depth_fallback);
  read_key(j, "heatmap_sigma", c.heatmap_sigma);
  read_key(j, "feature_heatmap_sigma", c.feature_heatmap_sigma);
  read_key(j, "prior_scale", c.prior_scale);
  read_key(j, "se_reduction", c.se_reduction);
  read_key(j, "tile", c.raster.tile);
  read_key(j, "alpha_min", c.raster.alpha_min);
  read_key(j, "transmittance_min", c.raster.transmittance_min);
  read_key(j, "sigma_extent", c.raster.sigma_extent);
  read_key(j, "pose_in_depth", c.pose_in_depth);
  read_key(j, "pose_in_skips", c.pose_in_skips);
  read_key(j, "tps_in_fusion", c.tps_in_fusion);
  read_key(j, "share_tps", c.share_tps);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "seed", c.seed);
  c.validate();
  return c;
}

std::vector<int> encoder_widths(int d) { return {d / 4, d / 4, d / 2, d / 2, 3 * d / 4, d}; }

std::vector<int> encoder_strides(int k) {
  if (k == 3) return {2, 1, 2, 1, 2, 1};
  if (k == 4) return {2, 2, 1, 2, 1, 2};
  throw std::invalid_argument("encoder: k must be 3 or 4");
}

// ---------------------------------------------------------------- weights

namespace {

// Largest reduction <= target that divides the width.
int se_reduction_for(int channels, int target) {
  for (int r = std::min(target, channels); r > 1; --r)
    if (channels % r == 0) return r;
  return 1;
}

template <typename Scalar>
EncoderParams<Scalar> make_encoder(ParamStore<Scalar>& store, const std::string& name, int in_channels,
                                   const ModelConfig& c) {
  EncoderParams<Scalar> e;
  const auto widths = encoder_widths(c.image_channels);
  const auto strides = encoder_strides(c.k);
  e.stem = make_conv(store, name + ".stem", 3, 3, in_channels, widths[0], c.seed);
  e.scale_channels.push_back(widths[0]);
  int width = widths[0];
  for (std::size_t u = 0; u < widths.size(); ++u) {
    e.units.push_back(make_residual(store, name + ".unit" + std::to_string(u), width, widths[u], strides[u],
                                    se_reduction_for(widths[u], c.se_reduction), c.seed));
    width = widths[u];
    if (strides[u] == 2)
      e.scale_channels.push_back(width);
    else
      e.scale_channels.back() = width;
  }
  return e;
}

// Features at scales 0 (full resolution) … k.
template <typename Scalar>
std::vector<Var<Scalar>> run_encoder(Var<Scalar> x, const EncoderParams<Scalar>& e) {
  std::vector<Var<Scalar>> scales{relu(conv2d(x, e.stem, 1, 1))};
  Var<Scalar> h = scales.back();
  for (const auto& unit : e.units) {
    h = residual_block(h, unit);
    if (unit.stride == 2)
      scales.push_back(h);
    else
      scales.back() = h;
  }
  return scales;
}

template <typename Scalar>
int skip_channels(const ModelWeights<Scalar>& w, const ModelConfig& c, int scale) {
  return w.image.scale_channels[scale] + w.depth.scale_channels[scale] +
         (c.pose_in_skips ? w.pose.scale_channels[scale] : 0);
}

}  // namespace

template <typename Scalar>
Model<Scalar>::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const ModelConfig& c = config_;
  auto& w = weights_;
  w.image = make_encoder(store_, "ie", 3, c);
  w.pose = make_encoder(store_, "pe", c.joints, c);
  w.pose_head = make_conv(store_, "pe.head", 1, 1, c.image_channels, c.joints, c.seed);
  w.depth = make_encoder(store_, "de", 1, c);
  int fused = c.image_channels;
  if (c.pose_in_depth) {
    w.fusion = make_fusion(store_, "fusion", c.fusion, c.image_channels, c.joints, c.seed);
    fused = w.fusion->out_channels();
  }
  w.solver = make_solver(store_, "solver", fused, c.solver(), c.seed);

  auto& d = w.decoder;
  const auto& width = w.image.scale_channels;
  d.deep_merge = make_conv(store_, "dec.merge" + std::to_string(c.k), 3, 3, skip_channels(w, c, c.k), width[c.k], c.seed);
  d.joint_tap = make_conv(store_, "dec.joint_tap", 1, 1, width[c.k], c.joints, c.seed);
  for (int l = c.k - 1; l >= 0; --l) {
    d.up.push_back(make_conv(store_, "dec.up" + std::to_string(l), 3, 3, width[l + 1], width[l], c.seed));
    d.merge.push_back(make_conv(store_, "dec.merge" + std::to_string(l), 3, 3, width[l] + skip_channels(w, c, l),
                                width[l], c.seed));
  }
  d.gaussian = make_conv(store_, "dec.gaussian", 3, 3, width[0], raw_layout::kChannels, c.seed);
  d.depth = make_conv(store_, "dec.depth", 3, 3, width[0], 1, c.seed);
  d.confidence = make_conv(store_, "dec.confidence", 3, 3, width[0], 1, c.seed);
  // Heads start small: scales near 1 cm, mostly opaque, confidence σ(−2) so
  // the prior dominates early.
  const int fan = 9 * width[0];
  init_fan_in_uniform(*d.gaussian.weight, fan, c.seed, 0.1);
  init_fan_in_uniform(*d.depth.weight, fan, c.seed, 0.1);
  init_fan_in_uniform(*d.confidence.weight, fan, c.seed, 0.1);
  for (int i = 0; i < 3; ++i) d.gaussian.bias->value[raw_layout::kScale + i] = Scalar(-4.6);
  d.gaussian.bias->value[raw_layout::kOpacity] = Scalar(2);
  d.gaussian.bias->value[raw_layout::kOpacity + 1] = Scalar(2);
  d.confidence.bias->value[0] = Scalar(-2);
}

template <typename Scalar>
void Model<Scalar>::copy_values(const Model& other) {
  if (other.store_.count() != store_.count()) throw std::invalid_argument("copy_values: parameter count differs");
  for (std::size_t i = 0; i < store_.count(); ++i) {
    if (store_.at(i).size() != other.store_.at(i).size())
      throw std::invalid_argument("copy_values: shape of " + store_.at(i).name + " differs");
    store_.at(i).value = other.store_.at(i).value;
  }
}

template <typename Scalar>
void Model<Scalar>::zero_heads() {
  for (auto* p : {&weights_.decoder.gaussian, &weights_.decoder.depth, &weights_.decoder.confidence}) {
    p->weight->value.setZero();
    p->bias->value.setZero();
  }
}

template <typename Scalar>
TPSBank<Scalar> TPSBank<Scalar>::make(const ModelConfig& config) {
  TPSBank b;
  b.shared = config.share_tps;
  const int n = config.share_tps ? 1 : config.sources;
  b.full.assign(n, TPSState<Scalar>(Scalar(config.omega)));
  b.feature.assign(n, TPSState<Scalar>(Scalar(config.omega)));
  return b;
}

// ---------------------------------------------------------------- forward

namespace {

template <typename Scalar>
struct PoseMaps {
  Tensor3<Scalar> full, feature;
};

// Heatmaps of one source view after TPS; advances the view's states.
template <typename Scalar>
PoseMaps<Scalar> pose_maps(TPSBank<Scalar>& tps, const ModelConfig& c, const Joints2D<Scalar>& joints, int view) {
  const int R = c.resolution, f = c.factor();
  PoseMaps<Scalar> m;
  m.full = tps.full_state(view).step(encode_heatmaps(joints, Scalar(c.heatmap_sigma), R, R, 1));
  if (c.pose_in_depth) {
    m.feature = encode_heatmaps(joints, Scalar(c.feature_heatmap_sigma), R / f, R / f, f);
    if (c.tps_in_fusion) m.feature = tps.feature_state(view).step(m.feature);
  }
  return m;
}

}  // namespace

template <typename Scalar>
void advance_tps(TPSBank<Scalar>& tps, const ModelConfig& config, const std::vector<Joints2D<Scalar>>& joints) {
  for (int s = 0; s < int(joints.size()); ++s) pose_maps(tps, config, joints[s], s);
}

template <typename Scalar>
ForwardResult<Scalar> forward(Tape<Scalar>& tape, const Model<Scalar>& model,
                              const std::vector<SourceInput<Scalar>>& sources, const Camera<Scalar>& target,
                              const Vec3<Scalar>& background, TPSBank<Scalar>& tps) {
  const ModelConfig& c = model.config();
  const ModelWeights<Scalar>& w = model.weights();
  const int S = int(sources.size());
  if (S != c.sources)
    throw std::invalid_argument("forward: expected " + std::to_string(c.sources) + " source views, got " +
                                std::to_string(S));
  const int R = c.resolution, f = c.factor(), Hf = R / f;
  const SolverConfig sc = c.solver();
  for (int s = 0; s < S; ++s) {
    const auto& src = sources[s];
    if (src.image.height() != R || src.image.width() != R || src.image.channels() != 3)
      throw std::invalid_argument("forward: source " + std::to_string(s) + " image is " + src.image.shape_string());
    require_same_spatial(src.image, src.mask, "forward: source mask");
    if (src.joints.size() != c.joints)
      throw std::invalid_argument("forward: source " + std::to_string(s) + " has " +
                                  std::to_string(src.joints.size()) + " joints, config expects " +
                                  std::to_string(c.joints));
  }

  ForwardResult<Scalar> out;
  std::vector<std::vector<Var<Scalar>>> ie(S), pe(S);
  std::vector<Var<Scalar>> fused(S);
  std::vector<DepthState<Scalar>> d0(S);
  for (int s = 0; s < S; ++s) {
    const auto& src = sources[s];
    ie[s] = run_encoder(tape.constant(src.image), w.image);
    PoseMaps<Scalar> maps = pose_maps(tps, c, src.joints, s);
    pe[s] = run_encoder(tape.constant(std::move(maps.full)), w.pose);
    out.f_pose.push_back(conv2d(pe[s].back(), w.pose_head, 1, 0));

    if (w.fusion) {
      fused[s] = fuse(ie[s].back(), tape.constant(std::move(maps.feature)), *w.fusion);
    } else {
      fused[s] = ie[s].back();
    }
    d0[s] = init_depth(tape, src.joints, Scalar(c.depth_fallback), Hf, Hf, sc);
  }

  Var<Scalar> ones = tape.constant(Tensor3<Scalar>::constant(Hf, Hf, 1, Scalar(1)));
  std::vector<Var<Scalar>> corr_feat(S);
  for (int s = 0; s < S; ++s) corr_feat[s] = concat_channels<Scalar>({fused[s], ones});

  std::vector<Var<Scalar>> clouds;
  for (int s = 0; s < S; ++s) {
    const Camera<Scalar> cam_f = sources[s].camera.downscaled(f);
    const Vec3<Scalar> center = sources[s].camera.pose.center();
    std::vector<Var<Scalar>> warped;
    int nearest = -1;
    Scalar best = std::numeric_limits<Scalar>::infinity();
    for (int o = 0; o < S; ++o) {
      if (o == s) continue;
      warped.push_back(warp_features(corr_feat[o], d0[s].depth.value(), sources[o].camera.downscaled(f), cam_f).first);
      const Scalar dist = (sources[o].camera.pose.center() - center).norm();
      if (dist < best) best = dist, nearest = o;
    }
    Var<Scalar> volume = correlation_volume(corr_feat[s], warped);
    auto geometry = LookupGeometry<Scalar>::from_cameras(cam_f, sources[nearest].camera.downscaled(f), d0[s].initial);
    Var<Scalar> context = solver_context(fused[s], w.solver);
    SolveResult<Scalar> solved = solve_depth(d0[s], volume, geometry, context, w.solver, sc);

    Var<Scalar> up_t = upsample_bilinear(solved.depths.back(), f);
    auto de = run_encoder(affine(up_t, Scalar(1) / d0[s].initial, Scalar(-1)), w.depth);

    auto skip = [&](int l) {
      std::vector<Var<Scalar>> parts{ie[s][l], de[l]};
      if (c.pose_in_skips) parts.push_back(pe[s][l]);
      return concat_channels(parts);
    };
    const auto& dec = w.decoder;
    Var<Scalar> m = relu(conv2d(skip(c.k), dec.deep_merge, 1, 1));
    out.f_joint.push_back(conv2d(m, dec.joint_tap, 1, 0));
    for (int i = 0, l = c.k - 1; l >= 0; ++i, --l) {
      Var<Scalar> u = relu(conv2d(upsample_nearest(m, 2), dec.up[i], 1, 1));
      m = relu(conv2d(concat_channels<Scalar>({u, skip(l)}), dec.merge[i], 1, 1));
    }
    Var<Scalar> raw = conv2d(m, dec.gaussian, 1, 1);
    Var<Scalar> residual = conv2d(m, dec.depth, 1, 1);
    Var<Scalar> confidence = conv2d(m, dec.confidence, 1, 1);

    Var<Scalar> depth = clamp_min(add(up_t, affine(residual, Scalar(0.1))), Scalar(c.d_min));
    std::vector<Var<Scalar>> stages;
    for (const auto& d : solved.depths) stages.push_back(upsample_bilinear(d, f));
    stages.push_back(depth);
    out.depths.push_back(std::move(stages));
    out.final_depth.push_back(depth);
    out.confidence.push_back(confidence);

    // Prior scale s0·D/fx stays on the tape so depth also trains through it.
    const Tensor3<Scalar> fixed =
        build_prior(depth.value(), sources[s].mask, sources[s].camera.intrinsics, Scalar(c.prior_scale))
            .slice_channels(map_layout::kQuat, map_layout::kChannels - map_layout::kQuat);
    Var<Scalar> prior_scale = affine(depth, Scalar(c.prior_scale) / sources[s].camera.intrinsics.fx);
    Var<Scalar> prior = concat_channels<Scalar>({prior_scale, prior_scale, prior_scale, tape.constant(fixed)});
    Var<Scalar> blended = confidence_blend(activate(raw), prior, confidence);
    clouds.push_back(lift_to_gaussians(blended, depth, sources[s].mask, sources[s].image, sources[s].camera));
  }
  out.cloud = merge_clouds(clouds);
  out.render = render(out.cloud, target, background, c.raster);
  return out;
}

// ---------------------------------------------------------------- loss / training

template <typename Scalar>
LossReport LossVars<Scalar>::report() const {
  return total_loss(double(render.value()[0]), double(depth.value()[0]), double(pose_fusion.value()[0]));
}

template <typename Scalar>
LossVars<Scalar> compute_loss(const ForwardResult<Scalar>& r, const TrainSample<Scalar>& sample,
                              const ModelConfig& c) {
  const int S = int(r.depths.size());
  if (int(sample.source_depth.size()) != S || int(sample.sources.size()) != S)
    throw std::invalid_argument("compute_loss: sample and forward disagree on the source count");
  LossVars<Scalar> l;
  l.render = render_loss(r.render.rgb, sample.target_rgb, c.loss.beta, c.loss.gamma);
  std::vector<Var<Scalar>> depth_terms, pose_terms;
  for (int s = 0; s < S; ++s) {
    depth_terms.push_back(depth_loss(r.depths[s], sample.source_depth[s], sample.sources[s].mask, c.loss.mu));
    pose_terms.push_back(pose_fusion_loss(r.f_joint[s], r.f_pose[s], c.loss.lambda));
  }
  const std::vector<Scalar> avg(S, Scalar(1) / S);
  l.depth = weighted_sum(depth_terms, avg);
  l.pose_fusion = weighted_sum(pose_terms, avg);
  l.total = weighted_sum<Scalar>({l.render, l.depth, l.pose_fusion}, {Scalar(1), Scalar(1), Scalar(1)});
  return l;
}

template <typename Scalar>
TrainState<Scalar> TrainState<Scalar>::init(const ParamStore<Scalar>& store, std::uint64_t seed) {
  TrainState s;
  s.rng_seed = seed;
  for (std::size_t i = 0; i < store.count(); ++i) {
    s.m.push_back(ParamBuffer<Scalar>::Vector::Zero(store.at(i).size()));
    s.v.push_back(ParamBuffer<Scalar>::Vector::Zero(store.at(i).size()));
  }
  return s;
}

template <typename Scalar>
LossReport train_step(Model<Scalar>& model, TrainState<Scalar>& state, const TrainSample<Scalar>& sample,
                      TPSBank<Scalar>& tps, const AdamConfig& adam) {
  ParamStore<Scalar>& store = model.store();
  if (state.m.size() != store.count()) throw std::invalid_argument("train_step: state does not match the model");
  store.zero_grad();
  TPSBank<Scalar> next_tps = tps;
  LossReport report;
  {
    Tape<Scalar> tape;
    ForwardResult<Scalar> r = forward(tape, model, sample.sources, sample.target, sample.background, next_tps);
    LossVars<Scalar> l = compute_loss(r, sample, model.config());
    report = l.report();
    const std::pair<const char*, double> parts[] = {
        {"render", report.render}, {"depth", report.depth}, {"pose_fusion", report.pose_fusion}};
    for (const auto& [name, value] : parts)
      if (!std::isfinite(value))
        throw NonFiniteError(name, std::string("non-finite ") + name + " loss at step " +
                                       std::to_string(state.step) + "; step aborted");
    tape.backward(l.total);
  }
  for (std::size_t i = 0; i < store.count(); ++i)
    if (!store.at(i).grad.allFinite())
      throw NonFiniteError("gradient", "non-finite gradient in " + store.at(i).name + " at step " +
                                           std::to_string(state.step) + "; step aborted");

  ++state.step;
  const double t = double(state.step);
  const double c1 = 1.0 - std::pow(adam.beta1, t), c2 = 1.0 - std::pow(adam.beta2, t);
  const Scalar b1 = Scalar(adam.beta1), b2 = Scalar(adam.beta2);
  for (std::size_t i = 0; i < store.count(); ++i) {
    auto& p = store.at(i);
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (Scalar(1) - b1) * p.grad;
    v = b2 * v + (Scalar(1) - b2) * p.grad.cwiseAbs2();
    for (Eigen::Index e = 0; e < p.value.size(); ++e) {
      const double mhat = double(m[e]) / c1, vhat = double(v[e]) / c2;
      p.value[e] -= Scalar(adam.lr * mhat / (std::sqrt(vhat) + adam.eps));
    }
  }
  tps = std::move(next_tps);
  return report;
}

std::vector<int> source_views(int cameras, int target, int count) {
  if (count >= cameras) throw std::invalid_argument("source_views: need more cameras than sources");
  std::vector<int> out;
  for (int d = 1; int(out.size()) < count; ++d) {
    out.push_back(((target - d) % cameras + cameras) % cameras);
    if (int(out.size()) < count) out.push_back((target + d) % cameras);
  }
  return out;
}

template <typename Scalar>
Joints2D<Scalar> jitter_joints(const Joints2D<Scalar>& joints, double sigma_px, Rng& rng) {
  Joints2D<Scalar> out = joints;
  for (int j = 0; j < out.size(); ++j) {
    const double dx = rng.normal(), dy = rng.normal();
    if (!out.visible[j]) continue;
    out.pixels[j] += Vec2<Scalar>(Scalar(sigma_px * dx), Scalar(sigma_px * dy));
  }
  return out;
}

namespace {

template <typename Scalar>
Joints2D<Scalar> cast_joints(const Joints2D<double>& j) {
  Joints2D<Scalar> out;
  out.visible = j.visible;
  for (const auto& p : j.pixels) out.pixels.push_back(p.cast<Scalar>());
  for (double d : j.depth) out.depth.push_back(Scalar(d));
  return out;
}

}  // namespace

template <typename Scalar>
TrainSample<Scalar> make_sample(const SceneFrame& frame, const DatasetInfo& info, int target,
                                const std::vector<int>& sources, double jitter_px, std::uint64_t jitter_seed) {
  const int n = int(info.cameras.size());
  auto check = [&](int v) {
    if (v < 0 || v >= n || v >= int(frame.views.size()))
      throw std::invalid_argument("make_sample: view " + std::to_string(v) + " is not in the dataset (" +
                                  std::to_string(n) + " cameras)");
  };
  check(target);
  TrainSample<Scalar> s;
  Rng rng(jitter_seed);
  for (int v : sources) {
    check(v);
    const ViewFrame& view = frame.views[v];
    SourceInput<Scalar> in;
    in.image = view.rgb.cast<Scalar>();
    in.mask = view.mask.cast<Scalar>();
    in.joints = cast_joints<Scalar>(view.joints);
    if (jitter_px > 0) in.joints = jitter_joints(in.joints, jitter_px, rng);
    in.camera = info.cameras[v].cast<Scalar>();
    s.sources.push_back(std::move(in));
    s.source_depth.push_back(view.depth.cast<Scalar>());
  }
  s.target = info.cameras[target].cast<Scalar>();
  s.target_rgb = frame.views[target].rgb.cast<Scalar>();
  s.background = info.background.cast<Scalar>();
  return s;
}

// ---------------------------------------------------------------- evaluation

EvalResult evaluate_sequences(const std::vector<std::vector<Tensor3<double>>>& pred,
                              const std::vector<std::vector<Tensor3<double>>>& gt, const std::vector<int>& views) {
  if (pred.size() != gt.size() || pred.size() != views.size())
    throw std::invalid_argument("evaluate: view counts differ");
  EvalResult r;
  r.views = views;
  const int frames = pred.empty() ? 0 : int(pred.front().size());
  for (std::size_t v = 0; v < views.size(); ++v)
    if (int(pred[v].size()) != frames || int(gt[v].size()) != frames)
      throw std::invalid_argument("evaluate: view " + std::to_string(views[v]) + " has a different frame count");
  r.rows.resize(std::size_t(frames) * views.size());
  parallel_for(int(r.rows.size()), [&](int i) {
    const int f = i / int(views.size()), v = i % int(views.size());
    EvalRow& row = r.rows[i];
    row.frame = f;
    row.view = views[v];
    row.psnr = psnr(pred[v][f], gt[v][f]);
    row.ssim = ssim(pred[v][f], gt[v][f]);
  });
  for (std::size_t v = 0; v < views.size(); ++v) {
    MetricReport m;
    for (int f = 0; f < frames; ++f) {
      m.psnr += r.rows[f * views.size() + v].psnr / frames;
      m.ssim += r.rows[f * views.size() + v].ssim / frames;
    }
    if (frames >= 2) {
      const DeltaSSIM d = delta_ssim_stats(pred[v], gt[v]);
      m.mu_dssim = d.mean;
      m.sigma_dssim = d.stddev;
    }
    r.per_view.push_back(m);
  }
  for (const auto& m : r.per_view) {
    const double n = double(r.per_view.size());
    r.overall.psnr += m.psnr / n;
    r.overall.ssim += m.ssim / n;
    r.overall.mu_dssim += m.mu_dssim / n;
    r.overall.sigma_dssim += m.sigma_dssim / n;
  }
  return r;
}

template <typename Scalar>
EvalResult evaluate(const Model<Scalar>& model, const DatasetReader& data, const EvalOptions& options,
                    std::vector<std::vector<Tensor3<double>>>* renders) {
  const ModelConfig& c = model.config();
  const DatasetInfo& info = data.info();
  const int first = options.first_frame;
  const int count = options.frames < 0 ? data.frames() - first : options.frames;
  if (first < 0 || count < 1 || first + count > data.frames())
    throw std::invalid_argument("evaluate: frame range outside the dataset");
  if (options.views.empty()) throw std::invalid_argument("evaluate: no target views");
  for (int v : options.views)
    if (v < 0 || v >= data.cameras())
      throw std::invalid_argument("evaluate: target view " + std::to_string(v) + " is missing from the dataset (" +
                                  std::to_string(data.cameras()) + " cameras)");
  if (info.cameras.front().intrinsics.width != c.resolution)
    throw std::invalid_argument("evaluate: dataset resolution differs from the model resolution");

  const int V = int(options.views.size());
  std::vector<std::vector<Tensor3<double>>> pred(V), gt(V);
  std::vector<std::vector<DepthAccuracy>> depth_acc(V);
  const double disparity = info.cameras.front().intrinsics.fx * info.nominal_baseline;
  for (int vi = 0; vi < V; ++vi) {
    const int target = options.views[vi];
    const auto src = source_views(data.cameras(), target, c.sources);
    ModelConfig tc = c;
    if (options.omega >= 0) tc.omega = options.omega;
    TPSBank<Scalar> tps = TPSBank<Scalar>::make(tc);
    for (int f = first; f < first + count; ++f) {
      SceneFrame frame;
      frame.joints = data.load_joints(f);
      frame.views.resize(data.cameras());
      frame.views[target] = data.load_view(f, target);
      for (int s : src) frame.views[s] = data.load_view(f, s);
      const std::uint64_t jseed = mix_seed(options.jitter_seed, "eval/" + std::to_string(target) + "/" + std::to_string(f));
      TrainSample<Scalar> sample = make_sample<Scalar>(frame, info, target, src, options.jitter_px, jseed);
      Tape<Scalar> tape;
      auto r = forward(tape, model, sample.sources, sample.target, sample.background, tps);
      pred[vi].push_back(r.render.rgb.value().template cast<double>());
      gt[vi].push_back(sample.target_rgb.template cast<double>());
      const Tensor3<double>& mask = frame.views[src[0]].mask.cast<double>();
      if (mask.data().maxCoeff() > 0.5)
        depth_acc[vi].push_back(epe_1px(r.final_depth[0].value().template cast<double>(),
                                        sample.source_depth[0].template cast<double>(), mask, disparity));
      else
        depth_acc[vi].push_back({});
    }
  }
  EvalResult result = evaluate_sequences(pred, gt, options.views);
  for (auto& row : result.rows) {
    const int vi = int(std::find(options.views.begin(), options.views.end(), row.view) - options.views.begin());
    const DepthAccuracy& a = depth_acc[vi][row.frame];
    row.frame += first;
    row.epe = a.epe;
    row.pct_1px = a.pct_1px;
  }
  for (int vi = 0; vi < V; ++vi) {
    for (const auto& a : depth_acc[vi]) {
      result.per_view[vi].epe += a.epe / count;
      result.per_view[vi].pct_1px += a.pct_1px / count;
    }
    result.overall.epe += result.per_view[vi].epe / V;
    result.overall.pct_1px += result.per_view[vi].pct_1px / V;
  }
  if (renders) *renders = std::move(pred);
  return result;
}

// ---------------------------------------------------------------- checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

template <typename Vector>
void write_blob(std::ostream& os, const Vector& v) {
  write_u64(os, std::uint64_t(v.size()));
  std::vector<float> buf(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) buf[i] = float(v[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const std::string& path, const Model<Scalar>& model, const TrainState<Scalar>* state) {
  const ParamStore<Scalar>& store = model.store();
  json header;
  header["format"] = "posegauss-checkpoint";
  header["version"] = kCheckpointVersion;
  header["step"] = state ? state->step : 0;
  header["rng_seed"] = state ? state->rng_seed : model.config().seed;
  header["config"] = model_config_to_json(model.config());
  header["has_state"] = state != nullptr;
  json params = json::array();
  for (std::size_t i = 0; i < store.count(); ++i)
    params.push_back({{"name", store.at(i).name}, {"shape", store.at(i).shape}});
  header["params"] = params;
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
    write_u64(os, text.size());
    os.write(text.data(), std::streamsize(text.size()));
    for (std::size_t i = 0; i < store.count(); ++i) write_blob(os, store.at(i).value);
    if (state) {
      for (const auto& m : state->m) write_blob(os, m);
      for (const auto& v : state->v) write_blob(os, v);
    }
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot write checkpoint " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  auto fail = [&](const std::string& m) -> void { throw std::runtime_error("checkpoint " + path + ": " + m); };
  std::uint64_t len = 0;
  if (!is.read(reinterpret_cast<char*>(&len), 8)) fail("truncated header");
  if (len > (1u << 26)) fail("implausible header length");
  std::string text(len, '\0');
  if (!is.read(text.data(), std::streamsize(len))) fail("truncated header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    fail(std::string("malformed header: ") + e.what());
  }
  if (header.value("format", "") != "posegauss-checkpoint") fail("not a checkpoint file");
  const int version = header.value("version", -1);
  if (version != kCheckpointVersion)
    fail("format version " + std::to_string(version) + " is not supported (expected " +
         std::to_string(kCheckpointVersion) + ")");

  CheckpointData d;
  d.config = model_config_from_json(header.at("config"));
  d.step = header.at("step").get<std::uint64_t>();
  d.rng_seed = header.at("rng_seed").get<std::uint64_t>();
  d.has_state = header.at("has_state").get<bool>();
  for (const auto& p : header.at("params")) {
    d.names.push_back(p.at("name").get<std::string>());
    d.shapes.push_back(p.at("shape").get<std::vector<int>>());
  }
  auto read_blob = [&](std::size_t i, const char* what) {
    std::size_t expected = 1;
    for (int s : d.shapes[i]) expected *= std::size_t(s);
    std::uint64_t count = 0;
    if (!is.read(reinterpret_cast<char*>(&count), 8))
      fail("truncated, missing blob '" + d.names[i] + "' (" + what + ")");
    if (count != expected)
      fail("blob '" + d.names[i] + "' (" + what + ") has " + std::to_string(count) + " values, shape needs " +
           std::to_string(expected));
    std::vector<float> buf(count);
    if (!is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(count * sizeof(float))))
      fail("truncated, missing blob '" + d.names[i] + "' (" + what + ")");
    return buf;
  };
  for (std::size_t i = 0; i < d.names.size(); ++i) d.values.push_back(read_blob(i, "values"));
  if (d.has_state) {
    for (std::size_t i = 0; i < d.names.size(); ++i) d.m.push_back(read_blob(i, "first moment"));
    for (std::size_t i = 0; i < d.names.size(); ++i) d.v.push_back(read_blob(i, "second moment"));
  }
  if (is.peek() != std::char_traits<char>::eof()) fail("trailing bytes after the last blob");
  return d;
}

template <typename Scalar>
void load_checkpoint(const std::string& path, Model<Scalar>& model, TrainState<Scalar>* state) {
  CheckpointData d = read_checkpoint(path);
  const json mine = model_config_to_json(model.config()), theirs = model_config_to_json(d.config);
  for (const auto& item : mine.items())
    if (theirs.at(item.key()) != item.value())
      throw std::runtime_error("checkpoint " + path + ": config key '" + item.key() + "' is " +
                               theirs.at(item.key()).dump() + ", model expects " + item.value().dump());
  ParamStore<Scalar>& store = model.store();
  if (d.names.size() != store.count())
    throw std::runtime_error("checkpoint " + path + ": " + std::to_string(d.names.size()) +
                             " parameters, model has " + std::to_string(store.count()));
  for (std::size_t i = 0; i < store.count(); ++i)
    if (d.names[i] != store.at(i).name || d.shapes[i] != store.at(i).shape)
      throw std::runtime_error("checkpoint " + path + ": parameter " + std::to_string(i) + " is '" + d.names[i] +
                               "', model expects '" + store.at(i).name + "' with the same shape");
  auto assign = [](auto& dst, const std::vector<float>& src) {
    dst.resize(Eigen::Index(src.size()));
    for (std::size_t e = 0; e < src.size(); ++e) dst[Eigen::Index(e)] = Scalar(src[e]);
  };
  for (std::size_t i = 0; i < store.count(); ++i) assign(store.at(i).value, d.values[i]);
  if (state) {
    *state = TrainState<Scalar>::init(store, d.rng_seed);
    state->step = d.step;
    if (d.has_state)
      for (std::size_t i = 0; i < store.count(); ++i) {
        assign(state->m[i], d.m[i]);
        assign(state->v[i], d.v[i]);
      }
  }
}

std::unique_ptr<Model<float>> load_model(const std::string& path, TrainState<float>* state) {
  CheckpointData d = read_checkpoint(path);
  auto model = std::make_unique<Model<float>>(d.config);
  load_checkpoint(path, *model, state);
  return model;
}

// ---------------------------------------------------------------- probe

ProbeResult overfit_probe(Model<float>& model, const GeneratedDataset& data, const ProbeOptions& options) {
  const ModelConfig& c = model.config();
  if (options.frame < 0 || options.frame >= int(data.frames.size()))
    throw std::invalid_argument("overfit_probe: frame out of range");
  const int cams = int(data.info.cameras.size());
  const auto src = source_views(cams, options.target, c.sources);
  const TrainSample<float> sample = make_sample<float>(data.frames[options.frame], data.info, options.target, src);
  TrainState<float> state = TrainState<float>::init(model.store(), c.seed);
  AdamConfig adam;
  adam.lr = c.learning_rate;
  ProbeResult result;

  auto measure = [&](int step, bool final) {
    TPSBank<float> tps = TPSBank<float>::make(c);
    Tape<float> tape;
    auto r = forward(tape, model, sample.sources, sample.target, sample.background, tps);
    const Tensor3<double> pred = r.render.rgb.value().cast<double>(), gt = sample.target_rgb.cast<double>();
    ProbePoint p{step, psnr(pred, gt), ssim(pred, gt)};
    result.curve.push_back(p);
    if (final) {
      result.final_psnr = p.psnr;
      result.final_ssim = p.ssim;
      const Tensor3<float>& mask = sample.sources[0].mask;
      const Tensor3<float>& gt_depth = sample.source_depth[0];
      const auto& stages = r.depths[0];
      double e1 = 0, et = 0;
      int n = 0;
      for (Eigen::Index i = 0; i < mask.size(); ++i) {
        if (mask[i] <= 0.5f) continue;
        e1 += std::abs(double(stages.front().value()[i]) - gt_depth[i]);
        et += std::abs(double(stages[stages.size() - 2].value()[i]) - gt_depth[i]);
        ++n;
      }
      result.mean_depth_error_first = n ? e1 / n : 0;
      result.mean_depth_error_last = n ? et / n : 0;
      if (n) {
        const DepthAccuracy a = epe_1px(r.final_depth[0].value().cast<double>(), gt_depth.cast<double>(),
                                        mask.cast<double>(), sample.target.intrinsics.fx * data.info.nominal_baseline);
        result.final_epe = a.epe;
        result.final_pct_1px = a.pct_1px;
      }
    }
    return p;
  };

  for (int step = 0; step < options.steps; ++step) {
    if (step % options.log_every == 0) {
      ProbePoint p = measure(step, false);
      if (options.on_log) options.on_log(p, result.losses.empty() ? LossReport{} : result.losses.back());
    }
    TPSBank<float> tps = TPSBank<float>::make(c);
    result.losses.push_back(train_step(model, state, sample, tps, adam));
  }
  ProbePoint p = measure(options.steps, true);
  if (options.on_log) options.on_log(p, result.losses.empty() ? LossReport{} : result.losses.back());
  return result;
}

// ---------------------------------------------------------------- instantiation

#define PG_INSTANTIATE_PIPELINE(S)                                                                        \
  template class Model<S>;                                                                                \
  template struct TPSBank<S>;                                                                             \
  template struct LossVars<S>;                                                                            \
  template struct TrainState<S>;                                                                          \
  template void advance_tps(TPSBank<S>&, const ModelConfig&, const std::vector<Joints2D<S>>&);            \
  template ForwardResult<S> forward(Tape<S>&, const Model<S>&, const std::vector<SourceInput<S>>&,        \
                                    const Camera<S>&, const Vec3<S>&, TPSBank<S>&);                       \
  template LossVars<S> compute_loss(const ForwardResult<S>&, const TrainSample<S>&, const ModelConfig&);  \
  template LossReport train_step(Model<S>&, TrainState<S>&, const TrainSample<S>&, TPSBank<S>&,           \
                                 const AdamConfig&);                                                      \
  template Joints2D<S> jitter_joints(const Joints2D<S>&, double, Rng&);                                   \
  template TrainSample<S> make_sample(const SceneFrame&, const DatasetInfo&, int, const std::vector<int>&, \
                                      double, std::uint64_t);                                             \
  template EvalResult evaluate(const Model<S>&, const DatasetReader&, const EvalOptions&,                 \
                               std::vector<std::vector<Tensor3<double>>>*);                               \
  template void save_checkpoint(const std::string&, const Model<S>&, const TrainState<S>*);               \
  template void load_checkpoint(const std::string&, Model<S>&, TrainState<S>*);

PG_INSTANTIATE_PIPELINE(float)
PG_INSTANTIATE_PIPELINE(double)

}  // namespace pg
