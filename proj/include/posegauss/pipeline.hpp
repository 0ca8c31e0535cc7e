#pragma once

#include "posegauss/depthsolver.hpp"
#include "posegauss/fusion.hpp"
#include "posegauss/gaussmaps.hpp"
#include "posegauss/objectives.hpp"
#include "posegauss/posekit.hpp"
#include "posegauss/splatter.hpp"
#include "posegauss/synthrig.hpp"

#include "json.hpp"

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace pg {

struct ModelConfig {
  int k = 3;                     // downsampling stages of the encoders
  int image_channels = 128;      // D_i, deepest encoder width
  int pose_channels = 15;        // D_p, must equal joints
  int joints = 15;               // J
  int resolution = 128;
  int sources = 2;               // S
  double omega = 0.8;            // TPS blend factor
  FusionStrategy fusion = FusionStrategy::Concat;
  LossWeights loss;
  int iterations = 8;            // T
  int lookup_radius = 4;
  int gru_hidden = 32;
  int gru_context = 16;
  double d_min = 0.05;
  double depth_fallback = 3.0;   // D⁽⁰⁾ when no joint is visible
  double heatmap_sigma = 2.0;    // full-resolution pixels
  double feature_heatmap_sigma = 1.0;  // feature pixels
  double prior_scale = 1.0;      // s0
  int se_reduction = 4;
  RasterConfig raster;
  bool pose_in_depth = true;     // fuse heatmaps into the correlation features
  bool pose_in_skips = true;     // pose-encoder features in the decoder skips
  bool tps_in_fusion = true;     // smooth the fusion heatmaps too
  bool share_tps = false;        // one TPS state for every source view
  double learning_rate = 2e-4;
  std::uint64_t seed = 0;

  void validate() const;
  SolverConfig solver() const;
  int factor() const { return 1 << k; }
};

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Rejects unknown keys and wrong types; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);
/// (key, one-line description) for every config key, in to_json order.
const std::vector<std::pair<std::string, std::string>>& model_config_docs();

/// Unit widths (D/4, D/4, D/2, D/2, 3D/4, D) and strides for k = 3 or 4.
std::vector<int> encoder_widths(int image_channels);
std::vector<int> encoder_strides(int k);

template <typename Scalar>
struct EncoderParams {
  ConvParams<Scalar> stem;
  std::vector<ResidualParams<Scalar>> units;
  std::vector<int> scale_channels;  // width of the feature kept at scale 0..k
};

template <typename Scalar>
struct DecoderParams {
  ConvParams<Scalar> deep_merge;       // deepest skip concat → D_i
  ConvParams<Scalar> joint_tap;        // 1×1 deepest merge → J (f_joint)
  std::vector<ConvParams<Scalar>> up;  // per scale k−1 … 0
  std::vector<ConvParams<Scalar>> merge;
  ConvParams<Scalar> gaussian;         // raw_layout (8)
  ConvParams<Scalar> depth;            // residual (1)
  ConvParams<Scalar> confidence;       // c(x) (1)
};

template <typename Scalar>
struct ModelWeights {
  EncoderParams<Scalar> image, pose, depth;
  ConvParams<Scalar> pose_head;  // 1×1 deepest pose features → J (f_pose)
  std::optional<FusionParams<Scalar>> fusion;
  SolverParams<Scalar> solver;
  DecoderParams<Scalar> decoder;
};

/// Configuration plus parameters. Parameter pointers refer into `store`, so
/// a Model is not copyable; use copy_values() to duplicate weights.
template <typename Scalar>
class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore<Scalar>& store() { return store_; }
  const ParamStore<Scalar>& store() const { return store_; }
  const ModelWeights<Scalar>& weights() const { return weights_; }

  void copy_values(const Model& other);
  /// Zeroes the gaussian/depth/confidence head weights and biases.
  void zero_heads();

 private:
  ModelConfig config_;
  ParamStore<Scalar> store_;
  ModelWeights<Scalar> weights_;
};

/// TPS states per source view and stream (full resolution for the pose
/// encoder, feature resolution for fusion).
template <typename Scalar>
struct TPSBank {
  std::vector<TPSState<Scalar>> full, feature;
  bool shared = false;

  static TPSBank make(const ModelConfig& config);
  TPSState<Scalar>& full_state(int view) { return full[shared ? 0 : view]; }
  TPSState<Scalar>& feature_state(int view) { return feature[shared ? 0 : view]; }
};

template <typename Scalar>
struct SourceInput {
  Tensor3<Scalar> image;  // H×W×3
  Tensor3<Scalar> mask;   // H×W×1
  Joints2D<Scalar> joints;
  Camera<Scalar> camera;
};

template <typename Scalar>
struct ForwardResult {
  RenderVars<Scalar> render;
  std::vector<std::vector<Var<Scalar>>> depths;  // per source: d_1 … d_T (full res), then the head output
  std::vector<Var<Scalar>> final_depth;          // per source, full res
  std::vector<Var<Scalar>> f_joint, f_pose;      // per source, 1/2^k × J
  std::vector<Var<Scalar>> confidence;           // per source, c(x)
  Var<Scalar> cloud;                             // merged N×1×14
};

/// Full forward pass for one time step. TPS states advance by one frame.
template <typename Scalar>
ForwardResult<Scalar> forward(Tape<Scalar>& tape, const Model<Scalar>& model,
                              const std::vector<SourceInput<Scalar>>& sources, const Camera<Scalar>& target,
                              const Vec3<Scalar>& background, TPSBank<Scalar>& tps);

/// Steps the TPS states with one frame of source joints without running the
/// network (warm-up over the frames preceding a training sample).
template <typename Scalar>
void advance_tps(TPSBank<Scalar>& tps, const ModelConfig& config, const std::vector<Joints2D<Scalar>>& joints);

/// Supervision for one step.
template <typename Scalar>
struct TrainSample {
  std::vector<SourceInput<Scalar>> sources;
  std::vector<Tensor3<Scalar>> source_depth;  // ground-truth depth per source
  Camera<Scalar> target;
  Tensor3<Scalar> target_rgb;
  Vec3<Scalar> background = Vec3<Scalar>::Zero();
};

struct NonFiniteError : std::runtime_error {
  std::string component;
  NonFiniteError(const std::string& component, const std::string& what)
      : std::runtime_error(what), component(component) {}
};

template <typename Scalar>
struct LossVars {
  Var<Scalar> total, render, depth, pose_fusion;
  LossReport report() const;
};

/// L_render + mean over sources of L_depth and L_pose-fusion.
template <typename Scalar>
LossVars<Scalar> compute_loss(const ForwardResult<Scalar>& result, const TrainSample<Scalar>& sample,
                              const ModelConfig& config);

struct AdamConfig {
  double lr = 2e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <typename Scalar>
struct TrainState {
  std::uint64_t step = 0;
  std::uint64_t rng_seed = 0;  // per-step jitter streams derive from (rng_seed, step)
  std::vector<typename ParamBuffer<Scalar>::Vector> m, v;

  static TrainState init(const ParamStore<Scalar>& store, std::uint64_t seed);
};

/// forward → loss → backward → Adam. Throws NonFiniteError (weights and
/// state untouched) when a loss component or a gradient is not finite.
template <typename Scalar>
LossReport train_step(Model<Scalar>& model, TrainState<Scalar>& state, const TrainSample<Scalar>& sample,
                      TPSBank<Scalar>& tps, const AdamConfig& adam);

/// Source cameras for a target: neighbours by index, nearest first,
/// alternating below/above (t−1, t+1, t−2, …) modulo the rig size.
std::vector<int> source_views(int cameras, int target, int count);

/// Gaussian pixel noise on every visible joint.
template <typename Scalar>
Joints2D<Scalar> jitter_joints(const Joints2D<Scalar>& joints, double sigma_px, Rng& rng);

/// Builds a sample from a loaded frame. `jitter_px` > 0 perturbs the 2D
/// joints of the sources with a stream derived from `jitter_seed`.
template <typename Scalar>
TrainSample<Scalar> make_sample(const SceneFrame& frame, const DatasetInfo& info, int target,
                                const std::vector<int>& sources, double jitter_px = 0,
                                std::uint64_t jitter_seed = 0);

struct EvalRow {
  int frame = 0, view = 0;
  double psnr = 0, ssim = 0, epe = 0, pct_1px = 0;
};

struct EvalResult {
  std::vector<EvalRow> rows;          // frame-major
  std::vector<int> views;
  std::vector<MetricReport> per_view;
  MetricReport overall;               // means over views
};

/// Metric rows for image sequences (one per target view, frame-major); the
/// ΔSSIM statistics use per-view sequences.
EvalResult evaluate_sequences(const std::vector<std::vector<Tensor3<double>>>& pred,
                              const std::vector<std::vector<Tensor3<double>>>& gt, const std::vector<int>& views);

struct EvalOptions {
  std::vector<int> views;     // target cameras
  double jitter_px = 0;
  std::uint64_t jitter_seed = 0;
  int first_frame = 0, frames = -1;  // −1: all
  double omega = -1;                 // TPS blend override; −1 keeps the model's
};

/// Renders every frame for each target view in time order with fresh TPS
/// states per view; EPE/1px come from the first source's final depth.
template <typename Scalar>
EvalResult evaluate(const Model<Scalar>& model, const DatasetReader& data, const EvalOptions& options,
                    std::vector<std::vector<Tensor3<double>>>* renders = nullptr);

inline constexpr int kCheckpointVersion = 1;

struct CheckpointData {
  ModelConfig config;
  std::uint64_t step = 0;
  std::uint64_t rng_seed = 0;
  std::vector<std::string> names;
  std::vector<std::vector<int>> shapes;
  std::vector<std::vector<float>> values, m, v;
  bool has_state = false;
};

template <typename Scalar>
void save_checkpoint(const std::string& path, const Model<Scalar>& model, const TrainState<Scalar>* state);

CheckpointData read_checkpoint(const std::string& path);

/// Loads weights (and the state when present and requested). Throws when the
/// checkpoint's config differs from the model's or a shape disagrees.
template <typename Scalar>
void load_checkpoint(const std::string& path, Model<Scalar>& model, TrainState<Scalar>* state = nullptr);

/// Builds a model from the checkpoint's own config and loads it.
std::unique_ptr<Model<float>> load_model(const std::string& path, TrainState<float>* state = nullptr);

struct ProbePoint {
  int step = 0;
  double psnr = 0, ssim = 0;
};

struct ProbeResult {
  std::vector<ProbePoint> curve;
  std::vector<LossReport> losses;  // per step
  double final_psnr = 0, final_ssim = 0;
  double mean_depth_error_first = 0, mean_depth_error_last = 0;  // |d_1 − gt|, |d_T − gt| at the end
  double final_epe = 0, final_pct_1px = 0;  // first source's final depth
};

struct ProbeOptions {
  int steps = 2000;
  int log_every = 50;
  int frame = 0;
  int target = 0;
  std::function<void(const ProbePoint&, const LossReport&)> on_log;
};

/// Trains from scratch on one frame with a fixed target view, logging
/// PSNR/SSIM of the target render every `log_every` steps and at the end.
ProbeResult overfit_probe(Model<float>& model, const GeneratedDataset& data, const ProbeOptions& options);

}  // namespace pg
