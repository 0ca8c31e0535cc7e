#pragma once

#include "posegauss/pipeline.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pg::cli {

/// Everything a command reads from the config file: the model keys plus
/// paths and per-command options. Keys are flat; flags override them.
struct RunConfig {
  ModelConfig model;
  std::string data = "data";
  std::string out = "run";

  // gen (resolution comes from the model key)
  int gen_frames = 64;
  int gen_cameras = 3;
  std::string gen_speed = "slow";

  // train
  int steps = 200;
  int log_every = 10;
  int checkpoint_every = 0;  // 0: final checkpoint only
  std::vector<int> train_views;  // empty: every camera
  int train_first_frame = 0;
  int train_frames = -1;
  double train_jitter_px = 0;
  int tps_warmup = 8;  // frames of heatmap history before each sample

  // eval
  std::vector<int> eval_views{0};
  int eval_first_frame = 0;
  int eval_frames = -1;
  double eval_jitter_px = 0;
  std::uint64_t eval_jitter_seed = 0;
  bool tps_off = false;

  // render
  int render_n = 8;
  double azimuth_start = 0, azimuth_end = 360;
  int render_frame = 0;

  // bench
  int bench_gaussians = 16384;
  int bench_resolution = 256;
  int bench_frames = 20;
  std::vector<int> bench_threads{1, 2, 4, 8};

  // ablate
  std::string ablate_protocol = "probe";  // probe | train
  int ablate_steps = 100;
  int probe_frame = 0;

  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& config);
/// Unknown keys and wrong types are rejected; missing keys keep defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

struct KeyDoc {
  std::string key, default_value, description;
};
/// Every config key with its default, in file order.
std::vector<KeyDoc> run_config_docs();

// ---------------------------------------------------------------- commands

void cmd_gen(const RunConfig& config);

struct TrainResult {
  std::vector<LossReport> losses;  // one per step taken in this run
  std::uint64_t first_step = 0, last_step = 0;
};

/// Trains up to config.steps total steps (continuing from `resume` when
/// given). Writes <out>/checkpoint.bin, <out>/train_log.csv (step and the
/// loss components) and <out>/train_time.csv (step, wall-ms).
TrainResult cmd_train(const RunConfig& config, const std::string& resume = "");

/// Renders render_n target cameras on the rig circle between the azimuth
/// bounds, sources taken from dataset frame render_frame. Returns the files.
std::vector<std::string> cmd_render(const RunConfig& config, const std::string& checkpoint);

/// Writes <out>/eval.csv (per row) and <out>/eval_summary.csv (per view and
/// overall). The model's own ω is used unless tps_off (ω = 1).
EvalResult cmd_eval(const RunConfig& config, const std::string& checkpoint);

struct BenchRow {
  int n_gaussians = 0, width = 0, height = 0, threads = 0;
  double mean_ms = 0, p95_ms = 0;
};

/// Rasterizer timing per thread count into <out>/bench.csv. The cloud is the
/// seeded synthetic one unless a checkpoint is given (then frame 0's merged
/// cloud from the dataset).
std::vector<BenchRow> cmd_bench(const RunConfig& config, const std::string& checkpoint = "");

struct AblationRow {
  std::string arm;
  ModelConfig config;
  std::size_t params = 0;
  double psnr = 0, ssim = 0, epe = 0, pct_1px = 0;
};

/// kind ∈ {fusion, loss, pose}; writes <out>/ablate_<kind>.csv.
std::vector<AblationRow> cmd_ablate(const RunConfig& config, const std::string& kind);

/// The arms of each sweep, applied on top of `base`.
std::vector<std::pair<std::string, ModelConfig>> ablation_arms(const ModelConfig& base, const std::string& kind);

// ---------------------------------------------------------------- helpers

/// Camera on the rig circle of `info` at `azimuth_deg` (0 = camera 0).
Camera<double> rig_camera(const DatasetInfo& info, double azimuth_deg);

/// The `count` cameras nearest to `camera` that do not coincide with it.
std::vector<int> nearest_views(const DatasetInfo& info, const Camera<double>& camera, int count);

/// 64-bit difference hash of an image (9×8 luma grid, area sampled).
std::uint64_t dhash(const Tensor3<float>& image);
int hamming(std::uint64_t a, std::uint64_t b);

/// Thread count: flag when > 0, else POSEGAUSS_THREADS, else 1.
int resolve_threads(int flag);

}  // namespace pg::cli
