#include "posegauss/cli.hpp"

#include "posegauss/log.hpp"
#include "posegauss/parallel.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pg::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config: key '") + key + "' has the wrong type");
  }
}

const std::vector<std::pair<std::string, std::string>>& run_key_docs() {
  static const std::vector<std::pair<std::string, std::string>> docs = {
      {"data", "dataset directory (gen writes it, the others read it)"},
      {"out", "output directory"},
      {"gen_frames", "gen: frames in the clip"},
      {"gen_cameras", "gen: cameras on the rig circle"},
      {"gen_speed", "gen: motion speed preset (slow|medium|fast)"},
      {"steps", "train: total optimizer steps (a resumed run continues to this count)"},
      {"log_every", "train: progress line every N steps"},
      {"checkpoint_every", "train: extra checkpoint every N steps (0 = final only)"},
      {"train_views", "train: target cameras (empty = all)"},
      {"train_first_frame", "train: first frame of the training range"},
      {"train_frames", "train: frames in the training range (-1 = to the end)"},
      {"train_jitter_px", "train: Gaussian 2D joint noise (px)"},
      {"tps_warmup", "train: frames of heatmap history fed to TPS before each sample"},
      {"eval_views", "eval: target cameras"},
      {"eval_first_frame", "eval: first frame"},
      {"eval_frames", "eval: frame count (-1 = to the end)"},
      {"eval_jitter_px", "eval: Gaussian 2D joint noise (px)"},
      {"eval_jitter_seed", "eval: seed of the joint noise"},
      {"tps_off", "eval: evaluate with omega = 1 (no temporal smoothing)"},
      {"render_n", "render: number of views"},
      {"azimuth_start", "render: first azimuth (degrees, 0 = camera 0)"},
      {"azimuth_end", "render: last azimuth (degrees; 360 wraps without repeating 0)"},
      {"render_frame", "render: dataset frame providing the source views"},
      {"bench_gaussians", "bench: primitives in the synthetic cloud"},
      {"bench_resolution", "bench: square image size"},
      {"bench_frames", "bench: timed frames per thread count"},
      {"bench_threads", "bench: thread counts to sweep"},
      {"ablate_protocol", "ablate: probe (one frame, one view) or train (train then eval)"},
      {"ablate_steps", "ablate: training steps per arm"},
      {"probe_frame", "ablate: frame used by the probe protocol"},
  };
  return docs;
}

bool is_model_key(const std::string& key) {
  for (const auto& [k, _] : model_config_docs())
    if (k == key) return true;
  return false;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

std::uint64_t step_seed(std::uint64_t seed, std::uint64_t step) {
  return mix_seed(seed, "train/" + std::to_string(step));
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  auto positive = [](int v, const char* key) {
    if (v < 1) throw std::invalid_argument(std::string("config: ") + key + " must be >= 1");
  };
  positive(gen_frames, "gen_frames");
  if (gen_cameras < 3) throw std::invalid_argument("config: gen_cameras must be >= 3");
  speed_preset(gen_speed);
  if (steps < 0) throw std::invalid_argument("config: steps must be >= 0");
  positive(log_every, "log_every");
  if (checkpoint_every < 0) throw std::invalid_argument("config: checkpoint_every must be >= 0");
  if (train_jitter_px < 0 || eval_jitter_px < 0) throw std::invalid_argument("config: jitter must be >= 0");
  if (tps_warmup < 0) throw std::invalid_argument("config: tps_warmup must be >= 0");
  positive(render_n, "render_n");
  positive(bench_gaussians, "bench_gaussians");
  positive(bench_resolution, "bench_resolution");
  positive(bench_frames, "bench_frames");
  for (int t : bench_threads) positive(t, "bench_threads");
  if (ablate_protocol != "probe" && ablate_protocol != "train")
    throw std::invalid_argument("config: ablate_protocol must be probe or train");
  if (ablate_steps < 0) throw std::invalid_argument("config: ablate_steps must be >= 0");
}

json run_config_to_json(const RunConfig& c) {
  json j = model_config_to_json(c.model);
  j["data"] = c.data;
  j["out"] = c.out;
  j["gen_frames"] = c.gen_frames;
  j["gen_cameras"] = c.gen_cameras;
  j["gen_speed"] = c.gen_speed;
  j["steps"] = c.steps;
  j["log_every"] = c.log_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["train_views"] = c.train_views;
  j["train_first_frame"] = c.train_first_frame;
  j["train_frames"] = c.train_frames;
  j["train_jitter_px"] = c.train_jitter_px;
  j["tps_warmup"] = c.tps_warmup;
  j["eval_views"] = c.eval_views;
  j["eval_first_frame"] = c.eval_first_frame;
  j["eval_frames"] = c.eval_frames;
  j["eval_jitter_px"] = c.eval_jitter_px;
  j["eval_jitter_seed"] = c.eval_jitter_seed;
  j["tps_off"] = c.tps_off;
  j["render_n"] = c.render_n;
  j["azimuth_start"] = c.azimuth_start;
  j["azimuth_end"] = c.azimuth_end;
  j["render_frame"] = c.render_frame;
  j["bench_gaussians"] = c.bench_gaussians;
  j["bench_resolution"] = c.bench_resolution;
  j["bench_frames"] = c.bench_frames;
  j["bench_threads"] = c.bench_threads;
  j["ablate_protocol"] = c.ablate_protocol;
  j["ablate_steps"] = c.ablate_steps;
  j["probe_frame"] = c.probe_frame;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  std::set<std::string> run_keys;
  for (const auto& [k, _] : run_key_docs()) run_keys.insert(k);
  json model_part = json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (is_model_key(it.key()))
      model_part[it.key()] = it.value();
    else if (!run_keys.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + it.key() + "'");
  }
  RunConfig c;
  c.model = model_config_from_json(model_part);
  read_key(j, "data", c.data);
  read_key(j, "out", c.out);
  read_key(j, "gen_frames", c.gen_frames);
  read_key(j, "gen_cameras", c.gen_cameras);
  read_key(j, "gen_speed", c.gen_speed);
  read_key(j, "steps", c.steps);
  read_key(j, "log_every", c.log_every);
  read_key(j, "checkpoint_every", c.checkpoint_every);
  read_key(j, "train_views", c.train_views);
  read_key(j, "train_first_frame", c.train_first_frame);
  read_key(j, "train_frames", c.train_frames);
  read_key(j, "train_jitter_px", c.train_jitter_px);
  read_key(j, "tps_warmup", c.tps_warmup);
  read_key(j, "eval_views", c.eval_views);
  read_key(j, "eval_first_frame", c.eval_first_frame);
  read_key(j, "eval_frames", c.eval_frames);
  read_key(j, "eval_jitter_px", c.eval_jitter_px);
  read_key(j, "eval_jitter_seed", c.eval_jitter_seed);
  read_key(j, "tps_off", c.tps_off);
  read_key(j, "render_n", c.render_n);
  read_key(j, "azimuth_start", c.azimuth_start);
  read_key(j, "azimuth_end", c.azimuth_end);
  read_key(j, "render_frame", c.render_frame);
  read_key(j, "bench_gaussians", c.bench_gaussians);
  read_key(j, "bench_resolution", c.bench_resolution);
  read_key(j, "bench_frames", c.bench_frames);
  read_key(j, "bench_threads", c.bench_threads);
  read_key(j, "ablate_protocol", c.ablate_protocol);
  read_key(j, "ablate_steps", c.ablate_steps);
  read_key(j, "probe_frame", c.probe_frame);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: " + path + " is not valid JSON (" + e.what() + ")");
  }
  return run_config_from_json(j);
}

std::vector<KeyDoc> run_config_docs() {
  const json defaults = run_config_to_json(RunConfig{});
  std::vector<KeyDoc> out;
  for (const auto& [k, d] : model_config_docs()) out.push_back({k, defaults.at(k).dump(), d});
  for (const auto& [k, d] : run_key_docs()) out.push_back({k, defaults.at(k).dump(), d});
  return out;
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("POSEGAUSS_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// ---------------------------------------------------------------- helpers

Camera<double> rig_camera(const DatasetInfo& info, double azimuth_deg) {
  if (info.cameras.empty()) throw std::invalid_argument("rig_camera: dataset has no cameras");
  Vec3<double> center = Vec3<double>::Zero();
  for (const auto& c : info.cameras) center += c.pose.center();
  center /= double(info.cameras.size());
  const Camera<double>& c0 = info.cameras.front();
  const Vec3<double> eye0 = c0.pose.center();
  const Vec3<double> fwd = c0.pose.rotation.row(2).transpose();
  // Look-at point: where camera 0's axis passes the rig's vertical axis.
  const Vec2<double> d(fwd.x(), fwd.z()), off(center.x() - eye0.x(), center.z() - eye0.z());
  const double t = d.squaredNorm() > 1e-12 ? off.dot(d) / d.squaredNorm() : 0.0;
  const Vec3<double> target = eye0 + t * fwd;
  const double radius = std::hypot(eye0.x() - center.x(), eye0.z() - center.z());
  const double az = std::atan2(eye0.x() - center.x(), eye0.z() - center.z()) + azimuth_deg * M_PI / 180.0;
  const Vec3<double> eye(center.x() + radius * std::sin(az), eye0.y(), center.z() + radius * std::cos(az));
  return {c0.intrinsics, look_at<double>(eye, target, Vec3<double>::UnitY())};
}

std::vector<int> nearest_views(const DatasetInfo& info, const Camera<double>& camera, int count) {
  const Vec3<double> c = camera.pose.center();
  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < int(info.cameras.size()); ++i) {
    const double d = (info.cameras[i].pose.center() - c).norm();
    if (d > 1e-6) order.emplace_back(d, i);
  }
  if (int(order.size()) < count)
    throw std::invalid_argument("nearest_views: need " + std::to_string(count) + " other cameras");
  std::sort(order.begin(), order.end());
  std::vector<int> out;
  for (int i = 0; i < count; ++i) out.push_back(order[i].second);
  return out;
}

std::uint64_t dhash(const Tensor3<float>& image) {
  const int H = image.height(), W = image.width(), C = image.channels();
  if (H < 8 || W < 9) throw std::invalid_argument("dhash: image smaller than 9×8");
  double grid[8][9] = {};
  for (int gy = 0; gy < 8; ++gy)
    for (int gx = 0; gx < 9; ++gx) {
      const int y0 = gy * H / 8, y1 = (gy + 1) * H / 8, x0 = gx * W / 9, x1 = (gx + 1) * W / 9;
      double acc = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          for (int c = 0; c < C; ++c) acc += image(y, x, c);
      grid[gy][gx] = acc / double((y1 - y0) * (x1 - x0) * C);
    }
  std::uint64_t h = 0;
  for (int gy = 0; gy < 8; ++gy)
    for (int gx = 0; gx < 8; ++gx) h = (h << 1) | (grid[gy][gx + 1] > grid[gy][gx] ? 1u : 0u);
  return h;
}

int hamming(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

// ---------------------------------------------------------------- gen

void cmd_gen(const RunConfig& c) {
  RigConfig rig;
  rig.cameras = c.gen_cameras;
  rig.resolution = c.model.resolution;
  GeneratedDataset data = generate_dataset(rig, c.gen_frames, speed_preset(c.gen_speed), c.model.seed);
  write_dataset(data, c.data);
  log_info("gen: " + std::to_string(c.gen_frames) + " frames × " + std::to_string(c.gen_cameras) + " cameras at " +
           std::to_string(rig.resolution) + "² → " + c.data);
}

// ---------------------------------------------------------------- train

namespace {

struct TrainRange {
  int first = 0, count = 0;
  std::vector<int> views;
};

TrainRange train_range(const RunConfig& c, const DatasetReader& data) {
  TrainRange r;
  r.first = c.train_first_frame;
  r.count = c.train_frames < 0 ? data.frames() - r.first : c.train_frames;
  if (r.first < 0 || r.count < 1 || r.first + r.count > data.frames())
    throw std::invalid_argument("train: frame range outside the dataset (" + std::to_string(data.frames()) +
                                " frames)");
  r.views = c.train_views;
  if (r.views.empty())
    for (int v = 0; v < data.cameras(); ++v) r.views.push_back(v);
  for (int v : r.views)
    if (v < 0 || v >= data.cameras())
      throw std::invalid_argument("train: view " + std::to_string(v) + " is not in the dataset");
  if (data.cameras() <= c.model.sources)
    throw std::invalid_argument("train: dataset needs more cameras than sources");
  if (data.info().cameras.front().intrinsics.width != c.model.resolution)
    throw std::invalid_argument("train: dataset resolution differs from the model resolution");
  return r;
}

// One optimizer step on a seeded (frame, target) draw. TPS sees the
// preceding frames' (jittered) heatmaps first, as it would at test time.
LossReport train_one(Model<float>& model, TrainState<float>& state, const RunConfig& c, const DatasetReader& data,
                     const TrainRange& range, const AdamConfig& adam) {
  const ModelConfig& mc = model.config();
  Rng rng(step_seed(state.rng_seed, state.step));
  const int frame = range.first + rng.index(range.count);
  const int target = range.views[rng.index(int(range.views.size()))];
  const std::uint64_t jseed = rng.bits();
  const auto src = source_views(data.cameras(), target, mc.sources);

  TPSBank<float> tps = TPSBank<float>::make(mc);
  for (int f = std::max(range.first, frame - c.tps_warmup); f < frame; ++f) {
    Rng jr(mix_seed(jseed, std::to_string(f)));
    std::vector<Joints2D<float>> joints;
    for (int s : src) {
      const ViewFrame v = data.load_view(f, s);
      Joints2D<float> j;
      j.visible = v.joints.visible;
      for (const auto& p : v.joints.pixels) j.pixels.push_back(p.cast<float>());
      for (double d : v.joints.depth) j.depth.push_back(float(d));
      joints.push_back(c.train_jitter_px > 0 ? jitter_joints(j, c.train_jitter_px, jr) : j);
    }
    advance_tps(tps, mc, joints);
  }
  SceneFrame sf;
  sf.joints = data.load_joints(frame);
  sf.views.resize(data.cameras());
  sf.views[target] = data.load_view(frame, target);
  for (int s : src) sf.views[s] = data.load_view(frame, s);
  const TrainSample<float> sample =
      make_sample<float>(sf, data.info(), target, src, c.train_jitter_px, mix_seed(jseed, std::to_string(frame)));
  return train_step(model, state, sample, tps, adam);
}

struct CsvLog {
  std::ofstream loss, time;
};

}  // namespace

TrainResult cmd_train(const RunConfig& c, const std::string& resume) {
  DatasetReader data(c.data);
  const TrainRange range = train_range(c, data);
  Model<float> model(c.model);
  TrainState<float> state = TrainState<float>::init(model.store(), c.model.seed);
  if (!resume.empty()) load_checkpoint(resume, model, &state);
  if (state.step > std::uint64_t(c.steps))
    throw std::invalid_argument("train: checkpoint is already at step " + std::to_string(state.step) +
                                " > steps " + std::to_string(c.steps));
  AdamConfig adam;
  adam.lr = c.model.learning_rate;

  const fs::path out(c.out);
  fs::create_directories(out);
  const bool append = !resume.empty() && fs::exists(out / "train_log.csv");
  std::ofstream log(out / "train_log.csv", append ? std::ios::app : std::ios::trunc);
  std::ofstream timing(out / "train_time.csv", append ? std::ios::app : std::ios::trunc);
  if (!log || !timing) throw std::runtime_error("train: cannot write logs in " + c.out);
  if (!append) {
    log << "step,render,depth,pose_fusion,total\n";
    timing << "step,wall_ms\n";
  }

  TrainResult result;
  result.first_step = state.step;
  const auto t0 = std::chrono::steady_clock::now();
  while (state.step < std::uint64_t(c.steps)) {
    const LossReport r = train_one(model, state, c, data, range, adam);
    result.losses.push_back(r);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log << state.step << ',' << fmt(r.render) << ',' << fmt(r.depth) << ',' << fmt(r.pose_fusion) << ','
        << fmt(r.total) << '\n';
    timing << state.step << ',' << fmt(ms) << '\n';
    if (state.step % std::uint64_t(c.log_every) == 0)
      log_info("step " + std::to_string(state.step) + " loss " + fmt(r.total) + " (render " + fmt(r.render) +
               ", depth " + fmt(r.depth) + ", pose " + fmt(r.pose_fusion) + ")");
    if (c.checkpoint_every > 0 && state.step % std::uint64_t(c.checkpoint_every) == 0)
      save_checkpoint((out / ("checkpoint_" + std::to_string(state.step) + ".bin")).string(), model, &state);
  }
  result.last_step = state.step;
  save_checkpoint((out / "checkpoint.bin").string(), model, &state);
  return result;
}

// ---------------------------------------------------------------- render

std::vector<std::string> cmd_render(const RunConfig& c, const std::string& checkpoint) {
  if (checkpoint.empty()) throw std::invalid_argument("render: a checkpoint is required");
  auto model = load_model(checkpoint);
  const ModelConfig& mc = model->config();
  DatasetReader data(c.data);
  const DatasetInfo& info = data.info();
  if (c.render_frame < 0 || c.render_frame >= data.frames())
    throw std::invalid_argument("render: frame " + std::to_string(c.render_frame) + " is not in the dataset");
  if (info.cameras.front().intrinsics.width != mc.resolution)
    throw std::invalid_argument("render: dataset resolution differs from the model resolution");
  const double span = c.azimuth_end - c.azimuth_start;
  const bool wraps = std::abs(std::abs(span) - 360.0) < 1e-9;
  const fs::path out(c.out);
  fs::create_directories(out);
  std::vector<std::string> files;
  for (int i = 0; i < c.render_n; ++i) {
    const double t = c.render_n == 1 ? 0.0 : wraps ? double(i) / c.render_n : double(i) / (c.render_n - 1);
    const Camera<double> cam = rig_camera(info, c.azimuth_start + t * span);
    const auto src = nearest_views(info, cam, mc.sources);
    SceneFrame sf;
    sf.joints = data.load_joints(c.render_frame);
    sf.views.resize(data.cameras());
    for (int s : src) sf.views[s] = data.load_view(c.render_frame, s);
    // The target slot is only a placeholder; the render uses `cam`.
    TrainSample<float> sample = make_sample<float>(sf, info, src[0], src);
    TPSBank<float> tps = TPSBank<float>::make(mc);
    Tape<float> tape;
    auto r = forward(tape, *model, sample.sources, cam.cast<float>(), sample.background, tps);
    char name[32];
    std::snprintf(name, sizeof name, "render_%03d.png", i);
    write_png((out / name).string(), r.render.rgb.value());
    files.push_back((out / name).string());
  }
  return files;
}

// ---------------------------------------------------------------- eval

namespace {

void write_eval(const fs::path& out, const EvalResult& r) {
  std::ofstream rows = open_out(out / "eval.csv");
  rows << "frame,view,psnr,ssim,epe,pct_1px\n";
  for (const auto& row : r.rows)
    rows << row.frame << ',' << row.view << ',' << fmt(row.psnr) << ',' << fmt(row.ssim) << ',' << fmt(row.epe)
         << ',' << fmt(row.pct_1px) << '\n';
  std::ofstream sum = open_out(out / "eval_summary.csv");
  sum << "view,psnr,ssim,mu_dssim,sigma_dssim,epe,pct_1px\n";
  auto line = [&](const std::string& v, const MetricReport& m) {
    sum << v << ',' << fmt(m.psnr) << ',' << fmt(m.ssim) << ',' << fmt(m.mu_dssim) << ',' << fmt(m.sigma_dssim)
        << ',' << fmt(m.epe) << ',' << fmt(m.pct_1px) << '\n';
  };
  for (std::size_t i = 0; i < r.views.size(); ++i) line(std::to_string(r.views[i]), r.per_view[i]);
  line("all", r.overall);
}

EvalOptions eval_options(const RunConfig& c) {
  EvalOptions o;
  o.views = c.eval_views;
  o.first_frame = c.eval_first_frame;
  o.frames = c.eval_frames;
  o.jitter_px = c.eval_jitter_px;
  o.jitter_seed = c.eval_jitter_seed;
  if (c.tps_off) o.omega = 1.0;
  return o;
}

}  // namespace

EvalResult cmd_eval(const RunConfig& c, const std::string& checkpoint) {
  if (checkpoint.empty()) throw std::invalid_argument("eval: a checkpoint is required");
  auto model = load_model(checkpoint);
  DatasetReader data(c.data);
  EvalResult r = evaluate(*model, data, eval_options(c));
  write_eval(c.out, r);
  return r;
}

// ---------------------------------------------------------------- bench

std::vector<BenchRow> cmd_bench(const RunConfig& c, const std::string& checkpoint) {
  GaussianCloud<float> cloud;
  Camera<float> cam;
  if (checkpoint.empty()) {
    Rng rng(mix_seed(c.model.seed, "bench"));
    cloud = random_cloud<float>(c.bench_gaussians, rng, Vec3<float>(0, 0, 4), 1.0f, 0.01f, 0.05f);
    cam.intrinsics = intrinsics_from_fov<float>(c.bench_resolution, c.bench_resolution, 45.0f);
  } else {
    auto model = load_model(checkpoint);
    const ModelConfig& mc = model->config();
    DatasetReader data(c.data);
    const SceneFrame sf = data.load_frame(0);
    const auto src = source_views(data.cameras(), 0, mc.sources);
    TrainSample<float> sample = make_sample<float>(sf, data.info(), 0, src);
    TPSBank<float> tps = TPSBank<float>::make(mc);
    Tape<float> tape;
    auto r = forward(tape, *model, sample.sources, sample.target, sample.background, tps);
    const Tensor3<float>& packed = r.cloud.value();
    cloud.params = Eigen::Map<const typename GaussianCloud<float>::Matrix>(packed.ptr(), packed.height(),
                                                                          cloud_layout::kFloats);
    cam = sample.target;
    const double s = double(c.bench_resolution) / cam.intrinsics.width;
    cam.intrinsics.fx *= float(s), cam.intrinsics.fy *= float(s), cam.intrinsics.cx *= float(s),
        cam.intrinsics.cy *= float(s);
    cam.intrinsics.width = cam.intrinsics.height = c.bench_resolution;
  }
  const int saved = num_threads();
  std::vector<BenchRow> rows;
  for (int t : c.bench_threads) {
    set_num_threads(t);
    const BenchStats s = bench_rasterize(cloud, cam, c.bench_frames);
    rows.push_back({cloud.size(), cam.intrinsics.width, cam.intrinsics.height, t, s.mean_ms, s.p95_ms});
  }
  set_num_threads(saved);
  std::ofstream os = open_out(fs::path(c.out) / "bench.csv");
  os << "n_gaussians,width,height,threads,ms_per_frame_mean,ms_per_frame_p95\n";
  for (const auto& r : rows)
    os << r.n_gaussians << ',' << r.width << ',' << r.height << ',' << r.threads << ',' << fmt(r.mean_ms) << ','
       << fmt(r.p95_ms) << '\n';
  return rows;
}

// ---------------------------------------------------------------- ablate

std::vector<std::pair<std::string, ModelConfig>> ablation_arms(const ModelConfig& base, const std::string& kind) {
  std::vector<std::pair<std::string, ModelConfig>> arms;
  if (kind == "fusion") {
    for (FusionStrategy s : all_fusion_strategies()) {
      ModelConfig m = base;
      m.fusion = s;
      m.pose_in_depth = true;
      arms.emplace_back(to_string(s), m);
    }
  } else if (kind == "loss") {
    const double rows[6][3] = {{0.5, 0.5, 0.0}, {0.3, 0.7, 0.0}, {0.8, 0.2, 0.0},
                               {0.5, 0.5, 0.1}, {0.5, 0.5, 0.5}, {0.5, 0.5, 1.0}};
    for (const auto& r : rows) {
      ModelConfig m = base;
      m.loss.beta = r[0];
      m.loss.gamma = r[1];
      m.loss.lambda = r[2];
      arms.emplace_back("beta=" + fmt(r[0]) + " gamma=" + fmt(r[1]) + " lambda=" + fmt(r[2]), m);
    }
  } else if (kind == "pose") {
    const std::tuple<const char*, bool, bool> rows[4] = {
        {"depth+skips", true, true}, {"depth_only", true, false}, {"skips_only", false, true}, {"none", false, false}};
    for (const auto& [name, depth, skips] : rows) {
      ModelConfig m = base;
      m.pose_in_depth = depth;
      m.pose_in_skips = skips;
      if (!depth && !skips) m.loss.lambda = 0;
      arms.emplace_back(name, m);
    }
  } else {
    throw std::invalid_argument("ablate: unknown kind '" + kind + "' (fusion, loss, pose)");
  }
  return arms;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& c, const std::string& kind) {
  const auto arms = ablation_arms(c.model, kind);
  DatasetReader data(c.data);
  std::vector<AblationRow> rows;
  for (const auto& [name, mc] : arms) {
    Model<float> model(mc);
    AblationRow row{name, mc, std::size_t(model.store().total_size())};
    if (c.ablate_protocol == "probe") {
      if (c.probe_frame < 0 || c.probe_frame >= data.frames())
        throw std::invalid_argument("ablate: probe_frame is not in the dataset");
      if (c.eval_views.empty()) throw std::invalid_argument("ablate: eval_views is empty");
      GeneratedDataset one{data.info(), {data.load_frame(c.probe_frame)}};
      ProbeOptions po;
      po.steps = c.ablate_steps;
      po.log_every = std::max(1, c.ablate_steps);
      po.target = c.eval_views.front();
      const ProbeResult p = overfit_probe(model, one, po);
      row.psnr = p.final_psnr;
      row.ssim = p.final_ssim;
      row.epe = p.final_epe;
      row.pct_1px = p.final_pct_1px;
    } else {
      RunConfig rc = c;
      rc.model = mc;
      const TrainRange range = train_range(rc, data);
      TrainState<float> state = TrainState<float>::init(model.store(), mc.seed);
      AdamConfig adam;
      adam.lr = mc.learning_rate;
      while (state.step < std::uint64_t(c.ablate_steps)) train_one(model, state, rc, data, range, adam);
      const EvalResult e = evaluate(model, data, eval_options(rc));
      row.psnr = e.overall.psnr;
      row.ssim = e.overall.ssim;
      row.epe = e.overall.epe;
      row.pct_1px = e.overall.pct_1px;
    }
    log_info("ablate " + kind + " [" + name + "] psnr " + fmt(row.psnr) + " ssim " + fmt(row.ssim) + " epe " +
             fmt(row.epe));
    rows.push_back(std::move(row));
  }
  std::ofstream os = open_out(fs::path(c.out) / ("ablate_" + kind + ".csv"));
  os << "arm,fusion,beta,gamma,lambda,pose_in_depth,pose_in_skips,params,psnr,ssim,epe,pct_1px\n";
  for (const auto& r : rows)
    os << r.arm << ',' << to_string(r.config.fusion) << ',' << fmt(r.config.loss.beta) << ','
       << fmt(r.config.loss.gamma) << ',' << fmt(r.config.loss.lambda) << ',' << int(r.config.pose_in_depth) << ','
       << int(r.config.pose_in_skips) << ',' << r.params << ',' << fmt(r.psnr) << ',' << fmt(r.ssim) << ','
       << fmt(r.epe) << ',' << fmt(r.pct_1px) << '\n';
  return rows;
}

}  // namespace pg::cli
