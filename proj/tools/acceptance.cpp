// Acceptance run: one PASS/FAIL line per criterion with the measured value
// and the pinned tolerance.

#include "posegauss/cli.hpp"
#include "posegauss/fusion.hpp"
#include "posegauss/log.hpp"
#include "posegauss/objectives.hpp"
#include "posegauss/parallel.hpp"
#include "posegauss/posekit.hpp"
#include "posegauss/splatter.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

using namespace pg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Tensor3<double> random_tensor(int h, int w, int c, Rng& rng, double lo = -1, double hi = 1) {
  Tensor3<double> t(h, w, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// ---------------------------------------------------------------- 1

Verdict gradient_suite(const fs::path& out) {
  const std::vector<std::string> suites = {"test_tensorcore", "test_geometry",  "test_fusion",
                                           "test_depthsolver", "test_gaussmaps", "test_splatter",
                                           "test_objectives",  "test_pipeline"};
  const auto t0 = Clock::now();
  std::vector<std::string> failed;
  for (const auto& s : suites) {
    const fs::path log = out / (s + ".log");
    const std::string cmd = "POSEGAUSS_THREADS=4 " + (fs::path(POSEGAUSS_TEST_DIR) / s).string() + " > " +
                            log.string() + " 2>&1";
    if (std::system(cmd.c_str()) != 0) failed.push_back(s);
  }
  const double secs = seconds_since(t0);
  std::string detail = fmt("%zu suites, FD rel err < 1e-4 (layers < 1e-5) at 64-bit, %.1f s (limit 300 s)",
                           suites.size(), secs);
  for (const auto& f : failed) detail += ", FAILED " + f;
  return {failed.empty() && secs < 300, detail};
}

// ---------------------------------------------------------------- 2

Verdict rasterizer_oracle() {
  Camera<double> cam;
  cam.intrinsics = intrinsics_from_fov<double>(64, 64, 50.0);
  cam.pose = look_at<double>({0.3, -0.2, -3.0}, {0, 0, 0}, {0, -1, 0});
  double worst = 0, conservation = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(mix_seed(20, std::to_string(trial)));
    const int n = 1 + int(rng.index(256));
    auto cloud = random_cloud<double>(n, rng, Vec3<double>::Zero(), 1.5, 0.01, 0.3);
    const Vec3<double> bg(rng.uniform(), rng.uniform(), rng.uniform());
    RasterConfig cfg;
    cfg.tile = trial % 2 ? 16 : 8;
    const auto a = rasterize(cloud, cam, bg, cfg);
    const auto b = rasterize_reference(cloud, cam, bg, cfg);
    worst = std::max({worst, (a.rgb.data() - b.rgb.data()).cwiseAbs().maxCoeff(),
                      (a.alpha.data() - b.alpha.data()).cwiseAbs().maxCoeff()});
    // A unit-colour cloud on black composites to Σ α_i T_i = 1 − T_final.
    GaussianCloud<double> white = cloud;
    white.params.middleCols(cloud_layout::kRgb, 3).setOnes();
    const auto w = rasterize(white, cam, Vec3<double>(0, 0, 0), cfg);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) conservation = std::max(conservation, std::abs(w.rgb(y, x, 0) - a.alpha(y, x, 0)));
  }
  return {worst <= 1e-5 && conservation <= 1e-9,
          fmt("100 scenes at 64x64: max |tiled - reference| %.3g (limit 1e-5), |alpha + T - 1| %.3g (limit 1e-9)",
              worst, conservation)};
}

// ---------------------------------------------------------------- 3

Verdict correlation_oracle() {
  Rng rng(30);
  double worst = 0;
  int shapes = 0;
  for (int h : {1, 7, 16})
    for (int w : {1, 9, 16})
      for (int d : {1, 13, 32})
        for (int ns = 1; ns <= 3; ++ns) {
          const auto t = random_tensor(h, w, d, rng);
          std::vector<Tensor3<double>> srcs;
          for (int s = 0; s < ns; ++s) srcs.push_back(random_tensor(h, w, d, rng));
          Tape<double> tape;
          std::vector<Var<double>> vs;
          for (const auto& s : srcs) vs.push_back(tape.constant(s));
          const Tensor3<double>& fast = correlation_volume(tape.constant(t), vs).value();
          for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
              for (int k = 0; k < w; ++k) {
                double acc = 0;
                for (const auto& s : srcs)
                  for (int c = 0; c < d; ++c) acc += t(i, j, c) * s(i, k, c);
                worst = std::max(worst, std::abs(fast(i, j, k) - acc / std::sqrt(double(d))));
              }
          ++shapes;
        }
  return {worst <= 1e-10, fmt("%d shapes up to 16x16x32, 1-3 sources: max abs err %.3g (limit 1e-10)", shapes, worst)};
}

// ---------------------------------------------------------------- 4

Verdict tps_algebra() {
  Rng rng(40);
  // Dyadic values keep every blend at dyadic ω exact.
  auto dyadic = [&] {
    Tensor3<double> t(6, 5, 15);
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = double(rng.index(1025)) / 1024.0;
    return t;
  };
  int failures = 0, checks = 0;
  auto expect = [&](bool ok) {
    ++checks;
    failures += !ok;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = dyadic(), b = dyadic();
    auto one = tps_reset(1.0);
    one.step(a);
    expect(one.step(b).data() == b.data());
    auto zero = tps_reset(0.0);
    zero.step(a);
    expect(zero.step(b).data() == a.data());

    const double omega = rng.uniform();
    auto s = tps_reset(omega);
    Tensor3<double> prev = random_tensor(6, 5, 15, rng, 0, 1);
    s.step(prev);
    for (int k = 0; k < 4; ++k) {
      const auto cur = random_tensor(6, 5, 15, rng, 0, 1);
      const auto out = s.step(cur);
      bool inside = true;
      for (Eigen::Index i = 0; i < out.size(); ++i)
        inside &= out[i] >= std::min(cur[i], prev[i]) && out[i] <= std::max(cur[i], prev[i]);
      expect(inside);
      prev = out;
    }
    const auto c = random_tensor(6, 5, 15, rng, 0, 1);
    auto fixed = tps_reset(omega);
    for (int k = 0; k < 3; ++k) expect(fixed.step(c).data() == c.data());

    for (double w : {0.25, 0.5, 0.75}) {
      auto g = tps_reset(w);
      g.step(a);
      for (int n = 1; n <= 6; ++n) {
        Tensor3<double> closed = Tensor3<double>::zeros_like(b);
        closed.data() = b.data() + std::pow(1 - w, n) * (a.data() - b.data());
        expect(g.step(b).data() == closed.data());
      }
    }
  }
  return {failures == 0, fmt("%d exact identities (endpoints, convexity, fixed point, geometric memory): %d failed",
                             checks, failures)};
}

// ---------------------------------------------------------------- 5

double ssim_direct(const Tensor3<double>& a, const Tensor3<double>& b) {
  auto luma = [](const Tensor3<double>& t, int y, int x) {
    return 0.299 * t(y, x, 0) + 0.587 * t(y, x, 1) + 0.114 * t(y, x, 2);
  };
  double w[11], total = 0;
  for (int i = 0; i < 11; ++i) total += (w[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5));
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0;
  int count = 0;
  for (int y0 = 0; y0 + 11 <= a.height(); ++y0)
    for (int x0 = 0; x0 + 11 <= a.width(); ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int u = 0; u < 11; ++u)
        for (int v = 0; v < 11; ++v) {
          const double k = w[u] * w[v] / (total * total);
          const double pa = luma(a, y0 + u, x0 + v), pb = luma(b, y0 + u, x0 + v);
          ma += k * pa, mb += k * pb;
          saa += k * pa * pa, sbb += k * pb * pb, sab += k * pa * pb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cab = sab - ma * mb;
      sum += (2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return sum / count;
}

Verdict metric_fidelity() {
  Rng rng(50);
  double self = 1, asym = 0, ref = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = random_tensor(24, 27, 3, rng, 0, 1);
    auto b = random_tensor(24, 27, 3, rng, 0, 1);
    b.data() = 0.6 * a.data() + 0.4 * b.data();
    self = std::min(self, ssim(a, a));
    asym = std::max(asym, std::abs(ssim(a, b) - ssim(b, a)));
    ref = std::max(ref, std::abs(ssim(a, b) - ssim_direct(a, b)));
  }
  const double p = psnr(Tensor3<double>::constant(16, 16, 3, 0.5), Tensor3<double>::constant(16, 16, 3, 0.6));
  const bool ok = self == 1.0 && asym <= 1e-12 && ref <= 1e-10 && std::abs(p - 20.0) <= 1e-12;
  return {ok, fmt("SSIM(x,x) %.17g, |SSIM(a,b)-SSIM(b,a)| %.3g (limit 1e-12), |SSIM - direct| %.3g (limit 1e-10), "
                  "PSNR(0.1 error) %.15g dB",
                  self, asym, ref, p)};
}

// ---------------------------------------------------------------- 6

struct ProbeOutcome {
  Verdict verdict;
  std::unique_ptr<Model<float>> model;
};

ProbeOutcome overfit(const GeneratedDataset& data, int steps, const fs::path& out) {
  ModelConfig mc;
  auto model = std::make_unique<Model<float>>(mc);
  ProbeOptions po;
  po.steps = steps;
  po.log_every = 50;
  std::ofstream log(out / "probe.csv");
  log << "step,psnr,ssim,total_loss\n";
  po.on_log = [&](const ProbePoint& p, const LossReport& l) {
    log << p.step << ',' << p.psnr << ',' << p.ssim << ',' << l.total << '\n';
    log_info(fmt("probe step %d: psnr %.2f ssim %.4f", p.step, p.psnr, p.ssim));
  };
  const auto t0 = Clock::now();
  const ProbeResult r = overfit_probe(*model, data, po);
  const double minutes = seconds_since(t0) / 60;
  const bool ok = steps <= 2000 && r.final_psnr >= 28.0 && r.final_ssim >= 0.90 && minutes <= 30 &&
                  r.mean_depth_error_last < r.mean_depth_error_first;
  return {{ok, fmt("128^2, S=2, J=15, T=8, %d steps: PSNR %.2f dB (>= 28), SSIM %.4f (>= 0.90), %.1f min on %d "
                   "thread(s) (<= 30), depth err d_T %.4f < d_1 %.4f",
                   steps, r.final_psnr, r.final_ssim, minutes, num_threads(), r.mean_depth_error_last,
                   r.mean_depth_error_first)},
          std::move(model)};
}

// ---------------------------------------------------------------- 7

Verdict temporal(const Model<float>& model, const fs::path& dir, int seeds) {
  RigConfig rig;
  write_dataset(generate_dataset(rig, 16, speed_preset("fast"), 7), dir.string());
  const DatasetReader data(dir.string());
  int wins = 0;
  std::ofstream csv(dir / "temporal.csv");
  csv << "seed,mu_dssim_omega_0.8,mu_dssim_omega_1.0\n";
  for (int seed = 0; seed < seeds; ++seed) {
    EvalOptions o;
    o.views = {0};
    o.jitter_px = 2.0;
    o.jitter_seed = std::uint64_t(seed);
    o.omega = 0.8;
    const double smooth = evaluate(model, data, o).overall.mu_dssim;
    o.omega = 1.0;
    const double raw = evaluate(model, data, o).overall.mu_dssim;
    csv << seed << ',' << fmt("%.9g", smooth) << ',' << fmt("%.9g", raw) << '\n';
    wins += smooth < raw;
  }
  const int need = (9 * seeds + 9) / 10;
  return {wins >= need, fmt("16-frame fast clip, jitter 2 px: mu(dSSIM) at omega 0.8 < omega 1.0 in %d/%d seeds "
                            "(need %d)",
                            wins, seeds, need)};
}

// ---------------------------------------------------------------- 8

Verdict loss_sweep(const fs::path& data_dir, const fs::path& out, int steps) {
  cli::RunConfig rc;
  rc.data = data_dir.string();
  rc.out = out.string();
  rc.ablate_protocol = "probe";
  rc.ablate_steps = steps;
  rc.eval_views = {0};
  const auto rows = cli::cmd_ablate(rc, "loss");
  bool finite = rows.size() == 6;
  for (const auto& r : rows) finite &= std::isfinite(r.psnr) && std::isfinite(r.ssim) && std::isfinite(r.epe);
  // Rows 0 and 3..5 share β = γ = 0.5; row 0 has λ = 0.
  double best = -1;
  std::size_t best_row = 0;
  for (std::size_t i = 3; i < rows.size(); ++i)
    if (rows[i].ssim > best) best = rows[i].ssim, best_row = i;
  const bool ok = finite && best >= rows.at(0).ssim;
  return {ok, fmt("%zu rows with PSNR/SSIM/EPE, %d probe steps each: best lambda (%.1f) SSIM %.4f >= lambda=0 SSIM "
                  "%.4f",
                  rows.size(), steps, rows.at(best_row).config.loss.lambda, best, rows.at(0).ssim)};
}

// ---------------------------------------------------------------- 9

// Runs every command into `root`; returns files that must match byte for byte.
void command_sweep(const fs::path& root) {
  cli::RunConfig c;
  c.model.resolution = 32;
  c.model.image_channels = 8;
  c.model.iterations = 2;
  c.model.lookup_radius = 2;
  c.model.gru_hidden = 4;
  c.model.gru_context = 3;
  c.model.seed = 9;
  c.data = (root / "data").string();
  c.out = (root / "run").string();
  c.gen_cameras = 16;
  c.gen_frames = 5;
  c.gen_speed = "fast";
  c.steps = 4;
  c.checkpoint_every = 2;
  c.train_jitter_px = 1;
  c.eval_views = {0, 5};
  c.eval_jitter_px = 2;
  c.render_n = 3;
  c.ablate_steps = 2;
  c.bench_gaussians = 300;
  c.bench_resolution = 48;
  c.bench_frames = 2;
  c.bench_threads = {1, 2};
  cli::cmd_gen(c);
  cli::cmd_train(c);
  const std::string ckpt = c.out + "/checkpoint.bin";
  cli::cmd_eval(c, ckpt);
  cli::cmd_render(c, ckpt);
  cli::cmd_ablate(c, "pose");
  cli::cmd_bench(c);
}

// bench.csv timing columns and train_time.csv are wall-clock measurements.
std::string comparable(const fs::path& p) {
  const std::string name = p.filename().string();
  if (name == "train_time.csv") return "";
  std::string s = slurp(p);
  if (name != "bench.csv") return s;
  std::istringstream is(s);
  std::string line, kept;
  while (std::getline(is, line)) {
    int commas = 0;
    std::size_t cut = line.size();
    for (std::size_t i = 0; i < line.size(); ++i)
      if (line[i] == ',' && ++commas == 4) cut = i;
    kept += line.substr(0, cut) + '\n';
  }
  return kept;
}

Verdict determinism(const fs::path& out) {
  for (const char* run : {"a", "b"}) command_sweep(out / run);
  int files = 0;
  std::vector<std::string> differ;
  for (const auto& e : fs::recursive_directory_iterator(out / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), out / "a");
    ++files;
    if (!fs::exists(out / "b" / rel) || comparable(e.path()) != comparable(out / "b" / rel))
      differ.push_back(rel.string());
  }
  std::string detail = fmt("gen/train/eval/render/ablate/bench twice at %d thread(s): %d files compared "
                           "(bench timing columns and train_time.csv excluded), %zu differ",
                           num_threads(), files, differ.size());
  for (const auto& d : differ) detail += " " + d;
  return {differ.empty() && files > 0, detail};
}

// ---------------------------------------------------------------- 10

Verdict bench_gate(const fs::path& out, const fs::path& baseline_path) {
  cli::RunConfig c;
  c.out = out.string();
  c.bench_threads = {8};
  const auto rows = cli::cmd_bench(c);
  std::ifstream is(baseline_path);
  if (!is) return {false, "missing baseline " + baseline_path.string()};
  std::string line;
  std::getline(is, line);
  double base = -1;
  while (std::getline(is, line)) {
    int n, w, h, t;
    double mean, p95;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%d,%lf,%lf", &n, &w, &h, &t, &mean, &p95) == 6 && n == 16384 &&
        w == 256 && h == 256 && t == 8)
      base = mean;
  }
  if (base <= 0) return {false, "baseline has no 16384 / 256x256 / 8-thread row"};
  const double now = rows.front().mean_ms;
  return {now <= 1.2 * base,
          fmt("16384 gaussians at 256^2, 8 threads: %.2f ms/frame vs baseline %.2f (limit %.2f, +20%%)", now, base,
              1.2 * base)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-10"};
  std::string out_dir = "acceptance_run";
  std::vector<int> only;
  int probe_steps = 300, sweep_steps = 100, seeds = 10, threads = 0;
  std::string baseline = std::string(POSEGAUSS_SOURCE_DIR) + "/tools/bench_baseline.csv";
  app.add_option("--out", out_dir, "scratch directory (wiped)");
  app.add_option("--only", only, "criteria to run (default: all)");
  app.add_option("--probe-steps", probe_steps, "overfit probe steps (criterion 6, at most 2000)");
  app.add_option("--sweep-steps", sweep_steps, "probe steps per loss-sweep row (criterion 8)");
  app.add_option("--seeds", seeds, "jitter repetitions (criterion 7)");
  app.add_option("--threads", threads, "worker threads (default: POSEGAUSS_THREADS or 1)");
  app.add_option("--baseline", baseline, "bench baseline CSV (criterion 10)");
  bool verbose = false;
  app.add_flag("--verbose", verbose, "progress lines from the commands");
  CLI11_PARSE(app, argc, argv);
  set_log_quiet(!verbose);
  set_num_threads(cli::resolve_threads(threads));

  const fs::path out = fs::absolute(out_dir);
  fs::remove_all(out);
  fs::create_directories(out);
  auto want = [&](int k) { return only.empty() || std::count(only.begin(), only.end(), k); };
  auto sub = [&](const std::string& name) {
    fs::create_directories(out / name);
    return out / name;
  };

  int failed = 0;
  auto report = [&](int k, const char* name, const std::function<Verdict()>& run) {
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("[%s] %2d %s: %s\n", v.pass ? "PASS" : "FAIL", k, name, v.detail.c_str());
    std::fflush(stdout);
  };

  if (want(1)) report(1, "gradient suite", [&] { return gradient_suite(sub("gradients")); });
  if (want(2)) report(2, "rasterizer oracle", rasterizer_oracle);
  if (want(3)) report(3, "correlation oracle", correlation_oracle);
  if (want(4)) report(4, "TPS algebra", tps_algebra);
  if (want(5)) report(5, "metric fidelity", metric_fidelity);

  std::unique_ptr<Model<float>> probe_model;
  if (want(6) || want(7) || want(8)) {
    RigConfig rig;
    const GeneratedDataset scene = generate_dataset(rig, 1, 1.0, 7);
    write_dataset(scene, sub("probe_data").string());
    // Criterion 7 evaluates the model trained by the probe.
    if (want(6)) {
      report(6, "overfit probe", [&] {
        ProbeOutcome p = overfit(scene, probe_steps, sub("probe"));
        probe_model = std::move(p.model);
        return p.verdict;
      });
    } else if (want(7)) {
      probe_model = overfit(scene, probe_steps, sub("probe")).model;
    }
    if (want(7))
      report(7, "temporal ablation", [&] {
        if (!probe_model) throw std::runtime_error("no trained model");
        return temporal(*probe_model, sub("temporal"), seeds);
      });
    if (want(8)) report(8, "loss-weight sweep", [&] { return loss_sweep(out / "probe_data", sub("sweep"), sweep_steps); });
  }
  if (want(9)) report(9, "determinism", [&] { return determinism(sub("determinism")); });
  if (want(10)) report(10, "bench regression gate", [&] { return bench_gate(sub("bench"), baseline); });

  std::printf("%s\n", failed ? "acceptance: FAILED" : "acceptance: all criteria passed");
  return failed ? 1 : 0;
}
