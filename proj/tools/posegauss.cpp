// Command-line front end: gen, train, render, eval, bench, ablate.

#include "posegauss/cli.hpp"
#include "posegauss/log.hpp"
#include "posegauss/parallel.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

using namespace pg;
using nlohmann::json;

namespace {

std::string key_table() {
  std::ostringstream os;
  os << "\nConfig keys (JSON file via --config; flags override them):\n";
  for (const auto& d : cli::run_config_docs()) {
    os << "  " << d.key << " = " << d.default_value;
    os << std::string(d.key.size() + d.default_value.size() < 34 ? 34 - d.key.size() - d.default_value.size() : 1,
                      ' ')
       << d.description << "\n";
  }
  os << "\nPOSEGAUSS_THREADS sets the default of --threads.\n";
  return os.str();
}

// "a..b" → (a, b)
std::pair<double, double> parse_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) throw std::invalid_argument("azimuth: expected START..END, got '" + s + "'");
  return {std::stod(s.substr(0, dots)), std::stod(s.substr(dots + 2))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-guided Gaussian splatting on synthetic multi-view captures"};
  app.require_subcommand(1);
  app.footer(key_table());

  std::string config_path;
  int threads = 0;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data, out;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--threads", threads, "worker threads (default: POSEGAUSS_THREADS or 1)");
  app.add_option("--seed", seed, "seed (overrides the config)");
  app.add_option("--data", data, "dataset directory");
  app.add_option("--out", out, "output directory");
  app.add_flag("--quiet", quiet, "no progress lines");

  // Flag overrides, applied on top of the config file after parsing.
  std::vector<std::function<void(json&)>> overrides;
  auto set_from = [&](CLI::App* cmd, const char* flag, const char* key, auto& holder, const char* help) {
    cmd->add_option(flag, holder, help);
    overrides.push_back([key, &holder](json& j) {
      if (holder) j[key] = *holder;
    });
  };

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::optional<int> frames, cameras, resolution;
  std::optional<std::string> speed;
  set_from(gen, "--frames", "gen_frames", frames, "frames in the clip");
  set_from(gen, "--cameras", "gen_cameras", cameras, "rig cameras");
  set_from(gen, "--resolution", "resolution", resolution, "image size");
  set_from(gen, "--speed", "gen_speed", speed, "slow|medium|fast");

  auto* train = app.add_subcommand("train", "train a model");
  std::optional<int> steps;
  std::string resume;
  set_from(train, "--steps", "steps", steps, "total steps");
  train->add_option("--resume", resume, "checkpoint to continue from");

  auto* render = app.add_subcommand("render", "render novel views from a checkpoint");
  std::string checkpoint;
  std::optional<int> n;
  std::string azimuth;
  render->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  set_from(render, "--n", "render_n", n, "number of views");
  render->add_option("--azimuth", azimuth, "azimuth range START..END in degrees");

  auto* eval = app.add_subcommand("eval", "metrics of a checkpoint on a dataset");
  std::vector<int> views;
  bool tps_off = false;
  std::optional<double> jitter;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--views", views, "target cameras");
  eval->add_flag("--tps-off", tps_off, "evaluate with omega = 1");
  set_from(eval, "--jitter", "eval_jitter_px", jitter, "2D joint noise (px)");

  auto* bench = app.add_subcommand("bench", "rasterizer timing sweep");
  std::optional<int> gaussians, bench_res;
  std::vector<int> sweep;
  bench->add_option("--checkpoint", checkpoint, "use the model's cloud instead of the synthetic one");
  set_from(bench, "--gaussians", "bench_gaussians", gaussians, "synthetic cloud size");
  set_from(bench, "--resolution", "bench_resolution", bench_res, "image size");
  bench->add_option("--sweep", sweep, "thread counts");

  auto* ablate = app.add_subcommand("ablate", "fusion, loss or pose ablation sweep");
  std::string kind;
  std::optional<int> ablate_steps;
  std::optional<std::string> protocol;
  ablate->add_option("kind", kind, "fusion|loss|pose")->required()->check(CLI::IsMember({"fusion", "loss", "pose"}));
  set_from(ablate, "--steps", "ablate_steps", ablate_steps, "steps per arm");
  set_from(ablate, "--protocol", "ablate_protocol", protocol, "probe|train");

  CLI11_PARSE(app, argc, argv);
  set_log_quiet(quiet);

  try {
    json j = json::object();
    if (!config_path.empty()) {
      std::ifstream is(config_path);
      if (!is) throw std::invalid_argument("cannot open config " + config_path);
      is >> j;
    }
    // Validate the file alone first so an unknown key names the file's key.
    cli::run_config_from_json(j);
    for (const auto& apply : overrides) apply(j);
    if (seed) j["seed"] = *seed;
    if (data) j["data"] = *data;
    if (out) j["out"] = *out;
    if (!views.empty()) j["eval_views"] = views;
    if (tps_off) j["tps_off"] = true;
    if (!sweep.empty()) j["bench_threads"] = sweep;
    if (!azimuth.empty()) {
      const auto [a, b] = parse_range(azimuth);
      j["azimuth_start"] = a;
      j["azimuth_end"] = b;
    }
    const cli::RunConfig config = cli::run_config_from_json(j);
    set_num_threads(cli::resolve_threads(threads));

    if (*gen) {
      cli::cmd_gen(config);
    } else if (*train) {
      const auto r = cli::cmd_train(config, resume);
      log_info("train: steps " + std::to_string(r.first_step) + " → " + std::to_string(r.last_step) + ", checkpoint " +
               config.out + "/checkpoint.bin");
    } else if (*render) {
      for (const auto& f : cli::cmd_render(config, checkpoint)) std::cout << f << "\n";
    } else if (*eval) {
      const auto r = cli::cmd_eval(config, checkpoint);
      std::printf("psnr %.4f ssim %.4f mu_dssim %.5f sigma_dssim %.5f epe %.4f pct_1px %.4f\n", r.overall.psnr,
                  r.overall.ssim, r.overall.mu_dssim, r.overall.sigma_dssim, r.overall.epe, r.overall.pct_1px);
    } else if (*bench) {
      for (const auto& r : cli::cmd_bench(config, checkpoint))
        std::printf("threads %d: %.3f ms/frame (p95 %.3f) for %d gaussians at %dx%d\n", r.threads, r.mean_ms,
                    r.p95_ms, r.n_gaussians, r.width, r.height);
    } else if (*ablate) {
      cli::cmd_ablate(config, kind);
      std::cout << config.out << "/ablate_" << kind << ".csv\n";
    }
  } catch (const NonFiniteError& e) {
    std::cerr << "error: " << e.what() << " (component: " << e.component << ")\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
