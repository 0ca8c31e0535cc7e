#include "doctest.h"

#include "posegauss/cli.hpp"
#include "posegauss/log.hpp"
#include "posegauss/parallel.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <unistd.h>
#include <sstream>

using namespace pg;
using namespace pg::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("posegauss_cli_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  return {std::istreambuf_iterator<char>(is), {}};
}

int count_lines(const fs::path& p) {
  const std::string s = slurp(p);
  return int(std::count(s.begin(), s.end(), '\n'));
}

RunConfig micro(const fs::path& root) {
  RunConfig c;
  c.model.resolution = 32;
  c.model.image_channels = 8;
  c.model.iterations = 2;
  c.model.lookup_radius = 2;
  c.model.gru_hidden = 4;
  c.model.gru_context = 3;
  c.model.seed = 4;
  c.data = (root / "data").string();
  c.out = (root / "run").string();
  c.gen_cameras = 16;
  c.gen_frames = 5;
  c.steps = 4;
  c.log_every = 100;
  c.eval_views = {0, 3};
  c.bench_gaussians = 500;
  c.bench_resolution = 48;
  c.bench_frames = 3;
  c.ablate_steps = 1;
  return c;
}

// One shared micro dataset for the read-only commands.
const fs::path& shared_root() {
  static const fs::path root = [] {
    set_log_quiet(true);
    fs::path r = scratch("shared");
    cmd_gen(micro(r));
    cmd_train(micro(r));
    return r;
  }();
  return root;
}

int run_binary(const std::string& args, std::string* output = nullptr) {
  const fs::path log = fs::temp_directory_path() / ("posegauss_cli_out_" + std::to_string(::getpid()));
  const std::string cmd = std::string(POSEGAUSS_BIN) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = slurp(log);
  fs::remove(log);
  return status;
}

}  // namespace

TEST_CASE("run config: JSON roundtrip, unknown keys and bad values are rejected") {
  RunConfig c = micro("/tmp");
  c.train_views = {1, 2};
  c.bench_threads = {3};
  const RunConfig back = run_config_from_json(run_config_to_json(c));
  CHECK(run_config_to_json(back) == run_config_to_json(c));
  CHECK_THROWS_WITH_AS(run_config_from_json(nlohmann::json{{"stepz", 3}}), doctest::Contains("stepz"),
                       std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"steps", "many"}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"gen_speed", "warp"}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"gen_cameras", 2}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"ablate_protocol", "vibes"}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"pose_channels", 4}}), std::invalid_argument);
}

TEST_CASE("every config key is documented with its default") {
  const auto docs = run_config_docs();
  const nlohmann::json defaults = run_config_to_json(RunConfig{});
  CHECK(docs.size() == defaults.size());
  for (const auto& d : docs) {
    REQUIRE(defaults.contains(d.key));
    CHECK(d.default_value == defaults.at(d.key).dump());
    CHECK(!d.description.empty());
  }
}

TEST_CASE("--help enumerates every key with its default") {
  std::string out;
  REQUIRE(run_binary("--help", &out) == 0);
  for (const auto& d : run_config_docs()) {
    INFO(d.key);
    CHECK(out.find("  " + d.key + " = " + d.default_value) != std::string::npos);
  }
}

TEST_CASE("exit status is nonzero on rejected preconditions") {
  const fs::path root = scratch("exit");
  std::ofstream(root / "bad.json") << R"({"resolutoin": 64})";
  std::string out;
  CHECK(run_binary("--config " + (root / "bad.json").string() + " gen", &out) != 0);
  CHECK(out.find("resolutoin") != std::string::npos);
  CHECK(run_binary("--data " + (root / "missing").string() + " --out " + root.string() + " train --steps 1") != 0);
  CHECK(run_binary("bench --sweep 0") != 0);
  CHECK(run_binary("ablate colour") != 0);
  CHECK(run_binary("--data " + (root / "missing").string() + " --out " + root.string() + " render --checkpoint " +
                   (root / "nope.bin").string(), &out) != 0);
  CHECK(out.find("nope.bin") != std::string::npos);
}

TEST_CASE("gen: defaults, speed preset and byte-identical repeats") {
  const RunConfig d;
  CHECK(d.gen_frames == 64);
  CHECK(d.gen_cameras == 3);
  CHECK(d.model.resolution == 128);

  const fs::path root = scratch("gen");
  RunConfig c = micro(root);
  c.gen_frames = 2;
  c.gen_cameras = 3;
  c.gen_speed = "fast";
  c.data = (root / "a").string();
  cmd_gen(c);
  c.data = (root / "b").string();
  cmd_gen(c);
  const DatasetReader a((root / "a").string());
  CHECK(a.info().speed == doctest::Approx(6.0));
  CHECK(a.frames() == 2);
  CHECK(a.cameras() == 3);
  int files = 0;
  for (const auto& e : fs::directory_iterator(root / "a")) {
    ++files;
    CHECK(slurp(e.path()) == slurp(root / "b" / e.path().filename()));
  }
  CHECK(files > 0);
  fs::remove_all(root);
}

TEST_CASE("train: step 0, determinism and resume") {
  set_log_quiet(true);
  const fs::path& shared = shared_root();
  const fs::path root = scratch("train");
  RunConfig c = micro(root);
  c.data = (shared / "data").string();

  SUBCASE("--steps 0 writes the initial checkpoint only") {
    c.steps = 0;
    const auto r = cmd_train(c);
    CHECK(r.losses.empty());
    CHECK(read_checkpoint(c.out + "/checkpoint.bin").step == 0);
    CHECK(count_lines(fs::path(c.out) / "train_log.csv") == 1);
    Model<float> fresh(c.model), loaded(c.model);
    load_checkpoint(c.out + "/checkpoint.bin", loaded);
    for (std::size_t i = 0; i < fresh.store().count(); ++i) CHECK(fresh.store().at(i).value == loaded.store().at(i).value);
  }

  SUBCASE("same seed twice gives identical logs and checkpoints") {
    c.out = (root / "again").string();
    cmd_train(c);
    CHECK(slurp(fs::path(c.out) / "train_log.csv") == slurp(shared / "run" / "train_log.csv"));
    CHECK(slurp(fs::path(c.out) / "checkpoint.bin") == slurp(shared / "run" / "checkpoint.bin"));
  }

  SUBCASE("resume continues the step counter and matches an uninterrupted run") {
    c.out = (root / "split").string();
    c.steps = 2;
    c.checkpoint_every = 1;
    cmd_train(c);
    CHECK(fs::exists(fs::path(c.out) / "checkpoint_1.bin"));
    c.steps = 4;
    const auto r = cmd_train(c, c.out + "/checkpoint.bin");
    CHECK(r.first_step == 2);
    CHECK(r.last_step == 4);
    CHECK(read_checkpoint(c.out + "/checkpoint.bin").step == 4);
    CHECK(slurp(fs::path(c.out) / "train_log.csv") == slurp(shared / "run" / "train_log.csv"));
    CHECK(slurp(fs::path(c.out) / "checkpoint.bin") == slurp(shared / "run" / "checkpoint.bin"));
  }

  SUBCASE("wall time lives in its own file") {
    const std::string log = slurp(shared / "run" / "train_log.csv");
    CHECK(log.rfind("step,render,depth,pose_fusion,total\n", 0) == 0);
    CHECK(slurp(shared / "run" / "train_time.csv").rfind("step,wall_ms\n", 0) == 0);
    CHECK(count_lines(shared / "run" / "train_log.csv") == 5);
  }
  fs::remove_all(root);
}

TEST_CASE("render: azimuth sweep, training camera, bad checkpoint") {
  set_log_quiet(true);
  const fs::path& shared = shared_root();
  const fs::path root = scratch("render");
  RunConfig c = micro(root);
  c.data = (shared / "data").string();
  const std::string ckpt = (shared / "run" / "checkpoint.bin").string();

  c.render_n = 8;
  const auto files = cmd_render(c, ckpt);
  CHECK(files.size() == 8);
  for (const auto& f : files) CHECK(fs::exists(f));

  // The rig camera at azimuth 360·k/n is camera k.
  const DatasetReader data(c.data);
  for (int k : {0, 5}) {
    const Camera<double> cam = rig_camera(data.info(), 360.0 * k / data.cameras());
    CHECK((cam.pose.center() - data.info().cameras[k].pose.center()).norm() < 1e-9);
    CHECK((cam.pose.rotation - data.info().cameras[k].pose.rotation).cwiseAbs().maxCoeff() < 1e-9);
  }

  // Rendering training camera 0 from its neighbours resembles its image.
  c.render_n = 1;
  c.azimuth_start = c.azimuth_end = 0;
  c.out = (root / "cam0").string();
  const auto one = cmd_render(c, ckpt);
  const Tensor3<float> img = read_png(one.front());
  const Tensor3<float> gt = data.load_view(0, 0).rgb;
  const std::uint64_t h = dhash(img);
  CHECK(hamming(h, dhash(gt)) <= 16);
  // Golden perceptual hash of this render (seeded micro run).
  CHECK(hamming(h, 0x1030386878303038ull) <= 4);

  CHECK_THROWS_WITH_AS(cmd_render(c, (root / "missing.bin").string()), doctest::Contains("missing.bin"),
                       std::exception);
  std::ofstream(root / "junk.bin") << "not a checkpoint";
  CHECK_THROWS(cmd_render(c, (root / "junk.bin").string()));
  fs::remove_all(root);
}

TEST_CASE("eval: row count, determinism and the TPS switch") {
  set_log_quiet(true);
  const fs::path& shared = shared_root();
  const fs::path root = scratch("eval");
  RunConfig c = micro(root);
  c.data = (shared / "data").string();
  const std::string ckpt = (shared / "run" / "checkpoint.bin").string();
  c.eval_jitter_px = 2;
  c.eval_jitter_seed = 9;

  const EvalResult on = cmd_eval(c, ckpt);
  CHECK(on.rows.size() == std::size_t(c.gen_frames) * c.eval_views.size());
  CHECK(count_lines(fs::path(c.out) / "eval.csv") == 1 + int(on.rows.size()));
  CHECK(count_lines(fs::path(c.out) / "eval_summary.csv") == 1 + int(c.eval_views.size()) + 1);
  const std::string first = slurp(fs::path(c.out) / "eval.csv");
  cmd_eval(c, ckpt);
  CHECK(slurp(fs::path(c.out) / "eval.csv") == first);

  c.tps_off = true;
  c.out = (root / "off").string();
  const EvalResult off = cmd_eval(c, ckpt);
  CHECK(off.rows.size() == on.rows.size());
  // Frame 0 has no history, so TPS cannot change it; later frames differ.
  CHECK(off.rows[0].psnr == on.rows[0].psnr);
  bool differs = false;
  for (std::size_t i = c.eval_views.size(); i < on.rows.size(); ++i) differs |= off.rows[i].psnr != on.rows[i].psnr;
  CHECK(differs);

  c.eval_views = {16};
  CHECK_THROWS_WITH_AS(cmd_eval(c, ckpt), doctest::Contains("16"), std::invalid_argument);
  fs::remove_all(root);
}

TEST_CASE("bench: thread sweep rows, stable cloud size, p95 >= mean") {
  set_log_quiet(true);
  const fs::path root = scratch("bench");
  RunConfig c = micro(root);
  const RunConfig d;
  CHECK(d.bench_gaussians == 16384);
  CHECK(d.bench_resolution == 256);
  CHECK(d.bench_threads == std::vector<int>{1, 2, 4, 8});
  c.bench_threads = {1, 2, 4, 8};
  const auto rows = cmd_bench(c);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].threads == c.bench_threads[i]);
    CHECK(rows[i].n_gaussians == c.bench_gaussians);
    CHECK(rows[i].width == c.bench_resolution);
    CHECK(rows[i].p95_ms >= rows[i].mean_ms);
  }
  const std::string csv = slurp(fs::path(c.out) / "bench.csv");
  CHECK(csv.rfind("n_gaussians,width,height,threads,ms_per_frame_mean,ms_per_frame_p95\n", 0) == 0);
  CHECK(count_lines(fs::path(c.out) / "bench.csv") == 5);

  c.data = (shared_root() / "data").string();
  const auto model_rows = cmd_bench(c, (shared_root() / "run" / "checkpoint.bin").string());
  CHECK(model_rows.front().n_gaussians > 0);
  fs::remove_all(root);
}

TEST_CASE("ablate: arm enumeration and CSV cardinality") {
  set_log_quiet(true);
  const ModelConfig base;
  const auto fusion = ablation_arms(base, "fusion");
  CHECK(fusion.size() == all_fusion_strategies().size());
  const auto loss = ablation_arms(base, "loss");
  REQUIRE(loss.size() == 6);
  const double table[6][3] = {{0.5, 0.5, 0.0}, {0.3, 0.7, 0.0}, {0.8, 0.2, 0.0},
                              {0.5, 0.5, 0.1}, {0.5, 0.5, 0.5}, {0.5, 0.5, 1.0}};
  for (int i = 0; i < 6; ++i) {
    CHECK(loss[i].second.loss.beta == table[i][0]);
    CHECK(loss[i].second.loss.gamma == table[i][1]);
    CHECK(loss[i].second.loss.lambda == table[i][2]);
  }
  const auto pose = ablation_arms(base, "pose");
  REQUIRE(pose.size() == 4);
  CHECK((pose[0].second.pose_in_depth && pose[0].second.pose_in_skips));
  CHECK((!pose[3].second.pose_in_depth && !pose[3].second.pose_in_skips));
  CHECK_THROWS_AS(ablation_arms(base, "colour"), std::invalid_argument);

  const fs::path root = scratch("ablate");
  RunConfig c = micro(root);
  c.data = (shared_root() / "data").string();
  const auto rows = cmd_ablate(c, "fusion");
  CHECK(rows.size() == fusion.size());
  std::set<std::size_t> sizes;
  for (const auto& r : rows) {
    CHECK(r.params > 0);
    CHECK(std::isfinite(r.epe));
    sizes.insert(r.params);
  }
  CHECK(sizes.size() > 1);
  CHECK(count_lines(fs::path(c.out) / "ablate_fusion.csv") == 1 + int(rows.size()));

  c.ablate_protocol = "train";
  c.eval_frames = 2;
  const auto trained = cmd_ablate(c, "loss");
  CHECK(trained.size() == 6);
  const std::string csv = slurp(fs::path(c.out) / "ablate_loss.csv");
  cmd_ablate(c, "loss");
  CHECK(slurp(fs::path(c.out) / "ablate_loss.csv") == csv);
  fs::remove_all(root);
}
