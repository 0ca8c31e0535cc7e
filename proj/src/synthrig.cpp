#include "posegauss/synthrig.hpp"

#include "posegauss/parallel.hpp"
#include "posegauss/rng.hpp"

#include "json.hpp"
#include <png.h>

#include <Eigen/Geometry>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace pg {

using json = nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "dataset depth files assume a little-endian host");

void SkeletonSpec::validate() const {
  const int j = size();
  if (j == 0) throw std::invalid_argument("skeleton: no joints");
  if (int(parents.size()) != j || int(offsets.size()) != j || int(radius.size()) != j || int(color.size()) != j)
    throw std::invalid_argument("skeleton: per-joint arrays differ in length");
  if (parents[0] != -1) throw std::invalid_argument("skeleton: joint 0 must be the root");
  for (int i = 1; i < j; ++i) {
    if (parents[i] < 0 || parents[i] >= i)
      throw std::invalid_argument("skeleton: joint '" + names[i] + "' must have an earlier parent");
    if (!(offsets[i].norm() > 0)) throw std::invalid_argument("skeleton: joint '" + names[i] + "' has a zero offset");
    if (!(radius[i] > 0)) throw std::invalid_argument("skeleton: bone '" + names[i] + "' needs a positive radius");
  }
}

SkeletonSpec default_skeleton() {
  SkeletonSpec s;
  auto add = [&](std::string name, int parent, Vec3<double> offset, double radius, Vec3<double> color) {
    s.names.push_back(std::move(name));
    s.parents.push_back(parent);
    s.offsets.push_back(offset);
    s.radius.push_back(radius);
    s.color.push_back(color);
  };
  add("pelvis", -1, {0, 0.95, 0}, 0.0, {0, 0, 0});
  add("neck", 0, {0, 0.55, 0}, 0.13, {0.85, 0.55, 0.35});
  add("head", 1, {0, 0.2, 0.02}, 0.1, {0.95, 0.8, 0.6});
  add("left_shoulder", 1, {0.19, -0.03, 0}, 0.06, {0.2, 0.45, 0.85});
  add("left_elbow", 3, {0, -0.28, 0}, 0.05, {0.25, 0.7, 0.9});
  add("left_wrist", 4, {0, -0.25, 0}, 0.045, {0.9, 0.75, 0.55});
  add("right_shoulder", 1, {-0.19, -0.03, 0}, 0.06, {0.85, 0.3, 0.25});
  add("right_elbow", 6, {0, -0.28, 0}, 0.05, {0.95, 0.55, 0.2});
  add("right_wrist", 7, {0, -0.25, 0}, 0.045, {0.9, 0.75, 0.55});
  add("left_hip", 0, {0.1, -0.05, 0}, 0.08, {0.3, 0.3, 0.6});
  add("left_knee", 9, {0, -0.42, 0}, 0.07, {0.2, 0.6, 0.35});
  add("left_ankle", 10, {0, -0.42, 0}, 0.055, {0.55, 0.85, 0.3});
  add("right_hip", 0, {-0.1, -0.05, 0}, 0.08, {0.6, 0.3, 0.3});
  add("right_knee", 12, {0, -0.42, 0}, 0.07, {0.6, 0.2, 0.55});
  add("right_ankle", 13, {0, -0.42, 0}, 0.055, {0.9, 0.4, 0.75});
  return s;
}

void MotionClip::validate(int joints) const {
  if (rotations.empty()) throw std::invalid_argument("motion: clip has no frames");
  if (!(fps > 0) || !(speed > 0)) throw std::invalid_argument("motion: fps and speed must be positive");
  for (const auto& frame : rotations) {
    if (int(frame.size()) != joints) throw std::invalid_argument("motion: joint count mismatch");
    for (const auto& r : frame)
      if (!r.allFinite()) throw std::invalid_argument("motion: non-finite rotation");
  }
}

double speed_preset(const std::string& name) {
  if (name == "slow") return 1.0;
  if (name == "medium") return 3.0;
  if (name == "fast") return 6.0;
  throw std::invalid_argument("unknown speed preset '" + name + "' (slow, medium, fast)");
}

namespace {

Mat3<double> rot(const Vec3<double>& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle == 0) return Mat3<double>::Identity();
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Vec3<double> to_axis_angle(const Mat3<double>& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

Mat3<double> rx(double a) { return Eigen::AngleAxisd(a, Vec3<double>::UnitX()).toRotationMatrix(); }
Mat3<double> ry(double a) { return Eigen::AngleAxisd(a, Vec3<double>::UnitY()).toRotationMatrix(); }
Mat3<double> rz(double a) { return Eigen::AngleAxisd(a, Vec3<double>::UnitZ()).toRotationMatrix(); }

int joint_index(const SkeletonSpec& s, const std::string& name) {
  for (int i = 0; i < s.size(); ++i)
    if (s.names[i] == name) return i;
  return -1;
}

}  // namespace

MotionClip make_motion(const SkeletonSpec& skeleton, int frames, double speed, std::uint64_t seed) {
  skeleton.validate();
  if (frames < 1) throw std::invalid_argument("motion: frames must be >= 1");
  if (!(speed > 0)) throw std::invalid_argument("motion: speed must be positive");
  Rng rng(mix_seed(seed, "motion"));
  auto jitter = [&](double v) { return v * rng.uniform(0.8, 1.2); };
  const double leg = jitter(0.45), knee = jitter(0.7), arm = jitter(0.5), elbow = jitter(0.6);
  const double nod = jitter(0.12), turn = jitter(0.6), abduct = jitter(0.3);
  const double phase_arm = rng.uniform(-0.3, 0.3), phase_knee = rng.uniform(-0.3, 0.3);
  const double yaw0 = rng.uniform(-M_PI, M_PI);

  const int pelvis = 0, neck = joint_index(skeleton, "neck");
  const int ls = joint_index(skeleton, "left_shoulder"), rs = joint_index(skeleton, "right_shoulder");
  const int le = joint_index(skeleton, "left_elbow"), re = joint_index(skeleton, "right_elbow");
  const int lh = joint_index(skeleton, "left_hip"), rh = joint_index(skeleton, "right_hip");
  const int lk = joint_index(skeleton, "left_knee"), rk = joint_index(skeleton, "right_knee");

  MotionClip clip;
  clip.speed = speed;
  clip.rotations.assign(frames, std::vector<Vec3<double>>(skeleton.size(), Vec3<double>::Zero()));
  for (int t = 0; t < frames; ++t) {
    // speed·t first: speed 2 at frame t and speed 1 at frame 2t give the same phase bit for bit.
    const double progress = speed * double(t);
    const double phi = 2 * M_PI * progress / kMotionPeriod;
    auto& r = clip.rotations[t];
    r[pelvis] = to_axis_angle(ry(yaw0 + turn * std::sin(phi / 4)));
    if (neck >= 0) r[neck] = to_axis_angle(rx(nod * std::sin(2 * phi)));
    // Rotations at a joint move its children: shoulders swing the upper
    // arm, elbows the forearm, hips the thigh, knees the shin.
    if (ls >= 0) r[ls] = to_axis_angle(rz(abduct) * rx(arm * std::sin(phi + phase_arm)));
    if (rs >= 0) r[rs] = to_axis_angle(rz(-abduct) * rx(-arm * std::sin(phi + phase_arm)));
    if (le >= 0) r[le] = to_axis_angle(rx(-elbow * (0.6 + 0.4 * std::sin(phi))));
    if (re >= 0) r[re] = to_axis_angle(rx(-elbow * (0.6 - 0.4 * std::sin(phi))));
    if (lh >= 0) r[lh] = to_axis_angle(rx(-leg * std::sin(phi)));
    if (rh >= 0) r[rh] = to_axis_angle(rx(leg * std::sin(phi)));
    if (lk >= 0) r[lk] = to_axis_angle(rx(knee * 0.5 * (1 - std::cos(phi + phase_knee))));
    if (rk >= 0) r[rk] = to_axis_angle(rx(knee * 0.5 * (1 + std::cos(phi + phase_knee))));
  }
  return clip;
}

JointSet<double> pose_joints(const SkeletonSpec& skeleton, const std::vector<Vec3<double>>& local) {
  const int j = skeleton.size();
  if (int(local.size()) != j) throw std::invalid_argument("pose_joints: rotation count mismatch");
  std::vector<Mat3<double>> global(j);
  std::vector<Vec3<double>> pos(j);
  for (int i = 0; i < j; ++i) {
    const int p = skeleton.parents[i];
    if (p < 0) {
      global[i] = rot(local[i]);
      pos[i] = skeleton.offsets[i];
    } else {
      global[i] = global[p] * rot(local[i]);
      pos[i] = pos[p] + global[p] * skeleton.offsets[i];
    }
  }
  return JointSet<double>::all_visible(std::move(pos));
}

JointSet<double> animate(const SkeletonSpec& skeleton, const MotionClip& clip, int frame) {
  if (frame < 0 || frame >= clip.frames())
    throw std::invalid_argument("animate: frame " + std::to_string(frame) + " outside clip of " +
                                std::to_string(clip.frames()));
  return pose_joints(skeleton, clip.rotations[frame]);
}

std::vector<Capsule> pose_capsules(const SkeletonSpec& skeleton, const JointSet<double>& joints) {
  std::vector<Capsule> out;
  for (int i = 0; i < skeleton.size(); ++i) {
    const int p = skeleton.parents[i];
    if (p < 0) continue;
    out.push_back({joints.positions[p], joints.positions[i], skeleton.radius[i], skeleton.color[i]});
  }
  return out;
}

namespace {

std::optional<double> ray_sphere(const Vec3<double>& o, const Vec3<double>& d, const Vec3<double>& c, double r) {
  const Vec3<double> oc = o - c;
  const double b = d.dot(oc);
  const double h = b * b - (oc.squaredNorm() - r * r);
  if (h < 0) return std::nullopt;
  const double t = -b - std::sqrt(h);
  if (t > 0) return t;
  return std::nullopt;
}

Vec3<double> closest_on_segment(const Vec3<double>& p, const Capsule& c) {
  const Vec3<double> ba = c.b - c.a;
  const double l2 = ba.squaredNorm();
  const double s = l2 > 0 ? std::clamp((p - c.a).dot(ba) / l2, 0.0, 1.0) : 0.0;
  return c.a + s * ba;
}

}  // namespace

std::optional<double> intersect_capsule(const Vec3<double>& o, const Vec3<double>& d, const Capsule& c) {
  // The capsule is the union of two end spheres and a finite cylinder, so
  // the first hit is the nearest first hit of the three parts.
  std::optional<double> best = ray_sphere(o, d, c.a, c.radius);
  auto take = [&](std::optional<double> t) {
    if (t && (!best || *t < *best)) best = t;
  };
  take(ray_sphere(o, d, c.b, c.radius));
  const Vec3<double> ba = c.b - c.a, oa = o - c.a;
  const double baba = ba.squaredNorm(), bard = ba.dot(d), baoa = ba.dot(oa);
  const double qa = baba - bard * bard;
  if (qa > 1e-12 * baba) {
    const double qb = baba * d.dot(oa) - baoa * bard;
    const double qc = baba * oa.squaredNorm() - baoa * baoa - c.radius * c.radius * baba;
    const double h = qb * qb - qa * qc;
    if (h >= 0) {
      const double t = (-qb - std::sqrt(h)) / qa;
      const double y = baoa + t * bard;
      if (t > 0 && y > 0 && y < baba) take(t);
    }
  }
  return best;
}

double capsule_distance(const Vec3<double>& p, const Capsule& c) {
  return (p - closest_on_segment(p, c)).norm() - c.radius;
}

std::vector<Camera<double>> build_rig(int n, double radius, double height, const Vec3<double>& target,
                                      const Intrinsics<double>& intrinsics) {
  if (n < 2) throw std::invalid_argument("build_rig: need at least 2 cameras, got " + std::to_string(n));
  if (!(radius > 0)) throw std::invalid_argument("build_rig: radius must be positive");
  intrinsics.validate();
  std::vector<Camera<double>> cams;
  for (int i = 0; i < n; ++i) {
    const double az = 2 * M_PI * i / n;
    const Vec3<double> eye(target.x() + radius * std::sin(az), height, target.z() + radius * std::cos(az));
    cams.push_back({intrinsics, look_at<double>(eye, target, Vec3<double>::UnitY())});
  }
  return cams;
}

ViewFrame render_gt(const std::vector<Capsule>& capsules, const JointSet<double>& joints,
                    const Camera<double>& camera, const Vec3<double>& background, const ShadingConfig& shading) {
  for (const auto& c : capsules)
    if (!(c.radius > 0)) throw std::invalid_argument("render_gt: capsule radii must be positive");
  const auto& k = camera.intrinsics;
  ViewFrame v;
  v.rgb = Tensor3<float>(k.height, k.width, 3);
  v.depth = Tensor3<float>(k.height, k.width, 1);
  v.mask = Tensor3<float>(k.height, k.width, 1);
  const Vec3<double> origin = camera.pose.center();
  parallel_for(k.height, [&](int y) {
    for (int x = 0; x < k.width; ++x) {
      const Vec3<double> ray_cam = pixel_ray<double>(Vec2<double>(x, y), k).normalized();
      const Vec3<double> dir = camera.pose.rotation.transpose() * ray_cam;
      double best = std::numeric_limits<double>::infinity();
      int hit = -1;
      for (int i = 0; i < int(capsules.size()); ++i) {
        const auto t = intersect_capsule(origin, dir, capsules[i]);
        if (t && *t < best) best = *t, hit = i;
      }
      if (hit < 0) {
        for (int c = 0; c < 3; ++c) v.rgb(y, x, c) = float(background[c]);
        continue;
      }
      const Vec3<double> p = origin + best * dir;
      const Vec3<double> n = (p - closest_on_segment(p, capsules[hit])).normalized();
      const double shade = shading.ambient + (1 - shading.ambient) * std::max(0.0, n.dot(shading.light));
      for (int c = 0; c < 3; ++c) v.rgb(y, x, c) = float(std::clamp(capsules[hit].color[c] * shade, 0.0, 1.0));
      const float z = float(best * ray_cam.z());
      v.depth(y, x, 0) = z;
      v.mask(y, x, 0) = z > 0 ? 1.0f : 0.0f;
    }
  });
  v.joints = project_joints(joints, camera);
  return v;
}

GeneratedDataset generate_dataset(const RigConfig& rig, int frames, double speed, std::uint64_t seed,
                                  const SkeletonSpec& skeleton) {
  skeleton.validate();
  const auto intr = intrinsics_from_fov<double>(rig.resolution, rig.resolution, rig.vfov_degrees);
  GeneratedDataset data;
  auto& info = data.info;
  info.format_version = kDatasetVersion;
  info.frames = frames;
  info.speed = speed;
  info.seed = seed;
  info.background = rig.background;
  info.cameras = build_rig(rig.cameras, rig.radius, rig.height, rig.target, intr);
  info.nominal_baseline = 2 * rig.radius * std::sin(M_PI / rig.cameras);
  info.joint_names = skeleton.names;
  info.parents = skeleton.parents;
  const MotionClip clip = make_motion(skeleton, frames, speed, seed);
  info.fps = clip.fps;

  data.frames.resize(frames);
  for (int f = 0; f < frames; ++f) {
    SceneFrame& frame = data.frames[f];
    frame.joints = animate(skeleton, clip, f);
    const auto caps = pose_capsules(skeleton, frame.joints);
    for (const auto& cam : info.cameras) frame.views.push_back(render_gt(caps, frame.joints, cam, rig.background));
  }
  return data;
}

// ---------------------------------------------------------------- files

void write_png(const std::string& path, const Tensor3<float>& image) {
  if (image.channels() != 1 && image.channels() != 3)
    throw std::invalid_argument("write_png: expected 1 or 3 channels for " + path);
  std::vector<unsigned char> bytes(std::size_t(image.size()));
  for (Eigen::Index i = 0; i < image.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0f, 1.0f) * 255.0f));
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = image.width();
  img.height = image.height();
  img.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw std::runtime_error("cannot write " + path + ": " + img.message);
}

Tensor3<float> read_png(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw std::runtime_error("cannot read " + path + ": " + img.message);
  const bool gray = !(img.format & PNG_FORMAT_FLAG_COLOR);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int channels = gray ? 1 : 3;
  std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr))
    throw std::runtime_error("cannot decode " + path + ": " + img.message);
  Tensor3<float> out(int(img.height), int(img.width), channels);
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = float(bytes[i]) / 255.0f;
  return out;
}

namespace {

std::string frame_name(const std::string& stem, int f, int c, const char* ext) {
  return stem + "_" + std::to_string(f) + "_" + std::to_string(c) + ext;
}

json camera_json(const Camera<double>& cam) {
  json j;
  const auto& k = cam.intrinsics;
  j["fx"] = k.fx, j["fy"] = k.fy, j["cx"] = k.cx, j["cy"] = k.cy;
  j["width"] = k.width, j["height"] = k.height;
  std::vector<double> r(9), t(3);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) r[a * 3 + b] = cam.pose.rotation(a, b);
    t[a] = cam.pose.translation[a];
  }
  j["rotation"] = r;
  j["translation"] = t;
  return j;
}

Camera<double> camera_from_json(const json& j) {
  Camera<double> cam;
  auto& k = cam.intrinsics;
  k.fx = j.at("fx"), k.fy = j.at("fy"), k.cx = j.at("cx"), k.cy = j.at("cy");
  k.width = j.at("width"), k.height = j.at("height");
  const auto r = j.at("rotation").get<std::vector<double>>();
  const auto t = j.at("translation").get<std::vector<double>>();
  if (r.size() != 9 || t.size() != 3) throw std::runtime_error("camera entry has wrong rotation/translation size");
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) cam.pose.rotation(a, b) = r[a * 3 + b];
    cam.pose.translation[a] = t[a];
  }
  cam.validate();
  return cam;
}

json joints2d_json(const Joints2D<double>& j2) {
  json v;
  std::vector<std::array<double, 2>> px;
  std::vector<int> vis;
  for (int i = 0; i < j2.size(); ++i) {
    px.push_back({j2.pixels[i].x(), j2.pixels[i].y()});
    vis.push_back(j2.visible[i] ? 1 : 0);
  }
  v["pixels"] = px;
  v["visible"] = vis;
  v["depth"] = j2.depth;
  return v;
}

Joints2D<double> joints2d_from_json(const json& v) {
  Joints2D<double> j2;
  for (const auto& p : v.at("pixels")) j2.pixels.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  for (const auto& b : v.at("visible")) j2.visible.push_back(b.get<int>() != 0);
  j2.depth = v.at("depth").get<std::vector<double>>();
  if (j2.visible.size() != j2.pixels.size() || j2.depth.size() != j2.pixels.size())
    throw std::runtime_error("joint arrays differ in length");
  return j2;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

void write_dataset(const GeneratedDataset& data, const std::string& dir) {
  fs::create_directories(dir);
  const auto& info = data.info;
  json m;
  m["format_version"] = info.format_version;
  m["frame_count"] = info.frames;
  m["fps"] = info.fps;
  m["speed"] = info.speed;
  m["seed"] = info.seed;
  m["nominal_baseline"] = info.nominal_baseline;
  m["background"] = std::vector<double>{info.background[0], info.background[1], info.background[2]};
  m["joint_names"] = info.joint_names;
  m["parents"] = info.parents;
  m["cameras"] = json::array();
  for (const auto& cam : info.cameras) m["cameras"].push_back(camera_json(cam));
  write_text(fs::path(dir) / "manifest.json", m.dump(2) + "\n");

  const int n_cams = int(info.cameras.size());
  parallel_for(int(data.frames.size()), [&](int f) {
    const SceneFrame& frame = data.frames[f];
    json jj;
    std::vector<std::array<double, 3>> j3;
    for (const auto& p : frame.joints.positions) j3.push_back({p.x(), p.y(), p.z()});
    jj["joints3d"] = j3;
    jj["views"] = json::array();
    for (int c = 0; c < n_cams; ++c) {
      const ViewFrame& v = frame.views[c];
      write_png((fs::path(dir) / frame_name("rgb", f, c, ".png")).string(), v.rgb);
      write_png((fs::path(dir) / frame_name("mask", f, c, ".png")).string(), v.mask);
      const fs::path dpath = fs::path(dir) / frame_name("depth", f, c, ".bin");
      std::ofstream out(dpath, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + dpath.string());
      out.write(reinterpret_cast<const char*>(v.depth.ptr()), std::streamsize(v.depth.size() * sizeof(float)));
      jj["views"].push_back(joints2d_json(v.joints));
    }
    write_text(fs::path(dir) / ("joints_" + std::to_string(f) + ".json"), jj.dump() + "\n");
  });
}

DatasetReader::DatasetReader(std::string dir) : dir_(std::move(dir)) {
  const fs::path mpath = fs::path(dir_) / "manifest.json";
  const json m = read_json(mpath);
  try {
    const int version = m.at("format_version");
    if (version != kDatasetVersion)
      throw std::runtime_error("format version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kDatasetVersion) + ")");
    info_.format_version = version;
    info_.frames = m.at("frame_count");
    info_.fps = m.at("fps");
    info_.speed = m.at("speed");
    info_.seed = m.at("seed");
    info_.nominal_baseline = m.at("nominal_baseline");
    const auto bg = m.at("background").get<std::vector<double>>();
    if (bg.size() != 3) throw std::runtime_error("background must have 3 entries");
    info_.background = {bg[0], bg[1], bg[2]};
    info_.joint_names = m.at("joint_names").get<std::vector<std::string>>();
    info_.parents = m.at("parents").get<std::vector<int>>();
    for (const auto& c : m.at("cameras")) info_.cameras.push_back(camera_from_json(c));
  } catch (const json::exception& e) {
    throw std::runtime_error("bad manifest " + mpath.string() + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error("bad manifest " + mpath.string() + ": " + e.what());
  }
  if (info_.cameras.empty() || info_.frames < 1)
    throw std::runtime_error("bad manifest " + mpath.string() + ": no cameras or frames");
}

ViewFrame DatasetReader::load_view(int frame, int camera) const {
  if (frame < 0 || frame >= frames() || camera < 0 || camera >= cameras())
    throw std::out_of_range("dataset: view (" + std::to_string(frame) + ", " + std::to_string(camera) +
                            ") out of range");
  const auto& k = info_.cameras[camera].intrinsics;
  ViewFrame v;
  const fs::path rgb = fs::path(dir_) / frame_name("rgb", frame, camera, ".png");
  const fs::path mask = fs::path(dir_) / frame_name("mask", frame, camera, ".png");
  const fs::path depth = fs::path(dir_) / frame_name("depth", frame, camera, ".bin");
  v.rgb = read_png(rgb.string());
  v.mask = read_png(mask.string());
  if (v.rgb.height() != k.height || v.rgb.width() != k.width || v.rgb.channels() != 3)
    throw std::runtime_error("unexpected image size in " + rgb.string());
  if (!v.mask.same_spatial(v.rgb) || v.mask.channels() != 1)
    throw std::runtime_error("unexpected mask size in " + mask.string());
  v.depth = Tensor3<float>(k.height, k.width, 1);
  std::ifstream in(depth, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open " + depth.string());
  const auto bytes = std::streamsize(v.depth.size() * sizeof(float));
  if (in.tellg() != bytes)
    throw std::runtime_error("truncated or oversized depth file " + depth.string() + " (expected " +
                             std::to_string(bytes) + " bytes)");
  in.seekg(0);
  in.read(reinterpret_cast<char*>(v.depth.ptr()), bytes);
  const json jj = read_json(fs::path(dir_) / ("joints_" + std::to_string(frame) + ".json"));
  try {
    v.joints = joints2d_from_json(jj.at("views").at(camera));
  } catch (const std::exception& e) {
    throw std::runtime_error("bad joints file for frame " + std::to_string(frame) + ": " + e.what());
  }
  return v;
}

JointSet<double> DatasetReader::load_joints(int frame) const {
  const fs::path path = fs::path(dir_) / ("joints_" + std::to_string(frame) + ".json");
  const json jj = read_json(path);
  std::vector<Vec3<double>> pos;
  try {
    for (const auto& p : jj.at("joints3d"))
      pos.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
  } catch (const json::exception& e) {
    throw std::runtime_error("bad joints file " + path.string() + ": " + e.what());
  }
  return JointSet<double>::all_visible(std::move(pos));
}

SceneFrame DatasetReader::load_frame(int frame) const {
  SceneFrame f;
  f.joints = load_joints(frame);
  for (int c = 0; c < cameras(); ++c) f.views.push_back(load_view(frame, c));
  return f;
}

GeneratedDataset read_dataset(const std::string& dir) {
  DatasetReader reader(dir);
  GeneratedDataset data;
  data.info = reader.info();
  for (int f = 0; f < reader.frames(); ++f) data.frames.push_back(reader.load_frame(f));
  return data;
}

}  // namespace pg
