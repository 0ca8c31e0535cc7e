#pragma once

#include "posegauss/posekit.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pg {

/// Articulated capsule figure. Joint j (except the root) ends a bone that
/// starts at its parent; the bone is drawn as a capsule of radius[j].
struct SkeletonSpec {
  std::vector<std::string> names;
  std::vector<int> parents;           // −1 for the root
  std::vector<Vec3<double>> offsets;  // rest offset from the parent; root: world position
  std::vector<double> radius;         // capsule radius of the bone ending at j
  std::vector<Vec3<double>> color;    // rgb of that bone

  int size() const { return int(names.size()); }
  /// Throws unless parents form a tree rooted at joint 0 with parents
  /// preceding children, non-root offsets are nonzero and radii positive.
  void validate() const;
};

/// 15 joints: pelvis, neck, head, and left/right shoulder, elbow, wrist,
/// hip, knee, ankle. Feet near y = 0, y up.
SkeletonSpec default_skeleton();

/// Local joint rotations (axis-angle, relative to rest) per frame.
struct MotionClip {
  double fps = 30;
  double speed = 1;
  std::vector<std::vector<Vec3<double>>> rotations;  // [frame][joint]

  int frames() const { return int(rotations.size()); }
  void validate(int joints) const;
};

/// Frames per full motion cycle at speed 1.
inline constexpr double kMotionPeriod = 60.0;

/// Periodic walking-style motion: joint angles are sinusoids in
/// phase = speed·t / kMotionPeriod with seed-dependent amplitudes and phases,
/// plus a slow turn of the whole figure about the vertical axis.
MotionClip make_motion(const SkeletonSpec& skeleton, int frames, double speed, std::uint64_t seed);

/// Named speed presets: slow ×1, medium ×3, fast ×6.
double speed_preset(const std::string& name);

/// Forward kinematics: G_j = G_parent·R(local_j), p_j = p_parent + G_parent·offset_j.
JointSet<double> animate(const SkeletonSpec& skeleton, const MotionClip& clip, int frame);
JointSet<double> pose_joints(const SkeletonSpec& skeleton, const std::vector<Vec3<double>>& local_rotations);

struct Capsule {
  Vec3<double> a, b;
  double radius = 0;
  Vec3<double> color;
};

std::vector<Capsule> pose_capsules(const SkeletonSpec& skeleton, const JointSet<double>& joints);

/// Distance along a unit-direction ray to the first capsule surface hit.
std::optional<double> intersect_capsule(const Vec3<double>& origin, const Vec3<double>& dir, const Capsule& c);

/// Signed distance from p to the capsule surface.
double capsule_distance(const Vec3<double>& p, const Capsule& c);

/// Cameras on a horizontal circle (y = height) around `target`, azimuth
/// 2πi/n measured from +z towards +x, all looking at `target` with +y up.
std::vector<Camera<double>> build_rig(int n_cameras, double radius, double height, const Vec3<double>& target,
                                      const Intrinsics<double>& intrinsics);

struct ShadingConfig {
  Vec3<double> light = Vec3<double>(0.3, 0.8, 0.5).normalized();  // towards the light
  double ambient = 0.35;
};

struct ViewFrame {
  Tensor3<float> rgb;    // H×W×3 in [0, 1]
  Tensor3<float> depth;  // H×W×1, camera-space z in metres, 0 = no hit
  Tensor3<float> mask;   // H×W×1, 1 exactly where depth > 0
  Joints2D<double> joints;
};

/// Nearest capsule hit per pixel centre: Lambert-shaded bone colour,
/// camera-space depth, mask; misses get the background.
ViewFrame render_gt(const std::vector<Capsule>& capsules, const JointSet<double>& joints,
                    const Camera<double>& camera, const Vec3<double>& background, const ShadingConfig& shading = {});

struct SceneFrame {
  JointSet<double> joints;
  std::vector<ViewFrame> views;
};

struct RigConfig {
  int cameras = 16;
  int resolution = 128;
  double radius = 3.0;
  double height = 1.0;
  Vec3<double> target = Vec3<double>(0, 1, 0);
  double vfov_degrees = 44.0;
  Vec3<double> background = Vec3<double>::Zero();
};

struct DatasetInfo {
  int format_version = 1;
  int frames = 0;
  double fps = 30;
  double speed = 1;
  std::uint64_t seed = 0;
  double nominal_baseline = 0;  // chord between neighbouring rig cameras (m)
  Vec3<double> background = Vec3<double>::Zero();
  std::vector<std::string> joint_names;
  std::vector<int> parents;
  std::vector<Camera<double>> cameras;
};

inline constexpr int kDatasetVersion = 1;

/// Generates a clip and renders every (frame, camera) pair.
struct GeneratedDataset {
  DatasetInfo info;
  std::vector<SceneFrame> frames;
};

GeneratedDataset generate_dataset(const RigConfig& rig, int frames, double speed, std::uint64_t seed,
                                  const SkeletonSpec& skeleton = default_skeleton());

void write_dataset(const GeneratedDataset& data, const std::string& dir);

/// Lazy reader: the manifest is parsed up front, frames on request.
class DatasetReader {
 public:
  explicit DatasetReader(std::string dir);

  const DatasetInfo& info() const { return info_; }
  int frames() const { return info_.frames; }
  int cameras() const { return int(info_.cameras.size()); }

  ViewFrame load_view(int frame, int camera) const;
  JointSet<double> load_joints(int frame) const;
  SceneFrame load_frame(int frame) const;

 private:
  std::string dir_;
  DatasetInfo info_;
};

GeneratedDataset read_dataset(const std::string& dir);

/// 8-bit PNG helpers (RGB for 3 channels, gray for 1); values clamp to [0, 1].
void write_png(const std::string& path, const Tensor3<float>& image);
Tensor3<float> read_png(const std::string& path);

}  // namespace pg
