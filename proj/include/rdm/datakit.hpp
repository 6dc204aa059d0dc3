#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdm/geometry.hpp"

namespace rdm::datakit {

using geometry::Point3;
using geometry::PointCloud;
using geometry::RigidTransform;

// One LiDAR scan with its sensor-to-world pose.
struct ScanRecord {
  PointCloud cloud;
  std::string sequence;
  int frame = 0;
  RigidTransform pose;
};

struct RegistrationPair {
  ScanRecord source;
  ScanRecord target;
  RigidTransform gt_relative;  // target_pose^-1 ∘ source_pose
  double center_distance = 0.0;
};

// KITTI velodyne binary: little-endian float32 records (x, y, z, intensity).
// Intensity is kept as a one-column feature matrix.
PointCloud read_scan_bin(const std::string& path);
void write_scan_bin(const std::string& path, const PointCloud& cloud);

// KITTI odometry pose text: 12 whitespace-separated numbers per line,
// row-major 3x4 [R|t]. Rotations drifted beyond 1e-6 from orthonormal are
// re-orthonormalized; the count of such fixes is reported when requested.
std::vector<RigidTransform> read_pose_file(const std::string& path,
                                           int* reorthonormalized = nullptr);
void write_pose_file(const std::string& path, const std::vector<RigidTransform>& poses);

// Greedy frame-skip sampling: from anchor i, pair with the farthest frame j>i
// within max_distance, then continue from j. Frames without a qualifying
// partner advance by one.
std::vector<RegistrationPair> sample_pairs(const std::vector<ScanRecord>& records,
                                           double max_distance);

struct SynthConfig {
  int num_objects = 12;      // boxes and poles scattered over the ground
  double extent = 20.0;      // scene radius in meters
  double overlap_target = 0.6;
  double noise_sigma = 0.05;
  double view_radius_factor = 0.5;  // crop disk radius = extent * factor
  double max_rotation_deg = 30.0;   // about the vertical axis
  double point_spacing = 0.35;      // surface sampling step
};

// Deterministic synthetic scene pair: ground plane plus boxes and poles
// sampled as surface points, two disk-cropped views related by a random
// vertical-axis rotation and a translation solved so the view overlap matches
// overlap_target, plus Gaussian point noise.
RegistrationPair synth_scene_pair(uint64_t seed, const SynthConfig& config);

// Random vertical-axis rotation of the source cloud, Gaussian jitter on both
// clouds, and a point-order shuffle; gt_relative is updated so the pair stays
// registered.
RegistrationPair augment(const RegistrationPair& pair, uint64_t seed,
                         double jitter_sigma = 0.01);

}  // namespace rdm::datakit
