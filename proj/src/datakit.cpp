#include "rdm/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "rdm/errors.hpp"

namespace rdm::datakit {

PointCloud read_scan_bin(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw IoError("cannot open scan: " + path);
  const std::streamoff size = is.tellg();
  if (size % 16 != 0) {
    throw ParseError("scan file size not divisible by 16 bytes: " + path);
  }
  is.seekg(0);
  const size_t n = static_cast<size_t>(size) / 16;
  PointCloud cloud;
  cloud.points.reserve(n);
  numerics::Matrix intensity(n, 1);
  for (size_t i = 0; i < n; ++i) {
    float rec[4];
    if (!is.read(reinterpret_cast<char*>(rec), sizeof(rec))) {
      throw IoError("read failure: " + path);
    }
    cloud.points.push_back({static_cast<double>(rec[0]), static_cast<double>(rec[1]),
                            static_cast<double>(rec[2])});
    intensity(static_cast<Eigen::Index>(i), 0) = static_cast<double>(rec[3]);
  }
  cloud.features = std::move(intensity);
  return cloud;
}

void write_scan_bin(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open scan for writing: " + path);
  for (int i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    float rec[4] = {static_cast<float>(p.x), static_cast<float>(p.y),
                    static_cast<float>(p.z), 0.0f};
    if (cloud.features && cloud.features->cols() > 0) {
      rec[3] = static_cast<float>((*cloud.features)(i, 0));
    }
    os.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
  if (!os) throw IoError("write failure: " + path);
}

std::vector<RigidTransform> read_pose_file(const std::string& path,
                                           int* reorthonormalized) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open pose file: " + path);
  std::vector<RigidTransform> poses;
  std::string line;
  int line_no = 0;
  int fixes = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    double v[12];
    for (int i = 0; i < 12; ++i) {
      if (!(ls >> v[i])) {
        throw ParseError("pose line needs 12 numbers", line_no);
      }
    }
    double extra;
    if (ls >> extra) throw ParseError("pose line has more than 12 numbers", line_no);
    RigidTransform t;
    t.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    t.translation << v[3], v[7], v[11];
    if (!t.is_valid(1e-6)) {
      // Project back onto SO(3) via SVD.
      Eigen::JacobiSVD<Eigen::Matrix3d> svd(t.rotation,
                                            Eigen::ComputeFullU | Eigen::ComputeFullV);
      Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
      d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
      t.rotation = svd.matrixU() * d * svd.matrixV().transpose();
      ++fixes;
    }
    poses.push_back(t);
  }
  if (reorthonormalized) *reorthonormalized = fixes;
  return poses;
}

void write_pose_file(const std::string& path, const std::vector<RigidTransform>& poses) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open pose file for writing: " + path);
  os.precision(17);
  for (const auto& t : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) os << t.rotation(r, c) << " ";
      os << t.translation(r);
      if (r < 2) os << " ";
    }
    os << "\n";
  }
  if (!os) throw IoError("write failure: " + path);
}

std::vector<RegistrationPair> sample_pairs(const std::vector<ScanRecord>& records,
                                           double max_distance) {
  std::vector<RegistrationPair> pairs;
  const int n = static_cast<int>(records.size());
  int i = 0;
  while (i < n - 1) {
    int match = -1;
    for (int j = i + 1; j < n; ++j) {
      const double d = (records[j].pose.translation - records[i].pose.translation).norm();
      if (d <= max_distance) match = j;
    }
    if (match < 0) {
      ++i;
      continue;
    }
    RegistrationPair p;
    p.source = records[i];
    p.target = records[match];
    p.gt_relative = geometry::compose(geometry::inverse(records[match].pose),
                                      records[i].pose);
    p.center_distance =
        (records[match].pose.translation - records[i].pose.translation).norm();
    pairs.push_back(std::move(p));
    i = match;
  }
  return pairs;
}

namespace {

// Fraction of one disk covered by the lens of two equal disks at distance d.
double lens_fraction(double d, double radius) {
  if (d <= 0.0) return 1.0;
  if (d >= 2.0 * radius) return 0.0;
  const double r2 = radius * radius;
  const double lens = 2.0 * r2 * std::acos(d / (2.0 * radius)) -
                      0.5 * d * std::sqrt(4.0 * r2 - d * d);
  return lens / (std::numbers::pi * r2);
}

double solve_overlap_distance(double target, double radius) {
  double lo = 0.0, hi = 2.0 * radius;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (lens_fraction(mid, radius) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

struct SceneBuilder {
  std::vector<Point3> points;

  void add_ground(double radius, double spacing) {
    for (double x = -radius; x <= radius; x += spacing) {
      for (double y = -radius; y <= radius; y += spacing) {
        if (x * x + y * y <= radius * radius) points.push_back({x, y, 0.0});
      }
    }
  }

  void add_box(const Eigen::Vector3d& center, double yaw, double lx, double ly,
               double h, double spacing) {
    const Eigen::Matrix3d rot = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).matrix();
    auto emit = [&](double u, double v, double w) {
      const Eigen::Vector3d local(u, v, w);
      const Eigen::Vector3d p = rot * local + center;
      points.push_back({p.x(), p.y(), p.z()});
    };
    for (double u = -lx / 2; u <= lx / 2; u += spacing) {
      for (double w = 0.0; w <= h; w += spacing) {
        emit(u, -ly / 2, w);
        emit(u, ly / 2, w);
      }
      for (double v = -ly / 2; v <= ly / 2; v += spacing) emit(u, v, h);
    }
    for (double v = -ly / 2; v <= ly / 2; v += spacing) {
      for (double w = 0.0; w <= h; w += spacing) {
        emit(-lx / 2, v, w);
        emit(lx / 2, v, w);
      }
    }
  }

  void add_pole(const Eigen::Vector3d& base, double radius, double height,
                double spacing) {
    const int sides = std::max(6, static_cast<int>(2.0 * std::numbers::pi * radius / spacing));
    for (double w = 0.0; w <= height; w += spacing) {
      for (int s = 0; s < sides; ++s) {
        const double a = 2.0 * std::numbers::pi * s / sides;
        points.push_back({base.x() + radius * std::cos(a),
                          base.y() + radius * std::sin(a), base.z() + w});
      }
    }
  }
};

PointCloud crop_disk(const std::vector<Point3>& scene, const Eigen::Vector2d& center,
                     double radius) {
  PointCloud out;
  const double r2 = radius * radius;
  for (const auto& p : scene) {
    const double dx = p.x - center.x();
    const double dy = p.y - center.y();
    if (dx * dx + dy * dy <= r2) out.points.push_back(p);
  }
  return out;
}

void add_noise(PointCloud& cloud, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& p : cloud.points) {
    p.x += dist(rng);
    p.y += dist(rng);
    p.z += dist(rng);
  }
}

}  // namespace

RegistrationPair synth_scene_pair(uint64_t seed, const SynthConfig& config) {
  if (!(config.extent > 0.0)) throw std::invalid_argument("synth: extent must be positive");
  if (!(config.overlap_target > 0.0) || config.overlap_target > 1.0) {
    throw std::invalid_argument("synth: overlap_target must be in (0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SceneBuilder scene;
  scene.add_ground(config.extent, config.point_spacing);
  const int boxes = (2 * config.num_objects) / 3;
  for (int i = 0; i < config.num_objects; ++i) {
    const double ang = 2.0 * std::numbers::pi * unit(rng);
    const double rad = 0.85 * config.extent * std::sqrt(unit(rng));
    const Eigen::Vector3d center(rad * std::cos(ang), rad * std::sin(ang), 0.0);
    if (i < boxes) {
      const double yaw = 2.0 * std::numbers::pi * unit(rng);
      const double lx = 1.0 + 2.0 * unit(rng);
      const double ly = 1.0 + 2.0 * unit(rng);
      const double h = 1.0 + 1.5 * unit(rng);
      scene.add_box(center, yaw, lx, ly, h, config.point_spacing);
    } else {
      const double height = 2.0 + 3.0 * unit(rng);
      scene.add_pole(center, 0.15, height, config.point_spacing * 0.8);
    }
  }

  const double view_radius = config.extent * config.view_radius_factor;
  const double dist = solve_overlap_distance(config.overlap_target, view_radius);
  const double dir = 2.0 * std::numbers::pi * unit(rng);
  const Eigen::Vector2d sensor_b(dist * std::cos(dir), dist * std::sin(dir));
  const double max_rot = config.max_rotation_deg * std::numbers::pi / 180.0;
  const double yaw_b = max_rot * (2.0 * unit(rng) - 1.0);

  RigidTransform pose_b;
  pose_b.rotation = Eigen::AngleAxisd(yaw_b, Eigen::Vector3d::UnitZ()).matrix();
  pose_b.translation << sensor_b.x(), sensor_b.y(), 0.0;

  PointCloud view_a = crop_disk(scene.points, Eigen::Vector2d::Zero(), view_radius);
  PointCloud view_b_world = crop_disk(scene.points, sensor_b, view_radius);
  if (view_a.points.empty() || view_b_world.points.empty()) {
    throw GenerationError("synth: a view came out empty");
  }
  // Sanity-check the crops actually share territory.
  if (lens_fraction(dist, view_radius) <= 0.0) {
    throw GenerationError("synth: requested configuration has no view overlap");
  }

  PointCloud view_b = geometry::apply_transform(geometry::inverse(pose_b), view_b_world);
  add_noise(view_a, config.noise_sigma, rng);
  add_noise(view_b, config.noise_sigma, rng);

  RegistrationPair pair;
  pair.source.cloud = std::move(view_a);
  pair.source.sequence = "synth";
  pair.source.frame = 0;
  pair.source.pose = RigidTransform::identity();
  pair.target.cloud = std::move(view_b);
  pair.target.sequence = "synth";
  pair.target.frame = 1;
  pair.target.pose = pose_b;
  pair.gt_relative = geometry::compose(geometry::inverse(pose_b), pair.source.pose);
  pair.center_distance = dist;
  return pair;
}

RegistrationPair augment(const RegistrationPair& pair, uint64_t seed,
                         double jitter_sigma) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double yaw = 2.0 * std::numbers::pi * unit(rng);

  RigidTransform aug;
  aug.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).matrix();

  RegistrationPair out = pair;
  out.source.cloud = geometry::apply_transform(aug, pair.source.cloud);
  // New source frame: gt' = gt ∘ aug^-1 keeps the pair registered.
  out.gt_relative = geometry::compose(pair.gt_relative, geometry::inverse(aug));

  add_noise(out.source.cloud, jitter_sigma, rng);
  add_noise(out.target.cloud, jitter_sigma, rng);

  auto shuffle_cloud = [&rng](PointCloud& cloud) {
    std::vector<int> perm(cloud.points.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    std::shuffle(perm.begin(), perm.end(), rng);
    PointCloud shuffled;
    shuffled.points.resize(cloud.points.size());
    if (cloud.features) {
      shuffled.features = numerics::Matrix(cloud.features->rows(), cloud.features->cols());
    }
    for (size_t i = 0; i < perm.size(); ++i) {
      shuffled.points[i] = cloud.points[perm[i]];
      if (cloud.features) shuffled.features->row(static_cast<Eigen::Index>(i)) = cloud.features->row(perm[i]);
    }
    cloud = std::move(shuffled);
  };
  shuffle_cloud(out.source.cloud);
  shuffle_cloud(out.target.cloud);
  return out;
}

}  // namespace rdm::datakit
