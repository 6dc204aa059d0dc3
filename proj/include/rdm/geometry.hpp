#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "rdm/matrix.hpp"

namespace rdm::geometry {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Eigen::Vector3d vec() const { return {x, y, z}; }
  static Point3 from(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
  bool finite() const;
};

double distance(const Point3& a, const Point3& b);
double squared_distance(const Point3& a, const Point3& b);

// Ordered list of 3D points with an optional per-point feature matrix.
struct PointCloud {
  std::vector<Point3> points;
  std::optional<numerics::Matrix> features;  // num_points x feature_dim

  int size() const { return static_cast<int>(points.size()); }
  // Throws std::invalid_argument if the feature row count disagrees with the
  // point count or any coordinate is non-finite.
  void validate() const;
};

// Proper rigid motion: p -> rotation * p + translation.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }

  Point3 operator()(const Point3& p) const {
    return Point3::from(rotation * p.vec() + translation);
  }
  Eigen::Vector3d operator()(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }
  // Orthonormality and det(+1) within tol.
  bool is_valid(double tol = 1e-9) const;
};

// second ∘ first: applies `first`, then `second`.
RigidTransform compose(const RigidTransform& second, const RigidTransform& first);
RigidTransform inverse(const RigidTransform& t);

// Assignment of every point to exactly one patch (one patch per superpoint).
struct PatchPartition {
  std::vector<int> patch_of_point;
  std::vector<std::vector<int>> patches;
};

// Uniform spatial hash grid over a fixed point set. Cell size is chosen by
// the caller (typically the query radius, so a radius query touches at most
// 27 cells).
class HashGrid {
 public:
  HashGrid(const std::vector<Point3>& points, double cell_size);

  // Indices of all points with distance <= radius from q, ascending order.
  std::vector<int> query_radius(const Point3& q, double radius) const;
  void query_radius(const Point3& q, double radius, std::vector<int>& out) const;

 private:
  struct CellKey {
    int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
  };
  struct CellHash {
    size_t operator()(const CellKey& k) const;
  };

  const std::vector<Point3>* points_;
  double cell_;
  std::unordered_map<CellKey, std::vector<int>, CellHash> cells_;
};

// Internal building block shared by voxel_downsample and the hierarchical
// encoder: groups points into axis-aligned voxels anchored at the origin.
struct VoxelPartition {
  std::vector<Point3> centroids;             // lexicographic voxel-index order
  std::vector<std::array<int64_t, 3>> keys;  // integer cell index per voxel
  std::vector<std::vector<int>> members;     // input indices per voxel
  std::vector<int> voxel_of_point;           // input index -> voxel index
  double voxel_size = 0.0;
};
VoxelPartition voxel_partition(const std::vector<Point3>& points, double voxel_size);

// One centroid per occupied voxel, lexicographic voxel order. Features, when
// present, are averaged per voxel.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size);

// Indices of the points within `radius` of `query`, ascending.
std::vector<int> radius_neighbors(const Point3& query, const PointCloud& cloud,
                                  double radius);

PointCloud apply_transform(const RigidTransform& t, const PointCloud& cloud);

// Nearest-superpoint assignment; ties go to the lowest superpoint index.
PatchPartition point_to_node_partition(const PointCloud& cloud,
                                       const std::vector<Point3>& superpoints);

}  // namespace rdm::geometry
