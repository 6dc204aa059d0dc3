#include "rdm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace rdm::geometry {

bool Point3::finite() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
}

double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

double distance(const Point3& a, const Point3& b) {
  return std::sqrt(squared_distance(a, b));
}

void PointCloud::validate() const {
  for (const auto& p : points) {
    if (!p.finite()) throw std::invalid_argument("point cloud contains non-finite coordinates");
  }
  if (features && features->rows() != static_cast<Eigen::Index>(points.size())) {
    throw std::invalid_argument("feature row count does not match point count");
  }
}

bool RigidTransform::is_valid(double tol) const {
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  if (std::abs(rotation.determinant() - 1.0) > tol) return false;
  return translation.allFinite();
}

RigidTransform compose(const RigidTransform& second, const RigidTransform& first) {
  RigidTransform out;
  out.rotation = second.rotation * first.rotation;
  out.translation = second.rotation * first.translation + second.translation;
  return out;
}

RigidTransform inverse(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = t.rotation.transpose();
  out.translation = -(out.rotation * t.translation);
  return out;
}

namespace {

int64_t grid_index(double v, double cell) {
  return static_cast<int64_t>(std::floor(v / cell));
}

}  // namespace

size_t HashGrid::CellHash::operator()(const CellKey& k) const {
  // 64-bit mix of the three cell coordinates.
  uint64_t h = static_cast<uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
  h ^= static_cast<uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6);
  h ^= static_cast<uint64_t>(k.z) * 0x165667B19E3779F9ull + (h >> 3);
  return static_cast<size_t>(h);
}

HashGrid::HashGrid(const std::vector<Point3>& points, double cell_size)
    : points_(&points), cell_(cell_size) {
  if (!(cell_size > 0.0)) throw std::invalid_argument("cell size must be positive");
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    const Point3& p = points[i];
    CellKey key{grid_index(p.x, cell_), grid_index(p.y, cell_), grid_index(p.z, cell_)};
    cells_[key].push_back(i);
  }
}

void HashGrid::query_radius(const Point3& q, double radius, std::vector<int>& out) const {
  out.clear();
  const double r2 = radius * radius;
  const int64_t reach = static_cast<int64_t>(std::ceil(radius / cell_));
  const int64_t cx = grid_index(q.x, cell_);
  const int64_t cy = grid_index(q.y, cell_);
  const int64_t cz = grid_index(q.z, cell_);
  for (int64_t dx = -reach; dx <= reach; ++dx) {
    for (int64_t dy = -reach; dy <= reach; ++dy) {
      for (int64_t dz = -reach; dz <= reach; ++dz) {
        auto it = cells_.find(CellKey{cx + dx, cy + dy, cz + dz});
        if (it == cells_.end()) continue;
        for (int idx : it->second) {
          if (squared_distance((*points_)[idx], q) <= r2) out.push_back(idx);
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
}

std::vector<int> HashGrid::query_radius(const Point3& q, double radius) const {
  std::vector<int> out;
  query_radius(q, radius, out);
  return out;
}

VoxelPartition voxel_partition(const std::vector<Point3>& points, double voxel_size) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("voxel size must be positive");
  // std::map keeps voxel keys in ascending lexicographic order, which fixes
  // the output ordering.
  std::map<std::array<int64_t, 3>, std::vector<int>> buckets;
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    const Point3& p = points[i];
    buckets[{grid_index(p.x, voxel_size), grid_index(p.y, voxel_size),
             grid_index(p.z, voxel_size)}]
        .push_back(i);
  }
  VoxelPartition part;
  part.voxel_size = voxel_size;
  part.centroids.reserve(buckets.size());
  part.keys.reserve(buckets.size());
  part.members.reserve(buckets.size());
  part.voxel_of_point.assign(points.size(), -1);
  for (auto& [key, idxs] : buckets) {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    for (int i : idxs) sum += points[i].vec();
    const int voxel = static_cast<int>(part.centroids.size());
    for (int i : idxs) part.voxel_of_point[i] = voxel;
    part.centroids.push_back(Point3::from(sum / static_cast<double>(idxs.size())));
    part.keys.push_back(key);
    part.members.push_back(std::move(idxs));
  }
  return part;
}

PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("voxel size must be positive");
  VoxelPartition part = voxel_partition(cloud.points, voxel_size);
  PointCloud out;
  out.points = std::move(part.centroids);
  if (cloud.features) {
    numerics::Matrix feats(out.points.size(), cloud.features->cols());
    for (size_t v = 0; v < part.members.size(); ++v) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(cloud.features->cols());
      for (int i : part.members[v]) sum += cloud.features->row(i);
      feats.row(static_cast<Eigen::Index>(v)) = sum / static_cast<double>(part.members[v].size());
    }
    out.features = std::move(feats);
  }
  return out;
}

std::vector<int> radius_neighbors(const Point3& query, const PointCloud& cloud,
                                  double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");
  if (cloud.points.empty()) return {};
  HashGrid grid(cloud.points, radius);
  return grid.query_radius(query, radius);
}

PointCloud apply_transform(const RigidTransform& t, const PointCloud& cloud) {
  PointCloud out;
  out.points.reserve(cloud.points.size());
  for (const auto& p : cloud.points) out.points.push_back(t(p));
  out.features = cloud.features;
  return out;
}

PatchPartition point_to_node_partition(const PointCloud& cloud,
                                       const std::vector<Point3>& superpoints) {
  if (superpoints.empty()) throw std::invalid_argument("superpoint list is empty");
  PatchPartition part;
  part.patch_of_point.resize(cloud.points.size());
  part.patches.assign(superpoints.size(), {});
  for (int i = 0; i < cloud.size(); ++i) {
    int best = 0;
    double best_d = squared_distance(cloud.points[i], superpoints[0]);
    for (int j = 1; j < static_cast<int>(superpoints.size()); ++j) {
      const double d = squared_distance(cloud.points[i], superpoints[j]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    part.patch_of_point[i] = best;
    part.patches[best].push_back(i);
  }
  return part;
}

}  // namespace rdm::geometry
