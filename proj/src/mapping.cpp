#include "amtu/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace amtu::mapping {

OccupancyGrid::OccupancyGrid(int width, int height, double resolution, const Vec2& origin)
    : width_(width), height_(height), resolution_(resolution), origin_(origin) {
  if (width <= 0 || height <= 0) fail(ErrorCode::InvalidArgument, "grid size must be positive");
  if (!(resolution > 0.0)) fail(ErrorCode::InvalidArgument, "grid resolution must be positive");
  free_.assign(static_cast<std::size_t>(width) * height, 0);
  occupied_.assign(free_.size(), 0);
}

OccupancyGrid OccupancyGrid::centered(const Vec2& center, int width, int height,
                                      double resolution) {
  const Vec2 origin(std::floor(center.x() / resolution) * resolution - (width / 2) * resolution,
                    std::floor(center.y() / resolution) * resolution - (height / 2) * resolution);
  return OccupancyGrid(width, height, resolution, origin);
}

std::optional<CellIndex> OccupancyGrid::cell_of(const Vec2& world) const {
  const double fx = std::floor((world.x() - origin_.x()) / resolution_);
  const double fy = std::floor((world.y() - origin_.y()) / resolution_);
  if (!(fx >= 0.0 && fy >= 0.0 && fx < width_ && fy < height_)) return std::nullopt;
  return CellIndex{static_cast<int>(fx), static_cast<int>(fy)};
}

void OccupancyGrid::add_free(const CellIndex& c) {
  auto& v = free_[index(c)];
  if (v < 255) ++v;
}

void OccupancyGrid::add_occupied(const CellIndex& c) {
  auto& v = occupied_[index(c)];
  if (v < 255) ++v;
}

void OccupancyGrid::force_occupied(const CellIndex& c) {
  auto& v = occupied_[index(c)];
  v = std::max(v, kStateThreshold);
}

void OccupancyGrid::recenter(const Vec2& position) {
  const auto current = cell_of(position);
  const int cx = width_ / 2, cy = height_ / 2;
  int sx, sy;
  if (current) {
    sx = current->x - cx;
    sy = current->y - cy;
  } else {
    sx = static_cast<int>(std::floor((position.x() - origin_.x()) / resolution_)) - cx;
    sy = static_cast<int>(std::floor((position.y() - origin_.y()) / resolution_)) - cy;
  }
  if (sx == 0 && sy == 0) return;
  std::vector<std::uint8_t> nf(free_.size(), 0), no(occupied_.size(), 0);
  for (int y = 0; y < height_; ++y) {
    const int oy = y + sy;
    if (oy < 0 || oy >= height_) continue;
    for (int x = 0; x < width_; ++x) {
      const int ox = x + sx;
      if (ox < 0 || ox >= width_) continue;
      const std::size_t src = static_cast<std::size_t>(oy) * width_ + ox;
      const std::size_t dst = static_cast<std::size_t>(y) * width_ + x;
      nf[dst] = free_[src];
      no[dst] = occupied_[src];
    }
  }
  free_.swap(nf);
  occupied_.swap(no);
  origin_ += Vec2(sx * resolution_, sy * resolution_);
}

std::vector<CellIndex> OccupancyGrid::occupied_cells() const {
  std::vector<CellIndex> out;
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      if (state({x, y}) == CellState::Occupied) out.push_back({x, y});
    }
  }
  return out;
}

void WorldModel::synchronize() {
  for (const auto& b : boxes) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double rx = std::abs(c) * b.extents.x() + std::abs(s) * b.extents.y();
    const double ry = std::abs(s) * b.extents.x() + std::abs(c) * b.extents.y();
    const double res = grid.resolution();
    for (double y = b.center.y() - ry; y <= b.center.y() + ry + 1e-12; y += res * 0.5) {
      for (double x = b.center.x() - rx; x <= b.center.x() + rx + 1e-12; x += res * 0.5) {
        const Vec2 local(c * (x - b.center.x()) + s * (y - b.center.y()),
                         -s * (x - b.center.x()) + c * (y - b.center.y()));
        if (std::abs(local.x()) > b.extents.x() + 1e-9 || std::abs(local.y()) > b.extents.y() + 1e-9) {
          continue;
        }
        if (auto cell = grid.cell_of({x, y})) grid.force_occupied(*cell);
      }
    }
  }
}

std::vector<ProjectedPoint> project_lidar_to_image(const PointCloud& cloud,
                                                   const Pose3& sensor_from_body,
                                                   const CameraRig& rig) {
  const Pose3 body_from_sensor = sensor_from_body.inverse();
  std::vector<Pose3> cam_from_sensor;
  for (const auto& cam : rig.cameras()) cam_from_sensor.push_back(cam.cam_from_body * body_from_sensor);
  std::vector<ProjectedPoint> out;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    for (std::size_t k = 0; k < rig.count(); ++k) {
      const Vec3 pc = cam_from_sensor[k].apply(cloud.points[i]);
      if (!(pc.z() > 0.1)) continue;
      const auto& in = rig[k].intrinsics;
      const Vec2 px(in.fx * pc.x() / pc.z() + in.cx, in.fy * pc.y() / pc.z() + in.cy);
      if (!in.contains(px)) continue;
      out.push_back({i, static_cast<int>(k), px, pc.z()});
    }
  }
  return out;
}

std::vector<CellIndex> ground_cells_from_semantics(const percepts::SemanticMap& sem,
                                                   const std::set<int>& traversable_classes,
                                                   const CameraIntrinsics& intr,
                                                   const Pose3& world_from_camera,
                                                   const GroundPlane& plane,
                                                   const OccupancyGrid& grid,
                                                   const GroundProjectionParams& params) {
  const Vec3 origin = world_from_camera.translation();
  if (!(plane.signed_distance(origin) > 0.0)) {
    fail(ErrorCode::CameraBelowGround, "camera is not above the ground plane");
  }
  std::vector<CellIndex> cells;
  if (traversable_classes.empty()) return cells;
  const int stride = std::max(1, params.stride);
  for (int y = 0; y < sem.height(); y += stride) {
    for (int x = 0; x < sem.width(); x += stride) {
      if (!traversable_classes.contains(sem.at(x, y))) continue;
      const Vec3 dir = world_from_camera.rotation() * unproject_ray(intr, Vec2(x, y));
      Vec3 hit;
      try {
        hit = ray_ground_intersection(origin, dir, plane);
      } catch (const Error&) {
        continue;  // horizon or above
      }
      if ((hit - origin).head<2>().norm() > params.max_range) continue;
      if (auto c = grid.cell_of(hit.head<2>())) cells.push_back(*c);
    }
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

std::vector<BoundingBox3D> instance_to_3d_box(const percepts::InstanceMap& inst,
                                              std::span<const percepts::BoundingBox2D> boxes2d,
                                              std::span<const ProjectedPoint> projected,
                                              int camera, const PointCloud& cloud_world,
                                              const BoxFitParams& params) {
  std::vector<BoundingBox3D> out;
  for (const auto& b : boxes2d) {
    std::vector<const ProjectedPoint*> support;
    for (const auto& p : projected) {
      if (p.camera != camera) continue;
      const int px = static_cast<int>(std::lround(p.pixel.x()));
      const int py = static_cast<int>(std::lround(p.pixel.y()));
      if (px < b.x1 || px > b.x2 || py < b.y1 || py > b.y2) continue;
      if (!inst.in_bounds(px, py) || inst.at(px, py) != b.instance_id) continue;
      support.push_back(&p);
    }
    if (support.size() < params.min_points) continue;
    std::vector<double> depths;
    for (const auto* p : support) depths.push_back(p->depth);
    std::sort(depths.begin(), depths.end());
    const std::size_t n = depths.size();
    const double median = n % 2 ? depths[n / 2] : 0.5 * (depths[n / 2 - 1] + depths[n / 2]);
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    std::size_t kept = 0;
    for (const auto* p : support) {
      if (std::abs(p->depth - median) > params.depth_gate) continue;
      const Vec3& w = cloud_world.points.at(p->point_index);
      lo = lo.cwiseMin(w);
      hi = hi.cwiseMax(w);
      ++kept;
    }
    if (kept < params.min_points) continue;
    BoundingBox3D box;
    box.center = 0.5 * (lo + hi);
    box.extents = (0.5 * (hi - lo)).cwiseMax(1e-6);
    box.yaw = 0.0;
    box.class_id = b.class_id;
    box.instance_id = b.instance_id;
    out.push_back(box);
  }
  return out;
}

void update_grid(OccupancyGrid& grid, std::span<const CellIndex> free_evidence,
                 std::span<const Vec3> obstacle_points, const GroundPlane& plane,
                 const HeightGate& gate) {
  for (const auto& c : free_evidence) {
    if (grid.contains(c)) grid.add_free(c);
  }
  for (const auto& p : obstacle_points) {
    const double h = plane.signed_distance(p);
    if (!(h > gate.min_height && h < gate.max_height)) continue;
    if (auto c = grid.cell_of(p.head<2>())) grid.add_occupied(*c);
  }
}

double clearance_query(const OccupancyGrid& grid, const Vec2& position, double max_radius) {
  const auto here = grid.cell_of(position);
  if (!here) fail(ErrorCode::OutOfGrid, "clearance query outside the grid");
  if (grid.state(*here) == CellState::Occupied) return 0.0;
  const int reach = static_cast<int>(std::ceil(max_radius / grid.resolution())) + 1;
  double best = max_radius;
  for (int y = std::max(0, here->y - reach); y <= std::min(grid.height() - 1, here->y + reach); ++y) {
    for (int x = std::max(0, here->x - reach); x <= std::min(grid.width() - 1, here->x + reach); ++x) {
      if (grid.state({x, y}) != CellState::Occupied) continue;
      const Vec2 c = grid.cell_center({x, y});
      const double dx = position.x() - c.x(), dy = position.y() - c.y();
      best = std::min(best, std::sqrt(dx * dx + dy * dy));
    }
  }
  return best;
}

ClearanceIndex::ClearanceIndex(const OccupancyGrid& grid, double max_radius, int bucket_cells)
    : grid_(&grid), max_radius_(max_radius), bucket_cells_(bucket_cells) {
  buckets_x_ = (grid.width() + bucket_cells - 1) / bucket_cells;
  buckets_y_ = (grid.height() + bucket_cells - 1) / bucket_cells;
  buckets_.resize(static_cast<std::size_t>(buckets_x_) * buckets_y_);
  for (const auto& c : grid.occupied_cells()) {
    buckets_[static_cast<std::size_t>(c.y / bucket_cells) * buckets_x_ + c.x / bucket_cells]
        .push_back(grid.cell_center(c));
  }
}

double ClearanceIndex::query(const Vec2& position) const {
  const auto here = grid_->cell_of(position);
  if (!here) fail(ErrorCode::OutOfGrid, "clearance query outside the grid");
  if (grid_->state(*here) == CellState::Occupied) return 0.0;
  const int reach = static_cast<int>(std::ceil(max_radius_ / grid_->resolution())) + 1;
  const int bx0 = std::max(0, (here->x - reach) / bucket_cells_);
  const int bx1 = std::min(buckets_x_ - 1, (here->x + reach) / bucket_cells_);
  const int by0 = std::max(0, (here->y - reach) / bucket_cells_);
  const int by1 = std::min(buckets_y_ - 1, (here->y + reach) / bucket_cells_);
  double best = max_radius_;
  for (int by = by0; by <= by1; ++by) {
    for (int bx = bx0; bx <= bx1; ++bx) {
      for (const Vec2& c : buckets_[static_cast<std::size_t>(by) * buckets_x_ + bx]) {
        const double dx = position.x() - c.x(), dy = position.y() - c.y();
        best = std::min(best, std::sqrt(dx * dx + dy * dy));
      }
    }
  }
  return best;
}

void export_grid(const OccupancyGrid& grid, const std::string& png_path) {
  GrayImage img(grid.width(), grid.height());
  for (int y = 0; y < grid.height(); ++y) {
    for (int x = 0; x < grid.width(); ++x) {
      const CellState s = grid.state({x, y});
      img.at(x, grid.height() - 1 - y) =
          s == CellState::Occupied ? 255 : (s == CellState::Free ? 128 : 0);
    }
  }
  write_gray_png(img, png_path);
  std::ofstream side(png_path + ".txt");
  if (!side) fail(ErrorCode::IoFailure, "cannot write grid sidecar for " + png_path);
  side << std::setprecision(17) << "origin_x " << grid.origin().x() << "\norigin_y "
       << grid.origin().y() << "\nresolution " << grid.resolution() << "\nwidth " << grid.width()
       << "\nheight " << grid.height() << "\n";
}

}  // namespace amtu::mapping
