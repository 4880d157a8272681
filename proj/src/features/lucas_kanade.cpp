#include <algorithm>
#include <cmath>
#include <vector>

#include "amtu/features.hpp"

namespace amtu::features {

bool ImagePyramid::same_structure(const ImagePyramid& o) const {
  if (levels.size() != o.levels.size()) return false;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!levels[i].same_shape(o.levels[i])) return false;
  }
  return true;
}

ImagePyramid build_pyramid(const GrayImage& image, int levels) {
  if (levels < 1) fail(ErrorCode::InvalidArgument, "pyramid needs at least one level");
  if (image.width() < kMinImageSide || image.height() < kMinImageSide) {
    fail(ErrorCode::TooManyLevels, "level 0 is smaller than 16x16");
  }
  {
    int w = image.width(), h = image.height();
    for (int l = 1; l < levels; ++l) {
      w /= 2;
      h /= 2;
      if (w < kMinImageSide || h < kMinImageSide) {
        fail(ErrorCode::TooManyLevels, "pyramid level " + std::to_string(l) + " below 16x16");
      }
    }
  }
  ImagePyramid pyr;
  pyr.levels.reserve(levels);
  pyr.levels.push_back(image);
  for (int l = 1; l < levels; ++l) {
    const GrayImage& src = pyr.levels.back();
    GrayImage dst(src.width() / 2, src.height() / 2);
    for (int y = 0; y < dst.height(); ++y) {
      const std::uint8_t* r0 = src.row(2 * y);
      const std::uint8_t* r1 = src.row(2 * y + 1);
      std::uint8_t* out = dst.row(y);
      for (int x = 0; x < dst.width(); ++x) {
        const int sum = r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
        out[x] = static_cast<std::uint8_t>((sum + 2) / 4);
      }
    }
    pyr.levels.push_back(std::move(dst));
  }
  return pyr;
}

const char* to_string(TrackStatus status) {
  switch (status) {
    case TrackStatus::TrackedOk: return "TrackedOk";
    case TrackStatus::LostLowTexture: return "LostLowTexture";
    case TrackStatus::LostDiverged: return "LostDiverged";
    case TrackStatus::LostOutOfBounds: return "LostOutOfBounds";
  }
  return "?";
}

double sample_bilinear(const GrayImage& image, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const double ax = x - fx, ay = y - fy;
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const int w1 = image.width() - 1, h1 = image.height() - 1;
  const int xa = std::clamp(x0, 0, w1), xb = std::clamp(x0 + 1, 0, w1);
  const int ya = std::clamp(y0, 0, h1), yb = std::clamp(y0 + 1, 0, h1);
  const double top = (1.0 - ax) * image.at(xa, ya) + ax * image.at(xb, ya);
  const double bot = (1.0 - ax) * image.at(xa, yb) + ax * image.at(xb, yb);
  return (1.0 - ay) * top + ay * bot;
}

namespace {

// Samples a (2r+1)^2 grid of the image at integer offsets from `origin`.
// The fractional part is shared by every sample, so the weights are computed
// once; the fast path avoids per-sample clamping when the grid is interior.
void sample_grid(const GrayImage& image, const Vec2& origin, int r, double* out) {
  const double fx = std::floor(origin.x()), fy = std::floor(origin.y());
  const double ax = origin.x() - fx, ay = origin.y() - fy;
  const int bx = static_cast<int>(fx), by = static_cast<int>(fy);
  const double w00 = (1 - ax) * (1 - ay), w10 = ax * (1 - ay), w01 = (1 - ax) * ay, w11 = ax * ay;
  const int side = 2 * r + 1;
  const bool interior = bx - r >= 0 && by - r >= 0 && bx + r + 1 < image.width() &&
                        by + r + 1 < image.height();
  if (interior) {
    for (int j = 0; j < side; ++j) {
      const std::uint8_t* r0 = image.row(by - r + j) + (bx - r);
      const std::uint8_t* r1 = image.row(by - r + j + 1) + (bx - r);
      double* o = out + j * side;
      for (int i = 0; i < side; ++i) {
        o[i] = w00 * r0[i] + w10 * r0[i + 1] + w01 * r1[i] + w11 * r1[i + 1];
      }
    }
    return;
  }
  const int w1 = image.width() - 1, h1 = image.height() - 1;
  for (int j = 0; j < side; ++j) {
    const int ya = std::clamp(by - r + j, 0, h1), yb = std::clamp(by - r + j + 1, 0, h1);
    for (int i = 0; i < side; ++i) {
      const int xa = std::clamp(bx - r + i, 0, w1), xb = std::clamp(bx - r + i + 1, 0, w1);
      out[j * side + i] = w00 * image.at(xa, ya) + w10 * image.at(xb, ya) +
                          w01 * image.at(xa, yb) + w11 * image.at(xb, yb);
    }
  }
}

bool window_inside(const GrayImage& image, const Vec2& p, int half) {
  return p.x() - half >= 0.0 && p.y() - half >= 0.0 && p.x() + half <= image.width() - 1.0 &&
         p.y() + half <= image.height() - 1.0;
}

}  // namespace

LkResult lk_track_point(const ImagePyramid& prev, const ImagePyramid& next, const Vec2& point,
                        const LkParams& params) {
  const int half = params.window_half;
  const int side = 2 * half + 1;
  const int ext = side + 2;  // template grid with a one-pixel apron for gradients
  const double area = static_cast<double>(side) * side;
  const double min_eig_threshold = 1e-4 * area;

  std::vector<double> tmpl_ext(static_cast<std::size_t>(ext) * ext);
  std::vector<double> tmpl(static_cast<std::size_t>(side) * side);
  std::vector<double> gx(tmpl.size()), gy(tmpl.size()), warped(tmpl.size());

  const int top = static_cast<int>(prev.levels.size()) - 1;
  Vec2 guess = Vec2::Zero();
  Vec2 result = point;
  for (int level = top; level >= 0; --level) {
    const GrayImage& img_prev = prev.levels[level];
    const GrayImage& img_next = next.levels[level];
    const double scale = 1.0 / static_cast<double>(1 << level);
    const Vec2 p = point * scale;

    sample_grid(img_prev, p, half + 1, tmpl_ext.data());
    double gxx = 0, gxy = 0, gyy = 0;
    for (int j = 0; j < side; ++j) {
      for (int i = 0; i < side; ++i) {
        const int e = (j + 1) * ext + (i + 1);
        const int k = j * side + i;
        tmpl[k] = tmpl_ext[e];
        gx[k] = 0.5 * (tmpl_ext[e + 1] - tmpl_ext[e - 1]);
        gy[k] = 0.5 * (tmpl_ext[e + ext] - tmpl_ext[e - ext]);
        gxx += gx[k] * gx[k];
        gxy += gx[k] * gy[k];
        gyy += gy[k] * gy[k];
      }
    }
    const double tr = 0.5 * (gxx + gyy);
    const double min_eig = tr - std::sqrt(0.25 * (gxx - gyy) * (gxx - gyy) + gxy * gxy);
    if (!(min_eig >= min_eig_threshold)) return {point, TrackStatus::LostLowTexture};
    const double det = gxx * gyy - gxy * gxy;

    Vec2 d = Vec2::Zero();
    double last_step = 0.0;
    bool converged = false;
    for (int it = 0; it < params.max_iters; ++it) {
      const Vec2 q = p + guess + d;
      if (!std::isfinite(q.x()) || !std::isfinite(q.y()) || q.x() < -half || q.y() < -half ||
          q.x() > img_next.width() - 1.0 + half || q.y() > img_next.height() - 1.0 + half) {
        return {point, TrackStatus::LostOutOfBounds};
      }
      sample_grid(img_next, q, half, warped.data());
      double bx = 0, by = 0;
      for (std::size_t k = 0; k < tmpl.size(); ++k) {
        const double diff = tmpl[k] - warped[k];
        bx += diff * gx[k];
        by += diff * gy[k];
      }
      const Vec2 step((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
      d += step;
      last_step = step.norm();
      if (last_step < params.eps) {
        converged = true;
        break;
      }
    }
    if (!converged && last_step >= 1.0) return {point, TrackStatus::LostDiverged};

    if (level > 0) {
      guess = 2.0 * (guess + d);
    } else {
      result = p + guess + d;
    }
  }
  if (!window_inside(next.levels[0], result, half)) return {result, TrackStatus::LostOutOfBounds};
  return {result, TrackStatus::TrackedOk};
}

namespace {

void check_pyramids(const ImagePyramid& prev, const ImagePyramid& next) {
  if (prev.levels.empty() || !prev.same_structure(next)) {
    fail(ErrorCode::PyramidMismatch, "pyramids differ in level structure");
  }
}

}  // namespace

std::vector<LkResult> lk_track(const ImagePyramid& prev, const ImagePyramid& next,
                               std::span<const Vec2> points, const LkParams& params) {
  check_pyramids(prev, next);
  std::vector<LkResult> out(points.size());
  const auto n = static_cast<std::ptrdiff_t>(points.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = lk_track_point(prev, next, points[i], params);
  return out;
}

std::vector<LkResult> lk_track_serial(const ImagePyramid& prev, const ImagePyramid& next,
                                      std::span<const Vec2> points, const LkParams& params) {
  check_pyramids(prev, next);
  std::vector<LkResult> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(lk_track_point(prev, next, p, params));
  return out;
}

}  // namespace amtu::features
