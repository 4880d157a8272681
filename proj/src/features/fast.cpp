#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "amtu/features.hpp"

namespace amtu::features {

namespace {

void check_detectable(const GrayImage& image) {
  if (image.width() < kMinImageSide || image.height() < kMinImageSide) {
    fail(ErrorCode::ImageTooSmall, "FAST needs an image of at least 16x16");
  }
}

void check_params(const FastParams& params) {
  if (params.threshold < 1) fail(ErrorCode::InvalidArgument, "FAST threshold must be >= 1");
  if (params.arc_length < 9 || params.arc_length > 12) {
    fail(ErrorCode::InvalidArgument, "FAST arc length must be in [9, 12]");
  }
  if (params.nms_radius < 0.0) fail(ErrorCode::InvalidArgument, "negative NMS radius");
}

// Best qualifying arc for one polarity: flags[i] marks circle pixels passing
// the test, diffs[i] holds |I(circle_i) - I(p)|.
int best_arc(const bool (&flags)[16], const int (&diffs)[16], int arc_length) {
  int start = -1;
  for (int i = 0; i < 16; ++i) {
    if (!flags[i]) {
      start = i;
      break;
    }
  }
  if (start < 0) {
    int sum = 0;
    for (int d : diffs) sum += d;
    return sum;
  }
  int best = 0, run = 0, sum = 0;
  for (int k = 1; k <= 16; ++k) {
    const int i = (start + k) % 16;
    if (flags[i]) {
      ++run;
      sum += diffs[i];
    } else {
      if (run >= arc_length) best = std::max(best, sum);
      run = 0;
      sum = 0;
    }
  }
  return best;
}

// Candidate (score > 0) pixels in one row, NMS applied against the full map.
void suppress_row(const Raster<std::int32_t>& scores, int y, double radius,
                  std::vector<Keypoint>& out) {
  const int r = static_cast<int>(std::floor(radius));
  const double r2 = radius * radius;
  const int w = scores.width(), h = scores.height();
  for (int x = 0; x < w; ++x) {
    const std::int32_t s = scores.at(x, y);
    if (s <= 0) continue;
    bool keep = true;
    for (int dy = -r; dy <= r && keep; ++dy) {
      const int ny = y + dy;
      if (ny < 0 || ny >= h) continue;
      for (int dx = -r; dx <= r; ++dx) {
        if (dx == 0 && dy == 0) continue;
        if (dx * dx + dy * dy > r2) continue;
        const int nx = x + dx;
        if (nx < 0 || nx >= w) continue;
        const std::int32_t o = scores.at(nx, ny);
        // Equal scores: the earlier pixel in row-major order wins.
        if (o > s || (o == s && (dy < 0 || (dy == 0 && dx < 0)))) {
          keep = false;
          break;
        }
      }
    }
    if (keep) out.push_back({Vec2(x, y), static_cast<double>(s)});
  }
}

void sort_by_score(std::vector<Keypoint>& kps) {
  // Input is row-major; stable sort keeps that order among equal scores.
  std::stable_sort(kps.begin(), kps.end(),
                   [](const Keypoint& a, const Keypoint& b) { return a.score > b.score; });
}

void score_row(const GrayImage& image, const FastParams& params, int y,
               Raster<std::int32_t>& scores) {
  for (int x = kFastBorder; x < image.width() - kFastBorder; ++x) {
    scores.at(x, y) = fast_pixel_score(image, x, y, params.threshold, params.arc_length);
  }
}

}  // namespace

int fast_pixel_score(const GrayImage& image, int x, int y, int threshold, int arc_length) {
  const int center = image.at(x, y);
  bool brighter[16], darker[16];
  int diffs[16];
  int n_bright = 0, n_dark = 0;
  for (int i = 0; i < 16; ++i) {
    const int d = image.at(x + kCircleDx[i], y + kCircleDy[i]) - center;
    brighter[i] = d > threshold;
    darker[i] = d < -threshold;
    diffs[i] = std::abs(d);
    n_bright += brighter[i];
    n_dark += darker[i];
  }
  int score = 0;
  if (n_bright >= arc_length) score = std::max(score, best_arc(brighter, diffs, arc_length));
  if (n_dark >= arc_length) score = std::max(score, best_arc(darker, diffs, arc_length));
  return score;
}

Raster<std::int32_t> fast_score_map(const GrayImage& image, const FastParams& params) {
  check_detectable(image);
  check_params(params);
  Raster<std::int32_t> scores(image.width(), image.height(), 0);
  const int y_end = image.height() - kFastBorder;
#pragma omp parallel for schedule(static)
  for (int y = kFastBorder; y < y_end; ++y) score_row(image, params, y, scores);
  return scores;
}

std::vector<Keypoint> fast_candidates(const GrayImage& image, const FastParams& params) {
  const auto scores = fast_score_map(image, params);
  std::vector<Keypoint> out;
  for (int y = 0; y < scores.height(); ++y) {
    for (int x = 0; x < scores.width(); ++x) {
      if (scores.at(x, y) > 0) out.push_back({Vec2(x, y), static_cast<double>(scores.at(x, y))});
    }
  }
  return out;
}

std::vector<Keypoint> fast_detect(const GrayImage& image, const FastParams& params) {
  const auto scores = fast_score_map(image, params);
  const int h = image.height();
  std::vector<std::vector<Keypoint>> rows(h);
#pragma omp parallel for schedule(dynamic, 8)
  for (int y = kFastBorder; y < h - kFastBorder; ++y) {
    suppress_row(scores, y, params.nms_radius, rows[y]);
  }
  std::vector<Keypoint> out;
  for (auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  sort_by_score(out);
  return out;
}

std::vector<Keypoint> fast_detect_serial(const GrayImage& image, const FastParams& params) {
  check_detectable(image);
  check_params(params);
  Raster<std::int32_t> scores(image.width(), image.height(), 0);
  for (int y = kFastBorder; y < image.height() - kFastBorder; ++y) {
    score_row(image, params, y, scores);
  }
  std::vector<Keypoint> out;
  for (int y = kFastBorder; y < image.height() - kFastBorder; ++y) {
    suppress_row(scores, y, params.nms_radius, out);
  }
  sort_by_score(out);
  return out;
}

}  // namespace amtu::features
