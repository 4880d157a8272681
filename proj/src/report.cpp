#include "amtu/report.hpp"

#include <algorithm>
#include <cmath>

namespace amtu::report {

namespace {

void put(RgbImage& img, int x, int y, Rgb c) {
  if (img.in_bounds(x, y)) img.at(x, y) = c;
}

void draw_line(RgbImage& img, double x0, double y0, double x1, double y1, Rgb c) {
  const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    put(img, static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
  }
}

}  // namespace

Rgb track_color(std::uint64_t id) {
  // Golden-angle hue walk, full saturation.
  const double h = std::fmod(static_cast<double>(id) * 137.50776405, 360.0) / 60.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = 1, g = x; break;
    case 1: r = x, g = 1; break;
    case 2: g = 1, b = x; break;
    case 3: g = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
  }
  auto to8 = [](double v) { return static_cast<std::uint8_t>(std::lround(55.0 + 200.0 * v)); };
  return {to8(r), to8(g), to8(b)};
}

RgbImage annotate_tracks(const GrayImage& image, const features::TrackSet& tracks, int trail) {
  RgbImage out(image.width(), image.height());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = {image[i], image[i], image[i]};
  for (const auto& t : tracks.tracks) {
    if (t.status != features::TrackState::Active) continue;
    const Rgb c = track_color(t.id);
    const std::size_t n = t.positions.size();
    const std::size_t first = n > static_cast<std::size_t>(trail) ? n - trail : 0;
    for (std::size_t k = first + 1; k < n; ++k) {
      const Vec2& a = t.positions[k - 1].pixel;
      const Vec2& b = t.positions[k].pixel;
      draw_line(out, a.x(), a.y(), b.x(), b.y(), c);
    }
    const Vec2& p = t.latest();
    const int px = static_cast<int>(std::lround(p.x())), py = static_cast<int>(std::lround(p.y()));
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) put(out, px + dx, py + dy, c);
    }
  }
  return out;
}

void write_path_plot(const std::string& path, const std::vector<Polyline>& lines, int size) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& l : lines) {
    for (const auto& p : l.points) {
      xmin = std::min(xmin, p.x()), xmax = std::max(xmax, p.x());
      ymin = std::min(ymin, p.y()), ymax = std::max(ymax, p.y());
    }
  }
  RgbImage img(size, size, Rgb{255, 255, 255});
  if (xmin <= xmax) {
    const double span = std::max({xmax - xmin, ymax - ymin, 1.0});
    const double scale = (size - 40) / span;
    const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
    auto to_px = [&](const Vec2& p) {
      return Vec2(size / 2.0 + (p.x() - cx) * scale, size / 2.0 - (p.y() - cy) * scale);
    };
    for (const auto& l : lines) {
      for (std::size_t i = 1; i < l.points.size(); ++i) {
        const Vec2 a = to_px(l.points[i - 1]), b = to_px(l.points[i]);
        draw_line(img, a.x(), a.y(), b.x(), b.y(), l.color);
      }
    }
  }
  write_rgb_png(img, path);
}

void write_histogram(const std::string& path, const std::vector<double>& values, double marker, int bins,
                     int width, int height) {
  RgbImage img(width, height, Rgb{255, 255, 255});
  const double hi = std::max(marker * 1.2, values.empty() ? 1.0 : *std::max_element(values.begin(), values.end()));
  std::vector<int> counts(bins, 0);
  for (double v : values) counts[std::clamp(static_cast<int>(v / hi * bins), 0, bins - 1)]++;
  const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
  const int bw = width / bins;
  for (int b = 0; b < bins; ++b) {
    const int bar = (height - 10) * counts[b] / peak;
    for (int y = height - bar; y < height; ++y) {
      for (int x = b * bw; x < (b + 1) * bw - 1; ++x) put(img, x, y, Rgb{70, 110, 180});
    }
  }
  const int mx = static_cast<int>(marker / hi * width);
  draw_line(img, mx, 0, mx, height - 1, Rgb{200, 30, 30});
  write_rgb_png(img, path);
}

}  // namespace amtu::report
