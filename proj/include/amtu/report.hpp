#pragma once

#include <string>
#include <vector>

#include "amtu/features.hpp"
#include "amtu/image.hpp"

namespace amtu::report {

/// Distinct, stable color per track id.
Rgb track_color(std::uint64_t id);

/// Gray frame with each active track's recent path drawn in its id color.
RgbImage annotate_tracks(const GrayImage& image, const features::TrackSet& tracks, int trail = 8);

struct Polyline {
  std::vector<Vec2> points;
  Rgb color;
};

/// Top-down plot of world-frame polylines, scaled to fit with a margin.
void write_path_plot(const std::string& path, const std::vector<Polyline>& lines, int size = 600);

/// Histogram of values with a vertical marker at `marker` (e.g. a time budget).
void write_histogram(const std::string& path, const std::vector<double>& values, double marker,
                     int bins = 40, int width = 600, int height = 300);

}  // namespace amtu::report
