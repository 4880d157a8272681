#include <algorithm>

#include "amtu/features.hpp"

namespace amtu::features {

std::size_t TrackSet::active_count() const {
  return static_cast<std::size_t>(std::count_if(
      tracks.begin(), tracks.end(), [](const Track& t) { return t.status == TrackState::Active; }));
}

void TrackSet::prune_lost() {
  std::erase_if(tracks, [](const Track& t) { return t.status == TrackState::Lost; });
}

void manage_tracks(TrackSet& set, std::span<const LkResult> tracking, const GrayImage& image,
                   std::int64_t frame, const TrackManagerParams& params) {
  if (!tracking.empty()) {
    std::size_t k = 0;
    for (auto& t : set.tracks) {
      if (t.status != TrackState::Active) continue;
      if (k >= tracking.size()) fail(ErrorCode::DimensionMismatch, "fewer LK results than tracks");
      const LkResult& r = tracking[k++];
      if (r.status == TrackStatus::TrackedOk) {
        t.positions.push_back({frame, r.position});
      } else {
        t.status = TrackState::Lost;
      }
    }
    if (k != tracking.size()) fail(ErrorCode::DimensionMismatch, "more LK results than tracks");
  }

  std::size_t active = set.active_count();
  if (active >= params.target_count) return;

  const auto corners = fast_detect(image, params.fast);
  std::vector<Vec2> occupied;
  occupied.reserve(params.target_count);
  for (const auto& t : set.tracks) {
    if (t.status == TrackState::Active) occupied.push_back(t.latest());
  }
  const double min_sep2 = params.min_separation * params.min_separation;
  const double m = params.spawn_margin;
  for (const auto& c : corners) {
    if (active >= params.target_count) break;
    const Vec2& p = c.position;
    if (p.x() < m || p.y() < m || p.x() > image.width() - 1 - m || p.y() > image.height() - 1 - m) {
      continue;
    }
    const bool crowded = std::any_of(occupied.begin(), occupied.end(), [&](const Vec2& o) {
      return (o - p).squaredNorm() < min_sep2;
    });
    if (crowded) continue;
    Track t;
    t.id = set.next_id++;
    t.camera_index = set.camera_index;
    t.positions.push_back({frame, p});
    set.tracks.push_back(std::move(t));
    occupied.push_back(p);
    ++active;
  }
}

FeatureTracker::FeatureTracker(int camera_index, int pyramid_levels, LkParams lk,
                               TrackManagerParams manager)
    : levels_(pyramid_levels), lk_(lk), manager_(manager) {
  tracks_.camera_index = camera_index;
}

std::vector<Track> FeatureTracker::process(const GrayImage& image, std::int64_t frame) {
  ImagePyramid pyr = build_pyramid(image, levels_);
  std::vector<LkResult> results;
  if (has_prev_) {
    std::vector<Vec2> points;
    for (const auto& t : tracks_.tracks) {
      if (t.status == TrackState::Active) points.push_back(t.latest());
    }
    if (!points.empty()) results = lk_track(prev_, pyr, points, lk_);
  }
  manage_tracks(tracks_, results, image, frame, manager_);
  std::vector<Track> lost;
  for (const auto& t : tracks_.tracks) {
    if (t.status == TrackState::Lost) lost.push_back(t);
  }
  tracks_.prune_lost();
  prev_ = std::move(pyr);
  has_prev_ = true;
  return lost;
}

}  // namespace amtu::features
