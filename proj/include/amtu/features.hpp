#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "amtu/geometry.hpp"
#include "amtu/image.hpp"

namespace amtu::features {

// ---------------------------------------------------------------------------
// FAST corner detection
// ---------------------------------------------------------------------------

struct Keypoint {
  Vec2 position;
  double score = 0.0;
};

struct FastParams {
  int threshold = 20;
  int arc_length = 9;
  double nms_radius = 5.0;
};

/// Offsets of the 16-pixel Bresenham circle of radius 3, clockwise from 12 o'clock.
inline constexpr int kCircleDx[16] = {0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1};
inline constexpr int kCircleDy[16] = {-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3};
inline constexpr int kFastBorder = 3;

/// Segment-test score of one pixel: 0 when it is not a corner, otherwise the
/// largest sum of |I(circle) - I(p)| over a contiguous qualifying arc.
int fast_pixel_score(const GrayImage& image, int x, int y, int threshold, int arc_length);

/// Per-pixel scores for the whole image (0 on the border and for non-corners).
/// Rows are processed in parallel.
Raster<std::int32_t> fast_score_map(const GrayImage& image, const FastParams& params);

/// Candidates before non-maximum suppression, row-major order.
std::vector<Keypoint> fast_candidates(const GrayImage& image, const FastParams& params);

/// Full detector: segment test, non-maximum suppression (a candidate survives
/// when no candidate within nms_radius has a higher score, ties resolved toward
/// the earlier row-major pixel), sorted by descending score.
std::vector<Keypoint> fast_detect(const GrayImage& image, const FastParams& params = {});

/// Single-threaded reference for fast_detect; same contract.
std::vector<Keypoint> fast_detect_serial(const GrayImage& image, const FastParams& params = {});

// ---------------------------------------------------------------------------
// Pyramids and Lucas-Kanade tracking
// ---------------------------------------------------------------------------

inline constexpr int kMinImageSide = 16;

struct ImagePyramid {
  std::vector<GrayImage> levels;

  std::size_t size() const { return levels.size(); }
  bool same_structure(const ImagePyramid& o) const;
};

/// Level k+1 is the rounded 2x2 block average of level k.
ImagePyramid build_pyramid(const GrayImage& image, int levels);

enum class TrackStatus { TrackedOk, LostLowTexture, LostDiverged, LostOutOfBounds };

const char* to_string(TrackStatus status);

struct LkParams {
  int window_half = 10;
  int max_iters = 30;
  double eps = 0.01;
};

struct LkResult {
  Vec2 position;
  TrackStatus status = TrackStatus::TrackedOk;
};

/// Bilinear sample with clamped borders.
double sample_bilinear(const GrayImage& image, double x, double y);

/// Pyramidal iterative Lucas-Kanade. Points are tracked independently and in
/// parallel; results are identical to lk_track_serial.
std::vector<LkResult> lk_track(const ImagePyramid& prev, const ImagePyramid& next,
                               std::span<const Vec2> points, const LkParams& params = {});

std::vector<LkResult> lk_track_serial(const ImagePyramid& prev, const ImagePyramid& next,
                                      std::span<const Vec2> points, const LkParams& params = {});

/// Tracks a single point; the kernel shared by both drivers above.
LkResult lk_track_point(const ImagePyramid& prev, const ImagePyramid& next, const Vec2& point,
                        const LkParams& params);

// ---------------------------------------------------------------------------
// Track lifecycle
// ---------------------------------------------------------------------------

enum class TrackState { Active, Lost };

struct Observation {
  std::int64_t frame = 0;
  Vec2 pixel;
};

struct Track {
  std::uint64_t id = 0;
  int camera_index = 0;
  std::vector<Observation> positions;  // append-only, one entry per tracked frame
  TrackState status = TrackState::Active;

  const Vec2& latest() const { return positions.back().pixel; }
};

/// Tracks of a single camera plus its monotonically increasing ID counter.
struct TrackSet {
  int camera_index = 0;
  std::vector<Track> tracks;
  std::uint64_t next_id = 0;

  std::size_t active_count() const;
  /// Drops tracks in the Lost state; their IDs are never reissued.
  void prune_lost();
};

struct TrackManagerParams {
  std::size_t target_count = 80;
  double min_separation = 10.0;
  /// New tracks are spawned only this far from the image border so that the
  /// LK window fits on the next frame.
  int spawn_margin = 11;
  FastParams fast;
};

/// Applies LK results (aligned with the Active tracks in order) for frame
/// `frame`, then replenishes with FAST corners when below target.
void manage_tracks(TrackSet& tracks, std::span<const LkResult> tracking, const GrayImage& image,
                   std::int64_t frame, const TrackManagerParams& params);

/// Per-camera tracking stage: owns the previous pyramid and the TrackSet.
class FeatureTracker {
 public:
  FeatureTracker(int camera_index, int pyramid_levels, LkParams lk, TrackManagerParams manager);

  /// Tracks existing points into `image` and replenishes. Returns the tracks
  /// that were lost on this frame (their final observation included).
  std::vector<Track> process(const GrayImage& image, std::int64_t frame);

  const TrackSet& tracks() const { return tracks_; }
  int camera_index() const { return tracks_.camera_index; }

 private:
  int levels_;
  LkParams lk_;
  TrackManagerParams manager_;
  TrackSet tracks_;
  ImagePyramid prev_;
  bool has_prev_ = false;
};

}  // namespace amtu::features
