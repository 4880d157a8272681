#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "scenarios.hpp"

#include "amtu/features.hpp"

using namespace amtu;
using namespace amtu::features;

TEST_CASE("fast_pixel_score matches the exhaustive segment test") {
  std::mt19937 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const GrayImage img = oracle::random_image(rng, 24, 24);
    for (int n : {9, 10, 12}) {
      for (int y = 3; y < 21; ++y) {
        for (int x = 3; x < 21; ++x) {
          REQUIRE(fast_pixel_score(img, x, y, 25, n) == oracle::fast_score(img, x, y, 25, n));
        }
      }
    }
  }
}

TEST_CASE("fast candidates and NMS agree with oracles") {
  std::mt19937 rng(2);
  for (int trial = 0; trial < 8; ++trial) {
    const GrayImage img = trial % 2 ? oracle::random_image(rng, 48, 40) : oracle::textured_image(rng, 48, 40, 30);
    FastParams p;
    p.threshold = 20 + 5 * trial;
    p.arc_length = 9 + trial % 4;
    const auto cands = oracle::fast_candidates(img, p.threshold, p.arc_length);
    CHECK(oracle::as_corners(fast_candidates(img, p)) == cands);
    CHECK(oracle::as_corners(fast_detect(img, p)) == oracle::nms(cands, p.nms_radius));
    CHECK(oracle::as_corners(fast_detect_serial(img, p)) == oracle::as_corners(fast_detect(img, p)));
  }
}

TEST_CASE("fast_detect trivial and hand cases") {
  CHECK(fast_detect(GrayImage(32, 32, 90)).empty());
  CHECK_THROWS_AS(fast_detect(GrayImage(15, 40, 0)), Error);

  GrayImage sq(32, 32, 20);
  for (int y = 11; y < 21; ++y) {
    for (int x = 11; x < 21; ++x) sq.at(x, y) = 200;
  }
  FastParams p;
  p.threshold = 40;
  const auto kps = fast_detect(sq, p);
  std::set<std::pair<int, int>> got;
  for (const auto& k : kps) got.insert({static_cast<int>(k.position.x()), static_cast<int>(k.position.y())});
  CHECK(got == std::set<std::pair<int, int>>{{11, 11}, {20, 11}, {11, 20}, {20, 20}});
}

TEST_CASE("fast_detect is invariant to an intensity offset") {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    GrayImage img = oracle::random_image(rng, 40, 40);
    for (auto& v : img.pixels()) v = static_cast<std::uint8_t>(v / 2 + 40);
    GrayImage brighter = img;
    for (auto& v : brighter.pixels()) v = static_cast<std::uint8_t>(v + 30);
    CHECK(oracle::as_corners(fast_detect(img)) == oracle::as_corners(fast_detect(brighter)));
  }
}

TEST_CASE("build_pyramid") {
  const ImagePyramid one = build_pyramid(GrayImage(20, 20, 5), 1);
  CHECK(one.size() == 1);

  GrayImage checker(32, 32);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) checker.at(x, y) = (x + y) % 2 ? 255 : 0;
  }
  const ImagePyramid p = build_pyramid(checker, 2);
  REQUIRE(p.size() == 2);
  CHECK(p.levels[0] == checker);
  CHECK(p.levels[1] == GrayImage(16, 16, 128));

  std::mt19937 rng(4);
  const GrayImage img = oracle::random_image(rng, 65, 47);
  const ImagePyramid q = build_pyramid(img, 2);
  REQUIRE(q.levels[1].width() == 32);
  REQUIRE(q.levels[1].height() == 23);
  for (int y = 0; y < 23; ++y) {
    for (int x = 0; x < 32; ++x) {
      const int s = img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) + img.at(2 * x, 2 * y + 1) +
                    img.at(2 * x + 1, 2 * y + 1);
      CHECK(std::abs(q.levels[1].at(x, y) - s / 4.0) <= 0.5);
    }
  }
  CHECK_THROWS_AS(build_pyramid(GrayImage(40, 40), 3), Error);
}

TEST_CASE("lk_track recovers integer shifts") {
  std::mt19937 rng(5);
  const GrayImage big = oracle::textured_image(rng, 260, 220, 900);
  const std::vector<std::pair<int, int>> shifts{{3, -2}, {-8, 8}, {0, 0}, {7, 1}};
  for (auto [sx, sy] : shifts) {
    const GrayImage prev = scenario::shifted_crop(big, 20, 20, 220, 180);
    const GrayImage next = scenario::shifted_crop(big, 20 - sx, 20 - sy, 220, 180);
    const ImagePyramid pp = build_pyramid(prev, 3), pn = build_pyramid(next, 3);
    std::vector<Vec2> pts;
    for (int y = 40; y < 140; y += 9) {
      for (int x = 40; x < 180; x += 9) pts.emplace_back(x, y);
    }
    const auto res = lk_track(pp, pn, pts);
    int good = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (res[i].status == TrackStatus::TrackedOk && (res[i].position - pts[i] - Vec2(sx, sy)).norm() < 0.1) ++good;
    }
    CHECK(good >= 0.95 * pts.size());
    const auto serial = lk_track_serial(pp, pn, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(serial[i].status == res[i].status);
      CHECK(serial[i].position == res[i].position);
    }
  }
}

TEST_CASE("lk_track statuses") {
  const GrayImage flat(64, 64, 77);
  const ImagePyramid p = build_pyramid(flat, 2);
  const std::vector<Vec2> pts{{32, 32}};
  CHECK(lk_track(p, p, pts)[0].status == TrackStatus::LostLowTexture);

  std::mt19937 rng(6);
  const GrayImage tex = oracle::textured_image(rng, 64, 64, 60);
  const ImagePyramid t = build_pyramid(tex, 2);
  const std::vector<Vec2> edge{{2, 2}};
  CHECK(lk_track(t, t, edge)[0].status == TrackStatus::LostOutOfBounds);
  const auto same = lk_track(t, t, pts);
  if (same[0].status == TrackStatus::TrackedOk) CHECK((same[0].position - pts[0]).norm() < 1e-3);

  CHECK_THROWS_AS(lk_track(t, build_pyramid(tex, 1), pts), Error);
}

TEST_CASE("manage_tracks lifecycle") {
  std::mt19937 rng(7);
  const GrayImage img = oracle::textured_image(rng, 320, 240, 400);
  TrackManagerParams mp;
  mp.target_count = 50;
  TrackSet ts;
  manage_tracks(ts, {}, img, 0, mp);
  REQUIRE(ts.active_count() == 50);
  for (std::size_t i = 0; i < ts.tracks.size(); ++i) CHECK(ts.tracks[i].id == i);

  // No-op when everything tracked and the target is met.
  const TrackSet before = ts;
  std::vector<LkResult> ok;
  for (const auto& t : ts.tracks) ok.push_back({t.latest(), TrackStatus::TrackedOk});
  manage_tracks(ts, ok, img, 1, mp);
  CHECK(ts.tracks.size() == before.tracks.size());
  CHECK(ts.next_id == before.next_id);

  // Lose ten; replenish with fresh ids.
  std::vector<LkResult> lk;
  for (std::size_t i = 0; i < ts.tracks.size(); ++i) {
    lk.push_back({ts.tracks[i].latest(), i < 10 ? TrackStatus::LostDiverged : TrackStatus::TrackedOk});
  }
  manage_tracks(ts, lk, img, 2, mp);
  CHECK(ts.active_count() == 50);
  std::set<std::uint64_t> ids;
  std::vector<Vec2> active;
  for (const auto& t : ts.tracks) {
    CHECK(ids.insert(t.id).second);
    if (t.status == TrackState::Active) active.push_back(t.latest());
  }
  CHECK(ts.next_id == 60);
  for (std::size_t i = 0; i < active.size(); ++i) {
    for (std::size_t j = i + 1; j < active.size(); ++j) {
      CHECK((active[i] - active[j]).norm() >= mp.min_separation - 1e-9);
    }
  }
  ts.prune_lost();
  CHECK(ts.tracks.size() == 50);
  manage_tracks(ts, std::vector<LkResult>(50, LkResult{{1, 1}, TrackStatus::LostLowTexture}), img, 3, mp);
  for (const auto& t : ts.tracks) {
    if (t.status == TrackState::Active) CHECK(t.id >= 60);
  }
}
