#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "scenarios.hpp"

#include "amtu/evaluate.hpp"
#include "amtu/percepts.hpp"

using namespace amtu;
using namespace amtu::percepts;

using scenario::random_box_frames;
using scenario::random_labels;
using scenario::random_logits;

namespace {

/// Flood fill per instance id; boxes sorted by (instance, y1, x1).
std::vector<BoundingBox2D> boxes_oracle(const Label16& inst, const Label16& sem, int min_area) {
  const int w = inst.width(), h = inst.height();
  std::vector<int> seen(static_cast<std::size_t>(w) * h, 0);
  std::vector<BoundingBox2D> out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = inst.at(x, y);
      if (id == 0 || seen[y * w + x]) continue;
      std::vector<std::pair<int, int>> stack{{x, y}}, comp;
      seen[y * w + x] = 1;
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        comp.push_back({cx, cy});
        const int nx[4] = {cx + 1, cx - 1, cx, cx};
        const int ny[4] = {cy, cy, cy + 1, cy - 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
          if (inst.at(nx[k], ny[k]) != id || seen[ny[k] * w + nx[k]]) continue;
          seen[ny[k] * w + nx[k]] = 1;
          stack.push_back({nx[k], ny[k]});
        }
      }
      if (static_cast<int>(comp.size()) < min_area) continue;
      BoundingBox2D b{w, h, -1, -1, 0, id};
      std::map<int, int> votes;
      for (auto [px, py] : comp) {
        b.x1 = std::min(b.x1, px);
        b.y1 = std::min(b.y1, py);
        b.x2 = std::max(b.x2, px);
        b.y2 = std::max(b.y2, py);
        ++votes[sem.at(px, py)];
      }
      int best = 0;
      for (auto [c, n] : votes) {
        if (n > best) {
          best = n;
          b.class_id = c;
        }
      }
      out.push_back(b);
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.instance_id, a.y1, a.x1) < std::tie(b.instance_id, b.y1, b.x1);
  });
  return out;
}

double ce_oracle(const Tensor3& t, const Label16& labels) {
  double sum = 0.0;
  for (int y = 0; y < t.height(); ++y) {
    for (int x = 0; x < t.width(); ++x) {
      long double z = 0.0L;
      for (int c = 0; c < t.channels(); ++c) z += std::exp(static_cast<long double>(t.at(y, x, c)));
      sum += static_cast<double>(std::log(z) - t.at(y, x, labels.at(x, y) - 1));
    }
  }
  return sum / (t.height() * t.width());
}

}  // namespace

TEST_CASE("SemanticMap validates labels") {
  CHECK_THROWS_AS(SemanticMap(Label16(4, 4, 0), 37), Error);
  CHECK_THROWS_AS(SemanticMap(Label16(4, 4, 38), 37), Error);
  CHECK_NOTHROW(SemanticMap(Label16(4, 4, 37), 37));
}

TEST_CASE("extract_boxes hand cases and flood-fill oracle") {
  CHECK(extract_boxes(Label16(16, 16, 0), SemanticMap(Label16(16, 16, 1), 37)).empty());

  Label16 inst(32, 16, 0), sem(32, 16, 1);
  for (int y = 5; y <= 8; ++y) {
    for (int x = 10; x <= 20; ++x) {
      inst.at(x, y) = 4;
      sem.at(x, y) = 3;
    }
  }
  const auto one = extract_boxes(inst, SemanticMap(sem, 37));
  REQUIRE(one.size() == 1);
  CHECK(one[0] == BoundingBox2D{10, 5, 20, 8, 3, 4});

  Label16 split(32, 16, 0);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 5; ++x) {
      split.at(x + 1, y + 1) = 9;
      split.at(x + 20, y + 8) = 9;
    }
  }
  CHECK(extract_boxes(split, SemanticMap(sem, 37)).size() == 2);
  CHECK_THROWS_AS(extract_boxes(Label16(8, 8, 0), SemanticMap(sem, 37)), Error);

  std::mt19937 rng(31);
  std::uniform_int_distribution<int> id(0, 4), cls(1, 5), pos(0, 27), size(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    Label16 in(32, 32, 0), sm = random_labels(rng, 32, 32, 5);
    for (int k = 0; k < 8; ++k) {
      const int i = id(rng), x0 = pos(rng), y0 = pos(rng), bw = size(rng), bh = size(rng);
      for (int y = y0; y < std::min(32, y0 + bh); ++y) {
        for (int x = x0; x < std::min(32, x0 + bw); ++x) in.at(x, y) = static_cast<std::uint16_t>(i);
      }
    }
    const int min_area = trial % 3 == 0 ? 1 : 20;
    const auto got = extract_boxes(in, SemanticMap(sm, 5), min_area);
    const auto want = boxes_oracle(in, sm, min_area);
    CHECK(got == want);
    // Each box edge touches a pixel of its instance.
    for (const auto& b : got) {
      bool top = false, bottom = false, left = false, right = false;
      for (int x = b.x1; x <= b.x2; ++x) {
        top |= in.at(x, b.y1) == b.instance_id;
        bottom |= in.at(x, b.y2) == b.instance_id;
      }
      for (int y = b.y1; y <= b.y2; ++y) {
        left |= in.at(b.x1, y) == b.instance_id;
        right |= in.at(b.x2, y) == b.instance_id;
      }
      CHECK((top && bottom && left && right));
    }
  }
}

TEST_CASE("remap_instances") {
  Label16 inst(3, 2, 0);
  inst.at(0, 0) = 40;
  inst.at(1, 0) = 7;
  inst.at(2, 1) = 40;
  const auto [dense, k] = remap_instances(inst);
  CHECK(k == 3);
  CHECK(dense.at(0, 0) == 3);
  CHECK(dense.at(1, 0) == 2);
  CHECK(dense.at(2, 0) == 1);
  CHECK(dense.at(2, 1) == 3);
}

TEST_CASE("multitask_loss hand cases") {
  Tensor3 s(1, 1, 2), o(1, 1, 2);
  const SemanticMap one(Label16(1, 1, 1), 2);
  CHECK(std::abs(multitask_loss(s, one, o, Label16(1, 1, 1), {1.0, 0.0}) - std::log(2.0)) < 1e-12);

  std::mt19937 rng(32);
  Tensor3 sem = random_logits(rng, 4, 5, 6), inst = random_logits(rng, 4, 5, 3);
  const Label16 sl = random_labels(rng, 5, 4, 6), il = random_labels(rng, 5, 4, 3);
  const SemanticMap sm(sl, 6);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      sem.at(y, x, sl.at(x, y) - 1) = 1e6;
      inst.at(y, x, il.at(x, y) - 1) = 1e6;
    }
  }
  CHECK(multitask_loss(sem, sm, inst, il, {0.7, 1.9}) < 1e-9);

  const Tensor3 sem2 = random_logits(rng, 4, 5, 6), inst2 = random_logits(rng, 4, 5, 3);
  CHECK(multitask_loss(sem2, sm, inst2, il, {0.0, 1.3}) == 1.3 * softmax_cross_entropy(inst2, il));
  CHECK(std::abs(softmax_cross_entropy(sem2, sl) - ce_oracle(sem2, sl)) < 1e-12);

  CHECK_THROWS_AS(multitask_loss(sem2, sm, random_logits(rng, 4, 4, 3), il, {}), Error);
  CHECK_THROWS_AS(multitask_loss(sem2, sm, inst2, Label16(5, 4, 4), {}), Error);
}

TEST_CASE("multitask_loss properties") {
  std::mt19937 rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 1 + trial % 5, w = 2 + trial % 7, n = 2 + trial % 6, k = 2 + trial % 4;
    const Tensor3 sem = random_logits(rng, h, w, n), inst = random_logits(rng, h, w, k);
    const Label16 sl = random_labels(rng, w, h, n), il = random_labels(rng, w, h, k);
    const SemanticMap sm(sl, n);
    const LossWeights wt{0.3 + trial * 0.01, 1.1};
    const double base = multitask_loss(sem, sm, inst, il, wt);
    CHECK(std::abs(multitask_loss(sem, sm, inst, il, {2 * wt.alpha, 2 * wt.beta}) - 2 * base) < 1e-12);

    Tensor3 sem_s = sem, inst_s = inst;
    std::uniform_real_distribution<double> shift(-50.0, 50.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double a = shift(rng), b = shift(rng);
        for (int c = 0; c < n; ++c) sem_s.at(y, x, c) += a;
        for (int c = 0; c < k; ++c) inst_s.at(y, x, c) += b;
      }
    }
    CHECK(std::abs(multitask_loss(sem_s, sm, inst_s, il, wt) - base) < 1e-9);
  }
}

TEST_CASE("overall_accuracy and mean_iou against oracles") {
  const SemanticMap a(Label16(4, 4, 2), 4);
  CHECK(overall_accuracy(a, a) == 1.0);
  Label16 half(4, 4, 2);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 4; ++x) half.at(x, y) = 3;
  }
  CHECK(overall_accuracy(SemanticMap(half, 4), a) == 0.5);

  Label16 three(3, 1, 1);
  three.at(1, 0) = 2;
  three.at(2, 0) = 3;
  CHECK(mean_iou(SemanticMap(three, 4), SemanticMap(three, 4), 4).mean_iou == 1.0);

  // Class in gt never predicted: IoU 0 and counted.
  const IouResult missed = mean_iou(SemanticMap(Label16(3, 1, 1), 4), SemanticMap(three, 4), 4);
  REQUIRE(missed.per_class[2].has_value());
  CHECK(*missed.per_class[2] == 0.0);
  CHECK(!missed.per_class[3].has_value());
  CHECK(missed.mean_iou == doctest::Approx((1.0 / 3.0) / 3.0));

  std::mt19937 rng(34);
  for (int trial = 0; trial < 200; ++trial) {
    const int w = 1 + trial % 32, h = 1 + (trial * 7) % 32, n = 2 + trial % 6;
    const Label16 p = random_labels(rng, w, h, n), g = random_labels(rng, w, h, n);
    const SemanticMap sp(p, n), sg(g, n);
    CHECK(std::abs(overall_accuracy(sp, sg) - oracle::overall_accuracy(p, g)) <= 1e-12);
    CHECK(std::abs(mean_iou(sp, sg, n).mean_iou - oracle::mean_iou(p, g, n)) <= 1e-12);
  }
  CHECK_THROWS_AS(overall_accuracy(SemanticMap(Label16(2, 2, 1), 4), a), Error);
}

TEST_CASE("mean_iou and overall_accuracy are invariant under class relabeling") {
  std::mt19937 rng(35);
  std::vector<std::uint16_t> perm{1, 2, 3, 4, 5};
  for (int trial = 0; trial < 20; ++trial) {
    const Label16 p = random_labels(rng, 9, 7, 5), g = random_labels(rng, 9, 7, 5);
    std::shuffle(perm.begin(), perm.end(), rng);
    Label16 pp = p, gp = g;
    for (auto& v : pp.pixels()) v = perm[v - 1];
    for (auto& v : gp.pixels()) v = perm[v - 1];
    CHECK(overall_accuracy(SemanticMap(p, 5), SemanticMap(g, 5)) == overall_accuracy(SemanticMap(pp, 5), SemanticMap(gp, 5)));
    CHECK(std::abs(mean_iou(SemanticMap(p, 5), SemanticMap(g, 5), 5).mean_iou -
                   mean_iou(SemanticMap(pp, 5), SemanticMap(gp, 5), 5).mean_iou) < 1e-12);
  }
}

TEST_CASE("box_iou against pixel counting") {
  std::mt19937 rng(36);
  std::uniform_int_distribution<int> c(0, 20), s(0, 10);
  for (int i = 0; i < 300; ++i) {
    const int ax = c(rng), ay = c(rng), bx = c(rng), by = c(rng);
    const BoundingBox2D a{ax, ay, ax + s(rng), ay + s(rng), 1, 1};
    const BoundingBox2D b{bx, by, bx + s(rng), by + s(rng), 1, 2};
    CHECK(box_iou(a, b) == oracle::box_iou(a, b));
  }
}

TEST_CASE("average_precision cases and oracle") {
  const auto th = coco_thresholds();
  REQUIRE(th.size() == 10);
  CHECK(th.front() == 0.5);
  CHECK(th.back() == doctest::Approx(0.95));

  const std::vector<BoundingBox2D> gt{{0, 0, 9, 9, 1, 1}, {20, 20, 29, 25, 2, 2}};
  std::vector<ScoredBox> perfect;
  for (const auto& g : gt) perfect.push_back({g, 1.0});
  CHECK(average_precision(perfect, gt, th) == 1.0);
  CHECK(average_precision({}, gt, th) == 0.0);
  CHECK(!average_precision(perfect, {}, th).has_value());

  // Three gt, four predictions with known overlaps.
  const std::vector<BoundingBox2D> g3{{0, 0, 9, 9, 1, 1}, {20, 0, 29, 9, 1, 2}, {40, 0, 49, 9, 1, 3}};
  const std::vector<ScoredBox> p4{{{0, 0, 9, 9, 1, 0}, 0.9}, {{1, 0, 10, 9, 1, 0}, 0.8}, {{22, 0, 31, 9, 1, 0}, 0.7},
                                  {{60, 0, 69, 9, 1, 0}, 0.6}};
  const std::vector<FrameBoxes> frame{{p4, g3}};
  CHECK(std::abs(*average_precision(p4, g3, th) - *oracle::average_precision(frame, th)) < 1e-12);

  std::mt19937 rng(37);
  for (int trial = 0; trial < 200; ++trial) {
    const std::vector<FrameBoxes> frames = random_box_frames(rng, 1 + trial % 3);
    const auto got = average_precision(frames, th);
    const auto want = oracle::average_precision(frames, th);
    REQUIRE(got.has_value() == want.has_value());
    if (got) CHECK(std::abs(*got - *want) <= 1e-12);

    // Non-increasing in the IoU threshold.
    if (got) {
      double prev = 2.0;
      for (double t : th) {
        const double ap = *average_precision(frames, std::vector<double>{t});
        CHECK(ap <= prev + 1e-12);
        prev = ap;
      }
    }
  }
}

TEST_CASE("evaluate_directories pools pairs") {
  const char* tmp = std::getenv("AMTU_TEST_TMP");
  const std::filesystem::path root = std::filesystem::path(tmp ? tmp : "/tmp/amtu_test_percepts") / "eval";
  std::filesystem::remove_all(root);
  std::filesystem::create_directories(root / "pred" / "cam0");
  std::filesystem::create_directories(root / "gt" / "cam0");

  std::mt19937 rng(38);
  std::vector<Label16> ps, gs;
  for (int i = 0; i < 3; ++i) {
    const Label16 p = random_labels(rng, 8, 6, 4), g = random_labels(rng, 8, 6, 4);
    const std::string name = "cam0/frame_00000" + std::to_string(i) + "_sem.png";
    write_label16_png(p, (root / "pred" / name).string());
    write_label16_png(g, (root / "gt" / name).string());
    ps.push_back(p);
    gs.push_back(g);
  }
  write_label16_png(random_labels(rng, 8, 6, 4), (root / "gt" / "cam0" / "frame_000009_sem.png").string());

  const auto ev = evaluate_directories((root / "pred").string(), (root / "gt").string(), 4);
  CHECK(ev.frames.size() == 3);
  REQUIRE(ev.missing_pairs.size() == 1);
  CHECK(ev.missing_pairs[0] == "cam0/frame_000009_sem.png");

  Label16 pp(8, 18), gp(8, 18);
  for (int i = 0; i < 3; ++i) {
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 8; ++x) {
        pp.at(x, 6 * i + y) = ps[i].at(x, y);
        gp.at(x, 6 * i + y) = gs[i].at(x, y);
      }
    }
  }
  CHECK(std::abs(ev.aggregate.overall_accuracy - oracle::overall_accuracy(pp, gp)) < 1e-12);
  CHECK(std::abs(ev.aggregate.mean_iou - oracle::mean_iou(pp, gp, 4)) < 1e-12);
  CHECK(!ev.aggregate.average_precision.has_value());
  const std::string report = format_report(ev);
  CHECK(report.find("pairs 3") != std::string::npos);
  CHECK(report.find("missing_pair cam0/frame_000009_sem.png") != std::string::npos);

  CHECK_THROWS_AS(evaluate_directories((root / "nope").string(), (root / "gt").string(), 4), Error);
}

TEST_CASE("box CSV round trip and scored boxes in evaluate_directories") {
  const char* tmp = std::getenv("AMTU_TEST_TMP");
  const std::filesystem::path root = std::filesystem::path(tmp ? tmp : "/tmp/amtu_test_percepts") / "eval_boxes";
  std::filesystem::remove_all(root);
  std::filesystem::create_directories(root / "pred");
  std::filesystem::create_directories(root / "gt");

  Label16 sem(20, 16), inst(20, 16);
  for (auto& v : sem.pixels()) v = 1;
  for (int y = 4; y < 12; ++y) {
    for (int x = 3; x < 10; ++x) {
      sem.at(x, y) = 2;
      inst.at(x, y) = 5;
    }
  }
  for (const char* d : {"pred", "gt"}) {
    write_label16_png(sem, (root / d / "frame_000001_sem.png").string());
    write_label16_png(inst, (root / d / "frame_000001_inst.png").string());
  }
  const auto gt_boxes = extract_boxes(inst, SemanticMap(sem, 4));
  REQUIRE(gt_boxes.size() == 1);

  // A false positive outranks the true box: precision 1/2 at full recall.
  BoundingBox2D fp{12, 0, 19, 3, 2, 8};
  std::vector<BoxRecord> rows{{"frame_000001", {gt_boxes[0], 0.5}}, {"frame_000001", {fp, 0.75}}};
  save_boxes_csv((root / "pred" / "boxes.csv").string(), rows);
  const auto back = load_boxes_csv((root / "pred" / "boxes.csv").string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].frame == "frame_000001");
  CHECK(back[0].box.box == gt_boxes[0]);
  CHECK(back[1].box.confidence == 0.75);

  const auto ev = evaluate_directories((root / "pred").string(), (root / "gt").string(), 4);
  REQUIRE(ev.aggregate.average_precision.has_value());
  CHECK(*ev.aggregate.average_precision == doctest::Approx(0.5));
  CHECK(ev.predicted_boxes.size() == 2);

  rows[1].box.confidence = 0.25;
  save_boxes_csv((root / "pred" / "boxes.csv").string(), rows);
  const auto ev2 = evaluate_directories((root / "pred").string(), (root / "gt").string(), 4);
  CHECK(*ev2.aggregate.average_precision == doctest::Approx(1.0));
}
