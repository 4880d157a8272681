#include "amtu/percepts.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace amtu::percepts {

SemanticMap::SemanticMap(Label16 labels, int num_classes)
    : labels_(std::move(labels)), num_classes_(num_classes) {
  if (num_classes < 1) fail(ErrorCode::InvalidArgument, "class count must be positive");
  for (std::uint16_t v : labels_.pixels()) {
    if (v < 1 || v > num_classes) {
      fail(ErrorCode::LabelOutOfRange, "semantic label " + std::to_string(v) + " outside [1, N]");
    }
  }
}

std::vector<BoundingBox2D> extract_boxes(const InstanceMap& inst, const SemanticMap& sem,
                                         int min_area) {
  if (inst.width() != sem.width() || inst.height() != sem.height()) {
    fail(ErrorCode::DimensionMismatch, "instance and semantic maps differ in size");
  }
  const int w = inst.width(), h = inst.height();
  std::vector<std::uint8_t> visited(inst.size(), 0);
  std::vector<int> stack;
  std::vector<BoundingBox2D> boxes;
  std::map<int, int> votes;
  for (int sy = 0; sy < h; ++sy) {
    for (int sx = 0; sx < w; ++sx) {
      const std::size_t seed = static_cast<std::size_t>(sy) * w + sx;
      const int id = inst[seed];
      if (id == 0 || visited[seed]) continue;
      BoundingBox2D box{sx, sy, sx, sy, 0, id};
      int area = 0;
      votes.clear();
      visited[seed] = 1;
      stack.assign(1, static_cast<int>(seed));
      while (!stack.empty()) {
        const int idx = stack.back();
        stack.pop_back();
        const int x = idx % w, y = idx / w;
        ++area;
        ++votes[sem.at(x, y)];
        box.x1 = std::min(box.x1, x);
        box.x2 = std::max(box.x2, x);
        box.y1 = std::min(box.y1, y);
        box.y2 = std::max(box.y2, y);
        const int nx[4] = {x - 1, x + 1, x, x};
        const int ny[4] = {y, y, y - 1, y + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
          const std::size_t n = static_cast<std::size_t>(ny[k]) * w + nx[k];
          if (!visited[n] && inst[n] == id) {
            visited[n] = 1;
            stack.push_back(static_cast<int>(n));
          }
        }
      }
      if (area < min_area) continue;
      int best = 0;
      for (const auto& [cls, count] : votes) {
        if (count > best) {
          best = count;
          box.class_id = cls;
        }
      }
      boxes.push_back(box);
    }
  }
  std::sort(boxes.begin(), boxes.end(), [](const BoundingBox2D& a, const BoundingBox2D& b) {
    return std::tie(a.instance_id, a.y1, a.x1) < std::tie(b.instance_id, b.y1, b.x1);
  });
  return boxes;
}

std::pair<Label16, int> remap_instances(const InstanceMap& inst) {
  std::vector<std::uint16_t> ids(inst.pixels().begin(), inst.pixels().end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::erase(ids, std::uint16_t{0});
  std::map<std::uint16_t, std::uint16_t> dense;
  for (std::size_t i = 0; i < ids.size(); ++i) dense[ids[i]] = static_cast<std::uint16_t>(i + 2);
  Label16 out(inst.width(), inst.height());
  for (std::size_t i = 0; i < inst.size(); ++i) out[i] = inst[i] == 0 ? 1 : dense[inst[i]];
  return {std::move(out), static_cast<int>(ids.size()) + 1};
}

double softmax_cross_entropy(const Tensor3& logits, const Label16& labels) {
  if (logits.height() != labels.height() || logits.width() != labels.width()) {
    fail(ErrorCode::ShapeMismatch, "logit spatial size differs from the label map");
  }
  if (labels.empty()) fail(ErrorCode::ShapeMismatch, "empty label map");
  double total = 0.0;
  for (int y = 0; y < labels.height(); ++y) {
    for (int x = 0; x < labels.width(); ++x) {
      const int label = labels.at(x, y);
      if (label < 1 || label > logits.channels()) {
        fail(ErrorCode::LabelOutOfRange, "label outside the channel range");
      }
      const auto l = logits.logits(y, x);
      const double m = *std::max_element(l.begin(), l.end());
      double sum = 0.0;
      for (double v : l) sum += std::exp(v - m);
      total += (m + std::log(sum)) - l[label - 1];
    }
  }
  return total / static_cast<double>(labels.size());
}

double multitask_loss(const Tensor3& sem_logits, const SemanticMap& sem_labels,
                      const Tensor3& inst_logits, const Label16& inst_labels, const LossWeights& w) {
  if (w.alpha < 0.0 || w.beta < 0.0 || !(w.alpha + w.beta > 0.0)) {
    fail(ErrorCode::InvalidArgument, "loss weights must be non-negative with a positive sum");
  }
  if (inst_labels.width() != sem_labels.width() || inst_labels.height() != sem_labels.height()) {
    fail(ErrorCode::ShapeMismatch, "semantic and instance labels differ in size");
  }
  const double ls = softmax_cross_entropy(sem_logits, sem_labels.labels());
  const double lo = softmax_cross_entropy(inst_logits, inst_labels);
  return w.alpha * ls + w.beta * lo;
}

namespace {

void check_same(const SemanticMap& a, const SemanticMap& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    fail(ErrorCode::DimensionMismatch, "prediction and ground truth differ in size");
  }
}

}  // namespace

double overall_accuracy(const SemanticMap& pred, const SemanticMap& gt) {
  check_same(pred, gt);
  const auto p = pred.labels().pixels();
  const auto g = gt.labels().pixels();
  if (p.empty()) fail(ErrorCode::DimensionMismatch, "empty maps");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.size(); ++i) correct += p[i] == g[i];
  return static_cast<double>(correct) / static_cast<double>(p.size());
}

IouResult mean_iou(const SemanticMap& pred, const SemanticMap& gt, int num_classes) {
  check_same(pred, gt);
  std::vector<std::size_t> inter(num_classes + 1, 0), pred_count(num_classes + 1, 0),
      gt_count(num_classes + 1, 0);
  const auto p = pred.labels().pixels();
  const auto g = gt.labels().pixels();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 1 || p[i] > num_classes || g[i] < 1 || g[i] > num_classes) {
      fail(ErrorCode::LabelOutOfRange, "label outside [1, N]");
    }
    ++pred_count[p[i]];
    ++gt_count[g[i]];
    if (p[i] == g[i]) ++inter[p[i]];
  }
  IouResult out;
  out.per_class.resize(num_classes);
  double sum = 0.0;
  int present = 0;
  for (int c = 1; c <= num_classes; ++c) {
    const std::size_t uni = pred_count[c] + gt_count[c] - inter[c];
    if (uni == 0) continue;
    const double iou = static_cast<double>(inter[c]) / static_cast<double>(uni);
    out.per_class[c - 1] = iou;
    sum += iou;
    ++present;
  }
  out.mean_iou = present > 0 ? sum / present : 0.0;
  return out;
}

double box_iou(const BoundingBox2D& a, const BoundingBox2D& b) {
  const long iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1) + 1;
  const long ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1) + 1;
  const long inter = std::max(0L, iw) * std::max(0L, ih);
  const long area_a = static_cast<long>(a.x2 - a.x1 + 1) * (a.y2 - a.y1 + 1);
  const long area_b = static_cast<long>(b.x2 - b.x1 + 1) * (b.y2 - b.y1 + 1);
  return static_cast<double>(inter) / static_cast<double>(area_a + area_b - inter);
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

namespace {

// All-point interpolated area under the PR curve given per-detection TP flags
// in descending-confidence order.
double pr_area(const std::vector<bool>& tp, std::size_t num_gt) {
  std::vector<double> recall, precision;
  std::size_t cum_tp = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    cum_tp += tp[i];
    recall.push_back(static_cast<double>(cum_tp) / static_cast<double>(num_gt));
    precision.push_back(static_cast<double>(cum_tp) / static_cast<double>(i + 1));
  }
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double area = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    if (mrec[i] != mrec[i - 1]) area += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return area;
}

}  // namespace

std::optional<double> average_precision(std::span<const FrameBoxes> frames,
                                        std::span<const double> iou_thresholds) {
  std::map<int, std::size_t> gt_per_class;
  for (const auto& f : frames) {
    for (const auto& g : f.ground_truth) ++gt_per_class[g.class_id];
  }
  if (gt_per_class.empty()) return std::nullopt;
  if (iou_thresholds.empty()) fail(ErrorCode::InvalidArgument, "no IoU thresholds");

  struct Det {
    std::size_t frame;
    std::size_t index;
    double confidence;
  };
  double sum = 0.0;
  for (const auto& [cls, num_gt] : gt_per_class) {
    std::vector<Det> dets;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const auto& preds = frames[f].predictions;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].box.class_id == cls) dets.push_back({f, i, preds[i].confidence});
      }
    }
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Det& a, const Det& b) { return a.confidence > b.confidence; });
    for (double thr : iou_thresholds) {
      std::vector<std::vector<bool>> matched(frames.size());
      for (std::size_t f = 0; f < frames.size(); ++f) {
        matched[f].assign(frames[f].ground_truth.size(), false);
      }
      std::vector<bool> tp;
      tp.reserve(dets.size());
      for (const Det& d : dets) {
        const auto& gts = frames[d.frame].ground_truth;
        const auto& box = frames[d.frame].predictions[d.index].box;
        double best_iou = -1.0;
        std::size_t best = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
          if (gts[g].class_id != cls || matched[d.frame][g]) continue;
          const double iou = box_iou(box, gts[g]);
          if (iou > best_iou) {
            best_iou = iou;
            best = g;
          }
        }
        const bool hit = best < gts.size() && best_iou >= thr;
        if (hit) matched[d.frame][best] = true;
        tp.push_back(hit);
      }
      sum += pr_area(tp, num_gt);
    }
  }
  return sum / static_cast<double>(gt_per_class.size() * iou_thresholds.size());
}

std::optional<double> average_precision(std::span<const ScoredBox> predictions,
                                        std::span<const BoundingBox2D> ground_truth,
                                        std::span<const double> iou_thresholds) {
  const FrameBoxes frame{{predictions.begin(), predictions.end()},
                         {ground_truth.begin(), ground_truth.end()}};
  return average_precision(std::span<const FrameBoxes>(&frame, 1), iou_thresholds);
}

}  // namespace amtu::percepts
