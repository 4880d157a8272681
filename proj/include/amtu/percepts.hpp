#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "amtu/image.hpp"

namespace amtu::percepts {

inline constexpr int kDefaultClassCount = 37;

/// Per-pixel semantic class ids in [1, N].
class SemanticMap {
 public:
  SemanticMap() = default;
  /// Validates every label against [1, num_classes]; throws LabelOutOfRange.
  SemanticMap(Label16 labels, int num_classes = kDefaultClassCount);

  int width() const { return labels_.width(); }
  int height() const { return labels_.height(); }
  int num_classes() const { return num_classes_; }
  int at(int x, int y) const { return labels_.at(x, y); }
  const Label16& labels() const { return labels_; }

 private:
  Label16 labels_;
  int num_classes_ = kDefaultClassCount;
};

/// Per-pixel instance ids; 0 means no instance.
using InstanceMap = Label16;

struct BoundingBox2D {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int class_id = 0;
  int instance_id = 0;
  friend bool operator==(const BoundingBox2D&, const BoundingBox2D&) = default;
};

/// One box per 4-connected component of each nonzero instance id with at
/// least min_area pixels; class by majority vote (ties to the lower id).
/// Sorted by instance id, then y1 (then x1).
std::vector<BoundingBox2D> extract_boxes(const InstanceMap& inst, const SemanticMap& sem,
                                         int min_area = 20);

// ---------------------------------------------------------------------------
// Multi-task loss
// ---------------------------------------------------------------------------

/// H x W x C logits, channel-last.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int height, int width, int channels, double fill = 0.0)
      : h_(height), w_(width), c_(channels),
        data_(static_cast<std::size_t>(height) * width * channels, fill) {}

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  double& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c]; }
  double at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c];
  }
  std::span<const double> logits(int y, int x) const {
    return {data_.data() + (static_cast<std::size_t>(y) * w_ + x) * c_, static_cast<std::size_t>(c_)};
  }

 private:
  int h_ = 0, w_ = 0, c_ = 0;
  std::vector<double> data_;
};

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
};

/// Dense instance labels for the loss: background -> 1, instances in
/// ascending id order -> 2..K. Returns the relabeled map and K.
std::pair<Label16, int> remap_instances(const InstanceMap& inst);

/// Mean per-pixel softmax cross entropy; labels in [1, channels].
double softmax_cross_entropy(const Tensor3& logits, const Label16& labels);

/// alpha * L_S + beta * L_O. Throws ShapeMismatch or LabelOutOfRange.
double multitask_loss(const Tensor3& sem_logits, const SemanticMap& sem_labels,
                      const Tensor3& inst_logits, const Label16& inst_labels, const LossWeights& w);

// ---------------------------------------------------------------------------
// Evaluation metrics
// ---------------------------------------------------------------------------

double overall_accuracy(const SemanticMap& pred, const SemanticMap& gt);

struct IouResult {
  double mean_iou = 0.0;
  /// Index c-1 holds class c; empty when the class is absent from both maps.
  std::vector<std::optional<double>> per_class;
};

IouResult mean_iou(const SemanticMap& pred, const SemanticMap& gt, int num_classes);

struct ScoredBox {
  BoundingBox2D box;
  double confidence = 1.0;
};

double box_iou(const BoundingBox2D& a, const BoundingBox2D& b);

/// 0.50, 0.55, ..., 0.95.
std::vector<double> coco_thresholds();

/// Greedy confidence-ordered matching per class and threshold, all-point
/// interpolated PR area, averaged over gt classes and thresholds. Empty when
/// the ground truth has no boxes (AP undefined).
std::optional<double> average_precision(std::span<const ScoredBox> predictions,
                                        std::span<const BoundingBox2D> ground_truth,
                                        std::span<const double> iou_thresholds);

/// Multi-frame form: matching happens within each frame, PR curves pool all frames.
struct FrameBoxes {
  std::vector<ScoredBox> predictions;
  std::vector<BoundingBox2D> ground_truth;
};
std::optional<double> average_precision(std::span<const FrameBoxes> frames,
                                        std::span<const double> iou_thresholds);

struct MetricsReport {
  double overall_accuracy = 0.0;
  double mean_iou = 0.0;
  std::optional<double> average_precision;
  std::vector<std::optional<double>> per_class_iou;
};

}  // namespace amtu::percepts
