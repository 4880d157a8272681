#pragma once

#include <optional>
#include <string>
#include <vector>

#include "amtu/percepts.hpp"

namespace amtu::percepts {

struct FrameMetrics {
  std::string name;  // path relative to the ground-truth directory
  MetricsReport metrics;
};

/// One row of a box CSV (frame, x1, y1, x2, y2, class, instance, confidence).
/// `frame` is the label file's relative path without the `_sem.png` suffix.
struct BoxRecord {
  std::string frame;
  ScoredBox box;
};

void save_boxes_csv(const std::string& path, const std::vector<BoxRecord>& rows);
/// Throws ParseError or IoFailure.
std::vector<BoxRecord> load_boxes_csv(const std::string& path);

struct DirectoryEvaluation {
  int num_classes = kDefaultClassCount;
  std::vector<FrameMetrics> frames;
  std::vector<BoxRecord> predicted_boxes;
  std::vector<std::string> missing_pairs;  // ground-truth files without a prediction
  MetricsReport aggregate;                 // pooled over every pixel and box of every pair
};

/// Pairs every `*_sem.png` under gt_dir with the same relative path under
/// pred_dir. Sibling `*_inst.png` files in both trees add boxes for AP. When
/// pred_dir holds a `boxes.csv`, its scored boxes replace the ones extracted
/// from predicted instance maps.
/// Aggregates pool pixels and boxes across frames rather than averaging.
DirectoryEvaluation evaluate_directories(const std::string& pred_dir, const std::string& gt_dir,
                                         int num_classes, int min_box_area = 20);

/// Line-oriented `key value` report with per-frame and aggregate sections.
std::string format_report(const DirectoryEvaluation& ev);

}  // namespace amtu::percepts
