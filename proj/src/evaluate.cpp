#include "amtu/evaluate.hpp"

#include <algorithm>
#include <filesystem>
#include <map>

#include <fmt/format.h>

#include "amtu/csv.hpp"

namespace amtu::percepts {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kSemSuffix = "_sem.png";
constexpr std::string_view kInstSuffix = "_inst.png";

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string inst_sibling(const std::string& sem_path) {
  return sem_path.substr(0, sem_path.size() - kSemSuffix.size()) + std::string(kInstSuffix);
}

Label16 flatten(const std::vector<const Label16*>& maps) {
  std::vector<std::uint16_t> all;
  for (const auto* m : maps) all.insert(all.end(), m->pixels().begin(), m->pixels().end());
  const int n = static_cast<int>(all.size());
  return Label16(n, 1, std::move(all));
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : "nan"; }

}  // namespace

void save_boxes_csv(const std::string& path, const std::vector<BoxRecord>& rows) {
  CsvWriter out(path, "frame,x1,y1,x2,y2,class,instance,confidence");
  for (const auto& r : rows) {
    const auto& b = r.box.box;
    out.row("{},{},{},{},{},{},{},{:.6f}", r.frame, b.x1, b.y1, b.x2, b.y2, b.class_id, b.instance_id,
            r.box.confidence);
  }
}

std::vector<BoxRecord> load_boxes_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  const std::size_t cf = t.column("frame"), c1 = t.column("x1"), c2 = t.column("y1"), c3 = t.column("x2"),
                    c4 = t.column("y2"), cc = t.column("class"), ci = t.column("instance"),
                    cs = t.column("confidence");
  std::vector<BoxRecord> out;
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) fail(ErrorCode::ParseError, "ragged row in " + path);
    BoxRecord rec;
    rec.frame = r[cf];
    auto& b = rec.box.box;
    b.x1 = static_cast<int>(parse_int(r[c1]));
    b.y1 = static_cast<int>(parse_int(r[c2]));
    b.x2 = static_cast<int>(parse_int(r[c3]));
    b.y2 = static_cast<int>(parse_int(r[c4]));
    b.class_id = static_cast<int>(parse_int(r[cc]));
    b.instance_id = static_cast<int>(parse_int(r[ci]));
    rec.box.confidence = parse_double(r[cs]);
    if (b.x2 < b.x1 || b.y2 < b.y1) fail(ErrorCode::ParseError, "inverted box in " + path);
    out.push_back(std::move(rec));
  }
  return out;
}

DirectoryEvaluation evaluate_directories(const std::string& pred_dir, const std::string& gt_dir,
                                         int num_classes, int min_box_area) {
  if (!fs::is_directory(gt_dir)) fail(ErrorCode::IoFailure, "ground-truth directory not found: " + gt_dir);
  if (!fs::is_directory(pred_dir)) fail(ErrorCode::IoFailure, "prediction directory not found: " + pred_dir);

  std::vector<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(gt_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), gt_dir).generic_string();
    if (ends_with(rel, kSemSuffix)) names.push_back(rel);
  }
  std::sort(names.begin(), names.end());

  std::optional<std::map<std::string, std::vector<ScoredBox>>> scored;
  if (const fs::path bp = fs::path(pred_dir) / "boxes.csv"; fs::exists(bp)) {
    scored.emplace();
    for (auto& r : load_boxes_csv(bp.string())) (*scored)[r.frame].push_back(r.box);
  }

  DirectoryEvaluation ev;
  ev.num_classes = num_classes;
  std::vector<SemanticMap> preds, gts;
  std::vector<FrameBoxes> boxes;
  bool any_boxes = false;
  for (const auto& name : names) {
    const fs::path pp = fs::path(pred_dir) / name;
    if (!fs::exists(pp)) {
      ev.missing_pairs.push_back(name);
      continue;
    }
    SemanticMap gt(read_label16_png((fs::path(gt_dir) / name).string()), num_classes);
    SemanticMap pred(read_label16_png(pp.string()), num_classes);
    FrameMetrics fm;
    fm.name = name;
    fm.metrics.overall_accuracy = overall_accuracy(pred, gt);
    const IouResult iou = mean_iou(pred, gt, num_classes);
    fm.metrics.mean_iou = iou.mean_iou;
    fm.metrics.per_class_iou = iou.per_class;

    const fs::path gi = fs::path(gt_dir) / inst_sibling(name);
    const fs::path pi = fs::path(pred_dir) / inst_sibling(name);
    const std::string stem = name.substr(0, name.size() - kSemSuffix.size());
    if (fs::exists(gi) && (scored || fs::exists(pi))) {
      FrameBoxes fb;
      fb.ground_truth = extract_boxes(read_label16_png(gi.string()), gt, min_box_area);
      if (scored) {
        if (auto it = scored->find(stem); it != scored->end()) fb.predictions = it->second;
      } else {
        for (const auto& b : extract_boxes(read_label16_png(pi.string()), pred, min_box_area)) {
          fb.predictions.push_back({b, 1.0});
        }
      }
      for (const auto& p : fb.predictions) ev.predicted_boxes.push_back({stem, p});
      const auto th = coco_thresholds();
      fm.metrics.average_precision = average_precision(std::span<const FrameBoxes>(&fb, 1), th);
      boxes.push_back(std::move(fb));
      any_boxes = true;
    }
    ev.frames.push_back(std::move(fm));
    preds.push_back(std::move(pred));
    gts.push_back(std::move(gt));
  }

  if (!ev.frames.empty()) {
    std::vector<const Label16*> pl, gl;
    for (const auto& p : preds) pl.push_back(&p.labels());
    for (const auto& g : gts) gl.push_back(&g.labels());
    const SemanticMap pooled_pred(flatten(pl), num_classes);
    const SemanticMap pooled_gt(flatten(gl), num_classes);
    ev.aggregate.overall_accuracy = overall_accuracy(pooled_pred, pooled_gt);
    const IouResult iou = mean_iou(pooled_pred, pooled_gt, num_classes);
    ev.aggregate.mean_iou = iou.mean_iou;
    ev.aggregate.per_class_iou = iou.per_class;
    if (any_boxes) ev.aggregate.average_precision = average_precision(boxes, coco_thresholds());
  }
  return ev;
}

std::string format_report(const DirectoryEvaluation& ev) {
  std::string out;
  out += fmt::format("classes {}\npairs {}\nmissing_pairs {}\n", ev.num_classes, ev.frames.size(),
                     ev.missing_pairs.size());
  for (const auto& m : ev.missing_pairs) out += fmt::format("missing_pair {}\n", m);
  for (const auto& f : ev.frames) {
    out += fmt::format("frame {} overall_accuracy {:.6f} mean_iou {:.6f} average_precision {}\n", f.name,
                       f.metrics.overall_accuracy, f.metrics.mean_iou, fmt_opt(f.metrics.average_precision));
  }
  out += fmt::format("aggregate overall_accuracy {:.6f}\n", ev.aggregate.overall_accuracy);
  out += fmt::format("aggregate mean_iou {:.6f}\n", ev.aggregate.mean_iou);
  out += fmt::format("aggregate average_precision {}\n", fmt_opt(ev.aggregate.average_precision));
  for (std::size_t c = 0; c < ev.aggregate.per_class_iou.size(); ++c) {
    if (ev.aggregate.per_class_iou[c]) {
      out += fmt::format("class_iou {} {:.6f}\n", c + 1, *ev.aggregate.per_class_iou[c]);
    }
  }
  return out;
}

}  // namespace amtu::percepts
