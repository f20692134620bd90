#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sketchseg/sketch.hpp"

namespace sketchseg {

// Confusion counts over evaluated pixels: ground-truth ink pixels only
// (gt label > 0). Row = ground truth, column = prediction; column 0 collects
// predictions of background on ink.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int n_categories);

  void add(const SegmentationMask& pred, const SegmentationMask& gt);
  void add_pixel(int pred_label, int gt_label);
  void merge(const ConfusionMatrix& other);

  int n_categories() const { return n_categories_; }
  long long count(int gt_label, int pred_label) const;
  long long gt_total(int label) const;
  long long pred_total(int label) const;
  long long total() const;
  long long correct() const;

  bool category_present(int label) const;  // in gt or pred

 private:
  int n_categories_;
  std::vector<long long> counts_;  // (n+1) x (n+1)
};

// Fraction of correctly labeled pixels over ground-truth ink pixels.
double acc_pixel(const SegmentationMask& pred, const SegmentationMask& gt);

struct MiouResult {
  double miou = 0;
  std::map<int, double> per_category;  // label id -> IoU, included categories only
};

// Mean IoU over categories present in gt or pred; errors if none is present.
MiouResult miou(const SegmentationMask& pred, const SegmentationMask& gt, int n_categories);

// Fraction of strokes whose predicted label matches the ground truth.
// Requires aligned stroke id sets; errors on mismatch or empty sets.
double acc_stroke(const std::map<int, int>& pred_labels, const std::map<int, int>& gt_labels);

// Mean per-category recall over categories present in the ground truth.
double mean_acc(const SegmentationMask& pred, const SegmentationMask& gt, int n_categories);

// Per-category IoU weighted by ground-truth frequency.
double fwiou(const SegmentationMask& pred, const SegmentationMask& gt, int n_categories);

double miou_from_confusion(const ConfusionMatrix& cm, std::map<int, double>* per_category = nullptr);
double mean_acc_from_confusion(const ConfusionMatrix& cm);
double fwiou_from_confusion(const ConfusionMatrix& cm);

// Pearson correlation coefficient computed with the single-pass formula
//   [N Σxy − Σx Σy] / sqrt([N Σx² − (Σx)²][N Σy² − (Σy)²]).
// Errors on length mismatch, length < 2, or zero variance.
double pearson_corr(const std::vector<double>& x, const std::vector<double>& y);

// Per-pixel modal label across annotator masks; ties are resolved by a
// seeded uniform choice among the tied labels (deterministic per pixel).
SegmentationMask majority_vote(const std::vector<SegmentationMask>& masks, std::uint64_t seed);

struct PerCategoryMetrics {
  double iou = 0;
  double acc = 0;          // recall over this category's gt pixels
  long long support = 0;   // gt pixel count
};

struct MetricsReport {
  double acc_pixel = 0;
  double miou = 0;
  double mean_acc = 0;
  double fwiou = 0;
  std::optional<double> acc_stroke;
  std::map<std::string, PerCategoryMetrics> per_category;
  int n_items = 0;
};

// Aggregate report from a dataset-level confusion matrix plus stroke counts.
MetricsReport build_report(const ConfusionMatrix& cm, const std::vector<std::string>& vocab,
                           long long strokes_correct, long long strokes_total, int n_items);

std::string report_to_json(const MetricsReport& report);

}  // namespace sketchseg
