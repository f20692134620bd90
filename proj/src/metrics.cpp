#include "sketchseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sketchseg/rng.hpp"

namespace sketchseg {

ConfusionMatrix::ConfusionMatrix(int n_categories) : n_categories_(n_categories) {
  if (n_categories < 1) throw std::invalid_argument("ConfusionMatrix: need at least one category");
  counts_.assign(static_cast<std::size_t>((n_categories + 1) * (n_categories + 1)), 0);
}

void ConfusionMatrix::add_pixel(int pred_label, int gt_label) {
  if (gt_label <= 0) return;  // metrics count ground-truth ink only
  if (gt_label > n_categories_ || pred_label > n_categories_ || pred_label < 0) {
    throw std::invalid_argument("ConfusionMatrix: label out of range");
  }
  counts_[static_cast<std::size_t>(gt_label * (n_categories_ + 1) + pred_label)] += 1;
}

void ConfusionMatrix::add(const SegmentationMask& pred, const SegmentationMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw std::invalid_argument("ConfusionMatrix: mask dimensions differ");
  }
  for (Index r = 0; r < gt.height; ++r)
    for (Index c = 0; c < gt.width; ++c) add_pixel(pred.labels(r, c), gt.labels(r, c));
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_categories_ != n_categories_) {
    throw std::invalid_argument("ConfusionMatrix: category count mismatch in merge");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

long long ConfusionMatrix::count(int gt_label, int pred_label) const {
  return counts_[static_cast<std::size_t>(gt_label * (n_categories_ + 1) + pred_label)];
}

long long ConfusionMatrix::gt_total(int label) const {
  long long s = 0;
  for (int p = 0; p <= n_categories_; ++p) s += count(label, p);
  return s;
}

long long ConfusionMatrix::pred_total(int label) const {
  long long s = 0;
  for (int g = 1; g <= n_categories_; ++g) s += count(g, label);
  return s;
}

long long ConfusionMatrix::total() const {
  long long s = 0;
  for (int g = 1; g <= n_categories_; ++g) s += gt_total(g);
  return s;
}

long long ConfusionMatrix::correct() const {
  long long s = 0;
  for (int g = 1; g <= n_categories_; ++g) s += count(g, g);
  return s;
}

bool ConfusionMatrix::category_present(int label) const {
  return gt_total(label) > 0 || pred_total(label) > 0;
}

double acc_pixel(const SegmentationMask& pred, const SegmentationMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw std::invalid_argument("acc_pixel: mask dimensions differ");
  }
  long long correct = 0, total = 0;
  for (Index r = 0; r < gt.height; ++r) {
    for (Index c = 0; c < gt.width; ++c) {
      if (gt.labels(r, c) <= 0) continue;
      ++total;
      if (pred.labels(r, c) == gt.labels(r, c)) ++correct;
    }
  }
  if (total == 0) throw std::invalid_argument("acc_pixel: ground truth has no ink pixels");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double miou_from_confusion(const ConfusionMatrix& cm, std::map<int, double>* per_category) {
  double sum = 0;
  int included = 0;
  for (int k = 1; k <= cm.n_categories(); ++k) {
    if (!cm.category_present(k)) continue;
    const long long tp = cm.count(k, k);
    const long long uni = cm.gt_total(k) + cm.pred_total(k) - tp;
    const double iou = uni > 0 ? static_cast<double>(tp) / static_cast<double>(uni) : 0.0;
    if (per_category) (*per_category)[k] = iou;
    sum += iou;
    ++included;
  }
  if (included == 0) throw std::invalid_argument("miou: no category present in gt or pred");
  return sum / included;
}

MiouResult miou(const SegmentationMask& pred, const SegmentationMask& gt, int n_categories) {
  ConfusionMatrix cm(n_categories);
  cm.add(pred, gt);
  MiouResult out;
  out.miou = miou_from_confusion(cm, &out.per_category);
  return out;
}

double acc_stroke(const std::map<int, int>& pred_labels, const std::map<int, int>& gt_labels) {
  if (pred_labels.empty() || gt_labels.empty()) {
    throw std::invalid_argument("acc_stroke: empty stroke set");
  }
  if (pred_labels.size() != gt_labels.size()) {
    throw std::invalid_argument("acc_stroke: stroke id sets differ in size");
  }
  long long correct = 0;
  for (const auto& [id, gt] : gt_labels) {
    auto it = pred_labels.find(id);
    if (it == pred_labels.end()) {
      throw std::invalid_argument("acc_stroke: stroke id " + std::to_string(id) +
                                  " missing from predictions");
    }
    if (it->second == gt) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(gt_labels.size());
}

double mean_acc_from_confusion(const ConfusionMatrix& cm) {
  double sum = 0;
  int included = 0;
  for (int k = 1; k <= cm.n_categories(); ++k) {
    const long long gt = cm.gt_total(k);
    if (gt == 0) continue;
    sum += static_cast<double>(cm.count(k, k)) / static_cast<double>(gt);
    ++included;
  }
  if (included == 0) throw std::invalid_argument("mean_acc: ground truth has no categories");
  return sum / included;
}

double fwiou_from_confusion(const ConfusionMatrix& cm) {
  const long long total = cm.total();
  if (total == 0) throw std::invalid_argument("fwiou: ground truth has no ink pixels");
  double sum = 0;
  for (int k = 1; k <= cm.n_categories(); ++k) {
    const long long gt = cm.gt_total(k);
    if (gt == 0) continue;
    const long long tp = cm.count(k, k);
    const long long uni = gt + cm.pred_total(k) - tp;
    const double iou = uni > 0 ? static_cast<double>(tp) / static_cast<double>(uni) : 0.0;
    sum += (static_cast<double>(gt) / static_cast<double>(total)) * iou;
  }
  return sum;
}

double mean_acc(const SegmentationMask& pred, const SegmentationMask& gt, int n_categories) {
  ConfusionMatrix cm(n_categories);
  cm.add(pred, gt);
  return mean_acc_from_confusion(cm);
}

double fwiou(const SegmentationMask& pred, const SegmentationMask& gt, int n_categories) {
  ConfusionMatrix cm(n_categories);
  cm.add(pred, gt);
  return fwiou_from_confusion(cm);
}

double pearson_corr(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson_corr: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("pearson_corr: need at least 2 points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  const double vx = n * sxx - sx * sx;
  const double vy = n * syy - sy * sy;
  if (vx <= 0 || vy <= 0) throw std::invalid_argument("pearson_corr: zero variance");
  return (n * sxy - sx * sy) / std::sqrt(vx * vy);
}

SegmentationMask majority_vote(const std::vector<SegmentationMask>& masks, std::uint64_t seed) {
  if (masks.empty()) throw std::invalid_argument("majority_vote: need at least one mask");
  const Index h = masks[0].height;
  const Index w = masks[0].width;
  for (const auto& m : masks) {
    if (m.height != h || m.width != w) {
      throw std::invalid_argument("majority_vote: mask dimensions differ");
    }
  }
  SegmentationMask out;
  out.height = h;
  out.width = w;
  out.labels = MatInt::Zero(h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      std::map<int, int> votes;
      for (const auto& m : masks) votes[m.labels(r, c)] += 1;
      int best_count = 0;
      for (const auto& [label, count] : votes) best_count = std::max(best_count, count);
      std::vector<int> tied;
      for (const auto& [label, count] : votes) {
        if (count == best_count) tied.push_back(label);
      }
      if (tied.size() == 1) {
        out.labels(r, c) = tied[0];
      } else {
        // Keyed by (seed, pixel index) so the choice is independent of
        // traversal order.
        const std::uint64_t key = splitmix64(seed ^ (0x9e37u + static_cast<std::uint64_t>(r * w + c) * 0x100000001b3ULL));
        out.labels(r, c) = tied[key % tied.size()];
      }
    }
  }
  return out;
}

MetricsReport build_report(const ConfusionMatrix& cm, const std::vector<std::string>& vocab,
                           long long strokes_correct, long long strokes_total, int n_items) {
  if (static_cast<int>(vocab.size()) != cm.n_categories()) {
    throw std::invalid_argument("build_report: vocabulary does not match confusion matrix");
  }
  MetricsReport report;
  report.n_items = n_items;
  const long long total = cm.total();
  if (total == 0) throw std::invalid_argument("build_report: no evaluated pixels");
  report.acc_pixel = static_cast<double>(cm.correct()) / static_cast<double>(total);
  std::map<int, double> per_iou;
  report.miou = miou_from_confusion(cm, &per_iou);
  report.mean_acc = mean_acc_from_confusion(cm);
  report.fwiou = fwiou_from_confusion(cm);
  if (strokes_total > 0) {
    report.acc_stroke = static_cast<double>(strokes_correct) / static_cast<double>(strokes_total);
  }
  for (const auto& [label, iou] : per_iou) {
    PerCategoryMetrics pc;
    pc.iou = iou;
    pc.support = cm.gt_total(label);
    pc.acc = pc.support > 0
                 ? static_cast<double>(cm.count(label, label)) / static_cast<double>(pc.support)
                 : 0.0;
    report.per_category[vocab[static_cast<std::size_t>(label - 1)]] = pc;
  }
  return report;
}

std::string report_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["acc_pixel"] = report.acc_pixel;
  j["miou"] = report.miou;
  j["mean_acc"] = report.mean_acc;
  j["fwiou"] = report.fwiou;
  if (report.acc_stroke.has_value()) {
    j["acc_stroke"] = *report.acc_stroke;
  } else {
    j["acc_stroke"] = nullptr;
  }
  j["n_items"] = report.n_items;
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, pc] : report.per_category) {
    per[name] = {{"iou", pc.iou}, {"acc", pc.acc}, {"support", pc.support}};
  }
  j["per_category"] = per;
  return j.dump(2);
}

}  // namespace sketchseg
