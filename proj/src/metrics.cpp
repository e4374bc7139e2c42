#include "cvseg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "cvseg/errors.hpp"

namespace cvseg {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 0) throw ValidationError("negative class count");
  counts_.assign(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0);
}

std::int64_t ConfusionMatrix::at(int truth, int pred) const {
  if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_) {
    throw IndexError("confusion cell (" + std::to_string(truth) + ", " + std::to_string(pred) + ") out of range");
  }
  return counts_[static_cast<std::size_t>(truth * classes_ + pred)];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (std::int64_t c : counts_) t += c;
  return t;
}

void ConfusionMatrix::accumulate(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) {
    throw DimensionError(std::to_string(truth.size()) + " truth labels but " + std::to_string(pred.size()) +
                         " predictions");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = pred[i];
    if (t < 0 || t >= classes_ || p < 0 || p >= classes_) {
      throw IndexError("label pair (" + std::to_string(t) + ", " + std::to_string(p) + ") at " + std::to_string(i) +
                       " outside [0, " + std::to_string(classes_) + ")");
    }
    ++counts_[static_cast<std::size_t>(t * classes_ + p)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw DimensionError("merging confusion matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::vector<std::optional<double>> ConfusionMatrix::iou_per_class() const {
  if (total() == 0) throw ValidationError("metrics of an empty confusion matrix");
  std::vector<std::optional<double>> out;
  for (int c = 0; c < classes_; ++c) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < classes_; ++j) {
      row += at(c, j);
      col += at(j, c);
    }
    const std::int64_t tp = at(c, c);
    const std::int64_t denom = row + col - tp;  // TP + FN + FP
    if (denom == 0) {
      out.emplace_back();
    } else {
      out.emplace_back(static_cast<double>(tp) / static_cast<double>(denom));
    }
  }
  return out;
}

double ConfusionMatrix::miou(bool absent_as_zero) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& iou : iou_per_class()) {
    if (iou) {
      sum += *iou;
      ++n;
    } else if (absent_as_zero) {
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / n;
}

double ConfusionMatrix::oa() const {
  const std::int64_t t = total();
  if (t == 0) throw ValidationError("metrics of an empty confusion matrix");
  std::int64_t diag = 0;
  for (int c = 0; c < classes_; ++c) diag += at(c, c);
  return static_cast<double>(diag) / static_cast<double>(t);
}

namespace {

std::string class_name(const std::vector<std::string>& names, int c) {
  return static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)] : "class" + std::to_string(c);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string format_metrics_table(const ConfusionMatrix& cm, const std::vector<std::string>& names,
                                 bool absent_as_zero) {
  std::vector<std::string> head{"OA(%)", "mIoU(%)"};
  std::vector<std::string> row{fixed(100.0 * cm.oa(), 1), fixed(100.0 * cm.miou(absent_as_zero), 1)};
  const auto ious = cm.iou_per_class();
  for (int c = 0; c < cm.classes(); ++c) {
    head.push_back(class_name(names, c));
    const auto& iou = ious[static_cast<std::size_t>(c)];
    row.push_back(iou ? fixed(100.0 * *iou, 1) : "-");
  }
  std::ostringstream out;
  for (int line = 0; line < 2; ++line) {
    const auto& cells = line == 0 ? head : row;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::size_t w = std::max(head[i].size(), row[i].size());
      if (i) out << "  ";
      out << std::string(w - cells[i].size(), ' ') << cells[i];
    }
    out << '\n';
  }
  return out.str();
}

std::string format_metrics_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names,
                               bool absent_as_zero) {
  std::ostringstream out;
  out << "class,iou\n";
  const auto ious = cm.iou_per_class();
  for (int c = 0; c < cm.classes(); ++c) {
    const auto& iou = ious[static_cast<std::size_t>(c)];
    out << class_name(names, c) << ',' << (iou ? fixed(*iou, 6) : "nan") << '\n';
  }
  out << "mIoU," << fixed(cm.miou(absent_as_zero), 6) << '\n';
  out << "OA," << fixed(cm.oa(), 6) << '\n';
  return out.str();
}

}  // namespace cvseg
