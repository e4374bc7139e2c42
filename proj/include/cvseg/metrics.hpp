#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cvseg {

/// Rows are truth, columns prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0);

  int classes() const { return classes_; }
  std::int64_t at(int truth, int pred) const;
  std::int64_t total() const;

  void accumulate(std::span<const int> truth, std::span<const int> pred);
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

  // TP / (TP + FP + FN); empty when the class is absent from truth and
  // prediction alike.
  std::vector<std::optional<double>> iou_per_class() const;
  // Absent classes are skipped unless `absent_as_zero`.
  double miou(bool absent_as_zero = false) const;
  double oa() const;

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
};

// Names default to "class<i>" when `names` is shorter than the class count.
std::string format_metrics_table(const ConfusionMatrix& cm, const std::vector<std::string>& names = {},
                                 bool absent_as_zero = false);
std::string format_metrics_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names = {},
                               bool absent_as_zero = false);

}  // namespace cvseg
