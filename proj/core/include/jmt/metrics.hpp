#pragma once

#include <optional>
#include <string>

#include "jmt/tensor.hpp"

namespace jmt {

// Concordance correlation coefficient,
//   rho_c = 2*cov(x,y) / (var(x) + var(y) + (mean(x) - mean(y))^2),
// with population (1/N) moments. Degenerate inputs (both sequences constant)
// are defined as 1 when equal and 0 when unequal, and flagged.
struct CccResult {
  double value = 0.0;
  bool degenerate = false;
};

CccResult ccc_detailed(const std::vector<double>& pred,
                       const std::vector<double>& target);
double ccc(const Tensor& pred, const Tensor& target);

// 1 - rho_c, built on the autodiff graph so it can be minimized directly.
// pred of rank 1 gives a single loss; for [N x K] the result is the mean of
// per-column losses.
Tensor ccc_loss(const Tensor& pred, const Tensor& target);

// Fraction of argmax matches over logits [N x C]; exactly tied logits break
// toward the lower class index. labels hold class indices.
double accuracy(const Tensor& logits, const Tensor& labels);

// One evaluation snapshot. mean_ccc is (valence + arousal) / 2 whenever both
// are present.
struct MetricsRecord {
  std::string run_id;
  int epoch = 0;
  std::string split;
  std::optional<double> valence_ccc;
  std::optional<double> arousal_ccc;
  std::optional<double> mean_ccc;
  std::optional<double> accuracy;
  double loss = 0.0;
  uint64_t seed = 0;
  std::string config_hash;
};

std::string metrics_csv_header();
std::string to_csv_line(const MetricsRecord& rec);
std::string to_json_line(const MetricsRecord& rec);

void write_metrics_jsonl(const std::string& path,
                         const std::vector<MetricsRecord>& records);
void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path);

}  // namespace jmt
