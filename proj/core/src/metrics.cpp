#include "jmt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace jmt {

namespace {

// Shared scalar-moment pass used by the non-graph CCC.
struct Moments {
  double mean_x, mean_y, var_x, var_y, cov;
};

Moments compute_moments(const std::vector<double>& x,
                        const std::vector<double>& y) {
  size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cov += dx * dy;
  }
  double inv = 1.0 / static_cast<double>(n);
  return {mx, my, vx * inv, vy * inv, cov * inv};
}

}  // namespace

CccResult ccc_detailed(const std::vector<double>& pred,
                       const std::vector<double>& target) {
  if (pred.size() != target.size())
    throw ShapeError("ccc: length mismatch, " + std::to_string(pred.size()) +
                     " vs " + std::to_string(target.size()));
  if (pred.size() < 2)
    throw DataError("ccc requires at least 2 samples, got " +
                    std::to_string(pred.size()));
  Moments m = compute_moments(pred, target);
  if (m.var_x == 0.0 && m.var_y == 0.0) {
    // Both constant: agreement is perfect when the constants coincide.
    return {m.mean_x == m.mean_y ? 1.0 : 0.0, true};
  }
  double md = m.mean_x - m.mean_y;
  return {2.0 * m.cov / (m.var_x + m.var_y + md * md), false};
}

double ccc(const Tensor& pred, const Tensor& target) {
  return ccc_detailed(pred.data(), target.data()).value;
}

namespace {

Tensor ccc_loss_1d(const Tensor& pred, const Tensor& target) {
  if (pred.numel() != target.numel())
    throw ShapeError("ccc_loss: length mismatch, " +
                     shape_to_string(pred.shape()) + " vs " +
                     shape_to_string(target.shape()));
  if (pred.numel() < 2)
    throw DataError("ccc_loss requires at least 2 samples");
  Tensor mx = mean_all(pred);
  Tensor my = mean_all(target);
  Tensor cov = sub(mean_all(mul(pred, target)), mul(mx, my));
  Tensor vx = sub(mean_all(mul(pred, pred)), mul(mx, mx));
  Tensor vy = sub(mean_all(mul(target, target)), mul(my, my));
  Tensor mean_diff = sub(mx, my);
  Tensor den = add(add(vx, vy), mul(mean_diff, mean_diff));
  if (den.item() == 0.0) {
    // Both sequences constant and equal; rho_c is defined as 1, so the loss
    // is a flat 0 with no useful gradient.
    return Tensor::scalar(0.0);
  }
  return sub(Tensor::scalar(1.0), div(mul_scalar(cov, 2.0), den));
}

}  // namespace

Tensor ccc_loss(const Tensor& pred, const Tensor& target) {
  if (pred.rank() <= 1) return ccc_loss_1d(pred, target);
  if (pred.rank() != 2 || target.rank() != 2 ||
      pred.shape() != target.shape())
    throw ShapeError("ccc_loss: expected matching [N] or [N x K], got " +
                     shape_to_string(pred.shape()) + " and " +
                     shape_to_string(target.shape()));
  int64_t n = pred.shape()[0], k = pred.shape()[1];
  Tensor total;
  for (int64_t c = 0; c < k; ++c) {
    Tensor lc = ccc_loss_1d(reshape(slice(pred, 1, c, c + 1), {n}),
                            reshape(slice(target, 1, c, c + 1), {n}));
    total = c == 0 ? lc : add(total, lc);
  }
  return mul_scalar(total, 1.0 / static_cast<double>(k));
}

double accuracy(const Tensor& logits, const Tensor& labels) {
  if (logits.rank() != 2)
    throw ShapeError("accuracy: logits must be [N x C], got " +
                     shape_to_string(logits.shape()));
  int64_t n = logits.shape()[0], c = logits.shape()[1];
  if (n == 0 || labels.numel() == 0)
    throw DataError("accuracy: empty batch");
  if (labels.numel() != n)
    throw ShapeError("accuracy: " + std::to_string(labels.numel()) +
                     " labels for " + std::to_string(n) + " rows");
  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t arg = 0;
    double best = logits.at(i, 0);
    for (int64_t j = 1; j < c; ++j) {
      if (logits.at(i, j) > best) {  // ties keep the lower index
        best = logits.at(i, j);
        arg = j;
      }
    }
    double lab = labels.at(i);
    if (lab < 0 || lab >= static_cast<double>(c) ||
        lab != std::floor(lab))
      throw DataError("accuracy: label " + std::to_string(lab) +
                      " is not a class index in [0, " + std::to_string(c) + ")");
    if (arg == static_cast<int64_t>(lab)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

// ---- MetricsRecord serialization -------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();
}

}  // namespace

std::string metrics_csv_header() {
  return "run_id,epoch,split,valence_ccc,arousal_ccc,mean_ccc,accuracy,loss,"
         "seed,config_hash";
}

std::string to_csv_line(const MetricsRecord& r) {
  return r.run_id + "," + std::to_string(r.epoch) + "," + r.split + "," +
         fmt_opt(r.valence_ccc) + "," + fmt_opt(r.arousal_ccc) + "," +
         fmt_opt(r.mean_ccc) + "," + fmt_opt(r.accuracy) + "," +
         fmt_double(r.loss) + "," + std::to_string(r.seed) + "," +
         r.config_hash;
}

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::json j;
  j["run_id"] = r.run_id;
  j["epoch"] = r.epoch;
  j["split"] = r.split;
  if (r.valence_ccc) j["valence_ccc"] = *r.valence_ccc;
  if (r.arousal_ccc) j["arousal_ccc"] = *r.arousal_ccc;
  if (r.mean_ccc) j["mean_ccc"] = *r.mean_ccc;
  if (r.accuracy) j["accuracy"] = *r.accuracy;
  j["loss"] = r.loss;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  return j.dump();
}

void write_metrics_jsonl(const std::string& path,
                         const std::vector<MetricsRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& r : records) out << to_json_line(r) << "\n";
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << metrics_csv_header() << "\n";
  for (const auto& r : records) out << to_csv_line(r) << "\n";
}

std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<MetricsRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IoError("malformed JSON line in " + path);
    MetricsRecord r;
    r.run_id = j.value("run_id", "");
    r.epoch = j.value("epoch", 0);
    r.split = j.value("split", "");
    if (j.contains("valence_ccc")) r.valence_ccc = j["valence_ccc"].get<double>();
    if (j.contains("arousal_ccc")) r.arousal_ccc = j["arousal_ccc"].get<double>();
    if (j.contains("mean_ccc")) r.mean_ccc = j["mean_ccc"].get<double>();
    if (j.contains("accuracy")) r.accuracy = j["accuracy"].get<double>();
    r.loss = j.value("loss", 0.0);
    r.seed = j.value("seed", uint64_t{0});
    r.config_hash = j.value("config_hash", "");
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace jmt
