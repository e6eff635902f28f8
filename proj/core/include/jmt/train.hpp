#pragma once

#include <memory>

#include "jmt/backbones.hpp"
#include "jmt/data.hpp"
#include "jmt/fusion.hpp"
#include "jmt/metrics.hpp"

namespace jmt {

enum class OptimizerKind { Sgd, Adam };
enum class TaskKind { RegressionCcc, BinaryClassification };

std::string to_string(OptimizerKind kind);
std::string to_string(TaskKind kind);

class Optimizer {
 public:
  explicit Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {}
  virtual ~Optimizer() = default;

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  virtual void step() = 0;
  virtual OptimizerKind kind() const = 0;

  // Adam moment buffers (empty for SGD); serialized into checkpoints.
  struct State {
    uint64_t t = 0;
    std::vector<std::vector<double>> m, v;
  };
  virtual State state() const { return {}; }
  virtual void set_state(const State&) {}

 protected:
  std::vector<Tensor> params_;
};

class Sgd : public Optimizer {
 public:
  Sgd(std::vector<Tensor> params, double lr)
      : Optimizer(std::move(params)), lr_(lr) {}
  void step() override;
  OptimizerKind kind() const override { return OptimizerKind::Sgd; }

 private:
  double lr_;
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step() override;
  OptimizerKind kind() const override { return OptimizerKind::Adam; }
  State state() const override;
  void set_state(const State& s) override;

 private:
  double lr_, beta1_, beta2_, eps_;
  uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Everything a single run needs; serializable, hashable, and recorded in
// every MetricsRecord it produces.
struct RunConfig {
  ModelKind model = ModelKind::Jmt;
  FusionConfig fusion;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  std::vector<double> lr_grid = {8e-4, 6e-4, 3e-4};
  int batch_size = 16;
  int max_epochs = 25;
  int patience = 5;
  uint64_t seed = 7;
  TaskKind task = TaskKind::RegressionCcc;
  DatasetConfig dataset;
  std::string run_label;

  void validate() const;
};

std::string to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
std::string config_hash_hex(const RunConfig& cfg);

// Named presets: "desk" (small dims, runs in seconds), "affwild2-fusion"
// (SGD, batch 32, the three-point LR grid, dropout 0.8), "biovid-fusion"
// (Adam 5e-6, batch 128, binary classification).
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

struct SplitIndices {
  std::vector<int> train, val, test;
};

// Subject-disjoint random split; fractions of the subject pool, remainder
// becomes the test set.
SplitIndices split_by_subject(const SyntheticDataset& data, double train_frac,
                              double val_frac, uint64_t seed);
// Held-out fold serves as both validation and evaluation set.
SplitIndices fold_split(const SyntheticDataset& data, int fold);

struct TensorBlob {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// Full training state: enough to restore parameters bit-exactly and resume
// training deterministically.
struct Checkpoint {
  std::string config_hash;
  int epoch = 0;
  int best_epoch = 0;
  double best_metric = 0.0;
  int epochs_since_improve = 0;
  std::string rng_state;
  OptimizerKind opt_kind = OptimizerKind::Sgd;
  Optimizer::State opt_state;
  std::vector<TensorBlob> params;
  std::vector<TensorBlob> best_params;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::vector<TensorBlob> snapshot_parameters(const AffectModel& model);
void load_parameters(AffectModel& model, const std::vector<TensorBlob>& blobs);

struct TrainResult {
  Checkpoint best;
  std::vector<MetricsRecord> records;
  double best_metric = 0.0;
  int best_epoch = 0;
  bool diverged = false;
  std::string data_order_hash;
  std::string run_id;
  std::string config_hash;
};

// Trains one fusion model on cached frozen-backbone features with per-epoch
// validation and patience-based early stopping. Backbones are randomly
// initialized from the run seed and stay frozen; both modalities' clip
// features are precomputed once.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const SyntheticDataset& data,
          SplitIndices splits);

  bool done() const;
  void run_one_epoch();
  TrainResult run();  // until early stop, max_epochs, or divergence

  struct EvalOutcome {
    double metric = 0.0;
    double loss = 0.0;
    std::optional<double> valence_ccc, arousal_ccc, mean_ccc, acc;
  };
  EvalOutcome evaluate(const std::vector<int>& indices) const;

  Checkpoint make_checkpoint() const;
  void restore(const Checkpoint& ckpt);
  void load_best_parameters();

  AffectModel& model() { return *model_; }
  const AffectModel& model() const { return *model_; }
  const std::vector<MetricsRecord>& records() const { return records_; }
  const SplitIndices& splits() const { return splits_; }
  const std::string& config_hash() const { return config_hash_; }
  const std::string& run_id() const { return run_id_; }
  std::string data_order_hash() const { return hash_to_hex(order_hash_); }
  int epoch() const { return epoch_; }
  bool diverged() const { return diverged_; }
  const Tensor& features_a(int sample) const { return cache_.at(sample).fa; }
  const Tensor& features_b(int sample) const { return cache_.at(sample).fb; }

 private:
  struct SampleData {
    Tensor fa, fb;        // [T x D]
    Tensor clip_targets;  // [T x K]
    Tensor pooled_targets;  // [1 x K]
    std::vector<int> clip_labels;
    int pooled_label = 0;
  };

  void build_cache(const SyntheticDataset& data);
  std::vector<std::vector<int>> make_batches(const std::vector<int>& order) const;
  Tensor targets_for(const std::vector<int>& batch) const;
  std::vector<int> labels_for(const std::vector<int>& batch) const;
  int64_t points_per_sample() const;
  MetricsRecord base_record(int epoch, const std::string& split) const;

  RunConfig cfg_;
  SplitIndices splits_;
  std::vector<SampleData> cache_;
  std::unique_ptr<AffectModel> model_;
  std::unique_ptr<Optimizer> opt_;
  Rng rng_;  // dropout stream
  int epoch_ = 0;
  double best_metric_ = 0.0;
  int best_epoch_ = 0;
  int since_improve_ = 0;
  bool has_best_ = false;
  std::vector<TensorBlob> best_params_;
  bool diverged_ = false;
  std::vector<MetricsRecord> records_;
  uint64_t order_hash_;
  std::string config_hash_;
  std::string run_id_;
};

TrainResult train(const RunConfig& cfg, const SyntheticDataset& data,
                  const SplitIndices& splits);

struct GridPoint {
  double lr = 0.0;
  double val_metric = 0.0;
  bool diverged = false;
};

struct GridSearchResult {
  RunConfig best_config;
  std::vector<GridPoint> points;
  TrainResult best_result;
};

// One run per grid entry, same seed and splits; best validation metric wins
// and ties go to the lower learning rate.
GridSearchResult grid_search(const RunConfig& cfg, const SyntheticDataset& data,
                             const SplitIndices& splits);

struct FoldOutcome {
  int fold = 0;
  double metric = 0.0;
  TrainResult result;
};

struct KFoldResult {
  std::vector<FoldOutcome> folds;
  double mean_metric = 0.0;
  double std_metric = 0.0;
};

// Assigns subject-disjoint folds when the dataset has none, then trains on
// each complement and evaluates on the held-out fold.
KFoldResult kfold_run(const RunConfig& cfg, SyntheticDataset& data, int k);

struct AblationCell {
  ModelKind kind = ModelKind::Jmt;
  uint64_t seed = 0;
  double test_metric = 0.0;
  double val_metric = 0.0;
  std::string order_hash;
  bool diverged = false;
};

struct AblationSummaryRow {
  ModelKind kind = ModelKind::Jmt;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_seed;
};

struct AblationResult {
  std::vector<AblationCell> cells;  // 5 variants x seeds
  std::vector<AblationSummaryRow> summary;
};

// Identical protocol across {unimodal_A, unimodal_B, concat, vanilla, jmt}:
// shared subject split, shared per-seed data order (asserted via the logged
// order hash), shared budget.
AblationResult ablation_run(const RunConfig& base, const SyntheticDataset& data,
                            const std::vector<uint64_t>& seeds);

std::string ablation_to_text(const AblationResult& result);
std::string ablation_to_csv(const AblationResult& result);
std::string ablation_to_json(const AblationResult& result);

}  // namespace jmt
