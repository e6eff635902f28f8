#include "jmt/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace jmt {

// ---- optimizers ----------------------------------------------------------------

void Sgd::step() {
  for (auto& p : params_) {
    if (!p.has_grad()) continue;
    auto& data = p.data();
    const auto& grad = p.grad();
    for (size_t i = 0; i < data.size(); ++i) data[i] -= lr_ * grad[i];
  }
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2,
           double eps)
    : Optimizer(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    if (!p.has_grad()) continue;
    auto& data = p.data();
    const auto& grad = p.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < data.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      data[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

Optimizer::State Adam::state() const { return {t_, m_, v_}; }

void Adam::set_state(const State& s) {
  if (s.m.size() != params_.size() || s.v.size() != params_.size())
    throw ConfigError("Adam state does not match parameter count");
  t_ = s.t;
  m_ = s.m;
  v_ = s.v;
}

// ---- config ---------------------------------------------------------------------

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

std::string to_string(TaskKind kind) {
  return kind == TaskKind::RegressionCcc ? "regression_ccc"
                                         : "binary_classification";
}

namespace {

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

TaskKind task_from_string(const std::string& s) {
  if (s == "regression_ccc") return TaskKind::RegressionCcc;
  if (s == "binary_classification") return TaskKind::BinaryClassification;
  throw ConfigError("unknown task '" + s + "'");
}

std::string to_string(AggregationMode mode) {
  return mode == AggregationMode::SelfAttentionStack ? "self_attention_stack"
                                                     : "concat_fc";
}

AggregationMode aggregation_from_string(const std::string& s) {
  if (s == "self_attention_stack") return AggregationMode::SelfAttentionStack;
  if (s == "concat_fc") return AggregationMode::ConcatFc;
  throw ConfigError("unknown aggregation mode '" + s + "'");
}

std::string to_string(ScalingVariant v) {
  return v == ScalingVariant::SqrtDk ? "sqrt_dk" : "dk";
}

ScalingVariant scaling_from_string(const std::string& s) {
  if (s == "sqrt_dk") return ScalingVariant::SqrtDk;
  if (s == "dk") return ScalingVariant::Dk;
  throw ConfigError("unknown scaling variant '" + s + "'");
}

std::string to_string(PredictionMode mode) {
  return mode == PredictionMode::Pooled ? "pooled" : "per_clip";
}

PredictionMode prediction_from_string(const std::string& s) {
  if (s == "pooled") return PredictionMode::Pooled;
  if (s == "per_clip") return PredictionMode::PerClip;
  throw ConfigError("unknown prediction mode '" + s + "'");
}

nlohmann::json fusion_to_json(const FusionConfig& f) {
  nlohmann::json j;
  j["model_dim"] = f.model_dim;
  j["num_heads"] = f.num_heads;
  j["encoder_depth"] = f.encoder_depth;
  j["aggregation"] = to_string(f.aggregation);
  j["scaling"] = to_string(f.scaling);
  j["prediction"] = to_string(f.prediction);
  j["dropout_rate"] = f.dropout_rate;
  j["head_output_dim"] = f.head_output_dim;
  j["ffn_hidden_dim"] = f.ffn_hidden_dim;
  j["positional_encoding"] = f.positional_encoding;
  return j;
}

FusionConfig fusion_from_json(const nlohmann::json& j) {
  FusionConfig f;
  f.model_dim = j.value("model_dim", f.model_dim);
  f.num_heads = j.value("num_heads", f.num_heads);
  f.encoder_depth = j.value("encoder_depth", f.encoder_depth);
  if (j.contains("aggregation"))
    f.aggregation = aggregation_from_string(j["aggregation"]);
  if (j.contains("scaling")) f.scaling = scaling_from_string(j["scaling"]);
  if (j.contains("prediction"))
    f.prediction = prediction_from_string(j["prediction"]);
  f.dropout_rate = j.value("dropout_rate", f.dropout_rate);
  f.head_output_dim = j.value("head_output_dim", f.head_output_dim);
  f.ffn_hidden_dim = j.value("ffn_hidden_dim", f.ffn_hidden_dim);
  f.positional_encoding = j.value("positional_encoding", f.positional_encoding);
  return f;
}

}  // namespace

void RunConfig::validate() const {
  fusion.validate();
  dataset.validate();
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 0) throw ConfigError("patience must be >= 0");
  if (lr_grid.empty()) throw ConfigError("lr_grid must be nonempty");
  for (double lr : lr_grid)
    if (lr <= 0.0) throw ConfigError("lr_grid entries must be positive");
  if (task == TaskKind::BinaryClassification && fusion.head_output_dim != 2)
    throw ConfigError("binary classification requires head_output_dim == 2");
}

std::string to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["model"] = to_string(cfg.model);
  j["fusion"] = fusion_to_json(cfg.fusion);
  j["optimizer"] = to_string(cfg.optimizer);
  j["learning_rate"] = cfg.learning_rate;
  j["lr_grid"] = cfg.lr_grid;
  j["batch_size"] = cfg.batch_size;
  j["max_epochs"] = cfg.max_epochs;
  j["patience"] = cfg.patience;
  j["seed"] = cfg.seed;
  j["task"] = to_string(cfg.task);
  j["dataset"] = nlohmann::json::parse(to_json(cfg.dataset));
  j["run_label"] = cfg.run_label;
  return j.dump();
}

RunConfig run_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed run config JSON");
  RunConfig cfg;
  if (j.contains("model")) cfg.model = model_kind_from_string(j["model"]);
  if (j.contains("fusion")) cfg.fusion = fusion_from_json(j["fusion"]);
  if (j.contains("optimizer"))
    cfg.optimizer = optimizer_from_string(j["optimizer"]);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  if (j.contains("lr_grid")) cfg.lr_grid = j["lr_grid"].get<std::vector<double>>();
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
  cfg.patience = j.value("patience", cfg.patience);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("task")) cfg.task = task_from_string(j["task"]);
  if (j.contains("dataset"))
    cfg.dataset = dataset_config_from_json(j["dataset"].dump());
  cfg.run_label = j.value("run_label", cfg.run_label);
  cfg.validate();
  return cfg;
}

std::string config_hash_hex(const RunConfig& cfg) {
  return hash_to_hex(fnv1a(to_json(cfg)));
}

RunConfig preset(const std::string& name) {
  RunConfig cfg;
  if (name == "desk") {
    cfg.fusion.model_dim = 64;
    cfg.fusion.num_heads = 4;
    cfg.fusion.prediction = PredictionMode::PerClip;
    cfg.fusion.dropout_rate = 0.0;
    cfg.optimizer = OptimizerKind::Adam;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 16;
    cfg.max_epochs = 25;
    cfg.patience = 5;
    return cfg;
  }
  if (name == "affwild2-fusion") {
    cfg.fusion.model_dim = 512;
    cfg.fusion.num_heads = 8;
    cfg.fusion.dropout_rate = 0.8;
    cfg.fusion.head_output_dim = 2;
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.learning_rate = 8e-4;
    cfg.lr_grid = {8e-4, 6e-4, 3e-4};
    cfg.batch_size = 32;
    cfg.max_epochs = 5;
    cfg.patience = 1;
    cfg.task = TaskKind::RegressionCcc;
    return cfg;
  }
  if (name == "biovid-fusion") {
    cfg.fusion.model_dim = 512;
    cfg.fusion.num_heads = 8;
    cfg.fusion.head_output_dim = 2;
    cfg.optimizer = OptimizerKind::Adam;
    cfg.learning_rate = 5e-6;
    cfg.batch_size = 128;
    cfg.max_epochs = 50;
    cfg.patience = 5;
    cfg.task = TaskKind::BinaryClassification;
    cfg.dataset.num_targets = 1;
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "'; available: desk, "
                    "affwild2-fusion, biovid-fusion");
}

std::vector<std::string> preset_names() {
  return {"desk", "affwild2-fusion", "biovid-fusion"};
}

// ---- splits ----------------------------------------------------------------------

SplitIndices split_by_subject(const SyntheticDataset& data, double train_frac,
                              double val_frac, uint64_t seed) {
  if (train_frac <= 0.0 || val_frac <= 0.0 || train_frac + val_frac >= 1.0)
    throw ConfigError("split fractions must be positive and sum below 1");
  int subjects = data.config.num_subjects;
  if (subjects < 3) throw ConfigError("need at least 3 subjects to split");
  std::vector<int> order(subjects);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  int n_train = std::max(1, static_cast<int>(std::round(train_frac * subjects)));
  int n_val = std::max(1, static_cast<int>(std::round(val_frac * subjects)));
  if (n_train + n_val >= subjects) n_train = subjects - n_val - 1;
  if (n_train < 1) throw ConfigError("split leaves no training subjects");
  std::vector<int> group(subjects);  // 0 train, 1 val, 2 test
  for (int i = 0; i < subjects; ++i)
    group[order[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  SplitIndices split;
  for (size_t i = 0; i < data.samples.size(); ++i) {
    switch (group[data.samples[i].subject_id]) {
      case 0:
        split.train.push_back(static_cast<int>(i));
        break;
      case 1:
        split.val.push_back(static_cast<int>(i));
        break;
      default:
        split.test.push_back(static_cast<int>(i));
    }
  }
  return split;
}

SplitIndices fold_split(const SyntheticDataset& data, int fold) {
  if (data.num_folds < 2)
    throw ConfigError("dataset has no fold assignment; call make_folds first");
  if (fold < 0 || fold >= data.num_folds)
    throw ConfigError("fold " + std::to_string(fold) + " out of range");
  SplitIndices split;
  for (size_t i = 0; i < data.samples.size(); ++i) {
    if (data.samples[i].fold == fold) {
      split.val.push_back(static_cast<int>(i));
      split.test.push_back(static_cast<int>(i));
    } else {
      split.train.push_back(static_cast<int>(i));
    }
  }
  return split;
}

// ---- trainer -----------------------------------------------------------------------

Trainer::Trainer(const RunConfig& cfg, const SyntheticDataset& data,
                 SplitIndices splits)
    : cfg_(cfg),
      splits_(std::move(splits)),
      rng_(derive_seed(cfg.seed, "dropout")),
      order_hash_(fnv1a("data-order")),
      config_hash_(config_hash_hex(cfg)) {
  cfg_.validate();
  if (splits_.train.empty() || splits_.val.empty())
    throw ConfigError("trainer needs nonempty train and val splits");
  run_id_ = cfg_.run_label.empty()
                ? to_string(cfg_.model) + "-s" + std::to_string(cfg_.seed)
                : cfg_.run_label;
  build_cache(data);
  Rng model_rng(derive_seed(cfg_.seed, "model"));
  model_ = make_model(cfg_.model, cfg_.fusion, model_rng);
  auto params = model_->parameters();
  if (cfg_.optimizer == OptimizerKind::Sgd)
    opt_ = std::make_unique<Sgd>(std::move(params), cfg_.learning_rate);
  else
    opt_ = std::make_unique<Adam>(std::move(params), cfg_.learning_rate);
}

void Trainer::build_cache(const SyntheticDataset& data) {
  const auto& dcfg = cfg_.dataset;
  TemporalConvConfig bcfg;
  bcfg.in_channels = dcfg.channels;
  bcfg.clip_length = dcfg.clip_length;
  bcfg.feature_dim = cfg_.fusion.model_dim;
  Rng rng_a(derive_seed(cfg_.seed, "backbone_a"));
  Rng rng_b(derive_seed(cfg_.seed, "backbone_b"));
  TemporalConvBackbone backbone_a(bcfg, rng_a);
  TemporalConvBackbone backbone_b(bcfg, rng_b);

  int64_t clip = dcfg.clip_length;
  cache_.reserve(data.samples.size());
  for (const auto& sample : data.samples) {
    SampleData sd;
    sd.fa = extract_clip_features(sample.a, backbone_a, clip);
    sd.fb = extract_clip_features(sample.b, backbone_b, clip);
    int64_t num_clips = sd.fa.shape()[0];
    int64_t k = sample.targets.shape()[1];
    std::vector<double> clip_targets(num_clips * k, 0.0);
    for (int64_t c = 0; c < num_clips; ++c) {
      for (int64_t t = c * clip; t < (c + 1) * clip; ++t)
        for (int64_t d = 0; d < k; ++d)
          clip_targets[c * k + d] += sample.targets.at(t, d);
      for (int64_t d = 0; d < k; ++d)
        clip_targets[c * k + d] /= static_cast<double>(clip);
    }
    std::vector<double> pooled(k, 0.0);
    for (int64_t c = 0; c < num_clips; ++c)
      for (int64_t d = 0; d < k; ++d) pooled[d] += clip_targets[c * k + d];
    for (auto& v : pooled) v /= static_cast<double>(num_clips);
    sd.clip_labels.resize(num_clips);
    for (int64_t c = 0; c < num_clips; ++c)
      sd.clip_labels[c] = clip_targets[c * k] > 0.0 ? 1 : 0;
    sd.pooled_label = pooled[0] > 0.0 ? 1 : 0;
    sd.clip_targets =
        Tensor::from_data({num_clips, k}, std::move(clip_targets));
    sd.pooled_targets = Tensor::from_data({1, k}, std::move(pooled));
    cache_.push_back(std::move(sd));
  }
}

int64_t Trainer::points_per_sample() const {
  return cfg_.fusion.prediction == PredictionMode::PerClip
             ? cache_.front().clip_targets.shape()[0]
             : 1;
}

std::vector<std::vector<int>> Trainer::make_batches(
    const std::vector<int>& order) const {
  std::vector<std::vector<int>> batches;
  for (size_t i = 0; i < order.size(); i += cfg_.batch_size) {
    size_t end = std::min(order.size(), i + cfg_.batch_size);
    batches.emplace_back(order.begin() + i, order.begin() + end);
  }
  // A trailing batch with fewer than two prediction points cannot carry a
  // CCC loss; fold it into the previous batch.
  if (batches.size() > 1 &&
      static_cast<int64_t>(batches.back().size()) * points_per_sample() < 2) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

Tensor Trainer::targets_for(const std::vector<int>& batch) const {
  bool per_clip = cfg_.fusion.prediction == PredictionMode::PerClip;
  std::vector<double> values;
  int64_t k = cache_.front().clip_targets.shape()[1];
  for (int idx : batch) {
    const Tensor& t =
        per_clip ? cache_[idx].clip_targets : cache_[idx].pooled_targets;
    values.insert(values.end(), t.data().begin(), t.data().end());
  }
  int64_t rows = static_cast<int64_t>(values.size()) / k;
  return Tensor::from_data({rows, k}, std::move(values));
}

std::vector<int> Trainer::labels_for(const std::vector<int>& batch) const {
  bool per_clip = cfg_.fusion.prediction == PredictionMode::PerClip;
  std::vector<int> labels;
  for (int idx : batch) {
    if (per_clip)
      labels.insert(labels.end(), cache_[idx].clip_labels.begin(),
                    cache_[idx].clip_labels.end());
    else
      labels.push_back(cache_[idx].pooled_label);
  }
  return labels;
}

MetricsRecord Trainer::base_record(int epoch, const std::string& split) const {
  MetricsRecord rec;
  rec.run_id = run_id_;
  rec.epoch = epoch;
  rec.split = split;
  rec.seed = cfg_.seed;
  rec.config_hash = config_hash_;
  return rec;
}

namespace {

// CCC per target column of row-major [N x K] value arrays.
std::vector<double> per_dim_ccc(const std::vector<double>& pred,
                                const std::vector<double>& target, int64_t k) {
  int64_t n = static_cast<int64_t>(pred.size()) / k;
  std::vector<double> out;
  for (int64_t d = 0; d < k; ++d) {
    std::vector<double> p(n), t(n);
    for (int64_t i = 0; i < n; ++i) {
      p[i] = pred[i * k + d];
      t[i] = target[i * k + d];
    }
    out.push_back(ccc_detailed(p, t).value);
  }
  return out;
}

void fill_regression_metrics(MetricsRecord& rec,
                             const std::vector<double>& cccs) {
  rec.valence_ccc = cccs[0];
  if (cccs.size() > 1) {
    rec.arousal_ccc = cccs[1];
    rec.mean_ccc = 0.5 * (cccs[0] + cccs[1]);
  } else {
    rec.mean_ccc = cccs[0];
  }
}

double summary_metric(const std::vector<double>& cccs) {
  double s = 0.0;
  for (double c : cccs) s += c;
  return s / static_cast<double>(cccs.size());
}

}  // namespace

Trainer::EvalOutcome Trainer::evaluate(const std::vector<int>& indices) const {
  if (indices.empty()) throw ConfigError("evaluate: empty index set");
  NoGradGuard frozen;
  Rng eval_rng(0);  // never drawn from: training=false
  std::vector<double> preds, targets;
  std::vector<int> labels;
  int64_t k = cfg_.fusion.head_output_dim;
  for (int idx : indices) {
    Tensor out = model_->forward(cache_[idx].fa, cache_[idx].fb, false,
                                 eval_rng);
    preds.insert(preds.end(), out.data().begin(), out.data().end());
    if (cfg_.task == TaskKind::RegressionCcc) {
      const Tensor& t = cfg_.fusion.prediction == PredictionMode::PerClip
                            ? cache_[idx].clip_targets
                            : cache_[idx].pooled_targets;
      targets.insert(targets.end(), t.data().begin(), t.data().end());
    } else {
      auto l = labels_for({idx});
      labels.insert(labels.end(), l.begin(), l.end());
    }
  }
  EvalOutcome outcome;
  int64_t rows = static_cast<int64_t>(preds.size()) / k;
  Tensor pred_t = Tensor::from_data({rows, k}, preds);
  if (cfg_.task == TaskKind::RegressionCcc) {
    auto cccs = per_dim_ccc(preds, targets, k);
    outcome.metric = summary_metric(cccs);
    outcome.valence_ccc = cccs[0];
    if (cccs.size() > 1) {
      outcome.arousal_ccc = cccs[1];
      outcome.mean_ccc = 0.5 * (cccs[0] + cccs[1]);
    } else {
      outcome.mean_ccc = cccs[0];
    }
    double loss = 0.0;
    for (double c : cccs) loss += 1.0 - c;
    outcome.loss = loss / static_cast<double>(cccs.size());
  } else {
    std::vector<double> label_values(labels.begin(), labels.end());
    Tensor label_t =
        Tensor::from_data({static_cast<int64_t>(labels.size())}, label_values);
    outcome.acc = accuracy(pred_t, label_t);
    outcome.metric = *outcome.acc;
    outcome.loss = cross_entropy(pred_t, labels).item();
  }
  return outcome;
}

bool Trainer::done() const {
  return diverged_ || epoch_ >= cfg_.max_epochs ||
         (has_best_ && since_improve_ > cfg_.patience);
}

void Trainer::run_one_epoch() {
  if (done()) return;
  int epoch_number = epoch_ + 1;

  std::vector<int> order = splits_.train;
  Rng shuffle_rng(
      derive_seed(cfg_.seed, "shuffle:" + std::to_string(epoch_number)));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  order_hash_ = fnv1a(order.data(), order.size() * sizeof(int), order_hash_);

  auto batches = make_batches(order);
  double loss_sum = 0.0;
  std::vector<double> epoch_preds, epoch_targets;
  std::vector<int> epoch_labels;
  int64_t k = cfg_.fusion.head_output_dim;

  for (const auto& batch : batches) {
    opt_->zero_grad();
    std::vector<Tensor> outs;
    outs.reserve(batch.size());
    for (int idx : batch) {
      Tensor out = model_->forward(cache_[idx].fa, cache_[idx].fb, true, rng_);
      outs.push_back(out.rank() == 1 ? reshape(out, {1, k}) : out);
    }
    Tensor preds = outs.size() == 1 ? outs[0] : concat(outs, 0);
    Tensor loss;
    if (cfg_.task == TaskKind::RegressionCcc) {
      Tensor target = targets_for(batch);
      loss = ccc_loss(preds, target);
      epoch_targets.insert(epoch_targets.end(), target.data().begin(),
                           target.data().end());
    } else {
      auto labels = labels_for(batch);
      loss = cross_entropy(preds, labels);
      epoch_labels.insert(epoch_labels.end(), labels.begin(), labels.end());
    }
    double loss_value = loss.item();
    epoch_preds.insert(epoch_preds.end(), preds.data().begin(),
                       preds.data().end());
    if (!std::isfinite(loss_value)) {
      diverged_ = true;
      MetricsRecord rec = base_record(epoch_number, "train");
      rec.loss = loss_value;
      records_.push_back(rec);
      return;
    }
    loss.backward();
    opt_->step();
    loss_sum += loss_value;
  }

  // Train-split record from the training-pass outputs (identical to an eval
  // pass whenever dropout is off).
  MetricsRecord train_rec = base_record(epoch_number, "train");
  train_rec.loss = loss_sum / static_cast<double>(batches.size());
  if (cfg_.task == TaskKind::RegressionCcc) {
    fill_regression_metrics(train_rec, per_dim_ccc(epoch_preds, epoch_targets, k));
  } else {
    int64_t rows = static_cast<int64_t>(epoch_preds.size()) / k;
    std::vector<double> lv(epoch_labels.begin(), epoch_labels.end());
    train_rec.accuracy =
        accuracy(Tensor::from_data({rows, k}, epoch_preds),
                 Tensor::from_data({static_cast<int64_t>(lv.size())}, lv));
  }
  records_.push_back(train_rec);

  EvalOutcome val = evaluate(splits_.val);
  MetricsRecord val_rec = base_record(epoch_number, "val");
  val_rec.loss = val.loss;
  val_rec.valence_ccc = val.valence_ccc;
  val_rec.arousal_ccc = val.arousal_ccc;
  val_rec.mean_ccc = val.mean_ccc;
  val_rec.accuracy = val.acc;
  records_.push_back(val_rec);

  if (!has_best_ || val.metric > best_metric_) {
    has_best_ = true;
    best_metric_ = val.metric;
    best_epoch_ = epoch_number;
    since_improve_ = 0;
    best_params_ = snapshot_parameters(*model_);
  } else {
    ++since_improve_;
  }
  epoch_ = epoch_number;
}

TrainResult Trainer::run() {
  while (!done()) run_one_epoch();
  TrainResult result;
  result.best = make_checkpoint();
  result.records = records_;
  result.best_metric = best_metric_;
  result.best_epoch = best_epoch_;
  result.diverged = diverged_;
  result.data_order_hash = data_order_hash();
  result.run_id = run_id_;
  result.config_hash = config_hash_;
  return result;
}

Checkpoint Trainer::make_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash_;
  ckpt.epoch = epoch_;
  ckpt.best_epoch = best_epoch_;
  ckpt.best_metric = best_metric_;
  ckpt.epochs_since_improve = since_improve_;
  std::ostringstream rng_text;
  rng_text << rng_;
  ckpt.rng_state = rng_text.str();
  ckpt.opt_kind = opt_->kind();
  ckpt.opt_state = opt_->state();
  ckpt.params = snapshot_parameters(*model_);
  ckpt.best_params = best_params_;
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.config_hash != config_hash_)
    throw ConfigError("checkpoint config hash " + ckpt.config_hash +
                      " does not match run config " + config_hash_);
  load_parameters(*model_, ckpt.params);
  best_params_ = ckpt.best_params;
  has_best_ = !best_params_.empty();
  best_metric_ = ckpt.best_metric;
  best_epoch_ = ckpt.best_epoch;
  since_improve_ = ckpt.epochs_since_improve;
  epoch_ = ckpt.epoch;
  std::istringstream rng_text(ckpt.rng_state);
  rng_text >> rng_;
  if (!rng_text) throw IoError("corrupt RNG state in checkpoint");
  if (ckpt.opt_kind != opt_->kind())
    throw ConfigError("checkpoint optimizer kind does not match config");
  opt_->set_state(ckpt.opt_state);
  records_.clear();
  diverged_ = false;
}

void Trainer::load_best_parameters() {
  if (!has_best_) throw ConfigError("no best parameters recorded yet");
  load_parameters(*model_, best_params_);
}

TrainResult train(const RunConfig& cfg, const SyntheticDataset& data,
                  const SplitIndices& splits) {
  Trainer trainer(cfg, data, splits);
  return trainer.run();
}

// ---- grid search --------------------------------------------------------------------

GridSearchResult grid_search(const RunConfig& cfg, const SyntheticDataset& data,
                             const SplitIndices& splits) {
  if (cfg.lr_grid.empty()) throw ConfigError("grid_search: empty lr_grid");
  GridSearchResult result;
  bool have_best = false;
  double best_metric = 0.0, best_lr = 0.0;
  for (double lr : cfg.lr_grid) {
    RunConfig point_cfg = cfg;
    point_cfg.learning_rate = lr;
    TrainResult tr = train(point_cfg, data, splits);
    double metric = tr.diverged ? -std::numeric_limits<double>::infinity()
                                : tr.best_metric;
    result.points.push_back({lr, metric, tr.diverged});
    // Argmax over validation metrics; ties resolve toward the lower rate.
    if (!have_best || metric > best_metric ||
        (metric == best_metric && lr < best_lr)) {
      have_best = true;
      best_metric = metric;
      best_lr = lr;
      result.best_config = point_cfg;
      result.best_result = std::move(tr);
    }
  }
  return result;
}

// ---- k-fold -----------------------------------------------------------------------

KFoldResult kfold_run(const RunConfig& cfg, SyntheticDataset& data, int k) {
  if (data.num_folds != k)
    make_folds(data, k, derive_seed(data.config.seed, "folds"));
  KFoldResult result;
  for (int fold = 0; fold < k; ++fold) {
    RunConfig fold_cfg = cfg;
    fold_cfg.run_label = (cfg.run_label.empty()
                              ? to_string(cfg.model) + "-s" +
                                    std::to_string(cfg.seed)
                              : cfg.run_label) +
                         "-fold" + std::to_string(fold);
    TrainResult tr = train(fold_cfg, data, fold_split(data, fold));
    result.folds.push_back({fold, tr.best_metric, std::move(tr)});
  }
  double mean = 0.0;
  for (const auto& f : result.folds) mean += f.metric;
  mean /= static_cast<double>(k);
  double var = 0.0;
  for (const auto& f : result.folds) var += (f.metric - mean) * (f.metric - mean);
  result.mean_metric = mean;
  result.std_metric = std::sqrt(var / static_cast<double>(k));
  return result;
}

// ---- ablation ----------------------------------------------------------------------

namespace {

const std::array<ModelKind, 5> kAblationOrder = {
    ModelKind::UnimodalA, ModelKind::UnimodalB, ModelKind::Concat,
    ModelKind::Vanilla, ModelKind::Jmt};

}  // namespace

AblationResult ablation_run(const RunConfig& base, const SyntheticDataset& data,
                            const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("ablation_run: need at least one seed");
  SplitIndices splits =
      split_by_subject(data, 0.6, 0.2, derive_seed(data.config.seed, "split"));
  AblationResult result;
  for (uint64_t seed : seeds) {
    std::string order_hash;
    for (ModelKind kind : kAblationOrder) {
      RunConfig cfg = base;
      cfg.model = kind;
      cfg.seed = seed;
      cfg.run_label = to_string(kind) + "-s" + std::to_string(seed);
      Trainer trainer(cfg, data, splits);
      TrainResult tr = trainer.run();
      AblationCell cell;
      cell.kind = kind;
      cell.seed = seed;
      cell.val_metric = tr.best_metric;
      cell.diverged = tr.diverged;
      cell.order_hash = tr.data_order_hash;
      if (!tr.diverged) {
        trainer.load_best_parameters();
        cell.test_metric = trainer.evaluate(splits.test).metric;
      } else {
        cell.test_metric = -std::numeric_limits<double>::infinity();
      }
      if (order_hash.empty())
        order_hash = cell.order_hash;
      else if (order_hash != cell.order_hash)
        throw NumericError(
            "ablation protocol violation: data order diverged across variants");
      result.cells.push_back(std::move(cell));
    }
  }
  for (ModelKind kind : kAblationOrder) {
    AblationSummaryRow row;
    row.kind = kind;
    for (const auto& cell : result.cells)
      if (cell.kind == kind) row.per_seed.push_back(cell.test_metric);
    double mean = 0.0;
    for (double v : row.per_seed) mean += v;
    mean /= static_cast<double>(row.per_seed.size());
    double var = 0.0;
    for (double v : row.per_seed) var += (v - mean) * (v - mean);
    row.mean = mean;
    row.stddev = std::sqrt(var / static_cast<double>(row.per_seed.size()));
    result.summary.push_back(std::move(row));
  }
  return result;
}

std::string ablation_to_text(const AblationResult& result) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %12s %12s  per-seed\n", "model",
                "mean", "std");
  out << line;
  for (const auto& row : result.summary) {
    std::snprintf(line, sizeof(line), "%-12s %12.4f %12.4f  ",
                  to_string(row.kind).c_str(), row.mean, row.stddev);
    out << line;
    for (double v : row.per_seed) {
      std::snprintf(line, sizeof(line), "%.4f ", v);
      out << line;
    }
    out << "\n";
  }
  return out.str();
}

std::string ablation_to_csv(const AblationResult& result) {
  std::ostringstream out;
  out << "model,seed,test_metric,val_metric,order_hash\n";
  for (const auto& cell : result.cells) {
    char buf[64];
    out << to_string(cell.kind) << "," << cell.seed << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", cell.test_metric);
    out << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", cell.val_metric);
    out << buf << "," << cell.order_hash << "\n";
  }
  return out.str();
}

std::string ablation_to_json(const AblationResult& result) {
  nlohmann::json j;
  j["cells"] = nlohmann::json::array();
  for (const auto& cell : result.cells)
    j["cells"].push_back({{"model", to_string(cell.kind)},
                          {"seed", cell.seed},
                          {"test_metric", cell.test_metric},
                          {"val_metric", cell.val_metric},
                          {"order_hash", cell.order_hash},
                          {"diverged", cell.diverged}});
  j["summary"] = nlohmann::json::array();
  for (const auto& row : result.summary)
    j["summary"].push_back({{"model", to_string(row.kind)},
                            {"mean", row.mean},
                            {"stddev", row.stddev},
                            {"per_seed", row.per_seed}});
  return j.dump(2);
}

}  // namespace jmt
