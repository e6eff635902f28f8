#include "jmt/fusion.hpp"

#include <cmath>

namespace jmt {

void FusionConfig::validate() const {
  if (model_dim <= 0) throw ConfigError("model_dim must be positive");
  if (num_heads <= 0 || model_dim % num_heads != 0)
    throw ConfigError("model_dim " + std::to_string(model_dim) +
                      " must be divisible by num_heads " +
                      std::to_string(num_heads));
  if (encoder_depth < 1) throw ConfigError("encoder_depth must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("dropout_rate must be in [0, 1)");
  if (head_output_dim < 1) throw ConfigError("head_output_dim must be >= 1");
  if (ffn_hidden_dim < 0) throw ConfigError("ffn_hidden_dim must be >= 0");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Jmt:
      return "jmt";
    case ModelKind::Vanilla:
      return "vanilla";
    case ModelKind::Concat:
      return "concat";
    case ModelKind::UnimodalA:
      return "unimodal_A";
    case ModelKind::UnimodalB:
      return "unimodal_B";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "jmt") return ModelKind::Jmt;
  if (name == "vanilla") return ModelKind::Vanilla;
  if (name == "concat") return ModelKind::Concat;
  if (name == "unimodal_A" || name == "unimodal_a") return ModelKind::UnimodalA;
  if (name == "unimodal_B" || name == "unimodal_b") return ModelKind::UnimodalB;
  throw ConfigError("unknown model kind '" + name + "'");
}

std::vector<NamedTensor> AffectModel::named_parameters() const {
  std::vector<NamedTensor> out;
  append_parameters(out);
  return out;
}

std::vector<Tensor> AffectModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

int64_t AffectModel::parameter_count() const {
  int64_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

Tensor joint_representation(const Tensor& feat_a, const Tensor& feat_b,
                            const Linear& joint_fc) {
  if (feat_a.rank() != 2 || feat_b.rank() != 2)
    throw ShapeError("joint_representation expects [T x D] features");
  if (feat_a.shape()[0] != feat_b.shape()[0])
    throw ShapeError("joint_representation: clip counts not aligned, " +
                     shape_to_string(feat_a.shape()) + " vs " +
                     shape_to_string(feat_b.shape()));
  if (feat_a.shape()[1] != feat_b.shape()[1])
    throw ShapeError("joint_representation: feature dims differ, " +
                     shape_to_string(feat_a.shape()) + " vs " +
                     shape_to_string(feat_b.shape()));
  Tensor joint = concat({feat_b, feat_a}, 1);  // J = [F_B ; F_A]
  if (joint.shape()[1] != joint_fc.in_dim())
    throw ShapeError("joint_fc expects input dim " +
                     std::to_string(joint_fc.in_dim()) + ", got " +
                     shape_to_string(joint.shape()));
  return joint_fc.forward(joint);
}

// ---- shared forward machinery ----------------------------------------------

namespace {

void check_features(const FusionConfig& cfg, const Tensor& fa,
                    const Tensor& fb) {
  if (fa.rank() != 2 || fb.rank() != 2 || fa.shape()[1] != cfg.model_dim ||
      fb.shape()[1] != cfg.model_dim)
    throw ShapeError("fusion expects [T x " + std::to_string(cfg.model_dim) +
                     "] features, got " + shape_to_string(fa.shape()) +
                     " and " + shape_to_string(fb.shape()));
  if (fa.shape()[0] != fb.shape()[0])
    throw ShapeError("fusion: clip counts not aligned, " +
                     shape_to_string(fa.shape()) + " vs " +
                     shape_to_string(fb.shape()));
}

Tensor maybe_position(const FusionConfig& cfg, const Tensor& x) {
  if (!cfg.positional_encoding) return x;
  return add(x, sinusoidal_encoding(x.shape()[0], x.shape()[1]));
}

Tensor run_encoders(const std::vector<EncoderBlock>& chain, Tensor x,
                    bool training, Rng& rng) {
  for (const auto& block : chain) x = block.forward(x, training, rng);
  return x;
}

Tensor stack_rows(const std::vector<Tensor>& vecs) {
  std::vector<Tensor> rows;
  rows.reserve(vecs.size());
  for (const auto& v : vecs) rows.push_back(reshape(v, {1, v.shape()[0]}));
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

// Stacked block vectors -> aggregator -> flattened [1 x S*D].
Tensor aggregate_stack(const Tensor& stack, const EncoderBlock* agg,
                       bool training, Rng& rng, std::vector<Tensor>* attn) {
  Tensor z = agg ? agg->forward(stack, training, rng, attn) : stack;
  return reshape(z, {1, z.shape()[0] * z.shape()[1]});
}

// Common tail after the cross-attention blocks. In pooled mode each block
// output is mean-pooled over clips first; in per-clip mode the stack and
// head run once per clip position.
Tensor predict_from_blocks(const std::vector<Tensor>& blocks,
                           const FusionConfig& cfg, const EncoderBlock* agg,
                           const Linear& head, bool training, Rng& rng,
                           std::vector<std::vector<Tensor>>* attn_capture) {
  int64_t num_clips = blocks[0].shape()[0];
  if (cfg.prediction == PredictionMode::Pooled) {
    std::vector<Tensor> pooled;
    pooled.reserve(blocks.size());
    for (const auto& o : blocks) pooled.push_back(mean_axis(o, 0));
    std::vector<Tensor> attn;
    Tensor flat = aggregate_stack(stack_rows(pooled), agg, training, rng,
                                  attn_capture ? &attn : nullptr);
    if (attn_capture) attn_capture->push_back(std::move(attn));
    flat = dropout(flat, cfg.dropout_rate, training, rng);
    return reshape(head.forward(flat), {cfg.head_output_dim});
  }
  std::vector<Tensor> rows;
  rows.reserve(num_clips);
  for (int64_t t = 0; t < num_clips; ++t) {
    std::vector<Tensor> at_t;
    at_t.reserve(blocks.size());
    for (const auto& o : blocks)
      at_t.push_back(reshape(slice(o, 0, t, t + 1), {o.shape()[1]}));
    std::vector<Tensor> attn;
    Tensor flat = aggregate_stack(stack_rows(at_t), agg, training, rng,
                                  attn_capture ? &attn : nullptr);
    if (attn_capture) attn_capture->push_back(std::move(attn));
    flat = dropout(flat, cfg.dropout_rate, training, rng);
    rows.push_back(head.forward(flat));
  }
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

AttentionReport summarize_attention(
    const std::vector<std::vector<Tensor>>& capture,
    const std::vector<std::string>& names) {
  size_t s = names.size();
  AttentionReport report;
  report.block_names = names;
  report.mean_weights.assign(s, std::vector<double>(s, 0.0));
  int64_t count = 0;
  for (const auto& heads : capture)
    for (const auto& w : heads) {
      for (size_t i = 0; i < s; ++i)
        for (size_t j = 0; j < s; ++j)
          report.mean_weights[i][j] += w.at(i, j);
      ++count;
    }
  if (count > 0)
    for (auto& row : report.mean_weights)
      for (auto& v : row) v /= static_cast<double>(count);
  report.mass_per_block.assign(s, 0.0);
  for (size_t j = 0; j < s; ++j) {
    for (size_t i = 0; i < s; ++i)
      report.mass_per_block[j] += report.mean_weights[i][j];
    report.mass_per_block[j] /= static_cast<double>(s);
  }
  return report;
}

std::optional<EncoderBlock> make_aggregator(const FusionConfig& cfg, Rng& rng) {
  if (cfg.aggregation != AggregationMode::SelfAttentionStack)
    return std::nullopt;
  return EncoderBlock(cfg.model_dim, cfg.num_heads, cfg.ffn_dim(), cfg.scaling,
                      cfg.dropout_rate, rng);
}

}  // namespace

// ---- JointFusionModel --------------------------------------------------------

const std::array<const char*, JointFusionModel::kNumBlocks>
    JointFusionModel::kBlockNames = {"A<-B", "A<-J", "B<-A",
                                     "B<-J", "J<-A", "J<-B"};

JointFusionModel::JointFusionModel(const FusionConfig& cfg, Rng& rng)
    : cfg_(cfg), joint_fc_(2 * cfg.model_dim, cfg.model_dim, rng) {
  cfg_.validate();
  for (int d = 0; d < cfg.encoder_depth; ++d)
    enc_a_.emplace_back(cfg.model_dim, cfg.num_heads, cfg.ffn_dim(),
                        cfg.scaling, cfg.dropout_rate, rng);
  for (int d = 0; d < cfg.encoder_depth; ++d)
    enc_b_.emplace_back(cfg.model_dim, cfg.num_heads, cfg.ffn_dim(),
                        cfg.scaling, cfg.dropout_rate, rng);
  for (int d = 0; d < cfg.encoder_depth; ++d)
    enc_j_.emplace_back(cfg.model_dim, cfg.num_heads, cfg.ffn_dim(),
                        cfg.scaling, cfg.dropout_rate, rng);
  for (int i = 0; i < kNumBlocks; ++i)
    cross_[i] =
        MultiHeadAttention(cfg.model_dim, cfg.num_heads, cfg.scaling, rng);
  agg_ = make_aggregator(cfg_, rng);
  head_ = Linear(kNumBlocks * cfg.model_dim, cfg.head_output_dim, rng);
}

Tensor JointFusionModel::forward(const Tensor& feat_a, const Tensor& feat_b,
                                 bool training, Rng& rng) const {
  check_features(cfg_, feat_a, feat_b);
  Tensor joint = joint_representation(feat_a, feat_b, joint_fc_);
  Tensor ea = run_encoders(enc_a_, maybe_position(cfg_, feat_a), training, rng);
  Tensor eb = run_encoders(enc_b_, maybe_position(cfg_, feat_b), training, rng);
  Tensor ej = run_encoders(enc_j_, maybe_position(cfg_, joint), training, rng);
  std::vector<Tensor> blocks = {
      cross_[0].forward(ea, eb), cross_[1].forward(ea, ej),
      cross_[2].forward(eb, ea), cross_[3].forward(eb, ej),
      cross_[4].forward(ej, ea), cross_[5].forward(ej, eb)};
  return predict_from_blocks(blocks, cfg_, agg_ ? &*agg_ : nullptr, head_,
                             training, rng, nullptr);
}

std::optional<AttentionReport> JointFusionModel::attention_report(
    const Tensor& feat_a, const Tensor& feat_b) const {
  if (!agg_) return std::nullopt;
  NoGradGuard frozen;
  Rng rng(0);  // no dropout draws happen in eval mode
  check_features(cfg_, feat_a, feat_b);
  Tensor joint = joint_representation(feat_a, feat_b, joint_fc_);
  Tensor ea = run_encoders(enc_a_, maybe_position(cfg_, feat_a), false, rng);
  Tensor eb = run_encoders(enc_b_, maybe_position(cfg_, feat_b), false, rng);
  Tensor ej = run_encoders(enc_j_, maybe_position(cfg_, joint), false, rng);
  std::vector<Tensor> blocks = {
      cross_[0].forward(ea, eb), cross_[1].forward(ea, ej),
      cross_[2].forward(eb, ea), cross_[3].forward(eb, ej),
      cross_[4].forward(ej, ea), cross_[5].forward(ej, eb)};
  std::vector<std::vector<Tensor>> capture;
  predict_from_blocks(blocks, cfg_, &*agg_, head_, false, rng, &capture);
  return summarize_attention(
      capture, {kBlockNames.begin(), kBlockNames.end()});
}

void JointFusionModel::append_parameters(std::vector<NamedTensor>& out) const {
  joint_fc_.append_parameters("joint_fc", out);
  for (size_t i = 0; i < enc_a_.size(); ++i)
    enc_a_[i].append_parameters("enc_a." + std::to_string(i), out);
  for (size_t i = 0; i < enc_b_.size(); ++i)
    enc_b_[i].append_parameters("enc_b." + std::to_string(i), out);
  for (size_t i = 0; i < enc_j_.size(); ++i)
    enc_j_[i].append_parameters("enc_j." + std::to_string(i), out);
  static const char* cross_names[] = {"cross_ab", "cross_aj", "cross_ba",
                                      "cross_bj", "cross_ja", "cross_jb"};
  for (int i = 0; i < kNumBlocks; ++i)
    cross_[i].append_parameters(cross_names[i], out);
  if (agg_) agg_->append_parameters("agg", out);
  head_.append_parameters("head", out);
}

// ---- VanillaFusionModel --------------------------------------------------------

const std::array<const char*, VanillaFusionModel::kNumBlocks>
    VanillaFusionModel::kBlockNames = {"A<-B", "B<-A"};

VanillaFusionModel::VanillaFusionModel(const FusionConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  for (int d = 0; d < cfg.encoder_depth; ++d)
    enc_a_.emplace_back(cfg.model_dim, cfg.num_heads, cfg.ffn_dim(),
                        cfg.scaling, cfg.dropout_rate, rng);
  for (int d = 0; d < cfg.encoder_depth; ++d)
    enc_b_.emplace_back(cfg.model_dim, cfg.num_heads, cfg.ffn_dim(),
                        cfg.scaling, cfg.dropout_rate, rng);
  for (int i = 0; i < kNumBlocks; ++i)
    cross_[i] =
        MultiHeadAttention(cfg.model_dim, cfg.num_heads, cfg.scaling, rng);
  agg_ = make_aggregator(cfg_, rng);
  head_ = Linear(kNumBlocks * cfg.model_dim, cfg.head_output_dim, rng);
}

Tensor VanillaFusionModel::forward(const Tensor& feat_a, const Tensor& feat_b,
                                   bool training, Rng& rng) const {
  check_features(cfg_, feat_a, feat_b);
  Tensor ea = run_encoders(enc_a_, maybe_position(cfg_, feat_a), training, rng);
  Tensor eb = run_encoders(enc_b_, maybe_position(cfg_, feat_b), training, rng);
  std::vector<Tensor> blocks = {cross_[0].forward(ea, eb),
                                cross_[1].forward(eb, ea)};
  return predict_from_blocks(blocks, cfg_, agg_ ? &*agg_ : nullptr, head_,
                             training, rng, nullptr);
}

std::optional<AttentionReport> VanillaFusionModel::attention_report(
    const Tensor& feat_a, const Tensor& feat_b) const {
  if (!agg_) return std::nullopt;
  NoGradGuard frozen;
  Rng rng(0);
  check_features(cfg_, feat_a, feat_b);
  Tensor ea = run_encoders(enc_a_, maybe_position(cfg_, feat_a), false, rng);
  Tensor eb = run_encoders(enc_b_, maybe_position(cfg_, feat_b), false, rng);
  std::vector<Tensor> blocks = {cross_[0].forward(ea, eb),
                                cross_[1].forward(eb, ea)};
  std::vector<std::vector<Tensor>> capture;
  predict_from_blocks(blocks, cfg_, &*agg_, head_, false, rng, &capture);
  return summarize_attention(
      capture, {kBlockNames.begin(), kBlockNames.end()});
}

void VanillaFusionModel::append_parameters(std::vector<NamedTensor>& out) const {
  for (size_t i = 0; i < enc_a_.size(); ++i)
    enc_a_[i].append_parameters("enc_a." + std::to_string(i), out);
  for (size_t i = 0; i < enc_b_.size(); ++i)
    enc_b_[i].append_parameters("enc_b." + std::to_string(i), out);
  static const char* cross_names[] = {"cross_ab", "cross_ba"};
  for (int i = 0; i < kNumBlocks; ++i)
    cross_[i].append_parameters(cross_names[i], out);
  if (agg_) agg_->append_parameters("agg", out);
  head_.append_parameters("head", out);
}

// ---- ConcatBaseline ---------------------------------------------------------------

ConcatBaseline::ConcatBaseline(const FusionConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  fc1_ = Linear(2 * cfg.model_dim, cfg.model_dim, rng);
  fc2_ = Linear(cfg.model_dim, cfg.head_output_dim, rng);
}

Tensor ConcatBaseline::forward(const Tensor& feat_a, const Tensor& feat_b,
                               bool training, Rng& rng) const {
  check_features(cfg_, feat_a, feat_b);
  if (cfg_.prediction == PredictionMode::Pooled) {
    Tensor cat = concat({mean_axis(feat_b, 0), mean_axis(feat_a, 0)}, 0);
    Tensor x = relu(fc1_.forward(reshape(cat, {1, 2 * cfg_.model_dim})));
    x = dropout(x, cfg_.dropout_rate, training, rng);
    return reshape(fc2_.forward(x), {cfg_.head_output_dim});
  }
  Tensor cat = concat({feat_b, feat_a}, 1);  // [T x 2D]
  Tensor x = relu(fc1_.forward(cat));
  x = dropout(x, cfg_.dropout_rate, training, rng);
  return fc2_.forward(x);  // [T x out]
}

void ConcatBaseline::append_parameters(std::vector<NamedTensor>& out) const {
  fc1_.append_parameters("fc1", out);
  fc2_.append_parameters("fc2", out);
}

// ---- UnimodalBaseline ---------------------------------------------------------------

UnimodalBaseline::UnimodalBaseline(const FusionConfig& cfg, char modality,
                                   Rng& rng)
    : cfg_(cfg), modality_(modality) {
  cfg_.validate();
  if (modality != 'A' && modality != 'B')
    throw ConfigError("unimodal baseline modality must be 'A' or 'B'");
  fc1_ = Linear(cfg.model_dim, cfg.model_dim, rng);
  fc2_ = Linear(cfg.model_dim, cfg.head_output_dim, rng);
}

Tensor UnimodalBaseline::forward(const Tensor& feat_a, const Tensor& feat_b,
                                 bool training, Rng& rng) const {
  check_features(cfg_, feat_a, feat_b);
  const Tensor& feats = modality_ == 'A' ? feat_a : feat_b;
  if (cfg_.prediction == PredictionMode::Pooled) {
    Tensor pooled = reshape(mean_axis(feats, 0), {1, cfg_.model_dim});
    Tensor x = relu(fc1_.forward(pooled));
    x = dropout(x, cfg_.dropout_rate, training, rng);
    return reshape(fc2_.forward(x), {cfg_.head_output_dim});
  }
  Tensor x = relu(fc1_.forward(feats));
  x = dropout(x, cfg_.dropout_rate, training, rng);
  return fc2_.forward(x);
}

void UnimodalBaseline::append_parameters(std::vector<NamedTensor>& out) const {
  fc1_.append_parameters("fc1", out);
  fc2_.append_parameters("fc2", out);
}

// ---- factory ---------------------------------------------------------------------

std::unique_ptr<AffectModel> make_model(ModelKind kind, const FusionConfig& cfg,
                                        Rng& rng) {
  switch (kind) {
    case ModelKind::Jmt:
      return std::make_unique<JointFusionModel>(cfg, rng);
    case ModelKind::Vanilla:
      return std::make_unique<VanillaFusionModel>(cfg, rng);
    case ModelKind::Concat:
      return std::make_unique<ConcatBaseline>(cfg, rng);
    case ModelKind::UnimodalA:
      return std::make_unique<UnimodalBaseline>(cfg, 'A', rng);
    case ModelKind::UnimodalB:
      return std::make_unique<UnimodalBaseline>(cfg, 'B', rng);
  }
  throw ConfigError("unknown model kind");
}

}  // namespace jmt
