#pragma once

#include <array>
#include <memory>
#include <optional>

#include "jmt/layers.hpp"

namespace jmt {

enum class AggregationMode { SelfAttentionStack, ConcatFc };
enum class PredictionMode { Pooled, PerClip };
enum class ModelKind { Jmt, Vanilla, Concat, UnimodalA, UnimodalB };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct FusionConfig {
  int64_t model_dim = 512;
  int num_heads = 8;
  int encoder_depth = 1;
  AggregationMode aggregation = AggregationMode::SelfAttentionStack;
  ScalingVariant scaling = ScalingVariant::SqrtDk;
  PredictionMode prediction = PredictionMode::Pooled;
  double dropout_rate = 0.0;
  int64_t head_output_dim = 2;
  int64_t ffn_hidden_dim = 0;  // 0 falls back to model_dim
  bool positional_encoding = false;

  int64_t ffn_dim() const {
    return ffn_hidden_dim > 0 ? ffn_hidden_dim : model_dim;
  }
  void validate() const;
};

// Mean attention mass the aggregator assigns to each stacked block output.
// mean_weights[q][k] averages over heads (and clips in per-clip mode); every
// row sums to 1, and mass_per_block averages the rows.
struct AttentionReport {
  std::vector<std::string> block_names;
  std::vector<std::vector<double>> mean_weights;
  std::vector<double> mass_per_block;
};

// Common face of all trainable predictors: consumes per-clip feature
// matrices [T x D] from both modalities and emits either one prediction
// vector (pooled) or one per clip.
class AffectModel {
 public:
  virtual ~AffectModel() = default;

  virtual Tensor forward(const Tensor& feat_a, const Tensor& feat_b,
                         bool training, Rng& rng) const = 0;
  virtual void append_parameters(std::vector<NamedTensor>& out) const = 0;
  virtual ModelKind kind() const = 0;
  virtual const FusionConfig& config() const = 0;
  virtual std::optional<AttentionReport> attention_report(
      const Tensor& feat_a, const Tensor& feat_b) const {
    return std::nullopt;
  }

  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  int64_t parameter_count() const;
};

// J = FC([F_B ; F_A]): per-clip concatenation to 2D followed by projection
// back to D, giving the joint branch its input.
Tensor joint_representation(const Tensor& feat_a, const Tensor& feat_b,
                            const Linear& joint_fc);

// Three-branch fusion: per-branch self-attention encoders over F_A, F_B and
// the joint representation, six cross-attention blocks over the ordered
// source pairs (A<-B, A<-J, B<-A, B<-J, J<-A, J<-B), temporal mean pooling,
// and an aggregator over the stacked 6 x D sequence ahead of the prediction
// head. Block (X<-Y) takes its queries from X and keys/values from Y.
class JointFusionModel : public AffectModel {
 public:
  static constexpr int kNumBlocks = 6;
  static const std::array<const char*, kNumBlocks> kBlockNames;

  JointFusionModel(const FusionConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& feat_a, const Tensor& feat_b, bool training,
                 Rng& rng) const override;
  void append_parameters(std::vector<NamedTensor>& out) const override;
  ModelKind kind() const override { return ModelKind::Jmt; }
  const FusionConfig& config() const override { return cfg_; }
  std::optional<AttentionReport> attention_report(
      const Tensor& feat_a, const Tensor& feat_b) const override;

  Linear& joint_fc() { return joint_fc_; }
  const Linear& joint_fc() const { return joint_fc_; }
  std::vector<EncoderBlock>& encoder_a() { return enc_a_; }
  std::vector<EncoderBlock>& encoder_b() { return enc_b_; }
  std::vector<EncoderBlock>& encoder_j() { return enc_j_; }
  const std::vector<EncoderBlock>& encoder_a() const { return enc_a_; }
  const std::vector<EncoderBlock>& encoder_b() const { return enc_b_; }
  const std::vector<EncoderBlock>& encoder_j() const { return enc_j_; }
  MultiHeadAttention& cross_block(int idx) { return cross_.at(idx); }
  const MultiHeadAttention& cross_block(int idx) const { return cross_.at(idx); }
  EncoderBlock* aggregator() { return agg_ ? &*agg_ : nullptr; }
  const EncoderBlock* aggregator() const { return agg_ ? &*agg_ : nullptr; }
  Linear& head() { return head_; }
  const Linear& head() const { return head_; }

 private:
  FusionConfig cfg_;
  Linear joint_fc_;
  std::vector<EncoderBlock> enc_a_, enc_b_, enc_j_;
  std::array<MultiHeadAttention, kNumBlocks> cross_;
  std::optional<EncoderBlock> agg_;
  Linear head_;
};

// Two-branch ablation baseline: same machinery minus the joint branch, with
// cross blocks (A<-B, B<-A) only.
class VanillaFusionModel : public AffectModel {
 public:
  static constexpr int kNumBlocks = 2;
  static const std::array<const char*, kNumBlocks> kBlockNames;

  VanillaFusionModel(const FusionConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& feat_a, const Tensor& feat_b, bool training,
                 Rng& rng) const override;
  void append_parameters(std::vector<NamedTensor>& out) const override;
  ModelKind kind() const override { return ModelKind::Vanilla; }
  const FusionConfig& config() const override { return cfg_; }
  std::optional<AttentionReport> attention_report(
      const Tensor& feat_a, const Tensor& feat_b) const override;

  std::vector<EncoderBlock>& encoder_a() { return enc_a_; }
  std::vector<EncoderBlock>& encoder_b() { return enc_b_; }
  const std::vector<EncoderBlock>& encoder_a() const { return enc_a_; }
  const std::vector<EncoderBlock>& encoder_b() const { return enc_b_; }
  MultiHeadAttention& cross_block(int idx) { return cross_.at(idx); }
  const MultiHeadAttention& cross_block(int idx) const { return cross_.at(idx); }
  EncoderBlock* aggregator() { return agg_ ? &*agg_ : nullptr; }
  const EncoderBlock* aggregator() const { return agg_ ? &*agg_ : nullptr; }
  Linear& head() { return head_; }
  const Linear& head() const { return head_; }

 private:
  FusionConfig cfg_;
  std::vector<EncoderBlock> enc_a_, enc_b_;
  std::array<MultiHeadAttention, kNumBlocks> cross_;
  std::optional<EncoderBlock> agg_;
  Linear head_;
};

// Feature-concatenation baseline: [F_B ; F_A] through a two-layer FC stack,
// no attention parameters anywhere.
class ConcatBaseline : public AffectModel {
 public:
  ConcatBaseline(const FusionConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& feat_a, const Tensor& feat_b, bool training,
                 Rng& rng) const override;
  void append_parameters(std::vector<NamedTensor>& out) const override;
  ModelKind kind() const override { return ModelKind::Concat; }
  const FusionConfig& config() const override { return cfg_; }

  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

 private:
  FusionConfig cfg_;
  Linear fc1_, fc2_;
};

// Single-modality control for the ablation table.
class UnimodalBaseline : public AffectModel {
 public:
  UnimodalBaseline(const FusionConfig& cfg, char modality, Rng& rng);

  Tensor forward(const Tensor& feat_a, const Tensor& feat_b, bool training,
                 Rng& rng) const override;
  void append_parameters(std::vector<NamedTensor>& out) const override;
  ModelKind kind() const override {
    return modality_ == 'A' ? ModelKind::UnimodalA : ModelKind::UnimodalB;
  }
  const FusionConfig& config() const override { return cfg_; }

 private:
  FusionConfig cfg_;
  char modality_;
  Linear fc1_, fc2_;
};

std::unique_ptr<AffectModel> make_model(ModelKind kind,
                                        const FusionConfig& cfg, Rng& rng);

}  // namespace jmt
