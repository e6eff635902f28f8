#pragma once

#include <utility>

#include "jmt/tensor.hpp"

namespace jmt {

using NamedTensor = std::pair<std::string, Tensor>;

// Attention score scaling. SqrtDk is the conventional 1/sqrt(d_k); Dk divides
// by d_k itself. Both are kept behind config so the two readings can be
// compared in ablations.
enum class ScalingVariant { SqrtDk, Dk };

// Weights draw from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases start
// at zero. Every layer takes the Rng at construction so (seed, config)
// reproduces parameters exactly.

class Linear {
 public:
  Linear() = default;
  Linear(int64_t in_dim, int64_t out_dim, Rng& rng);

  // [T x in] -> [T x out]; rank-1 [in] -> [out].
  Tensor forward(const Tensor& x) const;

  int64_t in_dim() const { return weight_.shape()[0]; }
  int64_t out_dim() const { return weight_.shape()[1]; }
  Tensor& weight() { return weight_; }
  const Tensor& weight() const { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& bias() const { return bias_; }

  void append_parameters(const std::string& prefix,
                         std::vector<NamedTensor>& out) const;

 private:
  Tensor weight_;  // [in x out]
  Tensor bias_;    // [out]
};

// 1D convolution over [L x C] inputs, no padding: output length is
// floor((L - kernel) / stride) + 1.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(int64_t in_channels, int64_t filters, int64_t kernel, int64_t stride,
         Rng& rng);

  Tensor forward(const Tensor& x) const;  // [L x C] -> [L_out x filters]
  int64_t output_length(int64_t input_length) const;

  int64_t in_channels() const { return weight_.shape()[1]; }
  int64_t filters() const { return weight_.shape()[0]; }
  int64_t kernel() const { return kernel_; }
  int64_t stride() const { return stride_; }
  Tensor& weight() { return weight_; }
  const Tensor& weight() const { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& bias() const { return bias_; }

  void append_parameters(const std::string& prefix,
                         std::vector<NamedTensor>& out) const;

 private:
  Tensor weight_;  // [filters x in_channels x kernel]
  Tensor bias_;    // [filters]
  int64_t kernel_ = 0;
  int64_t stride_ = 1;
};

// Parameter-free max pooling along the first axis of [L x C]. Stride
// defaults to the kernel size.
class MaxPool1d {
 public:
  explicit MaxPool1d(int64_t kernel = 2, int64_t stride = 0)
      : kernel_(kernel), stride_(stride == 0 ? kernel : stride) {}

  Tensor forward(const Tensor& x) const {
    return maxpool1d(x, kernel_, stride_);
  }
  int64_t output_length(int64_t input_length) const {
    return (input_length - kernel_) / stride_ + 1;
  }
  int64_t kernel() const { return kernel_; }
  int64_t stride() const { return stride_; }

 private:
  int64_t kernel_;
  int64_t stride_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int64_t dim, double epsilon = 1e-5);

  Tensor forward(const Tensor& x) const {
    return layer_norm(x, gain_, shift_, epsilon_);
  }

  Tensor& gain() { return gain_; }
  const Tensor& gain() const { return gain_; }
  Tensor& shift() { return shift_; }
  const Tensor& shift() const { return shift_; }
  double epsilon() const { return epsilon_; }

  void append_parameters(const std::string& prefix,
                         std::vector<NamedTensor>& out) const;

 private:
  Tensor gain_;
  Tensor shift_;
  double epsilon_ = 1e-5;
};

// Multi-head attention with bias-free projections (K = X W_K etc.). The same
// module serves self-attention (query_src == kv_src) and cross-attention
// (distinct sources: queries from one stream, keys and values from the other).
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int64_t model_dim, int num_heads, ScalingVariant scaling,
                     Rng& rng);

  // query_src is [Tq x D], kv_src is [Tk x D]; result is [Tq x D]. When
  // attn_weights is non-null it receives one detached [Tq x Tk] softmax
  // matrix per head.
  Tensor forward(const Tensor& query_src, const Tensor& kv_src,
                 std::vector<Tensor>* attn_weights = nullptr) const;

  int64_t model_dim() const { return wq_.shape()[0]; }
  int num_heads() const { return num_heads_; }
  int64_t head_dim() const { return model_dim() / num_heads_; }
  ScalingVariant scaling() const { return scaling_; }

  Tensor& wq() { return wq_; }
  Tensor& wk() { return wk_; }
  Tensor& wv() { return wv_; }
  Tensor& wo() { return wo_; }
  const Tensor& wq() const { return wq_; }
  const Tensor& wk() const { return wk_; }
  const Tensor& wv() const { return wv_; }
  const Tensor& wo() const { return wo_; }

  void append_parameters(const std::string& prefix,
                         std::vector<NamedTensor>& out) const;

 private:
  Tensor wq_, wk_, wv_, wo_;  // [D x D] each
  int num_heads_ = 1;
  ScalingVariant scaling_ = ScalingVariant::SqrtDk;
};

// Pre-built transformer encoder block:
//   z = LN1(x + dropout(SelfAttn(x)))
//   y = LN2(z + dropout(FFN(z))),  FFN = Linear -> ReLU -> Linear
// Input and output shapes are identical.
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(int64_t model_dim, int num_heads, int64_t ffn_hidden_dim,
               ScalingVariant scaling, double dropout_rate, Rng& rng);

  Tensor forward(const Tensor& x, bool training, Rng& rng,
                 std::vector<Tensor>* attn_weights = nullptr) const;

  const MultiHeadAttention& attention() const { return attn_; }
  MultiHeadAttention& attention() { return attn_; }
  const Linear& ffn1() const { return ffn1_; }
  Linear& ffn1() { return ffn1_; }
  const Linear& ffn2() const { return ffn2_; }
  Linear& ffn2() { return ffn2_; }
  const LayerNorm& ln1() const { return ln1_; }
  const LayerNorm& ln2() const { return ln2_; }
  double dropout_rate() const { return dropout_rate_; }

  void append_parameters(const std::string& prefix,
                         std::vector<NamedTensor>& out) const;

 private:
  MultiHeadAttention attn_;
  Linear ffn1_, ffn2_;
  LayerNorm ln1_, ln2_;
  double dropout_rate_ = 0.0;
};

// Standard sinusoidal position table, [length x dim]. Off by default in all
// models; branch sequences here are short.
Tensor sinusoidal_encoding(int64_t length, int64_t dim);

}  // namespace jmt
