#include "jmt/layers.hpp"

#include <cmath>

namespace jmt {

namespace {

Tensor init_weight(Shape shape, int64_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng, true);
}

}  // namespace

// ---- Linear ----------------------------------------------------------------

Linear::Linear(int64_t in_dim, int64_t out_dim, Rng& rng) {
  if (in_dim <= 0 || out_dim <= 0)
    throw ConfigError("Linear: dimensions must be positive");
  weight_ = init_weight({in_dim, out_dim}, in_dim, rng);
  bias_ = Tensor::zeros({out_dim}, true);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() == 1) {
    Tensor row = reshape(x, {1, x.shape()[0]});
    return reshape(add_bias(matmul(row, weight_), bias_), {out_dim()});
  }
  return add_bias(matmul(x, weight_), bias_);
}

void Linear::append_parameters(const std::string& prefix,
                               std::vector<NamedTensor>& out) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

// ---- Conv1d ----------------------------------------------------------------

Conv1d::Conv1d(int64_t in_channels, int64_t filters, int64_t kernel,
               int64_t stride, Rng& rng)
    : kernel_(kernel), stride_(stride) {
  if (in_channels <= 0 || filters <= 0 || kernel <= 0 || stride <= 0)
    throw ConfigError("Conv1d: channels, filters, kernel, stride must be positive");
  weight_ = init_weight({filters, in_channels, kernel}, in_channels * kernel, rng);
  bias_ = Tensor::zeros({filters}, true);
}

int64_t Conv1d::output_length(int64_t input_length) const {
  return (input_length - kernel_) / stride_ + 1;
}

Tensor Conv1d::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.shape()[1] != in_channels())
    throw ShapeError("Conv1d: expected [L x " + std::to_string(in_channels()) +
                     "], got " + shape_to_string(x.shape()));
  Tensor patches = im2col1d(x, kernel_, stride_);  // [L_out x C*k]
  Tensor w2 = reshape(weight_, {filters(), in_channels() * kernel_});
  return add_bias(matmul(patches, transpose(w2)), bias_);
}

void Conv1d::append_parameters(const std::string& prefix,
                               std::vector<NamedTensor>& out) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

// ---- LayerNorm ---------------------------------------------------------------

LayerNorm::LayerNorm(int64_t dim, double epsilon) : epsilon_(epsilon) {
  if (dim <= 0) throw ConfigError("LayerNorm: dim must be positive");
  gain_ = Tensor::full({dim}, 1.0, true);
  shift_ = Tensor::zeros({dim}, true);
}

void LayerNorm::append_parameters(const std::string& prefix,
                                  std::vector<NamedTensor>& out) const {
  out.emplace_back(prefix + ".gain", gain_);
  out.emplace_back(prefix + ".shift", shift_);
}

// ---- MultiHeadAttention -------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(int64_t model_dim, int num_heads,
                                       ScalingVariant scaling, Rng& rng)
    : num_heads_(num_heads), scaling_(scaling) {
  if (model_dim <= 0 || num_heads <= 0)
    throw ConfigError("MultiHeadAttention: model_dim and num_heads must be positive");
  if (model_dim % num_heads != 0)
    throw ConfigError("MultiHeadAttention: model_dim " +
                      std::to_string(model_dim) + " not divisible by " +
                      std::to_string(num_heads) + " heads");
  wq_ = init_weight({model_dim, model_dim}, model_dim, rng);
  wk_ = init_weight({model_dim, model_dim}, model_dim, rng);
  wv_ = init_weight({model_dim, model_dim}, model_dim, rng);
  wo_ = init_weight({model_dim, model_dim}, model_dim, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& query_src,
                                   const Tensor& kv_src,
                                   std::vector<Tensor>* attn_weights) const {
  int64_t d = model_dim();
  if (query_src.rank() != 2 || query_src.shape()[1] != d)
    throw ShapeError("attention: query source must be [Tq x " +
                     std::to_string(d) + "], got " +
                     shape_to_string(query_src.shape()));
  if (kv_src.rank() != 2 || kv_src.shape()[1] != d)
    throw ShapeError("attention: key/value source must be [Tk x " +
                     std::to_string(d) + "], got " +
                     shape_to_string(kv_src.shape()));

  Tensor q = matmul(query_src, wq_);
  Tensor k = matmul(kv_src, wk_);
  Tensor v = matmul(kv_src, wv_);

  int64_t dk = head_dim();
  double denom = scaling_ == ScalingVariant::SqrtDk
                     ? std::sqrt(static_cast<double>(dk))
                     : static_cast<double>(dk);
  if (attn_weights) attn_weights->clear();

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(num_heads_);
  for (int h = 0; h < num_heads_; ++h) {
    Tensor qh = slice(q, 1, h * dk, (h + 1) * dk);
    Tensor kh = slice(k, 1, h * dk, (h + 1) * dk);
    Tensor vh = slice(v, 1, h * dk, (h + 1) * dk);
    Tensor scores = mul_scalar(matmul(qh, transpose(kh)), 1.0 / denom);
    Tensor weights = softmax(scores, 1);
    if (attn_weights) attn_weights->push_back(weights.detach());
    head_outputs.push_back(matmul(weights, vh));
  }
  Tensor merged =
      num_heads_ == 1 ? head_outputs[0] : concat(head_outputs, 1);
  return matmul(merged, wo_);
}

void MultiHeadAttention::append_parameters(const std::string& prefix,
                                           std::vector<NamedTensor>& out) const {
  out.emplace_back(prefix + ".wq", wq_);
  out.emplace_back(prefix + ".wk", wk_);
  out.emplace_back(prefix + ".wv", wv_);
  out.emplace_back(prefix + ".wo", wo_);
}

// ---- EncoderBlock --------------------------------------------------------------

EncoderBlock::EncoderBlock(int64_t model_dim, int num_heads,
                           int64_t ffn_hidden_dim, ScalingVariant scaling,
                           double dropout_rate, Rng& rng)
    : attn_(model_dim, num_heads, scaling, rng),
      ffn1_(model_dim, ffn_hidden_dim, rng),
      ffn2_(ffn_hidden_dim, model_dim, rng),
      ln1_(model_dim),
      ln2_(model_dim),
      dropout_rate_(dropout_rate) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("EncoderBlock: dropout_rate must be in [0, 1)");
}

Tensor EncoderBlock::forward(const Tensor& x, bool training, Rng& rng,
                             std::vector<Tensor>* attn_weights) const {
  Tensor attended = attn_.forward(x, x, attn_weights);
  attended = dropout(attended, dropout_rate_, training, rng);
  Tensor z = ln1_.forward(add(x, attended));
  Tensor ff = ffn2_.forward(relu(ffn1_.forward(z)));
  ff = dropout(ff, dropout_rate_, training, rng);
  return ln2_.forward(add(z, ff));
}

void EncoderBlock::append_parameters(const std::string& prefix,
                                     std::vector<NamedTensor>& out) const {
  attn_.append_parameters(prefix + ".attn", out);
  ffn1_.append_parameters(prefix + ".ffn1", out);
  ffn2_.append_parameters(prefix + ".ffn2", out);
  ln1_.append_parameters(prefix + ".ln1", out);
  ln2_.append_parameters(prefix + ".ln2", out);
}

// ---- positional encoding ---------------------------------------------------------

Tensor sinusoidal_encoding(int64_t length, int64_t dim) {
  if (length <= 0 || dim <= 0)
    throw ConfigError("sinusoidal_encoding: length and dim must be positive");
  std::vector<double> data(length * dim);
  for (int64_t t = 0; t < length; ++t)
    for (int64_t i = 0; i < dim; ++i) {
      double rate = std::pow(10000.0, -2.0 * static_cast<double>(i / 2) /
                                          static_cast<double>(dim));
      data[t * dim + i] =
          (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
    }
  return Tensor::from_data({length, dim}, std::move(data));
}

}  // namespace jmt
