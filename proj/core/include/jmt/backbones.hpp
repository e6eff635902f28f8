#pragma once

#include "jmt/data.hpp"
#include "jmt/layers.hpp"

namespace jmt {

// Per-clip feature extractor interface consumed by the fusion models.
class ClipBackbone {
 public:
  virtual ~ClipBackbone() = default;
  // [clip_length x channels] -> [feature_dim]
  virtual Tensor clip_features(const Tensor& clip) const = 0;
  virtual int64_t feature_dim() const = 0;
  virtual int64_t clip_length() const = 0;
  virtual void append_parameters(const std::string& prefix,
                                 std::vector<NamedTensor>& out) const = 0;
};

// Physiological 1D-CNN:
//   input 2816x1 -> conv(32,k5,s2) -> relu -> pool(2) -> conv(64,k5,s1)
//   -> relu -> pool(2) -> fc(512) -> relu [-> fc(2)]
// Feature mode stops at the 512-dim fc output; logits mode appends the
// 2-way classifier head.
class Phys1DCNN {
 public:
  static constexpr int64_t kInputLength = 2816;

  enum class Output { Features, Logits };

  explicit Phys1DCNN(Rng& rng);

  // signal is [2816 x 1]. When trace is non-null it receives the shape of
  // every stage output (conv/relu/pool/fc rows in order).
  Tensor forward(const Tensor& signal, Output mode,
                 std::vector<Shape>* trace = nullptr) const;

  const Conv1d& conv1() const { return conv1_; }
  const Conv1d& conv2() const { return conv2_; }
  const MaxPool1d& pool1() const { return pool1_; }
  const MaxPool1d& pool2() const { return pool2_; }
  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

  void append_parameters(const std::string& prefix,
                         std::vector<NamedTensor>& out) const;

 private:
  Conv1d conv1_, conv2_;
  MaxPool1d pool1_, pool2_;
  Linear fc1_, fc2_;
};

// Small conv stack standing in for heavyweight pretrained video/audio
// backbones. Operates on one clip and emits a feature vector of the
// configured width; everything downstream only sees that vector.
struct TemporalConvConfig {
  int64_t in_channels = 3;
  int64_t clip_length = 8;
  int64_t conv1_filters = 16;
  int64_t conv2_filters = 32;
  int64_t kernel = 3;
  int64_t pool = 2;
  int64_t feature_dim = 512;
};

class TemporalConvBackbone : public ClipBackbone {
 public:
  TemporalConvBackbone(const TemporalConvConfig& cfg, Rng& rng);

  Tensor clip_features(const Tensor& clip) const override;
  int64_t feature_dim() const override { return cfg_.feature_dim; }
  int64_t clip_length() const override { return cfg_.clip_length; }
  void append_parameters(const std::string& prefix,
                         std::vector<NamedTensor>& out) const override;

  const TemporalConvConfig& config() const { return cfg_; }

 private:
  TemporalConvConfig cfg_;
  Conv1d conv1_, conv2_;
  MaxPool1d pool_;
  Linear fc_;
};

// Log-power magnitude spectrogram with Hann window and per-spectrogram
// mean/variance normalization. Frames are placed every hop; windows longer
// than the DFT are truncated, shorter ones zero-padded. band_reduce > 0
// averages the one-sided bins down to that many contiguous bands.
struct SpectrogramConfig {
  double sample_rate = 44100.0;
  int64_t dft_length = 1024;
  double hop_seconds = 0.010;
  double window_seconds = 0.020;
  int64_t band_reduce = 0;
  double log_floor = 1e-10;
  void validate() const;

  int64_t window_samples() const;
  int64_t hop_samples() const;
  int64_t num_bins() const {
    return band_reduce > 0 ? band_reduce : dft_length / 2 + 1;
  }
};

// signal is rank-1 [N]; result is [num_bins x frames] with
// frames = floor((N - window_samples) / hop_samples) + 1.
Tensor spectrogram(const Tensor& signal, const SpectrogramConfig& cfg);
int64_t spectrogram_frames(int64_t signal_length, const SpectrogramConfig& cfg);

// Splits the stream into floor(T / clip_length) clips (remainder dropped)
// and runs the frozen backbone on each; rows are time ordered. No gradients
// flow into the backbone here.
Tensor extract_clip_features(const ModalityStream& stream,
                             const ClipBackbone& backbone,
                             int64_t clip_length);

}  // namespace jmt
