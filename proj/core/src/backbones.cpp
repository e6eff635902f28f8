#include "jmt/backbones.hpp"

#include <cmath>
#include <complex>

namespace jmt {

// ---- Phys1DCNN ---------------------------------------------------------------

Phys1DCNN::Phys1DCNN(Rng& rng)
    : conv1_(1, 32, 5, 2, rng),
      conv2_(32, 64, 5, 1, rng),
      pool1_(2),
      pool2_(2),
      fc1_(349 * 64, 512, rng),
      fc2_(512, 2, rng) {}

Tensor Phys1DCNN::forward(const Tensor& signal, Output mode,
                          std::vector<Shape>* trace) const {
  if (signal.rank() != 2 || signal.shape()[0] != kInputLength ||
      signal.shape()[1] != 1)
    throw ShapeError("Phys1DCNN expects [2816 x 1], got " +
                     shape_to_string(signal.shape()));
  auto record = [&](const Tensor& t) {
    if (trace) trace->push_back(t.shape());
  };
  record(signal);
  Tensor x = conv1_.forward(signal);
  record(x);
  x = relu(x);
  record(x);
  x = pool1_.forward(x);
  record(x);
  x = conv2_.forward(x);
  record(x);
  x = relu(x);
  record(x);
  x = pool2_.forward(x);
  record(x);
  x = reshape(x, {1, x.shape()[0] * x.shape()[1]});
  x = fc1_.forward(x);
  x = relu(x);
  Tensor features = reshape(x, {512});
  record(features);
  if (mode == Output::Features) return features;
  Tensor logits = reshape(fc2_.forward(x), {2});
  record(logits);
  return logits;
}

void Phys1DCNN::append_parameters(const std::string& prefix,
                                  std::vector<NamedTensor>& out) const {
  conv1_.append_parameters(prefix + ".conv1", out);
  conv2_.append_parameters(prefix + ".conv2", out);
  fc1_.append_parameters(prefix + ".fc1", out);
  fc2_.append_parameters(prefix + ".fc2", out);
}

// ---- TemporalConvBackbone ------------------------------------------------------

TemporalConvBackbone::TemporalConvBackbone(const TemporalConvConfig& cfg,
                                           Rng& rng)
    : cfg_(cfg),
      conv1_(cfg.in_channels, cfg.conv1_filters, cfg.kernel, 1, rng),
      conv2_(cfg.conv1_filters, cfg.conv2_filters, cfg.kernel, 1, rng),
      pool_(cfg.pool) {
  int64_t l1 = cfg.clip_length - cfg.kernel + 1;
  if (l1 < cfg.pool)
    throw ConfigError("clip_length " + std::to_string(cfg.clip_length) +
                      " too short for kernel " + std::to_string(cfg.kernel) +
                      " and pool " + std::to_string(cfg.pool));
  int64_t l2 = (l1 - cfg.pool) / cfg.pool + 1;
  int64_t l3 = l2 - cfg.kernel + 1;
  if (l3 < 1)
    throw ConfigError("clip_length " + std::to_string(cfg.clip_length) +
                      " too short for two conv layers");
  fc_ = Linear(l3 * cfg.conv2_filters, cfg.feature_dim, rng);
}

Tensor TemporalConvBackbone::clip_features(const Tensor& clip) const {
  if (clip.rank() != 2 || clip.shape()[0] != cfg_.clip_length ||
      clip.shape()[1] != cfg_.in_channels)
    throw ShapeError("backbone expects [" + std::to_string(cfg_.clip_length) +
                     " x " + std::to_string(cfg_.in_channels) + "], got " +
                     shape_to_string(clip.shape()));
  Tensor x = relu(conv1_.forward(clip));
  x = pool_.forward(x);
  x = relu(conv2_.forward(x));
  x = reshape(x, {1, x.shape()[0] * x.shape()[1]});
  x = relu(fc_.forward(x));
  return reshape(x, {cfg_.feature_dim});
}

void TemporalConvBackbone::append_parameters(const std::string& prefix,
                                             std::vector<NamedTensor>& out) const {
  conv1_.append_parameters(prefix + ".conv1", out);
  conv2_.append_parameters(prefix + ".conv2", out);
  fc_.append_parameters(prefix + ".fc", out);
}

// ---- spectrogram ---------------------------------------------------------------

void SpectrogramConfig::validate() const {
  if (sample_rate <= 0.0) throw ConfigError("sample_rate must be positive");
  if (dft_length < 2) throw ConfigError("dft_length must be >= 2");
  if (hop_seconds <= 0.0 || window_seconds <= 0.0)
    throw ConfigError("hop and window must be positive");
  if (window_seconds < hop_seconds)
    throw ConfigError("window must be >= hop");
  if (band_reduce < 0 || band_reduce > dft_length / 2 + 1)
    throw ConfigError("band_reduce out of range");
  if (log_floor <= 0.0) throw ConfigError("log_floor must be positive");
}

int64_t SpectrogramConfig::window_samples() const {
  return std::llround(window_seconds * sample_rate);
}

int64_t SpectrogramConfig::hop_samples() const {
  return std::llround(hop_seconds * sample_rate);
}

int64_t spectrogram_frames(int64_t signal_length, const SpectrogramConfig& cfg) {
  cfg.validate();
  int64_t win = cfg.window_samples();
  int64_t hop = cfg.hop_samples();
  if (hop < 1) throw ConfigError("hop shorter than one sample");
  if (signal_length < win)
    throw DataError("signal of " + std::to_string(signal_length) +
                    " samples is shorter than one window (" +
                    std::to_string(win) + ")");
  return (signal_length - win) / hop + 1;
}

namespace {

// Iterative radix-2 FFT; sizes that are not a power of two fall back to the
// direct DFT.
bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

void dft_direct(const std::vector<double>& in,
                std::vector<std::complex<double>>& out) {
  const size_t n = in.size();
  for (size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc(0.0);
    for (size_t t = 0; t < n; ++t) {
      double ang = -2.0 * M_PI * static_cast<double>(k) *
                   static_cast<double>(t) / static_cast<double>(n);
      acc += in[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
}

}  // namespace

Tensor spectrogram(const Tensor& signal, const SpectrogramConfig& cfg) {
  cfg.validate();
  if (signal.rank() != 1)
    throw ShapeError("spectrogram expects a rank-1 signal, got " +
                     shape_to_string(signal.shape()));
  int64_t n = signal.numel();
  int64_t frames = spectrogram_frames(n, cfg);
  int64_t win = cfg.window_samples();
  int64_t hop = cfg.hop_samples();
  int64_t dft = cfg.dft_length;
  int64_t raw_bins = dft / 2 + 1;
  int64_t used = std::min(win, dft);  // truncate windows longer than the DFT

  std::vector<double> hann(used);
  for (int64_t j = 0; j < used; ++j)
    hann[j] = win > 1 ? 0.5 * (1.0 - std::cos(2.0 * M_PI * j / (win - 1)))
                      : 1.0;

  std::vector<double> power(raw_bins * frames);
  std::vector<double> frame(dft);
  std::vector<std::complex<double>> spectrum(dft);
  const auto& x = signal.data();
  for (int64_t f = 0; f < frames; ++f) {
    std::fill(frame.begin(), frame.end(), 0.0);
    for (int64_t j = 0; j < used; ++j) frame[j] = x[f * hop + j] * hann[j];
    if (is_pow2(dft)) {
      for (int64_t j = 0; j < dft; ++j) spectrum[j] = frame[j];
      fft_radix2(spectrum);
    } else {
      dft_direct(frame, spectrum);
    }
    for (int64_t k = 0; k < raw_bins; ++k)
      power[k * frames + f] = std::norm(spectrum[k]);
  }

  int64_t bins = cfg.num_bins();
  std::vector<double> out(bins * frames);
  if (cfg.band_reduce > 0) {
    // Contiguous partition of raw bins into band_reduce groups whose sizes
    // differ by at most one.
    for (int64_t band = 0; band < bins; ++band) {
      int64_t lo = band * raw_bins / bins;
      int64_t hi = (band + 1) * raw_bins / bins;
      for (int64_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (int64_t k = lo; k < hi; ++k) acc += power[k * frames + f];
        out[band * frames + f] = acc / static_cast<double>(hi - lo);
      }
    }
  } else {
    out = std::move(power);
  }

  for (auto& v : out) v = std::log(std::max(v, cfg.log_floor));

  double mean = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(out.size());
  double var = 0.0;
  for (double v : out) var += (v - mean) * (v - mean);
  var /= static_cast<double>(out.size());
  double inv_std = 1.0 / std::max(std::sqrt(var), 1e-12);
  for (auto& v : out) v = (v - mean) * inv_std;

  return Tensor::from_data({bins, frames}, std::move(out));
}

// ---- clip features --------------------------------------------------------------

Tensor extract_clip_features(const ModalityStream& stream,
                             const ClipBackbone& backbone,
                             int64_t clip_length) {
  if (!stream.frames.defined())
    throw DataError("extract_clip_features: empty stream");
  if (clip_length != backbone.clip_length())
    throw ConfigError("clip_length " + std::to_string(clip_length) +
                      " does not match backbone clip length " +
                      std::to_string(backbone.clip_length()));
  int64_t frames = stream.frames.shape()[0];
  int64_t num_clips = frames / clip_length;
  if (num_clips < 1)
    throw DataError("stream of " + std::to_string(frames) +
                    " frames yields no clip of length " +
                    std::to_string(clip_length));
  NoGradGuard freeze;
  int64_t d = backbone.feature_dim();
  std::vector<double> out(num_clips * d);
  for (int64_t c = 0; c < num_clips; ++c) {
    Tensor clip = slice(stream.frames, 0, c * clip_length,
                        (c + 1) * clip_length);
    Tensor feat = backbone.clip_features(clip);
    std::copy(feat.data().begin(), feat.data().end(), out.begin() + c * d);
  }
  return Tensor::from_data({num_clips, d}, std::move(out));
}

}  // namespace jmt
