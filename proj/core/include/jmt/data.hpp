#pragma once

#include <string>
#include <vector>

#include "jmt/tensor.hpp"

namespace jmt {

// Smooth latent affect trajectory: per-channel AR(1) noise with unit-stable
// variance, clamped to [-1, 1]. Higher smoothness means higher lag-1
// autocorrelation.
struct LatentEmotionProcess {
  int64_t length = 64;
  double smoothness = 0.9;  // in (0, 1)
  int num_targets = 2;
  uint64_t seed = 0;
};

// [length x num_targets] target series.
Tensor generate_sequence(const LatentEmotionProcess& proc);

// Per-frame corruption. Blackout zeroes whole frames (missing-data regime);
// the correlated term zeroes the frame in both modalities at once. The
// correlated draw happens first; per-modality draws apply to the remaining
// frames, so with correlated_blackout_prob = 0 the measured per-modality
// rate equals blackout_prob.
struct NoiseSpec {
  double gaussian_sigma_a = 0.0;
  double gaussian_sigma_b = 0.0;
  double blackout_prob_a = 0.0;
  double blackout_prob_b = 0.0;
  double correlated_blackout_prob = 0.0;
  void validate() const;
};

struct ModalityStream {
  char modality_id = 'A';
  Tensor frames;  // [T x channels]
  int subject_id = 0;
  int sequence_id = 0;
};

struct BlackoutMask {
  std::vector<uint8_t> a, b;  // 1 = frame zeroed
};

BlackoutMask draw_blackouts(int64_t frames, const NoiseSpec& noise,
                            uint64_t seed);

// Renders one modality from the target series. Modality A observes
// u = (t0 + t1)/2 and modality B observes u = (t0 - t1)/2 (for two targets),
// so neither stream alone determines the targets but the pair does. Channels
// cycle through [u, tanh(1.5 u), u^2] before Gaussian noise and blackout.
ModalityStream render_modality(const Tensor& targets, char modality_id,
                               int channels, double gaussian_sigma,
                               const std::vector<uint8_t>& blackout,
                               uint64_t seed);

struct DatasetConfig {
  int num_subjects = 20;
  int sequences_per_subject = 4;
  int64_t frames = 64;
  int64_t clip_length = 8;
  int channels = 3;  // per modality
  int num_targets = 2;
  double smoothness = 0.9;
  NoiseSpec noise;
  uint64_t seed = 1234;
  void validate() const;
};

std::string to_json(const DatasetConfig& cfg);
DatasetConfig dataset_config_from_json(const std::string& text);
uint64_t config_hash64(const DatasetConfig& cfg);

struct SyntheticSample {
  ModalityStream a, b;
  Tensor targets;  // [T x num_targets]
  int subject_id = 0;
  int sequence_id = 0;
  int fold = -1;
};

struct SyntheticDataset {
  DatasetConfig config;
  std::vector<SyntheticSample> samples;
  int num_folds = 0;
  std::string config_hash;
};

// Fully seeded generation; identical (config, seed) gives a bitwise
// identical corpus.
SyntheticDataset generate_dataset(const DatasetConfig& cfg);

// Subject-disjoint k-fold assignment, fold sizes differing by at most one
// subject. Throws ConfigError when k < 2 or k exceeds the subject count.
void make_folds(SyntheticDataset& dataset, int k, uint64_t seed);

// Flat little-endian binary container (header with magic, version and config
// hash, then per-sample shape + float64 payloads).
void save_dataset(const SyntheticDataset& dataset, const std::string& path);
SyntheticDataset load_dataset(const std::string& path);

}  // namespace jmt
