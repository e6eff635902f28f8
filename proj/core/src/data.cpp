#include "jmt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "binio.hpp"

namespace jmt {

void NoiseSpec::validate() const {
  for (double p : {blackout_prob_a, blackout_prob_b, correlated_blackout_prob})
    if (p < 0.0 || p > 1.0)
      throw ConfigError("blackout probabilities must be in [0, 1]");
  if (gaussian_sigma_a < 0.0 || gaussian_sigma_b < 0.0)
    throw ConfigError("gaussian noise sigma must be >= 0");
}

void DatasetConfig::validate() const {
  if (num_subjects < 1 || sequences_per_subject < 1)
    throw ConfigError("dataset needs at least one subject and sequence");
  if (frames < 1) throw ConfigError("frames must be >= 1");
  if (clip_length < 1 || clip_length > frames)
    throw ConfigError("clip_length must be in [1, frames]");
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (num_targets != 1 && num_targets != 2)
    throw ConfigError("num_targets must be 1 or 2");
  if (smoothness <= 0.0 || smoothness >= 1.0)
    throw ConfigError("smoothness must be in (0, 1)");
  noise.validate();
}

Tensor generate_sequence(const LatentEmotionProcess& proc) {
  if (proc.length < 1) throw ConfigError("sequence length must be >= 1");
  if (proc.smoothness <= 0.0 || proc.smoothness >= 1.0)
    throw ConfigError("smoothness must be in (0, 1)");
  if (proc.num_targets < 1) throw ConfigError("num_targets must be >= 1");
  Rng rng(proc.seed);
  std::normal_distribution<double> noise(0.0, 0.5);
  double alpha = proc.smoothness;
  double innovation_scale = std::sqrt(1.0 - alpha * alpha);
  std::vector<double> data(proc.length * proc.num_targets);
  for (int k = 0; k < proc.num_targets; ++k) {
    double z = noise(rng);
    for (int64_t t = 0; t < proc.length; ++t) {
      if (t > 0) z = alpha * z + innovation_scale * noise(rng);
      data[t * proc.num_targets + k] = std::clamp(z, -1.0, 1.0);
    }
  }
  return Tensor::from_data({proc.length, proc.num_targets}, std::move(data));
}

BlackoutMask draw_blackouts(int64_t frames, const NoiseSpec& noise,
                            uint64_t seed) {
  noise.validate();
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BlackoutMask mask;
  mask.a.assign(frames, 0);
  mask.b.assign(frames, 0);
  for (int64_t t = 0; t < frames; ++t) {
    if (u(rng) < noise.correlated_blackout_prob) {
      mask.a[t] = mask.b[t] = 1;
      continue;
    }
    if (u(rng) < noise.blackout_prob_a) mask.a[t] = 1;
    if (u(rng) < noise.blackout_prob_b) mask.b[t] = 1;
  }
  return mask;
}

namespace {

double latent_view(const double* target_row, int num_targets, char modality) {
  if (num_targets == 1) return target_row[0];
  return modality == 'A' ? 0.5 * (target_row[0] + target_row[1])
                         : 0.5 * (target_row[0] - target_row[1]);
}

double channel_feature(double u, int channel) {
  switch (channel % 3) {
    case 0:
      return u;
    case 1:
      return std::tanh(1.5 * u);
    default:
      return u * u;
  }
}

}  // namespace

ModalityStream render_modality(const Tensor& targets, char modality_id,
                               int channels, double gaussian_sigma,
                               const std::vector<uint8_t>& blackout,
                               uint64_t seed) {
  if (modality_id != 'A' && modality_id != 'B')
    throw ConfigError("modality_id must be 'A' or 'B'");
  if (targets.rank() != 2)
    throw ShapeError("targets must be [T x K], got " +
                     shape_to_string(targets.shape()));
  int64_t frames = targets.shape()[0];
  int num_targets = static_cast<int>(targets.shape()[1]);
  if (static_cast<int64_t>(blackout.size()) != frames)
    throw ShapeError("blackout mask length does not match frame count");
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> data(frames * channels);
  for (int64_t t = 0; t < frames; ++t) {
    double u = latent_view(targets.data().data() + t * num_targets,
                           num_targets, modality_id);
    for (int c = 0; c < channels; ++c) {
      double v = channel_feature(u, c);
      if (gaussian_sigma > 0.0) v += gaussian_sigma * noise(rng);
      data[t * channels + c] = blackout[t] ? 0.0 : v;
    }
  }
  ModalityStream stream;
  stream.modality_id = modality_id;
  stream.frames = Tensor::from_data({frames, channels}, std::move(data));
  return stream;
}

SyntheticDataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  SyntheticDataset ds;
  ds.config = cfg;
  ds.config_hash = hash_to_hex(config_hash64(cfg));
  int sequence_id = 0;
  for (int s = 0; s < cfg.num_subjects; ++s) {
    for (int q = 0; q < cfg.sequences_per_subject; ++q, ++sequence_id) {
      uint64_t sample_seed = derive_seed(
          cfg.seed, "sample:" + std::to_string(s) + ":" + std::to_string(q));
      LatentEmotionProcess proc{cfg.frames, cfg.smoothness, cfg.num_targets,
                                derive_seed(sample_seed, "targets")};
      SyntheticSample sample;
      sample.targets = generate_sequence(proc);
      BlackoutMask mask = draw_blackouts(cfg.frames, cfg.noise,
                                         derive_seed(sample_seed, "blackout"));
      sample.a = render_modality(sample.targets, 'A', cfg.channels,
                                 cfg.noise.gaussian_sigma_a, mask.a,
                                 derive_seed(sample_seed, "noise_a"));
      sample.b = render_modality(sample.targets, 'B', cfg.channels,
                                 cfg.noise.gaussian_sigma_b, mask.b,
                                 derive_seed(sample_seed, "noise_b"));
      sample.subject_id = s;
      sample.sequence_id = sequence_id;
      sample.a.subject_id = sample.b.subject_id = s;
      sample.a.sequence_id = sample.b.sequence_id = sequence_id;
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

void make_folds(SyntheticDataset& dataset, int k, uint64_t seed) {
  int subjects = dataset.config.num_subjects;
  if (k < 2 || k > subjects)
    throw ConfigError("fold count " + std::to_string(k) +
                      " invalid for " + std::to_string(subjects) + " subjects");
  std::vector<int> order(subjects);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold_of_subject(subjects);
  for (int i = 0; i < subjects; ++i) fold_of_subject[order[i]] = i % k;
  for (auto& sample : dataset.samples)
    sample.fold = fold_of_subject[sample.subject_id];
  dataset.num_folds = k;
}

// ---- config (de)serialization ------------------------------------------------

std::string to_json(const DatasetConfig& cfg) {
  nlohmann::json j;
  j["num_subjects"] = cfg.num_subjects;
  j["sequences_per_subject"] = cfg.sequences_per_subject;
  j["frames"] = cfg.frames;
  j["clip_length"] = cfg.clip_length;
  j["channels"] = cfg.channels;
  j["num_targets"] = cfg.num_targets;
  j["smoothness"] = cfg.smoothness;
  j["seed"] = cfg.seed;
  j["noise"] = {{"gaussian_sigma_a", cfg.noise.gaussian_sigma_a},
                {"gaussian_sigma_b", cfg.noise.gaussian_sigma_b},
                {"blackout_prob_a", cfg.noise.blackout_prob_a},
                {"blackout_prob_b", cfg.noise.blackout_prob_b},
                {"correlated_blackout_prob", cfg.noise.correlated_blackout_prob}};
  return j.dump();
}

DatasetConfig dataset_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed dataset config JSON");
  DatasetConfig cfg;
  cfg.num_subjects = j.value("num_subjects", cfg.num_subjects);
  cfg.sequences_per_subject =
      j.value("sequences_per_subject", cfg.sequences_per_subject);
  cfg.frames = j.value("frames", cfg.frames);
  cfg.clip_length = j.value("clip_length", cfg.clip_length);
  cfg.channels = j.value("channels", cfg.channels);
  cfg.num_targets = j.value("num_targets", cfg.num_targets);
  cfg.smoothness = j.value("smoothness", cfg.smoothness);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    cfg.noise.gaussian_sigma_a =
        n.value("gaussian_sigma_a", cfg.noise.gaussian_sigma_a);
    cfg.noise.gaussian_sigma_b =
        n.value("gaussian_sigma_b", cfg.noise.gaussian_sigma_b);
    cfg.noise.blackout_prob_a =
        n.value("blackout_prob_a", cfg.noise.blackout_prob_a);
    cfg.noise.blackout_prob_b =
        n.value("blackout_prob_b", cfg.noise.blackout_prob_b);
    cfg.noise.correlated_blackout_prob =
        n.value("correlated_blackout_prob", cfg.noise.correlated_blackout_prob);
  }
  cfg.validate();
  return cfg;
}

uint64_t config_hash64(const DatasetConfig& cfg) { return fnv1a(to_json(cfg)); }

// ---- binary container ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'J', 'M', 'T', 'D', 'A', 'T', '0', '1'};
constexpr uint32_t kVersion = 1;

using binio::Reader;
using binio::Writer;

void write_matrix(Writer& w, const Tensor& t) {
  w.u32(static_cast<uint32_t>(t.shape()[0]));
  w.u32(static_cast<uint32_t>(t.shape()[1]));
  w.f64s(t.data());
}

Tensor read_matrix(Reader& r) {
  int64_t rows = r.u32();
  int64_t cols = r.u32();
  return Tensor::from_data({rows, cols}, r.f64s(rows * cols));
}

}  // namespace

void save_dataset(const SyntheticDataset& dataset, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  w.str(to_json(dataset.config));
  w.u64(config_hash64(dataset.config));
  w.u32(static_cast<uint32_t>(dataset.num_folds));
  w.u32(static_cast<uint32_t>(dataset.samples.size()));
  for (const auto& s : dataset.samples) {
    w.u32(static_cast<uint32_t>(s.subject_id));
    w.u32(static_cast<uint32_t>(s.sequence_id));
    w.i32(s.fold);
    write_matrix(w, s.targets);
    write_matrix(w, s.a.frames);
    write_matrix(w, s.b.frames);
  }
  if (!w.out) throw IoError("write failed for " + path);
}

SyntheticDataset load_dataset(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IoError(path + " is not a dataset container (bad magic)");
  uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError("unsupported dataset container version " +
                  std::to_string(version));
  SyntheticDataset ds;
  ds.config = dataset_config_from_json(r.str());
  uint64_t stored_hash = r.u64();
  if (stored_hash != config_hash64(ds.config))
    throw IoError("dataset config hash mismatch in " + path);
  ds.config_hash = hash_to_hex(stored_hash);
  ds.num_folds = static_cast<int>(r.u32());
  uint32_t count = r.u32();
  ds.samples.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    SyntheticSample s;
    s.subject_id = static_cast<int>(r.u32());
    s.sequence_id = static_cast<int>(r.u32());
    s.fold = r.i32();
    s.targets = read_matrix(r);
    s.a.frames = read_matrix(r);
    s.b.frames = read_matrix(r);
    s.a.modality_id = 'A';
    s.b.modality_id = 'B';
    s.a.subject_id = s.b.subject_id = s.subject_id;
    s.a.sequence_id = s.b.sequence_id = s.sequence_id;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace jmt
