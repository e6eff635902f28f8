#include <cstring>

#include "binio.hpp"
#include "jmt/train.hpp"

namespace jmt {

std::vector<TensorBlob> snapshot_parameters(const AffectModel& model) {
  std::vector<TensorBlob> blobs;
  for (const auto& [name, tensor] : model.named_parameters())
    blobs.push_back({name, tensor.shape(), tensor.data()});
  return blobs;
}

void load_parameters(AffectModel& model, const std::vector<TensorBlob>& blobs) {
  auto params = model.named_parameters();
  if (params.size() != blobs.size())
    throw ConfigError("parameter count mismatch: model has " +
                      std::to_string(params.size()) + ", checkpoint has " +
                      std::to_string(blobs.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, tensor] = params[i];
    const auto& blob = blobs[i];
    if (name != blob.name)
      throw ConfigError("parameter name mismatch: '" + name + "' vs '" +
                        blob.name + "'");
    if (tensor.shape() != blob.shape)
      throw ConfigError("parameter shape mismatch for '" + name + "': " +
                        shape_to_string(tensor.shape()) + " vs " +
                        shape_to_string(blob.shape));
    tensor.data() = blob.values;
  }
}

namespace {

constexpr char kMagic[8] = {'J', 'M', 'T', 'C', 'K', 'P', '0', '1'};
constexpr uint32_t kVersion = 1;

using binio::Reader;
using binio::Writer;

void write_blobs(Writer& w, const std::vector<TensorBlob>& blobs) {
  w.u32(static_cast<uint32_t>(blobs.size()));
  for (const auto& blob : blobs) {
    w.str(blob.name);
    w.u32(static_cast<uint32_t>(blob.shape.size()));
    for (int64_t d : blob.shape) w.i64(d);
    w.f64s(blob.values);
  }
}

std::vector<TensorBlob> read_blobs(Reader& r) {
  uint32_t count = r.u32();
  std::vector<TensorBlob> blobs;
  blobs.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    TensorBlob blob;
    blob.name = r.str();
    uint32_t rank = r.u32();
    if (rank == 0 || rank > 8)
      throw IoError("implausible tensor rank " + std::to_string(rank) +
                    " at offset " + std::to_string(r.offset));
    blob.shape.resize(rank);
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      blob.shape[d] = r.i64();
      if (blob.shape[d] <= 0)
        throw IoError("non-positive dimension at offset " +
                      std::to_string(r.offset));
      n *= blob.shape[d];
    }
    blob.values = r.f64s(static_cast<size_t>(n));
    blobs.push_back(std::move(blob));
  }
  return blobs;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  w.str(ckpt.config_hash);
  w.i32(ckpt.epoch);
  w.i32(ckpt.best_epoch);
  w.f64(ckpt.best_metric);
  w.i32(ckpt.epochs_since_improve);
  w.str(ckpt.rng_state);
  w.u8(ckpt.opt_kind == OptimizerKind::Adam ? 1 : 0);
  write_blobs(w, ckpt.params);
  write_blobs(w, ckpt.best_params);
  if (ckpt.opt_kind == OptimizerKind::Adam) {
    w.u64(ckpt.opt_state.t);
    w.u32(static_cast<uint32_t>(ckpt.opt_state.m.size()));
    for (size_t i = 0; i < ckpt.opt_state.m.size(); ++i) {
      w.u64(ckpt.opt_state.m[i].size());
      w.f64s(ckpt.opt_state.m[i]);
      w.f64s(ckpt.opt_state.v[i]);
    }
  }
  if (!w.out) throw IoError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IoError(path + " is not a checkpoint (bad magic)");
  uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " in " + path);
  Checkpoint ckpt;
  ckpt.config_hash = r.str();
  ckpt.epoch = r.i32();
  ckpt.best_epoch = r.i32();
  ckpt.best_metric = r.f64();
  ckpt.epochs_since_improve = r.i32();
  ckpt.rng_state = r.str();
  ckpt.opt_kind = r.u8() == 1 ? OptimizerKind::Adam : OptimizerKind::Sgd;
  ckpt.params = read_blobs(r);
  ckpt.best_params = read_blobs(r);
  if (ckpt.opt_kind == OptimizerKind::Adam) {
    ckpt.opt_state.t = r.u64();
    uint32_t count = r.u32();
    ckpt.opt_state.m.resize(count);
    ckpt.opt_state.v.resize(count);
    for (uint32_t i = 0; i < count; ++i) {
      uint64_t n = r.u64();
      ckpt.opt_state.m[i] = r.f64s(static_cast<size_t>(n));
      ckpt.opt_state.v[i] = r.f64s(static_cast<size_t>(n));
    }
  }
  return ckpt;
}

}  // namespace jmt
