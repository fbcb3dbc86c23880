#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seqvae/io_util.hpp"
#include "seqvae/tensor.hpp"

namespace seqvae {

// One trial: a T x N grid of spike counts, with an optional class label and
// optional per-time-step ground-truth latents (T x latent_dim, row-major).
struct SpikeSequence {
  size_t T = 0;
  size_t N = 0;
  std::vector<uint32_t> counts;
  int32_t label = -1;
  size_t latent_dim = 0;
  std::vector<double> latents;

  uint32_t count_at(size_t t, size_t n) const { return counts[t * N + n]; }
  const double* latent_row(size_t t) const { return latents.data() + t * latent_dim; }

  void validate() const {
    if (counts.size() != T * N) throw DataError("spike sequence: count grid size mismatch");
    if (latents.size() != T * latent_dim) throw DataError("spike sequence: latent grid size mismatch");
  }
};

struct DatasetBundle {
  std::vector<SpikeSequence> train;
  std::vector<SpikeSequence> validation;
  std::vector<SpikeSequence> test;
  std::string manifest;  // JSON text describing how the data was generated

  const std::vector<SpikeSequence>& partition(const std::string& name) const {
    if (name == "train") return train;
    if (name == "validation") return validation;
    if (name == "test") return test;
    throw ConfigError("unknown partition: " + name);
  }
};

// ---- spike data file ----
// "NSPK" | version | flags | trials | T | N | latent_dim | manifest |
// counts u32[trials*T*N] | labels i32[trials] | latents f64[trials*T*latent_dim]
// All trials in one file share T and N; flag bits 0/1 mark the presence of the
// label and latent blocks.

namespace spikefile {

constexpr uint32_t kVersion = 1;
constexpr uint32_t kFlagLabels = 1u << 0;
constexpr uint32_t kFlagLatents = 1u << 1;

inline void save(const std::string& path, const std::vector<SpikeSequence>& trials,
                 const std::string& manifest) {
  size_t T = trials.empty() ? 0 : trials[0].T;
  size_t N = trials.empty() ? 0 : trials[0].N;
  size_t D = trials.empty() ? 0 : trials[0].latent_dim;
  bool labels = false;
  for (const auto& tr : trials) {
    tr.validate();
    if (tr.T != T || tr.N != N || tr.latent_dim != D) {
      throw DataError(path + ": trials must share T, N and latent_dim within one file");
    }
    if (tr.label >= 0) labels = true;
  }
  uint32_t flags = (labels ? kFlagLabels : 0) | (D > 0 ? kFlagLatents : 0);

  io::ByteWriter w;
  w.raw("NSPK", 4);
  w.u32(kVersion);
  w.u32(flags);
  w.u32(static_cast<uint32_t>(trials.size()));
  w.u32(static_cast<uint32_t>(T));
  w.u32(static_cast<uint32_t>(N));
  w.u32(static_cast<uint32_t>(D));
  w.str(manifest);
  for (const auto& tr : trials) {
    for (uint32_t c : tr.counts) w.u32(c);
  }
  if (flags & kFlagLabels) {
    for (const auto& tr : trials) w.i32(tr.label);
  }
  if (flags & kFlagLatents) {
    for (const auto& tr : trials) {
      for (double v : tr.latents) w.f64(v);
    }
  }
  w.save(path);
}

struct LoadResult {
  std::vector<SpikeSequence> trials;
  std::string manifest;
};

inline LoadResult load(const std::string& path) {
  io::ByteReader r = io::ByteReader::from_file(path);
  r.expect_magic("NSPK");
  uint32_t version = r.u32();
  if (version != kVersion) {
    throw DataError(path + ": unsupported format version " + std::to_string(version) +
                    " at offset 4");
  }
  uint32_t flags = r.u32();
  uint32_t n_trials = r.u32();
  uint32_t T = r.u32();
  uint32_t N = r.u32();
  uint32_t D = r.u32();
  if ((flags & kFlagLatents) && D == 0) {
    throw DataError(path + ": latent flag set but latent_dim is 0");
  }
  if (!(flags & kFlagLatents) && D != 0) {
    throw DataError(path + ": latent_dim set but latent flag clear");
  }
  LoadResult out;
  out.manifest = r.str();
  out.trials.resize(n_trials);
  for (auto& tr : out.trials) {
    tr.T = T;
    tr.N = N;
    tr.counts.resize(static_cast<size_t>(T) * N);
    for (auto& c : tr.counts) c = r.u32();
  }
  if (flags & kFlagLabels) {
    for (auto& tr : out.trials) tr.label = r.i32();
  }
  if (flags & kFlagLatents) {
    for (auto& tr : out.trials) {
      tr.latent_dim = D;
      tr.latents.resize(static_cast<size_t>(T) * D);
      for (auto& v : tr.latents) v = r.f64();
    }
  }
  r.expect_end();
  return out;
}

}  // namespace spikefile

// A bundle on disk is a directory of three spike files plus the manifest.
inline void save_bundle(const std::string& dir, const DatasetBundle& bundle) {
  std::filesystem::create_directories(dir);
  spikefile::save(dir + "/train.nspk", bundle.train, bundle.manifest);
  spikefile::save(dir + "/val.nspk", bundle.validation, bundle.manifest);
  spikefile::save(dir + "/test.nspk", bundle.test, bundle.manifest);
  io::write_text_file(dir + "/manifest.json", bundle.manifest + "\n");
}

inline DatasetBundle load_bundle(const std::string& dir) {
  DatasetBundle b;
  auto tr = spikefile::load(dir + "/train.nspk");
  auto va = spikefile::load(dir + "/val.nspk");
  auto te = spikefile::load(dir + "/test.nspk");
  if (tr.manifest != va.manifest || tr.manifest != te.manifest) {
    throw DataError(dir + ": partition files carry different manifests");
  }
  b.train = std::move(tr.trials);
  b.validation = std::move(va.trials);
  b.test = std::move(te.trials);
  b.manifest = std::move(tr.manifest);
  return b;
}

}  // namespace seqvae
