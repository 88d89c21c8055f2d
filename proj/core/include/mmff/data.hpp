#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmff/tensor.hpp"

namespace mmff {

// One subject: audio features (feature-dim x time), video features
// (time x feature-dim), binary label.
struct MultimodalSample {
  std::string id;
  Tensor audio;  // F x T_a
  Tensor video;  // T_v x C
  int label = 0;
};

struct ManifestEntry {
  std::string id;
  std::string audio_path;
  std::string video_path;
  int label = 0;
};

struct DatasetManifest {
  std::string name;
  std::size_t audio_dim = 0;  // F
  std::size_t video_dim = 0;  // C
  std::vector<ManifestEntry> samples;
};

// Stratified k-fold partition of sample ids.
struct FoldPlan {
  std::size_t k = 10;
  std::map<std::string, std::size_t> assignments;  // id -> fold

  std::vector<std::vector<std::size_t>> fold_indices(
      const std::vector<MultimodalSample>& samples) const;
};

enum class SynthMode {
  AudioInformative,
  VideoInformative,
  BothRedundant,
  XorCrossmodal,
};

SynthMode parse_synth_mode(const std::string& tag);
std::string synth_mode_tag(SynthMode mode);

struct SynthSpec {
  std::string name = "synth";
  std::size_t n_samples = 100;
  std::size_t audio_dim = 8;   // F
  std::size_t video_dim = 8;   // C
  std::size_t audio_len_min = 24, audio_len_max = 24;
  std::size_t video_len_min = 24, video_len_max = 24;
  SynthMode mode = SynthMode::BothRedundant;
  double separation = 2.0;
  std::uint64_t seed = 0;
};

// Headerless CSV of decimal doubles; values round-trip exactly.
Tensor load_matrix_csv(const std::filesystem::path& path);
void save_matrix_csv(const std::filesystem::path& path, const Tensor& matrix);

DatasetManifest load_manifest(const std::filesystem::path& path);

// Loads every sample listed in the manifest at `path`, validating dims,
// finiteness and labels; result is ordered by id.
std::vector<MultimodalSample> load_dataset(const std::filesystem::path& path);

// Class-conditional Gaussian sequences per SynthSpec. Deterministic in seed.
std::vector<MultimodalSample> generate_synthetic(const SynthSpec& spec);

// Writes manifest + per-sample CSVs into dir; returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                    const std::string& name,
                                    const std::vector<MultimodalSample>& samples);

// Stratified fold assignment: per-fold positive counts differ by at most 1,
// folds partition the id set. Deterministic in seed.
FoldPlan plan_folds(const std::vector<MultimodalSample>& samples, std::size_t k,
                    std::uint64_t seed);

SynthSpec synth_spec_from_json_file(const std::filesystem::path& path);
std::string synth_spec_to_json(const SynthSpec& spec);

}  // namespace mmff
