#include "mmff/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mmff/rng.hpp"

namespace mmff {

namespace fs = std::filesystem;
using nlohmann::json;

SynthMode parse_synth_mode(const std::string& tag) {
  if (tag == "audio-informative") return SynthMode::AudioInformative;
  if (tag == "video-informative") return SynthMode::VideoInformative;
  if (tag == "both-redundant") return SynthMode::BothRedundant;
  if (tag == "xor-crossmodal") return SynthMode::XorCrossmodal;
  throw ArgumentError("unknown synthetic mode '" + tag + "'");
}

std::string synth_mode_tag(SynthMode mode) {
  switch (mode) {
    case SynthMode::AudioInformative: return "audio-informative";
    case SynthMode::VideoInformative: return "video-informative";
    case SynthMode::BothRedundant: return "both-redundant";
    case SynthMode::XorCrossmodal: return "xor-crossmodal";
  }
  throw ArgumentError("invalid synthetic mode");
}

namespace {

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view field, const fs::path& path) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw IngestError("bad numeric field '" + std::string(field) + "' in " +
                      path.string());
  return v;
}

}  // namespace

Tensor load_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open feature file " + path.string());
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t row_cols = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      std::size_t end = (comma == std::string::npos) ? line.size() : comma;
      values.push_back(parse_double({line.data() + pos, end - pos}, path));
      ++row_cols;
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (rows == 0)
      cols = row_cols;
    else if (row_cols != cols)
      throw IngestError("ragged rows in " + path.string());
    ++rows;
  }
  if (rows == 0 || cols == 0) throw IngestError("empty feature file " + path.string());
  for (double v : values)
    if (!std::isfinite(v))
      throw IngestError("non-finite value in " + path.string());
  return Tensor::from_data({rows, cols}, std::move(values));
}

void save_matrix_csv(const fs::path& path, const Tensor& matrix) {
  if (matrix.ndim() != 2) throw ArgumentError("save_matrix_csv: expected 2-d matrix");
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write " + path.string());
  std::size_t m = matrix.rows(), n = matrix.cols();
  const double* p = matrix.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j) out << ',';
      out << format_double(p[i * n + j]);
    }
    out << '\n';
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open manifest " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IngestError("manifest " + path.string() + " does not parse: " + e.what());
  }
  DatasetManifest m;
  try {
    m.name = doc.at("name").get<std::string>();
    m.audio_dim = doc.at("feature_dims").at("audio").get<std::size_t>();
    m.video_dim = doc.at("feature_dims").at("video").get<std::size_t>();
    for (const auto& s : doc.at("samples")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      e.audio_path = s.at("audio").get<std::string>();
      e.video_path = s.at("video").get<std::string>();
      e.label = s.at("label").get<int>();
      m.samples.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw IngestError("manifest " + path.string() + " is malformed: " + e.what());
  }
  return m;
}

std::vector<MultimodalSample> load_dataset(const fs::path& path) {
  DatasetManifest manifest = load_manifest(path);
  fs::path base = path.parent_path();
  std::vector<MultimodalSample> samples;
  samples.reserve(manifest.samples.size());
  for (const ManifestEntry& entry : manifest.samples) {
    if (entry.label != 0 && entry.label != 1)
      throw IngestError("sample " + entry.id + ": label must be 0 or 1");
    MultimodalSample s;
    s.id = entry.id;
    s.label = entry.label;
    try {
      s.audio = load_matrix_csv(base / entry.audio_path);
      s.video = load_matrix_csv(base / entry.video_path);
    } catch (const MmffError& e) {
      throw IngestError("sample " + entry.id + ": " + e.what());
    }
    if (s.audio.rows() != manifest.audio_dim)
      throw IngestError("sample " + entry.id + ": audio has " +
                        std::to_string(s.audio.rows()) + " feature rows, manifest says " +
                        std::to_string(manifest.audio_dim));
    if (s.video.cols() != manifest.video_dim)
      throw IngestError("sample " + entry.id + ": video has " +
                        std::to_string(s.video.cols()) +
                        " feature columns, manifest says " +
                        std::to_string(manifest.video_dim));
    samples.push_back(std::move(s));
  }
  std::sort(samples.begin(), samples.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (samples[i].id == samples[i - 1].id)
      throw IngestError("duplicate sample id " + samples[i].id);
  return samples;
}

namespace {

// Latent carriers: channel 0 holds the mean shift, channel 1 an alternating
// version of it so the latent is visible to token-level attention.
void apply_audio_shift(Tensor& audio, double shift) {
  std::size_t t = audio.cols();
  double* p = audio.data();
  for (std::size_t j = 0; j < t; ++j) {
    p[j] += shift;
    if (audio.rows() > 1) p[t + j] += (j % 2 == 0 ? shift : -shift);
  }
}

void apply_video_shift(Tensor& video, double shift) {
  std::size_t t = video.rows(), c = video.cols();
  double* p = video.data();
  for (std::size_t i = 0; i < t; ++i) {
    p[i * c] += shift;
    if (c > 1) p[i * c + 1] += (i % 2 == 0 ? shift : -shift);
  }
}

Tensor noise_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = Tensor::zeros({rows, cols});
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal();
  return t;
}

}  // namespace

std::vector<MultimodalSample> generate_synthetic(const SynthSpec& spec) {
  if (spec.n_samples == 0) throw ArgumentError("synthetic: n_samples must be >= 1");
  if (spec.audio_dim == 0 || spec.video_dim == 0)
    throw ArgumentError("synthetic: feature dims must be >= 1");
  if (spec.audio_len_min == 0 || spec.audio_len_min > spec.audio_len_max ||
      spec.video_len_min == 0 || spec.video_len_min > spec.video_len_max)
    throw ArgumentError("synthetic: invalid length range");

  Rng rng(mix_seed(spec.seed, 0xDA7A));
  std::vector<MultimodalSample> samples;
  samples.reserve(spec.n_samples);
  int digits = static_cast<int>(std::to_string(spec.n_samples).size());
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    MultimodalSample s;
    // Alternating labels keep every prefix balanced (exactly 50/50, +-1 odd n).
    s.label = static_cast<int>(i % 2);
    std::ostringstream id;
    id << spec.name << "-";
    std::string idx = std::to_string(i);
    id << std::string(digits - static_cast<int>(idx.size()), '0') << idx;
    s.id = id.str();

    std::size_t ta = spec.audio_len_min +
                     (spec.audio_len_max > spec.audio_len_min
                          ? rng.uniform_int(spec.audio_len_max - spec.audio_len_min + 1)
                          : 0);
    std::size_t tv = spec.video_len_min +
                     (spec.video_len_max > spec.video_len_min
                          ? rng.uniform_int(spec.video_len_max - spec.video_len_min + 1)
                          : 0);
    s.audio = noise_matrix(spec.audio_dim, ta, rng);
    s.video = noise_matrix(tv, spec.video_dim, rng);

    switch (spec.mode) {
      case SynthMode::AudioInformative:
        apply_audio_shift(s.audio, s.label * spec.separation);
        break;
      case SynthMode::VideoInformative:
        apply_video_shift(s.video, s.label * spec.separation);
        break;
      case SynthMode::BothRedundant:
        apply_audio_shift(s.audio, s.label * spec.separation);
        apply_video_shift(s.video, s.label * spec.separation);
        break;
      case SynthMode::XorCrossmodal: {
        // Latents are symmetric +-separation/2 shifts, each marginally
        // independent of the label; the label is their XOR.
        int za = static_cast<int>(rng.uniform_int(2));
        int zv = za ^ s.label;
        apply_audio_shift(s.audio, (za ? 0.5 : -0.5) * spec.separation);
        apply_video_shift(s.video, (zv ? 0.5 : -0.5) * spec.separation);
        break;
      }
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

fs::path write_dataset(const fs::path& dir, const std::string& name,
                       const std::vector<MultimodalSample>& samples) {
  fs::create_directories(dir);
  json doc;
  doc["name"] = name;
  std::size_t audio_dim = samples.empty() ? 0 : samples.front().audio.rows();
  std::size_t video_dim = samples.empty() ? 0 : samples.front().video.cols();
  doc["feature_dims"] = {{"audio", audio_dim}, {"video", video_dim}};
  doc["samples"] = json::array();
  for (const MultimodalSample& s : samples) {
    std::string audio_file = s.id + ".audio.csv";
    std::string video_file = s.id + ".video.csv";
    save_matrix_csv(dir / audio_file, s.audio);
    save_matrix_csv(dir / video_file, s.video);
    doc["samples"].push_back(
        {{"id", s.id}, {"audio", audio_file}, {"video", video_file}, {"label", s.label}});
  }
  fs::path manifest_path = dir / (name + ".manifest.json");
  std::ofstream out(manifest_path);
  out << doc.dump(2) << '\n';
  return manifest_path;
}

FoldPlan plan_folds(const std::vector<MultimodalSample>& samples, std::size_t k,
                    std::uint64_t seed) {
  if (k == 0) throw ArgumentError("plan_folds: k must be >= 1");
  if (samples.size() < k)
    throw ArgumentError("plan_folds: " + std::to_string(samples.size()) +
                        " samples < " + std::to_string(k) + " folds");
  std::vector<std::string> positives, negatives;
  for (const auto& s : samples)
    (s.label == 1 ? positives : negatives).push_back(s.id);
  Rng rng(mix_seed(seed, 0xF01D));
  rng.shuffle(positives);
  rng.shuffle(negatives);
  FoldPlan plan;
  plan.k = k;
  // Deal positives round-robin, then continue with negatives from the next
  // fold so total fold sizes also differ by at most one.
  std::size_t fold = 0;
  for (const std::string& id : positives) {
    plan.assignments[id] = fold;
    fold = (fold + 1) % k;
  }
  for (const std::string& id : negatives) {
    plan.assignments[id] = fold;
    fold = (fold + 1) % k;
  }
  return plan;
}

std::vector<std::vector<std::size_t>> FoldPlan::fold_indices(
    const std::vector<MultimodalSample>& samples) const {
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = assignments.find(samples[i].id);
    if (it == assignments.end())
      throw ContractError("fold plan does not cover sample " + samples[i].id);
    folds[it->second].push_back(i);
  }
  return folds;
}

SynthSpec synth_spec_from_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open synth spec " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IngestError("synth spec " + path.string() + " does not parse: " + e.what());
  }
  SynthSpec spec;
  try {
    spec.name = doc.value("name", spec.name);
    spec.n_samples = doc.at("n_samples").get<std::size_t>();
    spec.audio_dim = doc.value("audio_dim", spec.audio_dim);
    spec.video_dim = doc.value("video_dim", spec.video_dim);
    auto read_len = [&doc](const char* key, std::size_t& lo, std::size_t& hi) {
      if (!doc.contains(key)) return;
      const json& v = doc.at(key);
      if (v.is_array()) {
        lo = v.at(0).get<std::size_t>();
        hi = v.at(1).get<std::size_t>();
      } else {
        lo = hi = v.get<std::size_t>();
      }
    };
    read_len("audio_len", spec.audio_len_min, spec.audio_len_max);
    read_len("video_len", spec.video_len_min, spec.video_len_max);
    spec.mode = parse_synth_mode(doc.value("mode", synth_mode_tag(spec.mode)));
    spec.separation = doc.value("separation", spec.separation);
    spec.seed = doc.value("seed", spec.seed);
  } catch (const json::exception& e) {
    throw IngestError("synth spec " + path.string() + " is malformed: " + e.what());
  }
  return spec;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  json doc;
  doc["name"] = spec.name;
  doc["n_samples"] = spec.n_samples;
  doc["audio_dim"] = spec.audio_dim;
  doc["video_dim"] = spec.video_dim;
  doc["audio_len"] = {spec.audio_len_min, spec.audio_len_max};
  doc["video_len"] = {spec.video_len_min, spec.video_len_max};
  doc["mode"] = synth_mode_tag(spec.mode);
  doc["separation"] = spec.separation;
  doc["seed"] = spec.seed;
  return doc.dump(2);
}

}  // namespace mmff
