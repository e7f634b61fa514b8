#include "damnet/data.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "damnet/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace damnet {

static const unsigned char kRvolMagic[5] = {0x52, 0x56, 0x4F, 0x4C, 0x01};

void validate(const SynthConfig& c) {
  if (c.n_per_class < 1) throw std::invalid_argument("synth: n_per_class must be >= 1");
  if (c.size < 1) throw std::invalid_argument("synth: size must be >= 1");
  if (c.noise_sigma < 0) throw std::invalid_argument("synth: noise_sigma must be >= 0");
  if (c.lesion_contrast < 0 || c.lesion_contrast > 1)
    throw std::invalid_argument("synth: lesion_contrast must be in [0, 1]");
  if (c.jitter_vox < 0) throw std::invalid_argument("synth: jitter_vox must be >= 0");
  if (c.domain_shift < 0) throw std::invalid_argument("synth: domain_shift must be >= 0");
  // the lesion must fit inside the volume after maximal jitter
  for (int a = 0; a < 3; ++a) {
    const double center = c.lesion_center[static_cast<size_t>(a)] * static_cast<double>(c.size - 1);
    const double reach = c.lesion_radius_vox + c.jitter_vox;
    if (center - reach < 0 || center + reach > static_cast<double>(c.size - 1))
      throw std::invalid_argument("synth: lesion (radius + jitter) does not fit inside the volume on axis " +
                                  std::to_string(a));
  }
}

void write_volume(const std::string& path, const Tensor& t) {
  if (t.rank() != 3) throw std::invalid_argument("write_volume: expected rank-3 tensor, got " + shape_str(t.dims));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_volume: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(kRvolMagic), 5);
  const uint32_t dims[3] = {static_cast<uint32_t>(t.dims[0]), static_cast<uint32_t>(t.dims[1]),
                            static_cast<uint32_t>(t.dims[2])};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  f.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!f) throw std::runtime_error("write_volume: short write to '" + path + "'");
}

Tensor read_volume(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_volume: cannot open '" + path + "'");
  unsigned char magic[5] = {0};
  f.read(reinterpret_cast<char*>(magic), 5);
  if (f.gcount() != 5 || std::memcmp(magic, kRvolMagic, 5) != 0)
    throw std::runtime_error("read_volume: '" + path + "': bad magic at byte offset 0");
  uint32_t dims[3] = {0, 0, 0};
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (f.gcount() != sizeof(dims))
    throw std::runtime_error("read_volume: '" + path + "': truncated header at byte offset 5");
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0)
    throw std::runtime_error("read_volume: '" + path + "': zero extent in header");
  Tensor t({static_cast<int64_t>(dims[0]), static_cast<int64_t>(dims[1]), static_cast<int64_t>(dims[2])});
  const std::streamsize want = static_cast<std::streamsize>(t.data.size() * sizeof(float));
  f.read(reinterpret_cast<char*>(t.data.data()), want);
  if (f.gcount() != want)
    throw std::runtime_error("read_volume: '" + path + "': truncated payload at byte offset " +
                             std::to_string(17 + f.gcount()));
  return t;
}

void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_manifest: cannot open '" + path + "'");
  for (const VolumeRecord& r : m) {
    json j = {{"path", r.path}, {"label", r.label}, {"subject_id", r.subject_id}, {"dataset_tag", r.dataset_tag}};
    if (r.has_lesion) {
      j["lesion_center_vox"] = {r.lesion_center_vox[0], r.lesion_center_vox[1], r.lesion_center_vox[2]};
      j["lesion_radius_vox"] = r.lesion_radius_vox;
    }
    f << j.dump() << "\n";
  }
}

Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_manifest: cannot open '" + path + "'");
  Manifest m;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("read_manifest: '" + path + "' line " + std::to_string(lineno) + ": " + e.what());
    }
    VolumeRecord r;
    r.path = j.at("path").get<std::string>();
    r.label = j.at("label").get<int>();
    r.subject_id = j.at("subject_id").get<std::string>();
    r.dataset_tag = j.at("dataset_tag").get<std::string>();
    if (j.contains("lesion_center_vox")) {
      r.has_lesion = true;
      const auto& c = j["lesion_center_vox"];
      r.lesion_center_vox = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
      r.lesion_radius_vox = j.at("lesion_radius_vox").get<double>();
    }
    m.push_back(std::move(r));
  }
  return m;
}

std::string resolve_volume_path(const std::string& manifest_path, const VolumeRecord& rec) {
  const fs::path p(rec.path);
  if (p.is_absolute()) return rec.path;
  return (fs::path(manifest_path).parent_path() / p).string();
}

Manifest generate_synthetic(const SynthConfig& c, const std::string& out_dir) {
  validate(c);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir))
    throw std::runtime_error("generate_synthetic: cannot create output directory '" + out_dir + "'");

  const int64_t sz = c.size;
  const int64_t voxels = sz * sz * sz;
  Manifest manifest;
  const int total = 2 * c.n_per_class;
  for (int subject = 0; subject < total; ++subject) {
    const int label = subject < c.n_per_class ? 0 : 1;
    SplitMix64 rng(SplitMix64::mix(c.seed ^ static_cast<uint64_t>(subject)));

    // jitter is drawn for every subject so record geometry stays aligned
    double center[3];
    for (int a = 0; a < 3; ++a)
      center[a] = c.lesion_center[static_cast<size_t>(a)] * static_cast<double>(sz - 1) +
                  rng.next_uniform(-c.jitter_vox, c.jitter_vox);

    Tensor vol = Tensor::full({sz, sz, sz}, 1.0f);
    if (c.noise_sigma > 0)
      for (int64_t i = 0; i < voxels; ++i)
        vol[i] += static_cast<float>(c.noise_sigma * rng.next_normal());

    if (label == 1) {
      const double r2 = c.lesion_radius_vox * c.lesion_radius_vox;
      const float factor = static_cast<float>(1.0 - c.lesion_contrast);
      for (int64_t d = 0; d < sz; ++d)
        for (int64_t h = 0; h < sz; ++h)
          for (int64_t w = 0; w < sz; ++w) {
            const double dd = static_cast<double>(d) - center[0];
            const double dh = static_cast<double>(h) - center[1];
            const double dw = static_cast<double>(w) - center[2];
            if (dd * dd + dh * dh + dw * dw <= r2) vol.at3(d, h, w) *= factor;
          }
    }

    if (c.domain_shift > 0) {
      const float gain = static_cast<float>(1.0 + c.domain_shift);
      for (int64_t i = 0; i < voxels; ++i)
        vol[i] = vol[i] * gain + static_cast<float>(c.domain_shift * rng.next_normal());
    }

    char name[64];
    std::snprintf(name, sizeof(name), "%s_s%04d.rvol", c.dataset_tag.c_str(), subject);
    write_volume((fs::path(out_dir) / name).string(), vol);

    VolumeRecord rec;
    rec.path = name;
    rec.label = label;
    char sid[32];
    std::snprintf(sid, sizeof(sid), "s%04d", subject);
    rec.subject_id = sid;
    rec.dataset_tag = c.dataset_tag;
    if (label == 1) {
      rec.has_lesion = true;
      rec.lesion_center_vox = {center[0], center[1], center[2]};
      rec.lesion_radius_vox = c.lesion_radius_vox;
    }
    manifest.push_back(std::move(rec));
  }
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), manifest);
  return manifest;
}

// Per-class subject lists in first-seen order (deterministic input order ->
// deterministic shuffles).
static void split_subjects_by_class(const Manifest& m, std::vector<std::string>& class0, std::vector<std::string>& class1) {
  std::set<std::string> seen;
  for (const VolumeRecord& r : m) {
    if (r.label != 0 && r.label != 1)
      throw std::invalid_argument("split: label " + std::to_string(r.label) + " outside {0, 1} for subject " + r.subject_id);
    if (seen.insert(r.subject_id).second) (r.label == 0 ? class0 : class1).push_back(r.subject_id);
  }
}

std::pair<Manifest, Manifest> split_stratified(const Manifest& m, double train_frac, uint64_t seed) {
  if (train_frac <= 0 || train_frac >= 1) throw std::invalid_argument("split: train_frac must be in (0, 1)");
  std::vector<std::string> cls[2];
  split_subjects_by_class(m, cls[0], cls[1]);
  for (int c = 0; c < 2; ++c)
    if (cls[c].size() < 2)
      throw std::invalid_argument("split: class " + std::to_string(c) + " has " + std::to_string(cls[c].size()) +
                                  " subjects, need >= 2");
  std::set<std::string> train_subjects;
  SplitMix64 rng(SplitMix64::mix(seed));
  for (int c = 0; c < 2; ++c) {
    fisher_yates(cls[c], rng);
    const size_t n_train = static_cast<size_t>(std::llround(train_frac * static_cast<double>(cls[c].size())));
    for (size_t i = 0; i < n_train && i < cls[c].size(); ++i) train_subjects.insert(cls[c][i]);
  }
  Manifest train, test;
  for (const VolumeRecord& r : m) (train_subjects.count(r.subject_id) ? train : test).push_back(r);
  return {std::move(train), std::move(test)};
}

std::vector<std::pair<Manifest, Manifest>> kfold(const Manifest& m, int k, uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold: k must be >= 2");
  std::vector<std::string> cls[2];
  split_subjects_by_class(m, cls[0], cls[1]);
  for (int c = 0; c < 2; ++c)
    if (cls[c].size() < static_cast<size_t>(k))
      throw std::invalid_argument("kfold: class " + std::to_string(c) + " has " + std::to_string(cls[c].size()) +
                                  " subjects, need >= k = " + std::to_string(k));
  // shuffle each class, deal subjects round-robin into folds
  std::vector<std::set<std::string>> fold_subjects(static_cast<size_t>(k));
  SplitMix64 rng(SplitMix64::mix(seed));
  for (int c = 0; c < 2; ++c) {
    fisher_yates(cls[c], rng);
    for (size_t i = 0; i < cls[c].size(); ++i)
      fold_subjects[i % static_cast<size_t>(k)].insert(cls[c][i]);
  }
  std::vector<std::pair<Manifest, Manifest>> folds;
  for (int f = 0; f < k; ++f) {
    Manifest train, val;
    for (const VolumeRecord& r : m)
      (fold_subjects[static_cast<size_t>(f)].count(r.subject_id) ? val : train).push_back(r);
    folds.emplace_back(std::move(train), std::move(val));
  }
  return folds;
}

Tensor normalize_volume(const Tensor& t) {
  if (t.numel() < 2) throw std::invalid_argument("normalize_volume: need >= 2 voxels");
  double sum = 0.0;
  for (float v : t.data) sum += static_cast<double>(v);
  const double mean = sum / static_cast<double>(t.numel());
  double sq = 0.0;
  for (float v : t.data) {
    const double d = static_cast<double>(v) - mean;
    sq += d * d;
  }
  const double stddev = std::sqrt(sq / static_cast<double>(t.numel()));
  if (stddev < 1e-8) return t;
  Tensor out(t.dims);
  for (int64_t i = 0; i < t.numel(); ++i)
    out[i] = static_cast<float>((static_cast<double>(t[i]) - mean) / stddev);
  return out;
}

bool subjects_disjoint(const Manifest& a, const Manifest& b) {
  std::set<std::string> sa;
  for (const VolumeRecord& r : a) sa.insert(r.subject_id);
  for (const VolumeRecord& r : b)
    if (sa.count(r.subject_id)) return false;
  return true;
}

Tensor lesion_mask(const VolumeRecord& rec, int64_t size) {
  if (!rec.has_lesion) throw std::invalid_argument("lesion_mask: record '" + rec.subject_id + "' has no lesion geometry");
  Tensor mask({size, size, size});
  const double r2 = rec.lesion_radius_vox * rec.lesion_radius_vox;
  for (int64_t d = 0; d < size; ++d)
    for (int64_t h = 0; h < size; ++h)
      for (int64_t w = 0; w < size; ++w) {
        const double dd = static_cast<double>(d) - rec.lesion_center_vox[0];
        const double dh = static_cast<double>(h) - rec.lesion_center_vox[1];
        const double dw = static_cast<double>(w) - rec.lesion_center_vox[2];
        if (dd * dd + dh * dh + dw * dw <= r2) mask.at3(d, h, w) = 1.0f;
      }
  return mask;
}

}  // namespace damnet
