#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "damnet/tensor.hpp"

namespace damnet {

// One dataset entry. Label-1 records generated synthetically also carry the
// ground-truth lesion geometry (extra manifest keys; readers that only need
// the required keys ignore them).
struct VolumeRecord {
  std::string path;  // as written in the manifest; resolve against the manifest directory
  int label = 0;     // 0 = control, 1 = case
  std::string subject_id;
  std::string dataset_tag;
  bool has_lesion = false;
  std::array<double, 3> lesion_center_vox = {0, 0, 0};  // (d, h, w)
  double lesion_radius_vox = 0.0;
};

using Manifest = std::vector<VolumeRecord>;

struct SynthConfig {
  int n_per_class = 50;
  int64_t size = 32;  // cubic extent
  std::array<double, 3> lesion_center = {0.35, 0.5, 0.45};  // normalized (d, h, w)
  double lesion_radius_vox = 6.5;
  double lesion_contrast = 0.3;  // intensity attenuation inside the sphere for label 1
  double jitter_vox = 2.0;
  double noise_sigma = 0.15;
  double domain_shift = 0.0;  // global gain (1 + shift) plus extra noise of sigma shift
  uint64_t seed = 0;
  std::string dataset_tag = "synth-adni";
};

void validate(const SynthConfig& c);

// Writes one volume file per subject plus out_dir/manifest.jsonl; the
// returned manifest holds paths relative to out_dir. Deterministic per seed:
// subject i draws from splitmix64(seed ^ i).
Manifest generate_synthetic(const SynthConfig& c, const std::string& out_dir);

// "RVOL v1": magic 52 56 4F 4C 01, then little-endian u32 D, H, W, then
// D*H*W f32 voxels in row-major (d, h, w) order.
void write_volume(const std::string& path, const Tensor& t);
Tensor read_volume(const std::string& path);

void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

// Joins a manifest-relative volume path with the manifest's directory.
std::string resolve_volume_path(const std::string& manifest_path, const VolumeRecord& rec);

// Subject-level stratified split; no subject appears on both sides.
std::pair<Manifest, Manifest> split_stratified(const Manifest& m, double train_frac, uint64_t seed);

// Stratified k-fold over subjects; validation folds partition the subjects.
std::vector<std::pair<Manifest, Manifest>> kfold(const Manifest& m, int k, uint64_t seed);

// Per-volume z-score (population std); identity when std < 1e-8.
Tensor normalize_volume(const Tensor& t);

// Leakage audit: true iff the subject-id sets are disjoint.
bool subjects_disjoint(const Manifest& a, const Manifest& b);

// Ground-truth sphere mask for a generated label-1 record (1 inside, 0 out).
Tensor lesion_mask(const VolumeRecord& rec, int64_t size);

}  // namespace damnet
