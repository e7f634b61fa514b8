#pragma once

#include <string>

#include "damnet/model.hpp"

namespace damnet {

// Normalized voxel-importance volume at input resolution.
struct AttributionMap {
  Tensor values;  // [D, H, W], values in [0, 1]; max == 1 unless identically 0
  std::string layer;
  int target_class = 0;
  Shape input_dims;  // spatial dims the map was upsampled to
};

// Channel-gradient-weighted activation map at the named tap (default
// "dam2.out"), rectified, trilinearly upsampled to the input resolution and
// min-max normalized. Runs the model in eval mode.
AttributionMap gradcam(Backbone& model, const Tensor& x, int target_class, const std::string& layer_name);

// Align-corners trilinear interpolation; exact at corner voxels.
Tensor trilinear_upsample(const Tensor& m, int64_t D, int64_t H, int64_t W);

// Fraction of the top `top_fraction` highest-attribution voxels (row-major
// tie-break) that fall inside the ROI mask.
double localization_score(const AttributionMap& map, const Tensor& roi_mask, double top_fraction);

// RVOL volume plus a JSON sidecar describing the strongest regions.
void write_attribution(const AttributionMap& map, const std::string& rvol_path, const std::string& json_path,
                       const std::string& input_path);

// Mid-volume slices along each axis as plain (P2) PGM images:
// <prefix>_axial.pgm, <prefix>_coronal.pgm, <prefix>_sagittal.pgm.
void write_pgm_slices(const AttributionMap& map, const std::string& prefix);

}  // namespace damnet
