// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gvr/field.hpp"
#include "gvr/synthio.hpp"

namespace gvr {

struct DepthMetrics {
  double rmse = 0, mae = 0, ard = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  int count = 0;
};

/// Standard masked depth errors; delta_i is the fraction of pixels with
/// max(pred/gt, gt/pred) < 1.25^i (strict). Throws DataError on an empty
/// mask or mismatched shapes.
DepthMetrics depthMetrics(const Image& pred, const Image& gt, const Image& mask);

struct OccupancyMetrics {
  double iou = 0, precision = 0, recall = 0;
};

/// Voxelizes both grids onto a common lattice (voxel edge `voxel_m`) over the
/// intersection of their bounds; a voxel is occupied when the max density
/// over a fixed sub-lattice exceeds sigma_threshold.
OccupancyMetrics occupancyMetrics(const SceneGrid& pred, const SceneGrid& gt,
                                  double sigma_threshold = 5.0, double voxel_m = 0.5);

/// 10 log10(peak^2 / MSE); identical images cap at the 100 dB sentinel.
double psnr(const Image& pred, const Image& gt, double peak);

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), k1=0.01 k2=0.03,
/// dynamic range 1. Window means use valid (interior) pixels only.
double ssim(const Image& pred, const Image& gt);

}  // namespace gvr
