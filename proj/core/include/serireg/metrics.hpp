// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "serireg/distortion.hpp"
#include "serireg/registration.hpp"
#include "serireg/volume.hpp"

namespace serireg {

/// Per-slice evaluation mask: foreground threshold on the original slice,
/// eroded so statistics stay clear of boundary-extension effects.
struct Mask {
    int nx = 0, ny = 0;
    std::vector<std::uint8_t> inside;
    long long count = 0;
    bool fallback_used = false; // threshold emptied the mask

    bool at(int x, int y) const { return inside[static_cast<std::size_t>(y) * nx + x]; }
};

/// mask = (intensity >= threshold) eroded by margin px (8-neighbourhood, the
/// image border counts as background). If that empties, falls back to the
/// full interior (then the whole frame) and sets fallback_used.
Mask make_mask(const Slice& original, double threshold, int margin_px);

struct SimilarityStats {
    double mse = 0.0;
    double psnr_db = 0.0; // capped at 99 dB so CSV stays numeric
    double ncc = 0.0;
    double ssim = 0.0;
};

/// mse/psnr/ncc over masked pixels; ssim over 8x8 sliding windows lying fully
/// inside the mask (K1=0.01, K2=0.03, dynamic range 1). Throws EmptyMask when
/// the mask has no pixels and FlatImage when ncc is undefined. ssim is NaN if
/// no complete window fits.
SimilarityStats similarity_suite(const Slice& a, const Slice& b, const Mask& mask);

/// Residual backward field of correction-after-distortion:
/// e = compose_fields(recovered, ground_truth). Perfect recovery gives e ~= 0.
DisplacementField error_field(const DisplacementField& ground_truth,
                              const DisplacementField& recovered);

struct ErrorStats {
    double mean_px = 0.0;
    double rms_px = 0.0;
    double median_px = 0.0;
    double p95_px = 0.0;
    double max_px = 0.0;
};

/// Statistics of a pool of error magnitudes (nearest-rank quantiles).
ErrorStats error_stats(const std::vector<float>& magnitudes);

struct DriftProfile {
    std::vector<Vec2d> per_slice_mean; // m_z, masked mean residual vector
    std::vector<Vec2d> cumulative;     // C_z = sum_{k<=z} m_k
    std::vector<Vec2d> smoothed;       // centered moving average of m, window w
    int window = 9;
    double score_px = 0.0; // max_z ||S_z||
};

/// Drift is measured on residual errors, not raw corrections: only the
/// residual reveals accumulated shape corruption (the banana effect).
DriftProfile drift_profile(const std::vector<Vec2d>& per_slice_mean, int window = 9);

struct EvalOptions {
    double mask_threshold = 0.1;
    int mask_margin = 4;
    int drift_window = 9;
};

struct SliceMetrics {
    int z = 0; // original slice index
    ErrorStats error;
    SimilarityStats similarity;
    Vec2d mean_residual;
    long long mask_px = 0;
    bool mask_fallback = false;
};

struct MetricsRecord {
    std::string method;
    std::string strategy;
    std::uint64_t distortion_seed = 0;
    EvalOptions options;
    std::vector<SliceMetrics> slices;
    ErrorStats aggregate;            // pooled over all masked pixels
    SimilarityStats similarity_mean; // mean of the per-slice values
    DriftProfile drift;
};

/// Score a registration result against the ground-truth record: dense error
/// fields for every surviving slice, similarity of the corrected stack
/// against the original volume (the distorted stack is reconstructed from
/// record + original, so staged and one-shot runs agree bit-exactly), the
/// drift profile, and pooled aggregates.
MetricsRecord evaluate(const RegistrationResult& result, const DistortionRecord& record,
                       const Volume& original, const EvalOptions& opts = {});

/// metrics.json (full record) and metrics.csv (per-slice rows with columns
/// z,mean_px,rms_px,median_px,p95_px,max_px,mse,psnr_db,ncc,ssim,m_x_px,m_y_px).
void save_metrics(const MetricsRecord& record, const std::filesystem::path& dir);
MetricsRecord load_metrics(const std::filesystem::path& dir);

} // namespace serireg
