// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "serireg/geometry.hpp"
#include "serireg/volume.hpp"

namespace serireg {

/// Seeded description of per-slice cutting distortion statistics. The same
/// spec always produces bit-identical output, independent of thread count.
struct DistortionSpec {
    std::uint64_t seed = 0;
    double sigma_theta_rad = 0.0; // std of per-slice rotation
    double sigma_t_px = 0.0;      // std of per-slice translation, isotropic
    struct Elastic {
        double grid_px = 64.0; // control-lattice spacing
        double sigma_px = 0.0; // std of control-node displacement per component
    } elastic;
    struct Intensity {
        double sigma_gamma = 0.0; // std of log-gamma jitter
    } intensity;
    double p_drop = 0.0; // per-slice loss probability, adjacent drops suppressed
    double clamp_k = 3.0; // node displacements clamped to +-clamp_k*sigma_px

    void validate() const;

    /// Desk-scale default magnitudes: 2 deg rotation, 5 px translation,
    /// 3 px elastic on a 64 px lattice, 5% gamma jitter, 2% slice loss.
    static DistortionSpec preset_default(std::uint64_t seed);
};

/// Everything sampled while distorting one slice.
struct SliceDistortion {
    RigidTransform2D rigid;
    DisplacementField elastic;
    DisplacementField composed; // compose(elastic, rigid_to_field(rigid))
    double gamma = 1.0;
    bool dropped = false;
};

/// The ground truth: every sampled quantity for every original slice index,
/// plus the sorted list of dropped slices. Dropped slices are absent from the
/// distorted stack but keep their entry here.
struct DistortionRecord {
    DistortionSpec spec;
    std::string rng_algorithm;
    int nx = 0, ny = 0, nz = 0;
    std::vector<SliceDistortion> slices; // indexed by original z
    std::vector<int> dropped_slices;     // sorted

    std::vector<int> surviving_slices() const;
};

/// Per-slice rigid jitter from the (seed, z, "rigid") substream; the rotation
/// centre is the image centre.
RigidTransform2D sample_rigid(const DistortionSpec& spec, int z, int nx, int ny);

/// Smooth per-slice deformation: clamped Gaussian displacements on a control
/// lattice (one margin node per side), upsampled with the Catmull-Rom kernel,
/// from the (seed, z, "elastic") substream. The dense field passes exactly
/// through the node displacements at node locations.
DisplacementField sample_elastic(const DistortionSpec& spec, int z, int nx, int ny);

/// Distort a registered volume in the manner of serial-section cutting:
/// per surviving slice, warp by compose(elastic, rigid_to_field(rigid)) with
/// bilinear interpolation, then apply gamma jitter p -> p^gamma. Slices drop
/// with probability p_drop, never two adjacent (the second of a pair is
/// kept). Returns the distorted stack and the full ground-truth record.
std::pair<Volume, DistortionRecord> distort_volume(const Volume& v, const DistortionSpec& spec);

/// Invert each surviving slice's composed field: the ideal correction any
/// evaluated method is compared against. Throws NotConverged with the slice
/// index in the message if a field refuses to invert.
FieldStack oracle_recovery(const DistortionRecord& record, double tol, int max_iter = 100);

/// Record interchange: `record.json` plus `composed/` and `elastic/` field
/// stacks in the volume-io format.
void save_record(const DistortionRecord& record, const std::filesystem::path& dir);
DistortionRecord load_record(const std::filesystem::path& dir);

/// Config (de)serialization for the spec; keys are documented in the README.
DistortionSpec distortion_spec_from_json_text(const std::string& text);

} // namespace serireg
