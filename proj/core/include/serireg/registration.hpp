// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "serireg/geometry.hpp"
#include "serireg/volume.hpp"

namespace serireg {

enum class MethodKind { identity, translation, rigid, elastic };
enum class Similarity { ssd, ncc };

MethodKind method_kind_from_string(const std::string& name);
std::string to_string(MethodKind kind);

struct MethodOptions {
    int pyramid_levels = 3;
    Similarity similarity = Similarity::ncc;
    double theta_max_deg = 15.0; // rigid search bound
    int theta_samples = 33;      // coarsest-level grid resolution

    struct Elastic {
        double grid_px = 32.0; // control-lattice spacing at full resolution
        double lambda = 0.001; // weight of the mean squared node Laplacian
        double step = 2.0;     // initial node step in px (gradient direction
                               // normalized to unit max component)
        int max_iter = 60;     // per pyramid level
        double grad_tol = 1e-6;
    } elastic;

    void validate() const;
};

struct RegistrationMethod {
    MethodKind kind = MethodKind::identity;
    MethodOptions options;
};

struct StackStrategy {
    enum class Kind { chain_to_previous, fixed_reference };
    Kind kind = Kind::chain_to_previous;
    int reference = -1; // fixed_reference slice; -1 means mid stack

    static StackStrategy from_string(const std::string& name, int reference = -1);
    std::string name() const;
};

struct SliceDiagnostics {
    int z = 0;
    double similarity_final = 0.0; // NCC against the fixed image
    int iterations = 0;
    bool converged = true;
};

/// Correction fields (backward convention, geometry coordinate contract),
/// one per slice of the stack that was registered, plus per-slice diagnostics.
struct RegistrationResult {
    FieldStack fields;
    std::vector<SliceDiagnostics> diagnostics;
};

struct TranslationResult {
    double tx = 0.0, ty = 0.0; // correction shift: moving(x + t) ~= fixed(x)
    double ncc = 0.0;
    int iterations = 0;
};

struct RigidResult {
    RigidTransform2D transform; // rigid_to_field(transform) is the correction
    double ncc = 0.0;
    int iterations = 0;
};

struct ElasticResult {
    DisplacementField field;
    double final_energy = 0.0;
    double final_ncc = 0.0;
    double final_node_roughness = 0.0; // sum ||node Laplacian||^2, finest level
    // Accepted energies per pyramid level (coarse to fine); each sequence is
    // strictly decreasing.
    std::vector<std::vector<double>> energy_history;
    int iterations = 0;
    bool converged = true;
};

/// Integer-pixel estimate by exhaustive NCC over a search radius at the
/// coarsest pyramid level (default radius min(dims)/4 there), refined per
/// level, with a final sub-pixel quadratic fit of the 3x3 NCC surface.
/// Throws FlatImage when either input has zero variance.
TranslationResult register_translation(const Slice& fixed, const Slice& moving,
                                       const MethodOptions& opts = {});

/// Multi-resolution grid search over theta (register_translation at each
/// sample), range and step halving per finer level, finished by a
/// golden-section refinement on theta.
RigidResult register_rigid(const Slice& fixed, const Slice& moving,
                           const MethodOptions& opts = {});

/// Control-lattice free-form deformation initialized from register_rigid,
/// minimizing similarity + lambda * sum ||node Laplacian||^2 by gradient
/// descent (analytic gradient through bilinear sampling; fixed step with
/// halving on non-decrease), coarse-to-fine over the pyramid.
ElasticResult register_elastic(const Slice& fixed, const Slice& moving,
                               const MethodOptions& opts = {});

/// Register a whole stack. chain_to_previous registers each slice to the
/// already corrected predecessor (slice 0 keeps a zero field);
/// fixed_reference registers every slice directly to the reference slice.
/// Per-slice failures abort the run with the slice index in the message.
RegistrationResult register_stack(const Volume& v, const RegistrationMethod& method,
                                  const StackStrategy& strategy);

enum class ImportKind { fields, rigid_params };

/// Import externally produced results for evaluation: either a volume-io
/// field stack (sidecar must declare the backward convention and, when it
/// names an origin, pixel_center) or a `transforms.json` of per-slice rigid
/// parameters rasterized via rigid_to_field. nx/ny give the slice dims the
/// result must match.
RegistrationResult import_external(const std::filesystem::path& dir, ImportKind kind,
                                   int nx, int ny);

/// Detect fields/ rigid_params from the files present in dir.
ImportKind detect_import_kind(const std::filesystem::path& dir);

/// Fields in the volume-io format plus diagnostics.csv
/// (columns: z,similarity_final,iterations,converged).
void save_result(const RegistrationResult& result, const std::filesystem::path& dir);

} // namespace serireg
