// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "serireg/volume.hpp"

namespace serireg {

/// Pixels closer than this to the image border are excluded from residual and
/// error statements; boundary extension effects live entirely inside it.
inline constexpr int kInteriorMargin = 4;

/// Rigid motion about a centre, in pixel units.
///
/// The forward map is y = R(theta) * (x - c) + c + t with
/// R(theta) = [cos, sin; -sin, cos], i.e. positive theta turns image content
/// counter-clockwise on screen (y axis points down the rows).
struct RigidTransform2D {
    double theta_rad = 0.0;
    double tx = 0.0;
    double ty = 0.0;
    double cx = 0.0;
    double cy = 0.0;

    bool is_identity() const { return theta_rad == 0.0 && tx == 0.0 && ty == 0.0; }

    /// Inverse motion about the same centre.
    RigidTransform2D inverse() const;

    /// Forward map applied to a point.
    Vec2d apply(Vec2d p) const;
};

enum class InterpKind { nearest, bilinear, bicubic };

/// Image sampling policy. Taps that fall outside the image contribute
/// pad_value, so a sample point more than one pixel outside the domain
/// returns pad_value exactly while border samples blend with it.
struct Interpolation {
    InterpKind kind = InterpKind::bilinear;
    float pad_value = 0.f;
};

/// Sample an image at (px, py) under the given policy. Bicubic uses the
/// Catmull-Rom kernel (a = -0.5) and clamps the result to [0,1].
float sample_image(const Slice& s, float px, float py, const Interpolation& interp);

/// Rasterize a rigid transform as a backward-mapping field on an nx-by-ny
/// grid: u(y) = T^-1(y) - y, so warping by the field renders the content
/// rotated by theta and translated by t.
DisplacementField rigid_to_field(const RigidTransform2D& t, int nx, int ny);

/// out(x) = interp(s, x + u(x)). Throws DimensionMismatch when u and s differ.
Slice warp_slice(const Slice& s, const DisplacementField& u, const Interpolation& interp);

/// Per-slice map of warp_slice; spacing and provenance are propagated.
Volume warp_volume(const Volume& v, const FieldStack& f, const Interpolation& interp);

/// w(x) = u(x) + v(x + u(x)) with v sampled bilinearly under edge clamping.
/// Warping by w approximates warping by v first, then by u:
/// W_u(W_v(I)) ~= W_w(I).
DisplacementField compose_fields(const DisplacementField& u, const DisplacementField& v);

struct InversionResult {
    DisplacementField field;
    double residual = 0.0; // max interior ||u(x + v(x)) + v(x)||, px
    int iterations = 0;
};

/// Fixed-point inversion v_{k+1}(x) = -u(x + v_k(x)), v_0 = 0, stopping when
/// the max interior residual drops below tol. Throws NotConverged (carrying
/// the best residual) after max_iter unsuccessful iterations.
InversionResult invert_field(const DisplacementField& u, double tol, int max_iter);

} // namespace serireg
