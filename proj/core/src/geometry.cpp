// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#include "serireg/geometry.hpp"

#include <cmath>

#include "serireg/parallel.hpp"

namespace serireg {

namespace {

// Rotation with the sign convention documented on RigidTransform2D.
inline Vec2d rotate(Vec2d v, double cos_t, double sin_t) {
    return {v.x * cos_t + v.y * sin_t, -v.x * sin_t + v.y * cos_t};
}

inline float tap(const Slice& s, int x, int y, float pad) {
    if (x < 0 || y < 0 || x >= s.nx || y >= s.ny) return pad;
    return s.at(x, y);
}

// Catmull-Rom kernel, a = -0.5.
inline float cubic_kernel(float t) {
    t = std::fabs(t);
    if (t < 1.f) return ((1.5f * t - 2.5f) * t) * t + 1.f;
    if (t < 2.f) return ((-0.5f * t + 2.5f) * t - 4.f) * t + 2.f;
    return 0.f;
}

float sample_nearest(const Slice& s, float px, float py, float pad) {
    const int x = static_cast<int>(std::floor(px + 0.5f));
    const int y = static_cast<int>(std::floor(py + 0.5f));
    return tap(s, x, y, pad);
}

float sample_bilinear(const Slice& s, float px, float py, float pad) {
    const float fx = std::floor(px);
    const float fy = std::floor(py);
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const float ax = px - fx;
    const float ay = py - fy;
    const float v00 = tap(s, x0, y0, pad);
    const float v10 = tap(s, x0 + 1, y0, pad);
    const float v01 = tap(s, x0, y0 + 1, pad);
    const float v11 = tap(s, x0 + 1, y0 + 1, pad);
    return (v00 * (1.f - ax) + v10 * ax) * (1.f - ay) +
           (v01 * (1.f - ax) + v11 * ax) * ay;
}

float sample_bicubic(const Slice& s, float px, float py, float pad) {
    const float fx = std::floor(px);
    const float fy = std::floor(py);
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const float ax = px - fx;
    const float ay = py - fy;
    float wx[4], wy[4];
    for (int i = 0; i < 4; ++i) {
        wx[i] = cubic_kernel(ax - static_cast<float>(i - 1));
        wy[i] = cubic_kernel(ay - static_cast<float>(i - 1));
    }
    float acc = 0.f;
    for (int j = 0; j < 4; ++j) {
        float row = 0.f;
        for (int i = 0; i < 4; ++i)
            row += wx[i] * tap(s, x0 - 1 + i, y0 - 1 + j, pad);
        acc += wy[j] * row;
    }
    return std::clamp(acc, 0.f, 1.f);
}

} // namespace

RigidTransform2D RigidTransform2D::inverse() const {
    const double c = std::cos(-theta_rad);
    const double s = std::sin(-theta_rad);
    const Vec2d t_inv = rotate({-tx, -ty}, c, s);
    return {-theta_rad, t_inv.x, t_inv.y, cx, cy};
}

Vec2d RigidTransform2D::apply(Vec2d p) const {
    const double c = std::cos(theta_rad);
    const double s = std::sin(theta_rad);
    const Vec2d r = rotate({p.x - cx, p.y - cy}, c, s);
    return {r.x + cx + tx, r.y + cy + ty};
}

float sample_image(const Slice& s, float px, float py, const Interpolation& interp) {
    switch (interp.kind) {
        case InterpKind::nearest: return sample_nearest(s, px, py, interp.pad_value);
        case InterpKind::bilinear: return sample_bilinear(s, px, py, interp.pad_value);
        case InterpKind::bicubic: return sample_bicubic(s, px, py, interp.pad_value);
    }
    return interp.pad_value;
}

DisplacementField rigid_to_field(const RigidTransform2D& t, int nx, int ny) {
    DisplacementField field(nx, ny);
    // u(y) = R(-theta) (y - c - t) + c - y
    const double cos_t = std::cos(-t.theta_rad);
    const double sin_t = std::sin(-t.theta_rad);
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
            const Vec2d p{static_cast<double>(x) - t.cx - t.tx,
                          static_cast<double>(y) - t.cy - t.ty};
            const Vec2d r = rotate(p, cos_t, sin_t);
            field.at(x, y) = {static_cast<float>(r.x + t.cx - x),
                              static_cast<float>(r.y + t.cy - y)};
        }
    }
    return field;
}

Slice warp_slice(const Slice& s, const DisplacementField& u, const Interpolation& interp) {
    if (s.nx != u.nx || s.ny != u.ny)
        throw DimensionMismatch("warp_slice: field dims do not match slice dims");
    if (!(interp.pad_value >= 0.f && interp.pad_value <= 1.f))
        throw InvalidSpec("warp_slice: pad_value must lie in [0,1]");
    Slice out(s.nx, s.ny, 0.f, s.z);
    for (int y = 0; y < s.ny; ++y) {
        for (int x = 0; x < s.nx; ++x) {
            const Vec2 d = u.at(x, y);
            out.at(x, y) = sample_image(s, static_cast<float>(x) + d.x,
                                        static_cast<float>(y) + d.y, interp);
        }
    }
    return out;
}

Volume warp_volume(const Volume& v, const FieldStack& f, const Interpolation& interp) {
    if (f.nz() != v.nz)
        throw DimensionMismatch("warp_volume: field stack nz does not match volume");
    const auto [fnx, fny] = f.dims();
    if (fnx != v.nx || fny != v.ny)
        throw DimensionMismatch("warp_volume: field dims do not match volume dims");
    Volume out(v.nx, v.ny, v.nz);
    out.spacing_um = v.spacing_um;
    out.provenance = v.provenance;
    parallel_for(v.nz, [&](std::int64_t z) {
        out.set_slice(static_cast<int>(z),
                      warp_slice(v.slice(static_cast<int>(z)), f[static_cast<int>(z)], interp));
    });
    return out;
}

DisplacementField compose_fields(const DisplacementField& u, const DisplacementField& v) {
    if (u.nx != v.nx || u.ny != v.ny)
        throw DimensionMismatch("compose_fields: field dims differ");
    DisplacementField w(u.nx, u.ny);
    for (int y = 0; y < u.ny; ++y) {
        for (int x = 0; x < u.nx; ++x) {
            const Vec2 a = u.at(x, y);
            const Vec2 b = v.sample_clamped(static_cast<float>(x) + a.x,
                                            static_cast<float>(y) + a.y);
            w.at(x, y) = a + b;
        }
    }
    return w;
}

InversionResult invert_field(const DisplacementField& u, double tol, int max_iter) {
    if (!(tol > 0.0)) throw InvalidSpec("invert_field: tol must be positive");
    const int nx = u.nx, ny = u.ny;
    // Use the interior margin when the image is big enough to have one.
    const int mx = (nx > 2 * kInteriorMargin) ? kInteriorMargin : 0;
    const int my = (ny > 2 * kInteriorMargin) ? kInteriorMargin : 0;

    DisplacementField v(nx, ny);
    DisplacementField next(nx, ny);
    double best_residual = std::numeric_limits<double>::infinity();
    DisplacementField best = v;

    // Plain fixed-point iteration, with under-relaxation kicking in when the
    // best residual stops making headway (fields whose gradient exceeds the
    // contraction limit oscillate or diverge at alpha = 1).
    float alpha = 1.f;
    double checkpoint = std::numeric_limits<double>::infinity();
    int since_checkpoint = 0;

    for (int iter = 1; iter <= max_iter; ++iter) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                const Vec2 d = v.at(x, y);
                const Vec2 s = u.sample_clamped(static_cast<float>(x) + d.x,
                                                static_cast<float>(y) + d.y);
                next.at(x, y) = {d.x + alpha * (-s.x - d.x), d.y + alpha * (-s.y - d.y)};
            }
        }
        std::swap(v, next);

        double residual = 0.0;
        for (int y = my; y < ny - my; ++y) {
            for (int x = mx; x < nx - mx; ++x) {
                const Vec2 d = v.at(x, y);
                const Vec2 s = u.sample_clamped(static_cast<float>(x) + d.x,
                                                static_cast<float>(y) + d.y);
                const double rx = s.x + d.x;
                const double ry = s.y + d.y;
                residual = std::max(residual, std::hypot(rx, ry));
            }
        }
        if (residual < tol) return {std::move(v), residual, iter};
        if (residual < best_residual) {
            best_residual = residual;
            best = v;
        }
        if (++since_checkpoint >= 3) {
            // Essentially no progress over three iterations: oscillation or
            // divergence, which under-relaxation can stabilize.
            if (best_residual > 0.98 * checkpoint && alpha > 0.2f) {
                alpha *= 0.5f;
                v = best;
            }
            checkpoint = best_residual;
            since_checkpoint = 0;
        }
    }
    throw NotConverged("invert_field: residual " + std::to_string(best_residual) +
                           " px after " + std::to_string(max_iter) + " iterations",
                       best_residual, max_iter);
}

} // namespace serireg
