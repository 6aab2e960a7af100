// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "serireg/error.hpp"
#include "serireg/vec2.hpp"

namespace serireg {

/// One section of a stack. Pixel (x, y) sits at integer coordinates with the
/// origin at the top-left pixel centre; x runs along columns, y along rows.
struct Slice {
    int nx = 0;
    int ny = 0;
    int z = 0;
    std::vector<float> pixels; // row-major, size nx*ny

    Slice() = default;
    Slice(int nx_, int ny_, float fill = 0.f, int z_ = 0)
        : nx(nx_), ny(ny_), z(z_), pixels(static_cast<std::size_t>(nx_) * ny_, fill) {}

    float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * nx + x]; }
    float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * nx + x]; }
    std::size_t size() const { return pixels.size(); }
};

/// 3D scalar image: normalized intensities in [0,1], float32 in memory.
/// Treated as immutable once built; copies are cheap enough at desk scale.
struct Volume {
    int nx = 0;
    int ny = 0;
    int nz = 0;
    std::array<double, 3> spacing_um{1.0, 1.0, 1.0};
    std::vector<float> voxels; // z-major then row-major, size nx*ny*nz
    std::map<std::string, std::string> provenance;

    Volume() = default;
    Volume(int nx_, int ny_, int nz_, float fill = 0.f)
        : nx(nx_), ny(ny_), nz(nz_),
          voxels(static_cast<std::size_t>(nx_) * ny_ * nz_, fill) {}

    float& at(int x, int y, int z) {
        return voxels[(static_cast<std::size_t>(z) * ny + y) * nx + x];
    }
    float at(int x, int y, int z) const {
        return voxels[(static_cast<std::size_t>(z) * ny + y) * nx + x];
    }

    Slice slice(int z) const {
        Slice s(nx, ny, 0.f, z);
        const auto* src = voxels.data() + static_cast<std::size_t>(z) * nx * ny;
        std::copy(src, src + static_cast<std::size_t>(nx) * ny, s.pixels.begin());
        return s;
    }

    void set_slice(int z, const Slice& s) {
        if (s.nx != nx || s.ny != ny)
            throw DimensionMismatch("set_slice: slice dims do not match volume");
        std::copy(s.pixels.begin(), s.pixels.end(),
                  voxels.begin() + static_cast<std::size_t>(z) * nx * ny);
    }

    /// Enforces the type invariants; throws InvalidSpec on violation.
    void validate() const {
        if (nx <= 0 || ny <= 0 || nz <= 0)
            throw InvalidSpec("Volume: dimensions must be positive");
        if (voxels.size() != static_cast<std::size_t>(nx) * ny * nz)
            throw InvalidSpec("Volume: voxel count does not equal nx*ny*nz");
        for (const double s : spacing_um)
            if (!(s > 0.0)) throw InvalidSpec("Volume: spacing must be strictly positive");
        for (const float v : voxels)
            if (!(v >= 0.f && v <= 1.f))
                throw InvalidSpec("Volume: intensity outside [0,1]");
    }
};

/// Dense backward-mapping displacement field: warped(x) = source(x + u(x)).
struct DisplacementField {
    int nx = 0;
    int ny = 0;
    std::vector<Vec2> vectors; // row-major, size nx*ny

    DisplacementField() = default;
    DisplacementField(int nx_, int ny_, Vec2 fill = {})
        : nx(nx_), ny(ny_), vectors(static_cast<std::size_t>(nx_) * ny_, fill) {}

    Vec2& at(int x, int y) { return vectors[static_cast<std::size_t>(y) * nx + x]; }
    Vec2 at(int x, int y) const { return vectors[static_cast<std::size_t>(y) * nx + x]; }

    /// Bilinear sample with edge-clamped coordinates. Fields are extended by
    /// clamping (unlike images, which pad) so composed fields stay smooth.
    Vec2 sample_clamped(float px, float py) const {
        const float cx = std::clamp(px, 0.f, static_cast<float>(nx - 1));
        const float cy = std::clamp(py, 0.f, static_cast<float>(ny - 1));
        const int x0 = std::min(static_cast<int>(cx), nx - 2 >= 0 ? nx - 2 : 0);
        const int y0 = std::min(static_cast<int>(cy), ny - 2 >= 0 ? ny - 2 : 0);
        const int x1 = std::min(x0 + 1, nx - 1);
        const int y1 = std::min(y0 + 1, ny - 1);
        const float fx = cx - static_cast<float>(x0);
        const float fy = cy - static_cast<float>(y0);
        const Vec2 v00 = at(x0, y0), v10 = at(x1, y0), v01 = at(x0, y1), v11 = at(x1, y1);
        const float wx0 = 1.f - fx, wy0 = 1.f - fy;
        return {
            (v00.x * wx0 + v10.x * fx) * wy0 + (v01.x * wx0 + v11.x * fx) * fy,
            (v00.y * wx0 + v10.y * fx) * wy0 + (v01.y * wx0 + v11.y * fx) * fy,
        };
    }
};

/// One displacement field per slice of an associated stack.
struct FieldStack {
    std::vector<DisplacementField> fields;

    FieldStack() = default;
    explicit FieldStack(std::vector<DisplacementField> f) : fields(std::move(f)) {}

    int nz() const { return static_cast<int>(fields.size()); }
    bool empty() const { return fields.empty(); }
    DisplacementField& operator[](int z) { return fields[z]; }
    const DisplacementField& operator[](int z) const { return fields[z]; }

    /// All fields must share dims; returns (nx, ny).
    std::pair<int, int> dims() const {
        if (fields.empty()) throw DimensionMismatch("FieldStack: empty stack has no dims");
        const int nx = fields.front().nx, ny = fields.front().ny;
        for (const auto& f : fields)
            if (f.nx != nx || f.ny != ny)
                throw DimensionMismatch("FieldStack: inconsistent field dims");
        return {nx, ny};
    }
};

} // namespace serireg
