// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

namespace serireg {

/// 2D displacement in pixels, x along columns, y along rows.
struct Vec2 {
    float x = 0.f;
    float y = 0.f;

    constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    constexpr Vec2 operator*(float s) const { return {x * s, y * s}; }
    constexpr bool operator==(const Vec2&) const = default;

    float norm() const { return std::hypot(x, y); }
};

/// Double-precision companion used for statistics and transform math.
struct Vec2d {
    double x = 0.0;
    double y = 0.0;

    constexpr Vec2d operator+(Vec2d o) const { return {x + o.x, y + o.y}; }
    constexpr Vec2d operator-(Vec2d o) const { return {x - o.x, y - o.y}; }
    constexpr Vec2d operator*(double s) const { return {x * s, y * s}; }

    double norm() const { return std::hypot(x, y); }
};

} // namespace serireg
