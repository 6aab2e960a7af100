// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "serireg/volume.hpp"

namespace serireg {

enum class PhantomKind { bent_tube, spheres, checker_noise };

PhantomKind phantom_kind_from_string(const std::string& name);
std::string to_string(PhantomKind kind);

/// Synthetic stand-in for an innately registered volume.
///
/// bent_tube: a bright tube whose centre follows
/// (cx + A*sin(2*pi*z/P), cy) — innately curved, so chain-registration drift
/// is observable — accompanied by four straight anchor rods near the corners
/// that give slice-to-slice registration a stationary reference. All
/// structures have anti-aliased edges (1 px linear ramp) and seeded noise
/// texture (std 0.1) strictly inside, so similarity metrics have signal while
/// edge geometry stays deterministic.
///
/// spheres: non-overlapping bright balls with seeded centres and radii.
/// checker_noise: 3D checkerboard cells (0.35/0.65) plus seeded noise.
struct PhantomSpec {
    PhantomKind kind = PhantomKind::bent_tube;
    int nx = 0, ny = 0, nz = 0;
    std::uint64_t seed = 0;

    struct BentTube {
        std::optional<double> radius_px;          // default 0.16*min(nx,ny)
        std::optional<double> bend_amplitude_px;  // default 0.08*min(nx,ny)
        std::optional<double> bend_period_slices; // default nz
    } tube;

    struct Spheres {
        int count = 12;
        std::optional<double> radius_min_px; // default 0.04*min(nx,ny)
        std::optional<double> radius_max_px; // default 0.10*min(nx,ny)
    } spheres;

    struct Checker {
        int cell_px = 16;
        double noise_std = 0.1;
    } checker;

    void validate() const; // throws InvalidSpec when structures exit the domain
};

Volume generate_phantom(const PhantomSpec& spec);

} // namespace serireg
