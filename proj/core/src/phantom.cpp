// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#include "serireg/phantom.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "serireg/parallel.hpp"
#include "serireg/rng.hpp"

namespace serireg {

namespace {

constexpr double kTubeIntensity = 0.75;
constexpr double kRodIntensity = 0.85;
constexpr double kSphereIntensity = 0.8;
constexpr double kTextureStd = 0.1;
constexpr double kRodRadiusFactor = 0.6;  // relative to the tube radius
constexpr double kRodDistanceFactor = 0.36; // relative to min(nx, ny)

struct BentTubeGeometry {
    double radius;
    double amplitude;
    double period;
    double rod_radius;
    double rod_distance;
    double cx, cy;
};

BentTubeGeometry resolve_tube(const PhantomSpec& spec) {
    const double m = std::min(spec.nx, spec.ny);
    BentTubeGeometry g;
    g.radius = spec.tube.radius_px.value_or(0.16 * m);
    g.amplitude = spec.tube.bend_amplitude_px.value_or(0.08 * m);
    g.period = spec.tube.bend_period_slices.value_or(static_cast<double>(spec.nz));
    g.rod_radius = kRodRadiusFactor * g.radius;
    g.rod_distance = kRodDistanceFactor * m;
    g.cx = (spec.nx - 1) / 2.0;
    g.cy = (spec.ny - 1) / 2.0;
    return g;
}

// Anti-aliased coverage of a disk of radius r at distance d from its centre.
inline double edge_coverage(double d, double r) {
    return std::clamp(r + 0.5 - d, 0.0, 1.0);
}

void fill_bent_tube(const PhantomSpec& spec, Volume& v) {
    const BentTubeGeometry g = resolve_tube(spec);
    const double rod_off = g.rod_distance / std::numbers::sqrt2;
    // Four straight rods at 45 + k*90 degrees from the centre.
    const double rod_centers[4][2] = {
        {g.cx + rod_off, g.cy + rod_off},
        {g.cx - rod_off, g.cy + rod_off},
        {g.cx - rod_off, g.cy - rod_off},
        {g.cx + rod_off, g.cy - rod_off},
    };

    parallel_for(spec.nz, [&](std::int64_t zi) {
        const int z = static_cast<int>(zi);
        const double tube_cx =
            g.cx + g.amplitude * std::sin(2.0 * std::numbers::pi * z / g.period);
        SubstreamRng rng(spec.seed, static_cast<std::uint64_t>(z), "texture");
        for (int y = 0; y < spec.ny; ++y) {
            for (int x = 0; x < spec.nx; ++x) {
                const double noise = kTextureStd * rng.next_normal();
                double value = 0.0;
                const double d_tube = std::hypot(x - tube_cx, y - g.cy);
                double cov = edge_coverage(d_tube, g.radius);
                if (cov > 0.0)
                    value = cov * kTubeIntensity + (cov >= 1.0 ? noise : 0.0);
                for (const auto& rc : rod_centers) {
                    const double d_rod = std::hypot(x - rc[0], y - rc[1]);
                    cov = edge_coverage(d_rod, g.rod_radius);
                    if (cov > 0.0)
                        value = std::max(value,
                                         cov * kRodIntensity + (cov >= 1.0 ? noise : 0.0));
                }
                v.at(x, y, z) = static_cast<float>(std::clamp(value, 0.0, 1.0));
            }
        }
    });
}

struct Sphere {
    double cx, cy, cz, r;
};

std::vector<Sphere> place_spheres(const PhantomSpec& spec) {
    const double m = std::min(spec.nx, spec.ny);
    const double r_min = spec.spheres.radius_min_px.value_or(0.04 * m);
    const double r_max = spec.spheres.radius_max_px.value_or(0.10 * m);

    SubstreamRng rng(spec.seed, 0, "spheres");
    std::vector<Sphere> spheres;
    for (int i = 0; i < spec.spheres.count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            Sphere s;
            s.r = r_min + (r_max - r_min) * rng.next_unit();
            const double margin = s.r + 2.0;
            s.cx = margin + (spec.nx - 1 - 2 * margin) * rng.next_unit();
            s.cy = margin + (spec.ny - 1 - 2 * margin) * rng.next_unit();
            s.cz = margin + (spec.nz - 1 - 2 * margin) * rng.next_unit();
            placed = true;
            for (const Sphere& other : spheres) {
                const double d = std::sqrt((s.cx - other.cx) * (s.cx - other.cx) +
                                           (s.cy - other.cy) * (s.cy - other.cy) +
                                           (s.cz - other.cz) * (s.cz - other.cz));
                if (d < s.r + other.r + 2.0) {
                    placed = false;
                    break;
                }
            }
            if (placed) spheres.push_back(s);
        }
        if (!placed)
            throw InvalidSpec("spheres phantom: cannot place " +
                              std::to_string(spec.spheres.count) +
                              " non-overlapping spheres in the given dims");
    }
    return spheres;
}

void fill_spheres(const PhantomSpec& spec, Volume& v) {
    const std::vector<Sphere> spheres = place_spheres(spec);
    parallel_for(spec.nz, [&](std::int64_t zi) {
        const int z = static_cast<int>(zi);
        SubstreamRng rng(spec.seed, static_cast<std::uint64_t>(z), "texture");
        for (int y = 0; y < spec.ny; ++y) {
            for (int x = 0; x < spec.nx; ++x) {
                const double noise = kTextureStd * rng.next_normal();
                double value = 0.0;
                for (const Sphere& s : spheres) {
                    const double d = std::sqrt((x - s.cx) * (x - s.cx) +
                                               (y - s.cy) * (y - s.cy) +
                                               (z - s.cz) * (z - s.cz));
                    const double cov = edge_coverage(d, s.r);
                    if (cov > 0.0)
                        value = std::max(value, cov * kSphereIntensity +
                                                    (cov >= 1.0 ? noise : 0.0));
                }
                v.at(x, y, z) = static_cast<float>(std::clamp(value, 0.0, 1.0));
            }
        }
    });
}

void fill_checker(const PhantomSpec& spec, Volume& v) {
    const int cell = spec.checker.cell_px;
    parallel_for(spec.nz, [&](std::int64_t zi) {
        const int z = static_cast<int>(zi);
        SubstreamRng rng(spec.seed, static_cast<std::uint64_t>(z), "texture");
        for (int y = 0; y < spec.ny; ++y) {
            for (int x = 0; x < spec.nx; ++x) {
                const int parity = (x / cell + y / cell + z / cell) & 1;
                const double base = parity ? 0.65 : 0.35;
                const double value = base + spec.checker.noise_std * rng.next_normal();
                v.at(x, y, z) = static_cast<float>(std::clamp(value, 0.0, 1.0));
            }
        }
    });
}

} // namespace

PhantomKind phantom_kind_from_string(const std::string& name) {
    if (name == "bent_tube") return PhantomKind::bent_tube;
    if (name == "spheres") return PhantomKind::spheres;
    if (name == "checker_noise" || name == "checker") return PhantomKind::checker_noise;
    throw InvalidSpec("unknown phantom kind: " + name);
}

std::string to_string(PhantomKind kind) {
    switch (kind) {
        case PhantomKind::bent_tube: return "bent_tube";
        case PhantomKind::spheres: return "spheres";
        case PhantomKind::checker_noise: return "checker_noise";
    }
    return "?";
}

void PhantomSpec::validate() const {
    if (nx <= 0 || ny <= 0 || nz <= 0)
        throw InvalidSpec("phantom: dims must be positive");

    switch (kind) {
        case PhantomKind::bent_tube: {
            if (std::min({nx, ny, nz}) < 32)
                throw InvalidSpec("bent_tube: dims must be >= 32 per axis");
            const BentTubeGeometry g = resolve_tube(*this);
            if (g.radius < 3.0) throw InvalidSpec("bent_tube: radius too small");
            if (g.period <= 0.0) throw InvalidSpec("bent_tube: period must be positive");
            if (g.amplitude < 0.0) throw InvalidSpec("bent_tube: amplitude must be >= 0");
            const double half = std::min(g.cx, g.cy);
            if (g.amplitude + g.radius + 2.0 > half)
                throw InvalidSpec("bent_tube: tube exits the domain");
            const double rod_off = g.rod_distance / std::numbers::sqrt2;
            if (rod_off + g.rod_radius + 2.0 > half)
                throw InvalidSpec("bent_tube: anchor rods exit the domain");
            const double gap = std::sqrt((rod_off - g.amplitude) * (rod_off - g.amplitude) +
                                         rod_off * rod_off);
            if (gap < g.rod_radius + g.radius + 2.0)
                throw InvalidSpec("bent_tube: bend amplitude collides with anchor rods");
            break;
        }
        case PhantomKind::spheres: {
            const double m = std::min(nx, ny);
            const double r_min = spheres.radius_min_px.value_or(0.04 * m);
            const double r_max = spheres.radius_max_px.value_or(0.10 * m);
            if (spheres.count < 1) throw InvalidSpec("spheres: count must be >= 1");
            if (!(r_min > 0.0) || r_max < r_min)
                throw InvalidSpec("spheres: need 0 < radius_min <= radius_max");
            if (2.0 * (r_max + 2.0) >= std::min({nx, ny, nz}))
                throw InvalidSpec("spheres: radius_max does not fit in the domain");
            break;
        }
        case PhantomKind::checker_noise: {
            if (checker.cell_px < 2) throw InvalidSpec("checker_noise: cell_px must be >= 2");
            if (checker.noise_std < 0.0)
                throw InvalidSpec("checker_noise: noise_std must be >= 0");
            break;
        }
    }
}

Volume generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    Volume v(spec.nx, spec.ny, spec.nz);
    switch (spec.kind) {
        case PhantomKind::bent_tube: fill_bent_tube(spec, v); break;
        case PhantomKind::spheres: fill_spheres(spec, v); break;
        case PhantomKind::checker_noise: fill_checker(spec, v); break;
    }
    v.provenance["source"] = "phantom:" + to_string(spec.kind);
    v.provenance["phantom_seed"] = std::to_string(spec.seed);
    return v;
}

} // namespace serireg
