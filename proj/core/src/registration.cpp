// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#include "serireg/registration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "serireg/field_io.hpp"
#include "serireg/format.hpp"
#include "serireg/parallel.hpp"

namespace serireg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kInvalidScore = -2.0; // below any reachable NCC
constexpr int kMinOverlap = 32;
constexpr double kConvergedNcc = 0.5; // diagnostics flag threshold

double image_variance(const Slice& s) {
    double sum = 0.0, sum2 = 0.0;
    for (const float v : s.pixels) {
        sum += v;
        sum2 += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(s.size());
    return sum2 / n - (sum / n) * (sum / n);
}

void require_not_flat(const Slice& fixed, const Slice& moving, const char* op) {
    if (image_variance(fixed) < 1e-12)
        throw FlatImage(std::string(op) + ": fixed image has zero variance");
    if (image_variance(moving) < 1e-12)
        throw FlatImage(std::string(op) + ": moving image has zero variance");
}

// 2x2 box average; trailing odd row/column is dropped.
Slice downsample2(const Slice& s) {
    Slice out(s.nx / 2, s.ny / 2, 0.f, s.z);
    for (int y = 0; y < out.ny; ++y)
        for (int x = 0; x < out.nx; ++x)
            out.at(x, y) = 0.25f * (s.at(2 * x, 2 * y) + s.at(2 * x + 1, 2 * y) +
                                    s.at(2 * x, 2 * y + 1) + s.at(2 * x + 1, 2 * y + 1));
    return out;
}

// pyramid[0] is full resolution.
std::vector<Slice> build_pyramid(const Slice& s, int levels) {
    std::vector<Slice> pyr{s};
    while (static_cast<int>(pyr.size()) < levels &&
           std::min(pyr.back().nx, pyr.back().ny) / 2 >= 16)
        pyr.push_back(downsample2(pyr.back()));
    return pyr;
}

// NCC of fixed(x) against moving(x + shift) over the overlap region.
double ncc_at_shift(const Slice& fixed, const Slice& moving, int sx, int sy) {
    const int x_lo = std::max(0, -sx);
    const int x_hi = std::min(fixed.nx, moving.nx - sx);
    const int y_lo = std::max(0, -sy);
    const int y_hi = std::min(fixed.ny, moving.ny - sy);
    const long long area = static_cast<long long>(std::max(0, x_hi - x_lo)) *
                           std::max(0, y_hi - y_lo);
    if (area < kMinOverlap) return kInvalidScore;

    double sf = 0.0, sm = 0.0, sff = 0.0, smm = 0.0, sfm = 0.0;
    for (int y = y_lo; y < y_hi; ++y) {
        for (int x = x_lo; x < x_hi; ++x) {
            const double f = fixed.at(x, y);
            const double m = moving.at(x + sx, y + sy);
            sf += f;
            sm += m;
            sff += f * f;
            smm += m * m;
            sfm += f * m;
        }
    }
    const double n = static_cast<double>(area);
    const double var_f = sff - sf * sf / n;
    const double var_m = smm - sm * sm / n;
    if (var_f < 1e-12 || var_m < 1e-12) return kInvalidScore;
    return (sfm - sf * sm / n) / std::sqrt(var_f * var_m);
}

struct ShiftSearch {
    int bx = 0, by = 0;
    double best = kInvalidScore;
    // 3x3 scores around the peak, for the sub-pixel fit.
    double around[3][3] = {};
};

ShiftSearch search_shifts(const Slice& fixed, const Slice& moving, int cx, int cy,
                          int radius) {
    ShiftSearch out;
    out.bx = cx;
    out.by = cy;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            const double s = ncc_at_shift(fixed, moving, cx + dx, cy + dy);
            if (s > out.best) {
                out.best = s;
                out.bx = cx + dx;
                out.by = cy + dy;
            }
        }
    }
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i)
            out.around[j][i] = ncc_at_shift(fixed, moving, out.bx + i - 1, out.by + j - 1);
    return out;
}

// Parabola through (-1, a), (0, b), (1, c); offset of the maximum in [-.5, .5].
double quadratic_peak_offset(double a, double b, double c) {
    const double denom = a - 2.0 * b + c;
    if (!(denom < 0.0)) return 0.0; // not a proper maximum
    return std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
}

TranslationResult translate_impl(const std::vector<Slice>& fixed_pyr,
                                 const std::vector<Slice>& moving_pyr) {
    const int levels = static_cast<int>(fixed_pyr.size());
    int bx = 0, by = 0;
    ShiftSearch found;
    int evals = 0;
    for (int level = levels - 1; level >= 0; --level) {
        const Slice& f = fixed_pyr[level];
        const Slice& m = moving_pyr[level];
        int radius;
        if (level == levels - 1) {
            radius = std::max(2, std::min(f.nx, f.ny) / 4);
            bx = 0;
            by = 0;
        } else {
            radius = 2;
            bx *= 2;
            by *= 2;
        }
        found = search_shifts(f, m, bx, by, radius);
        bx = found.bx;
        by = found.by;
        evals += (2 * radius + 1) * (2 * radius + 1);
    }

    TranslationResult result;
    result.tx = bx + quadratic_peak_offset(found.around[1][0], found.around[1][1],
                                           found.around[1][2]);
    result.ty = by + quadratic_peak_offset(found.around[0][1], found.around[1][1],
                                           found.around[2][1]);
    result.ncc = found.best;
    result.iterations = evals;
    return result;
}

Slice rotate_about_center(const Slice& s, double theta_rad) {
    const RigidTransform2D rot{theta_rad, 0.0, 0.0, (s.nx - 1) / 2.0, (s.ny - 1) / 2.0};
    return warp_slice(s, rigid_to_field(rot, s.nx, s.ny), {InterpKind::bilinear, 0.f});
}

} // namespace

void MethodOptions::validate() const {
    if (pyramid_levels < 1) throw InvalidSpec("options: pyramid_levels must be >= 1");
    if (elastic.lambda < 0.0) throw InvalidSpec("options: elastic.lambda must be >= 0");
    if (elastic.grid_px < 4.0) throw InvalidSpec("options: elastic.grid_px must be >= 4");
    if (elastic.step <= 0.0) throw InvalidSpec("options: elastic.step must be positive");
    if (elastic.max_iter < 1) throw InvalidSpec("options: elastic.max_iter must be >= 1");
    if (theta_samples < 3) throw InvalidSpec("options: theta_samples must be >= 3");
    if (theta_max_deg <= 0.0) throw InvalidSpec("options: theta_max_deg must be positive");
}

MethodKind method_kind_from_string(const std::string& name) {
    if (name == "identity") return MethodKind::identity;
    if (name == "translation") return MethodKind::translation;
    if (name == "rigid") return MethodKind::rigid;
    if (name == "elastic") return MethodKind::elastic;
    throw InvalidSpec("unknown registration method: " + name);
}

std::string to_string(MethodKind kind) {
    switch (kind) {
        case MethodKind::identity: return "identity";
        case MethodKind::translation: return "translation";
        case MethodKind::rigid: return "rigid";
        case MethodKind::elastic: return "elastic";
    }
    return "?";
}

StackStrategy StackStrategy::from_string(const std::string& name, int reference) {
    StackStrategy s;
    s.reference = reference;
    if (name == "chain" || name == "chain_to_previous") {
        s.kind = Kind::chain_to_previous;
    } else if (name == "fixed" || name == "fixed_reference") {
        s.kind = Kind::fixed_reference;
    } else {
        throw InvalidSpec("unknown stack strategy: " + name);
    }
    return s;
}

std::string StackStrategy::name() const {
    return kind == Kind::chain_to_previous ? "chain_to_previous" : "fixed_reference";
}

TranslationResult register_translation(const Slice& fixed, const Slice& moving,
                                       const MethodOptions& opts) {
    opts.validate();
    if (fixed.nx != moving.nx || fixed.ny != moving.ny)
        throw DimensionMismatch("register_translation: image dims differ");
    if (std::min(fixed.nx, fixed.ny) < 16)
        throw InvalidSpec("register_translation: min dim must be >= 16");
    require_not_flat(fixed, moving, "register_translation");
    return translate_impl(build_pyramid(fixed, opts.pyramid_levels),
                          build_pyramid(moving, opts.pyramid_levels));
}

RigidResult register_rigid(const Slice& fixed, const Slice& moving,
                           const MethodOptions& opts) {
    opts.validate();
    if (fixed.nx != moving.nx || fixed.ny != moving.ny)
        throw DimensionMismatch("register_rigid: image dims differ");
    if (std::min(fixed.nx, fixed.ny) < 16)
        throw InvalidSpec("register_rigid: min dim must be >= 16");
    require_not_flat(fixed, moving, "register_rigid");

    const std::vector<Slice> fixed_pyr = build_pyramid(fixed, opts.pyramid_levels);
    const std::vector<Slice> moving_pyr = build_pyramid(moving, opts.pyramid_levels);
    const int levels = static_cast<int>(fixed_pyr.size());
    const double theta_max = opts.theta_max_deg * std::numbers::pi / 180.0;
    const double step0 = 2.0 * theta_max / (opts.theta_samples - 1);

    double best_theta = 0.0;
    int best_sx = 0, best_sy = 0;
    double best_score = kInvalidScore;
    int evals = 0;

    for (int coarse = 0; coarse < levels; ++coarse) {
        const int level = levels - 1 - coarse;
        const Slice& f = fixed_pyr[level];
        const Slice& m = moving_pyr[level];
        const double range = theta_max / (1 << coarse);
        const double step = step0 / (1 << coarse);
        const double center_theta = coarse == 0 ? 0.0 : best_theta;
        const int half = coarse == 0 ? (opts.theta_samples - 1) / 2
                                     : static_cast<int>(std::ceil(range / step));

        std::vector<double> thetas;
        for (int k = -half; k <= half; ++k) thetas.push_back(center_theta + k * step);

        int prev_sx = best_sx * 2, prev_sy = best_sy * 2;
        const int radius = coarse == 0 ? std::max(2, std::min(f.nx, f.ny) / 4) : 3;
        if (coarse == 0) prev_sx = prev_sy = 0;

        struct Candidate {
            double score = kInvalidScore;
            int sx = 0, sy = 0;
        };
        std::vector<Candidate> results(thetas.size());
        parallel_for(static_cast<std::int64_t>(thetas.size()), [&](std::int64_t k) {
            const Slice rotated = rotate_about_center(m, thetas[k]);
            const ShiftSearch s = search_shifts(f, rotated, prev_sx, prev_sy, radius);
            results[k] = {s.best, s.bx, s.by};
        });
        evals += static_cast<int>(thetas.size());

        best_score = kInvalidScore;
        for (std::size_t k = 0; k < thetas.size(); ++k) {
            if (results[k].score > best_score) {
                best_score = results[k].score;
                best_theta = thetas[k];
                best_sx = results[k].sx;
                best_sy = results[k].sy;
            }
        }
    }

    // Sub-degree refinement: golden-section on theta at full resolution.
    const Slice& f0 = fixed_pyr[0];
    const Slice& m0 = moving_pyr[0];
    const auto eval_theta = [&](double theta) {
        const Slice rotated = rotate_about_center(m0, theta);
        return search_shifts(f0, rotated, best_sx, best_sy, 1).best;
    };
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = best_theta - step0 / (1 << (levels - 1));
    double hi = best_theta + step0 / (1 << (levels - 1));
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = eval_theta(x1), f2 = eval_theta(x2);
    for (int i = 0; i < 20; ++i) {
        if (f1 < f2) {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = eval_theta(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = eval_theta(x1);
        }
        ++evals;
    }
    best_theta = 0.5 * (lo + hi);

    // Final translation at the refined angle.
    const Slice rotated = rotate_about_center(m0, best_theta);
    const ShiftSearch s = search_shifts(f0, rotated, best_sx, best_sy, 2);
    const double tx = s.bx + quadratic_peak_offset(s.around[1][0], s.around[1][1],
                                                   s.around[1][2]);
    const double ty = s.by + quadratic_peak_offset(s.around[0][1], s.around[1][1],
                                                   s.around[2][1]);

    // Rotate-then-shift equals the single rigid motion with t = -shift.
    RigidResult out;
    out.transform = {best_theta, -tx, -ty, (fixed.nx - 1) / 2.0, (fixed.ny - 1) / 2.0};
    out.ncc = s.best;
    out.iterations = evals;
    return out;
}

// ---------------------------------------------------------------------------
// elastic (free-form deformation on a Catmull-Rom control lattice)

namespace {

double cubic_weight(double t) {
    t = std::fabs(t);
    if (t < 1.0) return ((1.5 * t - 2.5) * t) * t + 1.0;
    if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

// Control lattice for one pyramid level: interior nodes 0..n-1 at spacing g
// plus one margin node per side (indices -1 and n), exactly as the distortion
// sampler lays them out.
struct Lattice {
    int nx = 0, ny = 0; // image dims at this level
    double g = 0.0;
    int nodes_x = 0, nodes_y = 0; // interior node counts
    int total_x = 0, total_y = 0;
    std::vector<Vec2d> p; // node displacements, px

    // Per-pixel tensor weights, precomputed once per level.
    std::vector<int> base_i, base_j;
    std::vector<std::array<double, 4>> wx, wy;

    Lattice(int nx_, int ny_, double g_) : nx(nx_), ny(ny_), g(g_) {
        nodes_x = static_cast<int>(std::ceil((nx - 1) / g)) + 1;
        nodes_y = static_cast<int>(std::ceil((ny - 1) / g)) + 1;
        total_x = nodes_x + 2;
        total_y = nodes_y + 2;
        p.assign(static_cast<std::size_t>(total_x) * total_y, Vec2d{});

        base_i.resize(nx);
        wx.resize(nx);
        for (int x = 0; x < nx; ++x) {
            const double s = x / g;
            base_i[x] = static_cast<int>(std::floor(s));
            for (int i = 0; i < 4; ++i) wx[x][i] = cubic_weight(s - (base_i[x] + i - 1));
        }
        base_j.resize(ny);
        wy.resize(ny);
        for (int y = 0; y < ny; ++y) {
            const double s = y / g;
            base_j[y] = static_cast<int>(std::floor(s));
            for (int j = 0; j < 4; ++j) wy[y][j] = cubic_weight(s - (base_j[y] + j - 1));
        }
    }

    std::size_t index(int i, int j) const {
        i = std::clamp(i, -1, nodes_x);
        j = std::clamp(j, -1, nodes_y);
        return static_cast<std::size_t>(j + 1) * total_x + (i + 1);
    }

    Vec2d node(int i, int j) const { return p[index(i, j)]; }

    /// Dense field value at an arbitrary point (may lie outside the image).
    Vec2d eval(double px, double py) const {
        const double sx = px / g, sy = py / g;
        const int i0 = static_cast<int>(std::floor(sx));
        const int j0 = static_cast<int>(std::floor(sy));
        Vec2d acc{};
        for (int j = 0; j < 4; ++j) {
            const double wyj = cubic_weight(sy - (j0 + j - 1));
            if (wyj == 0.0) continue;
            Vec2d row{};
            for (int i = 0; i < 4; ++i) {
                const double wxi = cubic_weight(sx - (i0 + i - 1));
                if (wxi == 0.0) continue;
                row = row + node(i0 + i - 1, j0 + j - 1) * wxi;
            }
            acc = acc + row * wyj;
        }
        return acc;
    }

    DisplacementField to_field() const {
        DisplacementField field(nx, ny);
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                Vec2d acc{};
                for (int j = 0; j < 4; ++j) {
                    Vec2d row{};
                    for (int i = 0; i < 4; ++i)
                        row = row + node(base_i[x] + i - 1, base_j[y] + j - 1) * wx[x][i];
                    acc = acc + row * wy[y][j];
                }
                field.at(x, y) = {static_cast<float>(acc.x), static_cast<float>(acc.y)};
            }
        }
        return field;
    }
};

// Bilinear value and gradient with zero padding, matching warp_slice.
struct SampleGrad {
    double value, dx, dy;
};

SampleGrad sample_with_gradient(const Slice& s, double px, double py) {
    const double fx = std::floor(px), fy = std::floor(py);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const double ax = px - fx, ay = py - fy;
    const auto tap = [&](int x, int y) -> double {
        if (x < 0 || y < 0 || x >= s.nx || y >= s.ny) return 0.0;
        return s.at(x, y);
    };
    const double v00 = tap(x0, y0), v10 = tap(x0 + 1, y0);
    const double v01 = tap(x0, y0 + 1), v11 = tap(x0 + 1, y0 + 1);
    SampleGrad out;
    out.value = (v00 * (1 - ax) + v10 * ax) * (1 - ay) + (v01 * (1 - ax) + v11 * ax) * ay;
    out.dx = (v10 - v00) * (1 - ay) + (v11 - v01) * ay;
    out.dy = (v01 - v00) * (1 - ax) + (v11 - v10) * ax;
    return out;
}

struct EnergyTerms {
    double total = 0.0;
    double similarity = 0.0; // ssd mean or 1 - ncc
    double ncc = 0.0;
};

class ElasticProblem {
public:
    ElasticProblem(const Slice& fixed, const Slice& moving, double lambda, Similarity sim)
        : fixed_(fixed), moving_(moving), lambda_(lambda), sim_(sim) {}

    EnergyTerms energy(const Lattice& lat) const {
        return compute(lat, nullptr);
    }

    EnergyTerms energy_and_gradient(const Lattice& lat, std::vector<Vec2d>& grad) const {
        grad.assign(lat.p.size(), Vec2d{});
        return compute(lat, &grad);
    }

private:
    EnergyTerms compute(const Lattice& lat, std::vector<Vec2d>* grad) const {
        const int nx = lat.nx, ny = lat.ny;
        const double n = static_cast<double>(nx) * ny;

        // Warped image, per-pixel moving gradients, and similarity sums.
        std::vector<double> warped(static_cast<std::size_t>(nx) * ny);
        std::vector<double> gx, gy;
        if (grad) {
            gx.resize(warped.size());
            gy.resize(warped.size());
        }
        double sf = 0.0, sw = 0.0, sff = 0.0, sww = 0.0, sfw = 0.0;
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                Vec2d d{};
                for (int j = 0; j < 4; ++j) {
                    Vec2d row{};
                    for (int i = 0; i < 4; ++i)
                        row = row + lat.node(lat.base_i[x] + i - 1, lat.base_j[y] + j - 1) *
                                        lat.wx[x][i];
                    d = d + row * lat.wy[y][j];
                }
                const SampleGrad sg = sample_with_gradient(moving_, x + d.x, y + d.y);
                const std::size_t idx = static_cast<std::size_t>(y) * nx + x;
                warped[idx] = sg.value;
                if (grad) {
                    gx[idx] = sg.dx;
                    gy[idx] = sg.dy;
                }
                const double f = fixed_.at(x, y);
                sf += f;
                sw += sg.value;
                sff += f * f;
                sww += sg.value * sg.value;
                sfw += f * sg.value;
            }
        }

        const double mu_f = sf / n, mu_w = sw / n;
        const double var_f = sff - sf * sf / n; // centered sums, not divided by n
        const double var_w = sww - sw * sw / n;
        const double cov = sfw - sf * sw / n;

        EnergyTerms terms;
        double ncc = 0.0, denom = 0.0;
        if (var_f > 1e-12 && var_w > 1e-12) {
            denom = std::sqrt(var_f * var_w);
            ncc = cov / denom;
        } else if (sim_ == Similarity::ncc) {
            throw FlatImage("register_elastic: zero variance under NCC");
        }
        terms.ncc = ncc;
        if (sim_ == Similarity::ssd) {
            double ssd = 0.0;
            for (std::size_t i = 0; i < warped.size(); ++i) {
                const double diff = warped[i] - fixed_.pixels[i];
                ssd += diff * diff;
            }
            terms.similarity = ssd / n;
        } else {
            terms.similarity = 1.0 - ncc;
        }

        // dE/dwarped, scattered through the lattice weights.
        if (grad) {
            for (int y = 0; y < ny; ++y) {
                for (int x = 0; x < nx; ++x) {
                    const std::size_t idx = static_cast<std::size_t>(y) * nx + x;
                    double de_dw;
                    if (sim_ == Similarity::ssd) {
                        de_dw = 2.0 * (warped[idx] - fixed_.pixels[idx]) / n;
                    } else {
                        const double f = fixed_.pixels[idx];
                        de_dw = -((f - mu_f) - (cov / var_w) * (warped[idx] - mu_w)) / denom;
                    }
                    const double px_term = de_dw * gx[idx];
                    const double py_term = de_dw * gy[idx];
                    for (int j = 0; j < 4; ++j) {
                        const double wyj = lat.wy[y][j];
                        for (int i = 0; i < 4; ++i) {
                            const double w = lat.wx[x][i] * wyj;
                            auto& g = (*grad)[lat.index(lat.base_i[x] + i - 1,
                                                        lat.base_j[y] + j - 1)];
                            g.x += px_term * w;
                            g.y += py_term * w;
                        }
                    }
                }
            }
        }

        // Smoothness: mean squared discrete Laplacian over nodes whose four
        // neighbours exist. Normalizing by node count keeps lambda comparable
        // across lattice sizes and pyramid levels.
        double reg = 0.0;
        if (lambda_ > 0.0) {
            const long long lap_nodes = static_cast<long long>(lat.total_x - 2) *
                                        (lat.total_y - 2);
            const double inv_n = lap_nodes > 0 ? 1.0 / static_cast<double>(lap_nodes) : 0.0;
            const auto node_by_flat = [&](int i, int j) -> const Vec2d& {
                return lat.p[static_cast<std::size_t>(j) * lat.total_x + i];
            };
            for (int j = 1; j < lat.total_y - 1; ++j) {
                for (int i = 1; i < lat.total_x - 1; ++i) {
                    const Vec2d lap =
                        node_by_flat(i + 1, j) + node_by_flat(i - 1, j) +
                        node_by_flat(i, j + 1) + node_by_flat(i, j - 1) +
                        node_by_flat(i, j) * -4.0;
                    reg += (lap.x * lap.x + lap.y * lap.y) * inv_n;
                    if (grad) {
                        const Vec2d g2 = lap * (2.0 * lambda_ * inv_n);
                        auto add = [&](int ii, int jj, double c) {
                            auto& g = (*grad)[static_cast<std::size_t>(jj) * lat.total_x + ii];
                            g.x += c * g2.x;
                            g.y += c * g2.y;
                        };
                        add(i + 1, j, 1.0);
                        add(i - 1, j, 1.0);
                        add(i, j + 1, 1.0);
                        add(i, j - 1, 1.0);
                        add(i, j, -4.0);
                    }
                }
            }
        }

        terms.total = terms.similarity + lambda_ * reg;
        if (!std::isfinite(terms.total))
            throw NonFinite("register_elastic: non-finite energy (check step and lambda)");
        return terms;
    }

    const Slice& fixed_;
    const Slice& moving_;
    double lambda_;
    Similarity sim_;
};

} // namespace

ElasticResult register_elastic(const Slice& fixed, const Slice& moving,
                               const MethodOptions& opts) {
    opts.validate();
    if (fixed.nx != moving.nx || fixed.ny != moving.ny)
        throw DimensionMismatch("register_elastic: image dims differ");
    require_not_flat(fixed, moving, "register_elastic");

    const RigidResult rigid = register_rigid(fixed, moving, opts);

    const std::vector<Slice> fixed_pyr = build_pyramid(fixed, opts.pyramid_levels);
    const std::vector<Slice> moving_pyr = build_pyramid(moving, opts.pyramid_levels);
    const int levels = static_cast<int>(fixed_pyr.size());

    ElasticResult result;
    std::unique_ptr<Lattice> prev;
    double prev_factor = 1.0;

    for (int level = levels - 1; level >= 0; --level) {
        const double factor = static_cast<double>(1 << level);
        const Slice& f = fixed_pyr[level];
        const Slice& m = moving_pyr[level];
        Lattice lat(f.nx, f.ny, std::max(4.0, opts.elastic.grid_px / factor));

        // Initialize nodes from the rigid estimate (coarsest level) or the
        // previous level's lattice, both evaluated analytically at node
        // positions. Level l pixel p corresponds to full-res pixel
        // factor*p + (factor-1)/2.
        const RigidTransform2D rigid_inv = rigid.transform.inverse();
        for (int j = -1; j <= lat.nodes_y; ++j) {
            for (int i = -1; i <= lat.nodes_x; ++i) {
                const double px = i * lat.g;
                const double py = j * lat.g;
                Vec2d value;
                if (!prev) {
                    const double full_x = factor * px + (factor - 1.0) / 2.0;
                    const double full_y = factor * py + (factor - 1.0) / 2.0;
                    // u(p) = T^-1(p) - p, scaled into level units.
                    const Vec2d mapped = rigid_inv.apply({full_x, full_y});
                    value = {(mapped.x - full_x) / factor, (mapped.y - full_y) / factor};
                } else {
                    // Level l pixel p sits at full-res factor*p + (factor-1)/2,
                    // which is p/2 - 1/4 in the coarser level's coordinates.
                    const double to_prev = factor / prev_factor; // = 1/2
                    const Vec2d coarse = prev->eval(px * to_prev - 0.25, py * to_prev - 0.25);
                    value = coarse * (prev_factor / factor);
                }
                lat.p[lat.index(i, j)] = value;
            }
        }

        ElasticProblem problem(f, m, opts.elastic.lambda, opts.similarity);
        std::vector<Vec2d> grad;
        EnergyTerms current = problem.energy_and_gradient(lat, grad);
        double step = opts.elastic.step;
        int halvings = 0;
        bool converged = false;
        result.energy_history.emplace_back();

        for (int iter = 0; iter < opts.elastic.max_iter; ++iter) {
            double grad_inf = 0.0;
            for (const Vec2d& g : grad)
                grad_inf = std::max({grad_inf, std::fabs(g.x), std::fabs(g.y)});
            if (!std::isfinite(grad_inf))
                throw NonFinite("register_elastic: non-finite gradient");
            if (grad_inf < opts.elastic.grad_tol) {
                converged = true;
                break;
            }

            // Normalize so the largest node moves exactly `step` px.
            const double scale = step / grad_inf;
            std::vector<Vec2d> trial = lat.p;
            for (std::size_t k = 0; k < trial.size(); ++k)
                trial[k] = trial[k] - grad[k] * scale;

            Lattice trial_lat = lat;
            trial_lat.p = std::move(trial);
            const EnergyTerms trial_terms = problem.energy(trial_lat);
            ++result.iterations;

            if (trial_terms.total < current.total) {
                lat.p = std::move(trial_lat.p);
                current = problem.energy_and_gradient(lat, grad);
                result.energy_history.back().push_back(current.total);
                halvings = 0;
            } else {
                step *= 0.5;
                if (++halvings >= 10) {
                    converged = true;
                    break;
                }
            }
        }

        result.converged = converged;
        result.final_energy = current.total;
        result.final_ncc = current.ncc;
        if (level == 0) {
            result.field = lat.to_field();
            // Roughness of the final lattice, the quantity lambda penalizes.
            double rough = 0.0;
            for (int j = 1; j < lat.total_y - 1; ++j) {
                for (int i = 1; i < lat.total_x - 1; ++i) {
                    const auto at = [&](int ii, int jj) {
                        return lat.p[static_cast<std::size_t>(jj) * lat.total_x + ii];
                    };
                    const Vec2d lap = at(i + 1, j) + at(i - 1, j) + at(i, j + 1) +
                                      at(i, j - 1) + at(i, j) * -4.0;
                    rough += lap.x * lap.x + lap.y * lap.y;
                }
            }
            result.final_node_roughness = rough;
        }
        prev = std::make_unique<Lattice>(std::move(lat));
        prev_factor = factor;
    }
    return result;
}

// ---------------------------------------------------------------------------
// stack strategies

namespace {

DisplacementField constant_field(int nx, int ny, double tx, double ty) {
    return DisplacementField(nx, ny, Vec2{static_cast<float>(tx), static_cast<float>(ty)});
}

struct SliceRegistration {
    DisplacementField field;
    SliceDiagnostics diag;
};

SliceRegistration register_pair(const Slice& fixed, const Slice& moving, int z,
                                const RegistrationMethod& method) {
    SliceRegistration out;
    out.diag.z = z;
    switch (method.kind) {
        case MethodKind::identity:
            out.field = DisplacementField(moving.nx, moving.ny);
            out.diag = {z, 0.0, 0, true};
            break;
        case MethodKind::translation: {
            const TranslationResult t = register_translation(fixed, moving, method.options);
            out.field = constant_field(moving.nx, moving.ny, t.tx, t.ty);
            out.diag = {z, t.ncc, t.iterations, t.ncc >= kConvergedNcc};
            break;
        }
        case MethodKind::rigid: {
            const RigidResult r = register_rigid(fixed, moving, method.options);
            out.field = rigid_to_field(r.transform, moving.nx, moving.ny);
            out.diag = {z, r.ncc, r.iterations, r.ncc >= kConvergedNcc};
            break;
        }
        case MethodKind::elastic: {
            const ElasticResult e = register_elastic(fixed, moving, method.options);
            out.field = e.field;
            out.diag = {z, e.final_ncc, e.iterations, e.converged};
            break;
        }
    }
    return out;
}

template <typename Fn>
auto with_slice_context(int z, Fn&& fn) {
    try {
        return fn();
    } catch (const FlatImage& e) {
        throw FlatImage("slice " + std::to_string(z) + ": " + e.what());
    } catch (const NonFinite& e) {
        throw NonFinite("slice " + std::to_string(z) + ": " + e.what());
    } catch (const DimensionMismatch& e) {
        throw DimensionMismatch("slice " + std::to_string(z) + ": " + e.what());
    }
}

} // namespace

RegistrationResult register_stack(const Volume& v, const RegistrationMethod& method,
                                  const StackStrategy& strategy) {
    if (v.nz < 2) throw InvalidSpec("register_stack: need at least 2 slices");

    RegistrationResult result;
    result.fields.fields.resize(v.nz);
    result.diagnostics.resize(v.nz);

    if (method.kind == MethodKind::identity) {
        for (int z = 0; z < v.nz; ++z) {
            result.fields[z] = DisplacementField(v.nx, v.ny);
            result.diagnostics[z] = {z, 0.0, 0, true};
        }
        return result;
    }

    if (strategy.kind == StackStrategy::Kind::chain_to_previous) {
        result.fields[0] = DisplacementField(v.nx, v.ny);
        result.diagnostics[0] = {0, 0.0, 0, true};
        Slice corrected_prev = v.slice(0);
        for (int z = 1; z < v.nz; ++z) {
            const Slice moving = v.slice(z);
            SliceRegistration sr = with_slice_context(
                z, [&] { return register_pair(corrected_prev, moving, z, method); });
            corrected_prev = warp_slice(moving, sr.field, {InterpKind::bilinear, 0.f});
            result.fields[z] = std::move(sr.field);
            result.diagnostics[z] = sr.diag;
        }
    } else {
        int ref = strategy.reference < 0 ? v.nz / 2 : strategy.reference;
        if (ref >= v.nz) throw InvalidSpec("register_stack: reference index out of range");
        const Slice fixed = v.slice(ref);
        parallel_for(v.nz, [&](std::int64_t zi) {
            const int z = static_cast<int>(zi);
            if (z == ref) {
                result.fields[z] = DisplacementField(v.nx, v.ny);
                result.diagnostics[z] = {z, 0.0, 0, true};
                return;
            }
            SliceRegistration sr = with_slice_context(
                z, [&] { return register_pair(fixed, v.slice(z), z, method); });
            result.fields[z] = std::move(sr.field);
            result.diagnostics[z] = sr.diag;
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// external results

ImportKind detect_import_kind(const fs::path& dir) {
    if (fs::exists(dir / "fields.json")) return ImportKind::fields;
    if (fs::exists(dir / "transforms.json")) return ImportKind::rigid_params;
    throw IoFailure("import_external: neither fields.json nor transforms.json in " +
                    dir.string());
}

RegistrationResult import_external(const fs::path& dir, ImportKind kind, int nx, int ny) {
    RegistrationResult result;
    if (kind == ImportKind::fields) {
        // Convention check comes first so a forward-mapping export fails with
        // the specific error rather than a generic header one.
        std::ifstream sidecar(dir / "fields.json");
        if (!sidecar) throw IoFailure("import_external: missing fields.json in " + dir.string());
        json j;
        try {
            sidecar >> j;
        } catch (const json::exception& e) {
            throw HeaderMismatch("fields.json: " + std::string(e.what()));
        }
        const std::string convention = j.value("convention", "");
        if (convention != "backward")
            throw ConventionMismatch("import_external: sidecar declares convention \"" +
                                     convention + "\", need \"backward\"");
        const std::string origin = j.value("origin", "pixel_center");
        if (origin != "pixel_center")
            throw ConventionMismatch("import_external: sidecar declares origin \"" + origin +
                                     "\", need \"pixel_center\"");
        result.fields = load_field_stack(dir);
        const auto [fnx, fny] = result.fields.dims();
        if (fnx != nx || fny != ny)
            throw DimensionMismatch("import_external: field dims " + std::to_string(fnx) +
                                    "x" + std::to_string(fny) + " do not match stack " +
                                    std::to_string(nx) + "x" + std::to_string(ny));
    } else {
        std::ifstream in(dir / "transforms.json");
        if (!in) throw IoFailure("import_external: missing transforms.json in " + dir.string());
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw HeaderMismatch("transforms.json: " + std::string(e.what()));
        }
        if (!j.is_array()) throw HeaderMismatch("transforms.json: expected an array");
        std::vector<RigidTransform2D> transforms(j.size());
        std::vector<bool> seen(j.size(), false);
        for (const auto& entry : j) {
            int z;
            RigidTransform2D t;
            try {
                z = entry.at("z").get<int>();
                t.theta_rad = entry.at("theta_rad").get<double>();
                t.tx = entry.at("tx_px").get<double>();
                t.ty = entry.at("ty_px").get<double>();
                t.cx = entry.at("cx_px").get<double>();
                t.cy = entry.at("cy_px").get<double>();
            } catch (const json::exception& e) {
                throw HeaderMismatch("transforms.json: " + std::string(e.what()));
            }
            if (z < 0 || z >= static_cast<int>(j.size()) || seen[z])
                throw MissingSlice("transforms.json: slice indices must cover 0.." +
                                       std::to_string(j.size() - 1) + " exactly once",
                                   z);
            seen[z] = true;
            transforms[z] = t;
        }
        for (std::size_t z = 0; z < seen.size(); ++z)
            if (!seen[z])
                throw MissingSlice("transforms.json: missing slice " + std::to_string(z),
                                   static_cast<int>(z));
        result.fields.fields.resize(transforms.size());
        parallel_for(static_cast<std::int64_t>(transforms.size()), [&](std::int64_t z) {
            result.fields[static_cast<int>(z)] = rigid_to_field(transforms[z], nx, ny);
        });
    }

    result.diagnostics.resize(result.fields.nz());
    for (int z = 0; z < result.fields.nz(); ++z) result.diagnostics[z] = {z, 0.0, 0, true};
    return result;
}

void save_result(const RegistrationResult& result, const fs::path& dir) {
    save_field_stack(result.fields, dir);
    std::ofstream out(dir / "diagnostics.csv");
    if (!out) throw IoFailure("save_result: cannot write diagnostics.csv");
    out << "z,similarity_final,iterations,converged\n";
    for (const auto& d : result.diagnostics) {
        out << d.z << ',' << format_number(d.similarity_final) << ',' << d.iterations << ','
            << (d.converged ? 1 : 0) << '\n';
    }
}

} // namespace serireg
