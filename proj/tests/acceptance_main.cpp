// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances are pinned in code next to each check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "serireg/distortion.hpp"
#include "serireg/field_io.hpp"
#include "serireg/format.hpp"
#include "serireg/image_io.hpp"
#include "serireg/metrics.hpp"
#include "serireg/parallel.hpp"
#include "serireg/phantom.hpp"
#include "serireg/pipeline.hpp"
#include "serireg/registration.hpp"
#include "test_support.hpp"

using namespace serireg;
using namespace serireg::test;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

PhantomSpec bent_tube_128(int nz, double amplitude, std::uint64_t seed) {
    PhantomSpec spec;
    spec.kind = PhantomKind::bent_tube;
    spec.nx = spec.ny = 128;
    spec.nz = nz;
    spec.seed = seed;
    spec.tube.bend_amplitude_px = amplitude;
    spec.tube.bend_period_slices = 64.0;
    return spec;
}

DistortionSpec rigid_jitter_spec(std::uint64_t seed) {
    DistortionSpec spec;
    spec.seed = seed;
    spec.sigma_theta_rad = 2.0 * kDeg;
    spec.sigma_t_px = 5.0;
    spec.elastic.sigma_px = 0.0;
    spec.intensity.sigma_gamma = 0.05;
    spec.p_drop = 0.0;
    return spec;
}

RegistrationResult as_result(FieldStack fields) {
    RegistrationResult r;
    r.fields = std::move(fields);
    r.diagnostics.resize(r.fields.nz());
    for (int z = 0; z < r.fields.nz(); ++z) r.diagnostics[z] = {z, 0.0, 0, true};
    return r;
}

RegistrationResult identity_result(const DistortionRecord& record) {
    FieldStack fields;
    for (std::size_t i = 0; i < record.surviving_slices().size(); ++i)
        fields.fields.emplace_back(record.nx, record.ny);
    return as_result(std::move(fields));
}

// Pooled mean of ||compose(recovered, truth)|| over evaluation masks.
double pooled_mean_error(const Volume& original, const std::vector<int>& slices,
                         const std::vector<const DisplacementField*>& truth,
                         const std::vector<const DisplacementField*>& recovered) {
    double sum = 0.0;
    long long n = 0;
    for (std::size_t i = 0; i < slices.size(); ++i) {
        const Mask mask = make_mask(original.slice(slices[i]), 0.1, 4);
        const DisplacementField e = compose_fields(*recovered[i], *truth[i]);
        for (int y = 0; y < e.ny; ++y)
            for (int x = 0; x < e.nx; ++x)
                if (mask.at(x, y)) {
                    sum += e.at(x, y).norm();
                    ++n;
                }
    }
    return sum / static_cast<double>(n);
}

bool files_identical(const std::filesystem::path& a, const std::filesystem::path& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    const std::string da((std::istreambuf_iterator<char>(fa)), {});
    const std::string db((std::istreambuf_iterator<char>(fb)), {});
    return da == db;
}

bool dirs_identical(const std::filesystem::path& a, const std::filesystem::path& b,
                    std::string& detail) {
    std::vector<std::filesystem::path> rel;
    for (const auto& e : std::filesystem::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel.push_back(std::filesystem::relative(e.path(), a));
    std::sort(rel.begin(), rel.end());
    for (const auto& r : rel) {
        if (!files_identical(a / r, b / r)) {
            detail = "differs: " + r.string();
            return false;
        }
    }
    return true;
}

struct Criterion {
    int id;
    std::string name;
    std::function<bool(std::string&)> run;
};

// --------------------------------------------------------------------------
// 1. Oracle calibration (also the shared fixture for criterion 2)

struct OracleFixture {
    Volume original;
    DistortionRecord record;
    MetricsRecord oracle_metrics;
    MetricsRecord identity_metrics;
};

OracleFixture g_oracle_fixture;

bool criterion_oracle(std::string& detail) {
    const auto start = std::chrono::steady_clock::now();

    DistortionSpec dspec = rigid_jitter_spec(1);
    dspec.elastic.grid_px = 64.0;
    dspec.elastic.sigma_px = 3.0;

    g_oracle_fixture.original = generate_phantom(bent_tube_128(64, 10.0, 7));
    g_oracle_fixture.record = distort_volume(g_oracle_fixture.original, dspec).second;

    const FieldStack oracle = oracle_recovery(g_oracle_fixture.record, 0.01);
    g_oracle_fixture.oracle_metrics =
        evaluate(as_result(oracle), g_oracle_fixture.record, g_oracle_fixture.original);
    g_oracle_fixture.identity_metrics =
        evaluate(identity_result(g_oracle_fixture.record), g_oracle_fixture.record,
                 g_oracle_fixture.original);

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double mean = g_oracle_fixture.oracle_metrics.aggregate.mean_px;
    detail = "aggregate mean " + format_number(mean) + " px (limit 0.02), " +
             format_number(seconds) + " s (limit 60)";
    return mean <= 0.02 && seconds < 60.0;
}

// --------------------------------------------------------------------------
// 2. No-correction baseline matches the record-side field magnitude

bool criterion_identity_baseline(std::string& detail) {
    const auto& fx = g_oracle_fixture;
    std::vector<const DisplacementField*> truth, zero;
    std::vector<DisplacementField> zeros;
    const auto survivors = fx.record.surviving_slices();
    zeros.reserve(survivors.size());
    for (const int z : survivors) {
        truth.push_back(&fx.record.slices[z].composed);
        zeros.emplace_back(fx.record.nx, fx.record.ny);
    }
    for (const auto& z : zeros) zero.push_back(&z);

    const double analytic = pooled_mean_error(fx.original, survivors, truth, zero);
    const double measured = fx.identity_metrics.aggregate.mean_px;
    detail = "evaluate " + format_number(measured) + " px vs record-side " +
             format_number(analytic) + " px";
    return std::fabs(measured - analytic) <= 0.02 * analytic;
}

// --------------------------------------------------------------------------
// 3. Rigid recovery on 20 random rigid-only distortions

bool criterion_rigid_recovery(std::string& detail) {
    const Volume original = generate_phantom(bent_tube_128(32, 4.0, 11));
    DistortionSpec dspec = rigid_jitter_spec(2);
    const auto [distorted, record] = distort_volume(original, dspec);

    const int cases = 20;
    std::vector<RigidResult> estimates(cases);
    parallel_for(cases, [&](std::int64_t z) {
        estimates[z] = register_rigid(original.slice(static_cast<int>(z)),
                                      distorted.slice(static_cast<int>(z)));
    });

    int within = 0;
    double worst_theta = 0.0, worst_t = 0.0;
    std::vector<DisplacementField> recovered_fields;
    std::vector<const DisplacementField*> truth, recovered;
    std::vector<int> slice_ids;
    recovered_fields.reserve(cases);
    for (int z = 0; z < cases; ++z) {
        const RigidTransform2D ideal = record.slices[z].rigid.inverse();
        const RigidTransform2D& got = estimates[z].transform;
        const double dtheta = std::fabs(got.theta_rad - ideal.theta_rad);
        const double dt = std::hypot(got.tx - ideal.tx, got.ty - ideal.ty);
        worst_theta = std::max(worst_theta, dtheta);
        worst_t = std::max(worst_t, dt);
        within += (dtheta <= 0.5 * kDeg && dt <= 0.5) ? 1 : 0;

        recovered_fields.push_back(rigid_to_field(got, record.nx, record.ny));
        slice_ids.push_back(z);
        truth.push_back(&record.slices[z].composed);
    }
    for (const auto& f : recovered_fields) recovered.push_back(&f);
    const double mean = pooled_mean_error(original, slice_ids, truth, recovered);

    detail = std::to_string(within) + "/20 within 0.5 deg & 0.5 px (worst " +
             format_number(worst_theta / kDeg) + " deg, " + format_number(worst_t) +
             " px); aggregate mean " + format_number(mean) + " px (limit 0.75)";
    return within == cases && mean <= 0.75;
}

// --------------------------------------------------------------------------
// 4. Elastic beats no-correction by 2x on elastic-only distortions

bool criterion_elastic_improvement(std::string& detail) {
    double elastic_sum = 0.0, identity_sum = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        // Dense aperiodic multi-scale texture: pyramids keep coarse structure
        // so the comparison isolates the elastic model, not search stability.
        Volume original(128, 128, 4);
        for (int z = 0; z < 4; ++z)
            original.set_slice(z,
                               multiscale_slice(static_cast<unsigned>(16 * seed + z), 128, 128));

        DistortionSpec dspec;
        dspec.seed = seed;
        dspec.elastic.grid_px = 32.0;
        dspec.elastic.sigma_px = 3.0;
        const auto [distorted, record] = distort_volume(original, dspec);

        MethodOptions opts;
        opts.elastic.grid_px = 32.0;
        std::vector<DisplacementField> fields(original.nz);
        parallel_for(original.nz, [&](std::int64_t z) {
            fields[z] = register_elastic(original.slice(static_cast<int>(z)),
                                         distorted.slice(static_cast<int>(z)), opts)
                            .field;
        });

        std::vector<const DisplacementField*> truth, recovered, zero;
        std::vector<DisplacementField> zeros;
        std::vector<int> slice_ids;
        for (int z = 0; z < original.nz; ++z) {
            truth.push_back(&record.slices[z].composed);
            recovered.push_back(&fields[z]);
            zeros.emplace_back(record.nx, record.ny);
            slice_ids.push_back(z);
        }
        for (const auto& z : zeros) zero.push_back(&z);

        elastic_sum += pooled_mean_error(original, slice_ids, truth, recovered);
        identity_sum += pooled_mean_error(original, slice_ids, truth, zero);
    }
    detail = "elastic mean " + format_number(elastic_sum / 5) + " px vs identity " +
             format_number(identity_sum / 5) + " px over 5 seeds";
    return elastic_sum <= 0.5 * identity_sum;
}

// --------------------------------------------------------------------------
// 5. Chain drift exceeds fixed-reference drift; oracle drift is flat

bool criterion_drift(std::string& detail) {
    int chain_wins = 0;
    double worst_oracle = 0.0;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Volume original = generate_phantom(bent_tube_128(64, 10.0, 7));
        // Modest jitter: every recovery is gauged to its anchor slice's own
        // distortion, so the anchor jitter must stay well below the curvature
        // signal (A = 10) the chain accumulates.
        DistortionSpec dspec;
        dspec.seed = 1000 + seed;
        dspec.sigma_theta_rad = 1.0 * kDeg;
        dspec.sigma_t_px = 1.5;
        dspec.intensity.sigma_gamma = 0.05;
        const auto [distorted, record] = distort_volume(original, dspec);

        const RegistrationMethod rigid{MethodKind::rigid, {}};
        StackStrategy chain;
        chain.kind = StackStrategy::Kind::chain_to_previous;
        StackStrategy fixed;
        fixed.kind = StackStrategy::Kind::fixed_reference;

        const MetricsRecord chain_metrics =
            evaluate(register_stack(distorted, rigid, chain), record, original);
        const MetricsRecord fixed_metrics =
            evaluate(register_stack(distorted, rigid, fixed), record, original);
        const MetricsRecord oracle_metrics =
            evaluate(as_result(oracle_recovery(record, 0.01)), record, original);

        chain_wins += chain_metrics.drift.score_px > fixed_metrics.drift.score_px;
        worst_oracle = std::max(worst_oracle, oracle_metrics.drift.score_px);
        per_seed += " [" + format_number(chain_metrics.drift.score_px) + " vs " +
                    format_number(fixed_metrics.drift.score_px) + "]";
    }
    detail = "chain > fixed in " + std::to_string(chain_wins) +
             "/5 seeds (chain vs fixed:" + per_seed + "); oracle drift max " +
             format_number(worst_oracle) + " px (limit 0.05)";
    return chain_wins >= 4 && worst_oracle <= 0.05;
}

// --------------------------------------------------------------------------
// 6. End-to-end determinism across thread counts

bool criterion_determinism(std::string& detail) {
    TempDir dir("acceptance_determinism");
    std::string cfg_text = std::string(R"({
        "input": {"phantom": {"kind": "bent_tube", "dims": [64, 64, 32], "seed": 7,
                              "tube": {"bend_amplitude_px": 5.0}}},
        "distortion": {"preset": "default", "seed": 21,
                       "elastic": {"grid_px": 16.0, "sigma_px": 1.5}},
        "methods": [{"name": "oracle"}, {"name": "identity"}, {"name": "translation"}],
        "strategy": {"kind": "fixed_reference"},
        "output": "OUT"})");
    // Both runs use the identical config (same output path; outputs carry
    // their own paths in provenance), renamed aside between runs.
    cfg_text.replace(cfg_text.find("OUT"), 3, (dir.path / "out").string());
    const PipelineConfig cfg = pipeline_config_from_json_text(cfg_text, dir.path);

    set_thread_count(1);
    run_pipeline(cfg);
    std::filesystem::rename(dir / "out", dir / "t1");
    set_thread_count(8);
    run_pipeline(cfg);
    std::filesystem::rename(dir / "out", dir / "t8");
    set_thread_count(0);

    std::string diff;
    const bool same = dirs_identical(dir / "t1", dir / "t8", diff);
    detail = same ? "all stack, field, metrics and report files byte-identical"
                  : ("thread counts 1 vs 8: " + diff);
    return same;
}

// --------------------------------------------------------------------------
// 7. Field-algebra property suite (>= 100 random smooth fields)

bool criterion_field_algebra(std::string& detail) {
    const int n = 48;
    const double tol = 0.01;
    // Inversion guarantees its residual on the interior; composition pulls
    // samples up to max|u| px further, hence the widened margin.
    const int margin = kInteriorMargin + 3;
    double worst_invert = 0.0, worst_assoc = 0.0;

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const DisplacementField u = smooth_field(3 * seed + 1, n, n, 3.0);
        const DisplacementField v = smooth_field(3 * seed + 2, n, n, 3.0);
        const DisplacementField w = smooth_field(3 * seed + 3, n, n, 3.0);

        const InversionResult inv = invert_field(u, tol, 100);
        const DisplacementField residual = compose_fields(u, inv.field);
        for (int y = margin; y < n - margin; ++y)
            for (int x = margin; x < n - margin; ++x)
                worst_invert = std::max(worst_invert,
                                        static_cast<double>(residual.at(x, y).norm()));

        const DisplacementField left = compose_fields(u, compose_fields(v, w));
        const DisplacementField right = compose_fields(compose_fields(u, v), w);
        worst_assoc = std::max(worst_assoc, max_interior_diff(left, right));

        // Zero-field warp must be bit-exact for every interpolation kind.
        const Slice img = textured_slice(static_cast<unsigned>(seed), n, n);
        const DisplacementField zero(n, n);
        for (const InterpKind kind :
             {InterpKind::nearest, InterpKind::bilinear, InterpKind::bicubic}) {
            if (warp_slice(img, zero, {kind, 0.f}).pixels != img.pixels) {
                detail = "zero-field warp not bit-exact (seed " + std::to_string(seed) + ")";
                return false;
            }
        }

        // Constant-field composition is exact.
        const float ax = static_cast<float>(seed % 7) - 3.f;
        const float by = static_cast<float>(seed % 5) - 2.f;
        const DisplacementField ca(n, n, Vec2{ax, -1.f});
        const DisplacementField cb(n, n, Vec2{2.f, by});
        const DisplacementField cc = compose_fields(ca, cb);
        for (const Vec2& value : cc.vectors) {
            if (value.x != ax + 2.f || value.y != by - 1.f) {
                detail = "constant-field composition inexact";
                return false;
            }
        }
    }
    detail = "invert residual max " + format_number(worst_invert) + " px (limit " +
             format_number(2 * tol) + "); associativity max " + format_number(worst_assoc) +
             " px (limit 0.05)";
    return worst_invert <= 2 * tol && worst_assoc <= 0.05;
}

// --------------------------------------------------------------------------
// 8. Metric sanity properties over random slices

bool criterion_metric_sanity(std::string& detail) {
    std::mt19937 gen(12345);
    for (int trial = 0; trial < 100; ++trial) {
        const int nx = 24 + (trial % 3) * 8;
        const int ny = 24 + (trial % 5) * 4;
        const Slice a = textured_slice(1000 + trial, nx, ny);
        const Mask mask = make_mask(a, 0.0, 2);

        const SimilarityStats self = similarity_suite(a, a, mask);
        if (std::fabs(self.ssim - 1.0) > 1e-9 || std::fabs(self.ncc - 1.0) > 1e-9 ||
            self.mse != 0.0) {
            detail = "self-similarity not perfect (trial " + std::to_string(trial) + ")";
            return false;
        }

        Slice inverted = a;
        for (float& p : inverted.pixels) p = 1.f - p;
        if (std::fabs(similarity_suite(a, inverted, mask).ncc + 1.0) > 1e-9) {
            detail = "ncc(a, 1-a) != -1 (trial " + std::to_string(trial) + ")";
            return false;
        }

        // Masked-out perturbation invariance.
        Slice b = textured_slice(2000 + trial, nx, ny);
        Slice a2 = a, b2 = b;
        std::uniform_real_distribution<float> uni(0.f, 1.f);
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x)
                if (!mask.at(x, y)) {
                    a2.at(x, y) = uni(gen);
                    b2.at(x, y) = uni(gen);
                }
        const SimilarityStats s1 = similarity_suite(a, b, mask);
        const SimilarityStats s2 = similarity_suite(a2, b2, mask);
        if (s1.mse != s2.mse || s1.ncc != s2.ncc || s1.ssim != s2.ssim) {
            detail = "masked-out pixels leaked into a statistic (trial " +
                     std::to_string(trial) + ")";
            return false;
        }

        // Pooled-statistics identity over random per-slice pools.
        std::vector<std::vector<float>> pools(3 + trial % 3);
        std::vector<float> all;
        for (auto& pool : pools) {
            const int count = 10 + static_cast<int>(gen() % 50);
            for (int i = 0; i < count; ++i) {
                pool.push_back(uni(gen) * 5.f);
                all.push_back(pool.back());
            }
        }
        double weighted = 0.0;
        long long total = 0;
        for (const auto& pool : pools) {
            weighted += error_stats(pool).mean_px * static_cast<double>(pool.size());
            total += static_cast<long long>(pool.size());
        }
        const ErrorStats pooled = error_stats(all);
        if (std::fabs(pooled.mean_px - weighted / total) > 1e-9) {
            detail = "pooled mean != weighted mean of per-slice means";
            return false;
        }
        if (!(pooled.median_px <= pooled.p95_px && pooled.p95_px <= pooled.max_px)) {
            detail = "quantiles not monotone";
            return false;
        }
    }
    detail = "ssim/ncc identities, masking invariance, pooled identity: 100 trials";
    return true;
}

// --------------------------------------------------------------------------
// 9. Format round trips

bool criterion_round_trips(std::string& detail) {
    TempDir dir("acceptance_formats");

    // Stacks: quantization bound at both depths and both containers.
    Volume v(33, 27, 4);
    for (int z = 0; z < 4; ++z) v.set_slice(z, textured_slice(500 + z, 33, 27));
    for (const int bits : {8, 16}) {
        for (const RasterFormat fmt : {RasterFormat::png, RasterFormat::tiff}) {
            const auto stack_dir =
                dir / (std::string("stack_") + std::to_string(bits) +
                       (fmt == RasterFormat::png ? "_png" : "_tif"));
            save_stack(v, stack_dir, bits, fmt);
            const Volume back = load_stack(stack_dir);
            const double bound = 0.5 / ((1 << bits) - 1);
            for (std::size_t i = 0; i < v.voxels.size(); ++i) {
                if (std::fabs(static_cast<double>(v.voxels[i]) - back.voxels[i]) >
                    bound + 1e-9) {
                    detail = "stack round trip exceeded the quantization bound";
                    return false;
                }
            }
        }
    }

    // Fields: bit-exact round trip including signed zero.
    FieldStack fields;
    for (int z = 0; z < 3; ++z) fields.fields.push_back(smooth_field(700 + z, 21, 17, 3.0));
    fields.fields[0].at(0, 0) = {-0.f, 1e-39f}; // signed zero, subnormal
    save_field_stack(fields, dir / "fields");
    const FieldStack fback = load_field_stack(dir / "fields");
    for (int z = 0; z < 3; ++z) {
        if (std::memcmp(fback[z].vectors.data(), fields[z].vectors.data(),
                        fields[z].vectors.size() * sizeof(Vec2)) != 0) {
            detail = "field round trip not bit-exact";
            return false;
        }
    }

    // Export -> import_external -> identical metrics.
    const Volume original = generate_phantom(bent_tube_128(32, 5.0, 3));
    const auto [distorted, record] = distort_volume(original, rigid_jitter_spec(5));
    const RegistrationResult direct =
        register_stack(distorted, {MethodKind::translation, {}}, StackStrategy{});
    save_result(direct, dir / "exported");
    const RegistrationResult imported =
        import_external(dir / "exported", ImportKind::fields, record.nx, record.ny);

    MetricsRecord m1 = evaluate(direct, record, original);
    MetricsRecord m2 = evaluate(imported, record, original);
    m1.method = m2.method = "translation";
    save_metrics(m1, dir / "m1");
    save_metrics(m2, dir / "m2");
    if (!files_identical(dir.path / "m1" / "metrics.json", dir.path / "m2" / "metrics.json")) {
        detail = "re-imported result scored differently";
        return false;
    }
    detail = "stack quantization bound, bit-exact fields, import reproducibility";
    return true;
}

} // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "oracle calibration", criterion_oracle},
        {2, "no-correction baseline", criterion_identity_baseline},
        {3, "rigid recovery", criterion_rigid_recovery},
        {4, "elastic improvement", criterion_elastic_improvement},
        {5, "drift (banana) detection", criterion_drift},
        {6, "determinism across thread counts", criterion_determinism},
        {7, "field-algebra properties", criterion_field_algebra},
        {8, "metric sanity properties", criterion_metric_sanity},
        {9, "format round trips", criterion_round_trips},
    };

    int failures = 0;
    const auto suite_start = std::chrono::steady_clock::now();
    for (const auto& criterion : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = criterion.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s criterion %d: %s — %s (%.1f s)\n", ok ? "PASS" : "FAIL",
                    criterion.id, criterion.name.c_str(), detail.c_str(), seconds);
        std::fflush(stdout);
        failures += !ok;
    }
    const double total =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - suite_start)
            .count();
    std::printf("%d/%zu criteria passed (%.1f s total)\n",
                static_cast<int>(criteria.size()) - failures, criteria.size(), total);
    return failures == 0 ? 0 : 1;
}
