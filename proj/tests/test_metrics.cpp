#include <doctest.h>

#include <cmath>
#include <random>

#include "serireg/metrics.hpp"
#include "serireg/phantom.hpp"
#include "test_support.hpp"

using namespace serireg;
using namespace serireg::test;

TEST_SUITE_BEGIN("metrics");

namespace {

Mask full_mask(int nx, int ny) {
    return make_mask(Slice(nx, ny, 1.f), 0.0, 0);
}

// Brute-force erosion oracle, independent of the production morphology.
long long eroded_count_oracle(const Slice& s, double threshold, int margin) {
    const auto fg = [&](int x, int y) {
        return x >= 0 && y >= 0 && x < s.nx && y < s.ny && s.at(x, y) >= threshold;
    };
    long long count = 0;
    for (int y = 0; y < s.ny; ++y)
        for (int x = 0; x < s.nx; ++x) {
            bool keep = true;
            for (int dy = -margin; dy <= margin && keep; ++dy)
                for (int dx = -margin; dx <= margin; ++dx)
                    if (!fg(x + dx, y + dy)) {
                        keep = false;
                        break;
                    }
            count += keep;
        }
    return count;
}

// End-to-end fixture: distorted phantom plus a supplied recovery.
struct EvalFixture {
    Volume original;
    DistortionRecord record;

    EvalFixture() {
        PhantomSpec pspec;
        pspec.kind = PhantomKind::bent_tube;
        pspec.nx = pspec.ny = 64;
        pspec.nz = 32;
        pspec.seed = 5;
        pspec.tube.bend_amplitude_px = 4.0;
        original = generate_phantom(pspec);

        DistortionSpec dspec;
        dspec.seed = 21;
        dspec.sigma_theta_rad = 1.0 * 3.14159265 / 180.0;
        dspec.sigma_t_px = 2.0;
        dspec.elastic.grid_px = 16.0;
        dspec.elastic.sigma_px = 1.0;
        dspec.intensity.sigma_gamma = 0.03;
        record = distort_volume(original, dspec).second;
    }

    RegistrationResult identity_result() const {
        RegistrationResult r;
        const auto survivors = record.surviving_slices();
        for (std::size_t i = 0; i < survivors.size(); ++i) {
            r.fields.fields.emplace_back(record.nx, record.ny);
            r.diagnostics.push_back({static_cast<int>(i), 0.0, 0, true});
        }
        return r;
    }

    RegistrationResult oracle_result(double tol) const {
        RegistrationResult r;
        r.fields = oracle_recovery(record, tol);
        for (int z = 0; z < r.fields.nz(); ++z) r.diagnostics.push_back({z, 0.0, 0, true});
        return r;
    }
};

} // namespace

TEST_CASE("error_field exact cases") {
    SUBCASE("no correction leaves the full distortion") {
        const DisplacementField d = smooth_field(1, 24, 24, 2.0);
        const DisplacementField zero(24, 24);
        const DisplacementField e = error_field(d, zero);
        CHECK(e.vectors == d.vectors);
    }
    SUBCASE("constant distortion cancels against its negation") {
        const DisplacementField d(24, 24, Vec2{1.5f, -2.f});
        const DisplacementField r(24, 24, Vec2{-1.5f, 2.f});
        const DisplacementField e = error_field(d, r);
        for (const Vec2& v : e.vectors) CHECK(v.norm() == doctest::Approx(0.f));
    }
    SUBCASE("oracle recovery leaves at most the inversion tolerance") {
        const DisplacementField d = smooth_field(2, 48, 48, 3.0);
        const DisplacementField r = invert_field(d, 0.01, 100).field;
        const DisplacementField e = error_field(d, r);
        double mean = 0.0;
        long long n = 0;
        for (int y = kInteriorMargin; y < 48 - kInteriorMargin; ++y)
            for (int x = kInteriorMargin; x < 48 - kInteriorMargin; ++x) {
                mean += e.at(x, y).norm();
                ++n;
            }
        CHECK(mean / n <= 0.02);
    }
}

TEST_CASE("make_mask thresholds, erodes, and falls back") {
    SUBCASE("threshold 0 gives the full interior") {
        const Mask m = make_mask(Slice(16, 12, 0.5f), 0.0, 4);
        CHECK_FALSE(m.fallback_used);
        CHECK(m.count == (16 - 8) * (12 - 8));
        CHECK(m.at(4, 4));
        CHECK_FALSE(m.at(3, 4));
    }
    SUBCASE("all-black slice falls back to the interior with a flag") {
        const Mask m = make_mask(Slice(16, 16, 0.0f), 0.1, 4);
        CHECK(m.fallback_used);
        CHECK(m.count == 8 * 8);
    }
    SUBCASE("half-bright slice matches the counting oracle") {
        Slice s(32, 32, 0.f);
        for (int y = 0; y < 32; ++y)
            for (int x = 16; x < 32; ++x) s.at(x, y) = 0.8f;
        const Mask m = make_mask(s, 0.5, 4);
        CHECK(m.count == eroded_count_oracle(s, 0.5, 4));
        CHECK(m.count == 8 * 24);
    }
    SUBCASE("invalid parameters are rejected") {
        CHECK_THROWS_AS(make_mask(Slice(8, 8, 0.f), 1.5, 1), InvalidSpec);
        CHECK_THROWS_AS(make_mask(Slice(8, 8, 0.f), 0.5, -1), InvalidSpec);
    }
}

TEST_CASE("similarity_suite identities") {
    const Slice a = textured_slice(10, 40, 40);
    const Mask m = full_mask(40, 40);

    SUBCASE("identical images score perfectly") {
        const SimilarityStats s = similarity_suite(a, a, m);
        CHECK(s.mse == 0.0);
        CHECK(s.psnr_db == 99.0);
        CHECK(s.ncc == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(s.ssim == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("inverted images anticorrelate perfectly") {
        Slice b = a;
        for (float& p : b.pixels) p = 1.f - p;
        const SimilarityStats s = similarity_suite(a, b, m);
        CHECK(s.ncc == doctest::Approx(-1.0).epsilon(1e-9));
    }
    SUBCASE("flat inputs are rejected") {
        CHECK_THROWS_AS(similarity_suite(a, Slice(40, 40, 0.5f), m), FlatImage);
    }
    SUBCASE("empty masks are rejected") {
        Mask empty = m;
        std::fill(empty.inside.begin(), empty.inside.end(), 0);
        empty.count = 0;
        CHECK_THROWS_AS(similarity_suite(a, a, empty), EmptyMask);
    }
}

TEST_CASE("similarity metrics are symmetric") {
    const Slice a = textured_slice(11, 32, 32);
    const Slice b = textured_slice(12, 32, 32);
    const Mask m = full_mask(32, 32);
    const SimilarityStats ab = similarity_suite(a, b, m);
    const SimilarityStats ba = similarity_suite(b, a, m);
    CHECK(std::fabs(ab.mse - ba.mse) <= 1e-6);
    CHECK(std::fabs(ab.ncc - ba.ncc) <= 1e-6);
    CHECK(std::fabs(ab.ssim - ba.ssim) <= 1e-6);
}

TEST_CASE("masked-out pixels cannot affect any statistic") {
    const Slice a = textured_slice(13, 32, 32);
    const Slice b = textured_slice(14, 32, 32);
    Mask m = make_mask(a, 0.0, 6);

    Slice a2 = a, b2 = b;
    std::mt19937 gen(99);
    std::uniform_real_distribution<float> uni(0.f, 1.f);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (!m.at(x, y)) {
                a2.at(x, y) = uni(gen);
                b2.at(x, y) = uni(gen);
            }
    const SimilarityStats s1 = similarity_suite(a, b, m);
    const SimilarityStats s2 = similarity_suite(a2, b2, m);
    CHECK(s1.mse == s2.mse);
    CHECK(s1.ncc == s2.ncc);
    CHECK(s1.ssim == s2.ssim);
}

TEST_CASE("mse of added gaussian noise matches its variance") {
    // a vs a + N(0, 0.01^2) over the full mask; expectation 1e-4.
    Slice a(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) a.at(x, y) = 0.3f + 0.4f * ((x + y) % 7) / 6.f;
    Slice b = a;
    std::mt19937 gen(7);
    std::normal_distribution<float> noise(0.f, 0.01f);
    for (float& p : b.pixels) p += noise(gen);
    const SimilarityStats s = similarity_suite(a, b, full_mask(64, 64));
    CHECK(s.mse == doctest::Approx(1e-4).epsilon(0.10));
}

TEST_CASE("drift_profile algebra") {
    SUBCASE("zero errors give a zero profile") {
        const DriftProfile p = drift_profile(std::vector<Vec2d>(12, Vec2d{0, 0}), 9);
        CHECK(p.score_px == 0.0);
        for (const auto& c : p.cumulative) CHECK(c.norm() == 0.0);
    }
    SUBCASE("constant means accumulate linearly and score 1") {
        const DriftProfile p = drift_profile(std::vector<Vec2d>(10, Vec2d{1, 0}), 9);
        for (int z = 0; z < 10; ++z)
            CHECK(p.cumulative[z].x == doctest::Approx(z + 1.0));
        CHECK(p.score_px == doctest::Approx(1.0));
    }
    SUBCASE("smoothed curve is bounded by the largest per-slice mean") {
        std::vector<Vec2d> m;
        for (int z = 0; z < 40; ++z)
            m.push_back({std::sin(z * 0.7), std::cos(z * 0.3)});
        double max_m = 0.0;
        for (const auto& v : m) max_m = std::max(max_m, v.norm());
        const DriftProfile p = drift_profile(m, 9);
        for (const auto& s : p.smoothed) CHECK(s.norm() <= max_m + 1e-12);
    }
    SUBCASE("window must be odd") {
        CHECK_THROWS_AS(drift_profile(std::vector<Vec2d>(4), 4), InvalidSpec);
    }
}

TEST_CASE("evaluate scores identity vs oracle consistently") {
    const EvalFixture fx;

    const MetricsRecord oracle = evaluate(fx.oracle_result(0.01), fx.record, fx.original);
    const MetricsRecord identity = evaluate(fx.identity_result(), fx.record, fx.original);

    SUBCASE("oracle calibration") {
        CHECK(oracle.aggregate.mean_px <= 0.02);
    }
    SUBCASE("identity reproduces the recorded distortion magnitude exactly") {
        // e = compose(0, d) = d, so the aggregate must equal the record-side
        // mean over the same masks.
        double sum = 0.0;
        long long n = 0;
        for (const int z : fx.record.surviving_slices()) {
            const Mask mask = make_mask(fx.original.slice(z), 0.1, 4);
            const auto& d = fx.record.slices[z].composed;
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x)
                    if (mask.at(x, y)) {
                        sum += d.at(x, y).norm();
                        ++n;
                    }
        }
        CHECK(identity.aggregate.mean_px == doctest::Approx(sum / n).epsilon(1e-6));
    }
    SUBCASE("oracle dominates identity on every error statistic") {
        CHECK(oracle.aggregate.mean_px <= identity.aggregate.mean_px);
        CHECK(oracle.aggregate.rms_px <= identity.aggregate.rms_px);
        CHECK(oracle.aggregate.median_px <= identity.aggregate.median_px);
        CHECK(oracle.aggregate.p95_px <= identity.aggregate.p95_px);
        CHECK(oracle.aggregate.max_px <= identity.aggregate.max_px);
        CHECK(oracle.drift.score_px <= identity.drift.score_px);
    }
    SUBCASE("statistics are monotone") {
        for (const auto& s : identity.slices) {
            CHECK(s.error.median_px <= s.error.p95_px + 1e-12);
            CHECK(s.error.p95_px <= s.error.max_px + 1e-12);
        }
        CHECK(identity.aggregate.median_px <= identity.aggregate.p95_px);
        CHECK(identity.aggregate.p95_px <= identity.aggregate.max_px);
    }
    SUBCASE("pooled mean equals the mask-weighted mean of per-slice means") {
        double weighted = 0.0;
        long long total = 0;
        for (const auto& s : identity.slices) {
            weighted += s.error.mean_px * static_cast<double>(s.mask_px);
            total += s.mask_px;
        }
        CHECK(identity.aggregate.mean_px ==
              doctest::Approx(weighted / total).epsilon(1e-9));
    }
}

TEST_CASE("evaluate rejects inconsistent inputs") {
    const EvalFixture fx;
    SUBCASE("wrong slice count") {
        RegistrationResult r = fx.identity_result();
        r.fields.fields.pop_back();
        CHECK_THROWS_AS(evaluate(r, fx.record, fx.original), SliceSetMismatch);
    }
    SUBCASE("wrong field dims") {
        RegistrationResult r = fx.identity_result();
        for (auto& f : r.fields.fields) f = DisplacementField(32, 64);
        CHECK_THROWS_AS(evaluate(r, fx.record, fx.original), DimensionMismatch);
    }
}

TEST_CASE("metrics survive a save/load round trip") {
    TempDir dir("metrics");
    const EvalFixture fx;
    MetricsRecord m = evaluate(fx.identity_result(), fx.record, fx.original);
    m.method = "identity";
    m.strategy = "chain_to_previous";
    save_metrics(m, dir.path);
    const MetricsRecord back = load_metrics(dir.path);
    CHECK(back.method == "identity");
    CHECK(back.aggregate.mean_px == m.aggregate.mean_px);
    CHECK(back.drift.score_px == m.drift.score_px);
    REQUIRE(back.slices.size() == m.slices.size());
    CHECK(back.slices[3].similarity.ncc == m.slices[3].similarity.ncc);
    CHECK(back.drift.cumulative[5].x == m.drift.cumulative[5].x);
}

TEST_SUITE_END();
