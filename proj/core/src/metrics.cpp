// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#include "serireg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "serireg/format.hpp"
#include "serireg/parallel.hpp"

namespace serireg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kSsimWindow = 8;
constexpr double kSsimC1 = 0.01 * 0.01; // (K1 * L)^2, L = 1
constexpr double kSsimC2 = 0.03 * 0.03;
constexpr double kPsnrCap = 99.0;

std::vector<std::uint8_t> erode_once(const std::vector<std::uint8_t>& in, int nx, int ny) {
    std::vector<std::uint8_t> out(in.size(), 0);
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
            bool keep = true;
            for (int dy = -1; dy <= 1 && keep; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = x + dx, yy = y + dy;
                    if (xx < 0 || yy < 0 || xx >= nx || yy >= ny ||
                        !in[static_cast<std::size_t>(yy) * nx + xx]) {
                        keep = false;
                        break;
                    }
                }
            }
            out[static_cast<std::size_t>(y) * nx + x] = keep ? 1 : 0;
        }
    }
    return out;
}

long long count_mask(const std::vector<std::uint8_t>& m) {
    long long n = 0;
    for (const auto v : m) n += v;
    return n;
}

// Summed-area table with a zero top row/column.
struct Sat {
    int nx, ny;
    std::vector<double> s;
    Sat(int nx_, int ny_) : nx(nx_), ny(ny_), s(static_cast<std::size_t>(nx + 1) * (ny + 1), 0.0) {}

    template <typename Fn>
    void build(Fn&& value) {
        for (int y = 0; y < ny; ++y) {
            double row = 0.0;
            for (int x = 0; x < nx; ++x) {
                row += value(x, y);
                s[static_cast<std::size_t>(y + 1) * (nx + 1) + (x + 1)] =
                    s[static_cast<std::size_t>(y) * (nx + 1) + (x + 1)] + row;
            }
        }
    }

    // Sum over [x0, x0+w) x [y0, y0+w).
    double window(int x0, int y0, int w) const {
        const auto at = [&](int x, int y) {
            return s[static_cast<std::size_t>(y) * (nx + 1) + x];
        };
        return at(x0 + w, y0 + w) - at(x0, y0 + w) - at(x0 + w, y0) + at(x0, y0);
    }
};

} // namespace

Mask make_mask(const Slice& original, double threshold, int margin_px) {
    if (threshold < 0.0 || threshold > 1.0)
        throw InvalidSpec("make_mask: threshold must lie in [0,1]");
    if (margin_px < 0) throw InvalidSpec("make_mask: margin must be >= 0");

    Mask mask;
    mask.nx = original.nx;
    mask.ny = original.ny;
    mask.inside.assign(original.size(), 0);
    for (std::size_t i = 0; i < original.size(); ++i)
        mask.inside[i] = original.pixels[i] >= threshold ? 1 : 0;
    for (int i = 0; i < margin_px; ++i)
        mask.inside = erode_once(mask.inside, mask.nx, mask.ny);
    mask.count = count_mask(mask.inside);
    if (mask.count > 0) return mask;

    // Threshold emptied the mask: fall back to the full interior.
    mask.fallback_used = true;
    std::fill(mask.inside.begin(), mask.inside.end(), 0);
    for (int y = margin_px; y < mask.ny - margin_px; ++y)
        for (int x = margin_px; x < mask.nx - margin_px; ++x)
            mask.inside[static_cast<std::size_t>(y) * mask.nx + x] = 1;
    mask.count = count_mask(mask.inside);
    if (mask.count > 0) return mask;

    std::fill(mask.inside.begin(), mask.inside.end(), 1);
    mask.count = count_mask(mask.inside);
    return mask;
}

SimilarityStats similarity_suite(const Slice& a, const Slice& b, const Mask& mask) {
    if (a.nx != b.nx || a.ny != b.ny || a.nx != mask.nx || a.ny != mask.ny)
        throw DimensionMismatch("similarity_suite: dims differ");
    if (mask.count == 0) throw EmptyMask("similarity_suite: mask has no pixels");

    double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0, sd = 0.0;
    for (int y = 0; y < a.ny; ++y) {
        for (int x = 0; x < a.nx; ++x) {
            if (!mask.at(x, y)) continue;
            const double va = a.at(x, y);
            const double vb = b.at(x, y);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
            sd += (va - vb) * (va - vb);
        }
    }
    const double n = static_cast<double>(mask.count);

    SimilarityStats stats;
    stats.mse = sd / n;
    stats.psnr_db = stats.mse > 0.0
                        ? std::min(kPsnrCap, 10.0 * std::log10(1.0 / stats.mse))
                        : kPsnrCap;

    const double var_a = saa - sa * sa / n;
    const double var_b = sbb - sb * sb / n;
    if (var_a < 1e-12 || var_b < 1e-12)
        throw FlatImage("similarity_suite: zero variance under the mask, ncc undefined");
    stats.ncc = (sab - sa * sb / n) / std::sqrt(var_a * var_b);

    // SSIM over sliding windows fully inside the mask. Values outside the
    // mask are zeroed before the tables are built; complete windows never see
    // them, so masked-out pixels cannot perturb any sum even in float terms.
    Sat sat_count(a.nx, a.ny), sat_a(a.nx, a.ny), sat_b(a.nx, a.ny);
    Sat sat_aa(a.nx, a.ny), sat_bb(a.nx, a.ny), sat_ab(a.nx, a.ny);
    const auto masked = [&](const Slice& s, int x, int y) {
        return mask.at(x, y) ? static_cast<double>(s.at(x, y)) : 0.0;
    };
    sat_count.build([&](int x, int y) { return mask.at(x, y) ? 1.0 : 0.0; });
    sat_a.build([&](int x, int y) { return masked(a, x, y); });
    sat_b.build([&](int x, int y) { return masked(b, x, y); });
    sat_aa.build([&](int x, int y) { return masked(a, x, y) * masked(a, x, y); });
    sat_bb.build([&](int x, int y) { return masked(b, x, y) * masked(b, x, y); });
    sat_ab.build([&](int x, int y) { return masked(a, x, y) * masked(b, x, y); });

    const double wn = static_cast<double>(kSsimWindow) * kSsimWindow;
    double ssim_sum = 0.0;
    long long windows = 0;
    for (int y = 0; y + kSsimWindow <= a.ny; ++y) {
        for (int x = 0; x + kSsimWindow <= a.nx; ++x) {
            if (sat_count.window(x, y, kSsimWindow) < wn) continue;
            const double mu_a = sat_a.window(x, y, kSsimWindow) / wn;
            const double mu_b = sat_b.window(x, y, kSsimWindow) / wn;
            const double var_aw = sat_aa.window(x, y, kSsimWindow) / wn - mu_a * mu_a;
            const double var_bw = sat_bb.window(x, y, kSsimWindow) / wn - mu_b * mu_b;
            const double cov = sat_ab.window(x, y, kSsimWindow) / wn - mu_a * mu_b;
            const double num = (2.0 * mu_a * mu_b + kSsimC1) * (2.0 * cov + kSsimC2);
            const double den =
                (mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_aw + var_bw + kSsimC2);
            ssim_sum += num / den;
            ++windows;
        }
    }
    stats.ssim = windows > 0 ? ssim_sum / static_cast<double>(windows)
                             : std::numeric_limits<double>::quiet_NaN();
    return stats;
}

DisplacementField error_field(const DisplacementField& ground_truth,
                              const DisplacementField& recovered) {
    return compose_fields(recovered, ground_truth);
}

ErrorStats error_stats(const std::vector<float>& magnitudes) {
    ErrorStats stats;
    if (magnitudes.empty()) return stats;
    double sum = 0.0, sum2 = 0.0;
    double max_v = 0.0;
    for (const float m : magnitudes) {
        sum += m;
        sum2 += static_cast<double>(m) * m;
        max_v = std::max(max_v, static_cast<double>(m));
    }
    const double n = static_cast<double>(magnitudes.size());
    stats.mean_px = sum / n;
    stats.rms_px = std::sqrt(sum2 / n);
    stats.max_px = max_v;

    std::vector<float> sorted = magnitudes;
    std::sort(sorted.begin(), sorted.end());
    const auto rank = [&](double q) {
        const auto idx = static_cast<std::size_t>(
            std::max(0.0, std::ceil(q * n) - 1.0));
        return static_cast<double>(sorted[std::min(idx, sorted.size() - 1)]);
    };
    stats.median_px = rank(0.5);
    stats.p95_px = rank(0.95);
    return stats;
}

DriftProfile drift_profile(const std::vector<Vec2d>& per_slice_mean, int window) {
    if (per_slice_mean.empty())
        throw InvalidSpec("drift_profile: need at least one slice");
    if (window < 1 || window % 2 == 0)
        throw InvalidSpec("drift_profile: window must be odd and >= 1");

    DriftProfile profile;
    profile.window = window;
    profile.per_slice_mean = per_slice_mean;
    const int n = static_cast<int>(per_slice_mean.size());

    profile.cumulative.resize(n);
    Vec2d acc{};
    for (int z = 0; z < n; ++z) {
        acc = acc + per_slice_mean[z];
        profile.cumulative[z] = acc;
    }

    profile.smoothed.resize(n);
    const int half = window / 2;
    for (int z = 0; z < n; ++z) {
        const int lo = std::max(0, z - half);
        const int hi = std::min(n - 1, z + half);
        Vec2d s{};
        for (int k = lo; k <= hi; ++k) s = s + per_slice_mean[k];
        profile.smoothed[z] = s * (1.0 / (hi - lo + 1));
    }

    profile.score_px = 0.0;
    for (const Vec2d& s : profile.smoothed)
        profile.score_px = std::max(profile.score_px, s.norm());
    return profile;
}

MetricsRecord evaluate(const RegistrationResult& result, const DistortionRecord& record,
                       const Volume& original, const EvalOptions& opts) {
    const std::vector<int> survivors = record.surviving_slices();
    if (static_cast<int>(survivors.size()) != result.fields.nz())
        throw SliceSetMismatch("evaluate: result has " + std::to_string(result.fields.nz()) +
                               " fields but the record has " +
                               std::to_string(survivors.size()) + " surviving slices");
    if (survivors.empty()) throw SliceSetMismatch("evaluate: no surviving slices");
    if (original.nx != record.nx || original.ny != record.ny || original.nz != record.nz)
        throw DimensionMismatch("evaluate: original volume dims do not match the record");
    const auto [fnx, fny] = result.fields.dims();
    if (fnx != record.nx || fny != record.ny)
        throw DimensionMismatch("evaluate: result field dims do not match the record");

    MetricsRecord out;
    out.distortion_seed = record.spec.seed;
    out.options = opts;
    out.slices.resize(survivors.size());

    const int n_slices = static_cast<int>(survivors.size());
    std::vector<std::vector<float>> slice_mags(n_slices);
    const Interpolation bilinear{InterpKind::bilinear, 0.f};

    parallel_for(n_slices, [&](std::int64_t i) {
        const int z = survivors[i];
        const SliceDistortion& truth = record.slices[z];
        const Slice orig = original.slice(z);
        const Mask mask = make_mask(orig, opts.mask_threshold, opts.mask_margin);

        const DisplacementField residual = error_field(truth.composed, result.fields[static_cast<int>(i)]);

        std::vector<float>& mags = slice_mags[i];
        mags.reserve(mask.count);
        double mx = 0.0, my = 0.0;
        for (int y = 0; y < residual.ny; ++y) {
            for (int x = 0; x < residual.nx; ++x) {
                if (!mask.at(x, y)) continue;
                const Vec2 e = residual.at(x, y);
                mags.push_back(e.norm());
                mx += e.x;
                my += e.y;
            }
        }

        // Reconstruct the distorted slice from the record so staged and
        // one-shot runs score identically, then apply the correction.
        Slice distorted = warp_slice(orig, truth.composed, bilinear);
        if (truth.gamma != 1.0) {
            for (float& p : distorted.pixels)
                p = static_cast<float>(std::pow(static_cast<double>(p), truth.gamma));
        }
        const Slice corrected = warp_slice(distorted, result.fields[static_cast<int>(i)], bilinear);

        SliceMetrics& sm = out.slices[i];
        sm.z = z;
        sm.error = error_stats(mags);
        sm.similarity = similarity_suite(orig, corrected, mask);
        sm.mean_residual = {mx / static_cast<double>(mask.count),
                            my / static_cast<double>(mask.count)};
        sm.mask_px = mask.count;
        sm.mask_fallback = mask.fallback_used;
    });

    // Pooled aggregates: all masked pixels of all slices, combined in slice
    // order so the result is thread-count invariant.
    std::vector<float> pooled;
    std::size_t total = 0;
    for (const auto& mags : slice_mags) total += mags.size();
    pooled.reserve(total);
    for (const auto& mags : slice_mags) pooled.insert(pooled.end(), mags.begin(), mags.end());
    out.aggregate = error_stats(pooled);

    std::vector<Vec2d> means(n_slices);
    SimilarityStats sim_sum;
    for (int i = 0; i < n_slices; ++i) {
        means[i] = out.slices[i].mean_residual;
        sim_sum.mse += out.slices[i].similarity.mse;
        sim_sum.psnr_db += out.slices[i].similarity.psnr_db;
        sim_sum.ncc += out.slices[i].similarity.ncc;
        sim_sum.ssim += out.slices[i].similarity.ssim;
    }
    const double inv = 1.0 / n_slices;
    out.similarity_mean = {sim_sum.mse * inv, sim_sum.psnr_db * inv, sim_sum.ncc * inv,
                           sim_sum.ssim * inv};
    out.drift = drift_profile(means, opts.drift_window);
    return out;
}

// ---------------------------------------------------------------------------
// metrics interchange

namespace {

json stats_to_json(const ErrorStats& e) {
    return {{"mean_px", e.mean_px}, {"rms_px", e.rms_px}, {"median_px", e.median_px},
            {"p95_px", e.p95_px},   {"max_px", e.max_px}};
}

ErrorStats stats_from_json(const json& j) {
    return {j.at("mean_px"), j.at("rms_px"), j.at("median_px"), j.at("p95_px"),
            j.at("max_px")};
}

json sim_to_json(const SimilarityStats& s) {
    return {{"mse", s.mse}, {"psnr_db", s.psnr_db}, {"ncc", s.ncc}, {"ssim", s.ssim}};
}

// NaN (possible for ssim with no complete window) serializes as null.
double double_or_nan(const json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

SimilarityStats sim_from_json(const json& j) {
    return {double_or_nan(j.at("mse")), double_or_nan(j.at("psnr_db")),
            double_or_nan(j.at("ncc")), double_or_nan(j.at("ssim"))};
}

json vec_list_to_json(const std::vector<Vec2d>& v) {
    json out = json::array();
    for (const auto& e : v) out.push_back({e.x, e.y});
    return out;
}

std::vector<Vec2d> vec_list_from_json(const json& j) {
    std::vector<Vec2d> out;
    for (const auto& e : j) out.push_back({e.at(0), e.at(1)});
    return out;
}

} // namespace

void save_metrics(const MetricsRecord& record, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);

    json j;
    j["method"] = record.method;
    j["strategy"] = record.strategy;
    j["distortion_seed"] = record.distortion_seed;
    j["evaluation"] = {{"mask_threshold", record.options.mask_threshold},
                       {"mask_margin", record.options.mask_margin},
                       {"drift_window", record.options.drift_window}};
    json slices = json::array();
    for (const auto& s : record.slices) {
        json js = stats_to_json(s.error);
        const json sim = sim_to_json(s.similarity);
        js.update(sim);
        js["z"] = s.z;
        js["m_x_px"] = s.mean_residual.x;
        js["m_y_px"] = s.mean_residual.y;
        js["mask_px"] = s.mask_px;
        js["mask_fallback"] = s.mask_fallback;
        slices.push_back(std::move(js));
    }
    j["slices"] = std::move(slices);
    j["aggregate"] = stats_to_json(record.aggregate);
    j["similarity_mean"] = sim_to_json(record.similarity_mean);
    j["drift"] = {{"score_px", record.drift.score_px},
                  {"window", record.drift.window},
                  {"per_slice_mean", vec_list_to_json(record.drift.per_slice_mean)},
                  {"cumulative", vec_list_to_json(record.drift.cumulative)},
                  {"smoothed", vec_list_to_json(record.drift.smoothed)}};

    std::ofstream out(dir / "metrics.json");
    if (!out) throw IoFailure("save_metrics: cannot write metrics.json");
    out << j.dump(2) << "\n";

    std::ofstream csv(dir / "metrics.csv");
    if (!csv) throw IoFailure("save_metrics: cannot write metrics.csv");
    csv << "z,mean_px,rms_px,median_px,p95_px,max_px,mse,psnr_db,ncc,ssim,m_x_px,m_y_px\n";
    for (const auto& s : record.slices) {
        csv << s.z << ',' << format_number(s.error.mean_px) << ','
            << format_number(s.error.rms_px) << ',' << format_number(s.error.median_px) << ','
            << format_number(s.error.p95_px) << ',' << format_number(s.error.max_px) << ','
            << format_number(s.similarity.mse) << ',' << format_number(s.similarity.psnr_db)
            << ',' << format_number(s.similarity.ncc) << ','
            << format_number(s.similarity.ssim) << ',' << format_number(s.mean_residual.x)
            << ',' << format_number(s.mean_residual.y) << '\n';
    }
}

MetricsRecord load_metrics(const fs::path& dir) {
    const fs::path file = fs::is_directory(dir) ? dir / "metrics.json" : dir;
    std::ifstream in(file);
    if (!in) throw IoFailure("load_metrics: cannot open " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw HeaderMismatch("metrics.json: " + std::string(e.what()));
    }

    MetricsRecord record;
    try {
        record.method = j.value("method", "");
        record.strategy = j.value("strategy", "");
        record.distortion_seed = j.value("distortion_seed", 0ull);
        record.options.mask_threshold = j.at("evaluation").at("mask_threshold");
        record.options.mask_margin = j.at("evaluation").at("mask_margin");
        record.options.drift_window = j.at("evaluation").at("drift_window");
        for (const auto& js : j.at("slices")) {
            SliceMetrics s;
            s.z = js.at("z");
            s.error = stats_from_json(js);
            s.similarity = sim_from_json(js);
            s.mean_residual = {js.at("m_x_px"), js.at("m_y_px")};
            s.mask_px = js.value("mask_px", 0ll);
            s.mask_fallback = js.value("mask_fallback", false);
            record.slices.push_back(std::move(s));
        }
        record.aggregate = stats_from_json(j.at("aggregate"));
        record.similarity_mean = sim_from_json(j.at("similarity_mean"));
        record.drift.score_px = j.at("drift").at("score_px");
        record.drift.window = j.at("drift").at("window");
        record.drift.per_slice_mean = vec_list_from_json(j.at("drift").at("per_slice_mean"));
        record.drift.cumulative = vec_list_from_json(j.at("drift").at("cumulative"));
        record.drift.smoothed = vec_list_from_json(j.at("drift").at("smoothed"));
    } catch (const json::exception& e) {
        throw HeaderMismatch("metrics.json: " + std::string(e.what()));
    }
    return record;
}

} // namespace serireg
