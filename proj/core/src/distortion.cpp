// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#include "serireg/distortion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "serireg/field_io.hpp"
#include "serireg/parallel.hpp"
#include "serireg/rng.hpp"

namespace serireg {

namespace fs = std::filesystem;
using nlohmann::json;

void DistortionSpec::validate() const {
    if (sigma_theta_rad < 0 || sigma_t_px < 0 || elastic.sigma_px < 0 ||
        intensity.sigma_gamma < 0)
        throw InvalidSpec("DistortionSpec: sigmas must be >= 0");
    if (elastic.grid_px < 4.0)
        throw InvalidSpec("DistortionSpec: elastic grid spacing must be >= 4 px");
    if (p_drop < 0.0 || p_drop > 0.5)
        throw InvalidSpec("DistortionSpec: p_drop must lie in [0, 0.5]");
    if (clamp_k <= 0.0) throw InvalidSpec("DistortionSpec: clamp_k must be positive");
}

DistortionSpec DistortionSpec::preset_default(std::uint64_t seed) {
    DistortionSpec spec;
    spec.seed = seed;
    spec.sigma_theta_rad = 2.0 * std::numbers::pi / 180.0;
    spec.sigma_t_px = 5.0;
    spec.elastic.grid_px = 64.0;
    spec.elastic.sigma_px = 3.0;
    spec.intensity.sigma_gamma = 0.05;
    spec.p_drop = 0.02;
    spec.clamp_k = 3.0;
    return spec;
}

std::vector<int> DistortionRecord::surviving_slices() const {
    std::vector<int> out;
    out.reserve(slices.size());
    for (int z = 0; z < static_cast<int>(slices.size()); ++z)
        if (!slices[z].dropped) out.push_back(z);
    return out;
}

RigidTransform2D sample_rigid(const DistortionSpec& spec, int z, int nx, int ny) {
    SubstreamRng rng(spec.seed, static_cast<std::uint64_t>(z), "rigid");
    RigidTransform2D t;
    t.theta_rad = spec.sigma_theta_rad * rng.next_normal();
    t.tx = spec.sigma_t_px * rng.next_normal();
    t.ty = spec.sigma_t_px * rng.next_normal();
    t.cx = (nx - 1) / 2.0;
    t.cy = (ny - 1) / 2.0;
    return t;
}

DisplacementField sample_elastic(const DistortionSpec& spec, int z, int nx, int ny) {
    DisplacementField field(nx, ny);
    if (spec.elastic.sigma_px == 0.0) return field;

    const double g = spec.elastic.grid_px;
    // Interior nodes 0..n-1 cover [0, (n-1)*g] ⊇ [0, nx-1]; one margin node
    // per side, indices -1 and n.
    const int nodes_x = static_cast<int>(std::ceil((nx - 1) / g)) + 1;
    const int nodes_y = static_cast<int>(std::ceil((ny - 1) / g)) + 1;
    const int total_x = nodes_x + 2;
    const int total_y = nodes_y + 2;

    SubstreamRng rng(spec.seed, static_cast<std::uint64_t>(z), "elastic");
    const float limit = static_cast<float>(spec.clamp_k * spec.elastic.sigma_px);
    std::vector<Vec2> nodes(static_cast<std::size_t>(total_x) * total_y);
    for (Vec2& n : nodes) {
        n.x = std::clamp(static_cast<float>(spec.elastic.sigma_px * rng.next_normal()),
                         -limit, limit);
        n.y = std::clamp(static_cast<float>(spec.elastic.sigma_px * rng.next_normal()),
                         -limit, limit);
    }
    const auto node_at = [&](int i, int j) -> Vec2 {
        // Taps beyond the margin carry zero Catmull-Rom weight; clamping keeps
        // the reads in bounds without changing the result.
        i = std::clamp(i, -1, nodes_x);
        j = std::clamp(j, -1, nodes_y);
        return nodes[static_cast<std::size_t>(j + 1) * total_x + (i + 1)];
    };
    const auto kernel = [](double t) -> double {
        t = std::fabs(t);
        if (t < 1.0) return ((1.5 * t - 2.5) * t) * t + 1.0;
        if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
        return 0.0;
    };

    for (int y = 0; y < ny; ++y) {
        const double sy = y / g;
        const int j0 = static_cast<int>(std::floor(sy));
        double wy[4];
        for (int j = 0; j < 4; ++j) wy[j] = kernel(sy - (j0 + j - 1));
        for (int x = 0; x < nx; ++x) {
            const double sx = x / g;
            const int i0 = static_cast<int>(std::floor(sx));
            double wx[4];
            for (int i = 0; i < 4; ++i) wx[i] = kernel(sx - (i0 + i - 1));
            double ux = 0.0, uy = 0.0;
            for (int j = 0; j < 4; ++j) {
                double rx = 0.0, ry = 0.0;
                for (int i = 0; i < 4; ++i) {
                    const Vec2 n = node_at(i0 + i - 1, j0 + j - 1);
                    rx += wx[i] * n.x;
                    ry += wx[i] * n.y;
                }
                ux += wy[j] * rx;
                uy += wy[j] * ry;
            }
            field.at(x, y) = {static_cast<float>(ux), static_cast<float>(uy)};
        }
    }
    return field;
}

namespace {

std::vector<bool> sample_drops(const DistortionSpec& spec, int nz) {
    std::vector<bool> sampled(nz, false);
    if (spec.p_drop > 0.0) {
        for (int z = 0; z < nz; ++z) {
            SubstreamRng rng(spec.seed, static_cast<std::uint64_t>(z), "drop");
            sampled[z] = rng.next_unit() < spec.p_drop;
        }
    }
    // Never drop two adjacent slices: the second of a pair is kept.
    std::vector<bool> final_drop(nz, false);
    for (int z = 0; z < nz; ++z)
        final_drop[z] = sampled[z] && (z == 0 || !final_drop[z - 1]);
    return final_drop;
}

double sample_gamma(const DistortionSpec& spec, int z) {
    if (spec.intensity.sigma_gamma == 0.0) return 1.0;
    SubstreamRng rng(spec.seed, static_cast<std::uint64_t>(z), "gamma");
    return std::exp(spec.intensity.sigma_gamma * rng.next_normal());
}

} // namespace

std::pair<Volume, DistortionRecord> distort_volume(const Volume& v, const DistortionSpec& spec) {
    spec.validate();
    v.validate();

    DistortionRecord record;
    record.spec = spec;
    record.rng_algorithm = kRngAlgorithm;
    record.nx = v.nx;
    record.ny = v.ny;
    record.nz = v.nz;
    record.slices.resize(v.nz);

    const std::vector<bool> dropped = sample_drops(spec, v.nz);
    std::vector<Slice> distorted(v.nz);

    parallel_for(v.nz, [&](std::int64_t zi) {
        const int z = static_cast<int>(zi);
        SliceDistortion& sd = record.slices[z];
        sd.rigid = sample_rigid(spec, z, v.nx, v.ny);
        sd.elastic = sample_elastic(spec, z, v.nx, v.ny);
        sd.composed = compose_fields(sd.elastic, rigid_to_field(sd.rigid, v.nx, v.ny));
        sd.gamma = sample_gamma(spec, z);
        sd.dropped = dropped[z];
        if (sd.dropped) return;

        Slice warped = warp_slice(v.slice(z), sd.composed, {InterpKind::bilinear, 0.f});
        if (sd.gamma != 1.0) {
            for (float& p : warped.pixels)
                p = static_cast<float>(std::pow(static_cast<double>(p), sd.gamma));
        }
        distorted[z] = std::move(warped);
    });

    for (int z = 0; z < v.nz; ++z)
        if (dropped[z]) record.dropped_slices.push_back(z);

    Volume out(v.nx, v.ny, v.nz - static_cast<int>(record.dropped_slices.size()));
    out.spacing_um = v.spacing_um;
    out.provenance = v.provenance;
    out.provenance["pipeline_step"] = "distort";
    out.provenance["distortion_seed"] = std::to_string(spec.seed);
    int zi = 0;
    for (int z = 0; z < v.nz; ++z) {
        if (dropped[z]) continue;
        out.set_slice(zi++, distorted[z]);
    }
    return {std::move(out), std::move(record)};
}

FieldStack oracle_recovery(const DistortionRecord& record, double tol, int max_iter) {
    const std::vector<int> survivors = record.surviving_slices();
    FieldStack stack;
    stack.fields.resize(survivors.size());
    parallel_for(static_cast<std::int64_t>(survivors.size()), [&](std::int64_t i) {
        const int z = survivors[i];
        try {
            stack.fields[i] = invert_field(record.slices[z].composed, tol, max_iter).field;
        } catch (const NotConverged& e) {
            throw NotConverged("oracle_recovery: slice " + std::to_string(z) + ": " + e.what(),
                               e.best_residual, e.iterations);
        }
    });
    return stack;
}

// ---------------------------------------------------------------------------
// record interchange

namespace {

json spec_to_json(const DistortionSpec& spec) {
    json j;
    j["seed"] = spec.seed;
    j["sigma_theta_rad"] = spec.sigma_theta_rad;
    j["sigma_t_px"] = spec.sigma_t_px;
    j["elastic"] = {{"grid_px", spec.elastic.grid_px}, {"sigma_px", spec.elastic.sigma_px}};
    j["intensity"] = {{"sigma_gamma", spec.intensity.sigma_gamma}};
    j["p_drop"] = spec.p_drop;
    j["clamp_k"] = spec.clamp_k;
    return j;
}

DistortionSpec spec_from_json(const json& j) {
    DistortionSpec spec;
    try {
        if (j.contains("preset")) {
            const std::string preset = j.at("preset").get<std::string>();
            if (preset == "default")
                spec = DistortionSpec::preset_default(0);
            else
                throw InvalidSpec("distortion spec: unknown preset \"" + preset + "\"");
        }
        spec.seed = j.at("seed").get<std::uint64_t>();
        spec.sigma_theta_rad = j.value("sigma_theta_rad", spec.sigma_theta_rad);
        spec.sigma_t_px = j.value("sigma_t_px", spec.sigma_t_px);
        if (j.contains("elastic")) {
            spec.elastic.grid_px = j.at("elastic").value("grid_px", spec.elastic.grid_px);
            spec.elastic.sigma_px = j.at("elastic").value("sigma_px", spec.elastic.sigma_px);
        }
        if (j.contains("intensity"))
            spec.intensity.sigma_gamma =
                j.at("intensity").value("sigma_gamma", spec.intensity.sigma_gamma);
        spec.p_drop = j.value("p_drop", spec.p_drop);
        spec.clamp_k = j.value("clamp_k", spec.clamp_k);
    } catch (const json::exception& e) {
        throw InvalidSpec("distortion spec: " + std::string(e.what()));
    }
    spec.validate();
    return spec;
}

} // namespace

DistortionSpec distortion_spec_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InvalidSpec("distortion spec: " + std::string(e.what()));
    }
    return spec_from_json(j);
}

void save_record(const DistortionRecord& record, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir))
        throw IoFailure("save_record: cannot create directory " + dir.string());

    FieldStack composed, elastic;
    composed.fields.reserve(record.slices.size());
    elastic.fields.reserve(record.slices.size());
    for (const auto& sd : record.slices) {
        composed.fields.push_back(sd.composed);
        elastic.fields.push_back(sd.elastic);
    }
    save_field_stack(composed, dir / "composed");
    save_field_stack(elastic, dir / "elastic");

    json j;
    j["spec"] = spec_to_json(record.spec);
    j["rng"] = record.rng_algorithm;
    j["dims"] = {record.nx, record.ny};
    j["nz"] = record.nz;
    j["dropped_slices"] = record.dropped_slices;
    json slices = json::array();
    for (int z = 0; z < static_cast<int>(record.slices.size()); ++z) {
        const auto& sd = record.slices[z];
        slices.push_back({
            {"z", z},
            {"theta_rad", sd.rigid.theta_rad},
            {"tx_px", sd.rigid.tx},
            {"ty_px", sd.rigid.ty},
            {"cx_px", sd.rigid.cx},
            {"cy_px", sd.rigid.cy},
            {"gamma", sd.gamma},
            {"dropped", sd.dropped},
        });
    }
    j["slices"] = std::move(slices);
    std::ofstream out(dir / "record.json");
    if (!out) throw IoFailure("save_record: cannot write record.json");
    out << j.dump(2) << "\n";
}

DistortionRecord load_record(const fs::path& dir) {
    std::ifstream in(dir / "record.json");
    if (!in) throw IoFailure("load_record: missing record.json in " + dir.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw HeaderMismatch("record.json: " + std::string(e.what()));
    }

    DistortionRecord record;
    try {
        record.spec = spec_from_json(j.at("spec"));
        record.rng_algorithm = j.value("rng", std::string(kRngAlgorithm));
        record.nx = j.at("dims").at(0).get<int>();
        record.ny = j.at("dims").at(1).get<int>();
        record.nz = j.at("nz").get<int>();
        record.dropped_slices = j.value("dropped_slices", std::vector<int>{});

        record.slices.resize(record.nz);
        for (const auto& js : j.at("slices")) {
            const int z = js.at("z").get<int>();
            if (z < 0 || z >= record.nz)
                throw HeaderMismatch("record.json: slice index out of range");
            SliceDistortion& sd = record.slices[z];
            sd.rigid.theta_rad = js.at("theta_rad").get<double>();
            sd.rigid.tx = js.at("tx_px").get<double>();
            sd.rigid.ty = js.at("ty_px").get<double>();
            sd.rigid.cx = js.at("cx_px").get<double>();
            sd.rigid.cy = js.at("cy_px").get<double>();
            sd.gamma = js.at("gamma").get<double>();
            sd.dropped = js.value("dropped", false);
        }
    } catch (const json::exception& e) {
        throw HeaderMismatch("record.json: " + std::string(e.what()));
    }

    FieldStack composed = load_field_stack(dir / "composed");
    FieldStack elastic = load_field_stack(dir / "elastic");
    if (composed.nz() != record.nz || elastic.nz() != record.nz)
        throw HeaderMismatch("load_record: field stack nz disagrees with record.json");
    const auto [nx, ny] = composed.dims();
    if (nx != record.nx || ny != record.ny)
        throw HeaderMismatch("load_record: field dims disagree with record.json");
    for (int z = 0; z < record.nz; ++z) {
        record.slices[z].composed = std::move(composed.fields[z]);
        record.slices[z].elastic = std::move(elastic.fields[z]);
    }
    return record;
}

} // namespace serireg
