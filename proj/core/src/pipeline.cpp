// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#include "serireg/pipeline.hpp"

#include <fstream>

#include <json.hpp>

#include "serireg/field_io.hpp"
#include "serireg/svg_report.hpp"

namespace serireg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

PhantomSpec phantom_from_json(const json& j) {
    PhantomSpec spec;
    try {
        spec.kind = phantom_kind_from_string(j.at("kind").get<std::string>());
        const auto& dims = j.at("dims");
        spec.nx = dims.at(0).get<int>();
        spec.ny = dims.at(1).get<int>();
        spec.nz = dims.at(2).get<int>();
        spec.seed = j.value("seed", 0ull);
        if (j.contains("tube")) {
            const auto& t = j.at("tube");
            if (t.contains("radius_px")) spec.tube.radius_px = t.at("radius_px").get<double>();
            if (t.contains("bend_amplitude_px"))
                spec.tube.bend_amplitude_px = t.at("bend_amplitude_px").get<double>();
            if (t.contains("bend_period_slices"))
                spec.tube.bend_period_slices = t.at("bend_period_slices").get<double>();
        }
        if (j.contains("spheres")) {
            const auto& s = j.at("spheres");
            spec.spheres.count = s.value("count", spec.spheres.count);
            if (s.contains("radius_min_px"))
                spec.spheres.radius_min_px = s.at("radius_min_px").get<double>();
            if (s.contains("radius_max_px"))
                spec.spheres.radius_max_px = s.at("radius_max_px").get<double>();
        }
        if (j.contains("checker")) {
            const auto& c = j.at("checker");
            spec.checker.cell_px = c.value("cell_px", spec.checker.cell_px);
            spec.checker.noise_std = c.value("noise_std", spec.checker.noise_std);
        }
    } catch (const json::exception& e) {
        throw InvalidSpec("phantom spec: " + std::string(e.what()));
    }
    spec.validate();
    return spec;
}

MethodOptions method_options_from_json(const json& j) {
    MethodOptions opts;
    try {
        opts.pyramid_levels = j.value("pyramid_levels", opts.pyramid_levels);
        if (j.contains("similarity")) {
            const std::string s = j.at("similarity").get<std::string>();
            if (s == "ssd")
                opts.similarity = Similarity::ssd;
            else if (s == "ncc")
                opts.similarity = Similarity::ncc;
            else
                throw InvalidSpec("method: unknown similarity \"" + s + "\"");
        }
        opts.theta_max_deg = j.value("theta_max_deg", opts.theta_max_deg);
        opts.theta_samples = j.value("theta_samples", opts.theta_samples);
        if (j.contains("elastic")) {
            const auto& e = j.at("elastic");
            opts.elastic.grid_px = e.value("grid_px", opts.elastic.grid_px);
            opts.elastic.lambda = e.value("lambda", opts.elastic.lambda);
            opts.elastic.step = e.value("step", opts.elastic.step);
            opts.elastic.max_iter = e.value("max_iter", opts.elastic.max_iter);
            opts.elastic.grad_tol = e.value("grad_tol", opts.elastic.grad_tol);
        }
    } catch (const json::exception& e) {
        throw InvalidSpec("method options: " + std::string(e.what()));
    }
    opts.validate();
    return opts;
}

MethodConfig method_from_json(const json& j, const fs::path& base_dir) {
    MethodConfig m;
    try {
        if (j.contains("import")) {
            m.kind = MethodConfig::Kind::import;
            fs::path p = j.at("import").get<std::string>();
            m.import_path = p.is_absolute() ? p : base_dir / p;
            m.label = j.value("label", m.import_path.filename().string());
            if (j.contains("kind")) {
                const std::string k = j.at("kind").get<std::string>();
                if (k == "fields")
                    m.import_kind = ImportKind::fields;
                else if (k == "rigid_params")
                    m.import_kind = ImportKind::rigid_params;
                else
                    throw InvalidSpec("method: unknown import kind \"" + k + "\"");
            }
            return m;
        }
        const std::string name = j.at("name").get<std::string>();
        if (name == "oracle") {
            m.kind = MethodConfig::Kind::oracle;
            m.oracle_tol_px = j.value("tol_px", 0.01);
            m.label = j.value("label", std::string("oracle"));
            return m;
        }
        m.kind = MethodConfig::Kind::builtin;
        m.method.kind = method_kind_from_string(name);
        m.method.options = method_options_from_json(j);
        m.label = j.value("label", name);
    } catch (const json::exception& e) {
        throw InvalidSpec("method entry: " + std::string(e.what()));
    }
    return m;
}

StackStrategy strategy_from_json(const json& j) {
    if (j.is_null()) return {};
    try {
        return StackStrategy::from_string(j.at("kind").get<std::string>(),
                                          j.value("reference", -1));
    } catch (const json::exception& e) {
        throw InvalidSpec("strategy: " + std::string(e.what()));
    }
}

RegistrationResult load_result_for_eval(const fs::path& dir, const DistortionRecord& record) {
    return import_external(dir, detect_import_kind(dir), record.nx, record.ny);
}

} // namespace

void PipelineConfig::validate() const {
    if (!phantom && input_path.empty())
        throw InvalidSpec("pipeline: need either a phantom spec or an input path");
    if (methods.empty()) throw InvalidSpec("pipeline: need at least one method");
    if (output.empty()) throw InvalidSpec("pipeline: output directory not set");
    if (!input_path.empty() &&
        fs::weakly_canonical(output) == fs::weakly_canonical(input_path))
        throw InvalidSpec("pipeline: output dir must differ from input dir");
    if (bit_depth != 8 && bit_depth != 16)
        throw InvalidSpec("pipeline: bit_depth must be 8 or 16");
    for (std::size_t i = 0; i < methods.size(); ++i)
        for (std::size_t k = i + 1; k < methods.size(); ++k)
            if (methods[i].label == methods[k].label)
                throw InvalidSpec("pipeline: duplicate method label \"" + methods[i].label +
                                  "\" (set explicit labels)");
    distortion.validate();
}

PipelineConfig pipeline_config_from_json_text(const std::string& text,
                                              const fs::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InvalidSpec("config: " + std::string(e.what()));
    }

    PipelineConfig cfg;
    try {
        const auto& input = j.at("input");
        if (input.contains("phantom")) {
            cfg.phantom = phantom_from_json(input.at("phantom"));
        } else if (input.contains("path")) {
            fs::path p = input.at("path").get<std::string>();
            cfg.input_path = p.is_absolute() ? p : base_dir / p;
        } else {
            throw InvalidSpec("config: input needs \"phantom\" or \"path\"");
        }
        cfg.distortion = distortion_spec_from_json_text(j.at("distortion").dump());
        for (const auto& jm : j.at("methods")) cfg.methods.push_back(method_from_json(jm, base_dir));
        cfg.strategy = strategy_from_json(j.value("strategy", json()));
        if (j.contains("evaluation")) {
            const auto& e = j.at("evaluation");
            cfg.evaluation.mask_threshold = e.value("mask_threshold", cfg.evaluation.mask_threshold);
            cfg.evaluation.mask_margin = e.value("mask_margin", cfg.evaluation.mask_margin);
            cfg.evaluation.drift_window = e.value("drift_window", cfg.evaluation.drift_window);
        }
        fs::path out = j.at("output").get<std::string>();
        cfg.output = out.is_absolute() ? out : base_dir / out;
        cfg.bit_depth = j.value("bit_depth", 16);
    } catch (const json::exception& e) {
        throw InvalidSpec("config: " + std::string(e.what()));
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IoFailure("cannot open config " + file.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    fs::path base = file.parent_path();
    if (base.empty()) base = ".";
    return pipeline_config_from_json_text(text, base);
}

void stage_phantom(const PhantomSpec& spec, const fs::path& out_dir, int bit_depth) {
    save_stack(generate_phantom(spec), out_dir, bit_depth);
}

void stage_distort(const fs::path& original_dir, const DistortionSpec& spec,
                   const fs::path& out_dir, int bit_depth) {
    const Volume original = load_stack(original_dir);
    auto [distorted, record] = distort_volume(original, spec);
    save_stack(distorted, out_dir / "distorted", bit_depth);
    save_record(record, out_dir / "record");
}

void stage_register(const fs::path& distorted_dir, const RegistrationMethod& method,
                    const StackStrategy& strategy, const fs::path& out_dir) {
    const Volume distorted = load_stack(distorted_dir);
    save_result(register_stack(distorted, method, strategy), out_dir);
}

void stage_register_oracle(const fs::path& record_dir, double tol_px,
                           const fs::path& out_dir) {
    const DistortionRecord record = load_record(record_dir);
    const FieldStack fields = oracle_recovery(record, tol_px);
    RegistrationResult result;
    result.fields = fields;
    result.diagnostics.resize(fields.nz());
    for (int z = 0; z < fields.nz(); ++z) result.diagnostics[z] = {z, 0.0, 0, true};
    save_result(result, out_dir);
}

void stage_import(const fs::path& src_dir, std::optional<ImportKind> kind,
                  const fs::path& record_dir, const fs::path& out_dir) {
    const DistortionRecord record = load_record(record_dir);
    const ImportKind k = kind ? *kind : detect_import_kind(src_dir);
    const RegistrationResult result = import_external(src_dir, k, record.nx, record.ny);
    save_result(result, out_dir);
}

MetricsRecord stage_evaluate(const fs::path& result_dir, const fs::path& record_dir,
                             const fs::path& original_dir, const EvalOptions& opts,
                             const std::string& method_label,
                             const std::string& strategy_name, const fs::path& out_dir) {
    const DistortionRecord record = load_record(record_dir);
    const Volume original = load_stack(original_dir);
    const RegistrationResult result = load_result_for_eval(result_dir, record);
    MetricsRecord metrics = evaluate(result, record, original, opts);
    metrics.method = method_label;
    metrics.strategy = strategy_name;
    save_metrics(metrics, out_dir);
    return metrics;
}

void stage_report(const std::vector<fs::path>& metrics_dirs, const fs::path& out_dir) {
    if (metrics_dirs.empty()) throw InvalidSpec("report: need at least one metrics dir");
    std::vector<MetricsRecord> records;
    records.reserve(metrics_dirs.size());
    for (const auto& dir : metrics_dirs) records.push_back(load_metrics(dir));
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    write_comparison_csv(records, out_dir / "comparison.csv");
    emit_plots(records, out_dir / "plots");
}

void run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(cfg.output, ec);

    fs::path original_dir = cfg.input_path;
    if (cfg.phantom) {
        original_dir = cfg.output / "original";
        stage_phantom(*cfg.phantom, original_dir, cfg.bit_depth);
    }

    stage_distort(original_dir, cfg.distortion, cfg.output, cfg.bit_depth);
    const fs::path distorted_dir = cfg.output / "distorted";
    const fs::path record_dir = cfg.output / "record";

    std::vector<fs::path> metrics_dirs;
    for (const MethodConfig& m : cfg.methods) {
        const fs::path method_dir = cfg.output / m.label;
        switch (m.kind) {
            case MethodConfig::Kind::builtin:
                stage_register(distorted_dir, m.method, cfg.strategy, method_dir);
                break;
            case MethodConfig::Kind::oracle:
                stage_register_oracle(record_dir, m.oracle_tol_px, method_dir);
                break;
            case MethodConfig::Kind::import:
                stage_import(m.import_path, m.import_kind, record_dir, method_dir);
                break;
        }
        stage_evaluate(method_dir, record_dir, original_dir, cfg.evaluation, m.label,
                       cfg.strategy.name(), method_dir);
        metrics_dirs.push_back(method_dir);
    }
    stage_report(metrics_dirs, cfg.output);
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DataError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

} // namespace serireg
