// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0
//
// serireg: generate registration test cases by distorting registered stacks,
// run baseline registrations, and score results against the recorded ground
// truth. Each pipeline stage is also exposed as its own subcommand so
// external tools can be slotted in between.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "serireg/parallel.hpp"
#include "serireg/pipeline.hpp"

namespace {

using namespace serireg;
namespace fs = std::filesystem;

struct DimsArg {
    int nx = 0, ny = 0, nz = 0;
};

DimsArg parse_dims(const std::string& text) {
    DimsArg d;
    if (std::sscanf(text.c_str(), "%dx%dx%d", &d.nx, &d.ny, &d.nz) != 3)
        throw InvalidSpec("--dims expects WxHxD, e.g. 128x128x64");
    return d;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

DistortionSpec distortion_from_config_file(const fs::path& path) {
    const std::string text = read_file(path);
    // Accept either a bare distortion spec or a full pipeline config.
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (!j.is_discarded() && j.contains("distortion"))
        return distortion_spec_from_json_text(j.at("distortion").dump());
    return distortion_spec_from_json_text(text);
}

int run(int argc, char** argv) {
    CLI::App app{"serial-section registration evaluation toolkit"};
    app.require_subcommand(1);
    // Global options (like --threads) may appear after the subcommand too.
    app.fallthrough();

    int threads = 0;
    app.add_option("--threads", threads, "worker threads (default: SERIREG_THREADS or all cores)");

    // --- pipeline ---
    auto* cmd_pipeline = app.add_subcommand("pipeline", "run phantom/distort/register/evaluate/report end to end");
    std::string pipeline_config;
    std::string pipeline_out;
    cmd_pipeline->add_option("--config", pipeline_config, "JSON config file")->required();
    cmd_pipeline->add_option("--out", pipeline_out, "override the config's output dir");

    // --- phantom ---
    auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic test volume");
    std::string ph_kind = "bent_tube", ph_dims, ph_out;
    std::uint64_t ph_seed = 0;
    int ph_bits = 16;
    double ph_radius = -1, ph_amplitude = -1, ph_period = -1;
    int ph_count = 12;
    double ph_rmin = -1, ph_rmax = -1;
    int ph_cell = 16;
    double ph_noise = 0.1;
    cmd_phantom->add_option("--kind", ph_kind, "bent_tube | spheres | checker_noise");
    cmd_phantom->add_option("--dims", ph_dims, "volume dims, WxHxD")->required();
    cmd_phantom->add_option("--seed", ph_seed, "texture/placement seed");
    cmd_phantom->add_option("--out", ph_out, "output stack directory")->required();
    cmd_phantom->add_option("--bit-depth", ph_bits, "8 or 16 (default 16)");
    cmd_phantom->add_option("--radius", ph_radius, "tube radius [px]");
    cmd_phantom->add_option("--amplitude", ph_amplitude, "tube bend amplitude [px]");
    cmd_phantom->add_option("--period", ph_period, "tube bend period [slices]");
    cmd_phantom->add_option("--count", ph_count, "spheres: count");
    cmd_phantom->add_option("--radius-min", ph_rmin, "spheres: min radius [px]");
    cmd_phantom->add_option("--radius-max", ph_rmax, "spheres: max radius [px]");
    cmd_phantom->add_option("--cell", ph_cell, "checker: cell size [px]");
    cmd_phantom->add_option("--noise-std", ph_noise, "checker: noise std");

    // --- distort ---
    auto* cmd_distort = app.add_subcommand("distort", "apply seeded cutting distortion to a stack");
    std::string di_in, di_config, di_out;
    int di_bits = 16;
    cmd_distort->add_option("--in", di_in, "input stack directory")->required();
    cmd_distort->add_option("--config", di_config, "JSON distortion spec (or pipeline config)")->required();
    cmd_distort->add_option("--out", di_out, "output directory (distorted/ + record/)")->required();
    cmd_distort->add_option("--bit-depth", di_bits, "8 or 16 (default 16)");

    // --- register ---
    auto* cmd_register = app.add_subcommand("register", "register a stack with a built-in method");
    std::string rg_in, rg_method, rg_strategy = "chain", rg_config, rg_out;
    int rg_reference = -1;
    cmd_register->add_option("--in", rg_in, "distorted stack directory")->required();
    cmd_register->add_option("--method", rg_method, "identity | translation | rigid | elastic")->required();
    cmd_register->add_option("--strategy", rg_strategy, "chain | fixed (default chain)");
    cmd_register->add_option("--reference", rg_reference, "fixed strategy reference slice (default mid)");
    cmd_register->add_option("--config", rg_config, "JSON method options");
    cmd_register->add_option("--out", rg_out, "output directory (fields + diagnostics.csv)")->required();

    // --- evaluate ---
    auto* cmd_evaluate = app.add_subcommand("evaluate", "score a result against the recorded ground truth");
    std::string ev_result, ev_record, ev_original, ev_out, ev_label = "external";
    double ev_threshold = 0.1;
    int ev_margin = 4, ev_window = 9;
    cmd_evaluate->add_option("--result", ev_result, "result dir (fields or transforms.json)")->required();
    cmd_evaluate->add_option("--record", ev_record, "distortion record dir")->required();
    cmd_evaluate->add_option("--original", ev_original, "original stack dir")->required();
    cmd_evaluate->add_option("--out", ev_out, "output directory")->required();
    cmd_evaluate->add_option("--label", ev_label, "method label for the report");
    cmd_evaluate->add_option("--mask-threshold", ev_threshold, "foreground threshold (default 0.1)");
    cmd_evaluate->add_option("--mask-margin", ev_margin, "mask erosion margin [px] (default 4)");
    cmd_evaluate->add_option("--drift-window", ev_window, "drift smoothing window (default 9)");

    // --- report ---
    auto* cmd_report = app.add_subcommand("report", "combine metrics into comparison.csv + SVG plots");
    std::vector<std::string> rp_metrics;
    std::string rp_out;
    cmd_report->add_option("--metrics", rp_metrics, "metrics directories")->required()->expected(-1);
    cmd_report->add_option("--out", rp_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);
    if (threads > 0) set_thread_count(threads);

    if (*cmd_pipeline) {
        PipelineConfig cfg = load_pipeline_config(pipeline_config);
        if (!pipeline_out.empty()) cfg.output = pipeline_out;
        run_pipeline(cfg);
        std::cout << "pipeline complete: " << cfg.output.string() << "\n";
    } else if (*cmd_phantom) {
        const DimsArg d = parse_dims(ph_dims);
        PhantomSpec spec;
        spec.kind = phantom_kind_from_string(ph_kind);
        spec.nx = d.nx;
        spec.ny = d.ny;
        spec.nz = d.nz;
        spec.seed = ph_seed;
        if (ph_radius > 0) spec.tube.radius_px = ph_radius;
        if (ph_amplitude >= 0) spec.tube.bend_amplitude_px = ph_amplitude;
        if (ph_period > 0) spec.tube.bend_period_slices = ph_period;
        spec.spheres.count = ph_count;
        if (ph_rmin > 0) spec.spheres.radius_min_px = ph_rmin;
        if (ph_rmax > 0) spec.spheres.radius_max_px = ph_rmax;
        spec.checker.cell_px = ph_cell;
        spec.checker.noise_std = ph_noise;
        stage_phantom(spec, ph_out, ph_bits);
        std::cout << "phantom written: " << ph_out << "\n";
    } else if (*cmd_distort) {
        stage_distort(di_in, distortion_from_config_file(di_config), di_out, di_bits);
        std::cout << "distorted stack + record written: " << di_out << "\n";
    } else if (*cmd_register) {
        RegistrationMethod method;
        method.kind = method_kind_from_string(rg_method);
        if (!rg_config.empty()) {
            auto j = nlohmann::json::parse(read_file(rg_config), nullptr, false);
            if (j.is_discarded()) throw InvalidSpec("register: --config is not valid JSON");
            // Accept a bare options object or a pipeline config with a
            // matching methods entry.
            if (j.contains("methods")) {
                for (const auto& jm : j.at("methods"))
                    if (jm.value("name", "") == rg_method) {
                        j = jm;
                        break;
                    }
            }
            PipelineConfig tmp; // reuse the option parser via a methods entry
            nlohmann::json entry = j;
            entry["name"] = rg_method;
            nlohmann::json cfg_json = {
                {"input", {{"path", "."}}},
                {"distortion", {{"seed", 0}}},
                {"methods", {entry}},
                {"output", "unused"},
            };
            tmp = pipeline_config_from_json_text(cfg_json.dump(), ".");
            method = tmp.methods.front().method;
        }
        stage_register(rg_in, method, StackStrategy::from_string(rg_strategy, rg_reference),
                       rg_out);
        std::cout << "registration result written: " << rg_out << "\n";
    } else if (*cmd_evaluate) {
        EvalOptions opts{ev_threshold, ev_margin, ev_window};
        const MetricsRecord m =
            stage_evaluate(ev_result, ev_record, ev_original, opts, ev_label, "external", ev_out);
        std::cout << "metrics written: " << ev_out << " (mean error "
                  << m.aggregate.mean_px << " px)\n";
    } else if (*cmd_report) {
        std::vector<fs::path> dirs(rp_metrics.begin(), rp_metrics.end());
        stage_report(dirs, rp_out);
        std::cout << "report written: " << rp_out << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "serireg: error: " << e.what() << "\n";
        return serireg::exit_code_for(e);
    }
}
