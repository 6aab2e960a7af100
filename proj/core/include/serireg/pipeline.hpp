// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "serireg/distortion.hpp"
#include "serireg/image_io.hpp"
#include "serireg/metrics.hpp"
#include "serireg/phantom.hpp"
#include "serireg/registration.hpp"

namespace serireg {

/// One entry of the methods list: a built-in baseline, the oracle recovery
/// (the exact inverse of the recorded distortion), or an external result
/// imported from files.
struct MethodConfig {
    enum class Kind { builtin, oracle, import };
    Kind kind = Kind::builtin;
    std::string label;
    RegistrationMethod method;                // builtin
    double oracle_tol_px = 0.01;              // oracle
    std::filesystem::path import_path;        // import
    std::optional<ImportKind> import_kind;    // autodetected when unset
};

struct PipelineConfig {
    std::optional<PhantomSpec> phantom; // either a phantom...
    std::filesystem::path input_path;   // ...or an existing stack directory
    DistortionSpec distortion;
    std::vector<MethodConfig> methods;
    StackStrategy strategy;
    EvalOptions evaluation;
    std::filesystem::path output;
    int bit_depth = 16;

    void validate() const;
};

/// Parse a JSON config; relative paths resolve against base_dir.
PipelineConfig pipeline_config_from_json_text(const std::string& text,
                                              const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& file);

// Each pipeline stage works purely through files, so running a stage
// standalone produces exactly the files the one-shot pipeline writes.

/// Generate a phantom and save it as a raster stack.
void stage_phantom(const PhantomSpec& spec, const std::filesystem::path& out_dir,
                   int bit_depth);

/// Load a stack, distort it, write <out>/distorted and <out>/record.
void stage_distort(const std::filesystem::path& original_dir, const DistortionSpec& spec,
                   const std::filesystem::path& out_dir, int bit_depth);

/// Register the (distorted) stack in original_dir and save the result.
void stage_register(const std::filesystem::path& distorted_dir,
                    const RegistrationMethod& method, const StackStrategy& strategy,
                    const std::filesystem::path& out_dir);

/// Invert the recorded ground truth: the perfect registrator.
void stage_register_oracle(const std::filesystem::path& record_dir, double tol_px,
                           const std::filesystem::path& out_dir);

/// Validate an external result against the record dims and save a normalized
/// copy (fields + diagnostics).
void stage_import(const std::filesystem::path& src_dir, std::optional<ImportKind> kind,
                  const std::filesystem::path& record_dir,
                  const std::filesystem::path& out_dir);

/// Score a saved result against a saved record and original stack; writes
/// metrics.json/metrics.csv into out_dir and returns the record.
MetricsRecord stage_evaluate(const std::filesystem::path& result_dir,
                             const std::filesystem::path& record_dir,
                             const std::filesystem::path& original_dir,
                             const EvalOptions& opts, const std::string& method_label,
                             const std::string& strategy_name,
                             const std::filesystem::path& out_dir);

/// comparison.csv plus SVG plots from saved metrics directories.
void stage_report(const std::vector<std::filesystem::path>& metrics_dirs,
                  const std::filesystem::path& out_dir);

/// phantom? -> distort -> (register|oracle|import -> evaluate) per method ->
/// report. Every hand-off goes through the files the stages write.
void run_pipeline(const PipelineConfig& cfg);

/// CLI exit code for an error: 2 config, 3 data, 4 numeric, 1 anything else.
int exit_code_for(const std::exception& e);

} // namespace serireg
