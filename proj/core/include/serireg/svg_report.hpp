// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <vector>

#include "serireg/metrics.hpp"

namespace serireg {

/// Standalone SVG plots (no external assets): `mean_error.svg` with the
/// per-slice mean error curve of every record, and `drift.svg` with the
/// cumulative drift magnitude ||C_z||. The plotted numbers are embedded in an
/// SVG <metadata> block using the same formatter as metrics.csv, so the two
/// can be cross-checked byte for byte.
void emit_plots(const std::vector<MetricsRecord>& records,
                const std::filesystem::path& out_dir);

/// One row per method: aggregate error statistics, drift score, and mean
/// similarity values.
void write_comparison_csv(const std::vector<MetricsRecord>& records,
                          const std::filesystem::path& file);

} // namespace serireg
