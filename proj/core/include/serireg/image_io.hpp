// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "serireg/volume.hpp"

namespace serireg {

enum class RasterFormat { png, tiff };

/// Load a stack of single-channel 8/16-bit rasters (PNG or uncompressed TIFF)
/// as one volume. `path_pattern` is either a directory (all supported files
/// inside) or a path whose filename component may contain `*`/`?` wildcards.
/// Slices are ordered by the last run of digits in each filename; the indices
/// must be strictly increasing with no gaps. Integer intensities are mapped to
/// [0,1] by dividing by (2^bits - 1). If a `stack.json` sidecar is present its
/// spacing and provenance are picked up.
///
/// Throws MissingSlice (gap or duplicate in the index sequence),
/// DimensionMismatch (inconsistent slice sizes), UnsupportedFormat.
Volume load_stack(const std::filesystem::path& path_pattern,
                  std::optional<int> bit_depth_hint = std::nullopt);

/// Write one image per slice (slice_0000.png, ...) plus a `stack.json`
/// sidecar holding dims, spacing, bit depth and provenance. Quantization is
/// round-to-nearest: round(v * (2^bits - 1)).
void save_stack(const Volume& v, const std::filesystem::path& dir, int bit_depth,
                RasterFormat format = RasterFormat::png);

/// Single-image helpers used by the stack functions and tests.
Slice load_raster(const std::filesystem::path& file, int& bit_depth_out);
void save_raster(const Slice& s, const std::filesystem::path& file, int bit_depth,
                 RasterFormat format);

} // namespace serireg
