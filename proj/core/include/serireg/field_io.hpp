// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "serireg/volume.hpp"

namespace serireg {

/// Write one binary file per slice (field_0000.bin, ...): little-endian
/// 32-bit floats, row-major, two interleaved channels (ux, uy) per pixel,
/// plus a `fields.json` sidecar. Round trips are bit-exact.
void save_field_stack(const FieldStack& f, const std::filesystem::path& dir);

/// Inverse of save_field_stack. Throws HeaderMismatch when the sidecar
/// disagrees with a payload (or is malformed) and TruncatedFile when a
/// payload ends mid-pixel.
FieldStack load_field_stack(const std::filesystem::path& dir);

} // namespace serireg
