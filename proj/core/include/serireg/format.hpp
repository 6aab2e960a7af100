// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <string>

namespace serireg {

/// Canonical number formatting for CSV and SVG metadata output. One shared
/// formatter keeps the two byte-identical so plot metadata can be checked
/// against metrics.csv by string comparison.
inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

} // namespace serireg
