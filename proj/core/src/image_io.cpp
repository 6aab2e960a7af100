// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#include "serireg/image_io.hpp"

#include <png.h>
#include <tiffio.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "serireg/parallel.hpp"

namespace serireg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// filename handling

bool has_extension(const fs::path& p, std::initializer_list<const char*> exts) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) {
        return static_cast<char>(std::tolower(c));
    });
    for (const char* want : exts)
        if (e == want) return true;
    return false;
}

bool is_raster_name(const fs::path& p) {
    return has_extension(p, {".png", ".tif", ".tiff"});
}

// Shell-style match on the filename component only (`*` and `?`).
bool wildcard_match(const std::string& pattern, const std::string& name) {
    std::size_t p = 0, n = 0, star = std::string::npos, mark = 0;
    while (n < name.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
            ++p;
            ++n;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = n;
        } else if (star != std::string::npos) {
            p = star + 1;
            n = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

// Last run of digits in the stem, e.g. "slice_0012" -> 12.
std::optional<long> numeric_index(const fs::path& p) {
    const std::string stem = p.stem().string();
    int end = static_cast<int>(stem.size()) - 1;
    while (end >= 0 && !std::isdigit(static_cast<unsigned char>(stem[end]))) --end;
    if (end < 0) return std::nullopt;
    int begin = end;
    while (begin > 0 && std::isdigit(static_cast<unsigned char>(stem[begin - 1]))) --begin;
    return std::stol(stem.substr(begin, end - begin + 1));
}

std::vector<fs::path> match_pattern(const fs::path& path_pattern) {
    fs::path dir;
    std::string name_pattern;
    std::error_code ec;
    if (fs::is_directory(path_pattern, ec)) {
        dir = path_pattern;
        name_pattern = "*";
    } else {
        dir = path_pattern.parent_path();
        if (dir.empty()) dir = ".";
        name_pattern = path_pattern.filename().string();
    }
    if (!fs::is_directory(dir, ec))
        throw IoFailure("load_stack: no such directory: " + dir.string());

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const fs::path p = entry.path();
        if (!wildcard_match(name_pattern, p.filename().string())) continue;
        if (!is_raster_name(p)) continue;
        files.push_back(p);
    }
    return files;
}

// ---------------------------------------------------------------------------
// PNG

struct PngReadCtx {
    std::FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadCtx() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

Slice load_png(const fs::path& file, int& bit_depth_out) {
    PngReadCtx ctx;
    ctx.fp = std::fopen(file.string().c_str(), "rb");
    if (!ctx.fp) throw IoFailure("cannot open " + file.string());

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8))
        throw UnsupportedFormat(file.string() + ": not a PNG file");

    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoFailure("libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoFailure("libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png)))
        throw UnsupportedFormat(file.string() + ": PNG decode error");

    png_init_io(ctx.png, ctx.fp);
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
    const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
    const int depth = png_get_bit_depth(ctx.png, ctx.info);
    const int color = png_get_color_type(ctx.png, ctx.info);
    if (color != PNG_COLOR_TYPE_GRAY)
        throw UnsupportedFormat(file.string() + ": only single-channel PNG is supported");
    if (depth != 8 && depth != 16)
        throw UnsupportedFormat(file.string() + ": only 8- or 16-bit PNG is supported");

    png_set_interlace_handling(ctx.png);
    png_read_update_info(ctx.png, ctx.info);

    const std::size_t row_bytes = png_get_rowbytes(ctx.png, ctx.info);
    std::vector<unsigned char> data(row_bytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = data.data() + y * row_bytes;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);

    Slice s(static_cast<int>(w), static_cast<int>(h));
    const float scale = 1.f / static_cast<float>((1u << depth) - 1u);
    for (png_uint_32 y = 0; y < h; ++y) {
        const unsigned char* row = rows[y];
        for (png_uint_32 x = 0; x < w; ++x) {
            unsigned value;
            if (depth == 8) {
                value = row[x];
            } else {
                value = (static_cast<unsigned>(row[2 * x]) << 8) | row[2 * x + 1]; // PNG is big-endian
            }
            s.at(static_cast<int>(x), static_cast<int>(y)) = static_cast<float>(value) * scale;
        }
    }
    bit_depth_out = depth;
    return s;
}

struct PngWriteCtx {
    std::FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteCtx() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

void save_png(const Slice& s, const fs::path& file, int bit_depth) {
    PngWriteCtx ctx;
    ctx.fp = std::fopen(file.string().c_str(), "wb");
    if (!ctx.fp) throw IoFailure("cannot create " + file.string());
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoFailure("libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoFailure("libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png)))
        throw IoFailure("PNG encode error for " + file.string());

    png_init_io(ctx.png, ctx.fp);
    png_set_IHDR(ctx.png, ctx.info, s.nx, s.ny, bit_depth, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);

    const unsigned max_value = (1u << bit_depth) - 1u;
    const std::size_t row_bytes = static_cast<std::size_t>(s.nx) * (bit_depth / 8);
    std::vector<unsigned char> row(row_bytes);
    for (int y = 0; y < s.ny; ++y) {
        for (int x = 0; x < s.nx; ++x) {
            const float v = std::clamp(s.at(x, y), 0.f, 1.f);
            const auto q = static_cast<unsigned>(
                std::lround(static_cast<double>(v) * max_value));
            if (bit_depth == 8) {
                row[x] = static_cast<unsigned char>(q);
            } else {
                row[2 * x] = static_cast<unsigned char>(q >> 8);
                row[2 * x + 1] = static_cast<unsigned char>(q & 0xff);
            }
        }
        png_write_row(ctx.png, row.data());
    }
    png_write_end(ctx.png, nullptr);
}

// ---------------------------------------------------------------------------
// TIFF

struct TiffCloser {
    void operator()(TIFF* t) const {
        if (t) TIFFClose(t);
    }
};
using TiffPtr = std::unique_ptr<TIFF, TiffCloser>;

// libtiff reports problems through global handlers; keep it quiet and let the
// surrounding checks raise typed errors instead.
struct TiffSilencer {
    TIFFErrorHandler old_error;
    TIFFErrorHandler old_warning;
    TiffSilencer() {
        old_error = TIFFSetErrorHandler(nullptr);
        old_warning = TIFFSetWarningHandler(nullptr);
    }
    ~TiffSilencer() {
        TIFFSetErrorHandler(old_error);
        TIFFSetWarningHandler(old_warning);
    }
};

Slice load_tiff(const fs::path& file, int& bit_depth_out) {
    TiffSilencer quiet;
    TiffPtr tif(TIFFOpen(file.string().c_str(), "r"));
    if (!tif) throw UnsupportedFormat(file.string() + ": cannot open as TIFF");

    std::uint32_t w = 0, h = 0;
    std::uint16_t depth = 0, samples = 1, compression = COMPRESSION_NONE, fmt = SAMPLEFORMAT_UINT;
    TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &w);
    TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &h);
    TIFFGetField(tif.get(), TIFFTAG_BITSPERSAMPLE, &depth);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &samples);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_COMPRESSION, &compression);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLEFORMAT, &fmt);

    if (samples != 1)
        throw UnsupportedFormat(file.string() + ": only single-channel TIFF is supported");
    if (depth != 8 && depth != 16)
        throw UnsupportedFormat(file.string() + ": only 8- or 16-bit TIFF is supported");
    if (compression != COMPRESSION_NONE)
        throw UnsupportedFormat(file.string() + ": compressed TIFF is not supported");
    if (fmt != SAMPLEFORMAT_UINT && fmt != SAMPLEFORMAT_VOID)
        throw UnsupportedFormat(file.string() + ": only unsigned integer TIFF is supported");
    if (w == 0 || h == 0) throw UnsupportedFormat(file.string() + ": empty TIFF");

    const std::size_t row_bytes = static_cast<std::size_t>(w) * (depth / 8);
    std::vector<unsigned char> data(row_bytes * h);
    const tstrip_t strips = TIFFNumberOfStrips(tif.get());
    std::uint32_t rows_per_strip = h;
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_ROWSPERSTRIP, &rows_per_strip);
    std::size_t offset = 0;
    for (tstrip_t strip = 0; strip < strips; ++strip) {
        const tmsize_t n = TIFFReadEncodedStrip(tif.get(), strip, data.data() + offset,
                                                static_cast<tmsize_t>(data.size() - offset));
        if (n < 0) throw TruncatedFile(file.string() + ": TIFF strip read failed");
        offset += static_cast<std::size_t>(n);
    }
    if (offset != data.size())
        throw TruncatedFile(file.string() + ": TIFF payload shorter than header promises");

    Slice s(static_cast<int>(w), static_cast<int>(h));
    const float scale = 1.f / static_cast<float>((1u << depth) - 1u);
    for (std::uint32_t y = 0; y < h; ++y) {
        const unsigned char* row = data.data() + y * row_bytes;
        for (std::uint32_t x = 0; x < w; ++x) {
            unsigned value;
            if (depth == 8) {
                value = row[x];
            } else {
                std::uint16_t v16;
                std::memcpy(&v16, row + 2 * x, 2); // libtiff already swapped to host order
                value = v16;
            }
            s.at(static_cast<int>(x), static_cast<int>(y)) = static_cast<float>(value) * scale;
        }
    }
    bit_depth_out = depth;
    return s;
}

void save_tiff(const Slice& s, const fs::path& file, int bit_depth) {
    TiffSilencer quiet;
    TiffPtr tif(TIFFOpen(file.string().c_str(), "w"));
    if (!tif) throw IoFailure("cannot create " + file.string());

    TIFFSetField(tif.get(), TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(s.nx));
    TIFFSetField(tif.get(), TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(s.ny));
    TIFFSetField(tif.get(), TIFFTAG_BITSPERSAMPLE, static_cast<std::uint16_t>(bit_depth));
    TIFFSetField(tif.get(), TIFFTAG_SAMPLESPERPIXEL, static_cast<std::uint16_t>(1));
    TIFFSetField(tif.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);
    TIFFSetField(tif.get(), TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
    TIFFSetField(tif.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    // Whole image in one strip, per the documented interchange contract.
    TIFFSetField(tif.get(), TIFFTAG_ROWSPERSTRIP, static_cast<std::uint32_t>(s.ny));

    const unsigned max_value = (1u << bit_depth) - 1u;
    const std::size_t row_bytes = static_cast<std::size_t>(s.nx) * (bit_depth / 8);
    std::vector<unsigned char> data(row_bytes * s.ny);
    for (int y = 0; y < s.ny; ++y) {
        unsigned char* row = data.data() + static_cast<std::size_t>(y) * row_bytes;
        for (int x = 0; x < s.nx; ++x) {
            const float v = std::clamp(s.at(x, y), 0.f, 1.f);
            const auto q = static_cast<unsigned>(
                std::lround(static_cast<double>(v) * max_value));
            if (bit_depth == 8) {
                row[x] = static_cast<unsigned char>(q);
            } else {
                std::uint16_t v16 = static_cast<std::uint16_t>(q);
                std::memcpy(row + 2 * x, &v16, 2);
            }
        }
    }
    if (TIFFWriteEncodedStrip(tif.get(), 0, data.data(),
                              static_cast<tmsize_t>(data.size())) < 0)
        throw IoFailure("TIFF write failed for " + file.string());
}

} // namespace

Slice load_raster(const fs::path& file, int& bit_depth_out) {
    if (has_extension(file, {".png"})) return load_png(file, bit_depth_out);
    if (has_extension(file, {".tif", ".tiff"})) return load_tiff(file, bit_depth_out);
    throw UnsupportedFormat(file.string() + ": unsupported raster extension");
}

void save_raster(const Slice& s, const fs::path& file, int bit_depth, RasterFormat format) {
    if (bit_depth != 8 && bit_depth != 16)
        throw InvalidSpec("save_raster: bit depth must be 8 or 16");
    if (format == RasterFormat::png)
        save_png(s, file, bit_depth);
    else
        save_tiff(s, file, bit_depth);
}

Volume load_stack(const fs::path& path_pattern, std::optional<int> bit_depth_hint) {
    std::vector<fs::path> files = match_pattern(path_pattern);
    if (files.empty())
        throw IoFailure("load_stack: pattern matches no raster files: " + path_pattern.string());

    std::vector<std::pair<long, fs::path>> indexed;
    indexed.reserve(files.size());
    for (const auto& f : files) {
        const auto idx = numeric_index(f);
        if (!idx)
            throw UnsupportedFormat("load_stack: no numeric index in filename: " + f.string());
        indexed.emplace_back(*idx, f);
    }
    std::sort(indexed.begin(), indexed.end());
    for (std::size_t i = 1; i < indexed.size(); ++i) {
        if (indexed[i].first == indexed[i - 1].first)
            throw MissingSlice("load_stack: duplicate slice index " +
                                   std::to_string(indexed[i].first),
                               static_cast<int>(indexed[i].first));
        if (indexed[i].first != indexed[i - 1].first + 1)
            throw MissingSlice("load_stack: missing slice index " +
                                   std::to_string(indexed[i - 1].first + 1),
                               static_cast<int>(indexed[i - 1].first + 1));
    }

    const int nz = static_cast<int>(indexed.size());
    std::vector<Slice> slices(nz);
    std::vector<int> depths(nz, 0);
    parallel_for(nz, [&](std::int64_t z) {
        slices[z] = load_raster(indexed[z].second, depths[z]);
    });

    for (int z = 0; z < nz; ++z) {
        if (slices[z].nx != slices[0].nx || slices[z].ny != slices[0].ny)
            throw DimensionMismatch("load_stack: slice " + std::to_string(z) +
                                    " has dims " + std::to_string(slices[z].nx) + "x" +
                                    std::to_string(slices[z].ny) + ", expected " +
                                    std::to_string(slices[0].nx) + "x" +
                                    std::to_string(slices[0].ny));
        if (depths[z] != depths[0])
            throw UnsupportedFormat("load_stack: mixed bit depths across slices");
    }
    if (bit_depth_hint && *bit_depth_hint != depths[0])
        throw UnsupportedFormat("load_stack: files are " + std::to_string(depths[0]) +
                                "-bit but hint says " + std::to_string(*bit_depth_hint));

    Volume v(slices[0].nx, slices[0].ny, nz);
    for (int z = 0; z < nz; ++z) v.set_slice(z, slices[z]);

    // Pick up the sidecar if one sits next to the slices.
    const fs::path dir = fs::is_directory(path_pattern) ? path_pattern
                                                        : path_pattern.parent_path();
    const fs::path sidecar = dir / "stack.json";
    if (fs::exists(sidecar)) {
        std::ifstream in(sidecar);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw HeaderMismatch("stack.json: " + std::string(e.what()));
        }
        if (j.contains("spacing_um")) {
            const auto sp = j.at("spacing_um");
            v.spacing_um = {sp.at(0).get<double>(), sp.at(1).get<double>(),
                            sp.at(2).get<double>()};
        }
        if (j.contains("provenance"))
            for (const auto& [k, val] : j.at("provenance").items())
                v.provenance[k] = val.get<std::string>();
    }
    v.provenance["source"] = path_pattern.string();
    v.provenance["bit_depth"] = std::to_string(depths[0]);
    return v;
}

void save_stack(const Volume& v, const fs::path& dir, int bit_depth, RasterFormat format) {
    if (bit_depth != 8 && bit_depth != 16)
        throw InvalidSpec("save_stack: bit depth must be 8 or 16");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir))
        throw IoFailure("save_stack: cannot create directory " + dir.string());

    const char* ext = format == RasterFormat::png ? ".png" : ".tif";
    parallel_for(v.nz, [&](std::int64_t z) {
        char name[32];
        std::snprintf(name, sizeof name, "slice_%04d%s", static_cast<int>(z), ext);
        save_raster(v.slice(static_cast<int>(z)), dir / name, bit_depth, format);
    });

    json j;
    j["dims"] = {v.nx, v.ny, v.nz};
    j["spacing_um"] = {v.spacing_um[0], v.spacing_um[1], v.spacing_um[2]};
    j["bit_depth"] = bit_depth;
    j["provenance"] = v.provenance;
    std::ofstream out(dir / "stack.json");
    if (!out) throw IoFailure("save_stack: cannot write stack.json");
    out << j.dump(2) << "\n";
}

} // namespace serireg
