// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#include "serireg/field_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace serireg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void encode_le(float value, unsigned char out[4]) {
    std::uint32_t bits;
    std::memcpy(&bits, &value, 4);
    out[0] = static_cast<unsigned char>(bits);
    out[1] = static_cast<unsigned char>(bits >> 8);
    out[2] = static_cast<unsigned char>(bits >> 16);
    out[3] = static_cast<unsigned char>(bits >> 24);
}

float decode_le(const unsigned char in[4]) {
    const std::uint32_t bits = static_cast<std::uint32_t>(in[0]) |
                               (static_cast<std::uint32_t>(in[1]) << 8) |
                               (static_cast<std::uint32_t>(in[2]) << 16) |
                               (static_cast<std::uint32_t>(in[3]) << 24);
    float value;
    std::memcpy(&value, &bits, 4);
    return value;
}

fs::path field_file(const fs::path& dir, int z) {
    char name[32];
    std::snprintf(name, sizeof name, "field_%04d.bin", z);
    return dir / name;
}

} // namespace

void save_field_stack(const FieldStack& f, const fs::path& dir) {
    const auto [nx, ny] = f.dims();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir))
        throw IoFailure("save_field_stack: cannot create directory " + dir.string());

    std::vector<unsigned char> buffer(static_cast<std::size_t>(nx) * ny * 8);
    for (int z = 0; z < f.nz(); ++z) {
        const auto& field = f[z];
        unsigned char* out = buffer.data();
        for (const Vec2& v : field.vectors) {
            encode_le(v.x, out);
            encode_le(v.y, out + 4);
            out += 8;
        }
        std::ofstream file(field_file(dir, z), std::ios::binary);
        if (!file) throw IoFailure("save_field_stack: cannot create " + field_file(dir, z).string());
        file.write(reinterpret_cast<const char*>(buffer.data()),
                   static_cast<std::streamsize>(buffer.size()));
        if (!file) throw IoFailure("save_field_stack: short write to " + field_file(dir, z).string());
    }

    json j;
    j["dims"] = {nx, ny};
    j["nz"] = f.nz();
    j["convention"] = "backward";
    j["units"] = "px";
    j["dtype"] = "f32le";
    j["layout"] = "row_major_xy_interleaved";
    std::ofstream out(dir / "fields.json");
    if (!out) throw IoFailure("save_field_stack: cannot write fields.json");
    out << j.dump(2) << "\n";
}

FieldStack load_field_stack(const fs::path& dir) {
    std::ifstream sidecar(dir / "fields.json");
    if (!sidecar) throw IoFailure("load_field_stack: missing fields.json in " + dir.string());
    json j;
    try {
        sidecar >> j;
    } catch (const json::exception& e) {
        throw HeaderMismatch("fields.json: " + std::string(e.what()));
    }

    int nx, ny, nz;
    try {
        nx = j.at("dims").at(0).get<int>();
        ny = j.at("dims").at(1).get<int>();
        nz = j.at("nz").get<int>();
        if (j.at("convention").get<std::string>() != "backward")
            throw HeaderMismatch("fields.json: convention must be \"backward\"");
        if (j.at("units").get<std::string>() != "px")
            throw HeaderMismatch("fields.json: units must be \"px\"");
        if (j.at("dtype").get<std::string>() != "f32le")
            throw HeaderMismatch("fields.json: dtype must be \"f32le\"");
        if (j.at("layout").get<std::string>() != "row_major_xy_interleaved")
            throw HeaderMismatch("fields.json: layout must be \"row_major_xy_interleaved\"");
    } catch (const json::exception& e) {
        throw HeaderMismatch("fields.json: " + std::string(e.what()));
    }
    if (nx <= 0 || ny <= 0 || nz < 0)
        throw HeaderMismatch("fields.json: non-positive dims");

    const std::size_t expected = static_cast<std::size_t>(nx) * ny * 8;
    FieldStack stack;
    stack.fields.reserve(nz);
    std::vector<unsigned char> buffer;
    for (int z = 0; z < nz; ++z) {
        const fs::path path = field_file(dir, z);
        std::ifstream file(path, std::ios::binary);
        if (!file) throw MissingSlice("load_field_stack: missing " + path.string(), z);
        file.seekg(0, std::ios::end);
        const auto size = static_cast<std::size_t>(file.tellg());
        file.seekg(0);
        if (size % 8 != 0)
            throw TruncatedFile(path.string() + ": payload ends mid-pixel (" +
                                std::to_string(size) + " bytes)");
        if (size != expected)
            throw HeaderMismatch(path.string() + ": payload holds " +
                                 std::to_string(size / 8) + " pixels, sidecar dims say " +
                                 std::to_string(static_cast<std::size_t>(nx) * ny));
        buffer.resize(size);
        file.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(size));
        if (!file) throw TruncatedFile(path.string() + ": read failed");

        DisplacementField field(nx, ny);
        const unsigned char* in = buffer.data();
        for (Vec2& v : field.vectors) {
            v.x = decode_le(in);
            v.y = decode_le(in + 4);
            in += 8;
        }
        stack.fields.push_back(std::move(field));
    }
    return stack;
}

} // namespace serireg
