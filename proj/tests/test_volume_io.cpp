#include <doctest.h>

#include <cstring>
#include <fstream>

#include "serireg/field_io.hpp"
#include "serireg/image_io.hpp"
#include "test_support.hpp"

using namespace serireg;
using namespace serireg::test;

TEST_SUITE_BEGIN("volume_io");

namespace {

Volume small_volume(int nx, int ny, int nz, unsigned seed = 1) {
    Volume v(nx, ny, nz);
    for (int z = 0; z < nz; ++z) v.set_slice(z, textured_slice(seed + z, nx, ny));
    return v;
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("load_stack orders slices by numeric index and applies defaults") {
    TempDir dir("load_stack");
    for (int i = 0; i < 3; ++i) {
        Slice s(4, 4, 0.f);
        s.at(i, 0) = 1.f; // marker pixel identifies the slice
        char name[16];
        std::snprintf(name, sizeof name, "img_%03d.png", i);
        save_raster(s, dir / name, 8, RasterFormat::png);
    }
    const Volume v = load_stack(dir.path);
    CHECK(v.nx == 4);
    CHECK(v.ny == 4);
    CHECK(v.nz == 3);
    CHECK(v.spacing_um[0] == 1.0);
    for (int z = 0; z < 3; ++z) CHECK(v.at(z, 0, z) == doctest::Approx(1.f));
}

TEST_CASE("load_stack reports the first missing index by name") {
    TempDir dir("gap");
    for (const int i : {0, 1, 3}) {
        char name[16];
        std::snprintf(name, sizeof name, "img_%03d.png", i);
        save_raster(Slice(4, 4, 0.5f), dir / name, 8, RasterFormat::png);
    }
    try {
        load_stack(dir.path);
        FAIL("expected MissingSlice");
    } catch (const MissingSlice& e) {
        CHECK(e.index == 2);
        CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
}

TEST_CASE("16-bit intensities normalize by 65535") {
    TempDir dir("norm16");
    Slice s(4, 1, 0.f);
    s.at(0, 0) = 0.f;
    s.at(1, 0) = 32768.f / 65535.f;
    s.at(2, 0) = 1.f;
    s.at(3, 0) = 0.f;
    save_raster(s, dir / "v_0.png", 16, RasterFormat::png);
    int depth = 0;
    const Slice back = load_raster(dir / "v_0.png", depth);
    CHECK(depth == 16);
    CHECK(back.at(0, 0) == 0.f);
    CHECK(back.at(1, 0) == doctest::Approx(32768.0 / 65535.0).epsilon(1e-9));
    CHECK(back.at(2, 0) == 1.f);
}

TEST_CASE("stack round trip stays within the quantization bound") {
    for (const int bits : {8, 16}) {
        for (const RasterFormat fmt : {RasterFormat::png, RasterFormat::tiff}) {
            TempDir dir("round");
            const Volume v = small_volume(13, 9, 3);
            save_stack(v, dir.path, bits, fmt);
            const Volume back = load_stack(dir.path);
            REQUIRE(back.nz == v.nz);
            const double bound = 0.5 / ((1 << bits) - 1);
            double worst = 0.0;
            for (std::size_t i = 0; i < v.voxels.size(); ++i)
                worst = std::max(worst,
                                 std::fabs(static_cast<double>(v.voxels[i]) - back.voxels[i]));
            CHECK(worst <= bound + 1e-9);
        }
    }
}

TEST_CASE("constant 0.5 volume quantizes to 128 at 8 bit") {
    TempDir dir("half");
    Volume v(4, 4, 1, 0.5f);
    save_stack(v, dir.path, 8);
    const Volume back = load_stack(dir.path);
    for (const float p : back.voxels) CHECK(p == doctest::Approx(128.0 / 255.0));
}

TEST_CASE("single-slice volume writes exactly one image plus the sidecar") {
    TempDir dir("single");
    save_stack(small_volume(6, 6, 1), dir.path, 8);
    int rasters = 0, sidecars = 0, other = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir.path)) {
        const auto name = e.path().filename().string();
        if (name.ends_with(".png"))
            ++rasters;
        else if (name == "stack.json")
            ++sidecars;
        else
            ++other;
    }
    CHECK(rasters == 1);
    CHECK(sidecars == 1);
    CHECK(other == 0);
}

TEST_CASE("sidecar spacing and provenance survive a round trip") {
    TempDir dir("sidecar");
    Volume v = small_volume(5, 5, 2);
    v.spacing_um = {0.5, 0.5, 2.0};
    v.provenance["note"] = "fixture";
    save_stack(v, dir.path, 16);
    const Volume back = load_stack(dir.path);
    CHECK(back.spacing_um[2] == doctest::Approx(2.0));
    CHECK(back.provenance.at("note") == "fixture");
}

TEST_CASE("bit depth hint mismatches are rejected") {
    TempDir dir("hint");
    save_stack(small_volume(4, 4, 1), dir.path, 8);
    CHECK_THROWS_AS(load_stack(dir.path, 16), UnsupportedFormat);
    CHECK_NOTHROW(load_stack(dir.path, 8));
}

TEST_CASE("mismatched slice dims are rejected") {
    TempDir dir("dims");
    save_raster(Slice(4, 4, 0.1f), dir / "s_0.png", 8, RasterFormat::png);
    save_raster(Slice(5, 4, 0.1f), dir / "s_1.png", 8, RasterFormat::png);
    CHECK_THROWS_AS(load_stack(dir.path), DimensionMismatch);
}

TEST_CASE("wildcard patterns select matching files only") {
    TempDir dir("glob");
    save_raster(Slice(4, 4, 0.2f), dir / "a_0.png", 8, RasterFormat::png);
    save_raster(Slice(4, 4, 0.2f), dir / "a_1.png", 8, RasterFormat::png);
    save_raster(Slice(8, 8, 0.2f), dir / "b_0.png", 8, RasterFormat::png);
    const Volume v = load_stack(dir.path / "a_*.png");
    CHECK(v.nz == 2);
    CHECK(v.nx == 4);
}

TEST_CASE("field stack round trip is bit-exact including signed zeros") {
    TempDir dir("fields");
    FieldStack f;
    DisplacementField a = smooth_field(17, 6, 5, 2.0);
    a.at(0, 0) = {-0.f, 0.f};
    a.at(1, 0) = {1.0f, -2.0f};
    f.fields.push_back(a);
    f.fields.push_back(smooth_field(18, 6, 5, 2.0));
    save_field_stack(f, dir.path);
    const FieldStack back = load_field_stack(dir.path);

    REQUIRE(back.nz() == 2);
    for (int z = 0; z < 2; ++z) {
        REQUIRE(back[z].vectors.size() == f[z].vectors.size());
        CHECK(std::memcmp(back[z].vectors.data(), f[z].vectors.data(),
                          f[z].vectors.size() * sizeof(Vec2)) == 0);
    }
    // Signed zero bit pattern preserved.
    const Vec2 v00 = back[0].at(0, 0);
    CHECK(std::signbit(v00.x));

    SUBCASE("a second save is byte-identical (round-trip idempotence)") {
        TempDir dir2("fields2");
        save_field_stack(back, dir2.path);
        CHECK(read_bytes(dir / "field_0000.bin") == read_bytes(dir2 / "field_0000.bin"));
        CHECK(read_bytes(dir / "fields.json") == read_bytes(dir2 / "fields.json"));
    }
}

TEST_CASE("field file layout is little-endian interleaved floats") {
    TempDir dir("layout");
    FieldStack f;
    DisplacementField a(2, 2);
    a.at(0, 0) = {1.0f, -2.0f};
    f.fields.push_back(a);
    save_field_stack(f, dir.path);

    const auto bytes = read_bytes(dir / "field_0000.bin");
    REQUIRE(bytes.size() == 2u * 2u * 8u);
    const unsigned char one[4] = {0x00, 0x00, 0x80, 0x3f};      // 1.0f LE
    const unsigned char minus_two[4] = {0x00, 0x00, 0x00, 0xc0}; // -2.0f LE
    CHECK(std::memcmp(bytes.data(), one, 4) == 0);
    CHECK(std::memcmp(bytes.data() + 4, minus_two, 4) == 0);
}

TEST_CASE("field sidecar disagreements raise the right errors") {
    TempDir dir("badfields");
    FieldStack f;
    f.fields.emplace_back(2, 2);
    save_field_stack(f, dir.path);

    SUBCASE("payload smaller than sidecar dims is a HeaderMismatch") {
        std::ofstream sidecar(dir / "fields.json");
        sidecar << R"({"dims":[4,4],"nz":1,"convention":"backward","units":"px",)"
                << R"("dtype":"f32le","layout":"row_major_xy_interleaved"})";
        sidecar.close();
        CHECK_THROWS_AS(load_field_stack(dir.path), HeaderMismatch);
    }
    SUBCASE("payload cut mid-pixel is a TruncatedFile") {
        std::filesystem::resize_file(dir / "field_0000.bin", 13);
        CHECK_THROWS_AS(load_field_stack(dir.path), TruncatedFile);
    }
    SUBCASE("foreign convention is a HeaderMismatch") {
        std::ofstream sidecar(dir / "fields.json");
        sidecar << R"({"dims":[2,2],"nz":1,"convention":"forward","units":"px",)"
                << R"("dtype":"f32le","layout":"row_major_xy_interleaved"})";
        sidecar.close();
        CHECK_THROWS_AS(load_field_stack(dir.path), HeaderMismatch);
    }
}

TEST_CASE("unsupported rasters are rejected") {
    TempDir dir("unsup");
    std::ofstream(dir / "fake_0.png") << "not a png";
    CHECK_THROWS_AS(load_stack(dir.path), UnsupportedFormat);
}

TEST_SUITE_END();
