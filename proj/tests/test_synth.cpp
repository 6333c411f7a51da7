#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "scribseg/cpl.hpp"
#include "scribseg/error.hpp"
#include "scribseg/mgrd.hpp"
#include "scribseg/rng.hpp"
#include "scribseg/scribble.hpp"
#include "scribseg/synth.hpp"

using namespace scribseg;

namespace {

constexpr double kPi = std::numbers::pi;

// Area of the intersection of two circles with radii a, b and centre distance d.
double lens_area(double a, double b, double d) {
    if (d >= a + b) return 0.0;
    if (d <= std::abs(a - b)) return kPi * std::min(a, b) * std::min(a, b);
    const double t1 = a * a * std::acos((d * d + a * a - b * b) / (2 * d * a));
    const double t2 = b * b * std::acos((d * d + b * b - a * a) / (2 * d * b));
    const double t3 = 0.5 * std::sqrt((-d + a + b) * (d + a - b) * (d - a + b) * (d + a + b));
    return t1 + t2 - t3;
}

BinaryGrid class_region(const DenseMask& m, std::uint8_t code) {
    BinaryGrid b(m.height, m.width, 0);
    for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = m.data[i] == code;
    return b;
}

BinaryGrid code_pixels(const ScribbleAnnotation& s, std::uint8_t code) {
    BinaryGrid b(s.height, s.width, 0);
    for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = s.data[i] == code;
    return b;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "scribseg_test_synth" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("phantom is deterministic in seed and index") {
    const auto p = PhantomParams::cardiac();
    const Phantom a = generate_phantom(p, 42, 7);
    const Phantom b = generate_phantom(p, 42, 7);
    CHECK(a.image == b.image);
    CHECK(a.mask == b.mask);
    const Phantom c = generate_phantom(p, 42, 8);
    CHECK_FALSE(a.mask == c.mask);
}

TEST_CASE("annulus separates the disk from the background") {
    const auto p = PhantomParams::cardiac();
    for (int i = 0; i < 50; ++i) {
        const DenseMask m = generate_phantom(p, 42, static_cast<std::uint64_t>(i)).mask;
        for (int r = 0; r < m.height; ++r)
            for (int c = 0; c < m.width; ++c) {
                if (m.at(r, c) != 3) continue;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc)
                        if (m.inside(r + dr, c + dc)) REQUIRE(m.at(r + dr, c + dc) != kBackground);
            }
    }
}

TEST_CASE("structures keep a two pixel margin") {
    for (auto p : {PhantomParams::cardiac(), PhantomParams::prostate()})
        for (int i = 0; i < 50; ++i) {
            const DenseMask m = generate_phantom(p, 3, static_cast<std::uint64_t>(i)).mask;
            for (int r = 0; r < m.height; ++r)
                for (int c = 0; c < m.width; ++c)
                    if (r < 2 || c < 2 || r >= m.height - 2 || c >= m.width - 2) REQUIRE(m.at(r, c) == kBackground);
        }
}

TEST_CASE("mean class areas match the nominal geometry") {
    SUBCASE("cardiac") {
        const auto p = PhantomParams::cardiac();
        const double outer = p.inner_radius + p.ring_thickness;
        const double lv = kPi * p.inner_radius * p.inner_radius;
        const double myo = kPi * outer * outer - lv;
        const double rv = kPi * p.side_radius * p.side_radius - lens_area(outer, p.side_radius, outer + p.side_offset);
        double mean[4] = {0, 0, 0, 0};
        for (int i = 0; i < 100; ++i) {
            const DenseMask m = generate_phantom(p, 42, static_cast<std::uint64_t>(i)).mask;
            for (int c = 1; c <= 3; ++c) mean[c] += m.count(static_cast<std::uint8_t>(c)) / 100.0;
        }
        CHECK(std::abs(mean[1] / rv - 1.0) <= 0.2);
        CHECK(std::abs(mean[2] / myo - 1.0) <= 0.2);
        CHECK(std::abs(mean[3] / lv - 1.0) <= 0.2);
    }
    SUBCASE("prostate") {
        const auto p = PhantomParams::prostate();
        const double cg = kPi * p.inner_radius * p.inner_radius;
        const double pz =
            kPi * p.side_radius * p.side_radius - lens_area(p.inner_radius, p.side_radius, p.inner_radius + p.side_offset);
        double mean[3] = {0, 0, 0};
        for (int i = 0; i < 100; ++i) {
            const DenseMask m = generate_phantom(p, 42, static_cast<std::uint64_t>(i)).mask;
            for (int c = 1; c <= 2; ++c) mean[c] += m.count(static_cast<std::uint8_t>(c)) / 100.0;
        }
        CHECK(std::abs(mean[1] / pz - 1.0) <= 0.2);
        CHECK(std::abs(mean[2] / cg - 1.0) <= 0.2);
    }
}

TEST_CASE("invalid phantom parameters are rejected") {
    auto p = PhantomParams::cardiac();
    p.ring_thickness = 1.0;
    CHECK_THROWS_AS(generate_phantom(p, 1, 0), ConfigError);
    p = PhantomParams::cardiac();
    p.intensities.pop_back();
    CHECK_THROWS_AS(generate_phantom(p, 1, 0), ConfigError);
    p = PhantomParams::cardiac();
    p.inner_radius = 40.0;  // cannot fit in 64 x 64
    CHECK_THROWS(generate_phantom(p, 1, 0));
}

TEST_CASE("scribbles satisfy the synthesis contract over 100 samples") {
    for (auto p : {PhantomParams::cardiac(), PhantomParams::prostate()}) {
        const int k = p.foreground_classes();
        ScribbleSynthParams sp;
        sp.seed = 42;
        std::vector<double> ratio(static_cast<std::size_t>(k + 1), 0.0);
        for (int i = 0; i < 100; ++i) {
            const DenseMask m = generate_phantom(p, 42, static_cast<std::uint64_t>(i)).mask;
            const ScribbleAnnotation s = synthesize_scribbles(m, k, sp, static_cast<std::uint64_t>(i));
            std::size_t labeled = 0;
            for (std::size_t j = 0; j < s.size(); ++j) {
                const auto v = s.data[j];
                if (v == kUnlabeled) continue;
                ++labeled;
                if (v != kGlobalCategory) REQUIRE(m.data[j] == v);
            }
            CHECK(labeled < 0.05 * static_cast<double>(s.size()));

            for (int c = 1; c <= k; ++c) {
                const auto code = static_cast<std::uint8_t>(c);
                const BinaryGrid px = code_pixels(s, code);
                REQUIRE(count_components(px) == 1);
                // Inside the class region eroded by the margin.
                BinaryGrid outside = class_region(m, code);
                for (auto& v : outside.data) v = !v;
                const DistanceGrid inside = edt(outside);
                for (std::size_t j = 0; j < px.size(); ++j)
                    if (px.data[j]) REQUIRE(inside.data[j] > sp.erosion_margin);
                const double target = std::max(std::round(sp.alpha * std::sqrt(static_cast<double>(m.count(code)))), 8.0);
                ratio[static_cast<std::size_t>(c)] += static_cast<double>(scribble_stats(s).pixels[code]) / target / 100.0;
            }

            const BinaryGrid ell = gc_ellipse_region(m, sp.gc_margin);
            for (std::size_t j = 0; j < m.size(); ++j)
                if (m.data[j] != kBackground) REQUIRE(ell.data[j] == 1);
            // The GC contour lies on the ellipse boundary, outside the foreground.
            const BinaryGrid gc = code_pixels(s, kGlobalCategory);
            for (std::size_t j = 0; j < gc.size(); ++j)
                if (gc.data[j]) REQUIRE((ell.data[j] == 1 && m.data[j] == kBackground));
        }
        for (int c = 1; c <= k; ++c) CHECK(std::abs(ratio[static_cast<std::size_t>(c)] - 1.0) <= 0.2);
    }
}

TEST_CASE("scribble synthesis is deterministic and seed dependent") {
    const DenseMask m = generate_phantom(PhantomParams::cardiac(), 42, 0).mask;
    ScribbleSynthParams sp;
    sp.seed = 5;
    CHECK(synthesize_scribbles(m, 3, sp, 0) == synthesize_scribbles(m, 3, sp, 0));
    sp.seed = 6;
    const auto other = synthesize_scribbles(m, 3, sp, 0);
    sp.seed = 5;
    CHECK_FALSE(other == synthesize_scribbles(m, 3, sp, 0));
}

TEST_CASE("a region too thin to erode falls back to its innermost pixel") {
    DenseMask m(16, 16);
    for (int r = 4; r < 12; ++r) m.at(r, 7) = 1;  // one pixel wide
    ScribbleSynthParams sp;
    sp.include_gc = false;
    const auto s = synthesize_scribbles(m, 1, sp, 0);
    CHECK(scribble_stats(s).pixels[1] == 1);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s.data[i] == 1) hit = i;
    CHECK(m.data[hit] == 1);
}

TEST_CASE("missing classes are skipped") {
    DenseMask m(32, 32);
    for (int r = 8; r < 24; ++r)
        for (int c = 8; c < 24; ++c) m.at(r, c) = 2;
    ScribbleSynthParams sp;
    const auto st = scribble_stats(synthesize_scribbles(m, 3, sp, 0));
    CHECK(st.pixels[1] == 0);
    CHECK(st.pixels[3] == 0);
    CHECK(st.pixels[2] >= 8);
}

TEST_CASE("background scribble stays outside the GC ellipse") {
    ScribbleSynthParams sp;
    sp.include_background = true;
    for (int i = 0; i < 20; ++i) {
        const DenseMask m = generate_phantom(PhantomParams::cardiac(), 42, static_cast<std::uint64_t>(i)).mask;
        const auto s = synthesize_scribbles(m, 3, sp, static_cast<std::uint64_t>(i));
        const BinaryGrid ell = gc_ellipse_region(m, sp.gc_margin);
        const BinaryGrid bg = code_pixels(s, kBackground);
        CHECK(count_components(bg) == 1);
        for (std::size_t j = 0; j < bg.size(); ++j)
            if (bg.data[j]) REQUIRE((ell.data[j] == 0 && m.data[j] == kBackground));
    }
}

TEST_CASE("invalid scribble parameters are rejected") {
    const DenseMask m(8, 8);
    ScribbleSynthParams sp;
    sp.erosion_margin = 0;
    CHECK_THROWS_AS(synthesize_scribbles(m, 1, sp), ConfigError);
    sp = {};
    sp.alpha = 0.0;
    CHECK_THROWS_AS(synthesize_scribbles(m, 1, sp), ConfigError);
}

TEST_CASE("preprocess normalizes to zero mean and unit variance") {
    Rng rng(11);
    Grid<float> img(64, 64);
    for (auto& v : img.data) v = static_cast<float>(3.0 + 2.0 * rng.normal());
    const auto res = preprocess(img, 64);
    CHECK_FALSE(res.constant_input);
    double mean = 0.0, sq = 0.0;
    for (float v : res.image.data) mean += v;
    mean /= static_cast<double>(res.image.size());
    for (float v : res.image.data) sq += (v - mean) * (v - mean);
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(std::abs(std::sqrt(sq / static_cast<double>(res.image.size())) - 1.0) <= 1e-4);
}

TEST_CASE("preprocess of a constant image is all zeros") {
    const Grid<float> img(20, 20, 4.5f);
    const auto res = preprocess(img, 16);
    CHECK(res.constant_input);
    for (float v : res.image.data) CHECK(v == 0.0f);
}

TEST_CASE("preprocess crops rows and pads columns symmetrically") {
    Grid<float> img(70, 60);
    for (int r = 0; r < 70; ++r)
        for (int c = 0; c < 60; ++c) img.at(r, c) = static_cast<float>(r * 100 + c + 1);
    const auto res = preprocess(img, 64);
    REQUIRE(res.image.height == 64);
    REQUIRE(res.image.width == 64);
    // Rows 3..66 survive; columns land at 2..61. Normalization is affine, so
    // the padded zero columns map to one value and the rest keep their order.
    const float pad = res.image.at(0, 0);
    for (int r = 0; r < 64; ++r) {
        CHECK(res.image.at(r, 0) == pad);
        CHECK(res.image.at(r, 1) == pad);
        CHECK(res.image.at(r, 62) == pad);
        CHECK(res.image.at(r, 63) == pad);
    }
    double mean = 0.0, sq = 0.0;
    std::vector<double> raw;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) raw.push_back(c >= 2 && c < 62 ? (r + 3) * 100 + (c - 2) + 1 : 0.0);
    for (double v : raw) mean += v;
    mean /= static_cast<double>(raw.size());
    for (double v : raw) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(raw.size()));
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c)
            CHECK(res.image.at(r, c) == doctest::Approx((raw[static_cast<std::size_t>(r * 64 + c)] - mean) / sd).epsilon(1e-5));
}

TEST_CASE("dataset of 100 splits 70/15/15 and round-trips") {
    const auto dir = temp_dir("split");
    DatasetSpec spec;
    spec.count = 100;
    const Manifest m = write_dataset(dir, spec);
    CHECK(m.at("train").size() == 70);
    CHECK(m.at("val").size() == 15);
    CHECK(m.at("test").size() == 15);
    CHECK(read_manifest(dir) == m);
    CHECK(manifest_foreground_classes(dir) == 3);
    for (const auto& [split, entries] : m)
        for (const auto& e : entries) {
            REQUIRE(std::filesystem::exists(dir / e.image));
            CHECK(mgrd::read(dir / e.image).dtype == mgrd::DType::f32);
            CHECK(mgrd::load_labels(dir / e.scribble).height == 64);
            CHECK(mgrd::load_labels(dir / e.mask).width == 64);
        }
    const auto test = load_split(dir, m, "test");
    CHECK(test.size() == 15);

    const auto again = temp_dir("split_again");
    CHECK(write_dataset(again, spec) == m);
    CHECK(file_bytes(dir / "manifest.json") == file_bytes(again / "manifest.json"));
    for (const auto& e : m.at("train")) CHECK(file_bytes(dir / e.image) == file_bytes(again / e.image));
}

TEST_CASE("dataset split rounding for 60/20/20") {
    const auto dir = temp_dir("split602020");
    DatasetSpec spec;
    spec.count = 10;
    spec.split = {60, 20, 20};
    const Manifest m = write_dataset(dir, spec);
    CHECK(m.at("train").size() == 6);
    CHECK(m.at("val").size() == 2);
    CHECK(m.at("test").size() == 2);
}

TEST_CASE("dataset rejects a small count") {
    DatasetSpec spec;
    spec.count = 5;
    CHECK_THROWS_AS(write_dataset(temp_dir("small"), spec), ConfigError);
}
