#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "scribseg/grid.hpp"
#include "scribseg/mgrd.hpp"
#include "scribseg/rng.hpp"

using namespace scribseg;

namespace {

DenseMask random_mask(Rng& rng, int h, int w, int classes) {
    DenseMask m(h, w);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(classes)));
    return m;
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "scribseg_test_domain";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("one_hot encodes a single label") {
    DenseMask m(1, 1, 2);
    auto p = one_hot(m, 4);
    CHECK(p.at(0, 0, 0) == 0.0);
    CHECK(p.at(1, 0, 0) == 0.0);
    CHECK(p.at(2, 0, 0) == 1.0);
    CHECK(p.at(3, 0, 0) == 0.0);
}

TEST_CASE("one_hot of all-background mask") {
    DenseMask m(2, 2);
    auto p = one_hot(m, 2);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
            CHECK(p.at(0, r, c) == 1.0);
            CHECK(p.at(1, r, c) == 0.0);
        }
}

TEST_CASE("one_hot channel sums equal class counts") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = random_mask(rng, 8, 8, 4);
        auto p = one_hot(m, 4);
        for (int c = 0; c < 4; ++c) {
            double s = 0.0;
            for (int r = 0; r < 8; ++r)
                for (int col = 0; col < 8; ++col) s += p.at(c, r, col);
            std::size_t brute = 0;
            for (auto v : m.data) brute += v == c;
            CHECK(s == static_cast<double>(brute));
        }
    }
}

TEST_CASE("one_hot rejects out-of-range labels") {
    DenseMask m(2, 2, 3);
    CHECK_THROWS_AS(one_hot(m, 3), DataError);
}

TEST_CASE("argmax picks the largest channel, ties to lowest") {
    ProbMap p(3, 1, 1);
    p.at(0, 0, 0) = 0.1;
    p.at(1, 0, 0) = 0.7;
    p.at(2, 0, 0) = 0.2;
    CHECK(argmax_classes(p).at(0, 0) == 1);
    ProbMap t(2, 1, 1);
    t.at(0, 0, 0) = 0.5;
    t.at(1, 0, 0) = 0.5;
    CHECK(argmax_classes(t).at(0, 0) == 0);
}

TEST_CASE("argmax inverts one_hot") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto m = random_mask(rng, 9, 13, 5);
        CHECK(argmax_classes(one_hot(m, 5)) == m);
    }
}

TEST_CASE("argmax rejects NaN") {
    ProbMap p(2, 1, 1);
    p.at(0, 0, 0) = std::nan("");
    CHECK_THROWS_AS(argmax_classes(p), NumericalError);
}

TEST_CASE("dice anchors") {
    DenseMask a(4, 4), b(4, 4);
    CHECK(dice_score(a, b, 1) == 1.0);
    for (int c = 0; c < 4; ++c) a.at(0, c) = 1;
    CHECK(dice_score(a, a, 1) == 1.0);
    for (int c = 0; c < 4; ++c) b.at(3, c) = 1;
    CHECK(dice_score(a, b, 1) == 0.0);
    DenseMask d(4, 4);
    d.at(0, 0) = d.at(0, 1) = d.at(1, 0) = d.at(1, 1) = 1;
    CHECK(dice_score(a, d, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(dice_score(a, DenseMask(3, 4), 1), DataError);
}

TEST_CASE("dice is symmetric and 1 iff sets agree") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_mask(rng, 6, 6, 3);
        auto b = random_mask(rng, 6, 6, 3);
        for (std::uint8_t c = 0; c < 3; ++c) {
            CHECK(dice_score(a, b, c) == dice_score(b, a, c));
            bool same = true;
            for (std::size_t i = 0; i < a.size(); ++i) same &= (a.data[i] == c) == (b.data[i] == c);
            CHECK((dice_score(a, b, c) == 1.0) == same);
        }
    }
}

TEST_CASE("ProbMap validation") {
    ProbMap p(2, 2, 2, 0.5);
    CHECK_NOTHROW(p.validate());
    p.at(0, 1, 1) = 0.6;
    CHECK_THROWS_AS(p.validate(), DataError);
}

TEST_CASE("ImageGrid validation") {
    CHECK_THROWS_AS(ImageGrid(4, 8).validate(), DataError);
    ImageGrid g(8, 8);
    CHECK_NOTHROW(g.validate());
    g.at(2, 2) = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(g.validate(), DataError);
}

TEST_CASE("class presets") {
    auto c = ClassConfig::cardiac();
    CHECK(c.foreground_count() == 3);
    CHECK(c.output_channels() == 4);
    CHECK(c.foreground_codes() == std::vector<std::uint8_t>{1, 2, 3});
    CHECK(ClassConfig::prostate().output_channels() == 3);
    CHECK_THROWS_AS(ClassConfig{}.validate(), ConfigError);
}

TEST_CASE("MGRD header layout is byte exact") {
    mgrd::Array a;
    a.dtype = mgrd::DType::u8;
    a.dims = {2, 3};
    a.u8 = {1, 2, 3, 4, 5, 255};
    auto bytes = mgrd::encode(a);
    const std::vector<std::uint8_t> expected = {'M', 'G', 'R', 'D', 1, 1, 2, 2, 0, 0, 0, 3, 0, 0, 0, 1, 2, 3, 4, 5, 255};
    CHECK(bytes == expected);
    CHECK(mgrd::decode(bytes) == a);
}

TEST_CASE("MGRD f32 is little-endian") {
    mgrd::Array a;
    a.dtype = mgrd::DType::f32;
    a.dims = {1};
    a.f32 = {1.0f};
    auto bytes = mgrd::encode(a);
    REQUIRE(bytes.size() == 4 + 3 + 4 + 4);
    CHECK(bytes[11] == 0x00);
    CHECK(bytes[12] == 0x00);
    CHECK(bytes[13] == 0x80);
    CHECK(bytes[14] == 0x3f);
}

TEST_CASE("MGRD rejects malformed input") {
    mgrd::Array a;
    a.dims = {2, 2};
    a.u8 = {0, 1, 2, 3};
    auto good = mgrd::encode(a);
    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(mgrd::decode(bad_magic), DataError);
    auto bad_version = good;
    bad_version[4] = 9;
    CHECK_THROWS_AS(mgrd::decode(bad_version), DataError);
    auto bad_dtype = good;
    bad_dtype[5] = 7;
    CHECK_THROWS_AS(mgrd::decode(bad_dtype), DataError);
    auto truncated = good;
    truncated.pop_back();
    CHECK_THROWS_WITH_AS(mgrd::decode(truncated), doctest::Contains("payload"), DataError);
}

TEST_CASE("MGRD file round trip is bitwise") {
    Rng rng(5);
    ImageGrid img(16, 12);
    for (auto& v : img.data) v = static_cast<float>(rng.normal());
    auto path = temp_path("img.mgrd");
    mgrd::save_image(path, img);
    auto back = mgrd::load_image(path);
    CHECK(back.height == 16);
    CHECK(back.width == 12);
    CHECK(std::memcmp(back.data.data(), img.data.data(), img.data.size() * sizeof(float)) == 0);

    ScribbleAnnotation s(10, 10);
    s.at(3, 4) = 1;
    s.at(5, 5) = kGlobalCategory;
    auto lpath = temp_path("lab.mgrd");
    mgrd::save_labels(lpath, s);
    CHECK(mgrd::load_labels(lpath) == static_cast<const Grid<std::uint8_t>&>(s));
}

TEST_CASE("rng determinism and stream independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    auto d1 = Rng::derive(42, 1);
    auto d1b = Rng::derive(42, 1);
    auto d2 = Rng::derive(42, 2);
    CHECK(d1.next() == d1b.next());
    CHECK(d1.next() != d2.next());
}

TEST_CASE("rng uniform moments") {
    Rng r(1);
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        CHECK(r.below(7) < 7u);
    }
}
