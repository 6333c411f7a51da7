#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "scribseg/error.hpp"
#include "scribseg/harness.hpp"
#include "scribseg/render.hpp"

using namespace scribseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "scribseg_test_harness" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const Dataset& tiny_dataset() {
    static const Dataset d = [] {
        const auto dir = scratch("data");
        DatasetSpec spec;
        spec.count = 10;
        spec.seed = 7;
        spec.split = {60, 20, 20};
        spec.phantom.image_size = 32;
        spec.phantom.inner_radius = 4.0;
        spec.phantom.ring_thickness = 3.0;
        spec.phantom.side_radius = 5.0;
        write_dataset(dir, spec);
        return load_dataset(dir);
    }();
    return d;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.epochs = 3;
    c.batch_size = 2;
    c.learning_rate = 1e-2;
    c.seed = 3;
    c.unet.depth = 2;
    c.unet.base_channels = 4;
    c.unet.groups = 2;
    c.mcm.patch = 8;
    return c;
}

}  // namespace

TEST_CASE("config defaults match the documented values") {
    const TrainConfig c = config_from_json(nlohmann::json::object());
    CHECK(c.epochs == 200);
    CHECK(c.batch_size == 4);
    CHECK(c.learning_rate == 1e-4);
    CHECK(c.mcm.w_s == 2.0);
    CHECK(c.mcm.w_o == 1.0);
    CHECK(c.mcm.phi == 0.5);
    CHECK(c.mcm.patch == 16);
    CHECK(c.weights.lambda1 == 0.5);
    CHECK(c.weights.lambda4 == 0.1);
    CHECK(c.decay == 0.1);
    CHECK(c.floor == 0.05);
    CHECK(c.enabled == TermSet::all());
    CHECK(c.con.form == ConForm::entropy_weighted);
    CHECK(c.gc_mask_source == GcMaskSource::annotation);
    CHECK(c.gc_region == GcRegion::stroke);
    CHECK(c.enhance_mode == EnhanceMode::multiply);
}

TEST_CASE("config round-trips through JSON") {
    TrainConfig c = tiny_config();
    c.data_dir = "/data/x";
    c.out_dir = "/out/y";
    c.enabled = TermSet::only({Term::pce, Term::con});
    c.con.form = ConForm::cross_entropy;
    c.gc_mask_source = GcMaskSource::prediction_fg;
    c.gc_region = GcRegion::enclosed;
    c.enhance_mode = EnhanceMode::background_fill;
    c.shrink_ratio = 0.25;
    c.unet.norm = nn::NormKind::batch;
    const TrainConfig back = config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(config_hash(back) == config_hash(c));
}

TEST_CASE("config rejects unknown keys and bad values") {
    CHECK_THROWS_AS(config_from_json({{"epoch", 3}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"mcm", {{"ws", 0.4}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"con_form", "entropy"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"epochs", "ten"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"epochs", 0}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"enabled_losses", {"cc"}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"enabled_losses", {"pCE", "bogus"}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"mcm", {{"phi", 1.5}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"lambda2", -0.1}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config hash ignores paths but not hyperparameters") {
    TrainConfig a = tiny_config(), b = tiny_config();
    b.data_dir = "/elsewhere";
    b.out_dir = "/other";
    b.write_checkpoints = false;
    CHECK(config_hash(a) == config_hash(b));
    b.decay = 0.2;
    CHECK(config_hash(a) != config_hash(b));
    const auto line = provenance_line(a);
    CHECK(line.rfind("# config_hash=", 0) == 0);
    CHECK(line.find("seed=3") != std::string::npos);
    CHECK(line.find(std::string("version=") + kVersion) != std::string::npos);
}

TEST_CASE("dice table against hand-computed values") {
    DenseMask truth(2, 4), pred(2, 4);
    // truth: class 1 on 4 pixels, class 2 on 2
    truth.data = {1, 1, 1, 1, 2, 2, 0, 0};
    pred.data = {1, 1, 0, 0, 2, 0, 0, 0};
    const auto t = dice_table({pred}, {truth}, 2);
    CHECK(t.per_class[0] == doctest::Approx(2.0 * 2 / (2 + 4)));
    CHECK(t.per_class[1] == doctest::Approx(2.0 * 1 / (1 + 2)));
    CHECK(t.mean == doctest::Approx((t.per_class[0] + t.per_class[1]) / 2));

    const auto self = dice_table({truth, pred}, {truth, pred}, 2);
    CHECK(self.mean == doctest::Approx(1.0));
    CHECK_THROWS_AS(dice_table({}, {}, 2), DataError);
    CHECK_THROWS_AS(dice_table({pred}, {}, 2), DataError);
}

TEST_CASE("evaluate is repeatable and rejects an empty split") {
    const Dataset& d = tiny_dataset();
    nn::UNetConfig uc = tiny_config().unet;
    uc.out_classes = d.foreground_classes + 1;
    nn::UNet model = nn::build_unet(uc);
    const auto a = evaluate(model, d.val);
    const auto b = evaluate(model, d.val);
    CHECK(a.per_class == b.per_class);
    CHECK(a.mean >= 0.0);
    CHECK(a.mean <= 1.0);
    CHECK_THROWS_AS(evaluate(model, {}), DataError);
}

TEST_CASE("training is byte-identical across runs") {
    const Dataset& d = tiny_dataset();
    TrainConfig c = tiny_config();
    c.out_dir = scratch("run_a");
    const auto ra = train(c, d);
    c.out_dir = scratch("run_b");
    const auto rb = train(c, d);

    const auto a = fs::temp_directory_path() / "scribseg_test_harness/run_a";
    const auto b = c.out_dir;
    for (const char* f : {"metrics.csv", "best.mmdl", "final.mmdl", "final.mopt", "config.json"}) {
        CAPTURE(f);
        REQUIRE(fs::exists(a / f));
    }
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "best.mmdl") == slurp(b / "best.mmdl"));
    CHECK(slurp(a / "final.mopt") == slurp(b / "final.mopt"));
    CHECK(ra.best_epoch == rb.best_epoch);
    CHECK(ra.test.per_class == rb.test.per_class);
}

TEST_CASE("metrics file layout") {
    const Dataset& d = tiny_dataset();
    TrainConfig c = tiny_config();
    c.epochs = 4;
    c.eval_interval = 3;
    c.write_checkpoints = false;
    c.out_dir = scratch("layout");
    const auto r = train(c, d);
    REQUIRE(r.rows.size() == 4);
    CHECK(r.rows[0].evaluated == false);
    CHECK(r.rows[2].evaluated);
    CHECK(r.rows[3].evaluated);  // final epoch always evaluated
    CHECK_FALSE(fs::exists(c.out_dir / "best.mmdl"));

    std::istringstream in(slurp(c.out_dir / "metrics.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == provenance_line(c));
    std::getline(in, line);
    CHECK(line == "epoch,pce,mpce,cc,en,con,total,val_dice_1,val_dice_2,val_dice_3,val_mean_dice");
    std::getline(in, line);
    CHECK(line.substr(0, 2) == "1,");
    CHECK(line.substr(line.size() - 4) == ",,,,");
}

TEST_CASE("losses are finite and the objective decreases") {
    const Dataset& d = tiny_dataset();
    TrainConfig c = tiny_config();
    c.epochs = 8;
    c.eval_interval = 8;
    const auto r = train(c, d);
    for (const auto& row : r.rows) {
        CHECK(std::isfinite(row.loss.total));
        CHECK(row.loss.total == doctest::Approx(row.loss.pce + 0.5 * row.loss.mpce +
                                                0.1 * (row.loss.cc + row.loss.en + row.loss.con)));
    }
    CHECK(r.rows.back().loss.total < r.rows.front().loss.total);
    CHECK(r.best_epoch == 8);
}

TEST_CASE("disabled terms are reported as zero") {
    const Dataset& d = tiny_dataset();
    TrainConfig c = tiny_config();
    c.epochs = 1;
    c.enabled = TermSet::only({Term::pce});
    const auto r = train(c, d);
    CHECK(r.rows[0].loss.mpce == 0.0);
    CHECK(r.rows[0].loss.cc == 0.0);
    CHECK(r.rows[0].loss.en == 0.0);
    CHECK(r.rows[0].loss.con == 0.0);
    CHECK(r.rows[0].loss.total == r.rows[0].loss.pce);
}

TEST_CASE("training rejects empty splits") {
    Dataset d = tiny_dataset();
    d.val.clear();
    CHECK_THROWS_AS(train(tiny_config(), d), DataError);
    d = tiny_dataset();
    d.train.clear();
    CHECK_THROWS_AS(train(tiny_config(), d), DataError);
    TrainConfig c = tiny_config();
    CHECK_THROWS_AS(train(c), ConfigError);  // no data_dir
}

TEST_CASE("ablation runs the six subsets in table order") {
    const auto subsets = default_ablation_subsets();
    REQUIRE(subsets.size() == 6);
    CHECK(subsets.front() == TermSet::only({Term::pce}));
    CHECK(subsets.back() == TermSet::all());
    CHECK(subsets[4] == TermSet::only({Term::pce, Term::con}));

    const Dataset& d = tiny_dataset();
    TrainConfig c = tiny_config();
    c.epochs = 1;
    c.write_checkpoints = false;
    c.out_dir = scratch("ablate");
    const auto rows = ablate(c, d, {subsets[0], subsets[5]});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].label == "pCE");
    CHECK(fs::exists(c.out_dir / "pCE" / "metrics.csv"));
    const auto csv = slurp(c.out_dir / "ablation.csv");
    CHECK(csv.find("\npCE,pCE,") != std::string::npos);
    CHECK_THROWS_AS(ablate(c, d, {TermSet::only({Term::cc})}), ConfigError);
}

TEST_CASE("sensitivity shares the base run") {
    const Dataset& d = tiny_dataset();
    TrainConfig c = tiny_config();
    c.epochs = 1;
    const auto rows = sensitivity(c, d, {0.0, 0.5}, {1.0, 0.5});
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].label == "ratio_0");
    CHECK(rows[2].label == "fraction_1");
    CHECK(rows[0].result.test.per_class == rows[2].result.test.per_class);
    CHECK(rows[1].config.shrink_ratio == 0.5);
    CHECK(rows[3].config.train_fraction == 0.5);

    const auto base = train(c, d);
    CHECK(base.test.per_class == rows[0].result.test.per_class);
    CHECK_THROWS_AS(sensitivity(c, d, {1.5}, {}), ConfigError);
}

TEST_CASE("support area shrinks as the decay grows") {
    const auto areas = support_areas(tiny_dataset(), {0.05, 0.1, 0.2, 0.5}, 0.05);
    REQUIRE(areas.size() == 4);
    for (std::size_t i = 1; i < areas.size(); ++i) CHECK(areas[i] < areas[i - 1]);
    CHECK_THROWS_AS(support_areas(tiny_dataset(), {0.0}, 0.05), ConfigError);
}

TEST_CASE("rendered files parse with the right dimensions") {
    const auto dir = scratch("render");
    const Sample& s = tiny_dataset().train.front();

    render_overlay(dir / "overlay.ppm", s.image, s.scribble);
    const auto ppm = read_pnm(dir / "overlay.ppm");
    CHECK(ppm.channels == 3);
    CHECK(ppm.width == s.image.width);
    CHECK(ppm.height == s.image.height);
    for (std::size_t i = 0; i < s.scribble.size(); ++i) {
        const auto code = s.scribble.data[i];
        if (!has_palette_color(code)) continue;
        const auto rgb = palette_color(code);
        CHECK(ppm.pixels[3 * i] == rgb[0]);
        CHECK(ppm.pixels[3 * i + 1] == rgb[1]);
        CHECK(ppm.pixels[3 * i + 2] == rgb[2]);
    }

    const auto cpl = build_cpl(s.scribble, 3);
    render_overlay(dir / "cpl.pgm", s.image, cpl.foreground[0]);
    const auto pgm = read_pnm(dir / "cpl.pgm");
    CHECK(pgm.channels == 1);
    for (std::size_t i = 0; i < s.scribble.size(); ++i)
        if (s.scribble.data[i] == 1) CHECK(pgm.pixels[i] == 255);

    Grid<double> zeros(5, 7);
    write_pgm(dir / "zeros.pgm", zeros);
    const auto z = read_pnm(dir / "zeros.pgm");
    CHECK(z.width == 7);
    CHECK(z.height == 5);
    for (auto v : z.pixels) CHECK(v == 0);
}

TEST_CASE("read_pnm rejects malformed files") {
    const auto dir = scratch("bad_pnm");
    std::ofstream(dir / "magic.pgm") << "P2\n2 2\n255\n0 0 0 0";
    std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\n" << std::string(10, '\0');
    std::ofstream(dir / "long.pgm", std::ios::binary) << "P5\n2 2\n255\n" << std::string(5, '\0');
    std::ofstream(dir / "depth.pgm", std::ios::binary) << "P5\n2 2\n65535\n" << std::string(8, '\0');
    CHECK_THROWS_AS(read_pnm(dir / "magic.pgm"), DataError);
    CHECK_THROWS_AS(read_pnm(dir / "short.pgm"), DataError);
    CHECK_THROWS_AS(read_pnm(dir / "long.pgm"), DataError);
    CHECK_THROWS_AS(read_pnm(dir / "depth.pgm"), DataError);
    CHECK_THROWS_AS(read_pnm(dir / "missing.pgm"), DataError);
}
