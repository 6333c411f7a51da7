#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "scribseg/error.hpp"
#include "scribseg/harness.hpp"
#include "scribseg/mgrd.hpp"
#include "scribseg/render.hpp"
#include "scribseg/scribble.hpp"

using namespace scribseg;
namespace fs = std::filesystem;

namespace {

SplitRatios parse_split(const std::string& s) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            v.push_back(std::stod(part));
        } catch (const std::exception&) {
            throw ConfigError("--split expects three comma-separated numbers, got '" + s + "'");
        }
    }
    if (v.size() != 3) throw ConfigError("--split expects three comma-separated numbers, got '" + s + "'");
    return {v[0], v[1], v[2]};
}

Layout parse_layout(const std::string& s) {
    if (s == "cardiac") return Layout::cardiac;
    if (s == "prostate") return Layout::prostate;
    throw ConfigError("--layout must be cardiac or prostate");
}

void print_dice(const std::string& label, const DiceTable& t) {
    std::printf("%-28s", label.c_str());
    for (double v : t.per_class) std::printf(" %7.4f", v);
    std::printf("  mean %7.4f\n", t.mean);
}

void print_rows(const std::vector<ExperimentRow>& rows) {
    for (const auto& r : rows) print_dice(r.label, r.result.test);
}

TrainConfig config_with_overrides(const std::string& path, const std::string& data, const std::string& out) {
    TrainConfig cfg = path.empty() ? TrainConfig{} : load_config(path);
    if (!data.empty()) cfg.data_dir = data;
    if (!out.empty()) cfg.out_dir = out;
    if (cfg.data_dir.empty()) throw ConfigError("no data directory: set data_dir in the config or pass --data");
    return cfg;
}

std::vector<float> to_floats(const Grid<double>& g) { return {g.data.begin(), g.data.end()}; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scribble-supervised segmentation toolkit"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // gen-data
    DatasetSpec spec;
    std::string out_dir, split = "70,15,15", layout = "cardiac";
    int size = 64;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset");
    gen->add_option("--out", out_dir, "Output directory")->required();
    gen->add_option("--count", spec.count, "Number of samples (>= 10)");
    gen->add_option("--size", size, "Image side length");
    gen->add_option("--seed", spec.seed, "Dataset seed");
    gen->add_option("--split", split, "train,val,test ratios");
    gen->add_option("--layout", layout, "cardiac or prostate");
    gen->add_option("--alpha", spec.scribble.alpha, "Scribble length factor");
    gen->add_flag("--background", spec.scribble.include_background, "Also draw a background scribble");

    // gen-scribbles
    std::string data_dir;
    ScribbleSynthParams sp;
    bool no_gc = false;
    auto* gscr = app.add_subcommand("gen-scribbles", "Re-synthesize scribbles from the dense masks of a dataset");
    gscr->add_option("--data", data_dir, "Dataset directory")->required();
    gscr->add_option("--seed", sp.seed, "Scribble seed");
    gscr->add_option("--alpha", sp.alpha, "Scribble length factor");
    gscr->add_flag("--background", sp.include_background, "Also draw a background scribble");
    gscr->add_flag("--no-gc", no_gc, "Omit the global-category contour");

    // make-cpl
    double decay = 0.1, floor_v = 0.05;
    auto* mcpl = app.add_subcommand("make-cpl", "Write continuous pseudo-label stacks for every sample");
    mcpl->add_option("--data", data_dir, "Dataset directory")->required();
    mcpl->add_option("--decay", decay, "Decay factor");
    mcpl->add_option("--floor", floor_v, "Confidence floor");
    mcpl->add_option("--out", out_dir, "Output directory (default DATA/cpl)");

    // make-mask
    std::string image_path, scribble_path, out_path, mask_out;
    MCMConfig mcm;
    std::uint64_t seed = 0;
    auto* mmask = app.add_subcommand("make-mask", "Sample a scribble-weighted patch mask for one image");
    mmask->add_option("--image", image_path, "Image MGRD")->required();
    mmask->add_option("--scribble", scribble_path, "Scribble MGRD")->required();
    mmask->add_option("--ws", mcm.w_s, "Weight of scribble patches");
    mmask->add_option("--wo", mcm.w_o, "Weight of other patches");
    mmask->add_option("--phi", mcm.phi, "Masked fraction");
    mmask->add_option("--patch", mcm.patch, "Patch size");
    mmask->add_option("--seed", seed, "Sampling seed");
    mmask->add_option("--out", out_path, "Masked image MGRD")->required();
    mmask->add_option("--mask-out", mask_out, "Patch mask MGRD (default OUT with .patches.mgrd)");

    // train / eval / experiments
    std::string config_path;
    auto* tr = app.add_subcommand("train", "Train one model");
    tr->add_option("--config", config_path, "JSON config");
    tr->add_option("--data", data_dir, "Override data_dir");
    tr->add_option("--out", out_dir, "Override out_dir");

    std::string model_path, split_name = "test";
    auto* ev = app.add_subcommand("eval", "Per-class Dice of a saved model");
    ev->add_option("--model", model_path, "Model file")->required();
    ev->add_option("--data", data_dir, "Dataset directory")->required();
    ev->add_option("--split", split_name, "train, val or test");

    auto* ab = app.add_subcommand("ablate", "Train the six loss subsets");
    ab->add_option("--config", config_path, "JSON config");
    ab->add_option("--data", data_dir, "Override data_dir");
    ab->add_option("--out", out_dir, "Override out_dir");

    std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5}, fractions{0.25, 0.5, 1.0};
    auto* sens = app.add_subcommand("sensitivity", "Shrink-ratio and sample-count grid");
    sens->add_option("--config", config_path, "JSON config");
    sens->add_option("--data", data_dir, "Override data_dir");
    sens->add_option("--out", out_dir, "Override out_dir");
    sens->add_option("--ratios", ratios, "Shrink ratios")->delimiter(',');
    sens->add_option("--fractions", fractions, "Train split fractions")->delimiter(',');

    std::vector<double> decays{0.05, 0.1, 0.2, 0.5};
    auto* dec = app.add_subcommand("decay-study", "One run per decay factor");
    dec->add_option("--config", config_path, "JSON config");
    dec->add_option("--data", data_dir, "Override data_dir");
    dec->add_option("--out", out_dir, "Override out_dir");
    dec->add_option("--decays", decays, "Decay factors")->delimiter(',');

    double ratio = 0.0;
    auto* shr = app.add_subcommand("shrink", "Remove a fraction of every class's scribble pixels");
    shr->add_option("--scribble", scribble_path, "Scribble MGRD")->required();
    shr->add_option("--ratio", ratio, "Fraction to remove")->required();
    shr->add_option("--out", out_path, "Output MGRD")->required();

    std::string labels_path, cpl_path, patches_path;
    int channel = 0;
    auto* viz = app.add_subcommand("viz", "Render an image with a label, pseudo-label or patch-mask layer");
    viz->add_option("--image", image_path, "Image MGRD")->required();
    auto* viz_labels = viz->add_option("--labels", labels_path, "Scribble or dense mask MGRD (PPM output)");
    auto* viz_cpl = viz->add_option("--cpl", cpl_path, "Pseudo-label stack from make-cpl (PGM output)");
    viz->add_option("--channel", channel, "Stack channel for --cpl");
    auto* viz_mask = viz->add_option("--patches", patches_path, "Patch mask from make-mask (PGM output)");
    viz->add_option("--patch", mcm.patch, "Patch size for --patches");
    viz->add_option("--out", out_path, "Output PGM/PPM")->required();
    viz_labels->excludes(viz_cpl)->excludes(viz_mask);
    viz_cpl->excludes(viz_mask);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    try {
        if (*gen) {
            spec.phantom = parse_layout(layout) == Layout::cardiac ? PhantomParams::cardiac() : PhantomParams::prostate();
            // Geometry defaults are tuned for 64x64; other sizes scale them.
            const double scale = size / 64.0;
            spec.phantom.image_size = size;
            for (double* v : {&spec.phantom.inner_radius, &spec.phantom.ring_thickness, &spec.phantom.side_radius,
                              &spec.phantom.side_offset, &spec.phantom.center_jitter})
                *v *= scale;
            spec.split = parse_split(split);
            const auto m = write_dataset(out_dir, spec);
            std::printf("wrote %zu/%zu/%zu samples to %s\n", m.at("train").size(), m.at("val").size(),
                        m.at("test").size(), out_dir.c_str());
        } else if (*gscr) {
            sp.include_gc = !no_gc;
            sp.validate();
            const Manifest m = read_manifest(data_dir);
            const int k = manifest_foreground_classes(data_dir);
            std::uint64_t index = 0;
            for (const char* s : {"train", "val", "test"}) {
                const auto it = m.find(s);
                if (it == m.end()) continue;
                for (const auto& e : it->second) {
                    const DenseMask mask(mgrd::load_labels(fs::path(data_dir) / e.mask));
                    mgrd::save_labels(fs::path(data_dir) / e.scribble, synthesize_scribbles(mask, k, sp, index++));
                }
            }
            std::printf("rewrote %llu scribbles\n", static_cast<unsigned long long>(index));
        } else if (*mcpl) {
            const fs::path dir = out_dir.empty() ? fs::path(data_dir) / "cpl" : fs::path(out_dir);
            fs::create_directories(dir);
            const Manifest m = read_manifest(data_dir);
            const int k = manifest_foreground_classes(data_dir);
            std::size_t n = 0;
            for (const auto& [s, entries] : m)
                for (const auto& e : entries) {
                    const ScribbleAnnotation scr(mgrd::load_labels(fs::path(data_dir) / e.scribble));
                    const CPLStack st = build_cpl(scr, k, decay, floor_v);
                    std::vector<float> data;
                    for (const auto& map : st.foreground) {
                        const auto f = to_floats(map);
                        data.insert(data.end(), f.begin(), f.end());
                    }
                    const auto g = to_floats(st.gc);
                    data.insert(data.end(), g.begin(), g.end());
                    mgrd::save_stack(dir / fs::path(e.scribble).filename(), k + 1, st.height, st.width, data);
                    ++n;
                }
            std::printf("wrote %zu stacks (%d channels, GC last) to %s\n", n, k + 1, dir.c_str());
        } else if (*mmask) {
            mcm.validate();
            const ImageGrid img = mgrd::load_image(image_path);
            const ScribbleAnnotation scr(mgrd::load_labels(scribble_path));
            if (!scr.same_shape(img)) throw DataError("image and scribble dims differ");
            Rng rng(seed);
            const PatchMask pm = sample_mask(patch_weights(scr, mcm), mcm.phi, rng);
            mgrd::save_image(out_path, apply_mask(img, pm));
            if (mask_out.empty()) mask_out = fs::path(out_path).replace_extension(".patches.mgrd").string();
            std::vector<float> flags(pm.masked.begin(), pm.masked.end());
            mgrd::save_stack(mask_out, 1, pm.rows, pm.cols, flags);
            std::printf("masked %d of %d patches\n", pm.masked_count(), pm.rows * pm.cols);
        } else if (*tr) {
            const TrainConfig cfg = config_with_overrides(config_path, data_dir, out_dir);
            const TrainResult r = train(cfg);
            std::printf("%s\nbest epoch %d, val mean Dice %.4f\n", provenance_line(cfg).c_str(), r.best_epoch,
                        r.best_val_dice);
            print_dice("test", r.test);
        } else if (*ev) {
            nn::UNet model = nn::load_model(model_path);
            const Manifest m = read_manifest(data_dir);
            print_dice(split_name, evaluate(model, load_split(data_dir, m, split_name)));
        } else if (*ab) {
            const TrainConfig cfg = config_with_overrides(config_path, data_dir, out_dir);
            print_rows(ablate(cfg, load_dataset(cfg.data_dir)));
        } else if (*sens) {
            const TrainConfig cfg = config_with_overrides(config_path, data_dir, out_dir);
            print_rows(sensitivity(cfg, load_dataset(cfg.data_dir), ratios, fractions));
        } else if (*dec) {
            const TrainConfig cfg = config_with_overrides(config_path, data_dir, out_dir);
            const auto rows = decay_study(cfg, load_dataset(cfg.data_dir), decays);
            for (const auto& r : rows) {
                char label[64];
                std::snprintf(label, sizeof label, "%s (support %.1f)", r.label.c_str(), r.support_area);
                print_dice(label, r.result.test);
            }
        } else if (*shr) {
            const ScribbleAnnotation scr(mgrd::load_labels(scribble_path));
            const auto before = scribble_stats(scr);
            const auto out = shrink_scribble(scr, ratio);
            const auto after = scribble_stats(out);
            mgrd::save_labels(out_path, out);
            for (int c = 1; c < kGlobalCategory; ++c)
                if (before.pixels[c]) std::printf("class %d: %zu -> %zu pixels\n", c, before.pixels[c], after.pixels[c]);
        } else if (*viz) {
            const ImageGrid img = mgrd::load_image(image_path);
            if (!labels_path.empty()) {
                render_overlay(out_path, img, mgrd::load_labels(labels_path));
            } else if (!cpl_path.empty()) {
                const auto a = mgrd::read(cpl_path);
                if (a.dtype != mgrd::DType::f32 || a.dims.size() != 3) throw DataError(cpl_path + " is not a 3D f32 stack");
                if (channel < 0 || channel >= static_cast<int>(a.dims[0])) throw ConfigError("--channel out of range");
                ContinuousPseudoLabel map;
                static_cast<Grid<double>&>(map) = Grid<double>(static_cast<int>(a.dims[1]), static_cast<int>(a.dims[2]));
                const std::size_t plane = map.size();
                for (std::size_t i = 0; i < plane; ++i) map.data[i] = a.f32[static_cast<std::size_t>(channel) * plane + i];
                render_overlay(out_path, img, map);
            } else if (!patches_path.empty()) {
                const auto a = mgrd::read(patches_path);
                if (a.dtype != mgrd::DType::f32 || a.dims.size() != 3 || a.dims[0] != 1)
                    throw DataError(patches_path + " is not a patch mask");
                PatchMask pm;
                pm.patch = mcm.patch;
                pm.rows = static_cast<int>(a.dims[1]);
                pm.cols = static_cast<int>(a.dims[2]);
                for (float v : a.f32) pm.masked.push_back(v != 0.0f);
                render_overlay(out_path, img, pm);
            } else {
                throw ConfigError("viz needs one of --labels, --cpl or --patches");
            }
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return static_cast<int>(ExitCode::config);
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return static_cast<int>(ExitCode::data);
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return static_cast<int>(ExitCode::numerical);
    }
    return 0;
}
