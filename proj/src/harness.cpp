#include "scribseg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>

#include "scribseg/error.hpp"
#include "scribseg/scribble.hpp"

namespace scribseg {

using nlohmann::json;

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
    if (!(decay > 0.0)) throw ConfigError("decay must be > 0");
    if (!(floor > 0.0 && floor < 1.0)) throw ConfigError("floor must lie in (0, 1)");
    if (!(shrink_ratio >= 0.0 && shrink_ratio <= 1.0)) throw ConfigError("shrink_ratio must lie in [0, 1]");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must lie in (0, 1]");
    if (!enabled.has(Term::pce)) throw ConfigError("enabled_losses must contain pCE");
    mcm.validate();
    weights.validate();
    unet.validate();
}

namespace {

const char* norm_name(nn::NormKind k) { return k == nn::NormKind::batch ? "batch" : "group"; }
const char* con_form_name(ConForm f) { return f == ConForm::entropy_weighted ? "entropy_weighted" : "cross_entropy"; }
const char* gc_source_name(GcMaskSource s) { return s == GcMaskSource::annotation ? "annotation" : "prediction_fg"; }
const char* gc_region_name(GcRegion r) { return r == GcRegion::stroke ? "stroke" : "enclosed"; }
const char* enhance_name(EnhanceMode m) { return m == EnhanceMode::multiply ? "multiply" : "background_fill"; }

template <typename E>
E parse_enum(const json& v, const char* key, std::initializer_list<std::pair<const char*, E>> options) {
    if (!v.is_string()) throw ConfigError(std::string("config key '") + key + "' must be a string");
    const auto s = v.get<std::string>();
    std::string names;
    for (const auto& [name, value] : options) {
        if (s == name) return value;
        names += (names.empty() ? "" : ", ") + std::string(name);
    }
    throw ConfigError(std::string("config key '") + key + "' must be one of " + names + ", got '" + s + "'");
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
    const std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError(std::string("unknown config key '") + k + "' in " + where);
}

json training_json(const TrainConfig& c) {
    json enabled = json::array();
    for (Term t : kAllTerms)
        if (c.enabled.has(t)) enabled.push_back(term_name(t));
    return {
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"seed", c.seed},
        {"mcm",
         {{"w_s", c.mcm.w_s}, {"w_o", c.mcm.w_o}, {"phi", c.mcm.phi}, {"patch", c.mcm.patch}, {"weight_gc", c.mcm.weight_gc}}},
        {"lambda1", c.weights.lambda1},
        {"lambda2", c.weights.lambda2},
        {"lambda3", c.weights.lambda3},
        {"lambda4", c.weights.lambda4},
        {"decay", c.decay},
        {"floor", c.floor},
        {"unet",
         {{"depth", c.unet.depth},
          {"base_channels", c.unet.base_channels},
          {"norm", norm_name(c.unet.norm)},
          {"groups", c.unet.groups}}},
        {"eval_interval", c.eval_interval},
        {"enabled_losses", enabled},
        {"pce_include_background", c.pce_include_background},
        {"con_form", con_form_name(c.con.form)},
        {"gc_in_con", c.con.gc_in_con},
        {"gc_mask_source", gc_source_name(c.gc_mask_source)},
        {"gc_region", gc_region_name(c.gc_region)},
        {"enhance_mode", enhance_name(c.enhance_mode)},
        {"fixed_masks", c.fixed_masks},
        {"shrink_ratio", c.shrink_ratio},
        {"train_fraction", c.train_fraction},
    };
}

}  // namespace

json to_json(const TrainConfig& cfg) {
    json j = training_json(cfg);
    j["data_dir"] = cfg.data_dir.string();
    j["out_dir"] = cfg.out_dir.string();
    j["write_checkpoints"] = cfg.write_checkpoints;
    return j;
}

TrainConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(j,
                   {"data_dir", "out_dir", "epochs", "batch_size", "learning_rate", "seed", "mcm", "lambda1", "lambda2",
                    "lambda3", "lambda4", "decay", "floor", "unet", "eval_interval", "enabled_losses",
                    "pce_include_background", "con_form", "gc_in_con", "gc_mask_source", "gc_region", "enhance_mode", "fixed_masks",
                    "shrink_ratio", "train_fraction", "write_checkpoints"},
                   "config");
    TrainConfig c;
    std::string path;
    if (j.contains("data_dir")) {
        read_key(j, "data_dir", path);
        c.data_dir = path;
    }
    if (j.contains("out_dir")) {
        read_key(j, "out_dir", path);
        c.out_dir = path;
    }
    read_key(j, "epochs", c.epochs);
    read_key(j, "batch_size", c.batch_size);
    read_key(j, "learning_rate", c.learning_rate);
    read_key(j, "seed", c.seed);
    if (const auto it = j.find("mcm"); it != j.end()) {
        if (!it->is_object()) throw ConfigError("config key 'mcm' must be an object");
        reject_unknown(*it, {"w_s", "w_o", "phi", "patch", "weight_gc"}, "mcm");
        read_key(*it, "w_s", c.mcm.w_s);
        read_key(*it, "w_o", c.mcm.w_o);
        read_key(*it, "phi", c.mcm.phi);
        read_key(*it, "patch", c.mcm.patch);
        read_key(*it, "weight_gc", c.mcm.weight_gc);
    }
    read_key(j, "lambda1", c.weights.lambda1);
    read_key(j, "lambda2", c.weights.lambda2);
    read_key(j, "lambda3", c.weights.lambda3);
    read_key(j, "lambda4", c.weights.lambda4);
    read_key(j, "decay", c.decay);
    read_key(j, "floor", c.floor);
    if (const auto it = j.find("unet"); it != j.end()) {
        if (!it->is_object()) throw ConfigError("config key 'unet' must be an object");
        reject_unknown(*it, {"depth", "base_channels", "norm", "groups"}, "unet");
        read_key(*it, "depth", c.unet.depth);
        read_key(*it, "base_channels", c.unet.base_channels);
        read_key(*it, "groups", c.unet.groups);
        if (it->contains("norm"))
            c.unet.norm = parse_enum<nn::NormKind>(it->at("norm"), "unet.norm",
                                                   {{"group", nn::NormKind::group}, {"batch", nn::NormKind::batch}});
    }
    read_key(j, "eval_interval", c.eval_interval);
    if (const auto it = j.find("enabled_losses"); it != j.end()) {
        if (!it->is_array()) throw ConfigError("config key 'enabled_losses' must be an array of term names");
        c.enabled.on.fill(false);
        for (const auto& v : *it) {
            if (!v.is_string()) throw ConfigError("enabled_losses entries must be strings");
            c.enabled.on[static_cast<std::size_t>(term_from_name(v.get<std::string>()))] = true;
        }
    }
    read_key(j, "pce_include_background", c.pce_include_background);
    if (j.contains("con_form"))
        c.con.form = parse_enum<ConForm>(j.at("con_form"), "con_form",
                                         {{"entropy_weighted", ConForm::entropy_weighted},
                                          {"cross_entropy", ConForm::cross_entropy}});
    read_key(j, "gc_in_con", c.con.gc_in_con);
    if (j.contains("gc_mask_source"))
        c.gc_mask_source = parse_enum<GcMaskSource>(
            j.at("gc_mask_source"), "gc_mask_source",
            {{"annotation", GcMaskSource::annotation}, {"prediction_fg", GcMaskSource::prediction_fg}});
    if (j.contains("gc_region"))
        c.gc_region = parse_enum<GcRegion>(j.at("gc_region"), "gc_region",
                                           {{"stroke", GcRegion::stroke}, {"enclosed", GcRegion::enclosed}});
    if (j.contains("enhance_mode"))
        c.enhance_mode = parse_enum<EnhanceMode>(
            j.at("enhance_mode"), "enhance_mode",
            {{"multiply", EnhanceMode::multiply}, {"background_fill", EnhanceMode::background_fill}});
    read_key(j, "fixed_masks", c.fixed_masks);
    read_key(j, "shrink_ratio", c.shrink_ratio);
    read_key(j, "train_fraction", c.train_fraction);
    read_key(j, "write_checkpoints", c.write_checkpoints);
    c.validate();
    return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::uint64_t config_hash(const TrainConfig& cfg) {
    const std::string text = training_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string provenance_line(const TrainConfig& cfg) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "# config_hash=%016llx seed=%llu version=%s",
                  static_cast<unsigned long long>(config_hash(cfg)), static_cast<unsigned long long>(cfg.seed), kVersion);
    return buf;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const Manifest m = read_manifest(dir);
    Dataset d;
    d.foreground_classes = manifest_foreground_classes(dir);
    d.train = load_split(dir, m, "train");
    d.val = load_split(dir, m, "val");
    d.test = load_split(dir, m, "test");
    return d;
}

DiceTable dice_table(const std::vector<DenseMask>& predictions, const std::vector<DenseMask>& truth, int foreground_classes) {
    if (predictions.empty()) throw DataError("cannot evaluate an empty split");
    if (predictions.size() != truth.size()) throw DataError("prediction and ground-truth counts differ");
    DiceTable t;
    t.per_class.assign(static_cast<std::size_t>(foreground_classes), 0.0);
    for (std::size_t i = 0; i < predictions.size(); ++i)
        for (int c = 1; c <= foreground_classes; ++c)
            t.per_class[static_cast<std::size_t>(c - 1)] += dice_score(predictions[i], truth[i], static_cast<std::uint8_t>(c));
    for (auto& v : t.per_class) {
        v /= static_cast<double>(predictions.size());
        t.mean += v;
    }
    t.mean /= foreground_classes;
    return t;
}

namespace {

ad::Tensor stack_images(const std::vector<const ImageGrid*>& images) {
    const int h = images.front()->height, w = images.front()->width;
    ad::Tensor x({static_cast<int>(images.size()), 1, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t b = 0; b < images.size(); ++b) {
        if (!images[b]->same_shape(h, w)) throw DataError("images in a batch differ in size");
        for (std::size_t p = 0; p < plane; ++p) x[b * plane + p] = images[b]->data[p];
    }
    return x;
}

DenseMask argmax_item(const ad::Tensor& y, int n) {
    const int ch = y.dim(1), h = y.dim(2), w = y.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    DenseMask m(h, w);
    const double* base = y.data() + static_cast<std::size_t>(n) * ch * plane;
    for (std::size_t p = 0; p < plane; ++p) {
        int best = 0;
        for (int c = 1; c < ch; ++c)
            if (base[c * plane + p] > base[best * plane + p]) best = c;
        m.data[p] = static_cast<std::uint8_t>(best);
    }
    return m;
}

}  // namespace

std::vector<DenseMask> predict(nn::UNet& model, const std::vector<Sample>& samples, int batch_size) {
    std::vector<DenseMask> out;
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
        std::vector<const ImageGrid*> imgs;
        for (std::size_t i = start; i < std::min(samples.size(), start + static_cast<std::size_t>(batch_size)); ++i)
            imgs.push_back(&samples[i].image);
        const ad::Var y = model.forward(stack_images(imgs), false);
        for (int n = 0; n < static_cast<int>(imgs.size()); ++n) out.push_back(argmax_item(y.value(), n));
    }
    return out;
}

DiceTable evaluate(nn::UNet& model, const std::vector<Sample>& samples, int batch_size) {
    if (samples.empty()) throw DataError("cannot evaluate an empty split");
    std::vector<DenseMask> truth;
    for (const auto& s : samples) truth.push_back(s.mask);
    return dice_table(predict(model, samples, batch_size), truth, model.config().out_classes - 1);
}

void write_metrics_csv(const std::filesystem::path& path, const TrainConfig& cfg, const std::vector<MetricsRow>& rows,
                       int foreground_classes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << provenance_line(cfg) << '\n';
    out << "epoch,pce,mpce,cc,en,con,total";
    for (int c = 1; c <= foreground_classes; ++c) out << ",val_dice_" << c;
    out << ",val_mean_dice\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        out << r.epoch << ',' << num(r.loss.pce) << ',' << num(r.loss.mpce) << ',' << num(r.loss.cc) << ','
            << num(r.loss.en) << ',' << num(r.loss.con) << ',' << num(r.loss.total);
        for (int c = 0; c < foreground_classes; ++c)
            out << ',' << (r.evaluated ? num(r.val.per_class[static_cast<std::size_t>(c)]) : "");
        out << ',' << (r.evaluated ? num(r.val.mean) : "") << '\n';
    }
    if (!out) throw ConfigError("failed writing " + path.string());
}

namespace {

struct TrainItem {
    const Sample* sample;
    ScribbleAnnotation scribble;  // after shrinking
    CPLStack cpl;
    PatchGrid patches;
    BinaryGrid gc_mask;
    PatchMask fixed_mask;
};

struct Snapshot {
    std::vector<ad::Tensor> params;
    std::vector<ad::BatchNormStats> stats;

    static Snapshot of(nn::UNet& m) {
        Snapshot s;
        for (const auto& p : m.parameters()) s.params.push_back(p.value());
        s.stats = m.norm_stats();
        return s;
    }
    void restore(nn::UNet& m) const {
        for (std::size_t i = 0; i < params.size(); ++i) m.parameters()[i].mutable_value() = params[i];
        m.norm_stats() = stats;
    }
};

void add_report(LossReport& acc, const LossReport& r) {
    acc.pce += r.pce;
    acc.mpce += r.mpce;
    acc.cc += r.cc;
    acc.en += r.en;
    acc.con += r.con;
    acc.total += r.total;
}

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const Dataset& data) {
    TrainConfig cfg = cfg_in;
    cfg.validate();
    const int k = data.foreground_classes;
    cfg.unet.out_classes = k + 1;
    cfg.unet.seed = cfg.seed;
    if (data.train.empty()) throw DataError("training split is empty");
    if (data.val.empty()) throw DataError("validation split is empty");

    const auto n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(data.train.size()))));
    std::vector<TrainItem> items(n_train);
    std::vector<std::uint8_t> codes;
    for (int c = 1; c <= k; ++c) codes.push_back(static_cast<std::uint8_t>(c));
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n_train; ++i) {
        TrainItem& it = items[i];
        it.sample = &data.train[i];
        it.scribble = cfg.shrink_ratio > 0.0 ? shrink_scribble(it.sample->scribble, cfg.shrink_ratio, codes)
                                             : it.sample->scribble;
        it.cpl = build_cpl(it.scribble, k, cfg.decay, cfg.floor, cfg.gc_region);
        it.patches = patch_weights(it.scribble, cfg.mcm);
        it.gc_mask = gc_binary_mask(it.cpl.gc);
    }

    nn::UNet model = nn::build_unet(cfg.unet);
    nn::AdamState opt;
    opt.learning_rate = cfg.learning_rate;
    Rng rng = Rng::derive(cfg.seed, 1);
    if (cfg.fixed_masks)
        for (auto& it : items) it.fixed_mask = sample_mask(it.patches, cfg.mcm.phi, rng);

    const bool need_masked = cfg.enabled.has(Term::mpce) || cfg.enabled.has(Term::cc);
    const bool need_enhanced = cfg.enabled.has(Term::cc) || cfg.enabled.has(Term::en);

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        std::ofstream(cfg.out_dir / "config.json") << to_json(cfg).dump(2) << '\n';
    }

    TrainResult res;
    res.config_hash = config_hash(cfg);
    Snapshot best;
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        MetricsRow row;
        row.epoch = epoch;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const TrainItem*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&items[order[i]]);

            std::vector<const ImageGrid*> imgs;
            std::vector<ImageGrid> masked;
            std::vector<const ScribbleAnnotation*> scr;
            std::vector<const CPLStack*> cpl;
            masked.reserve(batch.size());
            for (const TrainItem* it : batch) {
                imgs.push_back(&it->sample->image);
                // Masks are drawn for every config so all runs share one rng stream.
                const PatchMask pm = cfg.fixed_masks ? it->fixed_mask : sample_mask(it->patches, cfg.mcm.phi, rng);
                masked.push_back(apply_mask(it->sample->image, pm));
                scr.push_back(&it->scribble);
                cpl.push_back(&it->cpl);
            }
            std::vector<const ImageGrid*> masked_ptrs;
            for (const auto& m : masked) masked_ptrs.push_back(&m);

            try {
                const ad::Var y = model.forward(stack_images(imgs), true);
                LossTerms terms;
                terms.pce = loss_pce(y, scr, cfg.pce_include_background);
                ad::Var ym;
                if (need_masked) ym = model.forward(stack_images(masked_ptrs), true);
                if (cfg.enabled.has(Term::mpce)) terms.mpce = loss_pce(ym, scr, cfg.pce_include_background);
                if (need_enhanced) {
                    std::vector<BinaryGrid> gm;
                    for (std::size_t b = 0; b < batch.size(); ++b)
                        gm.push_back(cfg.gc_mask_source == GcMaskSource::annotation
                                         ? batch[b]->gc_mask
                                         : prediction_fg_mask(y.value(), static_cast<int>(b)));
                    const ad::Var ye = enhance(y, gm, cfg.enhance_mode);
                    if (cfg.enabled.has(Term::cc)) terms.cc = loss_cc(ym, ye);
                    if (cfg.enabled.has(Term::en)) terms.en = loss_en(y, ye);
                }
                if (cfg.enabled.has(Term::con)) terms.con = loss_con(cpl, y, cfg.con);
                const TotalLoss total = loss_total(terms, cfg.weights, cfg.enabled);
                nn::backward_and_step(model, total.total, opt);
                add_report(row.loss, total.report);
            } catch (const NumericalError& e) {
                throw NumericalError("epoch " + std::to_string(epoch) + " step " + std::to_string(steps + 1) + ": " +
                                     e.what());
            }
            ++steps;
        }
        for (double* v : {&row.loss.pce, &row.loss.mpce, &row.loss.cc, &row.loss.en, &row.loss.con, &row.loss.total})
            *v /= steps;

        if (epoch % cfg.eval_interval == 0 || epoch == cfg.epochs) {
            row.evaluated = true;
            row.val = evaluate(model, data.val, cfg.batch_size);
            if (row.val.mean > res.best_val_dice) {
                res.best_val_dice = row.val.mean;
                res.best_epoch = epoch;
                best = Snapshot::of(model);
                if (!cfg.out_dir.empty() && cfg.write_checkpoints) nn::save_model(cfg.out_dir / "best.mmdl", model);
            }
        }
        res.rows.push_back(row);
        if (!cfg.out_dir.empty()) write_metrics_csv(cfg.out_dir / "metrics.csv", cfg, res.rows, k);
    }

    if (!cfg.out_dir.empty() && cfg.write_checkpoints) {
        nn::save_model(cfg.out_dir / "final.mmdl", model);
        nn::save_optimizer(cfg.out_dir / "final.mopt", opt);
    }
    if (!data.test.empty()) {
        best.restore(model);
        res.test = evaluate(model, data.test, cfg.batch_size);
    }
    return res;
}

TrainResult train(const TrainConfig& cfg) {
    if (cfg.data_dir.empty()) throw ConfigError("data_dir is not set");
    return train(cfg, load_dataset(cfg.data_dir));
}

std::vector<TermSet> default_ablation_subsets() {
    return {
        TermSet::only({Term::pce}),
        TermSet::only({Term::pce, Term::cc}),
        TermSet::only({Term::pce, Term::cc, Term::mpce}),
        TermSet::only({Term::pce, Term::cc, Term::mpce, Term::en}),
        TermSet::only({Term::pce, Term::con}),
        TermSet::all(),
    };
}

namespace {

std::string fmt_label(const char* prefix, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%g", prefix, v);
    return buf;
}

ExperimentRow run_variant(const TrainConfig& base, const Dataset& data, std::string label, TrainConfig cfg) {
    if (!base.out_dir.empty()) cfg.out_dir = base.out_dir / label;
    ExperimentRow row;
    row.label = std::move(label);
    row.result = train(cfg, data);
    row.config = cfg;
    return row;
}

}  // namespace

void write_experiment_csv(const std::filesystem::path& path, const TrainConfig& base, const std::vector<ExperimentRow>& rows,
                          int foreground_classes) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << provenance_line(base) << '\n';
    out << "label,losses,shrink_ratio,train_fraction,decay,support_area,config_hash,best_epoch,best_val_dice";
    for (int c = 1; c <= foreground_classes; ++c) out << ",test_dice_" << c;
    out << ",test_mean_dice\n";
    for (const auto& r : rows) {
        char buf[512];
        std::snprintf(buf, sizeof buf, "%s,%s,%g,%g,%g,%.9g,%016llx,%d,%.9g", r.label.c_str(),
                      r.config.enabled.to_string().c_str(), r.config.shrink_ratio, r.config.train_fraction, r.config.decay,
                      r.support_area, static_cast<unsigned long long>(r.result.config_hash), r.result.best_epoch,
                      r.result.best_val_dice);
        out << buf;
        for (int c = 0; c < foreground_classes; ++c) {
            const auto& pc = r.result.test.per_class;
            std::snprintf(buf, sizeof buf, ",%.9g", pc.empty() ? 0.0 : pc[static_cast<std::size_t>(c)]);
            out << buf;
        }
        std::snprintf(buf, sizeof buf, ",%.9g\n", r.result.test.mean);
        out << buf;
    }
}

std::vector<ExperimentRow> ablate(const TrainConfig& cfg, const Dataset& data, const std::vector<TermSet>& subsets) {
    std::vector<ExperimentRow> rows;
    for (const TermSet& s : subsets) {
        if (!s.has(Term::pce)) throw ConfigError("every ablation subset must contain pCE");
        TrainConfig c = cfg;
        c.enabled = s;
        rows.push_back(run_variant(cfg, data, s.to_string(), c));
    }
    if (!cfg.out_dir.empty()) write_experiment_csv(cfg.out_dir / "ablation.csv", cfg, rows, data.foreground_classes);
    return rows;
}

std::vector<ExperimentRow> sensitivity(const TrainConfig& cfg, const Dataset& data, const std::vector<double>& ratios,
                                       const std::vector<double>& fractions) {
    for (double r : ratios)
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("shrink ratios must lie in [0, 1]");
    std::vector<ExperimentRow> rows;
    std::optional<ExperimentRow> base_run;
    auto base = [&]() -> const ExperimentRow& {
        if (!base_run) {
            TrainConfig c = cfg;
            c.shrink_ratio = 0.0;
            c.train_fraction = 1.0;
            base_run = run_variant(cfg, data, "base", c);
        }
        return *base_run;
    };
    for (double r : ratios) {
        if (r == 0.0) {
            ExperimentRow row = base();
            row.label = fmt_label("ratio", r);
            rows.push_back(row);
            continue;
        }
        TrainConfig c = cfg;
        c.shrink_ratio = r;
        c.train_fraction = 1.0;
        rows.push_back(run_variant(cfg, data, fmt_label("ratio", r), c));
    }
    for (double f : fractions) {
        if (f == 1.0) {
            ExperimentRow row = base();
            row.label = fmt_label("fraction", f);
            rows.push_back(row);
            continue;
        }
        TrainConfig c = cfg;
        c.shrink_ratio = 0.0;
        c.train_fraction = f;
        rows.push_back(run_variant(cfg, data, fmt_label("fraction", f), c));
    }
    if (!cfg.out_dir.empty()) write_experiment_csv(cfg.out_dir / "sensitivity.csv", cfg, rows, data.foreground_classes);
    return rows;
}

std::vector<double> support_areas(const Dataset& data, const std::vector<double>& decays, double floor) {
    std::vector<double> out;
    for (double k : decays) {
        if (!(k > 0.0)) throw ConfigError("decay factors must be > 0");
        double total = 0.0;
        for (const auto& s : data.train)
            for (const auto& m : build_cpl(s.scribble, data.foreground_classes, k, floor).foreground)
                total += static_cast<double>(m.support_area());
        out.push_back(data.train.empty() ? 0.0 : total / static_cast<double>(data.train.size()));
    }
    return out;
}

std::vector<ExperimentRow> decay_study(const TrainConfig& cfg, const Dataset& data, const std::vector<double>& decays) {
    const auto areas = support_areas(data, decays, cfg.floor);
    std::vector<ExperimentRow> rows;
    for (std::size_t i = 0; i < decays.size(); ++i) {
        TrainConfig c = cfg;
        c.decay = decays[i];
        rows.push_back(run_variant(cfg, data, fmt_label("decay", decays[i]), c));
        rows.back().support_area = areas[i];
    }
    if (!cfg.out_dir.empty()) write_experiment_csv(cfg.out_dir / "decay.csv", cfg, rows, data.foreground_classes);
    return rows;
}

}  // namespace scribseg
