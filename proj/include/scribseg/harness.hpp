#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "scribseg/cpl.hpp"
#include "scribseg/losses.hpp"
#include "scribseg/mcm.hpp"
#include "scribseg/nn.hpp"
#include "scribseg/synth.hpp"

namespace scribseg {

inline constexpr const char* kVersion = "0.1.0";

/// Where the enhancement mask comes from.
enum class GcMaskSource {
    annotation,     // GC pseudo label >= 0.5
    prediction_fg,  // 1 - y_0 >= 0.5 of the current prediction
};

/// Training configuration. Every JSON key is optional; defaults are listed in
/// README.md. The output layer width is taken from the dataset.
struct TrainConfig {
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;
    int epochs = 200;
    int batch_size = 4;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;
    MCMConfig mcm;
    LossWeights weights;
    double decay = 0.1;
    double floor = 0.05;
    nn::UNetConfig unet;
    int eval_interval = 1;  // epochs between validation passes
    TermSet enabled;
    bool pce_include_background = false;
    ConOptions con;
    GcMaskSource gc_mask_source = GcMaskSource::annotation;
    GcRegion gc_region = GcRegion::stroke;
    EnhanceMode enhance_mode = EnhanceMode::multiply;
    bool fixed_masks = false;     // draw one mask per sample up front
    double shrink_ratio = 0.0;    // applied to training scribbles
    double train_fraction = 1.0;  // leading fraction of the train split
    bool write_checkpoints = true;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys and bad values throw ConfigError.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::filesystem::path& path);

/// FNV-1a over the canonical JSON of every training-relevant key (paths excluded).
std::uint64_t config_hash(const TrainConfig& cfg);
std::string provenance_line(const TrainConfig& cfg);

struct Dataset {
    int foreground_classes = 3;
    std::vector<Sample> train, val, test;
};

Dataset load_dataset(const std::filesystem::path& dir);

/// Per-image Dice on argmax predictions, averaged per foreground class.
struct DiceTable {
    std::vector<double> per_class;  // index 0 is class 1
    double mean = 0.0;
};

DiceTable dice_table(const std::vector<DenseMask>& predictions, const std::vector<DenseMask>& truth, int foreground_classes);
std::vector<DenseMask> predict(nn::UNet& model, const std::vector<Sample>& samples, int batch_size = 4);
/// Throws DataError for an empty sample list.
DiceTable evaluate(nn::UNet& model, const std::vector<Sample>& samples, int batch_size = 4);

struct MetricsRow {
    int epoch = 0;
    LossReport loss;  // means over the epoch's steps
    bool evaluated = false;
    DiceTable val;
};

struct TrainResult {
    std::vector<MetricsRow> rows;
    int best_epoch = 0;
    double best_val_dice = -1.0;
    DiceTable test;  // best checkpoint on the test split
    std::uint64_t config_hash = 0;
};

/// Runs the full objective with per-step mask resampling and Adam. Writes
/// metrics.csv, config.json, best.mmdl, final.mmdl and final.mopt to
/// out_dir (checkpoints only when enabled). Throws NumericalError naming the
/// epoch, step and loss term on a non-finite loss.
TrainResult train(const TrainConfig& cfg, const Dataset& data);
TrainResult train(const TrainConfig& cfg);

void write_metrics_csv(const std::filesystem::path& path, const TrainConfig& cfg, const std::vector<MetricsRow>& rows,
                       int foreground_classes);

struct ExperimentRow {
    std::string label;
    TrainConfig config;
    TrainResult result;
    double support_area = 0.0;  // decay study: mean foreground CPL support per training sample
};

/// The six loss subsets in table order: pCE; +cc; +cc+mpCE; +cc+mpCE+en; pCE+con; all.
std::vector<TermSet> default_ablation_subsets();

/// One run per subset under out_dir/<label>; writes out_dir/ablation.csv.
std::vector<ExperimentRow> ablate(const TrainConfig& cfg, const Dataset& data,
                                  const std::vector<TermSet>& subsets = default_ablation_subsets());

/// Shrink-ratio rows at the full train split, then sample-count rows at ratio
/// 0 (fractions of the train split). The shared (0, 1.0) setting is trained
/// once. Writes out_dir/sensitivity.csv.
std::vector<ExperimentRow> sensitivity(const TrainConfig& cfg, const Dataset& data, const std::vector<double>& ratios,
                                       const std::vector<double>& fractions);

/// Mean foreground CPL support area of the training scribbles at each decay.
std::vector<double> support_areas(const Dataset& data, const std::vector<double>& decays, double floor);

/// One run per decay; writes out_dir/decay.csv with support areas.
std::vector<ExperimentRow> decay_study(const TrainConfig& cfg, const Dataset& data, const std::vector<double>& decays);

void write_experiment_csv(const std::filesystem::path& path, const TrainConfig& base, const std::vector<ExperimentRow>& rows,
                          int foreground_classes);

}  // namespace scribseg
