#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "scribseg/grid.hpp"

namespace scribseg {

enum class Layout { cardiac, prostate };

/// Geometry and appearance of the synthetic phantoms.
///
/// Cardiac: disk (LV, code 3) inside an annulus (MYO, code 2) with a crescent
/// (RV, code 1) hugging the annulus on one side. Prostate: disk (CG, code 2)
/// with a crescent (PZ, code 1) on one side. Shapes are mildly elliptical and
/// rotated; radii, centre, aspect and rotation are jittered per sample.
struct PhantomParams {
    Layout layout = Layout::cardiac;
    int image_size = 64;
    double inner_radius = 6.0;     // LV / CG
    double ring_thickness = 6.0;   // MYO; unused for prostate
    double side_radius = 9.0;      // RV / PZ disk
    double side_offset = 2.0;      // side disk centre beyond the outer ring edge
    double radius_jitter = 0.15;   // relative, uniform
    double center_jitter = 3.0;    // pixels, uniform per axis
    double aspect_jitter = 0.1;    // axis scales in [1-a, 1+a]
    double side_angle = 3.14159265358979323846;  // radians; side structure direction
    double rotation_range = 0.5;   // radians, uniform around side_angle
    std::vector<double> intensities = {0.35, 0.8, 0.15, 0.9};  // indexed by class code
    double noise_sigma = 0.12;
    double smoothing_sigma = 0.8;

    static PhantomParams cardiac();
    static PhantomParams prostate();
    int foreground_classes() const { return layout == Layout::cardiac ? 3 : 2; }
    void validate() const;
};

struct Phantom {
    ImageGrid image;
    DenseMask mask;
};

/// Deterministic in (seed, index). Jitter draws that would place a structure
/// closer than 2 pixels to the border are redrawn, up to 100 times.
Phantom generate_phantom(const PhantomParams& params, std::uint64_t seed, std::uint64_t index);

struct ScribbleSynthParams {
    double alpha = 1.0;          // walk length = max(alpha * sqrt(area), 8)
    int erosion_margin = 2;      // pixels
    int gc_margin = 4;           // pixels
    bool include_background = false;
    bool include_gc = true;
    int max_restarts = 50;
    std::uint64_t seed = 0;

    void validate() const;
};

/// One thin self-avoiding walk per foreground class inside the eroded class
/// region, a closed ellipse contour around the dilated foreground (GC), and
/// optionally a walk in the background outside the GC ellipse.
ScribbleAnnotation synthesize_scribbles(const DenseMask& mask, int foreground_classes, const ScribbleSynthParams& params,
                                        std::uint64_t index = 0);

/// Filled ellipse region used for the GC contour of `mask` (1 inside).
BinaryGrid gc_ellipse_region(const DenseMask& mask, int gc_margin);

struct PreprocessResult {
    ImageGrid image;
    bool constant_input = false;
};

/// Centre crop / zero pad to target x target, then zero mean and unit
/// population standard deviation. A constant grid becomes all zeros.
PreprocessResult preprocess(const Grid<float>& img, int target);

struct SplitRatios {
    double train = 70;
    double val = 15;
    double test = 15;
};

struct ManifestEntry {
    std::string image;
    std::string scribble;
    std::string mask;
    bool operator==(const ManifestEntry&) const = default;
};

/// Split name -> entries, paths relative to the dataset directory.
using Manifest = std::map<std::string, std::vector<ManifestEntry>>;

struct DatasetSpec {
    int count = 100;
    std::uint64_t seed = 42;
    SplitRatios split;
    PhantomParams phantom;
    ScribbleSynthParams scribble;
};

/// Writes images/, scribbles/, masks/ MGRD files and manifest.json.
Manifest write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec);
Manifest read_manifest(const std::filesystem::path& dir);
void write_manifest(const std::filesystem::path& dir, const Manifest& manifest, int foreground_classes);
/// Foreground class count recorded in the manifest (3 if absent).
int manifest_foreground_classes(const std::filesystem::path& dir);

struct Sample {
    std::string id;
    ImageGrid image;
    ScribbleAnnotation scribble;
    DenseMask mask;
};

std::vector<Sample> load_split(const std::filesystem::path& dir, const Manifest& manifest, const std::string& split);

}  // namespace scribseg
