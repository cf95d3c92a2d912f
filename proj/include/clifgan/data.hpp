#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clifgan/grid.hpp"
#include "clifgan/rng.hpp"

namespace clifgan::data {

enum class Provenance { real, gan1_synthetic, gan2_synthetic, toy_synthetic };
enum class SplitTag { train, val, test, unsplit };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);
std::string to_string(SplitTag t);
SplitTag split_tag_from_string(const std::string& s);

/// One pre/post pair with its masks. Images are 3-channel, values in [0,1].
struct TileSample {
    std::string id;
    Image pre_image;
    Image post_image;
    DamageMask pre_mask;   // footprints, {0,1}
    DamageMask post_mask;  // damage levels, legend 0..4 / 255
    Provenance provenance = Provenance::real;

    Size2 size() const { return post_mask.size(); }
};

/// Throws Error describing the first violated TileSample invariant.
void validate(const TileSample& s);

/// A manifest entry either embeds its sample or points at PNG files on disk
/// (paths relative to the manifest's base directory), or both.
struct ManifestEntry {
    std::string id;
    Provenance provenance = Provenance::real;
    std::string pre_image_path;
    std::string post_image_path;
    std::string pre_mask_path;
    std::string post_mask_path;
    std::shared_ptr<const TileSample> sample;
};

class DatasetManifest {
public:
    SplitTag split_tag = SplitTag::unsplit;
    std::string source_note;
    std::filesystem::path base_dir;  // resolves relative entry paths

    const std::vector<ManifestEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    /// Appends; throws Error on a duplicate id.
    void add(ManifestEntry entry);
    void add(TileSample sample);
    bool contains(const std::string& id) const { return ids_.count(id) != 0; }

    /// Returns the embedded sample or loads it from disk.
    std::shared_ptr<const TileSample> load(std::size_t i) const;

    /// Loads every entry into memory.
    void materialize();

    void note(const std::string& line);

private:
    std::vector<ManifestEntry> entries_;
    std::map<std::string, std::size_t> ids_;
};

/// Writes every sample as PNGs under `dir` plus `dir/<name>`; returns the
/// manifest path.
std::filesystem::path save_manifest(const DatasetManifest& m, const std::filesystem::path& dir,
                                    const std::string& name = "manifest.json");
/// Writes only the manifest JSON; entries must already have paths relative to
/// `path.parent_path()`.
void write_manifest_json(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Rasterization and ingest

struct Point {
    double x = 0;
    double y = 0;
};

struct LabeledPolygon {
    std::vector<Point> ring;  // closing vertex optional
    std::uint8_t damage_class = label::no_damage;
};

/// Even-odd test of the point against the ring.
bool point_in_ring(const std::vector<Point>& ring, double x, double y);

/// Pixel (y,x) gets a polygon's class iff its center (x+0.5, y+0.5) is inside
/// the ring; later polygons overwrite earlier ones. Rings with fewer than 3
/// distinct vertices are skipped with a warning. `rejected` receives the count.
DamageMask rasterize_polygons(const std::vector<LabeledPolygon>& polygons, Size2 size,
                              int* rejected = nullptr);

/// Parses "POLYGON ((x y, x y, ...))" (outer ring only).
std::vector<Point> parse_wkt_polygon(const std::string& wkt);

/// Maps an xBD damage subtype string onto the mask legend.
std::optional<std::uint8_t> subtype_to_label(const std::string& subtype);

struct IngestConfig {
    std::string features_pointer = "/features/xy";     // JSON pointer to the feature list
    std::string geometry_key = "wkt";
    std::string subtype_pointer = "/properties/subtype";
    std::string pre_suffix = "_pre_disaster";
    std::string post_suffix = "_post_disaster";
    std::string image_extension = ".png";
    std::optional<Size2> target_size;  // resize on ingest (e.g. 512×512)
};

void to_json(nlohmann::json& j, const IngestConfig& c);
void from_json(const nlohmann::json& j, IngestConfig& c);

DatasetManifest ingest_xbd(const std::filesystem::path& labels_dir,
                           const std::filesystem::path& images_dir,
                           const IngestConfig& config = {});

// ---------------------------------------------------------------------------
// Geometry

Image resize_image(const Image& img, Size2 target);
DamageMask resize_mask(const DamageMask& mask, Size2 target);

/// Bilinear images, nearest-neighbor masks.
TileSample resize_tile(const TileSample& sample, Size2 target);

std::pair<DatasetManifest, DatasetManifest> split_train_val(const DatasetManifest& manifest,
                                                           double train_fraction,
                                                           std::uint64_t seed);

DatasetManifest subsample(const DatasetManifest& manifest, double fraction, std::uint64_t seed);

struct AugmentationConfig {
    std::pair<double, double> scale_range{0.8, 2.0};
    int crop_size = 0;  // 0 keeps the source size
    bool flip_horizontal = true;
    bool flip_vertical = true;
    bool rotations = false;
    double max_rotation_degrees = 15.0;
    bool shearing = false;
    double max_shear = 0.15;
    std::uint64_t seed = 0;

    /// All transforms off.
    static AugmentationConfig identity();
    void validate() const;
};

void to_json(nlohmann::json& j, const AugmentationConfig& c);
void from_json(const nlohmann::json& j, AugmentationConfig& c);

/// Applies one random geometric transform to all four planes. Pixels that map
/// outside the source are reflected in images and zero in masks.
TileSample augment(const TileSample& sample, const AugmentationConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic toy-disaster scenes

struct SyntheticSceneSpec {
    int canvas_size = 64;
    std::pair<int, int> building_count_range{3, 6};
    std::pair<int, int> building_size_range{8, 16};
    std::array<double, 4> damage_distribution{0.25, 0.25, 0.25, 0.25};
    std::uint64_t texture_seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSceneSpec& s);
void from_json(const nlohmann::json& j, SyntheticSceneSpec& s);

/// Draws a scene of non-overlapping rectangular buildings. When the requested
/// count cannot be placed the count is reduced and the id gets a
/// "-placed<k>of<n>" suffix.
TileSample generate_synthetic_scene(const SyntheticSceneSpec& spec, Rng& rng,
                                    const std::string& id = "toy");

/// `count` scenes with ids toy_00000.., each from an independent stream.
DatasetManifest generate_synthetic_dataset(const SyntheticSceneSpec& spec, int count,
                                           std::uint64_t seed);

}  // namespace clifgan::data
