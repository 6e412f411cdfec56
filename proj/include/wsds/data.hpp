#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wsds/rng.hpp"
#include "wsds/tensor.hpp"
#include "wsds/weak_label.hpp"

namespace wsds {

enum class Split { kTrain, kTest };

std::string split_name(Split split);
/// Throws DataError for anything but "train" or "test".
Split parse_split(const std::string& name);

/// One image with optional dense mask (evaluation only) and optional trimap.
/// A train sample with a trimap belongs to X_l, without one to X_u.
struct Sample {
  std::string id;
  Split split = Split::kTrain;
  Tensor image;                        // [3,H,W] in [0,1]
  std::optional<Tensor> gt;            // [1,H,W] in {0,1}
  std::optional<WeakLabelMap> trimap;

  bool labeled() const { return trimap.has_value(); }
};

struct Dataset {
  std::vector<Sample> samples;

  std::vector<const Sample*> select(Split split) const;
  /// Train samples with trimaps.
  std::vector<const Sample*> labeled() const;
};

struct ManifestEntry {
  std::string id;
  std::string image;
  std::optional<std::string> gt;
  std::optional<std::string> trimap;
  Split split = Split::kTrain;

  bool operator==(const ManifestEntry&) const = default;
};

/// File paths of a dataset; entry paths are relative to `root`.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  bool operator==(const DatasetManifest&) const = default;
};

/// Writes `manifest.json` style JSON. `root` is stored as given.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);
/// Relative roots resolve against the manifest file's directory. Throws
/// IoError if unreadable, FormatError on malformed JSON, DataError on
/// duplicate ids.
DatasetManifest read_manifest(const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// PNG files.

/// 8-bit RGB PNG -> [3,H,W] with values k / 255.
Tensor load_image_png(const std::filesystem::path& path);
/// Values are rounded to the nearest k / 255 after clamping to [0,1].
void save_image_png(const Tensor& image, const std::filesystem::path& path);
/// 8-bit grayscale {0,255} -> [1,H,W] in {0,1}.
Tensor load_mask_png(const std::filesystem::path& path);
void save_mask_png(const Tensor& mask, const std::filesystem::path& path);
/// 8-bit grayscale {0=BACKGROUND, 128=UNKNOWN, 255=FOREGROUND}.
WeakLabelMap load_trimap_png(const std::filesystem::path& path);
void save_trimap_png(const WeakLabelMap& trimap, const std::filesystem::path& path);

/// Loads every entry. With a target size, images are resized bilinearly and
/// masks/trimaps by nearest neighbour.
Dataset load_dataset(const DatasetManifest& manifest,
                     std::optional<std::pair<std::size_t, std::size_t>> size = std::nullopt);
/// Writes images/, gt/, trimaps/ PNGs and manifest.json under `root`.
DatasetManifest save_dataset(const Dataset& dataset, const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Resizing.

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);
Tensor resize_nearest(const Tensor& mask, std::size_t height, std::size_t width);
WeakLabelMap resize_nearest(const WeakLabelMap& labels, std::size_t height, std::size_t width);

// ---------------------------------------------------------------------------
// Synthetic data.

/// Stroke lengths in pixels: the foreground target is drawn uniformly from
/// [foreground_min, foreground_max], the background target is that times
/// background_ratio.
struct ScribbleConfig {
  std::size_t foreground_min = 14;
  std::size_t foreground_max = 30;
  double background_ratio = 2.9;
  /// Probability that a stroke is drawn 2 px wide instead of 1 px.
  double wide_probability = 0.3;
};

/// One random polyline inside the foreground of `gt` ([1,H,W] or [H,W] in
/// {0,1}) and one inside the background; every other pixel is UNKNOWN.
/// Throws DataError if either region is empty.
WeakLabelMap scribble_from_dense(const Tensor& gt, Rng& rng, const ScribbleConfig& cfg = {});

inline constexpr double kDefaultLabeledFraction = 750.0 / 1450.0;

struct SynthConfig {
  std::size_t n_train = 200;
  std::size_t n_test = 50;
  std::size_t height = 64;
  std::size_t width = 64;
  double labeled_fraction = kDefaultLabeledFraction;
  std::uint64_t seed = 1;
  ScribbleConfig scribble;
};

/// Textured noise backgrounds with one or two soft-edged blobs. The first
/// ceil(labeled_fraction * n_train) train samples in a seeded random order
/// receive trimaps; test samples carry dense masks only. Image values are
/// already quantized to 8 bits, so saving and reloading is lossless.
Dataset synthesize_dataset(const SynthConfig& cfg);

// ---------------------------------------------------------------------------
// Labeled-pixel statistics.

struct LabeledPixelStats {
  struct Row {
    std::string id;
    std::size_t labeled_pixels = 0;
    std::size_t total_pixels = 0;
    double percent = 0.0;
  };
  std::vector<Row> images;            // train samples with trimaps
  std::vector<std::size_t> histogram; // 0.5 %-wide bins starting at 0 %
  double mean_percent = 0.0;          // mean over labeled train images
  double split_percent = 0.0;         // labeled pixels / all train pixels

  static constexpr double kBinWidth = 0.5;
};

LabeledPixelStats labeled_pixel_stats(const Dataset& dataset);
/// Per-image rows: id,labeled_pixels,total_pixels,percent.
void write_stats_csv(const LabeledPixelStats& stats, const std::filesystem::path& path);
/// Histogram rows: bin_start,bin_end,images.
void write_histogram_csv(const LabeledPixelStats& stats, const std::filesystem::path& path);
/// Fixed two-decimal rendering of a percentage, e.g. "2.00".
std::string format_percent(double percent);

}  // namespace wsds
