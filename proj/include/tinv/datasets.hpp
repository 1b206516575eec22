#ifndef TINV_DATASETS_HPP
#define TINV_DATASETS_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinv/image.hpp"
#include "tinv/manifest.hpp"
#include "tinv/rng.hpp"

namespace tinv {

class PreprocessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Volumes

/// Spacing in mm, axis order (z, y, x).
using Spacing = std::array<double, 3>;

struct Volume {
  Index depth = 0, height = 0, width = 0;
  std::vector<float> voxels;  // z-major, then y, then x

  Volume() = default;
  Volume(Index d, Index h, Index w, float fill = 0.0f)
      : depth(d), height(h), width(w), voxels(static_cast<std::size_t>(d * h * w), fill) {}

  float& at(Index z, Index y, Index x) { return voxels[static_cast<std::size_t>((z * height + y) * width + x)]; }
  float at(Index z, Index y, Index x) const {
    return voxels[static_cast<std::size_t>((z * height + y) * width + x)];
  }
  bool same_shape(const Volume& o) const {
    return depth == o.depth && height == o.height && width == o.width;
  }
};

enum class Modality { T2W = 0, ADC = 1, DWI = 2 };

struct VolumeCase {
  std::string id;
  std::array<std::optional<Volume>, 3> modalities;  // indexed by Modality
  Spacing spacing{3.0, 0.5, 0.5};
  std::optional<Volume> prostate_mask;
  std::optional<Volume> tumor_mask;
  Label label = Label::Negative;
};

enum class Interpolation { Linear, Nearest };

/// Resamples to `target` spacing; output extent is round(size * spacing / target).
Volume resample(const Volume& v, const Spacing& spacing, const Spacing& target,
                Interpolation interp);

/// Centre crop (or zero pad) to the given voxel extent. Odd remainders put the
/// extra voxel on the high side.
Volume center_crop(const Volume& v, Index depth, Index height, Index width);

/// Lower median of the slice indices whose mask is non-empty.
Index median_mask_slice(const Volume& mask);
/// First slice with the largest mask area.
Index max_area_slice(const Volume& mask);

struct PicaiConfig {
  Spacing target_spacing{3.0, 0.5, 0.5};
  std::array<double, 3> crop_mm{90.0, 150.0, 150.0};
  Index output_size = 512;
  double low_percentile = 0.5;
  double high_percentile = 99.5;
};

struct PicaiResult {
  Image image;  // 3 x 512 x 512, R=T2W G=ADC B=DWI, [0, 255]
  Index slice = 0;
};

/// One packed axial slice per case: resample, centre crop, select slice
/// (median prostate slice for negatives, max tumour area for positives),
/// per-channel percentile normalization, bilinear upsample.
PicaiResult picai_extract(const VolumeCase& c, const PicaiConfig& config = {});

/// Simple on-disk case layout for ingestion: `case.json` with
/// {"id", "label", "spacing": [z, y, x]} next to t2w.raw, adc.raw, dwi.raw
/// and optional prostate.raw / tumor.raw (raw tensor dumps, channels = depth).
VolumeCase read_volume_case(const std::filesystem::path& dir);
void write_volume_case(const std::filesystem::path& dir, const VolumeCase& c);

/// Percentile-clipped min-max rescale of every channel to [0, 255].
Image normalize_channels(const Image& image, double low_percentile, double high_percentile);

/// Crop to the non-zero bounding box, resize the longest edge to `size`
/// keeping the aspect ratio, zero-pad symmetrically to size x size.
Image chexpert_preprocess(const Image& radiograph, Index size = 512);

/// Bilinear upsampling of a 96x96 patch to size x size.
Image pcam_preprocess(const Image& patch, Index size = 512);

// ---------------------------------------------------------------------------
// Synthetic toy modality

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double draw(Rng& rng) const { return rng.uniform(lo, hi); }
};

struct ToyStyle {
  Index size = 64;
  double background = 20.0;
  Range organ_intensity{105.0, 135.0};
  Range organ_axis_x{17.0, 23.0};
  Range organ_axis_y{13.0, 19.0};
  double organ_jitter = 4.0;
  double texture_amplitude = 12.0;
  double pixel_noise = 4.0;
  Range lesion_count{2.0, 3.0};  // inclusive integer range
  Range lesion_radius{3.5, 6.0};
  Range lesion_contrast{75.0, 100.0};
};

struct Lesion {
  double cx = 0.0, cy = 0.0;  // pixel coordinates
  double rx = 0.0, ry = 0.0;
  double contrast = 0.0;
};

struct ToyCase {
  Image image;  // 1 x size x size, [0, 255]
  Label label = Label::Negative;
  std::vector<Lesion> lesions;
};

/// Soft-edged filled ellipse added onto channel 0.
void add_ellipse(Image& image, double cx, double cy, double rx, double ry, double angle,
                 double amplitude, double softness = 1.0);
/// Zero-mean smooth noise field with unit-ish standard deviation.
Tensor<float> smooth_noise(Rng& rng, Index height, Index width, int blur_passes = 2);

/// Healthy: textured soft ellipse. Diseased: the same plus 2-3 bright lesions
/// inside the organ.
ToyCase render_toy_case(Label label, const ToyStyle& style, Rng& rng);

struct ToyDataset {
  DatasetManifest manifest;
  std::vector<Image> images;               // parallel to manifest.records
  std::vector<std::vector<Lesion>> lesions;  // parallel to manifest.records
};

/// n_per_class healthy ("negative") and diseased ("positive") cases,
/// deterministic per seed. When `out_dir` is given, writes images/*.png,
/// lesions.jsonl and manifest.jsonl there.
ToyDataset toy_generate(std::size_t n_per_class, std::uint64_t seed, const ToyStyle& style = {},
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                        const std::string& name = "toy");

std::string toy_style_hash(const ToyStyle& style);

}  // namespace tinv

#endif  // TINV_DATASETS_HPP
