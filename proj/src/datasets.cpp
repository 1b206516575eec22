#include "tinv/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "tinv/bytes.hpp"

namespace tinv {

namespace {

Index scaled_extent(Index n, double spacing, double target) {
  return std::max<Index>(1, std::lround(static_cast<double>(n) * spacing / target));
}

double source_coord(Index out, double spacing, double target) {
  return (static_cast<double>(out) + 0.5) * target / spacing - 0.5;
}

Index crop_start(Index size, Index target) {
  const Index r = size - target;
  return r >= 0 ? r / 2 : -((-r) / 2);
}

}  // namespace

Volume resample(const Volume& v, const Spacing& spacing, const Spacing& target, Interpolation interp) {
  for (int a = 0; a < 3; ++a) {
    if (!(spacing[a] > 0.0) || !(target[a] > 0.0)) throw PreprocessError("spacing must be positive");
  }
  Volume out(scaled_extent(v.depth, spacing[0], target[0]), scaled_extent(v.height, spacing[1], target[1]),
             scaled_extent(v.width, spacing[2], target[2]));
  const auto clampd = [](double c, Index n) { return std::clamp(c, 0.0, static_cast<double>(n - 1)); };

  for (Index z = 0; z < out.depth; ++z) {
    const double fz = clampd(source_coord(z, spacing[0], target[0]), v.depth);
    for (Index y = 0; y < out.height; ++y) {
      const double fy = clampd(source_coord(y, spacing[1], target[1]), v.height);
      for (Index x = 0; x < out.width; ++x) {
        const double fx = clampd(source_coord(x, spacing[2], target[2]), v.width);
        if (interp == Interpolation::Nearest) {
          out.at(z, y, x) = v.at(std::lround(fz), std::lround(fy), std::lround(fx));
          continue;
        }
        const Index z0 = static_cast<Index>(fz), y0 = static_cast<Index>(fy), x0 = static_cast<Index>(fx);
        const Index z1 = std::min(z0 + 1, v.depth - 1), y1 = std::min(y0 + 1, v.height - 1),
                    x1 = std::min(x0 + 1, v.width - 1);
        const double wz = fz - z0, wy = fy - y0, wx = fx - x0;
        const auto lerp_x = [&](Index zz, Index yy) {
          return (1 - wx) * v.at(zz, yy, x0) + wx * v.at(zz, yy, x1);
        };
        const double c0 = (1 - wy) * lerp_x(z0, y0) + wy * lerp_x(z0, y1);
        const double c1 = (1 - wy) * lerp_x(z1, y0) + wy * lerp_x(z1, y1);
        out.at(z, y, x) = static_cast<float>((1 - wz) * c0 + wz * c1);
      }
    }
  }
  return out;
}

Volume center_crop(const Volume& v, Index depth, Index height, Index width) {
  Volume out(depth, height, width);
  const Index sz = crop_start(v.depth, depth), sy = crop_start(v.height, height),
              sx = crop_start(v.width, width);
  for (Index z = 0; z < depth; ++z) {
    const Index iz = z + sz;
    if (iz < 0 || iz >= v.depth) continue;
    for (Index y = 0; y < height; ++y) {
      const Index iy = y + sy;
      if (iy < 0 || iy >= v.height) continue;
      for (Index x = 0; x < width; ++x) {
        const Index ix = x + sx;
        if (ix >= 0 && ix < v.width) out.at(z, y, x) = v.at(iz, iy, ix);
      }
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> slice_areas(const Volume& mask) {
  std::vector<std::size_t> areas(static_cast<std::size_t>(mask.depth), 0);
  for (Index z = 0; z < mask.depth; ++z)
    for (Index y = 0; y < mask.height; ++y)
      for (Index x = 0; x < mask.width; ++x)
        if (mask.at(z, y, x) > 0.5f) ++areas[static_cast<std::size_t>(z)];
  return areas;
}

}  // namespace

Index median_mask_slice(const Volume& mask) {
  const auto areas = slice_areas(mask);
  std::vector<Index> nonempty;
  for (std::size_t z = 0; z < areas.size(); ++z)
    if (areas[z] > 0) nonempty.push_back(static_cast<Index>(z));
  if (nonempty.empty()) throw PreprocessError("segmentation is empty");
  return nonempty[(nonempty.size() - 1) / 2];
}

Index max_area_slice(const Volume& mask) {
  const auto areas = slice_areas(mask);
  const auto it = std::max_element(areas.begin(), areas.end());
  if (it == areas.end() || *it == 0) throw PreprocessError("segmentation is empty");
  return static_cast<Index>(it - areas.begin());
}

namespace {

constexpr const char* kModalityFiles[3] = {"t2w.raw", "adc.raw", "dwi.raw"};

Volume volume_from_tensor(const Tensor<float>& t) {
  Volume v(t.channels(), t.height(), t.width());
  std::copy(t.data().data(), t.data().data() + t.size(), v.voxels.begin());
  return v;
}

Tensor<float> volume_to_tensor(const Volume& v) {
  Tensor<float> t(Shape{v.depth, v.height, v.width});
  std::copy(v.voxels.begin(), v.voxels.end(), t.data().data());
  return t;
}

std::optional<Volume> read_optional_volume(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) return std::nullopt;
  return volume_from_tensor(read_raw(p));
}

}  // namespace

VolumeCase read_volume_case(const std::filesystem::path& dir) {
  std::ifstream in(dir / "case.json");
  if (!in) throw PreprocessError("missing case.json in " + dir.string());
  VolumeCase c;
  try {
    const auto j = nlohmann::json::parse(in);
    c.id = j.at("id").get<std::string>();
    c.label = parse_label(j.at("label").get<std::string>());
    const auto sp = j.at("spacing").get<std::vector<double>>();
    if (sp.size() != 3) throw PreprocessError("spacing must have three entries");
    c.spacing = {sp[0], sp[1], sp[2]};
  } catch (const nlohmann::json::exception& e) {
    throw PreprocessError("bad case.json in " + dir.string() + ": " + e.what());
  }
  for (int m = 0; m < 3; ++m) c.modalities[static_cast<std::size_t>(m)] = read_optional_volume(dir / kModalityFiles[m]);
  c.prostate_mask = read_optional_volume(dir / "prostate.raw");
  c.tumor_mask = read_optional_volume(dir / "tumor.raw");
  return c;
}

void write_volume_case(const std::filesystem::path& dir, const VolumeCase& c) {
  std::filesystem::create_directories(dir);
  const nlohmann::json j{{"id", c.id}, {"label", to_string(c.label)},
                         {"spacing", {c.spacing[0], c.spacing[1], c.spacing[2]}}};
  std::ofstream(dir / "case.json") << j.dump(2) << "\n";
  for (int m = 0; m < 3; ++m) {
    if (c.modalities[static_cast<std::size_t>(m)]) {
      write_raw(dir / kModalityFiles[m], volume_to_tensor(*c.modalities[static_cast<std::size_t>(m)]));
    }
  }
  if (c.prostate_mask) write_raw(dir / "prostate.raw", volume_to_tensor(*c.prostate_mask));
  if (c.tumor_mask) write_raw(dir / "tumor.raw", volume_to_tensor(*c.tumor_mask));
}

Image normalize_channels(const Image& image, double low_percentile, double high_percentile) {
  Image out(image.shape());
  const auto percentile = [](std::vector<float>& v, double p) {
    // Linear interpolation between order statistics.
    const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    const double a = v[lo];
    const double b = hi == lo ? a : *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return a + (pos - static_cast<double>(lo)) * (b - a);
  };
  for (Index c = 0; c < image.channels(); ++c) {
    std::vector<float> values(image.channel(c).data(), image.channel(c).data() + image.shape().pixels());
    const double lo = percentile(values, low_percentile);
    const double hi = percentile(values, high_percentile);
    const double span = hi - lo;
    for (Index i = 0; i < image.shape().pixels(); ++i) {
      const double v = std::clamp(static_cast<double>(image.data()(c, i)), lo, hi);
      out.data()(c, i) = span > 0 ? static_cast<float>(255.0 * (v - lo) / span) : 0.0f;
    }
  }
  return out;
}

PicaiResult picai_extract(const VolumeCase& c, const PicaiConfig& config) {
  static constexpr const char* kNames[3] = {"T2W", "ADC", "DWI"};
  for (int m = 0; m < 3; ++m) {
    if (!c.modalities[m]) throw PreprocessError("case " + c.id + " is missing modality " + kNames[m]);
  }
  const Volume& reference = *c.modalities[0];
  for (int m = 1; m < 3; ++m) {
    if (!c.modalities[m]->same_shape(reference)) {
      throw PreprocessError("case " + c.id + ": modalities are not co-registered");
    }
  }
  const Volume* mask = nullptr;
  if (c.label == Label::Negative) {
    if (!c.prostate_mask) throw PreprocessError("negative case " + c.id + " needs a prostate segmentation");
    mask = &*c.prostate_mask;
  } else {
    if (!c.tumor_mask) throw PreprocessError("positive case " + c.id + " needs a tumour segmentation");
    mask = &*c.tumor_mask;
  }
  if (!mask->same_shape(reference)) throw PreprocessError("case " + c.id + ": mask shape mismatch");

  const Index cd = std::lround(config.crop_mm[0] / config.target_spacing[0]);
  const Index ch = std::lround(config.crop_mm[1] / config.target_spacing[1]);
  const Index cw = std::lround(config.crop_mm[2] / config.target_spacing[2]);

  const Volume seg = center_crop(resample(*mask, c.spacing, config.target_spacing, Interpolation::Nearest),
                                 cd, ch, cw);
  const Index slice = c.label == Label::Negative ? median_mask_slice(seg) : max_area_slice(seg);

  Image packed(Shape{3, ch, cw});
  for (int m = 0; m < 3; ++m) {
    const Volume v = center_crop(
        resample(*c.modalities[m], c.spacing, config.target_spacing, Interpolation::Linear), cd, ch, cw);
    for (Index y = 0; y < ch; ++y)
      for (Index x = 0; x < cw; ++x) packed(m, y, x) = v.at(slice, y, x);
  }
  const Image normalized = normalize_channels(packed, config.low_percentile, config.high_percentile);
  return {resize_bilinear(normalized, config.output_size, config.output_size), slice};
}

Image chexpert_preprocess(const Image& radiograph, Index size) {
  if (radiograph.channels() != 1) throw PreprocessError("chexpert_preprocess expects a single channel");
  Index top = radiograph.height(), bottom = -1, left = radiograph.width(), right = -1;
  for (Index y = 0; y < radiograph.height(); ++y)
    for (Index x = 0; x < radiograph.width(); ++x)
      if (radiograph(0, y, x) != 0.0f) {
        top = std::min(top, y);
        bottom = std::max(bottom, y);
        left = std::min(left, x);
        right = std::max(right, x);
      }
  if (bottom < 0) throw PreprocessError("radiograph is blank");

  const Index h = bottom - top + 1, w = right - left + 1;
  Image cropped(Shape{1, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) cropped(0, y, x) = radiograph(0, top + y, left + x);

  const double scale = static_cast<double>(size) / static_cast<double>(std::max(h, w));
  const Index nh = std::max<Index>(1, std::lround(h * scale)), nw = std::max<Index>(1, std::lround(w * scale));
  const Image resized = resize_bilinear(cropped, nh, nw);

  Image out(Shape{1, size, size});
  const Index oy = (size - nh) / 2, ox = (size - nw) / 2;
  for (Index y = 0; y < nh; ++y)
    for (Index x = 0; x < nw; ++x) out(0, oy + y, ox + x) = resized(0, y, x);
  return out;
}

Image pcam_preprocess(const Image& patch, Index size) {
  if (patch.height() != 96 || patch.width() != 96) {
    throw PreprocessError("pcam_preprocess expects a 96x96 patch, got " + std::to_string(patch.height()) +
                          "x" + std::to_string(patch.width()));
  }
  return resize_bilinear(patch, size, size);
}

// ---------------------------------------------------------------------------

void add_ellipse(Image& image, double cx, double cy, double rx, double ry, double angle,
                 double amplitude, double softness) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double edge = std::min(rx, ry) / softness;
  const Index pad = static_cast<Index>(std::ceil(std::max(rx, ry) + 4 * softness));
  const Index y_lo = std::max<Index>(0, static_cast<Index>(cy) - pad);
  const Index y_hi = std::min<Index>(image.height(), static_cast<Index>(cy) + pad + 1);
  const Index x_lo = std::max<Index>(0, static_cast<Index>(cx) - pad);
  const Index x_hi = std::min<Index>(image.width(), static_cast<Index>(cx) + pad + 1);
  for (Index y = y_lo; y < y_hi; ++y)
    for (Index x = x_lo; x < x_hi; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = (ca * dx + sa * dy) / rx, v = (-sa * dx + ca * dy) / ry;
      const double r = std::sqrt(u * u + v * v);
      image(0, y, x) += static_cast<float>(amplitude / (1.0 + std::exp(-(1.0 - r) * edge)));
    }
}

Tensor<float> smooth_noise(Rng& rng, Index height, Index width, int blur_passes) {
  Tensor<float> field = rng.normal_field<float>(Shape{1, height, width});
  for (int pass = 0; pass < blur_passes; ++pass) {
    Tensor<float> next(field.shape());
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) {
        float acc = 0.0f;
        int n = 0;
        for (Index dy = -1; dy <= 1; ++dy)
          for (Index dx = -1; dx <= 1; ++dx) {
            const Index yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
            acc += field(0, yy, xx);
            ++n;
          }
        next(0, y, x) = acc / static_cast<float>(n);
      }
    field = std::move(next);
  }
  const float mean = field.data().mean();
  field.data().array() -= mean;
  const float std = std::sqrt(field.data().squaredNorm() / static_cast<float>(field.size()));
  if (std > 0) field.data() /= std;
  return field;
}

ToyCase render_toy_case(Label label, const ToyStyle& style, Rng& rng) {
  const Index n = style.size;
  const double half = static_cast<double>(n) / 2.0;
  const double scale = static_cast<double>(n) / 64.0;
  ToyCase out{Image::constant(Shape{1, n, n}, static_cast<float>(style.background)), label, {}};

  const double cx = half + rng.uniform(-style.organ_jitter, style.organ_jitter) * scale;
  const double cy = half + rng.uniform(-style.organ_jitter, style.organ_jitter) * scale;
  const double rx = style.organ_axis_x.draw(rng) * scale;
  const double ry = style.organ_axis_y.draw(rng) * scale;
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double intensity = style.organ_intensity.draw(rng);

  Image organ = Image::zeros(out.image.shape());
  add_ellipse(organ, cx, cy, rx, ry, angle, 1.0, 1.5);
  const Tensor<float> texture = smooth_noise(rng, n, n);
  out.image.data().array() += organ.data().array() *
                              (static_cast<float>(intensity - style.background) +
                               static_cast<float>(style.texture_amplitude) * texture.data().array());

  if (label == Label::Positive) {
    const auto count = rng.uniform_int(static_cast<std::int64_t>(style.lesion_count.lo),
                                       static_cast<std::int64_t>(style.lesion_count.hi));
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::int64_t i = 0; i < count; ++i) {
      const double r = 0.55 * std::sqrt(rng.uniform());
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double u = r * std::cos(theta) * rx, v = r * std::sin(theta) * ry;
      Lesion lesion;
      lesion.cx = cx + ca * u - sa * v;
      lesion.cy = cy + sa * u + ca * v;
      lesion.rx = style.lesion_radius.draw(rng) * scale;
      lesion.ry = style.lesion_radius.draw(rng) * scale;
      lesion.contrast = style.lesion_contrast.draw(rng);
      add_ellipse(out.image, lesion.cx, lesion.cy, lesion.rx, lesion.ry, rng.uniform(0.0, std::numbers::pi),
                  lesion.contrast, 1.0);
      out.lesions.push_back(lesion);
    }
  }
  const Tensor<float> noise = rng.normal_field<float>(out.image.shape());
  out.image.data() += static_cast<float>(style.pixel_noise) * noise.data();
  out.image = quantize(out.image);
  return out;
}

std::string toy_style_hash(const ToyStyle& s) {
  std::ostringstream os;
  os.precision(17);
  os << "toy-style-v1 size=" << s.size << " bg=" << s.background << " organ=" << s.organ_intensity.lo << ","
     << s.organ_intensity.hi << " ax=" << s.organ_axis_x.lo << "," << s.organ_axis_x.hi << " ay="
     << s.organ_axis_y.lo << "," << s.organ_axis_y.hi << " jitter=" << s.organ_jitter
     << " texture=" << s.texture_amplitude << " noise=" << s.pixel_noise << " count=" << s.lesion_count.lo
     << "," << s.lesion_count.hi << " radius=" << s.lesion_radius.lo << "," << s.lesion_radius.hi
     << " contrast=" << s.lesion_contrast.lo << "," << s.lesion_contrast.hi;
  return bytes::sha256_hex(os.str()).substr(0, 16);
}

ToyDataset toy_generate(std::size_t n_per_class, std::uint64_t seed, const ToyStyle& style,
                        const std::optional<std::filesystem::path>& out_dir, const std::string& name) {
  if (n_per_class < 1) throw std::invalid_argument("toy_generate: n_per_class must be >= 1");
  ToyDataset ds;
  ds.manifest.name = name;
  ds.manifest.config_hash = toy_style_hash(style) + "-s" + std::to_string(seed);

  for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
    const Label label = i < n_per_class ? Label::Negative : Label::Positive;
    const std::size_t k = i < n_per_class ? i : i - n_per_class;
    Rng rng(derive_seed(seed, i));
    ToyCase tc = render_toy_case(label, style, rng);

    char id[64];
    std::snprintf(id, sizeof id, "%s-%s-%05zu", name.c_str(), label == Label::Positive ? "pos" : "neg", k);
    SliceRecord rec;
    rec.id = id;
    rec.path = std::filesystem::path("images") / (std::string(id) + ".png");
    rec.label = label;
    rec.dataset = name;
    rec.config_hash = ds.manifest.config_hash;
    if (out_dir) write_png(*out_dir / rec.path, tc.image);
    ds.manifest.records.push_back(rec);
    ds.images.push_back(std::move(tc.image));
    ds.lesions.push_back(std::move(tc.lesions));
  }

  if (out_dir) {
    write_manifest(ds.manifest, *out_dir / "manifest.jsonl");
    std::ofstream les(*out_dir / "lesions.jsonl", std::ios::trunc);
    for (std::size_t i = 0; i < ds.lesions.size(); ++i) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& l : ds.lesions[i])
        arr.push_back({{"cx", l.cx}, {"cy", l.cy}, {"rx", l.rx}, {"ry", l.ry}, {"contrast", l.contrast}});
      les << nlohmann::json{{"id", ds.manifest.records[i].id}, {"lesions", arr}}.dump() << '\n';
    }
  }
  return ds;
}

}  // namespace tinv
