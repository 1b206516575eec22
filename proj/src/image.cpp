#include "tinv/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include "tinv/bytes.hpp"

namespace tinv {

LatentTensor image_to_latent(const Image& image) {
  return LatentTensor(image.shape(), (image.data().array() / 127.5f - 1.0f).matrix());
}

Image latent_to_image(const LatentTensor& latent) {
  return Image(latent.shape(), ((latent.data().array() + 1.0f) * 127.5f).matrix());
}

Image resize_bilinear(const Image& image, Index height, Index width) {
  if (height < 1 || width < 1) throw std::invalid_argument("resize_bilinear: empty target");
  const Index H = image.height(), W = image.width();
  Image out(Shape{image.channels(), height, width});
  const double sy = static_cast<double>(H) / height, sx = static_cast<double>(W) / width;
  for (Index y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(H - 1));
    const Index y0 = static_cast<Index>(std::floor(fy));
    const Index y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - y0;
    for (Index x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(W - 1));
      const Index x0 = static_cast<Index>(std::floor(fx));
      const Index x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - x0;
      for (Index c = 0; c < image.channels(); ++c) {
        const double top = (1 - wx) * image(c, y0, x0) + wx * image(c, y0, x1);
        const double bottom = (1 - wx) * image(c, y1, x0) + wx * image(c, y1, x1);
        out(c, y, x) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

Image resize_area(const Image& image, Index height, Index width) {
  const Index H = image.height(), W = image.width();
  Image out(Shape{image.channels(), height, width});
  const double sy = static_cast<double>(H) / height, sx = static_cast<double>(W) / width;
  for (Index y = 0; y < height; ++y) {
    const double y_lo = y * sy, y_hi = (y + 1) * sy;
    for (Index x = 0; x < width; ++x) {
      const double x_lo = x * sx, x_hi = (x + 1) * sx;
      for (Index c = 0; c < image.channels(); ++c) {
        double acc = 0.0, area = 0.0;
        for (Index iy = static_cast<Index>(y_lo); iy < std::min<Index>(H, std::ceil(y_hi)); ++iy) {
          const double cy = std::min<double>(iy + 1, y_hi) - std::max<double>(iy, y_lo);
          for (Index ix = static_cast<Index>(x_lo); ix < std::min<Index>(W, std::ceil(x_hi)); ++ix) {
            const double cx = std::min<double>(ix + 1, x_hi) - std::max<double>(ix, x_lo);
            acc += cy * cx * image(c, iy, ix);
            area += cy * cx;
          }
        }
        out(c, y, x) = static_cast<float>(acc / area);
      }
    }
  }
  return out;
}

Image quantize(const Image& image) {
  return Image(image.shape(),
               image.data().unaryExpr([](float v) { return std::clamp(std::round(v), 0.0f, 255.0f); }));
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  const Index C = image.channels();
  if (C != 1 && C != 3) throw std::invalid_argument("write_png: need 1 or 3 channels");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png write failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()),
               static_cast<png_uint_32>(image.height()), 8,
               C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed time-free header so identical images give identical files.
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(image.width() * C));
  for (Index y = 0; y < image.height(); ++y) {
    for (Index x = 0; x < image.width(); ++x)
      for (Index c = 0; c < C; ++c)
        row[x * C + c] = static_cast<png_byte>(std::clamp(std::round(image(c, y, x)), 0.0f, 255.0f));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png read failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const Index W = png_get_image_width(png, info), H = png_get_image_height(png, info);
  const Index C = png_get_channels(png, info);
  if (C != 1 && C != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unsupported png channel count in " + path.string());
  }
  Image out(Shape{C, H, W});
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  for (Index y = 0; y < H; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < C; ++c) out(c, y, x) = row[x * C + c];
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_raw(const std::filesystem::path& path, const Tensor<float>& t) {
  bytes::Writer w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.channels()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.height()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.width()));
  w.put_raw(t.data().data(), sizeof(float) * static_cast<std::size_t>(t.size()));
  bytes::write_file(path, w.buffer());
}

Tensor<float> read_raw(const std::filesystem::path& path) {
  const auto data = bytes::read_file(path);
  bytes::Reader r(data.data(), data.size());
  Shape s;
  s.channels = r.get<std::uint32_t>();
  s.height = r.get<std::uint32_t>();
  s.width = r.get<std::uint32_t>();
  Tensor<float> t(s);
  r.get_raw(t.data().data(), sizeof(float) * static_cast<std::size_t>(t.size()));
  return t;
}

Image make_grid(const std::vector<Image>& images, Index columns) {
  if (images.empty()) throw std::invalid_argument("make_grid: no images");
  const Shape s = images.front().shape();
  const Index gutter = 2;
  const Index rows = (static_cast<Index>(images.size()) + columns - 1) / columns;
  Image grid = Image::constant(
      Shape{s.channels, rows * (s.height + gutter) + gutter, columns * (s.width + gutter) + gutter}, 0.0f);
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_shape(images[i].shape(), s, "make_grid");
    const Index oy = gutter + static_cast<Index>(i) / columns * (s.height + gutter);
    const Index ox = gutter + static_cast<Index>(i) % columns * (s.width + gutter);
    for (Index c = 0; c < s.channels; ++c)
      for (Index y = 0; y < s.height; ++y)
        for (Index x = 0; x < s.width; ++x) grid(c, oy + y, ox + x) = images[i](c, y, x);
  }
  return grid;
}

}  // namespace tinv
