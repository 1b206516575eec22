#ifndef TINV_IMAGE_HPP
#define TINV_IMAGE_HPP

#include <filesystem>
#include <vector>

#include "tinv/tensor.hpp"

namespace tinv {

/// Images are float tensors on the 8-bit intensity scale [0, 255].
using Image = Tensor<float>;

/// [0, 255] <-> [-1, 1], the pixel-space "latent" of the toy backend.
LatentTensor image_to_latent(const Image& image);
Image latent_to_image(const LatentTensor& latent);

/// Bilinear resize with half-pixel centres and edge clamping; an identity
/// when the size does not change.
Image resize_bilinear(const Image& image, Index height, Index width);

/// Box-filter (area) downsampling by an integer-free ratio; each output pixel
/// averages the input area it covers.
Image resize_area(const Image& image, Index height, Index width);

/// 8-bit PNG, gray (1 channel) or RGB (3 channels). Values are rounded and
/// clamped to [0, 255].
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Raw float32 dump: u32 channels, u32 height, u32 width, then data.
void write_raw(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_raw(const std::filesystem::path& path);

/// Tiles images (all the same shape) into a grid with a 2 px dark gutter.
Image make_grid(const std::vector<Image>& images, Index columns);

Image quantize(const Image& image);

}  // namespace tinv

#endif  // TINV_IMAGE_HPP
