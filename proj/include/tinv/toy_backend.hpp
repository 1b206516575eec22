#ifndef TINV_TOY_BACKEND_HPP
#define TINV_TOY_BACKEND_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tinv/conditioner.hpp"
#include "tinv/datasets.hpp"
#include "tinv/schedule.hpp"
#include "tinv/toy_denoiser.hpp"

namespace tinv {

/// The "pretrained" desk-scale model pair that textual inversion adapts:
/// a conditional toy denoiser and a toy text encoder with a small frozen
/// vocabulary. Neither knows the toy medical concepts.
struct ToyBackend {
  ToyDenoiser<float> denoiser;
  ToyConditioner conditioner;
  Index image_size = 64;

  Shape image_shape() const { return {denoiser.config().image_channels, image_size, image_size}; }
};

/// Words of the generic pretraining captions.
std::vector<std::string> generic_vocabulary();

struct GenericScene {
  Image image;
  std::vector<std::string> caption;
};

/// Generic pretraining corpus: ellipses, rings and squares at varying
/// brightness and size, optional texture, optional bright spots, optional
/// stripes; the caption lists what was drawn.
GenericScene render_generic_scene(Rng& rng, const ToyStyle& style);

struct PretrainConfig {
  int steps = 6000;
  int batch_size = 8;
  double learning_rate = 2e-3;
  double final_lr_fraction = 0.1;
  double condition_dropout = 0.1;
  double max_grad_norm = 1.0;  // global gradient-norm clip
  // Training noise levels: log-normal, clamped to the schedule range. The
  // noise-matching loss is weighted by (sigma^2 + sd^2) / sd^2 so every level
  // contributes a unit-scale error on the network's raw output.
  double sigma_log_mean = -1.0;
  double sigma_log_std = 1.4;
  std::uint64_t seed = 1234;
  ScheduleParams schedule{};
  ToyDenoiserConfig denoiser{};
  Index embedding_dim = 32;
  ToyStyle style{};
};

using ProgressFn = std::function<void(int step, double loss)>;

/// Trains the base denoiser on the generic corpus with condition dropout so
/// the zero context learns the unconditional branch. Learning rate decays
/// linearly to final_lr_fraction over the last 40% of steps.
ToyBackend pretrain_toy_backend(const PretrainConfig& config, const ProgressFn& progress = {});

void save_backend(const ToyBackend& backend, const std::filesystem::path& path);
ToyBackend load_backend(const std::filesystem::path& path);

/// SHA-256 over every denoiser and conditioner parameter, in block order.
std::string parameter_hash(const DenoiserBackbone<float>& denoiser, const TextConditioner& conditioner);

/// Loads `path` if present, otherwise pretrains with `config` and caches the
/// result at `path`.
ToyBackend load_or_pretrain_backend(const std::filesystem::path& path, const PretrainConfig& config,
                                    const ProgressFn& progress = {});

}  // namespace tinv

#endif  // TINV_TOY_BACKEND_HPP
