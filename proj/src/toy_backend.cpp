#include "tinv/toy_backend.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tinv/bytes.hpp"

namespace tinv {

std::vector<std::string> generic_vocabulary() {
  return {"ellipse", "ring", "square", "dark", "bright", "small", "texture", "spots", "stripes"};
}

namespace {

void add_rectangle(Image& image, double cx, double cy, double half_w, double half_h, double amplitude) {
  for (Index y = 0; y < image.height(); ++y)
    for (Index x = 0; x < image.width(); ++x) {
      const double dx = std::abs(x + 0.5 - cx) - half_w, dy = std::abs(y + 0.5 - cy) - half_h;
      const double d = std::max(dx, dy);
      image(0, y, x) += static_cast<float>(amplitude / (1.0 + std::exp(d / 1.0)));
    }
}

}  // namespace

GenericScene render_generic_scene(Rng& rng, const ToyStyle& style) {
  const Index n = style.size;
  const double half = n / 2.0, scale = n / 64.0;
  GenericScene scene{Image::constant(Shape{1, n, n}, static_cast<float>(style.background)), {}};
  auto& caption = scene.caption;

  const double shape_draw = rng.uniform();
  const int shape = shape_draw < 0.6 ? 0 : shape_draw < 0.75 ? 1 : shape_draw < 0.9 ? 2 : 3;
  double intensity = style.organ_intensity.draw(rng);
  const double tone = rng.uniform();
  std::string tone_word;
  if (tone < 0.2) {
    intensity = rng.uniform(55.0, 95.0);
    tone_word = "dark";
  } else if (tone < 0.4) {
    intensity = rng.uniform(150.0, 195.0);
    tone_word = "bright";
  }
  const bool small = rng.bernoulli(0.25);
  const double size_scale = small ? rng.uniform(0.45, 0.7) : 1.0;
  const double cx = half + rng.uniform(-style.organ_jitter, style.organ_jitter) * scale * (small ? 3.0 : 1.0);
  const double cy = half + rng.uniform(-style.organ_jitter, style.organ_jitter) * scale * (small ? 3.0 : 1.0);
  const double rx = style.organ_axis_x.draw(rng) * scale * size_scale;
  const double ry = style.organ_axis_y.draw(rng) * scale * size_scale;
  const double angle = rng.uniform(0.0, std::numbers::pi);

  Image region = Image::zeros(scene.image.shape());
  if (shape == 0) {
    add_ellipse(region, cx, cy, rx, ry, angle, 1.0, 1.5);
    caption.push_back("ellipse");
  } else if (shape == 1) {
    add_ellipse(region, cx, cy, rx, ry, angle, 1.0, 1.5);
    add_ellipse(region, cx, cy, 0.55 * rx, 0.55 * ry, angle, -1.0, 1.5);
    caption.push_back("ring");
  } else if (shape == 2) {
    add_rectangle(region, cx, cy, 0.85 * rx, 0.85 * ry, 1.0);
    caption.push_back("square");
  }
  const bool has_shape = shape != 3;
  if (has_shape) {
    if (!tone_word.empty()) caption.push_back(tone_word);
    if (small) caption.push_back("small");
  }

  const bool texture = rng.bernoulli(0.6);
  const Tensor<float> noise_field = smooth_noise(rng, n, n);
  if (has_shape) {
    const float amp = texture ? static_cast<float>(style.texture_amplitude) : 0.0f;
    scene.image.data().array() +=
        region.data().array() * (static_cast<float>(intensity - style.background) + amp * noise_field.data().array());
    if (texture) caption.push_back("texture");
  }

  if (rng.bernoulli(0.12)) {
    const double freq = rng.uniform(0.15, 0.45), phase = rng.uniform(0.0, 2 * std::numbers::pi);
    const double dir = rng.uniform(0.0, std::numbers::pi);
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x)
        scene.image(0, y, x) += static_cast<float>(
            18.0 * (1.0 - region(0, y, x)) *
            (1.0 + std::sin(freq * (std::cos(dir) * x + std::sin(dir) * y) + phase)));
    caption.push_back("stripes");
  }

  if (rng.bernoulli(0.45)) {
    const auto count = rng.uniform_int(1, 3);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::int64_t i = 0; i < count; ++i) {
      double lx, ly;
      if (has_shape && shape != 1) {
        const double r = 0.55 * std::sqrt(rng.uniform()), th = rng.uniform(0.0, 2 * std::numbers::pi);
        const double u = r * std::cos(th) * rx, v = r * std::sin(th) * ry;
        lx = cx + ca * u - sa * v;
        ly = cy + sa * u + ca * v;
      } else {
        lx = rng.uniform(8.0, n - 8.0);
        ly = rng.uniform(8.0, n - 8.0);
      }
      const double lr_x = rng.uniform(3.0, 6.0) * scale, lr_y = rng.uniform(3.0, 6.0) * scale;
      add_ellipse(scene.image, lx, ly, lr_x, lr_y, rng.uniform(0.0, std::numbers::pi), rng.uniform(50.0, 100.0), 1.0);
    }
    caption.push_back("spots");
  }

  const Tensor<float> pixel = rng.normal_field<float>(scene.image.shape());
  scene.image.data() += static_cast<float>(style.pixel_noise) * pixel.data();
  scene.image = quantize(scene.image);
  return scene;
}

ToyBackend pretrain_toy_backend(const PretrainConfig& config, const ProgressFn& progress) {
  ToyDenoiserConfig dcfg = config.denoiser;
  dcfg.seed = derive_seed(config.seed, 1);
  ToyBackend backend{ToyDenoiser<float>(dcfg),
                     ToyConditioner(generic_vocabulary(), config.embedding_dim, dcfg.context_dim,
                                    derive_seed(config.seed, 2)),
                     config.style.size};
  auto& net = backend.denoiser;
  const NoiseSchedule ladder = build_schedule(config.schedule);
  Rng rng(derive_seed(config.seed, 3));

  nn::Adam<float> adam({config.learning_rate});
  auto params = net.params().blocks();
  const int decay_start = static_cast<int>(0.6 * config.steps);
  double running = 0.0;
  for (int step = 0; step < config.steps; ++step) {
    if (step >= decay_start) {
      const double t = double(step - decay_start) / std::max(1, config.steps - decay_start);
      adam.set_learning_rate(config.learning_rate * (1.0 - (1.0 - config.final_lr_fraction) * t));
    }
    ToyDenoiserParams<float> grads = net.params().zeros_like();
    double loss = 0.0;
    for (int b = 0; b < config.batch_size; ++b) {
      const GenericScene scene = render_generic_scene(rng, config.style);
      const LatentTensor x0 = image_to_latent(scene.image);
      const double sigma = std::clamp(std::exp(config.sigma_log_mean + config.sigma_log_std * rng.normal()),
                                      ladder.params().sigma_min, ladder.params().sigma_max);
      const LatentTensor eps = rng.normal_field<float>(x0.shape());
      const auto context = rng.bernoulli(config.condition_dropout)
                               ? ConditioningVector<float>::null(dcfg.context_dim)
                               : backend.conditioner.encode_words(scene.caption);
      typename ToyDenoiser<float>::Cache cache;
      const LatentTensor pred = net.forward(forward_diffuse(x0, sigma, eps), sigma, context, &cache);
      const float n = static_cast<float>(pred.size());
      const double sd2 = dcfg.sigma_data * dcfg.sigma_data;
      const double weight = (sigma * sigma + sd2) / sd2;
      LatentTensor d_out(pred.shape(),
                         (pred.data() - eps.data()) * static_cast<float>(2.0 * weight / (n * config.batch_size)));
      loss += weight * mean_squared_error(pred, eps) / config.batch_size;
      net.backward(cache, d_out, &grads);
    }
    auto grad_blocks = grads.blocks();
    double norm2 = 0.0;
    for (const auto& g : grad_blocks)
      for (const float v : g) norm2 += static_cast<double>(v) * v;
    const double norm = std::sqrt(norm2);
    if (norm > config.max_grad_norm) {
      const float scale = static_cast<float>(config.max_grad_norm / norm);
      for (auto& g : grad_blocks)
        for (float& v : g) v *= scale;
    }
    adam.step(params, grad_blocks);
    running = step == 0 ? loss : 0.98 * running + 0.02 * loss;
    if (progress) progress(step, running);
  }
  backend.denoiser.set_frozen(true);
  return backend;
}

namespace {

constexpr char kBackendMagic[4] = {'T', 'I', 'B', 'K'};
constexpr std::uint16_t kBackendVersion = 2;

}  // namespace

void save_backend(const ToyBackend& backend, const std::filesystem::path& path) {
  bytes::Writer w;
  w.put_raw(kBackendMagic, 4);
  w.put<std::uint16_t>(kBackendVersion);
  const auto& c = backend.denoiser.config();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.image_channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.hidden));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.context_dim));
  w.put<double>(c.sigma_data);
  w.put<std::uint64_t>(c.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(backend.image_size));
  for (const auto& block : backend.denoiser.parameter_blocks()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(block.size()));
    w.put_raw(block.data(), block.size_bytes());
  }
  const auto& proj = backend.conditioner.projection();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(proj.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(proj.cols()));
  w.put_raw(proj.data(), sizeof(float) * static_cast<std::size_t>(proj.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(backend.conditioner.vocabulary().size()));
  for (const auto& [word, vec] : backend.conditioner.vocabulary()) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(word.size()));
    w.put_raw(word.data(), word.size());
    w.put_raw(vec.data(), sizeof(float) * static_cast<std::size_t>(vec.size()));
  }
  w.put<std::uint32_t>(bytes::crc32(w.buffer().data(), w.buffer().size()));
  bytes::write_file(path, w.buffer());
}

ToyBackend load_backend(const std::filesystem::path& path) {
  const auto data = bytes::read_file(path);
  if (data.size() < 4 || bytes::crc32(data.data(), data.size() - 4) !=
                             *reinterpret_cast<const std::uint32_t*>(data.data() + data.size() - 4)) {
    throw std::runtime_error("backend file " + path.string() + " is corrupt");
  }
  bytes::Reader r(data.data(), data.size() - 4);
  char magic[4];
  r.get_raw(magic, 4);
  if (std::memcmp(magic, kBackendMagic, 4) != 0) throw std::runtime_error(path.string() + " is not a backend file");
  if (r.get<std::uint16_t>() != kBackendVersion) throw std::runtime_error("unsupported backend version");
  ToyDenoiserConfig c;
  c.image_channels = r.get<std::uint32_t>();
  c.hidden = r.get<std::uint32_t>();
  c.context_dim = r.get<std::uint32_t>();
  c.sigma_data = r.get<double>();
  c.seed = r.get<std::uint64_t>();
  const Index image_size = r.get<std::uint32_t>();
  ToyDenoiser<float> net(c);
  for (auto& block : net.params().blocks()) {
    if (r.get<std::uint32_t>() != block.size()) throw std::runtime_error("backend parameter block mismatch");
    r.get_raw(block.data(), block.size_bytes());
  }
  const Index rows = r.get<std::uint32_t>(), cols = r.get<std::uint32_t>();
  RowMatrix<float> proj(rows, cols);
  r.get_raw(proj.data(), sizeof(float) * static_cast<std::size_t>(proj.size()));
  std::map<std::string, Vector<float>> vocab;
  const auto n_words = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_words; ++i) {
    std::string word(r.get<std::uint16_t>(), '\0');
    r.get_raw(word.data(), word.size());
    Vector<float> v(cols);
    r.get_raw(v.data(), sizeof(float) * static_cast<std::size_t>(cols));
    vocab.emplace(std::move(word), std::move(v));
  }
  net.set_frozen(true);
  return ToyBackend{std::move(net), ToyConditioner(std::move(vocab), std::move(proj)), image_size};
}

std::string parameter_hash(const DenoiserBackbone<float>& denoiser, const TextConditioner& conditioner) {
  std::vector<std::uint8_t> buffer;
  const auto append = [&](std::span<const float> block) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(block.data());
    buffer.insert(buffer.end(), p, p + block.size_bytes());
  };
  for (const auto& b : denoiser.parameter_blocks()) append(b);
  for (const auto& b : conditioner.parameter_blocks()) append(b);
  return bytes::sha256_hex(buffer.data(), buffer.size());
}

ToyBackend load_or_pretrain_backend(const std::filesystem::path& path, const PretrainConfig& config,
                                    const ProgressFn& progress) {
  if (std::filesystem::exists(path)) return load_backend(path);
  ToyBackend backend = pretrain_toy_backend(config, progress);
  save_backend(backend, path);
  return backend;
}

}  // namespace tinv
