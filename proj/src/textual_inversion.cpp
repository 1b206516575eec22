#include "tinv/textual_inversion.hpp"

#include <cmath>
#include <sstream>

#include "tinv/nn.hpp"
#include "tinv/rng.hpp"

namespace tinv {

void TrainingState::record_loss(double loss) {
  ++step;
  loss_ema = step == 1 ? loss : ema_decay * loss_ema + (1.0 - ema_decay) * loss;
  if (step % 100 == 0) ema_history.emplace_back(step, loss_ema);
}

float ti_loss(const DenoiserBackbone<float>& denoiser, const TextConditioner& conditioner,
              const ConceptEmbedding& embedding, const LatentTensor& x0, double sigma,
              const LatentTensor& eps) {
  require_same_shape(x0.shape(), eps.shape(), "ti_loss");
  const Token token{&embedding};
  const auto context = conditioner.encode(std::span<const Token>(&token, 1));
  return mean_squared_error(denoiser.predict(forward_diffuse(x0, sigma, eps), sigma, context), eps);
}

std::pair<float, RowMatrix<float>> ti_loss_and_grad(const DenoiserBackbone<float>& denoiser,
                                                    const TextConditioner& conditioner,
                                                    const ConceptEmbedding& embedding,
                                                    const LatentTensor& x0, double sigma,
                                                    const LatentTensor& eps) {
  require_same_shape(x0.shape(), eps.shape(), "ti_loss");
  const Token token{&embedding};
  const std::span<const Token> tokens(&token, 1);
  const auto context = conditioner.encode(tokens);
  const float n = static_cast<float>(eps.size());
  Vector<float> d_context;
  float loss = 0.0f;
  denoiser.predict_with_context_grad(
      forward_diffuse(x0, sigma, eps), sigma, context,
      [&](const LatentTensor& pred) {
        loss = mean_squared_error(pred, eps);
        return LatentTensor(pred.shape(), (pred.data() - eps.data()) * (2.0f / n));
      },
      d_context);
  return {loss, conditioner.backward(tokens, d_context, embedding)};
}

ConceptEmbedding train_embedding(const std::vector<LatentTensor>& dataset, const TIConfig& config,
                                 const DenoiserBackbone<float>& denoiser,
                                 const TextConditioner& conditioner, const std::string& name,
                                 TrainingState* state, const TIProgressFn& progress) {
  if (dataset.empty()) throw std::invalid_argument("train_embedding: dataset is empty");
  if (config.steps < 1 || config.batch_size < 1 || !(config.learning_rate > 0.0)) {
    throw std::invalid_argument("train_embedding: steps, batch size and learning rate must be positive");
  }
  if (!denoiser.frozen()) throw std::invalid_argument("train_embedding: denoiser must be frozen");

  ConceptEmbedding embedding = init_embedding(name, config.n_vectors,
                                              static_cast<int>(conditioner.embedding_dim()),
                                              derive_seed(config.seed, 0));
  const NoiseSchedule ladder = build_schedule(config.schedule);
  Rng rng(derive_seed(config.seed, 1));
  nn::Adam<float> adam({config.learning_rate});
  const nn::ParamBlocks<float> params{
      std::span<float>(embedding.vectors.data(), static_cast<std::size_t>(embedding.vectors.size()))};

  TrainingState local;
  TrainingState& st = state ? *state : local;
  for (int step = 0; step < config.steps; ++step) {
    RowMatrix<float> grad = RowMatrix<float>::Zero(embedding.n_vectors(), embedding.dim());
    double loss = 0.0;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& x0 = dataset[static_cast<std::size_t>(rng.uniform_int(0, Index(dataset.size()) - 1))];
      const double sigma = ladder[static_cast<std::size_t>(rng.uniform_int(0, ladder.steps() - 1))];
      const LatentTensor eps = rng.normal_field<float>(x0.shape());
      auto [l, g] = ti_loss_and_grad(denoiser, conditioner, embedding, x0, sigma, eps);
      loss += l / config.batch_size;
      grad += g / static_cast<float>(config.batch_size);
    }
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw NumericError("textual inversion loss became non-finite at training step " + std::to_string(step));
    }
    adam.step(params, {std::span<float>(grad.data(), static_cast<std::size_t>(grad.size()))});
    st.record_loss(loss);
    if (config.checkpoint_every > 0 && st.step % config.checkpoint_every == 0) {
      st.checkpoints.push_back({st.step, embedding.vectors});
      while (static_cast<int>(st.checkpoints.size()) > config.keep_checkpoints) st.checkpoints.pop_front();
    }
    if (progress) progress(st);
  }

  std::ostringstream lr;
  lr << config.learning_rate;
  embedding.metadata["learning_rate"] = lr.str();
  embedding.metadata["steps"] = std::to_string(config.steps);
  embedding.metadata["batch_size"] = std::to_string(config.batch_size);
  embedding.metadata["n_vectors"] = std::to_string(config.n_vectors);
  embedding.metadata["seed"] = std::to_string(config.seed);
  embedding.metadata["training_images"] = std::to_string(dataset.size());
  embedding.metadata["sigma_sampling"] = "uniform-over-ladder(steps=" + std::to_string(config.schedule.steps) + ")";
  embedding.metadata["final_loss_ema"] = std::to_string(st.loss_ema);
  return embedding;
}

}  // namespace tinv
