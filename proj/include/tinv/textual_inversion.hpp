#ifndef TINV_TEXTUAL_INVERSION_HPP
#define TINV_TEXTUAL_INVERSION_HPP

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tinv/conditioner.hpp"
#include "tinv/diffusion.hpp"
#include "tinv/embedding.hpp"
#include "tinv/schedule.hpp"

namespace tinv {

struct TIConfig {
  double learning_rate = 0.005;
  int steps = 50000;
  int batch_size = 1;
  int n_vectors = 64;
  std::uint64_t seed = 0;
  ScheduleParams schedule{};  // training sigmas are drawn uniformly from this ladder
  int checkpoint_every = 5000;
  int keep_checkpoints = 3;
};

struct TrainingState {
  struct Checkpoint {
    int step = 0;
    RowMatrix<float> vectors;
  };

  int step = 0;
  double loss_ema = 0.0;
  double ema_decay = 0.99;
  std::vector<std::pair<int, double>> ema_history;  // (step, EMA) every 100 steps
  std::deque<Checkpoint> checkpoints;

  void record_loss(double loss);
};

/// Mean squared error between `eps` and the denoiser's prediction for
/// x0 + sigma * eps, prompted with the bare embedding token.
float ti_loss(const DenoiserBackbone<float>& denoiser, const TextConditioner& conditioner,
              const ConceptEmbedding& embedding, const LatentTensor& x0, double sigma,
              const LatentTensor& eps);

/// Same loss plus its gradient w.r.t. `embedding.vectors`.
std::pair<float, RowMatrix<float>> ti_loss_and_grad(const DenoiserBackbone<float>& denoiser,
                                                    const TextConditioner& conditioner,
                                                    const ConceptEmbedding& embedding,
                                                    const LatentTensor& x0, double sigma,
                                                    const LatentTensor& eps);

using TIProgressFn = std::function<void(const TrainingState&)>;

/// Optimizes a fresh embedding (random-normal init) with constant-LR Adam.
/// Only the embedding changes; both models are read through const refs and
/// must be flagged frozen.
ConceptEmbedding train_embedding(const std::vector<LatentTensor>& dataset, const TIConfig& config,
                                 const DenoiserBackbone<float>& denoiser,
                                 const TextConditioner& conditioner, const std::string& name,
                                 TrainingState* state = nullptr, const TIProgressFn& progress = {});

}  // namespace tinv

#endif  // TINV_TEXTUAL_INVERSION_HPP
