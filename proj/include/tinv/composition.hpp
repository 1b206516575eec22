#ifndef TINV_COMPOSITION_HPP
#define TINV_COMPOSITION_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinv/conditioner.hpp"
#include "tinv/diffusion.hpp"
#include "tinv/embedding.hpp"
#include "tinv/image.hpp"
#include "tinv/schedule.hpp"

namespace tinv {

inline constexpr const char* kEmbeddingExtension = ".emb";

class PromptError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Named learned concepts available to prompts.
class EmbeddingRegistry {
 public:
  void add(ConceptEmbedding embedding);
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const ConceptEmbedding& get(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }

  /// Every *.emb file in `dir`, registered under the name stored in the file.
  static EmbeddingRegistry load_dir(const std::filesystem::path& dir);

 private:
  std::map<std::string, ConceptEmbedding> entries_;
};

struct PromptTerm {
  std::string concept_name;
  double weight = 1.0;

  bool operator==(const PromptTerm&) const = default;
};

struct ComposedPrompt {
  std::vector<PromptTerm> terms;
  std::optional<double> cfg_scale;
};

/// "w1*<a> AND w2*<b> ..."; the weight prefix is optional (default 1).
ComposedPrompt parse_prompt(const std::string& text, const EmbeddingRegistry& registry);

/// Inverse of parse_prompt; weights use the shortest round-tripping form.
std::string format_prompt(const ComposedPrompt& prompt);

/// One prompt per alpha with terms [(healthy, 1 - alpha), (diseased, alpha)].
std::vector<ComposedPrompt> interpolation_sweep(const std::string& healthy, const std::string& diseased,
                                                const std::vector<double>& alphas);

struct CfgPolicy {
  double base = 2.0;
  double multi_concept = 3.0;  // used when a prompt has three or more terms
};

/// Encodes each non-zero-weight term with the conditioner. The scale is the
/// prompt's override if present, otherwise chosen by `policy`.
GuidanceSpec<float> to_guidance(const ComposedPrompt& prompt, const EmbeddingRegistry& registry,
                                const TextConditioner& conditioner, const CfgPolicy& policy = {});

struct InpaintMask {
  Tensor<float> mask;       // 1 x H x W, 1 = regenerate, 0 = preserve
  LatentTensor reference;   // C x H x W

  void validate() const;
};

/// Gray image thresholded at 128 (values >= 128 regenerate).
Tensor<float> mask_from_image(const Image& image, float threshold = 128.0f);

/// Seed stream for the preserved-region noise, separate from the sampler's
/// stream so the sampler draws are identical to plain sampling.
inline constexpr std::uint64_t kInpaintBlendStream = 0x1a9a1e7ULL;

/// Replacement inpainting: after every ancestral step to sigma_next the
/// preserved region is reset to reference + sigma_next * fresh noise, and to
/// the reference itself once sigma_next reaches 0.
LatentTensor inpaint(const DenoiserBackbone<float>& denoiser, const NoiseSchedule& schedule,
                     const GuidanceSpec<float>& guidance, const InpaintMask& mask, std::uint64_t seed);

}  // namespace tinv

#endif  // TINV_COMPOSITION_HPP
