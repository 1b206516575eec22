#include "tinv/composition.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "tinv/rng.hpp"

namespace tinv {

void EmbeddingRegistry::add(ConceptEmbedding embedding) {
  if (embedding.name.empty()) throw PromptError("embedding has no name");
  const std::string name = embedding.name;
  entries_.insert_or_assign(name, std::move(embedding));
}

const ConceptEmbedding& EmbeddingRegistry::get(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw PromptError("unknown concept <" + name + ">");
  return it->second;
}

std::vector<std::string> EmbeddingRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

EmbeddingRegistry EmbeddingRegistry::load_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw PromptError("embedding directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == kEmbeddingExtension) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  EmbeddingRegistry registry;
  for (const auto& f : files) registry.add(load_embedding(f));
  return registry;
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && is_space(s[a])) ++a;
  while (b > a && is_space(s[b - 1])) --b;
  return s.substr(a, b - a);
}

/// Splits on the standalone word AND.
std::vector<std::string> split_and(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i + 3 <= text.size(); ++i) {
    if (text.compare(i, 3, "AND") != 0) continue;
    const bool left = i == 0 || is_space(text[i - 1]);
    const bool right = i + 3 == text.size() || is_space(text[i + 3]);
    if (!left || !right) continue;
    parts.push_back(text.substr(start, i - start));
    start = i + 3;
    i += 2;
  }
  parts.push_back(text.substr(start));
  return parts;
}

PromptTerm parse_term(const std::string& raw) {
  const std::string term = trim(raw);
  if (term.empty()) throw PromptError("empty term in prompt");
  PromptTerm out;
  std::string body = term;
  const auto star = term.find('*');
  if (star != std::string::npos) {
    const std::string w = trim(term.substr(0, star));
    double value = 0.0;
    const auto [end, ec] = std::from_chars(w.data(), w.data() + w.size(), value);
    if (w.empty() || ec != std::errc() || end != w.data() + w.size() || !std::isfinite(value)) {
      throw PromptError("malformed weight '" + w + "' in term '" + term + "'");
    }
    out.weight = value;
    body = trim(term.substr(star + 1));
  }
  if (body.size() < 3 || body.front() != '<' || body.back() != '>') {
    throw PromptError("expected <concept> in term '" + term + "'");
  }
  out.concept_name = body.substr(1, body.size() - 2);
  if (out.concept_name.empty() || out.concept_name.find_first_of("<>*") != std::string::npos) {
    throw PromptError("invalid concept name in term '" + term + "'");
  }
  return out;
}

}  // namespace

ComposedPrompt parse_prompt(const std::string& text, const EmbeddingRegistry& registry) {
  if (trim(text).empty()) throw PromptError("prompt is empty");
  ComposedPrompt prompt;
  for (const auto& part : split_and(text)) {
    PromptTerm term = parse_term(part);
    if (!registry.contains(term.concept_name)) throw PromptError("unknown concept <" + term.concept_name + ">");
    prompt.terms.push_back(std::move(term));
  }
  return prompt;
}

std::string format_prompt(const ComposedPrompt& prompt) {
  std::string out;
  for (std::size_t i = 0; i < prompt.terms.size(); ++i) {
    if (i > 0) out += " AND ";
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), prompt.terms[i].weight);
    out.append(buf, end);
    out += "*<" + prompt.terms[i].concept_name + ">";
  }
  return out;
}

std::vector<ComposedPrompt> interpolation_sweep(const std::string& healthy, const std::string& diseased,
                                                const std::vector<double>& alphas) {
  std::vector<ComposedPrompt> out;
  for (const double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw PromptError("interpolation alpha must lie in [0, 1]");
    out.push_back(ComposedPrompt{{{healthy, 1.0 - a}, {diseased, a}}, std::nullopt});
  }
  return out;
}

GuidanceSpec<float> to_guidance(const ComposedPrompt& prompt, const EmbeddingRegistry& registry,
                                const TextConditioner& conditioner, const CfgPolicy& policy) {
  if (prompt.terms.empty()) throw PromptError("prompt has no terms");
  GuidanceSpec<float> spec;
  spec.cfg_scale = prompt.cfg_scale ? *prompt.cfg_scale
                                    : (prompt.terms.size() >= 3 ? policy.multi_concept : policy.base);
  for (const auto& term : prompt.terms) {
    if (!std::isfinite(term.weight)) throw PromptError("weight of <" + term.concept_name + "> is not finite");
    const ConceptEmbedding& e = registry.get(term.concept_name);
    if (term.weight == 0.0) continue;
    const Token token{&e};
    spec.terms.push_back({conditioner.encode(std::span<const Token>(&token, 1)), term.weight});
  }
  if (spec.terms.empty()) throw PromptError("every prompt term has zero weight");
  return spec;
}

void InpaintMask::validate() const {
  if (mask.channels() != 1 || mask.height() != reference.height() || mask.width() != reference.width()) {
    throw ShapeError("inpaint mask " + mask.shape().str() + " does not match reference " +
                     reference.shape().str());
  }
  if (!((mask.data().array() == 0.0f) || (mask.data().array() == 1.0f)).all()) {
    throw std::invalid_argument("inpaint mask values must be 0 or 1");
  }
  if (!reference.all_finite()) throw std::invalid_argument("inpaint reference is not finite");
}

Tensor<float> mask_from_image(const Image& image, float threshold) {
  Tensor<float> mask(Shape{1, image.height(), image.width()});
  const auto gray = image.data().colwise().mean();
  mask.data() = (gray.array() >= threshold).cast<float>().matrix();
  return mask;
}

LatentTensor inpaint(const DenoiserBackbone<float>& denoiser, const NoiseSchedule& schedule,
                     const GuidanceSpec<float>& guidance, const InpaintMask& mask, std::uint64_t seed) {
  mask.validate();
  const Shape shape = mask.reference.shape();
  Rng rng(seed);
  Rng blend_rng(derive_seed(seed, kInpaintBlendStream));
  LatentTensor x = rng.normal_field<float>(shape);
  x.data() *= static_cast<float>(schedule.sigma_max());

  const auto keep = (mask.mask.data().array() != 0.0f).eval();
  const StepHook<float> hook = [&](int, double sigma_next, LatentTensor& state) {
    LatentTensor known = mask.reference;
    if (sigma_next > 0.0) {
      known.data() += static_cast<float>(sigma_next) * blend_rng.normal_field<float>(shape).data();
    }
    for (Index c = 0; c < shape.channels; ++c) {
      state.data().row(c) = keep.select(state.data().row(c).array(), known.data().row(c).array()).matrix();
    }
  };
  return sample_from(denoiser, schedule, guidance, rng, std::move(x), hook);
}

}  // namespace tinv
