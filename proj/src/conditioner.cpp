#include "tinv/conditioner.hpp"

#include <cmath>
#include <stdexcept>

#include "tinv/rng.hpp"

namespace tinv {

ToyConditioner::ToyConditioner(std::vector<std::string> vocabulary, Index embedding_dim,
                               Index context_dim, std::uint64_t seed)
    : projection_(context_dim, embedding_dim) {
  Rng rng(seed);
  for (Index i = 0; i < projection_.size(); ++i) {
    projection_.data()[i] = static_cast<float>(rng.normal() / std::sqrt(double(embedding_dim)));
  }
  for (const auto& w : vocabulary) {
    Vector<float> v(embedding_dim);
    for (Index i = 0; i < embedding_dim; ++i) v[i] = static_cast<float>(rng.normal());
    vocabulary_.emplace(w, std::move(v));
  }
}

ToyConditioner::ToyConditioner(std::map<std::string, Vector<float>> vocabulary,
                               RowMatrix<float> projection)
    : vocabulary_(std::move(vocabulary)), projection_(std::move(projection)) {}

const Vector<float>& ToyConditioner::word(const std::string& w) const {
  const auto it = vocabulary_.find(w);
  if (it == vocabulary_.end()) throw std::invalid_argument("unknown vocabulary token '" + w + "'");
  return it->second;
}

ConditioningVector<float> ToyConditioner::encode(std::span<const Token> tokens) const {
  if (tokens.empty()) return ConditioningVector<float>::null(context_dim());
  Vector<float> sum = Vector<float>::Zero(embedding_dim());
  Index rows = 0;
  for (const auto& t : tokens) {
    if (const auto* e = std::get_if<const ConceptEmbedding*>(&t)) {
      if ((*e)->dim() != embedding_dim()) throw ShapeError("embedding dim does not match conditioner");
      sum += (*e)->vectors.colwise().sum().transpose();
      rows += (*e)->n_vectors();
    } else {
      sum += word(std::get<std::string>(t));
      rows += 1;
    }
  }
  return {projection_ * (sum / static_cast<float>(rows)), false};
}

RowMatrix<float> ToyConditioner::backward(std::span<const Token> tokens,
                                          const Vector<float>& d_context,
                                          const ConceptEmbedding& target) const {
  Index rows = 0;
  bool present = false;
  for (const auto& t : tokens) {
    if (const auto* e = std::get_if<const ConceptEmbedding*>(&t)) {
      rows += (*e)->n_vectors();
      present = present || *e == &target;
    } else {
      rows += 1;
    }
  }
  RowMatrix<float> grad = RowMatrix<float>::Zero(target.n_vectors(), target.dim());
  if (!present) return grad;
  const Vector<float> d_mean = projection_.transpose() * d_context / static_cast<float>(rows);
  grad.rowwise() = d_mean.transpose();
  return grad;
}

std::vector<std::span<const float>> ToyConditioner::parameter_blocks() const {
  std::vector<std::span<const float>> out;
  out.emplace_back(projection_.data(), static_cast<std::size_t>(projection_.size()));
  for (const auto& [_, v] : vocabulary_) out.emplace_back(v.data(), static_cast<std::size_t>(v.size()));
  return out;
}

ConditioningVector<float> ToyConditioner::encode_words(const std::vector<std::string>& words) const {
  std::vector<Token> tokens(words.begin(), words.end());
  return encode(tokens);
}

ConditioningVector<float> ToyConditioner::encode_embedding(const ConceptEmbedding& e) const {
  const Token t{&e};
  return encode(std::span<const Token>(&t, 1));
}

}  // namespace tinv
