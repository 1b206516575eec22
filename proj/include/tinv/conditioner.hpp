#ifndef TINV_CONDITIONER_HPP
#define TINV_CONDITIONER_HPP

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tinv/diffusion.hpp"
#include "tinv/embedding.hpp"

namespace tinv {

/// A prompt token: either a learned concept or a frozen vocabulary word.
using Token = std::variant<const ConceptEmbedding*, std::string>;

class TextConditioner {
 public:
  virtual ~TextConditioner() = default;
  virtual ConditioningVector<float> encode(std::span<const Token> tokens) const = 0;
  virtual Index embedding_dim() const = 0;
  virtual Index context_dim() const = 0;

  /// Gradient of the loss w.r.t. the rows of `target`, given the gradient
  /// w.r.t. the encoded context of `tokens`.
  virtual RowMatrix<float> backward(std::span<const Token> tokens, const Vector<float>& d_context,
                                    const ConceptEmbedding& target) const = 0;

  virtual std::vector<std::span<const float>> parameter_blocks() const = 0;
};

/// Desk-scale text encoder: frozen word vectors, mean pooling over every row
/// of every token, then a frozen linear projection.
class ToyConditioner final : public TextConditioner {
 public:
  ToyConditioner(std::vector<std::string> vocabulary, Index embedding_dim, Index context_dim,
                 std::uint64_t seed);
  ToyConditioner(std::map<std::string, Vector<float>> vocabulary, RowMatrix<float> projection);

  ConditioningVector<float> encode(std::span<const Token> tokens) const override;
  RowMatrix<float> backward(std::span<const Token> tokens, const Vector<float>& d_context,
                            const ConceptEmbedding& target) const override;

  Index embedding_dim() const override { return projection_.cols(); }
  Index context_dim() const override { return projection_.rows(); }
  std::vector<std::span<const float>> parameter_blocks() const override;

  const Vector<float>& word(const std::string& w) const;
  const std::map<std::string, Vector<float>>& vocabulary() const { return vocabulary_; }
  const RowMatrix<float>& projection() const { return projection_; }

  ConditioningVector<float> encode_words(const std::vector<std::string>& words) const;
  ConditioningVector<float> encode_embedding(const ConceptEmbedding& e) const;

 private:
  std::map<std::string, Vector<float>> vocabulary_;
  RowMatrix<float> projection_;
};

}  // namespace tinv

#endif  // TINV_CONDITIONER_HPP
