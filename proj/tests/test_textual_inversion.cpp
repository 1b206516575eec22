#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "tinv/textual_inversion.hpp"
#include "tinv/toy_backend.hpp"

namespace tinv {
namespace {

using test::filled;

TEST(TiLoss, ExactStubGivesZero) {
  const Shape shape{1, 4, 4};
  const auto conditioner = test::small_conditioner();
  const auto e = init_embedding("<c>", 3, 12, 1);
  test::EchoStubDenoiser stub(8, 0.0f);
  const auto eps = filled(shape, 2);
  stub.set_eps(eps);
  EXPECT_EQ(ti_loss(stub, conditioner, e, filled(shape, 3), 0.5, eps), 0.0f);
}

TEST(TiLoss, OffsetStubGivesOne) {
  const Shape shape{1, 4, 4};
  const auto conditioner = test::small_conditioner();
  const auto e = init_embedding("<c>", 3, 12, 1);
  test::EchoStubDenoiser stub(8, 1.0f);
  const auto eps = filled(shape, 2);
  stub.set_eps(eps);
  EXPECT_FLOAT_EQ(ti_loss(stub, conditioner, e, filled(shape, 3), 0.5, eps), 1.0f);
}

TEST(TiLoss, ShapeMismatchThrows) {
  const auto conditioner = test::small_conditioner();
  const auto e = init_embedding("<c>", 3, 12, 1);
  ToyDenoiser<float> net(test::small_denoiser_config());
  EXPECT_THROW(ti_loss(net, conditioner, e, filled({1, 8, 8}, 1), 0.5, filled({1, 4, 4}, 2)), ShapeError);
}

// Double-precision re-evaluation of the loss: mean-pool, project, run the
// double copy of the network, mean squared error.
double oracle_loss(const ToyDenoiser<double>& net, const RowMatrix<double>& projection,
                   const RowMatrix<double>& vectors, const Tensor<double>& x0, double sigma,
                   const Tensor<double>& eps) {
  const Vector<double> pooled = vectors.colwise().mean().transpose();
  const ConditioningVector<double> ctx{projection * pooled, false};
  const Tensor<double> noisy(x0.shape(), x0.data() + sigma * eps.data());
  const auto pred = net.predict(noisy, sigma, ctx);
  return (pred.data() - eps.data()).squaredNorm() / static_cast<double>(eps.size());
}

TEST(TiLoss, EmbeddingGradientMatchesFiniteDifferences) {
  const auto config = test::small_denoiser_config();
  ToyDenoiser<float> net(config);
  const ToyDenoiser<double> net64(config, net.params().cast<double>());
  const auto conditioner = test::small_conditioner();
  const RowMatrix<double> projection = conditioner.projection().cast<double>();

  auto e = init_embedding("<c>", 4, 12, 7);
  e.vectors *= 25.0f;  // move away from the origin so every coordinate matters
  const Shape shape{1, 8, 8};
  const auto x0 = filled(shape, 8, 0.5), eps = filled(shape, 9);
  const double sigma = 0.8;

  const auto [loss, grad] = ti_loss_and_grad(net, conditioner, e, x0, sigma, eps);
  const RowMatrix<double> base = e.vectors.cast<double>();
  EXPECT_NEAR(loss, oracle_loss(net64, projection, base, x0.cast<double>(), sigma, eps.cast<double>()), 1e-4);

  Rng rng(10);
  for (int k = 0; k < 24; ++k) {
    const Index r = rng.uniform_int(0, e.n_vectors() - 1), c = rng.uniform_int(0, e.dim() - 1);
    const double h = 1e-5;
    RowMatrix<double> up = base, down = base;
    up(r, c) += h;
    down(r, c) -= h;
    const double fd = (oracle_loss(net64, projection, up, x0.cast<double>(), sigma, eps.cast<double>()) -
                       oracle_loss(net64, projection, down, x0.cast<double>(), sigma, eps.cast<double>())) /
                      (2 * h);
    const double an = grad(r, c);
    EXPECT_LE(std::abs(an - fd), 1e-3 * std::max(std::abs(an), std::abs(fd)))
        << "coordinate (" << r << ", " << c << ") analytic " << an << " fd " << fd;
  }
}

class TrainFixture : public ::testing::Test {
 protected:
  ToyDenoiser<float> net{test::small_denoiser_config()};
  ToyConditioner conditioner = test::small_conditioner();
  std::vector<LatentTensor> data;
  TIConfig config;

  void SetUp() override {
    net.set_frozen(true);
    for (int i = 0; i < 4; ++i) data.push_back(filled({1, 8, 8}, 100 + i, 0.5));
    config.steps = 30;
    config.n_vectors = 3;
    config.seed = 4;
    config.schedule.steps = 20;
    config.checkpoint_every = 10;
  }
};

TEST_F(TrainFixture, OnlyTheEmbeddingChanges) {
  const auto before = parameter_hash(net, conditioner);
  auto one = config;
  one.steps = 1;
  const auto after_one = train_embedding(data, one, net, conditioner, "<c>");
  EXPECT_EQ(parameter_hash(net, conditioner), before);
  const auto init = init_embedding("<c>", one.n_vectors, 12, derive_seed(one.seed, 0));
  EXPECT_FALSE(after_one.vectors == init.vectors);

  train_embedding(data, config, net, conditioner, "<c>");
  EXPECT_EQ(parameter_hash(net, conditioner), before);
}

TEST_F(TrainFixture, Deterministic) {
  const auto a = train_embedding(data, config, net, conditioner, "<c>");
  const auto b = train_embedding(data, config, net, conditioner, "<c>");
  EXPECT_EQ(a.vectors, b.vectors);
  auto other = config;
  other.seed = 5;
  EXPECT_FALSE(train_embedding(data, other, net, conditioner, "<c>").vectors == a.vectors);
}

TEST_F(TrainFixture, StateAndMetadata) {
  TrainingState state;
  int calls = 0;
  const auto e = train_embedding(data, config, net, conditioner, "<c>", &state,
                                 [&](const TrainingState& s) { EXPECT_EQ(s.step, ++calls); });
  EXPECT_EQ(state.step, 30);
  EXPECT_EQ(calls, 30);
  ASSERT_EQ(state.checkpoints.size(), 3u);
  EXPECT_EQ(state.checkpoints.back().step, 30);
  EXPECT_EQ(state.checkpoints.back().vectors, e.vectors);
  EXPECT_EQ(e.metadata.at("steps"), "30");
  EXPECT_EQ(e.metadata.at("learning_rate"), "0.005");
  EXPECT_EQ(e.metadata.at("training_images"), "4");
  EXPECT_EQ(e.n_vectors(), 3);

  auto ring = config;
  ring.checkpoint_every = 5;
  ring.keep_checkpoints = 2;
  TrainingState s2;
  train_embedding(data, ring, net, conditioner, "<c>", &s2);
  ASSERT_EQ(s2.checkpoints.size(), 2u);
  EXPECT_EQ(s2.checkpoints.front().step, 25);
}

TEST_F(TrainFixture, RejectsInvalidInputs) {
  EXPECT_THROW(train_embedding({}, config, net, conditioner, "<c>"), std::invalid_argument);
  auto bad = config;
  bad.n_vectors = 76;
  EXPECT_THROW(train_embedding(data, bad, net, conditioner, "<c>"), std::invalid_argument);
  ToyDenoiser<float> unfrozen(test::small_denoiser_config());
  EXPECT_THROW(train_embedding(data, config, unfrozen, conditioner, "<c>"), std::invalid_argument);
}

class NanGradDenoiser final : public DenoiserBackbone<float> {
 public:
  Tensor<float> predict(const Tensor<float>& x, double, const ConditioningVector<float>&) const override {
    return Tensor<float>::constant(x.shape(), std::numeric_limits<float>::quiet_NaN());
  }
  Tensor<float> predict_with_context_grad(const Tensor<float>& x, double s, const ConditioningVector<float>& c,
                                          const OutputGradFn& g, Vector<float>& d) const override {
    auto pred = predict(x, s, c);
    g(pred);
    d = Vector<float>::Zero(8);
    return pred;
  }
  Index context_dim() const override { return 8; }
  std::vector<std::span<const float>> parameter_blocks() const override { return {}; }
};

TEST_F(TrainFixture, NanLossAbortsWithStep) {
  NanGradDenoiser stub;
  stub.set_frozen(true);
  try {
    train_embedding(data, config, stub, conditioner, "<c>");
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(Embedding, InitIsSeededAndBounded) {
  const auto a = init_embedding("<x>", 64, 256, 3);
  const auto b = init_embedding("<x>", 64, 256, 3);
  EXPECT_EQ(a.vectors, b.vectors);
  const double std = std::sqrt(a.vectors.cast<double>().array().square().mean());
  EXPECT_NEAR(std, 0.02, 0.001);
  EXPECT_THROW(init_embedding("<x>", 76, 8, 1), std::invalid_argument);
  EXPECT_THROW(init_embedding("<x>", 0, 8, 1), std::invalid_argument);
  EXPECT_NO_THROW(init_embedding("<x>", 75, 8, 1));

  Vector<float> token = Vector<float>::LinSpaced(8, 0.0f, 1.0f);
  const auto c = init_embedding_from_token("<y>", 5, token);
  for (Index r = 0; r < 5; ++r) EXPECT_EQ(Vector<float>(c.vectors.row(r).transpose()), token);
}

TEST(Embedding, RoundTripIsBitExact) {
  test::TempDir dir;
  auto e = init_embedding("<healthy-prostate>", 7, 33, 9);
  e.vectors(2, 5) = -0.0f;
  e.vectors(3, 1) = std::numeric_limits<float>::denorm_min();
  save_embedding(e, dir / "x.emb");
  const auto back = load_embedding(dir / "x.emb");
  EXPECT_EQ(back.name, e.name);
  ASSERT_EQ(back.vectors.rows(), 7);
  ASSERT_EQ(back.vectors.cols(), 33);
  EXPECT_EQ(std::memcmp(back.vectors.data(), e.vectors.data(), sizeof(float) * 7 * 33), 0);
  EXPECT_EQ(encode_embedding(back), encode_embedding(e));
}

TEST(Embedding, PaperSizedFileIsUnderOneMegabyte) {
  test::TempDir dir;
  const auto e = init_embedding("<concept>", 64, 1024, 1);
  save_embedding(e, dir / "big.emb");
  const auto size = std::filesystem::file_size(dir / "big.emb");
  const std::size_t header = 4 + 2 + 2 + e.name.size() + 4 + 4;
  EXPECT_EQ(size, header + 64u * 1024u * 4u + 4u);
  EXPECT_EQ(size, serialized_embedding_size(e));
  EXPECT_LT(size, 1000000u);
}

EmbeddingFormatError::Kind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_embedding(bytes);
  } catch (const EmbeddingFormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return EmbeddingFormatError::Kind::Invalid;
}

TEST(Embedding, CorruptionKindsAreDistinct) {
  const auto good = encode_embedding(init_embedding("<c>", 2, 4, 1));
  using Kind = EmbeddingFormatError::Kind;

  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(decode_kind(magic), Kind::BadMagic);

  auto version = good;
  version[4] = 9;
  EXPECT_EQ(decode_kind(version), Kind::VersionMismatch);

  auto truncated = good;
  truncated.resize(good.size() - 9);
  EXPECT_EQ(decode_kind(truncated), Kind::Truncated);
  EXPECT_EQ(decode_kind({'T', 'I'}), Kind::Truncated);

  auto flipped = good;
  flipped[good.size() - 8] ^= 0x40;
  EXPECT_EQ(decode_kind(flipped), Kind::ChecksumMismatch);

  test::TempDir dir;
  EXPECT_THROW(load_embedding(dir / "missing.emb"), EmbeddingFormatError);
}

}  // namespace
}  // namespace tinv
