#include <gtest/gtest.h>

#include "support.hpp"
#include "tinv/bytes.hpp"
#include "tinv/config.hpp"

namespace tinv {
namespace {

TEST(RunConfig, LayeredPrecedence) {
  RunConfig c = default_config();
  EXPECT_EQ(c.get_int("ti.steps"), 2000);
  const auto file = RunConfig::parse("# comment\n ti.steps = 300 \n\nsampler.cfg_scale=2.5 # trailing\n");
  c.merge(file, true);
  EXPECT_EQ(c.get_int("ti.steps"), 300);
  EXPECT_EQ(c.get_double("sampler.cfg_scale"), 2.5);
  RunConfig flags;
  flags.set("ti.steps", "40");
  c.merge(flags, true);
  EXPECT_EQ(c.get_int("ti.steps"), 40);
  RunConfig unknown;
  unknown.set("ti.stepz", "1");
  EXPECT_THROW(c.merge(unknown, true), ConfigError);
}

TEST(RunConfig, PaperScaleRestoresPaperNumbers) {
  const auto p = default_config(true);
  EXPECT_EQ(p.get_int("ti.steps"), 50000);
  EXPECT_EQ(p.get_int("ti.vectors"), 64);
  EXPECT_EQ(p.get_double("ti.learning_rate"), 0.005);
  EXPECT_EQ(p.get_int("classifier.batches"), 6250);
  EXPECT_EQ(p.get_int("classifier.batch_size"), 32);
  EXPECT_EQ(p.get_int("sampler.samples"), 100);
  EXPECT_EQ(p.get_int("schedule.steps"), 100);
  EXPECT_EQ(p.get_double("sampler.cfg_scale"), 2.0);
  EXPECT_NE(p.hash(), default_config().hash());
}

TEST(RunConfig, TypedAccessErrors) {
  const auto c = RunConfig::parse("a = x\nb = true\nc = -3\n");
  EXPECT_THROW(c.get_double("a"), ConfigError);
  EXPECT_THROW(c.get("missing"), ConfigError);
  EXPECT_TRUE(c.get_bool("b"));
  EXPECT_THROW(c.get_bool("a"), ConfigError);
  EXPECT_EQ(c.get_int("c"), -3);
  EXPECT_THROW(c.get_uint("c"), ConfigError);
  EXPECT_THROW(RunConfig::parse("no equals sign"), ConfigError);
  EXPECT_THROW(RunConfig::parse("bad key = 1"), ConfigError);
}

TEST(RunConfig, PersistWritesConfigAndHash) {
  test::TempDir dir;
  const auto c = default_config();
  c.persist(dir.path());
  const auto back = RunConfig::load(dir / "config.txt");
  EXPECT_EQ(back.values(), c.values());
  const auto h = bytes::read_file(dir / "config.sha256");
  EXPECT_EQ(std::string(h.begin(), h.end()), c.hash() + "\n");
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_THROW(RunConfig::load(dir / "absent.txt"), ConfigError);
}

}  // namespace
}  // namespace tinv
