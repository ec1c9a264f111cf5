#include <gtest/gtest.h>

#include "rockres/blocks.hpp"
#include "rockres/errors.hpp"
#include "test_util.hpp"

namespace rockres {
namespace {

BlockVariant variant(BlockKind kind, std::int64_t cin, std::int64_t cout, int stride, int level = 0) {
  BlockVariant v;
  v.kind = kind;
  v.channels_in = cin;
  v.channels_out = cout;
  v.stride = stride;
  if (kind == BlockKind::modified_kernel) v.flags = ModFlags::ladder(level);
  return v;
}

std::string joined(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

TEST(Blocks, BasicDescriptor) {
  const auto b = ResidualBlock<float>::build(variant(BlockKind::basic, 64, 128, 2), "b", InitContext{});
  EXPECT_EQ(joined(b.describe()),
            "b.conv1 conv2d 64->128 k3 s2 p1\n"
            "b.bn1 batch_norm 128\n"
            "b.act1 relu\n"
            "b.conv2 conv2d 128->128 k3 s1 p1\n"
            "b.bn2 batch_norm 128\n"
            "b.downsample.conv conv2d 64->128 k1 s2 p0\n"
            "b.downsample.bn batch_norm 128\n"
            "b.add residual\n"
            "b.act_out relu\n");
}

TEST(Blocks, KernelModificationLadderDescriptors) {
  auto d = [](int level) {
    return joined(ResidualBlock<float>::build(variant(BlockKind::modified_kernel, 8, 8, 1, level), "m", InitContext{})
                      .describe());
  };
  EXPECT_EQ(d(1),
            "m.conv1 conv2d 8->8 k3 s1 p1\nm.bn1 batch_norm 8\nm.act1 gelu\n"
            "m.conv2 conv2d 8->8 k3 s1 p1\nm.bn2 batch_norm 8\nm.add residual\nm.act_out gelu\n");
  EXPECT_EQ(d(2),
            "m.conv1 conv2d 8->8 k3 s1 p1\nm.conv2 conv2d 8->8 k3 s1 p1\nm.bn2 batch_norm 8\n"
            "m.add residual\nm.act_out gelu\n");
  EXPECT_EQ(d(3),
            "m.conv1 conv2d 8->8 k3 s1 p1\nm.conv2 conv2d 8->8 k3 s1 p1\nm.ln2 layer_norm 8\n"
            "m.add residual\nm.act_out gelu\n");
  EXPECT_EQ(d(4),
            "m.conv0 conv2d 8->4 k1 s1 p0\nm.ln0 layer_norm 4\nm.act0 gelu\n"
            "m.conv1 conv2d 4->4 k3 s1 p1\nm.ln1 layer_norm 4\nm.act1 gelu\n"
            "m.conv2 conv2d 4->8 k3 s1 p1\nm.ln2 layer_norm 8\nm.add residual\nm.act_out gelu\n");
}

TEST(Blocks, BotDescriptors) {
  const auto bot = ResidualBlock<float>::build(variant(BlockKind::bot, 16, 16, 1), "t", InitContext{}, 2, 3);
  EXPECT_EQ(joined(bot.describe()),
            "t.conv1 conv2d 16->16 k3 s1 p1\nt.bn1 batch_norm 16\nt.act1 relu\n"
            "t.mhsa mhsa 16 heads=4 pos=2x3\nt.bn2 batch_norm 16\nt.act2 relu\n"
            "t.conv2 conv2d 16->16 k3 s1 p1\nt.bn3 batch_norm 16\nt.add residual\nt.act_out relu\n");
  const auto irc = ResidualBlock<float>::build(variant(BlockKind::bot_irc, 16, 16, 1), "t", InitContext{}, 2, 3);
  const auto lines = irc.describe();
  ASSERT_EQ(lines.size(), bot.describe().size() + 1);
  EXPECT_EQ(lines[4], "t.mhsa_skip residual");
}

TEST(Blocks, ParamCountClosedForm) {
  struct C {
    BlockVariant v;
    std::int64_t h, w;
  };
  const C cases[] = {{variant(BlockKind::basic, 64, 64, 1), 0, 0},
                     {variant(BlockKind::basic, 64, 128, 2), 0, 0},
                     {variant(BlockKind::modified_kernel, 16, 32, 2, 1), 0, 0},
                     {variant(BlockKind::modified_kernel, 16, 32, 2, 2), 0, 0},
                     {variant(BlockKind::modified_kernel, 16, 32, 2, 3), 0, 0},
                     {variant(BlockKind::modified_kernel, 16, 32, 2, 4), 0, 0},
                     {variant(BlockKind::bot, 32, 32, 1), 4, 4},
                     {variant(BlockKind::bot_irc, 32, 32, 1), 4, 4}};
  // Hand-derived counts: conv c_in*c_out*k*k, norm 2c, projection conv + norm.
  const std::int64_t expected[] = {
      2 * 64 * 64 * 9 + 4 * 64,
      64 * 128 * 9 + 128 * 128 * 9 + 4 * 128 + 64 * 128 + 2 * 128,
      16 * 32 * 9 + 32 * 32 * 9 + 4 * 32 + 16 * 32 + 2 * 32,
      16 * 32 * 9 + 32 * 32 * 9 + 2 * 32 + 16 * 32 + 2 * 32,
      16 * 32 * 9 + 32 * 32 * 9 + 2 * 32 + 16 * 32 + 2 * 32,
      16 * 16 + 2 * 16 + 16 * 16 * 9 + 2 * 16 + 16 * 32 * 9 + 2 * 32 + 16 * 32 + 2 * 32,
      2 * 32 * 32 * 9 + 6 * 32 + 4 * 32 * 32 + (4 + 4) * 8,
      2 * 32 * 32 * 9 + 6 * 32 + 4 * 32 * 32 + (4 + 4) * 8};
  for (std::size_t i = 0; i < std::size(cases); ++i) {
    const auto b = ResidualBlock<float>::build(cases[i].v, "b", InitContext{}, cases[i].h, cases[i].w);
    std::vector<NamedTensor<float>> params;
    b.collect_parameters(params);
    std::int64_t total = 0;
    for (const auto& p : params) total += p.tensor.numel();
    EXPECT_EQ(total, expected[i]) << i;
    EXPECT_EQ(b.param_count(), expected[i]) << i;
    EXPECT_EQ(block_param_count(cases[i].v, cases[i].h, cases[i].w), expected[i]) << i;
  }
}

TEST(Blocks, ModFlagsLadder) {
  for (int level = 0; level <= 4; ++level) EXPECT_EQ(ModFlags::ladder(level).level(), level);
  ModFlags skip;
  skip.use_layer_norm = true;  // skips the first two rungs
  EXPECT_EQ(skip.level(), -1);
  BlockVariant v = variant(BlockKind::modified_kernel, 8, 8, 1);
  v.flags = skip;
  EXPECT_THROW(v.validate(), ConfigError);
  EXPECT_THROW(ModFlags::ladder(5), ConfigError);
}

TEST(Blocks, VariantValidation) {
  EXPECT_THROW(variant(BlockKind::bot, 8, 16, 1).validate(), ConfigError);
  EXPECT_THROW(variant(BlockKind::bot, 8, 8, 2).validate(), ConfigError);
  EXPECT_THROW(variant(BlockKind::bot, 6, 6, 1).validate(), ConfigError);  // 4 heads
  BlockVariant basic_with_flags = variant(BlockKind::basic, 8, 8, 1);
  basic_with_flags.flags.use_gelu = true;
  EXPECT_THROW(basic_with_flags.validate(), ConfigError);
  EXPECT_THROW(ResidualBlock<float>::build(variant(BlockKind::bot, 8, 8, 1), "b", InitContext{}), ConfigError);
}

TEST(Blocks, OutputShapes) {
  auto x = testing::random_tensor<float>({2, 8, 6, 6}, 1);
  for (int level = 0; level <= 4; ++level) {
    auto b = ResidualBlock<float>::build(
        variant(level == 0 ? BlockKind::basic : BlockKind::modified_kernel, 8, 16, 2, level), "b", InitContext{});
    EXPECT_EQ(b.forward(x, Mode::train).shape(), (Shape{2, 16, 3, 3})) << level;
  }
  auto t = ResidualBlock<float>::build(variant(BlockKind::bot_irc, 8, 8, 1), "t", InitContext{}, 6, 6);
  EXPECT_EQ(t.forward(x, Mode::train).shape(), (Shape{2, 8, 6, 6}));
}

TEST(Blocks, KindCheckedEntryPoints) {
  auto x = testing::random_tensor<float>({2, 8, 3, 3}, 2);
  auto basic = ResidualBlock<float>::build(variant(BlockKind::basic, 8, 8, 1), "b", InitContext{});
  auto bot = ResidualBlock<float>::build(variant(BlockKind::bot, 8, 8, 1), "t", InitContext{}, 3, 3);
  EXPECT_NO_THROW(basic_block_forward(x, basic, Mode::train));
  EXPECT_THROW(bot_block_forward(x, basic, Mode::train), ConfigError);
  EXPECT_THROW(bot_irc_block_forward(x, bot, Mode::train), ConfigError);
  EXPECT_THROW(modified_block_forward(x, bot, Mode::train), ConfigError);
  EXPECT_NO_THROW(bot_block_forward(x, bot, Mode::train));
}

TEST(Blocks, InitIsKeyedByName) {
  const auto a = ResidualBlock<float>::build(variant(BlockKind::basic, 8, 8, 1), "x", InitContext{5});
  const auto b = ResidualBlock<float>::build(variant(BlockKind::basic, 8, 8, 1), "x", InitContext{5});
  const auto c = ResidualBlock<float>::build(variant(BlockKind::basic, 8, 8, 1), "y", InitContext{5});
  std::vector<NamedTensor<float>> pa, pb, pc;
  a.collect_parameters(pa);
  b.collect_parameters(pb);
  c.collect_parameters(pc);
  EXPECT_EQ(pa[0].tensor.value(), pb[0].tensor.value());
  EXPECT_FALSE(pa[0].tensor.value() == pc[0].tensor.value());
}

}  // namespace
}  // namespace rockres
