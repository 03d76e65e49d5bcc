// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "smatch/errors.hpp"
#include "smatch/net.hpp"
#include "smatch/ops.hpp"

using namespace smatch;
using ad::Var;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig e;
  e.stage_channels = {4, 6, 8, 10};
  e.seed = 11;
  return e;
}

DecoderConfig small_decoder(bool skip = false) {
  DecoderConfig d;
  d.width = 5;
  d.use_skip = skip;
  d.seed = 12;
  return d;
}

ConvParams random_conv(std::size_t out, std::size_t in, std::size_t k, std::uint64_t seed) {
  return {Var::leaf(oracle::random_tensor({out, in, k, k}, seed, -0.4, 0.4)),
          Var::leaf(oracle::random_tensor({out}, seed + 1000, -0.1, 0.1))};
}

ConvParams zero_conv(std::size_t out, std::size_t in, std::size_t k) {
  return {Var::leaf(Tensor({out, in, k, k})), Var::leaf(Tensor({out}))};
}

// Independent composition: conv(x) + bias, by loop-nest convolution.
std::vector<double> conv_bias(const Tensor& x, const ConvParams& p, int pad) {
  auto out = oracle::conv2d(x, p.weight.value(), 1, pad);
  const std::size_t plane = out.size() / p.bias.numel();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += p.bias.value()[i / plane];
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("smatch_test_" + name)).string();
}

}  // namespace

TEST_CASE("encode produces stride 2..16 stages") {
  CorrespondenceNet net(small_encoder(), small_decoder());
  ad::TapeScope off(false);
  SUBCASE("256x256 input") {
    auto f = net.encode(Var::constant(oracle::random_tensor({3, 256, 256}, 1, 0, 1, DType::f32)));
    CHECK(f.at_stride(16).shape() == Shape{10, 16, 16});
    CHECK(f.at_stride(2).shape() == Shape{4, 128, 128});
  }
  SUBCASE("64x64 input") {
    auto f = net.encode(Var::constant(oracle::random_tensor({3, 64, 64}, 2, 0, 1, DType::f32)));
    CHECK(f.at_stride(16).shape() == Shape{10, 4, 4});
    CHECK(f.at_stride(8).shape() == Shape{8, 8, 8});
    CHECK(f.at_stride(4).shape() == Shape{6, 16, 16});
  }
  SUBCASE("indivisible size") {
    CHECK_THROWS_AS(net.encode(Var::constant(Tensor({3, 40, 64}))), ContractError);
    CHECK_THROWS_AS(net.encode(Var::constant(Tensor({1, 64, 64}))), DimensionError);
  }
  SUBCASE("deterministic given seed") {
    const Tensor img = oracle::random_tensor({3, 32, 48}, 3, 0, 1, DType::f32);
    CorrespondenceNet twin(small_encoder(), small_decoder());
    auto a = net.encode(Var::constant(img)).at_stride(16).value();
    auto b = twin.encode(Var::constant(img)).at_stride(16).value();
    CHECK(a.bitwise_equal(b));
  }
}

TEST_CASE("decode yields a stride 16/8/4 pyramid of the decoder width") {
  for (bool skip : {false, true}) {
    CorrespondenceNet net(small_encoder(), small_decoder(skip));
    ad::TapeScope off(false);
    auto p = net.forward(Var::constant(oracle::random_tensor({3, 256, 256}, 4, 0, 1, DType::f32)));
    CHECK(p.at(16).shape() == Shape{5, 16, 16});
    CHECK(p.at(8).shape() == Shape{5, 32, 32});
    CHECK(p.at(4).shape() == Shape{5, 64, 64});
    CHECK(p.by_stride.size() == 3);
    auto q = net.forward(Var::constant(oracle::random_tensor({3, 64, 64}, 5, 0, 1, DType::f32)));
    CHECK(q.at(16).shape() == Shape{5, 4, 4});
    CHECK(q.at(8).shape() == Shape{5, 8, 8});
    CHECK(q.at(4).shape() == Shape{5, 16, 16});
    CHECK(q.height == 64);
    CHECK_THROWS_AS(q.at(2), ContractError);
  }
}

TEST_CASE("decode with skips requires the skip stages") {
  CorrespondenceNet net(small_encoder(), small_decoder(true));
  EncoderFeatures f;
  f.stages[3] = Var::constant(Tensor({10, 2, 2}));
  f.height = f.width = 32;
  CHECK_THROWS_AS(net.decode(f), ContractError);
  CorrespondenceNet plain(small_encoder(), small_decoder(false));
  CHECK(plain.decode(f).at(4).shape() == Shape{5, 8, 8});
}

TEST_CASE("conv_block") {
  const std::size_t C = 3;
  SUBCASE("zero weights give the identity") {
    const Tensor x = oracle::random_tensor({C, 4, 6}, 7);
    auto y = conv_block(Var::constant(x), zero_conv(C, C, 3), zero_conv(C, C, 3));
    CHECK(y.value().bitwise_equal(x));
  }
  SUBCASE("shape preserved on 5x7") {
    auto y = conv_block(Var::constant(oracle::random_tensor({C, 5, 7}, 8)), random_conv(C, C, 3, 1),
                        random_conv(C, C, 3, 2));
    CHECK(y.shape() == Shape{C, 5, 7});
  }
  SUBCASE("matches composition of primitives") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Tensor x = oracle::random_tensor({C, 5, 6}, 100 + seed);
      const auto c1 = random_conv(C, C, 3, 200 + seed), c2 = random_conv(C, C, 3, 300 + seed);
      std::vector<double> h = conv_bias(x, c1, 1);
      for (double& v : h) v = v > 0 ? v : 0;
      std::vector<double> want = conv_bias(Tensor(x.shape(), h), c2, 1);
      for (std::size_t i = 0; i < want.size(); ++i) want[i] += x[i];
      auto got = conv_block(Var::constant(x), c1, c2);
      CHECK(oracle::max_rel_diff(got.value().values(), want) < 1e-12);
    }
  }
}

TEST_CASE("upsample_module") {
  const std::size_t C = 4;
  UpsampleParams p{random_conv(C, C, 4, 1), random_conv(C, C, 3, 2), random_conv(C, C, 3, 3)};
  SUBCASE("doubles the spatial size") {
    auto y = upsample_module(Var::constant(oracle::random_tensor({C, 8, 8}, 9)), nullptr, p);
    CHECK(y.shape() == Shape{C, 16, 16});
  }
  SUBCASE("zero input, zero biases give zero output") {
    UpsampleParams z{{p.branch.weight, Var::leaf(Tensor({C}))},
                     {p.block1.weight, Var::leaf(Tensor({C}))},
                     {p.block2.weight, Var::leaf(Tensor({C}))}};
    auto y = upsample_module(Var::constant(Tensor({C, 3, 5})), nullptr, z);
    for (double v : y.value().values()) CHECK(v == 0.0);
    UpsampleParams zs{{Var::leaf(oracle::random_tensor({C, 6, 1, 1}, 5)), Var::leaf(Tensor({C}))},
                      z.block1, z.block2};
    const Var skip = Var::constant(Tensor({6, 6, 10}));
    auto ys = upsample_module(Var::constant(Tensor({C, 3, 5})), &skip, zs);
    for (double v : ys.value().values()) CHECK(v == 0.0);
  }
  SUBCASE("zeroed transposed conv isolates the bilinear branch") {
    const Tensor deep = oracle::random_tensor({C, 3, 4}, 10);
    UpsampleParams iso{zero_conv(C, C, 4), p.block1, p.block2};
    auto got = upsample_module(Var::constant(deep), nullptr, iso);
    // Bilinear upsample from the per-pixel oracle, then the block.
    Tensor up({C, 6, 8});
    std::vector<double> v(up.numel());
    for (int c = 0; c < int(C); ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 8; ++x)
          v[std::size_t((c * 6 + y) * 8 + x)] = oracle::bilinear_sample(deep, c, y, x, 6, 8);
    auto want = conv_block(Var::constant(Tensor({C, 6, 8}, v)), p.block1, p.block2);
    CHECK(oracle::max_rel_diff(got.value().values(), want.value().values()) < 1e-12);
  }
  SUBCASE("skip must sit at twice the resolution") {
    UpsampleParams s{random_conv(C, 6, 1, 4), p.block1, p.block2};
    const Var bad = Var::constant(Tensor({6, 5, 5}));
    CHECK_THROWS_AS(upsample_module(Var::constant(Tensor({C, 3, 3})), &bad, s), DimensionError);
  }
}

TEST_CASE("gradients through decode pass finite differences") {
  const Tensor w4 = oracle::random_tensor({1, 3 * 8 * 8}, 50);
  const Tensor w8 = oracle::random_tensor({1, 3 * 4 * 4}, 51);
  for (bool skip : {false, true}) {
    EncoderConfig e;
    e.stage_channels = {2, 3, 3, 4};
    DecoderConfig d;
    d.width = 3;
    d.use_skip = skip;
    CorrespondenceNet net(e, d, DType::f64);
    EncoderFeatures base = net.encode(Var::constant(oracle::random_tensor({3, 32, 32}, 52, 0, 1)));
    auto f = [&](const Var& top) {
      EncoderFeatures feats = base;
      feats.stages[3] = top;
      FeaturePyramid p = net.decode(feats);
      auto a = ad::matmul_nt(ad::reshape(p.at(4), {1, w4.numel()}), Var::constant(w4));
      auto b = ad::matmul_nt(ad::reshape(p.at(8), {1, w8.numel()}), Var::constant(w8));
      return ad::sum(ad::add(a, b));
    };
    CHECK(ad::grad_check(f, oracle::random_tensor({4, 2, 2}, 53), 1e-5) < 1e-4);

    const Var deep = Var::constant(net.decode(base).at(8).value());
    const Var* skip_feat = skip ? &base.stages[1] : nullptr;
    const std::string wname = skip ? "decoder.up1.skip.weight" : "decoder.up1.tconv.weight";
    auto g = [&](const Var& w) {
      UpsampleParams p = net.upsample_params(1);
      p.branch.weight = w;
      auto y = upsample_module(deep, skip_feat, p);
      return ad::sum(ad::matmul_nt(ad::reshape(y, {1, w4.numel()}), Var::constant(w4)));
    };
    CHECK(ad::grad_check(g, net.parameter(wname).var.value(), 1e-5) < 1e-4);
  }
}

TEST_CASE("decoder is lightweight next to a bottleneck residual encoder") {
  const std::array<int, 4> widths{256, 512, 1024, 2048};
  const std::size_t ref = bottleneck_encoder_param_count(widths);
  // torchvision resnet101: 44,549,160 total, less 2,049,000 classifier and 105,344 batch-norm.
  CHECK(ref == 42'394'816);
  for (bool skip : {false, true}) {
    DecoderConfig d;
    d.width = 64;
    d.use_skip = skip;
    CHECK(decoder_param_count(d, widths) < ref / 20);
  }
  CorrespondenceNet net(small_encoder(), small_decoder(true));
  CHECK(net.decoder_param_count() == decoder_param_count(small_decoder(true), {4, 6, 8, 10}));
  CorrespondenceNet plain(small_encoder(), small_decoder(false));
  CHECK(plain.decoder_param_count() == decoder_param_count(small_decoder(false), {4, 6, 8, 10}));
  CHECK(plain.encoder_param_count() == (4 * 3 * 9 + 4) + (6 * 4 * 9 + 6) + (8 * 6 * 9 + 8) +
                                           (10 * 8 * 9 + 10));
}

TEST_CASE("parameter init is seeded, biases start at zero") {
  CorrespondenceNet a(small_encoder(), small_decoder()), b(small_encoder(), small_decoder());
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    CHECK(a.parameters()[i].var.value().bitwise_equal(b.parameters()[i].var.value()));
  for (double v : a.parameter("decoder.up0.tconv.bias").var.value().values()) CHECK(v == 0.0);
  EncoderConfig other = small_encoder();
  other.seed = 99;
  CorrespondenceNet c(other, small_decoder());
  CHECK_FALSE(a.parameter("encoder.stage0.weight").var.value().bitwise_equal(
      c.parameter("encoder.stage0.weight").var.value()));
  CHECK(a.parameter("decoder.project.weight").var.value().bitwise_equal(
      c.parameter("decoder.project.weight").var.value()));
  CHECK_THROWS_AS(a.set_parameter("encoder.stage0.weight", Tensor({1})), DimensionError);
  CHECK_THROWS_AS(a.parameter("nope"), ContractError);
}

TEST_CASE("checkpoint round trip") {
  const std::string path = temp_path("ckpt.smck");
  CorrespondenceNet net(small_encoder(), small_decoder(true));
  save_checkpoint(path, net);
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  CorrespondenceNet back = load_checkpoint(path);
  CHECK(back.decoder_config().use_skip);
  CHECK(back.encoder_config().stage_channels == small_encoder().stage_channels);
  REQUIRE(back.parameters().size() == net.parameters().size());
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    CHECK(back.parameters()[i].name == net.parameters()[i].name);
    CHECK(back.parameters()[i].var.value().bitwise_equal(net.parameters()[i].var.value()));
  }

  SUBCASE("byte layout") {
    std::ifstream in(path, std::ios::binary);
    std::vector<unsigned char> b{std::istreambuf_iterator<char>(in), {}};
    REQUIRE(b.size() > 12);
    CHECK(std::string(b.begin(), b.begin() + 4) == "SMCK");
    CHECK(b[4] == 1);
    CHECK(b[5] == 0);
    CHECK(b[8] == 4 + net.parameters().size());
  }
  SUBCASE("shape mismatch is rejected") {
    CorrespondenceNet wide(small_encoder(), [] {
      auto d = small_decoder(true);
      d.width = 6;
      return d;
    }());
    CHECK_THROWS_AS(load_parameters(path, wide), InputError);
  }
  SUBCASE("variant mismatch is rejected") {
    CorrespondenceNet plain(small_encoder(), small_decoder(false));
    CHECK_THROWS_AS(load_parameters(path, plain), InputError);
  }
  SUBCASE("truncation reports an offset") {
    std::filesystem::resize_file(path, 100);
    try {
      load_checkpoint(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() <= 100);
    }
  }
  SUBCASE("bad magic") {
    std::ofstream(path, std::ios::binary) << "XXXXjunk";
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  std::remove(path.c_str());
}
