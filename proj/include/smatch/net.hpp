// SPDX-License-Identifier: Apache-2.0
#pragma once

// Strided convolutional encoder and the two-module upsampling decoder that
// turns its stride-16 output into a stride 16/8/4 feature pyramid.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "smatch/autodiff.hpp"
#include "smatch/rng.hpp"

namespace smatch {

inline constexpr std::array<int, 3> kPyramidStrides{16, 8, 4};

struct EncoderConfig {
  int in_channels = 3;
  // Output widths of the stride-2, 4, 8 and 16 stages.
  std::array<int, 4> stage_channels{16, 32, 64, 128};
  std::uint64_t seed = 1;
};

struct DecoderConfig {
  int width = 64;
  // Replace the transposed-convolution branch by a projected encoder stage.
  bool use_skip = false;
  std::uint64_t seed = 2;
};

void validate(const EncoderConfig& cfg);
void validate(const DecoderConfig& cfg);

// Per-stage encoder outputs, index 0..3 for strides 2, 4, 8, 16.
struct EncoderFeatures {
  std::array<ad::Var, 4> stages;
  std::size_t height = 0, width = 0;
  const ad::Var& at_stride(int stride) const;
};

struct FeaturePyramid {
  std::map<int, ad::Var> by_stride;
  std::size_t height = 0, width = 0;  // input image size
  const ad::Var& at(int stride) const;
};

struct ConvParams {
  ad::Var weight, bias;
};

struct UpsampleParams {
  ConvParams branch;  // transposed conv [C,C,4,4] or skip projection [C,C_skip,1,1]
  ConvParams block1, block2;
};

// x + conv3x3(relu(conv3x3(x))), padding 1.
ad::Var conv_block(const ad::Var& x, const ConvParams& first, const ConvParams& second);

// ConvBlock(branch(deep) + bilinear_x2(deep)). branch is a stride-2 transposed
// conv of deep, or, when skip is given, a 1x1 projection of the skip feature.
ad::Var upsample_module(const ad::Var& deep, const ad::Var* skip, const UpsampleParams& p);

struct Parameter {
  std::string name;
  ad::Var var;
};

class CorrespondenceNet {
 public:
  CorrespondenceNet(EncoderConfig enc, DecoderConfig dec, DType dtype = DType::f32);

  const EncoderConfig& encoder_config() const noexcept { return enc_; }
  const DecoderConfig& decoder_config() const noexcept { return dec_; }
  DType dtype() const noexcept { return dtype_; }

  // image: [in_channels, H, W] with H and W divisible by 16.
  EncoderFeatures encode(const ad::Var& image) const;
  FeaturePyramid decode(const EncoderFeatures& features) const;
  FeaturePyramid forward(const ad::Var& image) const { return decode(encode(image)); }

  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  const Parameter& parameter(const std::string& name) const;
  // Replaces a parameter's value with a fresh leaf; shapes must agree.
  void set_parameter(const std::string& name, Tensor value);

  std::size_t encoder_param_count() const;
  std::size_t decoder_param_count() const;

  UpsampleParams upsample_params(int module) const;  // 0: 16->8, 1: 8->4

 private:
  void add_param(std::string name, Shape shape, double bound, Rng& rng);
  const ad::Var& var(const std::string& name) const;

  EncoderConfig enc_;
  DecoderConfig dec_;
  DType dtype_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Weight count of a bottleneck-block residual encoder: 7x7 stem to widths[0]/4,
// then stages of (1x1, 3x3, 1x1) blocks with inner width widths[s]/4 and a
// projection shortcut on each stage's first block. With widths
// {256, 512, 1024, 2048} and blocks {3, 4, 23, 3} this is the ResNet-101 layout.
std::size_t bottleneck_encoder_param_count(const std::array<int, 4>& widths,
                                           const std::array<int, 4>& blocks = {3, 4, 23, 3},
                                           int in_channels = 3);

// Decoder weight count for a given encoder width layout.
std::size_t decoder_param_count(const DecoderConfig& dec, const std::array<int, 4>& enc_widths);

// "SMCK" checkpoint: magic, u32 version, u32 record count, then records of
// (u32 name length, name, u8 ndim, ndim x u64 dims, float32 data), all
// little-endian. Configuration travels as records named "config.*".
void save_checkpoint(const std::string& path, const CorrespondenceNet& net);
CorrespondenceNet load_checkpoint(const std::string& path);
// Loads parameters into an existing network; any name or shape mismatch throws.
void load_parameters(const std::string& path, CorrespondenceNet& net);

}  // namespace smatch
