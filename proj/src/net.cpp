// SPDX-License-Identifier: Apache-2.0
#include "smatch/net.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "smatch/errors.hpp"
#include "smatch/ops.hpp"

namespace smatch {
namespace {

constexpr char kCheckpointMagic[4] = {'S', 'M', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

int stage_index(int stride) {
  switch (stride) {
    case 2: return 0;
    case 4: return 1;
    case 8: return 2;
    case 16: return 3;
    default: throw ContractError("no encoder stage at stride " + std::to_string(stride));
  }
}

ad::Var conv(const ad::Var& x, const ConvParams& p, std::size_t stride, std::size_t pad) {
  return ad::add_channel_bias(ad::conv2d(x, p.weight, stride, pad), p.bias);
}

std::string up_prefix(int m) { return "decoder.up" + std::to_string(m); }

}  // namespace

void validate(const EncoderConfig& cfg) {
  if (cfg.in_channels < 1) throw ContractError("encoder in_channels must be >= 1");
  for (int c : cfg.stage_channels)
    if (c < 1) throw ContractError("encoder stage channels must be >= 1");
}

void validate(const DecoderConfig& cfg) {
  if (cfg.width < 1) throw ContractError("decoder width must be >= 1");
}

const ad::Var& EncoderFeatures::at_stride(int stride) const {
  const ad::Var& v = stages[static_cast<std::size_t>(stage_index(stride))];
  if (!v.node()) throw ContractError("encoder feature at stride " + std::to_string(stride) + " missing");
  return v;
}

const ad::Var& FeaturePyramid::at(int stride) const {
  auto it = by_stride.find(stride);
  if (it == by_stride.end())
    throw ContractError("pyramid has no map at stride " + std::to_string(stride));
  return it->second;
}

ad::Var conv_block(const ad::Var& x, const ConvParams& first, const ConvParams& second) {
  return ad::add(x, conv(ad::relu(conv(x, first, 1, 1)), second, 1, 1));
}

ad::Var upsample_module(const ad::Var& deep, const ad::Var* skip, const UpsampleParams& p) {
  if (deep.shape().size() != 3) throw DimensionError("upsample_module expects a [C,h,w] input");
  const std::size_t h2 = 2 * deep.shape()[1], w2 = 2 * deep.shape()[2];
  ad::Var branch;
  if (skip) {
    const Shape& s = skip->shape();
    if (s.size() != 3 || s[1] != h2 || s[2] != w2)
      throw DimensionError("skip feature " + shape_string(s) + " does not match " +
                           std::to_string(h2) + "x" + std::to_string(w2));
    branch = conv(*skip, p.branch, 1, 0);
  } else {
    branch = ad::add_channel_bias(ad::transposed_conv2d(deep, p.branch.weight, 2, 1), p.branch.bias);
  }
  return conv_block(ad::add(branch, ad::bilinear_resize(deep, h2, w2)), p.block1, p.block2);
}

CorrespondenceNet::CorrespondenceNet(EncoderConfig enc, DecoderConfig dec, DType dtype)
    : enc_(enc), dec_(dec), dtype_(dtype) {
  validate(enc_);
  validate(dec_);
  const auto C = static_cast<std::size_t>(dec_.width);

  Rng erng(mix_seed(enc_.seed, 0));
  auto in = static_cast<std::size_t>(enc_.in_channels);
  for (int s = 0; s < 4; ++s) {
    const auto out = static_cast<std::size_t>(enc_.stage_channels[static_cast<std::size_t>(s)]);
    const std::string pre = "encoder.stage" + std::to_string(s);
    add_param(pre + ".weight", {out, in, 3, 3}, std::sqrt(6.0 / double(in * 9)), erng);
    add_param(pre + ".bias", {out}, 0.0, erng);
    in = out;
  }

  Rng drng(mix_seed(dec_.seed, 1));
  const auto top = static_cast<std::size_t>(enc_.stage_channels[3]);
  add_param("decoder.project.weight", {C, top, 1, 1}, std::sqrt(3.0 / double(top)), drng);
  add_param("decoder.project.bias", {C}, 0.0, drng);
  for (int m = 0; m < 2; ++m) {
    const std::string pre = up_prefix(m);
    if (dec_.use_skip) {
      // Module 0 lands on stride 8, module 1 on stride 4.
      const auto cs = static_cast<std::size_t>(enc_.stage_channels[static_cast<std::size_t>(2 - m)]);
      add_param(pre + ".skip.weight", {C, cs, 1, 1}, std::sqrt(3.0 / double(cs)), drng);
      add_param(pre + ".skip.bias", {C}, 0.0, drng);
    } else {
      // Each output pixel of a stride-2, 4x4 transposed conv sees 2x2 taps per channel.
      add_param(pre + ".tconv.weight", {C, C, 4, 4}, std::sqrt(3.0 / double(C * 4)), drng);
      add_param(pre + ".tconv.bias", {C}, 0.0, drng);
    }
    add_param(pre + ".block.conv1.weight", {C, C, 3, 3}, std::sqrt(6.0 / double(C * 9)), drng);
    add_param(pre + ".block.conv1.bias", {C}, 0.0, drng);
    add_param(pre + ".block.conv2.weight", {C, C, 3, 3}, std::sqrt(3.0 / double(C * 9)), drng);
    add_param(pre + ".block.conv2.bias", {C}, 0.0, drng);
  }
}

void CorrespondenceNet::add_param(std::string name, Shape shape, double bound, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> v(n, 0.0);
  if (bound > 0)
    for (double& e : v) e = rng.uniform(-bound, bound);
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), ad::Var::leaf(Tensor(std::move(shape), std::move(v), dtype_))});
}

const Parameter& CorrespondenceNet::parameter(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return params_[it->second];
}

const ad::Var& CorrespondenceNet::var(const std::string& name) const { return parameter(name).var; }

void CorrespondenceNet::set_parameter(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  Parameter& p = params_[it->second];
  if (value.shape() != p.var.shape())
    throw DimensionError("parameter '" + name + "' has shape " + shape_string(p.var.shape()) +
                         ", got " + shape_string(value.shape()));
  p.var = ad::Var::leaf(value.to(dtype_));
}

UpsampleParams CorrespondenceNet::upsample_params(int module) const {
  if (module != 0 && module != 1) throw ContractError("decoder has upsampling modules 0 and 1");
  const std::string pre = up_prefix(module);
  const std::string br = pre + (dec_.use_skip ? ".skip" : ".tconv");
  return {{var(br + ".weight"), var(br + ".bias")},
          {var(pre + ".block.conv1.weight"), var(pre + ".block.conv1.bias")},
          {var(pre + ".block.conv2.weight"), var(pre + ".block.conv2.bias")}};
}

EncoderFeatures CorrespondenceNet::encode(const ad::Var& image) const {
  const Shape& s = image.shape();
  if (s.size() != 3) throw DimensionError("encode expects a [C,H,W] image, got " + shape_string(s));
  if (s[0] != static_cast<std::size_t>(enc_.in_channels))
    throw DimensionError("image has " + std::to_string(s[0]) + " channels, encoder expects " +
                         std::to_string(enc_.in_channels));
  if (s[1] == 0 || s[2] == 0 || s[1] % 16 != 0 || s[2] % 16 != 0)
    throw ContractError("image size " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                        " is not a positive multiple of 16");
  EncoderFeatures f;
  f.height = s[1];
  f.width = s[2];
  ad::Var x = image;
  for (int i = 0; i < 4; ++i) {
    const std::string pre = "encoder.stage" + std::to_string(i);
    x = ad::relu(conv(x, {var(pre + ".weight"), var(pre + ".bias")}, 2, 1));
    f.stages[static_cast<std::size_t>(i)] = x;
  }
  return f;
}

FeaturePyramid CorrespondenceNet::decode(const EncoderFeatures& features) const {
  FeaturePyramid p;
  p.height = features.height;
  p.width = features.width;
  ad::Var x = conv(features.at_stride(16),
                   {var("decoder.project.weight"), var("decoder.project.bias")}, 1, 0);
  p.by_stride[16] = x;
  for (int m = 0; m < 2; ++m) {
    const int stride = m == 0 ? 8 : 4;
    const ad::Var* skip = dec_.use_skip ? &features.at_stride(stride) : nullptr;
    x = upsample_module(x, skip, upsample_params(m));
    p.by_stride[stride] = x;
  }
  return p;
}

std::size_t CorrespondenceNet::encoder_param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.name.rfind("encoder.", 0) == 0) n += p.var.numel();
  return n;
}

std::size_t CorrespondenceNet::decoder_param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.name.rfind("decoder.", 0) == 0) n += p.var.numel();
  return n;
}

std::size_t bottleneck_encoder_param_count(const std::array<int, 4>& widths,
                                           const std::array<int, 4>& blocks, int in_channels) {
  auto conv_w = [](std::size_t out, std::size_t in, std::size_t k) { return out * in * k * k; };
  const auto stem = static_cast<std::size_t>(widths[0] / 4);
  std::size_t n = conv_w(stem, static_cast<std::size_t>(in_channels), 7);
  std::size_t in = stem;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto out = static_cast<std::size_t>(widths[s]);
    const std::size_t mid = out / 4;
    for (int b = 0; b < blocks[s]; ++b) {
      n += conv_w(mid, in, 1) + conv_w(mid, mid, 3) + conv_w(out, mid, 1);
      if (b == 0) n += conv_w(out, in, 1);
      in = out;
    }
  }
  return n;
}

std::size_t decoder_param_count(const DecoderConfig& dec, const std::array<int, 4>& enc_widths) {
  const auto C = static_cast<std::size_t>(dec.width);
  std::size_t n = C * static_cast<std::size_t>(enc_widths[3]) + C;
  for (int m = 0; m < 2; ++m) {
    if (dec.use_skip)
      n += C * static_cast<std::size_t>(enc_widths[static_cast<std::size_t>(2 - m)]) + C;
    else
      n += C * C * 16 + C;
    n += 2 * (C * C * 9 + C);
  }
  return n;
}

void save_checkpoint(const std::string& path, const CorrespondenceNet& net) {
  std::vector<std::pair<std::string, Tensor>> records;
  const auto& e = net.encoder_config();
  const auto& d = net.decoder_config();
  records.emplace_back("config.encoder.in_channels", Tensor({1}, {double(e.in_channels)}));
  records.emplace_back("config.encoder.stage_channels",
                       Tensor({4}, {double(e.stage_channels[0]), double(e.stage_channels[1]),
                                    double(e.stage_channels[2]), double(e.stage_channels[3])}));
  records.emplace_back("config.decoder.width", Tensor({1}, {double(d.width)}));
  records.emplace_back("config.decoder.use_skip", Tensor({1}, {d.use_skip ? 1.0 : 0.0}));
  for (const auto& p : net.parameters()) records.emplace_back(p.name, p.var.value());

  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.ndim()));
    for (std::size_t dim : t.shape()) w.u64(dim);
    for (double v : t.values()) w.f32(static_cast<float>(v));
  }
  detail::write_file_atomic(path, w.buffer().data(), w.buffer().size());
}

namespace {

std::map<std::string, Tensor> read_records(const std::string& path) {
  detail::ByteReader r(detail::read_file(path));
  if (r.str(4, "magic") != std::string_view(kCheckpointMagic, 4))
    throw FormatError("'" + path + "' is not an SMCK checkpoint", 0);
  const std::size_t at_version = r.offset();
  if (const std::uint32_t v = r.u32("version"); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v), at_version);
  const std::uint32_t count = r.u32("record count");
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::uint32_t len = r.u32("name length");
    std::string name = r.str(len, "record name");
    const std::uint8_t nd = r.u8("ndim");
    Shape shape(nd);
    for (auto& dim : shape) dim = r.u64("dimension");
    const std::size_t n = shape_numel(shape);
    r.need(n * 4, "record data");
    std::vector<double> v(n);
    for (auto& e : v) e = r.f32("record data");
    if (!out.emplace(std::move(name), Tensor(std::move(shape), std::move(v))).second)
      throw FormatError("duplicate checkpoint record", at);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last record", r.offset());
  return out;
}

int config_int(const std::map<std::string, Tensor>& rec, const std::string& name, std::size_t i = 0) {
  auto it = rec.find(name);
  if (it == rec.end() || it->second.numel() <= i)
    throw InputError("checkpoint lacks record '" + name + "'");
  return static_cast<int>(it->second[i]);
}

void assign(const std::map<std::string, Tensor>& rec, CorrespondenceNet& net) {
  for (const auto& p : net.parameters()) {
    auto it = rec.find(p.name);
    if (it == rec.end()) throw InputError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second.shape() != p.var.shape())
      throw InputError("checkpoint parameter '" + p.name + "' has shape " +
                       shape_string(it->second.shape()) + ", network expects " +
                       shape_string(p.var.shape()));
  }
  for (const auto& [name, t] : rec) {
    if (name.rfind("config.", 0) == 0) continue;
    bool known = false;
    for (const auto& p : net.parameters()) known = known || p.name == name;
    if (!known) throw InputError("checkpoint has unexpected parameter '" + name + "'");
  }
  for (const auto& p : std::vector<Parameter>(net.parameters()))
    net.set_parameter(p.name, rec.at(p.name));
}

}  // namespace

CorrespondenceNet load_checkpoint(const std::string& path) {
  const auto rec = read_records(path);
  EncoderConfig e;
  e.in_channels = config_int(rec, "config.encoder.in_channels");
  for (std::size_t i = 0; i < 4; ++i)
    e.stage_channels[i] = config_int(rec, "config.encoder.stage_channels", i);
  DecoderConfig d;
  d.width = config_int(rec, "config.decoder.width");
  d.use_skip = config_int(rec, "config.decoder.use_skip") != 0;
  CorrespondenceNet net(e, d);
  assign(rec, net);
  return net;
}

void load_parameters(const std::string& path, CorrespondenceNet& net) {
  assign(read_records(path), net);
}

}  // namespace smatch
