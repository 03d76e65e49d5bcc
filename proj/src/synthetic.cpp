// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "binary_io.hpp"
#include "smatch/datasets.hpp"
#include "smatch/errors.hpp"

namespace smatch {
namespace {

// Texture components per channel; frequencies up to width/8 cycles.
constexpr int kTextureTerms = 48;

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

Tensor average_pool(const Tensor& x, std::size_t f) {
  const std::size_t C = x.dim(0), h = x.dim(1) / f, w = x.dim(2) / f;
  std::vector<double> out(C * h * w, 0.0);
  const double inv = 1.0 / double(f * f);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < f; ++dy)
          for (std::size_t dx = 0; dx < f; ++dx) s += x.at({c, y * f + dy, xx * f + dx});
        out[(c * h + y) * w + xx] = s * inv;
      }
  return Tensor({C, h, w}, std::move(out), x.dtype());
}

double cosine_at(const std::vector<double>& a, const std::vector<double>& map, std::size_t D,
                 std::size_t cells, std::size_t j) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t c = 0; c < D; ++c) {
    const double b = map[c * cells + j];
    ab += a[c] * b;
    aa += a[c] * a[c];
    bb += b * b;
  }
  return (aa == 0 || bb == 0) ? 0.0 : ab / std::sqrt(aa * bb);
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_keypoints < 1) throw InputError("synthetic spec needs at least one keypoint");
  if (height == 0 || width == 0 || height % 16 || width % 16)
    throw InputError("synthetic image size " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not a positive multiple of 16");
  if (!(collision_rate >= 0 && collision_rate <= 1)) throw InputError("collision_rate must lie in [0, 1]");
  if (descriptor_dim < 1) throw InputError("descriptor_dim must be >= 1");
  if (!(noise_sigma >= 0)) throw InputError("noise_sigma must be >= 0");
}

std::vector<Point> sample_keypoints(const SyntheticSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t n = spec.n_keypoints;
  std::size_t colliding = static_cast<std::size_t>(std::lround(spec.collision_rate * double(n)));
  if (colliding == 1) {
    if (n < 2) throw InputError("collision_rate " + std::to_string(spec.collision_rate) +
                                " needs at least two keypoints");
    colliding = 2;
  }
  std::vector<std::size_t> groups;
  if (colliding >= 2) {
    groups.assign(colliding / 2, 2);
    if (colliding % 2) groups.back() = 3;
  }
  for (std::size_t i = colliding; i < n; ++i) groups.push_back(1);

  const std::size_t h16 = spec.height / 16, w16 = spec.width / 16;
  if (groups.size() > h16 * w16)
    throw InputError("collision_rate " + std::to_string(spec.collision_rate) + " with " +
                     std::to_string(n) + " keypoints needs " + std::to_string(groups.size()) +
                     " stride-16 cells, the image has " + std::to_string(h16 * w16));
  std::vector<std::size_t> cells = iota(h16 * w16);
  shuffle(cells, rng);
  std::vector<Point> pts;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t cx = cells[g] % w16, cy = cells[g] / w16;
    std::vector<std::size_t> sub = iota(16);
    shuffle(sub, rng);
    for (std::size_t m = 0; m < groups[g]; ++m) {
      const double x = double(cx * 16 + (sub[m] % 4) * 4) + rng.uniform(0.0, 4.0);
      const double y = double(cy * 16 + (sub[m] / 4) * 4) + rng.uniform(0.0, 4.0);
      pts.push_back({std::min(x, double(spec.width) - 1e-6), std::min(y, double(spec.height) - 1e-6)});
    }
  }
  std::vector<std::size_t> order = iota(pts.size());
  shuffle(order, rng);
  std::vector<Point> out;
  for (std::size_t i : order) out.push_back(pts[i]);
  return out;
}

FeaturePair generate_feature_pair(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x46454154));
  const std::size_t h = spec.height / 4, w = spec.width / 4, M = h * w, D = spec.descriptor_dim;
  const std::vector<Point> kps = sample_keypoints(spec, rng);
  const std::size_t n = kps.size();
  if (n > M) throw InputError("more keypoints than stride-4 target cells");

  std::vector<std::size_t> planted = iota(M);
  shuffle(planted, rng);
  planted.resize(n);

  std::vector<double> src(D * M), tgt(D * M);
  for (double& v : src) v = rng.normal();
  for (double& v : tgt) v = rng.normal();
  std::vector<std::size_t> src_cell(n);
  for (std::size_t i = 0; i < n; ++i)
    src_cell[i] = std::size_t(kps[i].y / 4) * w + std::size_t(kps[i].x / 4);

  auto plant = [&](std::size_t i) {
    for (std::size_t c = 0; c < D; ++c) {
      const double d = rng.normal();
      tgt[c * M + planted[i]] = d;
      src[c * M + src_cell[i]] = d + spec.noise_sigma * rng.normal();
    }
  };
  for (std::size_t i = 0; i < n; ++i) plant(i);

  // Re-draw descriptors until every planted cell is the strict nearest neighbour.
  for (int attempt = 0;; ++attempt) {
    std::size_t failed = n;
    for (std::size_t i = 0; i < n && failed == n; ++i) {
      std::vector<double> a(D);
      for (std::size_t c = 0; c < D; ++c) a[c] = src[c * M + src_cell[i]];
      const double mine = cosine_at(a, tgt, D, M, planted[i]);
      for (std::size_t j = 0; j < M; ++j)
        if (j != planted[i] && cosine_at(a, tgt, D, M, j) >= mine) {
          failed = i;
          break;
        }
    }
    if (failed == n) break;
    if (attempt == 1000)
      throw InputError("noise_sigma " + std::to_string(spec.noise_sigma) +
                       " is too large to plant unique nearest neighbours");
    plant(failed);
  }

  FeaturePair out;
  const Tensor s4({D, h, w}, std::move(src)), t4({D, h, w}, std::move(tgt));
  for (auto* p : {&out.src, &out.tgt}) {
    const Tensor& base = p == &out.src ? s4 : t4;
    p->height = spec.height;
    p->width = spec.width;
    p->by_stride[4] = ad::Var::constant(base);
    p->by_stride[8] = ad::Var::constant(average_pool(base, 2));
    p->by_stride[16] = ad::Var::constant(average_pool(base, 4));
  }
  auto& a = out.annotation;
  a.pair_id = "feat-" + std::to_string(spec.seed);
  a.category = "synthetic";
  a.src.height = a.tgt.height = spec.height;
  a.src.width = a.tgt.width = spec.width;
  a.src.points = kps;
  for (std::size_t i = 0; i < n; ++i)
    a.tgt.points.push_back({double(planted[i] % w) * 4 + 2, double(planted[i] / w) * 4 + 2});
  out.planted_cells = std::move(planted);
  return out;
}

ImagePair generate_image_pair(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x494D4147));
  const std::size_t H = spec.height, W = spec.width;
  const std::vector<Point> kps = sample_keypoints(spec, rng);

  const int fmax_x = std::max<int>(2, int(W / 16)), fmax_y = std::max<int>(2, int(H / 16));
  std::vector<double> img(3 * H * W, 0.0);
  const double amp = 0.25 / std::sqrt(double(kTextureTerms) / 2.0);
  for (std::size_t c = 0; c < 3; ++c) {
    for (int t = 0; t < kTextureTerms; ++t) {
      int fx = 0, fy = 0;
      while (fx == 0 && fy == 0) {
        fx = int(rng.below(std::uint64_t(2 * fmax_x + 1))) - fmax_x;
        fy = int(rng.below(std::uint64_t(2 * fmax_y + 1))) - fmax_y;
      }
      const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
      const double a = amp * rng.uniform(0.5, 1.5);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          img[(c * H + y) * W + x] +=
              a * std::cos(2 * std::numbers::pi * (fx * double(x) / double(W) + fy * double(y) / double(H)) + phase);
    }
  }

  const auto dx = std::ptrdiff_t(rng.below(W / 2 + 1)) - std::ptrdiff_t(W / 4);
  const auto dy = std::ptrdiff_t(rng.below(H / 2 + 1)) - std::ptrdiff_t(H / 4);
  auto wrap = [](std::ptrdiff_t v, std::size_t n) { return std::size_t(((v % std::ptrdiff_t(n)) + std::ptrdiff_t(n)) % std::ptrdiff_t(n)); };
  std::vector<double> tgt(img.size());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        tgt[(c * H + y) * W + x] =
            img[(c * H + wrap(std::ptrdiff_t(y) - dy, H)) * W + wrap(std::ptrdiff_t(x) - dx, W)] +
            spec.noise_sigma * rng.normal();

  ImagePair out{Tensor({3, H, W}, std::move(img), DType::f32), Tensor({3, H, W}, std::move(tgt), DType::f32), {}};
  auto& a = out.annotation;
  a.pair_id = "img-" + std::to_string(spec.seed);
  a.category = "synthetic";
  a.src.height = a.tgt.height = H;
  a.src.width = a.tgt.width = W;
  a.src.points = kps;
  for (const Point& p : kps) {
    double x = p.x + double(dx), y = p.y + double(dy);
    x -= std::floor(x / double(W)) * double(W);
    y -= std::floor(y / double(H)) * double(H);
    a.tgt.points.push_back({x, y});
  }
  return out;
}

std::vector<ImagePair> generate_image_dataset(const SyntheticSpec& spec, std::size_t count) {
  std::vector<ImagePair> out;
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticSpec s = spec;
    s.seed = mix_seed(spec.seed, i);
    out.push_back(generate_image_pair(s));
    out.back().annotation.pair_id = "pair-" + std::to_string(i);
  }
  return out;
}

void write_image_dataset(const std::string& dir, const std::vector<ImagePair>& pairs) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create '" + dir + "': " + ec.message());
  std::vector<PairAnnotation> ann;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    PairAnnotation a = pairs[i].annotation;
    char name[32];
    std::snprintf(name, sizeof name, "pair_%05zu", i);
    a.src_image = std::string(name) + "_src.smtf";
    a.tgt_image = std::string(name) + "_tgt.smtf";
    write_tensor((std::filesystem::path(dir) / a.src_image).string(), pairs[i].src);
    write_tensor((std::filesystem::path(dir) / a.tgt_image).string(), pairs[i].tgt);
    ann.push_back(std::move(a));
  }
  write_annotations((std::filesystem::path(dir) / "annotations.jsonl").string(), ann);
}

std::vector<ImagePair> read_image_dataset(const std::string& dir) {
  const auto root = std::filesystem::path(dir);
  std::vector<ImagePair> out;
  for (PairAnnotation& a : read_annotations((root / "annotations.jsonl").string())) {
    if (a.src_image.empty() || a.tgt_image.empty())
      throw InputError("pair '" + a.pair_id + "' in " + dir + " has no image paths");
    ImagePair p;
    try {
      p.src = read_tensor((root / a.src_image).string());
      p.tgt = read_tensor((root / a.tgt_image).string());
    } catch (const FormatError& e) {
      throw InputError("unreadable image of pair '" + a.pair_id + "' in " + dir + ": " + e.what());
    }
    for (const Tensor* t : {&p.src, &p.tgt})
      if (t->ndim() != 3 || t->dim(1) != a.src.height || t->dim(2) != a.src.width)
        throw InputError("image of pair '" + a.pair_id + "' has shape " + shape_string(t->shape()) +
                         ", annotation says " + std::to_string(a.src.height) + "x" + std::to_string(a.src.width));
    p.annotation = std::move(a);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace smatch
