// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "smatch/keypoints.hpp"
#include "smatch/net.hpp"
#include "smatch/tensor.hpp"

namespace smatch {

// ---- SMTF tensor files ----------------------------------------------------
// "SMTF", u32 version 1, u8 dtype (1 f32, 2 f64), u8 ndim, ndim x u64 dims,
// then the elements, all little-endian.
std::vector<unsigned char> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::vector<unsigned char> bytes);
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

// ---- annotations ------------------------------------------------------------
struct PairAnnotation {
  KeypointSet src, tgt;
  std::string category;
  std::string pair_id;
  std::string src_image, tgt_image;  // optional paths, relative to the record file

  // Throws InputError when counts or visibility masks disagree.
  void validate() const;
};

// Keeps only keypoints visible in both images: clears the rest in both masks.
PairAnnotation jointly_visible(const PairAnnotation& a);

// One JSON object per line:
//   {"pair_id":..., "category":..., "src":{...}, "tgt":{...}}
// where each side is {"size":[H,W], "keypoints":[[x,y],...], "visible":[0|1,...],
// "bbox":[x0,y0,x1,y1], "image":path}; visible, bbox and image are optional.
std::string annotation_to_json(const PairAnnotation& a);
PairAnnotation annotation_from_json(const std::string& line);
void write_annotations(const std::string& path, const std::vector<PairAnnotation>& pairs);
std::vector<PairAnnotation> read_annotations(const std::string& path);

// ---- synthetic correspondence pairs -------------------------------------------
struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t height = 64, width = 64;
  std::size_t n_keypoints = 8;
  // Fraction of keypoints planted so that they share a stride-16 cell with
  // another keypoint of the same image.
  double collision_rate = 0.0;
  std::size_t descriptor_dim = 16;
  double noise_sigma = 0.05;

  void validate() const;
};

// Feature pyramids (stride 4 planted, strides 8 and 16 by average pooling).
struct FeaturePair {
  FeaturePyramid src, tgt;
  PairAnnotation annotation;
  std::vector<std::size_t> planted_cells;  // stride-4 target cell y*w + x per keypoint
};

struct ImagePair {
  Tensor src, tgt;  // [3, H, W] float32
  PairAnnotation annotation;
};

// Source keypoints at distinct stride-4 cells; round(collision_rate * n)
// of them (at least two when nonzero) are grouped in pairs, plus one triple
// for an odd count, inside shared stride-16 cells. Throws InputError when the
// grouping cannot be placed.
std::vector<Point> sample_keypoints(const SyntheticSpec& spec, Rng& rng);

// Each source keypoint's descriptor is planted at a distinct target cell and
// is checked to be that cell's unique cosine nearest neighbour over the whole
// stride-4 target map.
FeaturePair generate_feature_pair(const SyntheticSpec& spec);

// The target image is a circular shift of a periodic random texture plus
// Gaussian noise; ground truth follows the shift.
ImagePair generate_image_pair(const SyntheticSpec& spec);
// Pair i is generated from seed mix_seed(spec.seed, i).
std::vector<ImagePair> generate_image_dataset(const SyntheticSpec& spec, std::size_t count);

// Writes images as SMTF files next to an annotations.jsonl that references them.
void write_image_dataset(const std::string& dir, const std::vector<ImagePair>& pairs);
std::vector<ImagePair> read_image_dataset(const std::string& dir);

// ---- external benchmark annotations -------------------------------------------
enum class Dialect { spair, pfpascal };
enum class Split { trn, val, test };
Dialect parse_dialect(const std::string& name);
Split parse_split(const std::string& name);
const char* split_name(Split s);

struct LoadOptions {
  Split split = Split::test;
  std::size_t input_height = 256, input_width = 256;  // 0 keeps native size
};

// spair:    <root>/PairAnnotation/<split>/*.json with src_kps/trg_kps,
//           src_bndbox/trg_bndbox, src_imsize/trg_imsize ([W,H,C]), category.
// pfpascal: <root>/<split>_pairs.csv with columns source_image, target_image,
//           class, XA, YA, XB, YB (';'-separated coordinates); image sizes are
//           read from the JPEG headers under <root>.
// Any missing or malformed file throws InputError naming it.
std::vector<PairAnnotation> load_benchmark_pairs(const std::string& root, Dialect dialect,
                                                 const LoadOptions& opt = {});

// Width and height from a baseline or progressive JPEG's frame header.
std::pair<std::size_t, std::size_t> jpeg_size(const std::string& path);

}  // namespace smatch
