// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "binary_io.hpp"
#include "json.hpp"
#include "json_config.hpp"
#include "smatch/bench.hpp"
#include "smatch/datasets.hpp"
#include "smatch/errors.hpp"
#include "smatch/reports.hpp"
#include "smatch/rng.hpp"
#include "smatch/train.hpp"
#include "svg.hpp"

namespace smatch::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Seed streams derived from --seed.
enum Stream : std::uint64_t { data = 0, encoder = 1, decoder = 2, shuffle = 3, validation = 4, held_out = 5 };

struct Global {
  std::uint64_t seed = 0;
  std::string out = "out";
};

// Files are staged in memory and written together once the command has
// finished; a failure while writing removes whatever was already written.
class Outputs {
 public:
  explicit Outputs(std::string dir) : dir_(std::move(dir)) {}
  void text(const std::string& name, std::string content) {
    files_.emplace_back(name, [c = std::move(content)](const std::string& path) {
      detail::write_file_atomic(path, c);
    });
  }
  void custom(const std::string& name, std::function<void(const std::string&)> write) {
    files_.emplace_back(name, std::move(write));
  }
  void commit(std::ostream& err) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw InputError("cannot create output directory " + dir_ + ": " + ec.message());
    std::vector<std::string> written;
    try {
      for (const auto& [name, write] : files_) {
        const std::string path = (fs::path(dir_) / name).string();
        write(path);
        written.push_back(path);
      }
    } catch (...) {
      for (const auto& p : written) fs::remove(p, ec);
      throw;
    }
    for (const auto& p : written) err << "wrote " << p << "\n";
  }

 private:
  std::string dir_;
  std::vector<std::pair<std::string, std::function<void(const std::string&)>>> files_;
};

struct SynthOptions {
  std::size_t count = 256;
  std::size_t height = 64, width = 64;
  std::size_t keypoints = 8;
  double collision = 0.3;
  double noise = 0.05;

  SyntheticSpec spec(std::uint64_t seed) const {
    SyntheticSpec s;
    s.seed = seed;
    s.height = height;
    s.width = width;
    s.n_keypoints = keypoints;
    s.collision_rate = collision;
    s.noise_sigma = noise;
    s.validate();
    return s;
  }
};

void add_synth_options(CLI::App* cmd, SynthOptions& o) {
  cmd->add_option("--count", o.count, "synthetic pairs to generate")->check(CLI::PositiveNumber);
  cmd->add_option("--height", o.height, "synthetic image height, multiple of 16");
  cmd->add_option("--width", o.width, "synthetic image width, multiple of 16");
  cmd->add_option("--keypoints", o.keypoints, "keypoints per synthetic pair");
  cmd->add_option("--collision-rate", o.collision,
                  "fraction of keypoints sharing a stride-16 cell")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--noise", o.noise, "Gaussian noise sigma on the target image");
}

struct NetOptions {
  std::vector<int> enc_widths{16, 32, 64, 64};
  int dec_width = 32;
  bool skip = false;
  std::string dtype = "f32";

  CorrespondenceNet build(std::uint64_t seed) const {
    if (enc_widths.size() != 4) throw ContractError("--enc-widths takes exactly four values");
    EncoderConfig e;
    std::copy(enc_widths.begin(), enc_widths.end(), e.stage_channels.begin());
    e.seed = mix_seed(seed, Stream::encoder);
    DecoderConfig d;
    d.width = dec_width;
    d.use_skip = skip;
    d.seed = mix_seed(seed, Stream::decoder);
    return CorrespondenceNet(e, d, dtype == "f64" ? DType::f64 : DType::f32);
  }
};

void add_net_options(CLI::App* cmd, NetOptions& o) {
  cmd->add_option("--enc-widths", o.enc_widths, "channels of the four encoder stages")
      ->expected(4);
  cmd->add_option("--dec-width", o.dec_width, "decoder channel width")->check(CLI::PositiveNumber);
  cmd->add_flag("--skip", o.skip, "bridge encoder stages into the decoder with 1x1 projections");
  cmd->add_option("--dtype", o.dtype, "parameter and activation precision")
      ->check(CLI::IsMember({"f32", "f64"}));
}

struct MatchFlags {
  std::size_t k = kDefaultWindow;
  double tau = kDefaultTemperature;
  std::string mode = "sparse_plus_window";

  MatchOptions options() const {
    MatchOptions m;
    m.k = k;
    m.temperature = tau;
    m.mode = parse_mode(mode);
    return m;
  }
};

void add_match_options(CLI::App* cmd, MatchFlags& o, bool with_k = true) {
  if (with_k)
    cmd->add_option("--k", o.k, "odd soft-argmax window size (default 45 as published)")
        ->check(CLI::PositiveNumber);
  cmd->add_option("--tau", o.tau, "soft-argmax temperature (default 0.05, chosen here)");
  cmd->add_option("--mode", o.mode, "matching configuration")
      ->check(CLI::IsMember({"sparse_plus_window", "sparse_only", "dense_baseline"}));
}

std::vector<ImagePair> load_pairs(const std::string& dir, const SynthOptions& synth,
                                  std::uint64_t seed) {
  if (!dir.empty()) {
    auto pairs = read_image_dataset(dir);
    if (pairs.empty()) throw InputError(dir + " holds no pairs");
    return pairs;
  }
  return generate_image_dataset(synth.spec(seed), synth.count);
}

std::string point_text(const Point& p) { return format_number(p.x) + "," + format_number(p.y); }

void log_config(const CLI::App& app, std::ostream& err, Outputs& outs, const std::string& name) {
  const json resolved = JsonConfig::resolved(&app);
  err << "config " << resolved.dump() << "\n";
  outs.text(name + ".config.json", resolved.dump(2) + "\n");
}

// ---- train --------------------------------------------------------------------

struct Preset {
  double lr;
  std::size_t step;
  std::size_t epochs;
};

// desk is tuned on the synthetic task; the others are the published settings
// for the full benchmarks.
const std::map<std::string, Preset> kPresets = {
    {"desk", {2e-3, 100, 6}},
    {"spair", {6e-4, 800, 10}},
    {"ap10k", {6e-4, 2000, 10}},
    {"pfpascal", {1e-4, 200, 100}},
};

struct TrainFlags {
  std::string data, val_data;
  std::size_t val_count = 64;
  SynthOptions synth;
  NetOptions net;
  MatchFlags match;
  std::string preset = "desk";
  std::size_t epochs = 0, batch = 4, step = 0;
  double lr = 0.0, decay = 0.95;
  std::vector<int> loss_strides{16, 8, 4};
  CLI::Option *epochs_opt = nullptr, *step_opt = nullptr, *lr_opt = nullptr;
};

void setup_train(CLI::App& app, Global& g, TrainFlags& f, std::ostream& err) {
  CLI::App* cmd = app.add_subcommand("train", "train the encoder and decoder, write model.smck");
  cmd->add_option("--data", f.data, "image dataset directory (default: generate synthetic pairs)");
  cmd->add_option("--val-data", f.val_data, "validation dataset directory");
  cmd->add_option("--val-count", f.val_count, "synthetic validation pairs when --val-data is unset");
  add_synth_options(cmd, f.synth);
  add_net_options(cmd, f.net);
  add_match_options(cmd, f.match);
  cmd->add_option("--preset", f.preset, "learning rate, step size and epochs preset")
      ->check(CLI::IsMember({"desk", "spair", "ap10k", "pfpascal"}));
  f.epochs_opt = cmd->add_option("--epochs", f.epochs, "training epochs (preset)");
  cmd->add_option("--batch", f.batch, "pairs per optimizer step")->check(CLI::PositiveNumber);
  f.lr_opt = cmd->add_option("--lr", f.lr, "initial learning rate (preset)");
  f.step_opt = cmd->add_option("--step-size", f.step, "iterations per learning rate decay (preset)");
  cmd->add_option("--decay", f.decay, "step decay factor (default 0.95 as published)");
  cmd->add_option("--loss-strides", f.loss_strides,
                  "strides whose losses are summed; 4 alone disables the multi-scale loss")
      ->check(CLI::IsMember({4, 8, 16}));

  cmd->callback([&app, &g, &f, &err] {
    const Preset& p = kPresets.at(f.preset);
    auto fill = [](CLI::Option* opt, auto& var, auto value) {
      if (opt->count() > 0) return;
      var = value;
      if constexpr (std::is_floating_point_v<decltype(value)>)
        opt->default_str(format_number(value));
      else
        opt->default_str(std::to_string(value));
    };
    fill(f.epochs_opt, f.epochs, p.epochs);
    fill(f.lr_opt, f.lr, p.lr);
    fill(f.step_opt, f.step, p.step);

    Outputs outs(g.out);
    log_config(app, err, outs, "train");
    const auto pairs = load_pairs(f.data, f.synth, mix_seed(g.seed, Stream::data));
    std::vector<ImagePair> val;
    if (!f.val_data.empty()) {
      val = load_pairs(f.val_data, f.synth, 0);
    } else if (f.val_count > 0) {
      SynthOptions vs = f.synth;
      vs.count = f.val_count;
      val = load_pairs("", vs, mix_seed(g.seed, Stream::validation));
    }
    for (const auto& pr : pairs) pr.annotation.validate();

    CorrespondenceNet net = f.net.build(g.seed);
    TrainConfig cfg;
    cfg.epochs = f.epochs;
    cfg.batch = f.batch;
    cfg.schedule = {f.lr, f.step, f.decay};
    cfg.match = f.match.options();
    cfg.loss_strides = f.loss_strides;
    cfg.seed = mix_seed(g.seed, Stream::shuffle);

    std::string text, records;
    const auto logs = train(net, pairs, cfg, val.empty() ? nullptr : &val, [&](const EpochLog& l) {
      err << report_text(l, "epoch" + std::to_string(l.epoch));
    });
    for (const EpochLog& l : logs) {
      text += report_text(l, "epoch" + std::to_string(l.epoch));
      records += report_records(l);
    }
    outs.text("train_log.txt", text);
    outs.text("train_log.jsonl", records);
    outs.custom("model.smck", [&net](const std::string& path) { save_checkpoint(path, net); });
    outs.commit(err);
  });
}

// ---- match --------------------------------------------------------------------

struct MatchCmd {
  std::string checkpoint, data;
  SynthOptions synth;
  MatchFlags match;
  std::size_t pair = 0;
  int stride = 4;
  bool no_gt = false, no_svg = false;
};

void check_window_limit(std::size_t k, std::size_t height, std::size_t width, int stride) {
  const std::size_t limit = std::max(height, width) / std::size_t(stride);
  if (k > limit)
    throw ContractError("window k=" + std::to_string(k) + " exceeds the stride-" +
                        std::to_string(stride) + " feature map (limit k <= " +
                        std::to_string(limit) + ")");
}

void setup_match(CLI::App& app, Global& g, MatchCmd& f, std::ostream& err) {
  CLI::App* cmd = app.add_subcommand("match", "predict one pair and plot it as SVG");
  cmd->add_option("--checkpoint", f.checkpoint, "SMCK model")->required();
  cmd->add_option("--data", f.data, "image dataset directory (default: synthetic held-out pairs)");
  add_synth_options(cmd, f.synth);
  cmd->add_option("--pair", f.pair, "index of the pair to match");
  add_match_options(cmd, f.match);
  cmd->add_option("--stride", f.stride, "pyramid level to report")
      ->check(CLI::IsMember({4, 8, 16}));
  cmd->add_flag("--no-gt", f.no_gt, "ignore ground truth; lines are drawn in a neutral colour");
  cmd->add_flag("--no-svg", f.no_svg, "skip the plot");

  cmd->callback([&app, &g, &f, &err] {
    Outputs outs(g.out);
    log_config(app, err, outs, "match");
    const CorrespondenceNet net = load_checkpoint(f.checkpoint);
    SynthOptions s = f.synth;
    s.count = std::max(s.count, f.pair + 1);
    if (f.data.empty()) s.count = f.pair + 1;
    const auto pairs = load_pairs(f.data, s, mix_seed(g.seed, Stream::held_out));
    if (f.pair >= pairs.size())
      throw InputError("--pair " + std::to_string(f.pair) + " out of range, dataset holds " +
                       std::to_string(pairs.size()));
    const ImagePair& pair = pairs[f.pair];
    check_window_limit(f.match.k, pair.tgt.dim(1), pair.tgt.dim(2), f.stride);

    MatchOptions opt = f.match.options();
    opt.strides = {f.stride};
    ad::TapeScope off(false);
    const auto kps = predicted_keypoints(predict_pair(net, pair, opt), pair.annotation).at(f.stride);
    const PairAnnotation& ann = pair.annotation;
    const std::vector<PlotLine> lines = plot_lines(ann, kps, !f.no_gt);

    std::string text, records;
    const std::string scope = "match." + (ann.pair_id.empty() ? std::to_string(f.pair) : ann.pair_id);
    for (const PlotLine& line : lines) {
      json r;
      r["record"] = "match";
      r["pair"] = ann.pair_id;
      r["keypoint"] = line.keypoint;
      r["stride"] = f.stride;
      r["src"] = {line.src.x, line.src.y};
      r["pred"] = {line.pred.x, line.pred.y};
      const std::string key = scope + ".kp" + std::to_string(line.keypoint);
      text += key + ".src=" + point_text(line.src) + "\n" + key + ".pred=" + point_text(line.pred) + "\n";
      if (line.status != LineStatus::neutral) {
        const bool ok = line.status == LineStatus::correct;
        r["gt"] = {line.gt.x, line.gt.y};
        r["correct"] = ok;
        text += key + ".gt=" + point_text(line.gt) + "\n" + key + ".correct=" + (ok ? "1" : "0") + "\n";
      }
      records += r.dump() + "\n";
    }
    outs.text("match.txt", text);
    outs.text("match.jsonl", records);
    if (!f.no_svg) outs.text("match.svg", match_svg(pair.src, pair.tgt, lines));
    outs.commit(err);
  });
}

// ---- eval ---------------------------------------------------------------------

struct EvalCmd {
  std::string checkpoint, data;
  SynthOptions synth;
  MatchFlags match;
  std::vector<std::size_t> ks{kDefaultWindow};
  std::vector<double> alphas{0.05, 0.1, 0.15};
  std::string reference = "image";
  int stride = 4;
};

void setup_eval(CLI::App& app, Global& g, EvalCmd& f, std::ostream& out, std::ostream& err) {
  CLI::App* cmd = app.add_subcommand("eval", "PCK of a checkpoint over a window-size sweep");
  cmd->add_option("--checkpoint", f.checkpoint, "SMCK model")->required();
  cmd->add_option("--data", f.data, "image dataset directory (default: synthetic held-out pairs)");
  add_synth_options(cmd, f.synth);
  add_match_options(cmd, f.match, false);
  cmd->add_option("--k", f.ks, "window sizes to sweep, e.g. 9 15 30 45 60")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--alphas", f.alphas, "PCK thresholds")->check(CLI::PositiveNumber);
  cmd->add_option("--reference", f.reference, "PCK threshold reference size")
      ->check(CLI::IsMember({"image", "bbox"}));
  cmd->add_option("--stride", f.stride, "pyramid level to evaluate")
      ->check(CLI::IsMember({4, 8, 16}));

  cmd->callback([&app, &g, &f, &out, &err] {
    Outputs outs(g.out);
    log_config(app, err, outs, "eval");
    const CorrespondenceNet net = load_checkpoint(f.checkpoint);
    const auto pairs = load_pairs(f.data, f.synth, mix_seed(g.seed, Stream::held_out));
    const PckReference ref = parse_reference(f.reference);
    std::vector<KeypointSet> gt;
    std::vector<std::string> ids;
    std::map<std::string, std::vector<std::size_t>> by_category;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const PairAnnotation a = jointly_visible(pairs[i].annotation);
      gt.push_back(a.tgt);
      ids.push_back(a.pair_id);
      by_category[a.category.empty() ? "none" : a.category].push_back(i);
    }

    std::string text, records;
    std::ostringstream table;
    table << "k";
    for (double a : f.alphas) table << "\tPCK@" << format_number(a);
    table << "\n";
    for (std::size_t k : f.ks) {
      MatchOptions opt = f.match.options();
      opt.k = k;
      opt.strides = {f.stride};
      const auto pred = evaluate(net, pairs, opt).at(f.stride);
      table << k;
      for (double alpha : f.alphas) {
        const PckReport r = pck(pred, gt, alpha, ref);
        const std::string scope = "eval.k" + std::to_string(k) + ".alpha" + format_number(alpha);
        text += report_text(r, scope);
        json head;
        head["record"] = "pck_run";
        head["k"] = k;
        head["alpha"] = alpha;
        head["stride"] = f.stride;
        head["reference"] = f.reference;
        records += head.dump() + "\n" + report_records(r, ids);
        for (const auto& [cat, idx] : by_category) {
          std::vector<KeypointSet> p, t;
          for (std::size_t i : idx) p.push_back(pred[i]), t.push_back(gt[i]);
          const PckReport c = pck(p, t, alpha, ref);
          text += report_text(c, scope + ".category." + cat);
          json cr;
          cr["record"] = "pck_category";
          cr["k"] = k;
          cr["alpha"] = alpha;
          cr["category"] = cat;
          cr["correct"] = c.correct;
          cr["total"] = c.total;
          cr["aggregate"] = c.aggregate;
          records += cr.dump() + "\n";
        }
        char cell[32];
        std::snprintf(cell, sizeof cell, "\t%.4f", r.aggregate);
        table << cell;
      }
      table << "\n";
    }
    out << table.str();
    outs.text("eval.txt", text);
    outs.text("eval.jsonl", records);
    outs.text("eval_table.tsv", table.str());
    outs.commit(err);
  });
}

// ---- stats --------------------------------------------------------------------

struct StatsCmd {
  std::string annotations, benchmark, dialect = "spair", split = "test", images = "src";
  std::size_t sets = 250, set_height = 256, set_width = 256, keypoints = 8;
  double collision = 0.0;
  std::vector<std::size_t> input{256, 256};
  std::vector<std::size_t> features{16, 32, 64};
  bool search = false;
  std::vector<std::size_t> target;
};

// Keypoint sets of the chosen images: src, tgt, both per pair, or every
// distinct image once (by image name; the first occurrence wins).
std::vector<KeypointSet> select_images(const std::vector<PairAnnotation>& pairs,
                                       const std::string& mode) {
  std::vector<KeypointSet> sets;
  std::set<std::string> seen;
  for (const PairAnnotation& a : pairs) {
    if (mode == "src" || mode == "both") sets.push_back(a.src);
    if (mode == "tgt" || mode == "both") sets.push_back(a.tgt);
    if (mode == "unique") {
      if (a.src_image.empty() || a.tgt_image.empty())
        throw InputError("--images unique needs image names in the annotations");
      if (seen.insert(a.src_image).second) sets.push_back(a.src);
      if (seen.insert(a.tgt_image).second) sets.push_back(a.tgt);
    }
  }
  return sets;
}

std::uint64_t distance(const FusionReport& r, const std::vector<std::size_t>& target) {
  std::uint64_t d = 0;
  for (std::size_t i = 0; i < r.per_resolution.size(); ++i)
    d += std::uint64_t(std::abs(double(r.per_resolution[i].fused) - double(target[i])));
  if (!r.per_resolution.empty())
    d += std::uint64_t(std::abs(double(r.per_resolution[0].total) - double(target.back())));
  return d;
}

void setup_stats(CLI::App& app, Global& g, StatsCmd& f, std::ostream& out, std::ostream& err) {
  CLI::App* cmd = app.add_subcommand("stats", "keypoint fusion counts per feature resolution");
  cmd->add_option("--annotations", f.annotations, "annotation JSONL file");
  cmd->add_option("--benchmark", f.benchmark, "benchmark root directory");
  cmd->add_option("--dialect", f.dialect, "benchmark layout")->check(CLI::IsMember({"spair", "pfpascal"}));
  cmd->add_option("--split", f.split, "benchmark split")->check(CLI::IsMember({"trn", "val", "test"}));
  cmd->add_option("--images", f.images, "which images of each pair to count")
      ->check(CLI::IsMember({"src", "tgt", "both", "unique"}));
  cmd->add_option("--sets", f.sets, "synthetic keypoint sets when no annotations are given");
  cmd->add_option("--set-height", f.set_height, "synthetic set image height");
  cmd->add_option("--set-width", f.set_width, "synthetic set image width");
  cmd->add_option("--keypoints", f.keypoints, "keypoints per synthetic set");
  cmd->add_option("--collision-rate", f.collision, "synthetic collision rate")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--input", f.input, "H W every set is rescaled to")->expected(2);
  cmd->add_option("--feature-sizes", f.features, "square feature map sides")->check(CLI::PositiveNumber);
  cmd->add_flag("--search", f.search, "try every split and image selection of --benchmark");
  cmd->add_option("--target", f.target, "fused counts per feature size then the total, for --search");

  cmd->callback([&app, &g, &f, &out, &err] {
    Outputs outs(g.out);
    log_config(app, err, outs, "stats");
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    for (std::size_t s : f.features) sizes.emplace_back(s, s);
    const std::size_t H = f.input[0], W = f.input[1];

    std::string text, records;
    if (f.search) {
      if (f.benchmark.empty()) throw ContractError("--search needs --benchmark");
      if (f.target.size() != f.features.size() + 1)
        throw ContractError("--target needs one fused count per feature size plus the total");
      std::uint64_t best = ~std::uint64_t{0};
      std::string best_name;
      FusionReport best_report;
      for (const char* split : {"trn", "val", "test"}) {
        std::vector<PairAnnotation> pairs;
        try {
          LoadOptions lo;
          lo.split = parse_split(split);
          lo.input_height = H;
          lo.input_width = W;
          pairs = load_benchmark_pairs(f.benchmark, parse_dialect(f.dialect), lo);
        } catch (const InputError& e) {
          err << "skip split " << split << ": " << e.what() << "\n";
          continue;
        }
        for (const char* mode : {"src", "tgt", "both", "unique"}) {
          std::vector<KeypointSet> sets;
          try {
            sets = select_images(pairs, mode);
          } catch (const InputError&) {
            continue;
          }
          const FusionReport r = fusion_stats(sets, H, W, sizes);
          const std::string name = std::string("split=") + split + " images=" + mode;
          const std::uint64_t d = distance(r, f.target);
          text += report_text(r, std::string("stats.") + split + "." + mode);
          json rec;
          rec["record"] = "fusion_search";
          rec["split"] = split;
          rec["images"] = mode;
          rec["distance"] = d;
          records += rec.dump() + "\n" + report_records(r);
          if (d < best) best = d, best_name = name, best_report = r;
        }
      }
      if (best_name.empty()) throw InputError("no split of " + f.benchmark + " could be loaded");
      const std::string verdict = best == 0 ? "match " : "nearest ";
      out << verdict << best_name << "\n" << report_text(best_report);
      text += "stats.search." + std::string(best == 0 ? "match=" : "nearest=") + best_name + "\n";
      text += "stats.search.distance=" + std::to_string(best) + "\n";
    } else {
      std::vector<KeypointSet> sets;
      if (!f.annotations.empty()) {
        sets = select_images(read_annotations(f.annotations), f.images);
      } else if (!f.benchmark.empty()) {
        LoadOptions lo;
        lo.split = parse_split(f.split);
        lo.input_height = H;
        lo.input_width = W;
        sets = select_images(load_benchmark_pairs(f.benchmark, parse_dialect(f.dialect), lo), f.images);
      } else {
        SyntheticSpec spec;
        spec.height = f.set_height;
        spec.width = f.set_width;
        spec.n_keypoints = f.keypoints;
        spec.collision_rate = f.collision;
        spec.validate();
        for (std::size_t i = 0; i < f.sets; ++i) {
          Rng rng(mix_seed(g.seed, i));
          KeypointSet k;
          k.height = spec.height;
          k.width = spec.width;
          k.points = sample_keypoints(spec, rng);
          sets.push_back(std::move(k));
        }
      }
      const FusionReport r = fusion_stats(sets, H, W, sizes);
      text = report_text(r, "stats");
      records = report_records(r);
      out << text;
    }
    outs.text("stats.txt", text);
    outs.text("stats.jsonl", records);
    outs.commit(err);
  });
}

// ---- bench --------------------------------------------------------------------

struct BenchCmd {
  BenchWorkload w;
  std::size_t image = 256;
  std::vector<int> enc_widths{8, 16, 32, 32};
};

void setup_bench(CLI::App& app, Global& g, BenchCmd& f, std::ostream& out, std::ostream& err) {
  CLI::App* cmd = app.add_subcommand("bench", "tape elements and peak heap of the three configurations");
  cmd->add_option("--label", f.w.label, "workload label");
  cmd->add_option("--image-size", f.image, "square image side (multiple of 16)");
  cmd->add_option("--keypoints", f.w.data.n_keypoints, "keypoints n");
  cmd->add_option("--k", f.w.k, "window size (default 45 as published)")->check(CLI::PositiveNumber);
  cmd->add_option("--tau", f.w.temperature, "soft-argmax temperature");
  cmd->add_option("--budget", f.w.dense_element_budget, "largest dense correlation, in elements");
  cmd->add_option("--enc-widths", f.enc_widths, "channels of the four encoder stages")->expected(4);
  cmd->add_option("--dec-width", f.w.decoder.width, "decoder channel width");

  cmd->callback([&app, &g, &f, &out, &err] {
    Outputs outs(g.out);
    log_config(app, err, outs, "bench");
    BenchWorkload w = f.w;
    w.data.seed = g.seed;
    w.data.height = w.data.width = f.image;
    std::copy(f.enc_widths.begin(), f.enc_widths.end(), w.encoder.stage_channels.begin());
    w.encoder.seed = mix_seed(g.seed, Stream::encoder);
    w.decoder.seed = mix_seed(g.seed, Stream::decoder);
    std::vector<MemoryReport> rows;
    for (MatchMode m : {MatchMode::dense_baseline, MatchMode::sparse_only, MatchMode::sparse_plus_window})
      rows.push_back(measure(m, w));
    std::string text, records;
    for (const MemoryReport& r : rows) {
      text += report_text(r, std::string("bench.") + mode_name(r.mode));
      records += report_records(r);
    }
    const std::string table = memory_table(rows);
    text += "bench.ratio.peak_bytes=" + format_number(reduction_ratio(rows[0], rows[2])) + "\n";
    text += "bench.ratio.tape_elements=" + format_number(element_reduction(rows[0], rows[2])) + "\n";
    out << table;
    outs.text("bench.txt", text);
    outs.text("bench.jsonl", records);
    outs.text("bench_table.txt", table);
    outs.commit(err);
  });
}

// ---- synth --------------------------------------------------------------------

void setup_synth(CLI::App& app, Global& g, SynthOptions& f, std::ostream& err) {
  CLI::App* cmd = app.add_subcommand("synth", "write a synthetic image dataset to --out");
  add_synth_options(cmd, f);
  cmd->callback([&app, &g, &f, &err] {
    Outputs outs(g.out);
    log_config(app, err, outs, "synth");
    const auto pairs = load_pairs("", f, mix_seed(g.seed, Stream::data));
    outs.custom("annotations.jsonl",
                [&pairs](const std::string& path) {
                  write_image_dataset(fs::path(path).parent_path().string(), pairs);
                });
    outs.commit(err);
  });
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const FormatError*>(&e)) return 4;
  if (dynamic_cast<const InputError*>(&e)) return 3;
  if (dynamic_cast<const ContractError*>(&e) || dynamic_cast<const DimensionError*>(&e)) return 5;
  if (dynamic_cast<const ResourceError*>(&e)) return 6;
  return 1;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Sparse keypoint correspondence: training, matching, evaluation and memory bench",
               "smatch");
  app.option_defaults()->always_capture_default();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file of flag values; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  Global g;
  app.add_option("--seed", g.seed, "seed for data, initialisation and shuffling");
  app.add_option("--out", g.out, "output directory");

  TrainFlags train_flags;
  MatchCmd match_flags;
  EvalCmd eval_flags;
  StatsCmd stats_flags;
  BenchCmd bench_flags;
  SynthOptions synth_flags;
  synth_flags.count = 64;
  setup_train(app, g, train_flags, err);
  setup_match(app, g, match_flags, err);
  setup_eval(app, g, eval_flags, out, err);
  setup_stats(app, g, stats_flags, out, err);
  setup_bench(app, g, bench_flags, out, err);
  setup_synth(app, g, synth_flags, err);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  }
  return 0;
}

}  // namespace smatch::cli
