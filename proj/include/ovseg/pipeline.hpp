#pragma once

// End-to-end commands behind the command-line tool. Each command validates
// its configuration, runs, and writes its outputs into `out_dir`.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovseg/classifier.hpp"
#include "ovseg/features.hpp"
#include "ovseg/interpolate.hpp"
#include "ovseg/metrics.hpp"
#include "ovseg/testkit.hpp"
#include "ovseg/tilted.hpp"
#include "ovseg/volume_io.hpp"

namespace ovseg {

struct PipelineConfig {
  std::vector<std::filesystem::path> inputs;
  std::filesystem::path gt;
  std::filesystem::path model;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
  std::string variant = "default";
  int max_gap = 1;
  std::size_t n_projections = 50;
  std::optional<double> threshold;  ///< overrides the model's threshold
  bool tilted = false;
  bool dry_run = false;
  std::size_t min_contact = 10;
  double reslice_spacing = 1.0;
  std::size_t threads = 0;  ///< 0 = hardware concurrency

  // train
  std::size_t true_per_volume = 20;
  int max_epochs = 100;

  // synth
  std::size_t synth_cells = 40;
  std::vector<std::size_t> synth_dims{24, 48, 48};
  std::vector<double> synth_anisotropy{4.0, 1.0, 1.0};
  std::size_t synth_gaps = 20;

  FeatureConfig features() const {
    FeatureConfig f;
    f.max_gap = max_gap;
    f.variant = parse_variant(variant);
    f.ot.n_projections = n_projections;
    return f;
  }
};

/// Stage progress and timing; informational only, never part of an output file.
class StageLog {
 public:
  explicit StageLog(std::ostream* os) : os_(os) {}

  template <class F>
  auto run(const std::string& stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<std::invoke_result_t<F>>) {
      f();
      report(stage, t0);
    } else {
      auto r = f();
      report(stage, t0);
      return r;
    }
  }

  void note(const std::string& msg) const {
    if (os_) *os_ << "[ovseg] " << msg << '\n';
  }

 private:
  void report(const std::string& stage, std::chrono::steady_clock::time_point t0) const {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (os_) *os_ << "[ovseg] " << stage << ": " << s << " s\n";
  }
  std::ostream* os_;
};

namespace pipeline {

enum class Command { Screen, Train, Correct, Evaluate, Synth };

inline void require_file(const std::filesystem::path& p, const std::string& what) {
  if (p.empty()) throw InvalidArgument(what + " is required");
  if (!std::filesystem::is_regular_file(p)) throw InvalidArgument(what + " not found: " + p.string());
}

/// A raw volume may be named by either half; both must exist.
inline void require_volume(const std::filesystem::path& p, const std::string& what) {
  if (p.empty()) throw InvalidArgument(what + " is required");
  if (io::resolve_format(p, VolumeFormat::Auto) == VolumeFormat::Tiff) return require_file(p, what);
  const auto [lbl, json] = io::raw_pair(p);
  require_file(lbl, what);
  require_file(json, what);
}

/// Checks everything that can be checked before any work starts.
inline void validate(const PipelineConfig& c, Command cmd) {
  if (!c.seed) throw InvalidArgument("--seed is required");
  if (c.out_dir.empty()) throw InvalidArgument("--out is required");
  parse_variant(c.variant);
  if (c.max_gap < 0) throw InvalidArgument("--max-gap must be >= 0");
  if (c.n_projections == 0) throw InvalidArgument("--projections must be positive");
  if (c.threshold && !(*c.threshold > 0.0 && *c.threshold < 1.0)) throw InvalidArgument("--threshold must lie in (0, 1)");
  if (!(c.reslice_spacing > 0.0)) throw InvalidArgument("reslice spacing must be positive");
  switch (cmd) {
    case Command::Synth:
      if (c.synth_dims.size() != 3 || c.synth_anisotropy.size() != 3)
        throw InvalidArgument("synth dims and anisotropy need three values");
      if (c.synth_cells == 0) throw InvalidArgument("synth needs at least one cell");
      break;
    case Command::Train:
      if (c.inputs.empty()) throw InvalidArgument("--input is required");
      for (const auto& p : c.inputs) {
        if (p.extension() == ".csv") require_file(p, "input");
        else require_volume(p, "input");
      }
      if (c.max_epochs <= 0) throw InvalidArgument("epochs must be positive");
      break;
    case Command::Correct:
      require_file(c.model, "model");
      [[fallthrough]];
    case Command::Screen:
      if (c.inputs.size() != 1) throw InvalidArgument("exactly one --input volume is required");
      require_volume(c.inputs.front(), "input");
      break;
    case Command::Evaluate:
      if (c.inputs.size() != 1) throw InvalidArgument("exactly one --input volume is required");
      require_volume(c.inputs.front(), "input");
      require_volume(c.gt, "ground truth");
      if (!c.model.empty()) require_file(c.model, "model");
      break;
  }
  std::filesystem::create_directories(c.out_dir);
}

inline std::size_t worker_count(const PipelineConfig& c, std::size_t jobs) {
  std::size_t n = c.threads ? c.threads : std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(n, jobs));
}

/// Feature vectors for every pair, computed on a worker pool. Results are
/// indexed by pair, so the output does not depend on scheduling.
inline std::vector<std::vector<double>> extract_features(const CellIndex& index, const std::vector<CandidatePair>& pairs,
                                                         const FeatureConfig& cfg, const ShapeNormalizer& norm,
                                                         std::size_t workers) {
  std::vector<std::vector<double>> out(pairs.size());
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          FeatureExtractor fx(index, cfg, norm);
          for (std::size_t i = w; i < pairs.size(); i += workers) out[i] = fx.vector(pairs[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline LabelVolume load_input(const std::filesystem::path& p) { return load_volume(p); }

inline std::string write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  io::write_text(p, text);
  return text;
}

/// Output volume path next to the other outputs, keeping the input's format.
inline std::filesystem::path volume_out(const PipelineConfig& c, const std::string& name) {
  const bool tiff = io::resolve_format(c.inputs.empty() ? "" : c.inputs.front(), VolumeFormat::Auto) == VolumeFormat::Tiff;
  return c.out_dir / (name + (tiff ? ".tif" : ".lbl"));
}

inline std::string candidates_csv(const std::vector<CandidatePair>& pairs) {
  std::ostringstream os;
  os << "label_a,label_b,gap_first,gap_size,contact_a_pixels,contact_b_pixels,overlap_pixels\n";
  for (const auto& p : pairs)
    os << p.label_a << ',' << p.label_b << ',' << p.gap_first << ',' << p.gap_size << ',' << p.contact_a.size() << ','
       << p.contact_b.size() << ',' << mask_overlap(p.contact_a, p.contact_b) << '\n';
  return os.str();
}

inline std::vector<CandidatePair> cmd_screen(const PipelineConfig& c, const StageLog& log = StageLog(nullptr)) {
  validate(c, Command::Screen);
  StageLog lg = log;
  const LabelVolume v = lg.run("load", [&] { return load_input(c.inputs.front()); });
  const CellIndex index = lg.run("index", [&] { return build_cell_index(v); });
  auto pairs = lg.run("screen", [&] { return screen_candidates(index, c.features()); });
  io::write_text(c.out_dir / "candidates.csv", candidates_csv(pairs));
  lg.note(std::to_string(pairs.size()) + " candidate pairs");
  return pairs;
}

/// Numeric table: one example per row, label (0/1) in the last column. A
/// first line that does not parse as numbers is taken as a header.
inline TrainingSet read_feature_table(const std::filesystem::path& p, FeatureVariant variant) {
  std::istringstream is(io::read_text(p));
  TrainingSet set;
  set.variant = variant;
  set.shape_features = false;
  std::string line;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ls(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (row == 1) continue;
      throw FormatError(p.string() + ": row " + std::to_string(row) + " is not numeric");
    }
    if (vals.size() < 2) throw FormatError(p.string() + ": row " + std::to_string(row) + " needs features and a label");
    TrainingExample e;
    e.label = int(vals.back());
    if (vals.back() != 0.0 && vals.back() != 1.0) throw InvalidArgument("labels must be 0 or 1");
    vals.pop_back();
    e.features = std::move(vals);
    e.volume_id = p.filename().string();
    set.examples.push_back(std::move(e));
  }
  return set;
}

inline TrainResult cmd_train(const PipelineConfig& c, const StageLog& log = StageLog(nullptr)) {
  validate(c, Command::Train);
  StageLog lg = log;
  const FeatureConfig fc = c.features();
  TrainingSet set;
  const bool table = c.inputs.size() == 1 && c.inputs.front().extension() == ".csv";
  if (table) {
    set = lg.run("read", [&] { return read_feature_table(c.inputs.front(), fc.variant); });
  } else {
    std::vector<NamedVolume> vols;
    lg.run("load", [&] {
      for (const auto& p : c.inputs) vols.push_back({p.stem().string(), load_input(p)});
    });
    SynthesisConfig sc;
    sc.true_per_volume = c.true_per_volume;
    sc.features = fc;
    set = lg.run("synthesize", [&] { return synthesize_training_set(vols, sc, *c.seed); });
  }
  Hyperparams h;
  h.max_epochs = c.max_epochs;
  if (c.threshold) h.threshold = *c.threshold;
  TrainResult r = lg.run("train", [&] { return train(set, h, *c.seed); });
  save_model(r.model, c.out_dir / "model.json");
  write_json(c.out_dir / "training_report.json", r.report.to_json());
  lg.note(std::to_string(set.examples.size()) + " examples, validation accuracy " +
          std::to_string(r.report.val_accuracy));
  return r;
}

/// Keeps at most one merge per fragment side: each label may absorb one
/// lower partner and join one upper partner. Higher probability wins, then
/// the smaller pair. Returns indices of merges turned into keeps.
inline std::vector<std::size_t> resolve_claims(std::vector<CorrectionDecision>& ds) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds[i].verdict == Verdict::Merge) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return std::tie(ds[y].probability, ds[x].label_a, ds[x].label_b) <
           std::tie(ds[x].probability, ds[y].label_a, ds[y].label_b);
  });
  std::set<Label> has_lower, has_upper;
  std::vector<std::size_t> demoted;
  for (std::size_t i : order) {
    auto& d = ds[i];
    if (has_lower.contains(d.label_a) || has_upper.contains(d.label_b)) {
      d.verdict = Verdict::Keep;
      d.masks.clear();
      d.fallback.clear();
      demoted.push_back(i);
      continue;
    }
    has_lower.insert(d.label_a);
    has_upper.insert(d.label_b);
  }
  std::sort(demoted.begin(), demoted.end());
  return demoted;
}

/// Maps a screened pair (and its feature vector, when requested) to a verdict.
using PairDecider = std::function<Prediction(const CandidatePair&, const std::vector<double>&)>;

struct AxisDecisions {
  std::vector<CorrectionDecision> decisions;
  std::vector<std::size_t> demoted;  ///< merges dropped by resolve_claims
};

/// Screen, featurize, decide and interpolate along z. With `with_features`
/// false the decider receives empty feature vectors.
inline AxisDecisions axis_decisions(const LabelVolume& v, const FeatureConfig& fc, const ShapeNormalizer& norm,
                                    const PairDecider& decide, std::size_t workers, StageLog* log = nullptr,
                                    bool with_features = true) {
  StageLog quiet(nullptr);
  StageLog& lg = log ? *log : quiet;
  const CellIndex index = lg.run("index", [&] { return build_cell_index(v); });
  const auto pairs = lg.run("screen", [&] { return screen_candidates(index, fc); });
  std::vector<std::vector<double>> feats(pairs.size());
  if (with_features) {
    feats = lg.run("features", [&] {
      return extract_features(index, pairs, fc, norm, std::max<std::size_t>(1, std::min(workers, pairs.size())));
    });
  }
  AxisDecisions out;
  lg.run("classify", [&] {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const Prediction p = decide(pairs[i], feats[i]);
      out.decisions.push_back(make_decision(index, pairs[i], p.decision ? Verdict::Merge : Verdict::Keep, p.probability));
    }
  });
  out.demoted = resolve_claims(out.decisions);
  return out;
}

struct CorrectOutcome {
  std::vector<CorrectionDecision> decisions;
  std::optional<CorrectionResult> result;  ///< empty on a dry run
};

inline nlohmann::json decisions_json(const std::vector<CorrectionDecision>& ds, const std::vector<std::size_t>& demoted,
                                     const nlohmann::json& extra) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& d = ds[i];
    arr.push_back({{"label_a", d.label_a},
                   {"label_b", d.label_b},
                   {"verdict", to_string(d.verdict)},
                   {"probability", d.probability},
                   {"gap_layers", d.gap_layers()},
                   {"fallback", d.fallback},
                   {"claim_conflict", std::binary_search(demoted.begin(), demoted.end(), i)}});
  }
  nlohmann::json j = extra;
  j["decisions"] = arr;
  return j;
}

inline CorrectOutcome cmd_correct(const PipelineConfig& c, const StageLog& log = StageLog(nullptr)) {
  validate(c, Command::Correct);
  StageLog lg = log;
  const LabelVolume v = lg.run("load", [&] { return load_input(c.inputs.front()); });
  MlpModel model = lg.run("load model", [&] { return load_model(c.model); });
  if (c.threshold) model.threshold = *c.threshold;
  FeatureConfig fc = c.features();
  fc.variant = model.variant;

  CorrectOutcome out;
  std::vector<std::size_t> demoted;
  nlohmann::json extra = {{"mode", c.tilted ? "tilted" : "axis"}, {"threshold", model.threshold}};
  if (!c.tilted) {
    const PairDecider decide = [&](const CandidatePair&, const std::vector<double>& f) { return predict(model, f); };
    AxisDecisions ad = axis_decisions(v, fc, model.normalizer, decide, worker_count(c, 1u << 20), &lg);
    out.decisions = std::move(ad.decisions);
    demoted = std::move(ad.demoted);
  } else {
    TiltedConfig tc;
    tc.features = fc;
    tc.spacing = c.reslice_spacing;
    tc.min_contact = c.min_contact;
    const auto pairs = lg.run("screen", [&] { return tilted_candidates(v, c.min_contact); });
    nlohmann::json skipped = nlohmann::json::array();
    std::vector<std::optional<TiltedEvaluation>> evs(pairs.size());
    std::vector<std::string> why(pairs.size());
    lg.run("evaluate", [&] {
      const std::size_t workers = worker_count(c, pairs.size());
      std::vector<std::exception_ptr> errors(workers);
      {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
          pool.emplace_back([&, w] {
            for (std::size_t i = w; i < pairs.size(); i += workers) {
              try {
                evs[i] = evaluate_tilted_pair(v, pairs[i].first, pairs[i].second, model, tc);
              } catch (const DegenerateGeometry& e) {
                why[i] = e.what();
              } catch (const InvalidArgument& e) {
                why[i] = e.what();
              } catch (...) {
                errors[w] = std::current_exception();
                return;
              }
            }
          });
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    });
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (evs[i]) out.decisions.push_back(evs[i]->decision);
      else skipped.push_back({{"label_a", pairs[i].first}, {"label_b", pairs[i].second}, {"reason", why[i]}});
    }
    extra["skipped"] = skipped;
  }
  write_json(c.out_dir / "decisions.json", decisions_json(out.decisions, demoted, extra));
  std::size_t merges = 0;
  for (const auto& d : out.decisions) merges += d.verdict == Verdict::Merge;
  lg.note(std::to_string(out.decisions.size()) + " decisions, " + std::to_string(merges) + " merges");
  if (c.dry_run) return out;

  out.result = lg.run("correct", [&] { return apply_corrections(v, out.decisions); });
  lg.run("write", [&] {
    write_volume(out.result->volume, volume_out(c, "corrected"));
    write_json(c.out_dir / "changes.json", out.result->log_json());
    std::ostringstream csv;
    write_review_csv(csv, out.result->log, v, out.result->volume);
    io::write_text(c.out_dir / "review.csv", csv.str());
  });
  return out;
}

/// Ground-truth cell holding most of `label`'s voxels (0 if none).
inline std::map<Label, Label> majority_gt(const OverlapTable& t) {
  std::map<Label, std::pair<std::size_t, Label>> best;
  for (const auto& [key, n] : t.inter) {
    auto& b = best[key.first];
    if (n > b.first) b = {n, key.second};
  }
  std::map<Label, Label> out;
  for (const auto& [p, b] : best) out[p] = b.second;
  return out;
}

inline nlohmann::json cmd_evaluate(const PipelineConfig& c, const StageLog& log = StageLog(nullptr)) {
  validate(c, Command::Evaluate);
  StageLog lg = log;
  const LabelVolume pred = lg.run("load", [&] { return load_input(c.inputs.front()); });
  const LabelVolume gt = load_volume(c.gt);
  if (!(pred.dims() == gt.dims())) throw InvalidArgument("input and ground truth differ in dimensions");
  nlohmann::json j;
  j["segmentation"] = lg.run("metrics", [&] { return segmentation_metrics(pred, gt).to_json(); });
  if (!c.model.empty()) {
    // A screened pair is a true oversegmentation when both fragments lie
    // mostly inside the same ground-truth cell.
    MlpModel model = load_model(c.model);
    if (c.threshold) model.threshold = *c.threshold;
    FeatureConfig fc = c.features();
    fc.variant = model.variant;
    const CellIndex index = build_cell_index(pred);
    const auto pairs = screen_candidates(index, fc);
    const auto feats = lg.run("features", [&] {
      return extract_features(index, pairs, fc, model.normalizer, worker_count(c, pairs.size()));
    });
    const auto owner = majority_gt(overlap_table(pred, gt));
    std::vector<bool> decided, truth;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      decided.push_back(predict(model, feats[i]).decision);
      auto a = owner.find(pairs[i].label_a), b = owner.find(pairs[i].label_b);
      truth.push_back(a != owner.end() && b != owner.end() && a->second == b->second);
    }
    j["classification"] = classification_report(decided, truth).to_json();
    j["classification"]["candidates"] = pairs.size();
  }
  write_json(c.out_dir / "metrics.json", j);
  return j;
}

/// Seeded Voronoi ground truth plus a copy with injected axis gaps.
inline std::vector<testkit::GapRecord> cmd_synth(const PipelineConfig& c, const StageLog& log = StageLog(nullptr)) {
  validate(c, Command::Synth);
  StageLog lg = log;
  testkit::SynthSpec s;
  s.dims = {c.synth_dims[0], c.synth_dims[1], c.synth_dims[2]};
  s.anisotropy = {c.synth_anisotropy[0], c.synth_anisotropy[1], c.synth_anisotropy[2]};
  s.n_cells = c.synth_cells;
  s.seed = *c.seed;
  const LabelVolume gt = lg.run("generate", [&] { return testkit::generate_voronoi_volume(s); });
  LabelVolume injected = gt;
  const auto gaps = testkit::inject_random_gaps(injected, c.synth_gaps, detail::splitmix(*c.seed), s.min_cell_height);
  write_volume(gt, c.out_dir / "gt.lbl");
  write_volume(injected, c.out_dir / "injected.lbl");
  nlohmann::json g = nlohmann::json::array();
  for (const auto& r : gaps) g.push_back(r.to_json());
  write_json(c.out_dir / "gaps.json", {{"seed", *c.seed}, {"gaps", g}});
  return gaps;
}

}  // namespace pipeline
}  // namespace ovseg
