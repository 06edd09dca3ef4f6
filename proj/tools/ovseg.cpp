#include <iostream>

#include <CLI11.hpp>

#include "ovseg/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kRuntime = 1, kValidation = 2 };

}  // namespace

int main(int argc, char** argv) {
  using namespace ovseg;
  PipelineConfig c;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  bool quiet = false;

  CLI::App app{"Detect and repair oversegmented cells in 3D label volumes"};
  app.set_config("--config", "", "TOML or INI file; flags given on the command line win");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  auto* o_seed = app.add_option("--seed", seed, "Random seed (required)");
  app.add_option("--input", c.inputs, "Input volume(s); .lbl/.json raw pair or .tif");
  app.add_option("--gt", c.gt, "Ground-truth volume");
  app.add_option("--model", c.model, "Model file");
  app.add_option("--out", c.out_dir, "Output directory");
  app.add_option("--variant", c.variant, "Feature variant")
      ->check(CLI::IsMember({"default", "incomplete", "extra", "perturbed"}));
  app.add_option("--max-gap", c.max_gap, "Largest gap (layers) screened between fragments");
  app.add_option("--projections", c.n_projections, "Sliced-Wasserstein projections");
  auto* o_thr = app.add_option("--threshold", threshold, "Merge probability threshold");
  app.add_flag("--tilted", c.tilted, "Use the tilted-interface path");
  app.add_flag("--dry-run", c.dry_run, "Write decisions only");
  app.add_option("--min-contact", c.min_contact, "Tilted path: minimum shared voxel faces");
  app.add_option("--spacing", c.reslice_spacing, "Tilted path: reslice spacing in pixel pitches");
  app.add_option("--threads", c.threads, "Worker threads (0 = all cores)");
  app.add_option("--true-per-volume", c.true_per_volume, "Train: gaps injected per volume");
  app.add_option("--epochs", c.max_epochs, "Train: maximum epochs");
  app.add_option("--cells", c.synth_cells, "Synth: number of cells");
  app.add_option("--dims", c.synth_dims, "Synth: Z Y X")->expected(3);
  app.add_option("--anisotropy", c.synth_anisotropy, "Synth: z y x pitch")->expected(3);
  app.add_option("--gaps", c.synth_gaps, "Synth: gaps to inject");
  app.add_flag("--quiet", quiet, "Suppress stage timing");

  auto* screen = app.add_subcommand("screen", "List oversegmentation candidate pairs");
  auto* trn = app.add_subcommand("train", "Synthesize training cases and fit the classifier");
  auto* correct = app.add_subcommand("correct", "Classify candidates and repair the volume");
  auto* evaluate = app.add_subcommand("evaluate", "Score a volume against ground truth");
  auto* synth = app.add_subcommand("synth", "Write a synthetic ground truth and a gap-injected copy");
  for (auto* s : {screen, trn, correct, evaluate, synth}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }
  if (o_seed->count() > 0) c.seed = seed;
  if (o_thr->count() > 0) c.threshold = threshold;

  const StageLog log(quiet ? nullptr : &std::cerr);
  try {
    if (screen->parsed()) pipeline::cmd_screen(c, log);
    else if (trn->parsed()) pipeline::cmd_train(c, log);
    else if (correct->parsed()) pipeline::cmd_correct(c, log);
    else if (evaluate->parsed()) pipeline::cmd_evaluate(c, log);
    else if (synth->parsed()) pipeline::cmd_synth(c, log);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
