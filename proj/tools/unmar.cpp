// unmar — unsupervised MRI motion-artifact reduction lab.
//
// One binary, seven subcommands: phantom generation, k-space motion
// simulation, dataset assembly, training, inference, evaluation, and the
// ablation driver. Exit codes: 0 ok, 2 usage/config, 3 data, 4 numeric.

#include <malloc.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "unmar/dataset.hpp"
#include "unmar/metrics.hpp"
#include "unmar/phantom.hpp"
#include "unmar/png.hpp"
#include "unmar/training.hpp"

namespace fs = std::filesystem;
using namespace unmar;

namespace {

std::vector<std::pair<std::string, Image>> read_marf_dir(const fs::path& dir) {
  std::vector<std::pair<std::string, Image>> out;
  for (const fs::path& p : detail::list_marf(dir))
    out.emplace_back(p.stem().string(), read_marf(p));
  if (out.empty())
    throw DataError(fmt::format("no .marf files under {}", dir.string()));
  return out;
}

int cmd_phantom(int count, int size, uint64_t seed, const fs::path& out,
                bool png) {
  fs::create_directories(out);
  const PhantomSpec spec = default_head_phantom(size);
  for (int i = 0; i < count; ++i) {
    const Image img =
        render_phantom(spec, derive_seed(seed, "phantom-image", i));
    const fs::path path = out / fmt::format("p{:05d}.marf", i);
    write_marf(path, img);
    if (png) write_png(out / fmt::format("p{:05d}.png", i), img);
  }
  std::cout << fmt::format("wrote {} phantoms ({}x{}) to {}\n", count, size,
                           size, out.string());
  return 0;
}

int cmd_simulate(const fs::path& in, const fs::path& out, MotionSpec spec,
                 uint64_t seed, bool png) {
  const auto inputs = read_marf_dir(in);
  fs::create_directories(out);
  nlohmann::json files = nlohmann::json::object();
  double mean_fraction = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const auto& [name, img] = inputs[i];
    const SimResult sim =
        simulate_motion(img, spec, derive_seed(seed, "simulate", i));
    write_marf(out / (name + ".marf"), sim.corrupted);
    if (png) write_png(out / (name + ".png"), sim.corrupted);
    const double frac = corrupted_fraction(sim.mask);
    mean_fraction += frac;
    nlohmann::json side;
    side["mask"] = sim.mask;
    side["fraction"] = frac;
    std::ofstream ms(out / (name + ".mask.json"), std::ios::trunc);
    ms << side.dump() << "\n";
    files[name] = frac;
  }
  mean_fraction /= static_cast<double>(inputs.size());
  nlohmann::json report;
  report["ts_eg"] = spec.ts_eg;
  report["corrupt_eg"] = spec.corrupt_eg;
  report["eg_size"] = spec.eg_size;
  report["mean_fraction"] = mean_fraction;
  report["files"] = files;
  std::ofstream rs(out / "report.json", std::ios::trunc);
  rs << report.dump(2) << "\n";
  std::cout << fmt::format("simulated {} images, mean corrupted fraction {:.4f}\n",
                           inputs.size(), mean_fraction);
  return 0;
}

int cmd_build_dataset(const fs::path& in, const fs::path& out, MotionSpec spec,
                      const SplitFractions& split, uint64_t seed, int patch) {
  const auto named = read_marf_dir(in);
  std::vector<Image> images;
  images.reserve(named.size());
  for (const auto& [name, img] : named) images.push_back(img);
  const nlohmann::json manifest =
      build_dataset(images, spec, split, seed, out, patch);
  std::cout << fmt::format("dataset at {}: {} free / {} corrupted / {} val / {} test\n",
                           out.string(),
                           manifest["images"]["train_free"].get<int>(),
                           manifest["images"]["train_corrupt"].get<int>(),
                           manifest["images"]["val"].get<int>(),
                           manifest["images"]["test"].get<int>());
  return 0;
}

struct Overrides {
  std::optional<uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::string> ablation;
  std::optional<std::string> loss_form;
  std::optional<int64_t> max_gen_steps;

  TrainConfig apply(TrainConfig cfg) const {
    if (seed) cfg.seed = *seed;
    if (epochs) cfg.epochs = *epochs;
    if (ablation) cfg.ablation = Ablation::from_string(*ablation);
    if (loss_form) cfg.loss_form = adv_form_from_string(*loss_form);
    if (max_gen_steps) cfg.max_gen_steps = *max_gen_steps;
    return cfg;
  }
};

TrainConfig resolve_config(const std::string& config_path, const Overrides& ov) {
  TrainConfig cfg =
      config_path.empty() ? TrainConfig{} : load_train_config(config_path);
  cfg = ov.apply(cfg);
  cfg.validate();
  return cfg;
}

int cmd_train(const fs::path& data, const fs::path& out,
              const std::string& config_path, const Overrides& ov,
              bool resume) {
  const TrainConfig cfg = resolve_config(config_path, ov);
  const Dataset ds = load_dataset(data);
  UnaenModel model = build_model(cfg.gen, cfg.disc, cfg.ablation, cfg.seed);
  const TrainResult res = train(model, ds, cfg, out, &std::cout, resume);
  std::cout << fmt::format("done: {} gen / {} disc steps, best val ssim {:.6f} (epoch {})\n",
                           res.gen_steps, res.disc_steps, res.best_val_ssim,
                           res.best_epoch);
  return 0;
}

int cmd_infer(const fs::path& checkpoint, const std::string& name,
              const fs::path& in, const fs::path& out,
              const std::string& expect_ablation, bool png) {
  const nlohmann::json manifest = read_model_manifest(checkpoint);
  if (!expect_ablation.empty()) {
    const Ablation want = Ablation::from_string(expect_ablation);
    const ModelSpec spec = parse_manifest(manifest);
    if (!(spec.ablation == want)) {
      nlohmann::json requested;
      requested["ablation"] = want.name();
      throw DataError(fmt::format(
          "checkpoint/config mismatch\nrequested: {}\ncheckpoint: {}",
          requested.dump(), manifest.dump()));
    }
  }
  const UnaenModel model = load_model_checkpoint(checkpoint, name);
  const auto inputs = read_marf_dir(in);
  std::vector<Image> images;
  images.reserve(inputs.size());
  for (const auto& [n, img] : inputs) images.push_back(img);
  const std::vector<Image> reduced = infer(model, images);
  fs::create_directories(out);
  for (size_t i = 0; i < inputs.size(); ++i) {
    write_marf(out / (inputs[i].first + ".marf"), reduced[i]);
    if (png) write_png(out / (inputs[i].first + ".png"), reduced[i]);
  }
  std::cout << fmt::format("reduced {} images into {}\n", inputs.size(),
                           out.string());
  return 0;
}

void print_report(const MetricReport& rep) {
  std::cout << rep.to_text();
  std::cout << rep.to_json().dump() << "\n";
}

int cmd_evaluate(const fs::path& a, const fs::path& b, const fs::path& data,
                 const std::string& split, const fs::path& checkpoint,
                 const std::string& name) {
  if (!a.empty() && !b.empty()) {
    const auto restored = read_marf_dir(a);
    const auto reference = read_marf_dir(b);
    if (restored.size() != reference.size())
      throw DataError(fmt::format("evaluate: {} has {} images, {} has {}",
                                  a.string(), restored.size(), b.string(),
                                  reference.size()));
    std::vector<std::pair<Image, Image>> pairs;
    for (size_t i = 0; i < restored.size(); ++i) {
      if (restored[i].first != reference[i].first)
        throw DataError(fmt::format("evaluate: name mismatch '{}' vs '{}'",
                                    restored[i].first, reference[i].first));
      pairs.emplace_back(restored[i].second, reference[i].second);
    }
    print_report(evaluate_set(pairs));
    return 0;
  }
  if (data.empty())
    throw ConfigError("evaluate: need either --a/--b or --data");
  const Dataset ds = load_dataset(data);
  const auto& pairs = split == "val" ? ds.val : ds.test;
  if (checkpoint.empty()) {
    print_report(evaluate_corrupted(pairs));
    return 0;
  }
  const UnaenModel model = load_model_checkpoint(checkpoint, name);
  print_report(evaluate_pairs(model, pairs));
  return 0;
}

int cmd_ablate(const fs::path& data, const fs::path& out,
               const std::string& config_path, const Overrides& ov) {
  const TrainConfig cfg = resolve_config(config_path, ov);
  const Dataset ds = load_dataset(data);
  fs::create_directories(out);
  const AblationReport rep = run_ablation(ds, cfg, out, &std::cout);
  std::cout << rep.to_text();
  std::ofstream js(out / "report.json", std::ios::trunc);
  js << rep.to_json().dump(2) << "\n";
  std::ofstream ts(out / "report.txt", std::ios::trunc);
  ts << rep.to_text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Keep freed multi-megabyte training buffers on the heap free lists
  // instead of handing them back to the kernel every step.
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
  if (const char* threads = std::getenv("UNMAR_THREADS"))
    Eigen::setNbThreads(std::max(1, std::atoi(threads)));

  CLI::App app{"unsupervised MRI motion-artifact reduction lab"};
  app.require_subcommand(1);

  // phantom
  int ph_count = 0, ph_size = 128;
  uint64_t ph_seed = 1;
  std::string ph_out;
  bool ph_png = false;
  auto* ph = app.add_subcommand("phantom", "render jittered head phantoms");
  ph->add_option("--count", ph_count, "number of phantoms")
      ->required()
      ->check(CLI::PositiveNumber);
  ph->add_option("--size", ph_size, "image extent in pixels");
  ph->add_option("--seed", ph_seed, "master seed");
  ph->add_option("--out", ph_out, "output directory")->required();
  ph->add_flag("--png", ph_png, "also write PNG previews");

  auto add_motion = [](CLI::App* cmd, MotionSpec& spec) {
    cmd->add_option("--ts-eg", spec.ts_eg, "motion-free echo groups per period")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--corrupt-eg", spec.corrupt_eg,
                    "corrupted echo groups per period")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--eg-size", spec.eg_size, "k-space lines per echo group")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--angles", spec.angles_deg, "motion rotation angles (deg)");
  };

  // simulate
  std::string sim_in, sim_out;
  uint64_t sim_seed = 1;
  bool sim_png = false;
  MotionSpec sim_spec;
  auto* sim = app.add_subcommand("simulate", "corrupt images via k-space splicing");
  sim->add_option("--in", sim_in, "directory of clean .marf images")->required();
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--seed", sim_seed, "master seed");
  sim->add_flag("--png", sim_png, "also write PNG previews");
  add_motion(sim, sim_spec);

  // build-dataset
  std::string bd_in, bd_out;
  uint64_t bd_seed = 1;
  int bd_patch = 0;
  MotionSpec bd_spec;
  SplitFractions bd_split;
  auto* bd = app.add_subcommand("build-dataset",
                                "split, corrupt and store a training tree");
  bd->add_option("--in", bd_in, "directory of clean .marf images")->required();
  bd->add_option("--out", bd_out, "dataset root to create")->required();
  bd->add_option("--seed", bd_seed, "master seed");
  bd->add_option("--patch", bd_patch, "grid patch size (0 = whole images)");
  bd->add_option("--train-frac", bd_split.train, "train fraction");
  bd->add_option("--val-frac", bd_split.val, "validation fraction");
  bd->add_option("--test-frac", bd_split.test, "test fraction");
  add_motion(bd, bd_spec);

  auto add_overrides = [](CLI::App* cmd, std::string& config, Overrides& ov) {
    cmd->add_option("--config", config, "training config JSON");
    cmd->add_option("--seed", ov.seed, "override config seed");
    cmd->add_option("--epochs", ov.epochs, "override epoch count");
    cmd->add_option("--ablation", ov.ablation,
                    "explicit-with-gr|implicit-with-gr|explicit-without-gr|"
                    "implicit-without-gr");
    cmd->add_option("--loss-form", ov.loss_form, "sqrt|squared");
    cmd->add_option("--max-gen-steps", ov.max_gen_steps,
                    "stop after this many generator steps");
  };

  // train
  std::string tr_data, tr_out, tr_config;
  Overrides tr_ov;
  bool tr_resume = false;
  auto* tr = app.add_subcommand("train", "train the artifact extraction model");
  tr->add_option("--data", tr_data, "dataset root")->required();
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_flag("--resume", tr_resume, "continue from <out>/last.unae");
  add_overrides(tr, tr_config, tr_ov);

  // infer
  std::string in_ckpt, in_name = "best", in_in, in_out, in_ablation;
  bool in_png = false;
  auto* inf = app.add_subcommand("infer", "apply a trained extractor");
  inf->add_option("--checkpoint", in_ckpt, "checkpoint directory")->required();
  inf->add_option("--name", in_name, "checkpoint name (best|last)");
  inf->add_option("--in", in_in, "directory of corrupted .marf images")->required();
  inf->add_option("--out", in_out, "output directory")->required();
  inf->add_option("--ablation", in_ablation, "refuse checkpoints of another mode");
  inf->add_flag("--png", in_png, "also write PNG previews");

  // evaluate
  std::string ev_a, ev_b, ev_data, ev_split = "test", ev_ckpt, ev_name = "best";
  auto* ev = app.add_subcommand("evaluate", "SSIM/PSNR report");
  ev->add_option("--a", ev_a, "restored image directory");
  ev->add_option("--b", ev_b, "reference image directory");
  ev->add_option("--data", ev_data, "dataset root (paired mode)");
  ev->add_option("--split", ev_split, "val|test")
      ->check(CLI::IsMember({"val", "test"}));
  ev->add_option("--checkpoint", ev_ckpt,
                 "reduce artifacts with this model first");
  ev->add_option("--name", ev_name, "checkpoint name (best|last)");

  // ablate
  std::string ab_data, ab_out, ab_config;
  Overrides ab_ov;
  auto* ab = app.add_subcommand("ablate", "train all four model variants");
  ab->add_option("--data", ab_data, "dataset root")->required();
  ab->add_option("--out", ab_out, "run directory")->required();
  add_overrides(ab, ab_config, ab_ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (ph->parsed()) return cmd_phantom(ph_count, ph_size, ph_seed, ph_out, ph_png);
    if (sim->parsed()) return cmd_simulate(sim_in, sim_out, sim_spec, sim_seed, sim_png);
    if (bd->parsed())
      return cmd_build_dataset(bd_in, bd_out, bd_spec, bd_split, bd_seed, bd_patch);
    if (tr->parsed()) return cmd_train(tr_data, tr_out, tr_config, tr_ov, tr_resume);
    if (inf->parsed())
      return cmd_infer(in_ckpt, in_name, in_in, in_out, in_ablation, in_png);
    if (ev->parsed())
      return cmd_evaluate(ev_a, ev_b, ev_data, ev_split, ev_ckpt, ev_name);
    if (ab->parsed()) return cmd_ablate(ab_data, ab_out, ab_config, ab_ov);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
