#ifndef UNMAR_TRAINING_HPP
#define UNMAR_TRAINING_HPP

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "unmar/checkpoint.hpp"
#include "unmar/dataset.hpp"
#include "unmar/losses.hpp"
#include "unmar/metrics.hpp"
#include "unmar/models.hpp"

namespace unmar {

struct TrainConfig {
  GeneratorConfig gen;
  DiscriminatorConfig disc;
  Ablation ablation;
  LossWeights weights;
  AdvForm loss_form = AdvForm::kSqrt;
  int epochs = 50;
  int batch_size = 4;
  float lr = 1e-4f;
  int lr_halving_period = 10;
  float beta1 = 0.9f;
  float beta2 = 0.99f;
  int gen_steps_per_disc_step = 2;
  uint64_t seed = 1;
  int64_t max_gen_steps = 0;  // 0 = epochs alone bound the run

  void validate() const {
    gen.validate();
    disc.validate();
    if (epochs < 1) throw ConfigError(fmt::format("epochs {} < 1", epochs));
    if (batch_size < 1)
      throw ConfigError(fmt::format("batch_size {} < 1", batch_size));
    if (!(lr > 0.0f)) throw ConfigError(fmt::format("lr {} must be > 0", lr));
    if (lr_halving_period < 1)
      throw ConfigError(fmt::format("lr_halving_period {} < 1", lr_halving_period));
    if (beta1 < 0.0f || beta1 >= 1.0f || beta2 < 0.0f || beta2 >= 1.0f)
      throw ConfigError(fmt::format("betas ({}, {}) must be in [0,1)", beta1, beta2));
    if (gen_steps_per_disc_step < 1)
      throw ConfigError(fmt::format("gen_steps_per_disc_step {} < 1",
                                    gen_steps_per_disc_step));
    if (weights.lambda_ssim < 0 || weights.lambda_ge_adv < 0 ||
        weights.lambda_gr_adv < 0)
      throw ConfigError("loss weights must be nonnegative");
    if (max_gen_steps < 0)
      throw ConfigError(fmt::format("max_gen_steps {} < 0", max_gen_steps));
  }
};

/// Halve the learning rate every lr_halving_period epochs (epoch is 0-based).
inline float lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.lr *
         static_cast<float>(std::pow(0.5, epoch / cfg.lr_halving_period));
}

// ===== Config file =====

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["lr_halving_period"] = c.lr_halving_period;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["gen_steps_per_disc_step"] = c.gen_steps_per_disc_step;
  j["seed"] = c.seed;
  j["max_gen_steps"] = c.max_gen_steps;
  j["loss_form"] = to_string(c.loss_form);
  j["ablation"] = c.ablation.name();
  j["weights"] = {{"lambda_ssim", c.weights.lambda_ssim},
                  {"lambda_ge_adv", c.weights.lambda_ge_adv},
                  {"lambda_gr_adv", c.weights.lambda_gr_adv}};
  j["generator"] = {{"n_groups", c.gen.n_groups},
                    {"n_blocks_per_group", c.gen.n_blocks_per_group},
                    {"channels", c.gen.channels},
                    {"ca_reduction", c.gen.ca_reduction},
                    {"in_channels", c.gen.in_channels},
                    {"out_channels", c.gen.out_channels}};
  j["discriminator"] = {{"base_channels", c.disc.base_channels},
                        {"n_units", c.disc.n_units},
                        {"in_channels", c.disc.in_channels}};
  return j;
}

/// Parses a config document over the defaults; unknown keys are rejected so
/// a typo cannot silently fall back to a default.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto take = [](nlohmann::json obj, const char* ctx, auto fill) {
    fill(obj);
    // fill() erases every key it consumed; leftovers are typos.
    if (!obj.empty())
      throw ConfigError(fmt::format("config: unknown key '{}' in {}",
                                    obj.begin().key(), ctx));
  };
  auto grab = [](nlohmann::json& obj, const char* key, auto& dst) {
    if (auto it = obj.find(key); it != obj.end()) {
      dst = it->get<std::decay_t<decltype(dst)>>();
      obj.erase(it);
    }
  };
  take(j, "config", [&](nlohmann::json& o) {
    grab(o, "epochs", c.epochs);
    grab(o, "batch_size", c.batch_size);
    grab(o, "lr", c.lr);
    grab(o, "lr_halving_period", c.lr_halving_period);
    grab(o, "beta1", c.beta1);
    grab(o, "beta2", c.beta2);
    grab(o, "gen_steps_per_disc_step", c.gen_steps_per_disc_step);
    grab(o, "seed", c.seed);
    grab(o, "max_gen_steps", c.max_gen_steps);
    std::string form = to_string(c.loss_form), abl = c.ablation.name();
    grab(o, "loss_form", form);
    grab(o, "ablation", abl);
    c.loss_form = adv_form_from_string(form);
    c.ablation = Ablation::from_string(abl);
    if (auto it = o.find("weights"); it != o.end()) {
      take(*it, "weights", [&](nlohmann::json& w) {
        grab(w, "lambda_ssim", c.weights.lambda_ssim);
        grab(w, "lambda_ge_adv", c.weights.lambda_ge_adv);
        grab(w, "lambda_gr_adv", c.weights.lambda_gr_adv);
      });
      o.erase(it);
    }
    if (auto it = o.find("generator"); it != o.end()) {
      take(*it, "generator", [&](nlohmann::json& g) {
        grab(g, "n_groups", c.gen.n_groups);
        grab(g, "n_blocks_per_group", c.gen.n_blocks_per_group);
        grab(g, "channels", c.gen.channels);
        grab(g, "ca_reduction", c.gen.ca_reduction);
        grab(g, "in_channels", c.gen.in_channels);
        grab(g, "out_channels", c.gen.out_channels);
      });
      o.erase(it);
    }
    if (auto it = o.find("discriminator"); it != o.end()) {
      take(*it, "discriminator", [&](nlohmann::json& d) {
        grab(d, "base_channels", c.disc.base_channels);
        grab(d, "n_units", c.disc.n_units);
        grab(d, "in_channels", c.disc.in_channels);
      });
      o.erase(it);
    }
  });
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(fmt::format("config: cannot open {}", path.string()));
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("config: {} is not valid JSON: {}",
                                  path.string(), e.what()));
  }
  return train_config_from_json(j);
}

// ===== Steps =====

namespace detail {

inline float finite_or_throw(float v, const char* what, int64_t step) {
  if (!std::isfinite(v))
    throw NumericError(fmt::format("{} is {} at step {}", what, v, step), step);
  return v;
}

/// Stacks two [N,C,H,W] leaf batches into one [2N,C,H,W] batch. Training
/// forwards discriminate real and generated halves inside one forward pass;
/// with separate forwards every batch-norm layer would normalize each half
/// by its own statistics, making a batch-wide shift of the generated images
/// invisible to the discriminators — an unconstrained direction the
/// generators then drift along.
inline Tensor concat_batches(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(1) != b.dim(1) ||
      a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError(fmt::format("concat_batches: {} vs {}",
                                 shape_str(a.shape()), shape_str(b.shape())));
  Tensor out =
      Tensor::zeros({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)});
  std::memcpy(out.data(), a.data(), sizeof(float) * a.numel());
  std::memcpy(out.data() + a.numel(), b.data(), sizeof(float) * b.numel());
  return out;
}

/// Least-squares discriminator objective over a stacked [real; fake] score
/// map: mean (s - t)^2 with target 1 on the leading n_real samples and 0 on
/// the rest. With equal halves this equals adv_loss_discriminator evaluated
/// on the separate score maps.
inline Tensor joint_disc_loss(Tape* tape, const Tensor& scores, int n_real) {
  Shape shape = scores.shape();
  std::vector<float> t(static_cast<size_t>(scores.numel()), 0.0f);
  const int64_t per_sample = scores.numel() / scores.dim(0);
  std::fill(t.begin(), t.begin() + n_real * per_sample, 1.0f);
  Tensor target = Tensor::from_data(std::move(shape), std::move(t));
  Tensor d = sub(tape, scores, target);
  return reduce_mean(tape, mul(tape, d, d));
}

}  // namespace detail

/// Two fresh-batch generator updates happen for every discriminator update;
/// this is one of them. The corrupted batch is stacked with a clean batch
/// and the whole stack runs through G_e (and G_r): the clean half anchors
/// the discriminators' batch statistics (see concat_batches) and trains the
/// extractor toward a no-op on artifact-free inputs. Discriminators
/// participate in the forward pass but only generator parameters move.
inline float train_step_generators(UnaenModel& m, Adam& opt_g, Adam& opt_d,
                                   const Tensor& batch_xa,
                                   const Tensor& batch_y,
                                   const TrainConfig& cfg, float lr,
                                   int64_t step) {
  opt_g.zero_grad();
  opt_d.zero_grad();
  const Tensor mixed = detail::concat_batches(batch_xa, batch_y);
  Tape tape;
  Tensor x = reduce_artifacts(&tape, m, mixed);
  Tensor sf = m.df.forward(&tape, x, BnMode::kTrain);
  Tensor loss;
  if (m.ablation.with_gr) {
    Tensor xbar = restore(&tape, m, x);
    Tensor sb = m.db->forward(&tape, xbar, BnMode::kTrain);
    loss = total_generator_loss(&tape, sf, sb, mixed, xbar, cfg.weights,
                                cfg.loss_form);
  } else {
    // No reconstructor means no cycle anchor: only the adversarial pull on
    // the MA-reduced output remains.
    loss = scalar_mul(&tape, adv_loss_generator(&tape, sf, cfg.loss_form),
                      cfg.weights.lambda_ge_adv);
  }
  const float v = detail::finite_or_throw(loss.item(), "generator loss", step);
  tape.backward(loss);
  opt_g.step(lr, cfg.beta1, cfg.beta2);
  return v;
}

/// One discriminator update on fresh batches; fakes are produced without a
/// tape so no gradient reaches the generators. Real and fake halves share a
/// single forward (see concat_batches) and train on the least-squares
/// objective regardless of cfg.loss_form, which only selects the
/// generator-side penalty.
inline float train_step_discriminators(UnaenModel& m, Adam& opt_g, Adam& opt_d,
                                       const Tensor& batch_xa,
                                       const Tensor& batch_y,
                                       const TrainConfig& cfg, float lr,
                                       int64_t step) {
  opt_g.zero_grad();
  opt_d.zero_grad();
  Tensor fake_x = reduce_artifacts(nullptr, m, batch_xa);
  Tape tape;
  Tensor sf = m.df.forward(&tape, detail::concat_batches(batch_y, fake_x),
                           BnMode::kTrain);
  Tensor loss = detail::joint_disc_loss(&tape, sf, batch_y.dim(0));
  if (m.ablation.with_gr) {
    Tensor fake_xbar = restore(nullptr, m, fake_x);
    Tensor sb = m.db->forward(&tape,
                              detail::concat_batches(batch_xa, fake_xbar),
                              BnMode::kTrain);
    loss = add(&tape, loss, detail::joint_disc_loss(&tape, sb, batch_xa.dim(0)));
  }
  const float v =
      detail::finite_or_throw(loss.item(), "discriminator loss", step);
  tape.backward(loss);
  opt_d.step(lr, cfg.beta1, cfg.beta2);
  return v;
}

// ===== Inference =====

/// MA reduction over a list of images, clipped to [0,1]. Batched for speed;
/// per-sample results are independent of the batching.
inline std::vector<Image> infer(const UnaenModel& m,
                                const std::vector<Image>& images,
                                int batch = 8) {
  std::vector<Image> out;
  out.reserve(images.size());
  for (size_t i = 0; i < images.size(); i += batch) {
    std::vector<Image> chunk(
        images.begin() + i,
        images.begin() + std::min(images.size(), i + batch));
    Tensor x = images_to_tensor(chunk);
    Tensor y = reduce_artifacts(nullptr, m, x);
    for (Image& im : tensor_to_images(y)) out.push_back(clip01(std::move(im)));
  }
  return out;
}

/// Validation metrics: infer the corrupted halves, compare to the clean ones.
inline MetricReport evaluate_pairs(const UnaenModel& m,
                                   const std::vector<PairedSample>& pairs) {
  if (pairs.empty()) throw DataError("evaluate_pairs: no pairs");
  std::vector<Image> corrupt;
  corrupt.reserve(pairs.size());
  for (const PairedSample& p : pairs) corrupt.push_back(p.corrupt);
  const std::vector<Image> restored = infer(m, corrupt);
  std::vector<std::pair<Image, Image>> eval;
  eval.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i)
    eval.emplace_back(restored[i], pairs[i].clean);
  return evaluate_set(eval);
}

/// Baseline metrics of the corrupted inputs themselves.
inline MetricReport evaluate_corrupted(const std::vector<PairedSample>& pairs) {
  if (pairs.empty()) throw DataError("evaluate_corrupted: no pairs");
  std::vector<std::pair<Image, Image>> eval;
  eval.reserve(pairs.size());
  for (const PairedSample& p : pairs) eval.emplace_back(p.corrupt, p.clean);
  return evaluate_set(eval);
}

// ===== Checkpoint bundles =====

inline void save_model_checkpoint(const std::filesystem::path& dir,
                                  const UnaenModel& m, const std::string& name,
                                  const NamedTensors* extra = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  NamedTensors all = m.all_tensors();
  if (extra) all.insert(all.end(), extra->begin(), extra->end());
  write_checkpoint(dir / (name + ".unae"), all);
  std::ofstream os(dir / "model.json", std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot write model.json");
  os << model_manifest(m).dump(2) << "\n";
}

inline nlohmann::json read_model_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "model.json");
  if (!is)
    throw DataError(fmt::format("checkpoint: no model.json under {}", dir.string()));
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("checkpoint: bad model.json: {}", e.what()));
  }
  return j;
}

/// Rebuilds the architecture from the manifest and fills it from the named
/// checkpoint. Weights land by name, so any architecture drift is caught as
/// a missing tensor or a shape mismatch.
inline UnaenModel load_model_checkpoint(const std::filesystem::path& dir,
                                        const std::string& name) {
  const ModelSpec spec = parse_manifest(read_model_manifest(dir));
  UnaenModel m = build_model(spec.gen, spec.disc, spec.ablation, 0);
  const NamedTensors src = read_checkpoint(dir / (name + ".unae"));
  NamedTensors dst = m.all_tensors();
  load_named(dst, src);
  return m;
}

// ===== The loop =====

struct EpochStats {
  int epoch = 0;
  int64_t step = 0;  // generator + discriminator steps so far
  float loss_g = 0.0f, loss_d = 0.0f;
  double val_ssim = 0.0, val_psnr = 0.0;
  float lr = 0.0f;
};

inline std::string format_log_line(const EpochStats& s) {
  return fmt::format("{} {} {:.6f} {:.6f} {:.6f} {} {:.8g}", s.epoch, s.step,
                     s.loss_g, s.loss_d, s.val_ssim,
                     std::isinf(s.val_psnr) ? "inf"
                                            : fmt::format("{:.6f}", s.val_psnr),
                     s.lr);
}

struct TrainResult {
  int epochs_run = 0;
  int64_t gen_steps = 0, disc_steps = 0;
  double best_val_ssim = -2.0;
  int best_epoch = -1;
  std::vector<EpochStats> history;
};

namespace detail {

struct TrainStateIo {
  int epoch_next = 0;
  int64_t gen_steps = 0, disc_steps = 0;
  double best_val_ssim = -2.0;
  int best_epoch = -1;
  int64_t adam_g_count = 0, adam_d_count = 0;
};

inline void write_train_state(const std::filesystem::path& dir,
                              const TrainStateIo& s) {
  nlohmann::json j;
  j["format"] = "unmar-train-state";
  j["epoch_next"] = s.epoch_next;
  j["gen_steps"] = s.gen_steps;
  j["disc_steps"] = s.disc_steps;
  j["best_val_ssim"] = s.best_val_ssim;
  j["best_epoch"] = s.best_epoch;
  j["adam_g_count"] = s.adam_g_count;
  j["adam_d_count"] = s.adam_d_count;
  std::ofstream os(dir / "state.json", std::ios::trunc);
  if (!os) throw DataError("train: cannot write state.json");
  os << j.dump(2) << "\n";
}

inline TrainStateIo read_train_state(const std::filesystem::path& dir) {
  std::ifstream is(dir / "state.json");
  if (!is)
    throw DataError(fmt::format("train: no state.json under {} to resume from",
                                dir.string()));
  nlohmann::json j;
  is >> j;
  if (j.value("format", "") != "unmar-train-state")
    throw DataError("train: state.json has wrong format tag");
  TrainStateIo s;
  s.epoch_next = j.at("epoch_next").get<int>();
  s.gen_steps = j.at("gen_steps").get<int64_t>();
  s.disc_steps = j.at("disc_steps").get<int64_t>();
  s.best_val_ssim = j.at("best_val_ssim").get<double>();
  s.best_epoch = j.at("best_epoch").get<int>();
  s.adam_g_count = j.at("adam_g_count").get<int64_t>();
  s.adam_d_count = j.at("adam_d_count").get<int64_t>();
  return s;
}

inline std::vector<Image> pick(const std::vector<Image>& pool,
                               const std::vector<int>& order, size_t at,
                               int count) {
  std::vector<Image> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(pool[order[at + i]]);
  return out;
}

}  // namespace detail

/// Unsupervised alternating loop. Per epoch both pools are reshuffled with
/// epoch-derived seeds, gen_steps_per_disc_step generator updates run per
/// discriminator update (every step on fresh batches), validation runs, and
/// last/best checkpoints are written. Deterministic given (model, data, cfg);
/// resume=true continues from <out_dir>/last.unae at the epoch boundary and
/// reproduces an uninterrupted run exactly.
inline TrainResult train(UnaenModel& model, const Dataset& ds,
                         const TrainConfig& cfg,
                         const std::filesystem::path& out_dir,
                         std::ostream* echo = nullptr, bool resume = false) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (ds.train_free.empty() || ds.train_corrupt.empty())
    throw DataError("train: empty training pool");
  if (ds.val.empty()) throw DataError("train: empty validation set");
  const int bs = cfg.batch_size;
  if (static_cast<int>(ds.train_free.size()) < bs ||
      static_cast<int>(ds.train_corrupt.size()) < bs)
    throw DataError(fmt::format(
        "train: pools ({} free / {} corrupted) smaller than one batch of {}",
        ds.train_free.size(), ds.train_corrupt.size(), bs));

  fs::create_directories(out_dir);
  Adam opt_g(model.gen_params), opt_d(model.disc_params);
  TrainResult res;
  detail::TrainStateIo st;

  if (resume) {
    st = detail::read_train_state(out_dir);
    const NamedTensors src = read_checkpoint(out_dir / "last.unae");
    NamedTensors dst = model.all_tensors();
    {
      NamedTensors adam_g = opt_g.state_tensors(), adam_d = opt_d.state_tensors();
      dst.insert(dst.end(), adam_g.begin(), adam_g.end());
      dst.insert(dst.end(), adam_d.begin(), adam_d.end());
    }
    load_named(dst, src);
    opt_g.set_step_count(st.adam_g_count);
    opt_d.set_step_count(st.adam_d_count);
    res.gen_steps = st.gen_steps;
    res.disc_steps = st.disc_steps;
    res.best_val_ssim = st.best_val_ssim;
    res.best_epoch = st.best_epoch;
  } else {
    std::ofstream(out_dir / "train.log", std::ios::trunc);
    std::ofstream cf(out_dir / "config.json", std::ios::trunc);
    cf << train_config_to_json(cfg).dump(2) << "\n";
  }

  std::ofstream log(out_dir / "train.log", std::ios::app);
  if (!log) throw DataError("train: cannot open train.log");

  const int nf = static_cast<int>(ds.train_free.size());
  const int nc = static_cast<int>(ds.train_corrupt.size());
  bool step_cap_hit =
      cfg.max_gen_steps > 0 && res.gen_steps >= cfg.max_gen_steps;

  for (int e = st.epoch_next; e < cfg.epochs && !step_cap_hit; ++e) {
    const float lr = lr_at_epoch(cfg, e);
    std::vector<int> free_order(nf), corrupt_order(nc);
    std::iota(free_order.begin(), free_order.end(), 0);
    std::iota(corrupt_order.begin(), corrupt_order.end(), 0);
    {
      Rng rf(derive_seed(cfg.seed, "shuffle-free", static_cast<uint64_t>(e)));
      Rng rc(derive_seed(cfg.seed, "shuffle-corrupt", static_cast<uint64_t>(e)));
      rf.shuffle(free_order);
      rc.shuffle(corrupt_order);
    }

    double sum_g = 0.0, sum_d = 0.0;
    int64_t n_g = 0, n_d = 0;
    size_t cf = 0, ff = 0;
    while (!step_cap_hit) {
      bool advanced = false;
      for (int k = 0; k < cfg.gen_steps_per_disc_step; ++k) {
        if (cf + bs > static_cast<size_t>(nc) ||
            ff + bs > static_cast<size_t>(nf))
          break;
        Tensor xa = images_to_tensor(detail::pick(ds.train_corrupt,
                                                  corrupt_order, cf, bs));
        Tensor y = images_to_tensor(detail::pick(ds.train_free, free_order,
                                                 ff, bs));
        cf += bs;
        ff += bs;
        sum_g += train_step_generators(model, opt_g, opt_d, xa, y, cfg, lr,
                                       res.gen_steps + res.disc_steps);
        ++n_g;
        ++res.gen_steps;
        advanced = true;
        if (cfg.max_gen_steps > 0 && res.gen_steps >= cfg.max_gen_steps) {
          step_cap_hit = true;
          break;
        }
      }
      if (step_cap_hit) break;
      if (cf + bs <= static_cast<size_t>(nc) &&
          ff + bs <= static_cast<size_t>(nf)) {
        Tensor xa = images_to_tensor(detail::pick(ds.train_corrupt,
                                                  corrupt_order, cf, bs));
        Tensor y = images_to_tensor(detail::pick(ds.train_free, free_order,
                                                 ff, bs));
        cf += bs;
        ff += bs;
        sum_d += train_step_discriminators(model, opt_g, opt_d, xa, y, cfg, lr,
                                           res.gen_steps + res.disc_steps);
        ++n_d;
        ++res.disc_steps;
        advanced = true;
      }
      if (!advanced) break;  // both pools exhausted for this epoch
    }

    const MetricReport val = evaluate_pairs(model, ds.val);
    EpochStats stats;
    stats.epoch = e;
    stats.step = res.gen_steps + res.disc_steps;
    stats.loss_g = n_g ? static_cast<float>(sum_g / n_g) : 0.0f;
    stats.loss_d = n_d ? static_cast<float>(sum_d / n_d) : 0.0f;
    stats.val_ssim = val.ssim;
    stats.val_psnr = val.psnr;
    stats.lr = lr;
    res.history.push_back(stats);
    const std::string line = format_log_line(stats);
    log << line << "\n" << std::flush;
    if (echo) *echo << line << "\n";

    if (val.ssim > res.best_val_ssim) {
      res.best_val_ssim = val.ssim;
      res.best_epoch = e;
      save_model_checkpoint(out_dir / "best", model, "best");
    }
    NamedTensors extra = opt_g.state_tensors();
    {
      NamedTensors d2 = opt_d.state_tensors();
      extra.insert(extra.end(), d2.begin(), d2.end());
    }
    save_model_checkpoint(out_dir, model, "last", &extra);
    st.epoch_next = e + 1;
    st.gen_steps = res.gen_steps;
    st.disc_steps = res.disc_steps;
    st.best_val_ssim = res.best_val_ssim;
    st.best_epoch = res.best_epoch;
    st.adam_g_count = opt_g.step_count();
    st.adam_d_count = opt_d.step_count();
    detail::write_train_state(out_dir, st);
    ++res.epochs_run;
  }
  return res;
}

// ===== Ablation driver =====

struct AblationRow {
  std::string name;
  double ssim = 0.0, psnr = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // Table-1 order
  double baseline_ssim = 0.0, baseline_psnr = 0.0;

  std::string to_text() const {
    std::string out = fmt::format("{:<22} {:>8} {:>10}\n", "config", "ssim", "psnr");
    for (const AblationRow& r : rows)
      out += fmt::format("{:<22} {:>8.4f} {:>10.4f}\n", r.name, r.ssim, r.psnr);
    out += fmt::format("{:<22} {:>8.4f} {:>10.4f}\n", "corrupted-baseline",
                       baseline_ssim, baseline_psnr);
    return out;
  }
  nlohmann::json to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const AblationRow& r : rows)
      rows_j.push_back({{"config", r.name}, {"ssim", r.ssim}, {"psnr", r.psnr}});
    return {{"rows", rows_j},
            {"baseline", {{"ssim", baseline_ssim}, {"psnr", baseline_psnr}}}};
  }
};

/// Trains the four generator/reconstructor combinations with an identical
/// seed and budget and reports test-set metrics in Table-1 row order, plus
/// the do-nothing baseline of the corrupted inputs.
inline AblationReport run_ablation(const Dataset& ds, const TrainConfig& base,
                                   const std::filesystem::path& out_root,
                                   std::ostream* echo = nullptr) {
  if (ds.test.empty()) throw DataError("ablate: empty test set");
  static const Ablation kOrder[4] = {
      {true, true}, {false, true}, {true, false}, {false, false}};
  AblationReport rep;
  const MetricReport base_line = evaluate_corrupted(ds.test);
  rep.baseline_ssim = base_line.ssim;
  rep.baseline_psnr = base_line.psnr;
  for (const Ablation& ab : kOrder) {
    TrainConfig cfg = base;
    cfg.ablation = ab;
    UnaenModel model = build_model(cfg.gen, cfg.disc, ab, cfg.seed);
    const std::filesystem::path dir = out_root / ab.name();
    train(model, ds, cfg, dir, echo);
    UnaenModel best = load_model_checkpoint(dir / "best", "best");
    const MetricReport m = evaluate_pairs(best, ds.test);
    rep.rows.push_back({ab.name(), m.ssim, m.psnr});
    if (echo)
      *echo << fmt::format("ablation {} test ssim {:.6f} psnr {:.6f}\n",
                           ab.name(), m.ssim, m.psnr);
  }
  return rep;
}

}  // namespace unmar

#endif  // UNMAR_TRAINING_HPP
