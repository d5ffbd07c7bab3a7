#ifndef UNMAR_MODELS_HPP
#define UNMAR_MODELS_HPP

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "unmar/adam.hpp"
#include "unmar/ops.hpp"

namespace unmar {

constexpr float kLeakySlope = 0.2f;

struct GeneratorConfig {
  int n_groups = 5;
  int n_blocks_per_group = 5;
  int channels = 64;
  int ca_reduction = 16;
  int in_channels = 1;
  int out_channels = 1;

  void validate() const {
    if (n_groups < 1 || n_blocks_per_group < 1 || channels < 1 ||
        ca_reduction < 1 || in_channels < 1 || out_channels < 1)
      throw ConfigError("generator config: all fields must be positive");
    if (channels % ca_reduction != 0)
      throw ConfigError(fmt::format(
          "generator config: ca_reduction {} must divide channels {}",
          ca_reduction, channels));
  }
  bool operator==(const GeneratorConfig&) const = default;
};

struct DiscriminatorConfig {
  int base_channels = 64;
  int n_units = 8;
  int in_channels = 1;

  void validate() const {
    if (base_channels < 1 || n_units < 2 || in_channels < 1)
      throw ConfigError("discriminator config: all fields must be positive");
    if (n_units % 2 != 0)
      throw ConfigError(fmt::format(
          "discriminator config: n_units {} must be even", n_units));
  }
  /// Smallest input extent the stride chain accepts.
  int min_input() const { return 1 << (n_units / 2); }
  bool operator==(const DiscriminatorConfig&) const = default;
};

/// The four ablation arms: explicit (subtract the extracted artifact map)
/// versus implicit (generate the clean image directly), with or without the
/// restoration generator G_r and its discriminator.
struct Ablation {
  bool explicit_mode = true;
  bool with_gr = true;

  std::string name() const {
    return fmt::format("{}-{}-gr", explicit_mode ? "explicit" : "implicit",
                       with_gr ? "with" : "without");
  }
  static Ablation from_string(const std::string& s) {
    for (bool e : {true, false})
      for (bool g : {true, false}) {
        Ablation a{e, g};
        if (a.name() == s) return a;
      }
    throw ConfigError(fmt::format(
        "ablation '{}' (want explicit-with-gr|implicit-with-gr|"
        "explicit-without-gr|implicit-without-gr)", s));
  }
  bool operator==(const Ablation&) const = default;
};

// ===== Layers =====

namespace detail {

inline Tensor conv_weight(Rng& rng, int out_ch, int in_ch, int k) {
  std::vector<float> w(static_cast<size_t>(out_ch) * in_ch * k * k);
  const float std = std::sqrt(2.0f / static_cast<float>(in_ch * k * k));
  for (float& v : w) v = std * static_cast<float>(rng.normal());
  return Tensor::from_data({out_ch, in_ch, k, k}, std::move(w), true);
}

}  // namespace detail

struct Conv2dLayer {
  Tensor w, b;
  int stride = 1, padding = 0;

  Conv2dLayer() = default;
  Conv2dLayer(Rng& rng, NamedTensors& reg, const std::string& prefix,
              int in_ch, int out_ch, int k, int stride_ = 1)
      : stride(stride_), padding(k / 2) {
    w = detail::conv_weight(rng, out_ch, in_ch, k);
    b = Tensor::zeros({out_ch}, true);
    reg.emplace_back(prefix + ".w", w);
    reg.emplace_back(prefix + ".b", b);
  }
  Tensor forward(Tape* tape, const Tensor& x) const {
    return conv2d(tape, x, w, b, stride, padding);
  }
};

struct BatchNormLayer {
  Tensor gamma, beta, running_mean, running_var;

  BatchNormLayer() = default;
  BatchNormLayer(NamedTensors& reg, NamedTensors& buffers,
                 const std::string& prefix, int ch) {
    gamma = Tensor::full({ch}, 1.0f, true);
    beta = Tensor::zeros({ch}, true);
    running_mean = Tensor::zeros({ch});
    running_var = Tensor::full({ch}, 1.0f);
    reg.emplace_back(prefix + ".gamma", gamma);
    reg.emplace_back(prefix + ".beta", beta);
    buffers.emplace_back(prefix + ".running_mean", running_mean);
    buffers.emplace_back(prefix + ".running_var", running_var);
  }
  Tensor forward(Tape* tape, const Tensor& x, BnMode mode) {
    return batch_norm2d(tape, x, gamma, beta, running_mean, running_var, mode);
  }
};

/// Squeeze-and-gate channel attention: pooled stats through a 1x1 bottleneck,
/// sigmoid gate scales each channel.
struct ChannelAttention {
  Conv2dLayer reduce, expand;

  ChannelAttention() = default;
  ChannelAttention(Rng& rng, NamedTensors& reg, const std::string& prefix,
                   int ch, int reduction)
      : reduce(rng, reg, prefix + ".reduce", ch, ch / reduction, 1),
        expand(rng, reg, prefix + ".expand", ch / reduction, ch, 1) {}
  Tensor forward(Tape* tape, const Tensor& x) const {
    Tensor g = global_avg_pool(tape, x);
    g = leaky_relu(tape, reduce.forward(tape, g), kLeakySlope);
    g = sigmoid(tape, expand.forward(tape, g));
    return channel_scale(tape, x, g);
  }
};

/// Residual channel attention block: conv-leakyReLU-conv, channel attention,
/// skip from the block input.
struct Rcab {
  Conv2dLayer c1, c2;
  ChannelAttention ca;

  Rcab() = default;
  Rcab(Rng& rng, NamedTensors& reg, const std::string& prefix, int ch,
       int reduction)
      : c1(rng, reg, prefix + ".c1", ch, ch, 3),
        c2(rng, reg, prefix + ".c2", ch, ch, 3),
        ca(rng, reg, prefix + ".ca", ch, reduction) {}
  Tensor forward(Tape* tape, const Tensor& x) const {
    Tensor t = leaky_relu(tape, c1.forward(tape, x), kLeakySlope);
    t = c2.forward(tape, t);
    t = ca.forward(tape, t);
    return add(tape, x, t);
  }
};

struct ResidualGroup {
  std::vector<Rcab> blocks;
  Conv2dLayer tail;

  ResidualGroup() = default;
  ResidualGroup(Rng& rng, NamedTensors& reg, const std::string& prefix,
                int ch, int n_blocks, int reduction) {
    blocks.reserve(n_blocks);
    for (int i = 0; i < n_blocks; ++i)
      blocks.emplace_back(rng, reg, fmt::format("{}.b{}", prefix, i), ch,
                          reduction);
    tail = Conv2dLayer(rng, reg, prefix + ".tail", ch, ch, 3);
  }
  Tensor forward(Tape* tape, const Tensor& x) const {
    Tensor t = x;
    for (const Rcab& b : blocks) t = b.forward(tape, t);
    t = tail.forward(tape, t);
    return add(tape, x, t);
  }
};

/// RCAN backbone: head conv, residual groups with a long trunk skip, tail
/// conv. No input-to-output residual — the artifact extractor produces a map,
/// not a touched-up copy of its input.
struct Generator {
  GeneratorConfig cfg;
  Conv2dLayer head, trunk, tail;
  std::vector<ResidualGroup> groups;

  Generator() = default;
  Generator(Rng& rng, NamedTensors& reg, const std::string& prefix,
            const GeneratorConfig& cfg_)
      : cfg(cfg_) {
    cfg.validate();
    head = Conv2dLayer(rng, reg, prefix + ".head", cfg.in_channels,
                       cfg.channels, 3);
    groups.reserve(cfg.n_groups);
    for (int i = 0; i < cfg.n_groups; ++i)
      groups.emplace_back(rng, reg, fmt::format("{}.g{}", prefix, i),
                          cfg.channels, cfg.n_blocks_per_group,
                          cfg.ca_reduction);
    trunk = Conv2dLayer(rng, reg, prefix + ".trunk", cfg.channels,
                        cfg.channels, 3);
    tail = Conv2dLayer(rng, reg, prefix + ".tail", cfg.channels,
                       cfg.out_channels, 3);
    // Near-zero tail: a fresh extractor should open with an (almost) empty
    // output map, so explicit-mode reduction starts at the identity instead
    // of subtracting initialization noise from the input.
    for (float& v : tail.w.values()) v *= 0.01f;
  }
  Tensor forward(Tape* tape, const Tensor& x) const {
    Tensor h = head.forward(tape, x);
    Tensor t = h;
    for (const ResidualGroup& g : groups) t = g.forward(tape, t);
    t = trunk.forward(tape, t);
    t = add(tape, t, h);
    return tail.forward(tape, t);
  }
};

/// VGG-style patch discriminator: 3x3 conv units with leaky ReLU, batch norm
/// everywhere but the first unit, stride 2 on every second unit, channels
/// doubling every two units, and a final conv to a 1-channel score map.
struct Discriminator {
  DiscriminatorConfig cfg;
  std::vector<Conv2dLayer> convs;
  std::vector<BatchNormLayer> bns;  // bns[0] unused
  Conv2dLayer out;

  Discriminator() = default;
  Discriminator(Rng& rng, NamedTensors& reg, NamedTensors& buffers,
                const std::string& prefix, const DiscriminatorConfig& cfg_)
      : cfg(cfg_) {
    cfg.validate();
    bns.resize(cfg.n_units);
    int in_ch = cfg.in_channels;
    for (int u = 0; u < cfg.n_units; ++u) {
      const int out_ch = cfg.base_channels << (u / 2);
      const int stride = (u % 2 == 1) ? 2 : 1;
      convs.emplace_back(rng, reg, fmt::format("{}.u{}", prefix, u), in_ch,
                         out_ch, 3, stride);
      if (u > 0)
        bns[u] = BatchNormLayer(reg, buffers, fmt::format("{}.u{}.bn", prefix, u),
                                out_ch);
      in_ch = out_ch;
    }
    out = Conv2dLayer(rng, reg, prefix + ".out", in_ch, 1, 3);
  }
  Tensor forward(Tape* tape, const Tensor& x, BnMode mode) {
    if (x.rank() != 4)
      throw ShapeError(fmt::format("discriminator: expected NCHW, got {}",
                                   shape_str(x.shape())));
    if (std::min(x.dim(2), x.dim(3)) < cfg.min_input())
      throw ShapeError(fmt::format(
          "discriminator: input {}x{} below the stride-chain minimum {} "
          "({} units)", x.dim(2), x.dim(3), cfg.min_input(), cfg.n_units));
    Tensor t = x;
    for (int u = 0; u < cfg.n_units; ++u) {
      t = convs[u].forward(tape, t);
      if (u > 0) t = bns[u].forward(tape, t, mode);
      t = leaky_relu(tape, t, kLeakySlope);
    }
    return out.forward(tape, t);
  }
};

// ===== The UNAEN model =====

struct UnaenModel {
  Ablation ablation;
  GeneratorConfig gen_cfg;
  DiscriminatorConfig disc_cfg;
  Generator ge;
  std::optional<Generator> gr;
  Discriminator df;
  std::optional<Discriminator> db;
  NamedTensors gen_params, disc_params, buffers;

  NamedTensors all_tensors() const {
    NamedTensors all = gen_params;
    all.insert(all.end(), disc_params.begin(), disc_params.end());
    all.insert(all.end(), buffers.begin(), buffers.end());
    return all;
  }
};

inline UnaenModel build_model(const GeneratorConfig& gcfg,
                              const DiscriminatorConfig& dcfg,
                              const Ablation& ab, uint64_t seed) {
  gcfg.validate();
  dcfg.validate();
  UnaenModel m;
  m.ablation = ab;
  m.gen_cfg = gcfg;
  m.disc_cfg = dcfg;
  Rng rng(derive_seed(seed, "model"));
  m.ge = Generator(rng, m.gen_params, "ge", gcfg);
  m.df = Discriminator(rng, m.disc_params, m.buffers, "df", dcfg);
  if (ab.with_gr) {
    m.gr.emplace(rng, m.gen_params, "gr", gcfg);
    m.db.emplace(rng, m.disc_params, m.buffers, "db", dcfg);
  }
  return m;
}

inline int64_t count_parameters(const NamedTensors& params) {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

/// MA reduction: x = x^a - G_e(x^a) in explicit mode, x = G_e(x^a) in
/// implicit mode. No clipping here — training needs raw gradients; clip at
/// the inference boundary.
inline Tensor reduce_artifacts(Tape* tape, const UnaenModel& m, const Tensor& xa) {
  Tensor g = m.ge.forward(tape, xa);
  return m.ablation.explicit_mode ? sub(tape, xa, g) : g;
}

/// The explicit residual artifact map; meaningless (and rejected) in
/// implicit mode where G_e outputs the cleaned image itself. Computed as
/// xa - reduce_artifacts(xa), not as the raw G_e output: the two differ by
/// one rounding of xa's magnitude, and defining the map as the exact float
/// complement keeps `xa - reduced == artifact` bitwise true for any model.
inline Tensor extract_artifact(Tape* tape, const UnaenModel& m, const Tensor& xa) {
  if (!m.ablation.explicit_mode)
    throw ModeError("extract_artifact: no artifact map in implicit mode");
  return sub(tape, xa, reduce_artifacts(tape, m, xa));
}

inline Tensor restore(Tape* tape, const UnaenModel& m, const Tensor& x) {
  if (!m.ablation.with_gr)
    throw ModeError("restore: model built without G_r");
  return m.gr->forward(tape, x);
}

// ===== Manifest =====

/// Everything needed to rebuild the architecture; inference refuses a
/// checkpoint whose manifest disagrees with the requested config.
inline nlohmann::json model_manifest(const UnaenModel& m) {
  nlohmann::json j;
  j["format"] = "unmar-model";
  j["version"] = 1;
  j["ablation"] = m.ablation.name();
  j["generator"] = {{"n_groups", m.gen_cfg.n_groups},
                    {"n_blocks_per_group", m.gen_cfg.n_blocks_per_group},
                    {"channels", m.gen_cfg.channels},
                    {"ca_reduction", m.gen_cfg.ca_reduction},
                    {"in_channels", m.gen_cfg.in_channels},
                    {"out_channels", m.gen_cfg.out_channels}};
  j["discriminator"] = {{"base_channels", m.disc_cfg.base_channels},
                        {"n_units", m.disc_cfg.n_units},
                        {"in_channels", m.disc_cfg.in_channels}};
  return j;
}

struct ModelSpec {
  GeneratorConfig gen;
  DiscriminatorConfig disc;
  Ablation ablation;
  bool operator==(const ModelSpec&) const = default;
};

inline ModelSpec parse_manifest(const nlohmann::json& j) {
  if (j.value("format", "") != "unmar-model")
    throw DataError("model manifest: missing or wrong format tag");
  ModelSpec s;
  s.ablation = Ablation::from_string(j.at("ablation").get<std::string>());
  const auto& g = j.at("generator");
  s.gen.n_groups = g.at("n_groups").get<int>();
  s.gen.n_blocks_per_group = g.at("n_blocks_per_group").get<int>();
  s.gen.channels = g.at("channels").get<int>();
  s.gen.ca_reduction = g.at("ca_reduction").get<int>();
  s.gen.in_channels = g.at("in_channels").get<int>();
  s.gen.out_channels = g.at("out_channels").get<int>();
  const auto& d = j.at("discriminator");
  s.disc.base_channels = d.at("base_channels").get<int>();
  s.disc.n_units = d.at("n_units").get<int>();
  s.disc.in_channels = d.at("in_channels").get<int>();
  return s;
}

}  // namespace unmar

#endif  // UNMAR_MODELS_HPP
