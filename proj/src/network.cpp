#include "cvseg/network.hpp"

#include <iomanip>

#include "cvseg/errors.hpp"
#include "cvseg/numerics/checkpoint.hpp"

namespace cvseg {

namespace {

DiffArray to_array(const Points3<double>& m) {
  return DiffArray({m.rows(), 3}, Eigen::Map<const Eigen::ArrayXd>(m.data(), m.size()));
}

Points3<double> take(const Points3<double>& m, const std::vector<Index>& rows) {
  Points3<double> out(static_cast<Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

Index decoder_out_width(const NetworkConfig& c, Index l) {
  return c.channels[static_cast<std::size_t>(std::max<Index>(l - 1, 0))];
}

std::string level_name(const char* what, Index l) { return std::string(what) + std::to_string(l); }

}  // namespace

void NetworkConfig::validate() const {
  if (levels < 1) throw ConfigError("levels must be at least 1");
  if (static_cast<Index>(channels.size()) != levels) {
    throw ConfigError("channel schedule has " + std::to_string(channels.size()) + " entries for " +
                      std::to_string(levels) + " levels");
  }
  for (Index c : channels) {
    if (c < 1) throw ConfigError("channel widths must be positive");
  }
  if (ratio < 2) throw ConfigError("sampling ratio must be at least 2");
  if (k < 1) throw ConfigError("k must be at least 1");
  if (clusters < 1) throw ConfigError("cluster count must be at least 1");
  if (classes < 1) throw ConfigError("class count must be at least 1");
  if (embed_width < 1) throw ConfigError("embedding width must be positive");
  for (Index w : head_widths) {
    if (w < 1) throw ConfigError("head widths must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

Index descriptor_width(const NetworkConfig& config, GlobalMode mode) {
  const Index last = config.channels.back();
  switch (mode) {
    case GlobalMode::kNone:
      return 0;
    case GlobalMode::kComprehensive: {
      Index sum = 0;
      for (Index c : config.channels) sum += c;
      return config.clusters * sum;
    }
    case GlobalMode::kLastLayerVlad:
      return config.clusters * last;
    case GlobalMode::kMaxPool:
    case GlobalMode::kMeanPool:
      return last;
  }
  return 0;
}

Model build_model(const NetworkConfig& config, const ModelVariant& variant) {
  config.validate();
  Model m;
  m.config = config;
  m.variant = variant;
  Rng rng(mix_seed(config.seed, 0x6d6f64656cULL));
  ParamStore& s = m.store;

  m.embed = make_mlp(s, "embed", config.embed_xyz ? 6 : 3, config.embed_width, rng);
  Index in = config.embed_width;
  for (Index l = 0; l < config.levels; ++l) {
    const Index width = config.channels[static_cast<std::size_t>(l)];
    const Index half = std::max<Index>(1, width / 2);
    const std::string p = level_name("enc", l);
    EncoderLevel level{{make_lafa(s, p + ".lafa0", in, half, variant.lafa, rng),
                        make_lafa(s, p + ".lafa1", half, width, variant.lafa, rng)}};
    m.encoder.push_back(std::move(level));
    in = width;
  }

  if (variant.global == GlobalMode::kComprehensive) {
    for (Index l = 0; l < config.levels; ++l) {
      m.vlad.push_back(make_vlad_layer(s, level_name("vlad", l), config.channels[static_cast<std::size_t>(l)],
                                       config.clusters, rng));
    }
  } else if (variant.global == GlobalMode::kLastLayerVlad) {
    m.vlad.push_back(make_vlad_layer(s, "vlad", config.channels.back(), config.clusters, rng));
  }
  if (variant.global != GlobalMode::kNone) {
    m.injection = make_injection(s, "inject", descriptor_width(config, variant.global), config.channels.back(), rng);
  }

  for (Index l = 0; l < config.levels; ++l) {
    const Index c = config.channels[static_cast<std::size_t>(l)];
    const Index dec_in = l == config.levels - 1 ? c : 2 * c;
    m.decoder.push_back(make_mlp(s, level_name("dec", l), dec_in, decoder_out_width(config, l), rng));
  }

  Index width = config.channels.front();
  for (std::size_t i = 0; i < config.head_widths.size(); ++i) {
    m.head.push_back(make_mlp(s, "head" + std::to_string(i), width, config.head_widths[i], rng));
    width = config.head_widths[i];
  }
  m.logits = make_linear(s, "logits", width, config.classes, true, rng);
  return m;
}

SamplingHierarchy hierarchy_for(const Model& model, const PointCloud& cloud, std::uint64_t seed) {
  return build_hierarchy(cloud, model.config.levels - 1, model.config.k, seed, model.config.ratio);
}

ForwardResult forward(Model& model, const PointCloud& cloud, const SamplingHierarchy& hierarchy,
                      const ForwardOptions& options) {
  return forward(model, std::span<const PointCloud>(&cloud, 1), std::span<const SamplingHierarchy>(&hierarchy, 1),
                 options);
}

namespace {

struct Merged {
  PointCloud cloud;
  SamplingHierarchy hierarchy;
};

std::vector<Index> shifted(const std::vector<Index>& v, Index by) {
  std::vector<Index> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] + by;
  return out;
}

void append(std::vector<Index>& to, const std::vector<Index>& v) { to.insert(to.end(), v.begin(), v.end()); }

Merged merge(std::span<const PointCloud> clouds, std::span<const SamplingHierarchy> hs,
             const std::vector<std::vector<Index>>& offsets) {
  Merged m;
  const std::size_t levels = hs.front().levels.size();
  const Index total = offsets[0].back();
  m.cloud.positions.resize(total, 3);
  m.cloud.colors.resize(total, 3);
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    m.cloud.positions.middleRows(offsets[0][b], clouds[b].size()) = clouds[b].positions;
    m.cloud.colors.middleRows(offsets[0][b], clouds[b].size()) = clouds[b].colors;
  }
  m.hierarchy.levels.resize(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    HierarchyLevel& out = m.hierarchy.levels[l];
    const Index rows = offsets[l].back();
    const Index k = hs.front().levels[l].neighbors.k;
    out.positions.resize(rows, 3);
    out.neighbors = NeighborIndex(rows, k, {});
    out.neighbors.idx.reserve(static_cast<std::size_t>(rows * k));
    for (std::size_t b = 0; b < hs.size(); ++b) {
      const HierarchyLevel& in = hs[b].levels[l];
      if (in.neighbors.k != k) {
        throw ValidationError("batch items disagree on the neighbour count at level " + std::to_string(l));
      }
      out.positions.middleRows(offsets[l][b], in.positions.rows()) = in.positions;
      append(out.neighbors.idx, shifted(in.neighbors.idx, offsets[l][b]));
      append(out.source, shifted(in.source, offsets[0][b]));
      if (l > 0) {
        append(out.kept, shifted(in.kept, offsets[l - 1][b]));
        append(out.upsample, shifted(in.upsample, offsets[l][b]));
      }
    }
  }
  return m;
}

std::vector<Index> row_range(Index from, Index to) {
  std::vector<Index> r(static_cast<std::size_t>(to - from));
  for (Index i = from; i < to; ++i) r[static_cast<std::size_t>(i - from)] = i;
  return r;
}

}  // namespace

ForwardResult forward(Model& model, std::span<const PointCloud> clouds, std::span<const SamplingHierarchy> hierarchies,
                      const ForwardOptions& options) {
  const NetworkConfig& cfg = model.config;
  if (clouds.empty() || clouds.size() != hierarchies.size()) {
    throw ValidationError("forward needs one hierarchy per cloud and at least one cloud");
  }
  ForwardResult r;
  const std::size_t levels = static_cast<std::size_t>(cfg.levels);
  r.offsets.assign(levels, std::vector<Index>{0});
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    const SamplingHierarchy& h = hierarchies[b];
    if (h.depth() != cfg.levels - 1) {
      throw ValidationError("hierarchy has " + std::to_string(h.depth() + 1) + " levels, network expects " +
                            std::to_string(cfg.levels));
    }
    if (h.level_size(0) != clouds[b].size()) {
      throw ValidationError("hierarchy was built on " + std::to_string(h.level_size(0)) + " points, cloud has " +
                            std::to_string(clouds[b].size()));
    }
    for (std::size_t l = 0; l < levels; ++l) {
      r.offsets[l].push_back(r.offsets[l].back() + h.level_size(static_cast<Index>(l)));
    }
  }
  std::optional<Merged> merged;
  if (clouds.size() > 1) merged = merge(clouds, hierarchies, r.offsets);
  const PointCloud& cloud = merged ? merged->cloud : clouds.front();
  const SamplingHierarchy& hierarchy = merged ? merged->hierarchy : hierarchies.front();

  ForwardMode mode;
  mode.training = options.training;

  DiffArray x = to_array(cloud.colors);
  if (cfg.embed_xyz) x = concat({to_array(cloud.positions), x}, 1);
  x = apply(model.embed, x, mode);

  for (Index l = 0; l < cfg.levels; ++l) {
    const HierarchyLevel& lev = hierarchy.levels[static_cast<std::size_t>(l)];
    const DiffArray positions = to_array(lev.positions);
    const DiffArray colors = to_array(take(cloud.colors, lev.source));
    EncoderLevel& enc = model.encoder[static_cast<std::size_t>(l)];
    LevelAux aux;
    aux.lafa[0] = lafa_forward(positions, colors, x, lev.neighbors, enc.lafa[0], mode);
    aux.lafa[1] = lafa_forward(positions, colors, aux.lafa[0].features, lev.neighbors, enc.lafa[1], mode);
    DiffArray e = aux.lafa[1].features;
    if (options.encoder_tap) options.encoder_tap(l, e);
    r.encoder_outputs.push_back(e);
    r.aux.push_back(std::move(aux));
    if (l + 1 < cfg.levels) x = take_rows(e, hierarchy.levels[static_cast<std::size_t>(l + 1)].kept);
  }

  DiffArray d = r.encoder_outputs.back();
  if (model.injection) {
    for (std::size_t b = 0; b < clouds.size(); ++b) {
      if (clouds.size() == 1) {
        r.descriptors.push_back(
            global_descriptor(model.variant.global, r.encoder_outputs, model.vlad, cfg.vlad_normalize));
        break;
      }
      std::vector<DiffArray> own;
      for (std::size_t l = 0; l < levels; ++l) {
        own.push_back(take_rows(r.encoder_outputs[l], row_range(r.offsets[l][b], r.offsets[l][b + 1])));
      }
      r.descriptors.push_back(global_descriptor(model.variant.global, own, model.vlad, cfg.vlad_normalize));
    }
    d = inject_global(r.descriptors, d, r.offsets.back(), *model.injection, mode);
  }

  r.decoder_inputs.resize(levels);
  for (Index l = cfg.levels - 1; l >= 0; --l) {
    DiffArray in = d;
    if (l < cfg.levels - 1) {
      const DiffArray up = take_rows(d, hierarchy.levels[static_cast<std::size_t>(l + 1)].upsample);
      in = concat({up, r.encoder_outputs[static_cast<std::size_t>(l)]}, 1);
    }
    r.decoder_inputs[static_cast<std::size_t>(l)] = in;
    d = apply(model.decoder[static_cast<std::size_t>(l)], in, mode);
  }

  for (MlpBlock& block : model.head) d = apply(block, d, mode);
  d = dropout(d, cfg.dropout, options.dropout_seed, options.training);
  r.logits = apply(model.logits, d);
  return r;
}

std::vector<int> predict(const DiffArray& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 1) {
    throw DimensionError("predict expects [N, C] logits, got " + shape_string(logits.shape()));
  }
  const Index n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  const Eigen::ArrayXd& v = logits.values();
  for (Index i = 0; i < n; ++i) {
    int best = 0;
    for (Index j = 1; j < c; ++j) {
      if (v[i * c + j] > v[i * c + best]) best = static_cast<int>(j);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

Index count_parameters(const Model& model) { return model.store.parameter_count(); }

void save_model(const Model& model, const std::filesystem::path& path) { save_checkpoint(model.store, path); }

void load_model(Model& model, const std::filesystem::path& path) { load_checkpoint(model.store, path); }

void print_summary(const Model& model, std::ostream& out) {
  std::size_t name_width = 4;
  for (const auto& e : model.store.entries()) name_width = std::max(name_width, e.name.size());
  for (const auto& e : model.store.entries()) {
    out << std::left << std::setw(static_cast<int>(name_width)) << e.name << "  " << std::setw(14)
        << shape_string(e.array.shape()) << (e.trainable ? "  param" : "  buffer") << '\n';
  }
  out << "trainable parameters: " << count_parameters(model) << '\n';
}

}  // namespace cvseg
