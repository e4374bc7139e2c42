#include "cvseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "cvseg/errors.hpp"

namespace cvseg {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view s) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError("not a valid number: '" + std::string(s) + "'");
  }
  return v;
}

bool parse_bool(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("not a boolean: '" + std::string(s) + "'");
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  while (!s.empty()) {
    const std::size_t comma = s.find(',');
    const std::string_view item = trim(s.substr(0, comma));
    if (item.empty()) throw ConfigError("empty item in list");
    out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
    if (s.empty()) throw ConfigError("trailing comma in list");
  }
  return out;
}

std::vector<Index> parse_index_list(std::string_view s) {
  std::vector<Index> out;
  for (const std::string& item : split_list(s)) out.push_back(parse_number<Index>(item));
  return out;
}

std::string show(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
std::string show_list(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>) {
      out += xs[i];
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

std::string show(bool b) { return b ? "true" : "false"; }

struct Field {
  ConfigKey key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto add = [&](const char* section, const char* key, const char* doc, auto set, auto get) {
      f.push_back(Field{ConfigKey{section, key, doc}, set, get});
    };
    using R = RunConfig;
    using SV = std::string_view;

    add("network", "levels", "encoding levels; each after the first keeps 1/ratio of the points",
        [](R& c, SV v) { c.network.levels = parse_number<Index>(v); },
        [](const R& c) { return std::to_string(c.network.levels); });
    add("network", "k", "neighbours per point",
        [](R& c, SV v) { c.network.k = parse_number<Index>(v); },
        [](const R& c) { return std::to_string(c.network.k); });
    add("network", "clusters", "VLAD cluster centres per level",
        [](R& c, SV v) { c.network.clusters = parse_number<Index>(v); },
        [](const R& c) { return std::to_string(c.network.clusters); });
    add("network", "channels", "output width of each encoding level, comma separated",
        [](R& c, SV v) { c.network.channels = parse_index_list(v); },
        [](const R& c) { return show_list(c.network.channels); });
    add("network", "ratio", "down-sampling ratio between levels",
        [](R& c, SV v) { c.network.ratio = parse_number<Index>(v); },
        [](const R& c) { return std::to_string(c.network.ratio); });
    add("network", "classes", "number of semantic classes",
        [](R& c, SV v) { c.network.classes = parse_number<int>(v); },
        [](const R& c) { return std::to_string(c.network.classes); });
    add("network", "embed_width", "width of the per-point input embedding",
        [](R& c, SV v) { c.network.embed_width = parse_number<Index>(v); },
        [](const R& c) { return std::to_string(c.network.embed_width); });
    add("network", "embed_xyz", "also feed raw positions to the input embedding",
        [](R& c, SV v) { c.network.embed_xyz = parse_bool(v); },
        [](const R& c) { return show(c.network.embed_xyz); });
    add("network", "head_widths", "hidden widths of the classifier head",
        [](R& c, SV v) { c.network.head_widths = parse_index_list(v); },
        [](const R& c) { return show_list(c.network.head_widths); });
    add("network", "dropout", "dropout rate before the logits layer",
        [](R& c, SV v) { c.network.dropout = parse_number<double>(v); },
        [](const R& c) { return show(c.network.dropout); });
    add("network", "vlad_normalize", "L2-normalise VLAD residuals and the descriptor",
        [](R& c, SV v) { c.network.vlad_normalize = parse_bool(v); },
        [](const R& c) { return show(c.network.vlad_normalize); });
    add("network", "seed", "parameter initialisation seed",
        [](R& c, SV v) { c.network.seed = parse_number<std::uint64_t>(v); },
        [](const R& c) { return std::to_string(c.network.seed); });

    add("train", "epochs", "maximum number of epochs",
        [](R& c, SV v) { c.train.epochs = parse_number<int>(v); },
        [](const R& c) { return std::to_string(c.train.epochs); });
    add("train", "batch", "crops per optimiser step",
        [](R& c, SV v) { c.train.batch = parse_number<Index>(v); },
        [](const R& c) { return std::to_string(c.train.batch); });
    add("train", "points", "points per crop",
        [](R& c, SV v) { c.train.points = parse_number<Index>(v); },
        [](const R& c) { return std::to_string(c.train.points); });
    add("train", "lr", "initial learning rate",
        [](R& c, SV v) { c.train.lr = parse_number<double>(v); },
        [](const R& c) { return show(c.train.lr); });
    add("train", "lr_decay", "learning-rate factor applied once per epoch",
        [](R& c, SV v) { c.train.lr_decay = parse_number<double>(v); },
        [](const R& c) { return show(c.train.lr_decay); });
    add("train", "beta1", "Adam first-moment decay",
        [](R& c, SV v) { c.train.adam.beta1 = parse_number<double>(v); },
        [](const R& c) { return show(c.train.adam.beta1); });
    add("train", "beta2", "Adam second-moment decay",
        [](R& c, SV v) { c.train.adam.beta2 = parse_number<double>(v); },
        [](const R& c) { return show(c.train.adam.beta2); });
    add("train", "epsilon", "Adam denominator epsilon",
        [](R& c, SV v) { c.train.adam.epsilon = parse_number<double>(v); },
        [](const R& c) { return show(c.train.adam.epsilon); });
    add("train", "loss", "wce or aggregation",
        [](R& c, SV v) {
          if (v == "wce") {
            c.train.loss = LossMode::kWceOnly;
          } else if (v == "aggregation") {
            c.train.loss = LossMode::kAggregation;
          } else {
            throw ConfigError("loss must be 'wce' or 'aggregation', got '" + std::string(v) + "'");
          }
        },
        [](const R& c) { return std::string(c.train.loss == LossMode::kWceOnly ? "wce" : "aggregation"); });
    add("train", "seed", "crop, sampling and dropout seed",
        [](R& c, SV v) { c.train.seed = parse_number<std::uint64_t>(v); },
        [](const R& c) { return std::to_string(c.train.seed); });
    add("train", "steps_per_epoch", "0 means ceil(total points / (batch * points))",
        [](R& c, SV v) { c.train.steps_per_epoch = parse_number<Index>(v); },
        [](const R& c) { return std::to_string(c.train.steps_per_epoch); });
    add("train", "target_oa", "stop once an epoch's train OA reaches this; 0 disables",
        [](R& c, SV v) {
          const double t = parse_number<double>(v);
          c.train.target_oa = t > 0.0 ? std::optional<double>(t) : std::nullopt;
        },
        [](const R& c) { return show(c.train.target_oa.value_or(0.0)); });
    add("train", "checkpoint_every", "epochs between checkpoints; 0 disables",
        [](R& c, SV v) { c.train.checkpoint_every = parse_number<int>(v); },
        [](const R& c) { return std::to_string(c.train.checkpoint_every); });
    add("train", "eval_points", "points per evaluation crop",
        [](R& c, SV v) { c.eval_points = parse_number<Index>(v); },
        [](const R& c) { return std::to_string(c.eval_points); });
    add("train", "preset", "ablation preset applied to the model and loss; empty for the full network",
        [](R& c, SV v) { c.preset = std::string(v); },
        [](const R& c) { return c.preset; });

    add("data", "train_path", "labelled ASCII cloud; empty generates a synthetic room",
        [](R& c, SV v) { c.data.train_path = std::string(v); },
        [](const R& c) { return c.data.train_path.string(); });
    add("data", "eval_path", "labelled ASCII cloud for evaluation; empty reuses the training cloud",
        [](R& c, SV v) { c.data.eval_path = std::string(v); },
        [](const R& c) { return c.data.eval_path.string(); });
    add("data", "synthetic_points", "points in the generated room",
        [](R& c, SV v) { c.data.synthetic_points = parse_number<Index>(v); },
        [](const R& c) { return std::to_string(c.data.synthetic_points); });
    add("data", "synthetic_seed", "seed of the generated room",
        [](R& c, SV v) { c.data.synthetic_seed = parse_number<std::uint64_t>(v); },
        [](const R& c) { return std::to_string(c.data.synthetic_seed); });

    add("ablation", "presets", "comma separated preset ids",
        [](R& c, SV v) { c.ablation.presets = split_list(v); },
        [](const R& c) { return show_list(c.ablation.presets); });
    add("ablation", "convergence_oa", "train OA that marks convergence in the report",
        [](R& c, SV v) { c.ablation.convergence_oa = parse_number<double>(v); },
        [](const R& c) { return show(c.ablation.convergence_oa); });
    return f;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  network.validate();
  // The checkpoint directory comes from the command line, not the file.
  TrainConfig t = train;
  if (t.checkpoint_dir.empty()) t.checkpoint_dir = ".";
  t.validate();
  if (eval_points < 1) throw ConfigError("eval_points must be positive");
  if (data.synthetic_points < network.classes) throw ConfigError("synthetic_points must cover every class");
  if (ablation.convergence_oa <= 0.0 || ablation.convergence_oa > 1.0) {
    throw ConfigError("convergence_oa must lie in (0, 1]");
  }
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  RunConfig config;
  std::string section;
  std::set<std::string> seen;
  int line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    line = trim(line);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section != "network" && section != "train" && section != "data" && section != "ablation") {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside any section");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const Field& f : fields()) {
      if (f.key.section == section && f.key.key == key) field = &f;
    }
    if (!field) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(section + "." + key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      field->set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.key.section != section) {
      if (!section.empty()) out += '\n';
      section = f.key.section;
      out += "[" + section + "]\n";
    }
    out += "# " + f.key.doc + "\n" + f.key.key + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace cvseg
