#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cvseg/ablation.hpp"
#include "cvseg/cli.hpp"
#include "cvseg/errors.hpp"

using namespace cvseg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string golden(const std::string& name) { return slurp(fs::path(CVSEG_GOLDEN_DIR) / name); }

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cvseg_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

const char* kTinyConfig = R"([network]
levels = 3
k = 6
clusters = 3
channels = 4,8,16
classes = 3
embed_width = 4
head_widths = 8

[train]
epochs = 2
batch = 1
points = 512
steps_per_epoch = 2
eval_points = 1024
checkpoint_every = 1

[data]
synthetic_points = 2048
)";

}  // namespace

TEST(Config, DefaultsMatchTheReferenceSetup) {
  const RunConfig c = parse_config("");
  EXPECT_EQ(c.network.k, 16);
  EXPECT_EQ(c.network.clusters, 16);
  EXPECT_EQ(c.network.levels, 5);
  EXPECT_EQ(c.train.batch, 6);
  EXPECT_EQ(c.train.epochs, 100);
  EXPECT_EQ(c.train.lr, 0.01);
  EXPECT_EQ(c.train.points, 40960);
  EXPECT_EQ(c.train.loss, LossMode::kAggregation);
  EXPECT_EQ(format_config(c), golden("default_config.ini"));
}

TEST(Config, EveryKeyDocumentedAndEmitted) {
  const std::string text = format_config(RunConfig{});
  for (const ConfigKey& k : config_keys()) {
    EXPECT_FALSE(k.doc.empty()) << k.key;
    EXPECT_NE(text.find("\n" + k.key + " = "), std::string::npos) << k.key;
  }
}

TEST(Config, ParseErrorsNameTheLine) {
  const auto expect_error = [](const std::string& text, const std::string& needle) {
    try {
      parse_config(text, "run.ini");
      ADD_FAILURE() << "accepted: " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_error("[network]\nk = 8\nbogus = 1\n", "run.ini:3:");
  expect_error("[network]\nk = 8\nk = 9\n", "duplicate");
  expect_error("[nope]\n", "unknown section");
  expect_error("k = 8\n", "outside any section");
  expect_error("[network]\nk = eight\n", "run.ini:2:");
  expect_error("[train]\nloss = hinge\n", "wce");
  expect_error("[network]\nchannels = 4,8\n", "run.ini");
  EXPECT_THROW(load_config("/nonexistent/run.ini"), IoError);
}

TEST(Config, CommentsAndWhitespace) {
  // Comments take whole lines so paths may contain # and ;.
  const RunConfig c = parse_config("# top\n\n[network]\n  k = 8   \n; whole line\n[train]\nloss=wce\n");
  EXPECT_EQ(c.network.k, 8);
  EXPECT_EQ(c.train.loss, LossMode::kWceOnly);
  EXPECT_THROW(parse_config("[network]\nk = 8 ; note\n"), ConfigError);
}

TEST(Config, FormatParseRoundTrip) {
  RunConfig c = parse_config(kTinyConfig);
  c.train.lr = 0.1 + 0.2;
  c.train.target_oa = 0.95;
  c.ablation.presets = {"A1", "E2"};
  c.data.train_path = "some/cloud.txt";
  c.preset = "D3";
  const std::string text = format_config(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(format_config(back), text);
  EXPECT_EQ(back.train.lr, c.train.lr);
  EXPECT_EQ(back.network.channels, c.network.channels);
  EXPECT_EQ(back.ablation.presets, c.ablation.presets);
}

TEST(Presets, TableOrderAndLosses) {
  const auto& p = ablation_presets();
  ASSERT_EQ(p.size(), 22u);
  std::string ids;
  for (const auto& x : p) ids += x.id + " ";
  EXPECT_EQ(ids, "A1 A2 A3 A4 B1 B2 B3 B4 B5 C1 C2 C3 C4 C5 C6 D1 D2 D3 D4 D5 E1 E2 ");
  for (const auto& x : p) {
    const bool wce = x.id[0] == 'C' || x.id == "E1";
    EXPECT_EQ(x.loss, wce ? LossMode::kWceOnly : LossMode::kAggregation) << x.id;
  }
  EXPECT_EQ(find_preset("D1").variant.global, GlobalMode::kNone);
  EXPECT_EQ(find_preset("D2").variant.global, GlobalMode::kLastLayerVlad);
  EXPECT_EQ(find_preset("D3").variant.global, GlobalMode::kMaxPool);
  EXPECT_EQ(find_preset("D4").variant.global, GlobalMode::kMeanPool);
  EXPECT_FALSE(find_preset("A1").variant.lafa.adaptive_unit);
  EXPECT_FALSE(find_preset("C1").variant.lafa.pool_sum);
  EXPECT_FALSE(find_preset("C2").variant.lafa.pool_max);
  EXPECT_THROW(find_preset("Z9"), UsageError);
}

TEST(Presets, FullNetworkPresetIsTheDefaultModel) {
  RunConfig c = parse_config(kTinyConfig);
  for (const char* id : {"A4", "B5", "D5", "E2"}) {
    const AblationPreset& p = find_preset(id);
    Model preset = build_model(c.network, p.variant);
    Model base = build_model(c.network);
    EXPECT_EQ(count_parameters(preset), count_parameters(base)) << id;
    const PointCloud cloud = load_training_cloud(c);
    const SamplingHierarchy h = hierarchy_for(base, cloud, 1);
    ForwardOptions o;
    o.training = false;
    EXPECT_EQ(forward(preset, cloud, h, o).logits.values().matrix(), forward(base, cloud, h, o).logits.values().matrix())
        << id;
  }
}

TEST(Reports, GoldenAblationAndBench) {
  std::vector<AblationRow> rows(2);
  rows[0] = {"A4", "full network", 0.5, 0.875, 1.25, 12, 40, 1234};
  rows[1] = {"E1", "weighted cross-entropy only", 1.0 / 3.0, 0.6, 0.75, std::nullopt, 40, 1234};
  EXPECT_EQ(format_ablation_table(rows), golden("ablation_table.txt"));
  EXPECT_EQ(format_ablation_csv(rows), golden("ablation.csv"));
  EXPECT_EQ(format_bench_csv({{"knn", 1000, 1.23456, 5}, {"vlad", 100000, 12.5, 7}}), golden("bench.csv"));
}

TEST(ParseSize, Suffixes) {
  EXPECT_EQ(parse_size("1k"), 1000);
  EXPECT_EQ(parse_size("2M"), 2000000);
  EXPECT_EQ(parse_size("37"), 37);
  EXPECT_THROW(parse_size("k"), UsageError);
  EXPECT_THROW(parse_size("0"), UsageError);
  EXPECT_THROW(parse_size("1.5k"), UsageError);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(cli({"gen"}).code, kExitUsage);
  EXPECT_EQ(cli({"gen", "--out", "x.txt", "--points", "0"}).code, kExitUsage);
  EXPECT_EQ(cli({"bench", "sort"}).code, kExitUsage);
  EXPECT_EQ(cli({"bench", "knn", "--reps", "4"}).code, kExitUsage);
  EXPECT_EQ(cli({"bench", "knn", "--sizes", "1k,,2k"}).code, kExitUsage);
  EXPECT_EQ(cli({"train"}).code, kExitUsage);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST(Cli, ConfigAndIoErrors) {
  const fs::path dir = scratch("errors");
  EXPECT_EQ(cli({"train", "--config", (dir / "missing.ini").string(), "--out", dir.string()}).code, kExitIo);
  const fs::path bad = write(dir / "bad.ini", "[network]\nbogus = 1\n");
  const CliRun r = cli({"train", "--config", bad.string(), "--out", dir.string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("bad.ini:2:"), std::string::npos) << r.err;
  const fs::path cfg = write(dir / "tiny.ini", kTinyConfig);
  EXPECT_EQ(cli({"eval", "--config", cfg.string(), "--checkpoint", (dir / "none.ckpt").string()}).code, kExitIo);
  const fs::path junk = write(dir / "junk.ckpt", "not a checkpoint");
  EXPECT_EQ(cli({"eval", "--config", cfg.string(), "--checkpoint", junk.string()}).code, kExitCheckpoint);
  const fs::path cloud = write(dir / "broken.txt", "0 0 0 1 1 1 0\n0 0\n");
  const fs::path with_data = write(dir / "data.ini", std::string(kTinyConfig) + "train_path = " + cloud.string() + "\n");
  EXPECT_EQ(cli({"train", "--config", with_data.string(), "--out", (dir / "o").string()}).code, kExitIo);
  fs::remove_all(dir);
}

TEST(Cli, AblatePresetErrors) {
  const fs::path dir = scratch("ablate_err");
  const fs::path cfg = write(dir / "tiny.ini", kTinyConfig);
  const CliRun unknown = cli({"ablate", "--config", cfg.string(), "--presets", "A1,Z9"});
  EXPECT_EQ(unknown.code, kExitUsage);
  EXPECT_NE(unknown.err.find("valid ids: A1, A2"), std::string::npos) << unknown.err;
  EXPECT_EQ(cli({"ablate", "--config", cfg.string()}).code, kExitUsage);
  fs::remove_all(dir);
}

TEST(Cli, GenIsDeterministic) {
  const fs::path dir = scratch("gen");
  ASSERT_EQ(cli({"gen", "--points", "3000", "--seed", "4", "--out", (dir / "a.txt").string()}).code, kExitOk);
  ASSERT_EQ(cli({"gen", "--points", "3000", "--seed", "4", "--out", (dir / "b.txt").string()}).code, kExitOk);
  ASSERT_EQ(cli({"gen", "--points", "3000", "--seed", "5", "--out", (dir / "c.txt").string()}).code, kExitOk);
  EXPECT_EQ(slurp(dir / "a.txt"), slurp(dir / "b.txt"));
  EXPECT_NE(slurp(dir / "a.txt"), slurp(dir / "c.txt"));
  const PointCloud c = read_ascii_cloud(dir / "a.txt", true);
  EXPECT_EQ(c.size(), 3000);
  EXPECT_EQ(c.class_count, 3);
  fs::remove_all(dir);
}

TEST(Cli, BenchWritesCsv) {
  const CliRun r = cli({"bench", "knn", "--sizes", "100,200", "--reps", "5"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "kernel,points,median_ms,reps");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("knn,100,", 0), 0u) << line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("knn,200,", 0), 0u) << line;
  for (const char* k : {"gather", "lafa", "vlad"}) {
    EXPECT_EQ(cli({"bench", k, "--sizes", "64", "--reps", "5"}).code, kExitOk) << k;
  }
}

TEST(Cli, TrainThenEvaluate) {
  const fs::path dir = scratch("e2e");
  const fs::path cfg = write(dir / "tiny.ini", kTinyConfig);
  const CliRun t = cli({"train", "--config", cfg.string(), "--out", (dir / "run").string()});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  for (const char* f : {"model.ckpt", "runlog.csv", "config.ini", "checkpoints/epoch_0001.ckpt",
                        "checkpoints/epoch_0002.ckpt"}) {
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  }
  EXPECT_EQ(slurp(dir / "run" / "config.ini"), format_config(load_config(cfg)));
  const CliRun e = cli({"eval", "--config", (dir / "run" / "config.ini").string(), "--checkpoint",
                     (dir / "run" / "model.ckpt").string(), "--csv", (dir / "m.csv").string()});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  EXPECT_EQ(e.out.rfind("OA(%)  mIoU(%)", 0), 0u) << e.out;
  EXPECT_EQ(slurp(dir / "m.csv").rfind("class,iou\nclass0,", 0), 0u);
  // The same checkpoint evaluates identically.
  const CliRun again = cli({"eval", "--config", (dir / "run" / "config.ini").string(), "--checkpoint",
                         (dir / "run" / "model.ckpt").string()});
  EXPECT_EQ(again.out, e.out);
  fs::remove_all(dir);
}

TEST(Cli, BinaryExitCodes) {
  const std::string bin = CVSEG_CLI_PATH;
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " --help > /dev/null").c_str())), 0);
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " nothing 2> /dev/null").c_str())), kExitUsage);
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " train --config /nonexistent.ini --out /tmp/x 2> /dev/null").c_str())),
            kExitIo);
}
