#include <gtest/gtest.h>

#include <sstream>

#include "bvs/cli.hpp"
#include "test_util.hpp"

using namespace bvs;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

const char* kTinyConfig =
    "v2as.depth = 2\n"
    "v2as.model_dim = 16\n"
    "v2as.heads = 2\n"
    "v2as.feedforward_dim = 32\n"
    "v2as.cross_attention_positions = 2\n"
    "vs2a_first.depth = 1\n"
    "vs2a_first.model_dim = 16\n"
    "vs2a_first.heads = 2\n"
    "vs2a_first.feedforward_dim = 32\n"
    "vs2a_rest.depth = 1\n"
    "vs2a_rest.model_dim = 16\n"
    "vs2a_rest.heads = 2\n"
    "vs2a_rest.feedforward_dim = 32\n"
    "optim.lr = 0.001\n"
    "optim.warmup_steps = 2\n"
    "train.batch_size = 4\n"
    "train.train_samples = 20\n"
    "train.v2as_steps = 10\n"
    "train.vs2a_steps = 10\n"
    "train.log_every = 2\n"
    "train.checkpoint_every = 5\n";

struct Workspace {
  std::filesystem::path dir;
  std::string config, data, heldout;

  explicit Workspace(const std::string& name) : dir(bvs::testing::temp_dir(name)) {
    config = (dir / "tiny.conf").string();
    io::write_file(config, kTinyConfig);
    data = (dir / "train.bvsd").string();
    heldout = (dir / "heldout.bvsd").string();
    EXPECT_EQ(run({"gen-data", "--config", config, "--n", "20", "--out", data}).code, 0);
    EXPECT_EQ(run({"gen-data", "--config", config, "--n", "6", "--first-index", "1000", "--out", heldout}).code, 0);
  }
  std::string path(const std::string& f) const { return (dir / f).string(); }
};

}  // namespace

TEST(Cli, HelpShowsShippedDefaults) {
  const auto r = run({"generate", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("16"), std::string::npos);
  EXPECT_NE(r.out.find("5.0"), std::string::npos);
  EXPECT_NE(r.out.find("20,10,1,1"), std::string::npos);
  EXPECT_NE(r.out.find("2.5"), std::string::npos);
  const auto top = run({"--help"});
  EXPECT_EQ(top.code, 0);
  for (const char* verb : {"gen-data", "train", "generate", "eval"}) EXPECT_NE(top.out.find(verb), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"gen-data", "--out", "/tmp/x"}).code, 2);
  const auto dir = bvs::testing::temp_dir("cli_usage");
  const auto r = run({"gen-data", "--n", "0", "--out", (dir / "a").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--n"), std::string::npos);
  EXPECT_EQ(run({"train", "--stage", "v3", "--data", "/nonexistent", "--out", "x"}).code, 2);
}

TEST(Cli, RuntimeErrorsExitOne) {
  const auto dir = bvs::testing::temp_dir("cli_runtime");
  const auto conf = (dir / "bad.conf").string();
  io::write_file(conf, "world.t_v = 7\n");
  EXPECT_EQ(run({"gen-data", "--config", conf, "--n", "3", "--out", (dir / "a").string()}).code, 1);
  io::write_file(conf, "no.such.key = 1\n");
  const auto r = run({"gen-data", "--config", conf, "--n", "3", "--out", (dir / "a").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("no.such.key"), std::string::npos);
}

TEST(Cli, ConfigRoundTrip) {
  const auto c = RunConfig::parse(kTinyConfig);
  EXPECT_EQ(RunConfig::parse(c.serialize()), c);
  EXPECT_EQ(RunConfig::parse(RunConfig{}.serialize()), RunConfig{});
  EXPECT_EQ(c.v2as.model_dim, 16u);
  EXPECT_EQ(RunConfig{}.v2as_decode.steps, 16u);
  EXPECT_EQ(RunConfig{}.v2as_decode.cfg_scale, 5.0);
  EXPECT_EQ(RunConfig{}.vs2a_decode_steps, (std::vector<std::size_t>{20, 10, 1, 1}));
  EXPECT_EQ(RunConfig{}.vs2a_cfg_scale, 2.5);
  EXPECT_EQ(RunConfig{}.train.batch_size, 32u);
  EXPECT_THROW(RunConfig::parse("decode.vs2a.steps = 1,2\n"), ConfigError);
  EXPECT_NE(c.hash(), RunConfig{}.hash());
}

TEST(Cli, GenDataIsDeterministic) {
  const auto dir = bvs::testing::temp_dir("cli_gen");
  const auto a = (dir / "a").string(), b = (dir / "b").string();
  const auto r = run({"gen-data", "--n", "100", "--out", a});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("samples 100"), std::string::npos);
  EXPECT_EQ(run({"gen-data", "--n", "100", "--out", b, "--workers", "4"}).code, 0);
  EXPECT_EQ(io::read_file(a), io::read_file(b));
  EXPECT_EQ(load_dataset(a).samples.size(), 100u);
}

TEST(Cli, SelfEvaluationIsPerfect) {
  const auto dir = bvs::testing::temp_dir("cli_self");
  const auto data = (dir / "d").string(), report = (dir / "r.tsv").string();
  ASSERT_EQ(run({"gen-data", "--n", "60", "--out", data}).code, 0);
  const auto r = run({"eval", "--generated", data, "--data", data, "--out", report});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = eval::parse_report(io::read_file(report));
  std::map<std::string, double> v;
  for (const auto& row : rows) v[row.metric] = row.value;
  EXPECT_EQ(v.at("wer"), 0.0);
  EXPECT_EQ(v.at("delta_wer"), 0.0);
  EXPECT_LE(v.at("fad"), 1e-6);
  EXPECT_EQ(v.at("lpaps_proxy"), 0.0);
  EXPECT_EQ(v.at("desync"), 0.0);
}

TEST(Cli, SilentGenerationsScoreWerOne) {
  const auto dir = bvs::testing::temp_dir("cli_silent");
  const auto data = (dir / "d").string(), gen = (dir / "g").string();
  ASSERT_EQ(run({"gen-data", "--n", "40", "--out", data}).code, 0);
  const auto ds = load_dataset(data);
  Generation g{RunConfig{}.hash(), {}};
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    GeneratedRecord rec{i, SemanticTokenSequence{fuse_streams(TokenSeq(100, 0), s.background, ds.config.vocab)}, {}};
    rec.acoustic = encode_acoustic(rec.semantic, ds.config.vocab);
    g.records.push_back(rec);
  }
  io::write_file(gen, encode_generation(g, 4));
  const auto r = run({"eval", "--generated", gen, "--data", data});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& row : eval::parse_report(r.out)) {
    if (row.metric == "wer") {
      EXPECT_EQ(row.value, 1.0);
    }
  }
  // Count mismatch is an input error.
  const auto small = (dir / "s").string();
  ASSERT_EQ(run({"gen-data", "--n", "10", "--out", small}).code, 0);
  EXPECT_EQ(run({"eval", "--generated", gen, "--data", small}).code, 1);
}

TEST(Cli, TrainIsReproducibleAndResumable) {
  Workspace w("cli_train");
  auto train = [&](const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--config", w.config, "--stage", "v2as", "--data", w.data, "--out", out};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };
  const auto a = train(w.path("a.ckpt"));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(train(w.path("b.ckpt")).code, 0);
  EXPECT_EQ(io::read_file(w.path("a.ckpt.log")), io::read_file(w.path("b.ckpt.log")));
  EXPECT_EQ(io::read_file(w.path("a.ckpt")), io::read_file(w.path("b.ckpt")));
  EXPECT_NE(a.out.find("step 10 loss"), std::string::npos);

  ASSERT_EQ(train(w.path("c.ckpt"), {"--steps", "5"}).code, 0);
  ASSERT_EQ(train(w.path("c.ckpt"), {"--resume", w.path("c.ckpt")}).code, 0);
  EXPECT_EQ(io::read_file(w.path("a.ckpt")), io::read_file(w.path("c.ckpt")));
  // The interrupted run also logs its stopping step.
  auto resumed_log = io::read_file(w.path("c.ckpt.log"));
  const auto at = resumed_log.find("step 5 ");
  ASSERT_NE(at, std::string::npos);
  resumed_log.erase(at, resumed_log.find('\n', at) + 1 - at);
  EXPECT_EQ(io::read_file(w.path("a.ckpt.log")), resumed_log);

  // A checkpoint from another configuration is refused.
  const auto other = w.path("other.conf");
  io::write_file(other, std::string(kTinyConfig) + "v2as.init_std = 0.05\n");
  const auto r = run({"train", "--config", other, "--stage", "v2as", "--data", w.data, "--out", w.path("d.ckpt"),
                      "--resume", w.path("a.ckpt")});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, Vs2aTrainLogsPerLayerLosses) {
  Workspace w("cli_vs2a");
  const auto r = run({"train", "--config", w.config, "--stage", "vs2a", "--data", w.data, "--out", w.path("v.ckpt"),
                      "--heldout", w.heldout});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* key : {"layer1", "layer2", "layer3", "layer4", "heldout layer_match"})
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
}

TEST(Cli, GenerateIsDeterministic) {
  Workspace w("cli_generate");
  ASSERT_EQ(run({"train", "--config", w.config, "--stage", "v2as", "--data", w.data, "--out", w.path("s1")}).code, 0);
  ASSERT_EQ(run({"train", "--config", w.config, "--stage", "vs2a", "--data", w.data, "--out", w.path("s2")}).code, 0);
  auto gen = [&](const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"generate", "--config", w.config, "--v2as", w.path("s1"), "--vs2a", w.path("s2"),
                                  "--data", w.heldout, "--out", out, "--steps", "4"};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };
  ASSERT_EQ(gen(w.path("g1")).code, 0);
  ASSERT_EQ(gen(w.path("g2"), {"--workers", "3"}).code, 0);
  EXPECT_EQ(io::read_file(w.path("g1")), io::read_file(w.path("g2")));
  const auto g = decode_generation(io::read_file(w.path("g1")));
  ASSERT_EQ(g.records.size(), 6u);
  EXPECT_EQ(g.records[0].source_index, 1000u);
  for (const auto& rec : g.records) {
    EXPECT_EQ(rec.acoustic.layers.size(), 4u);
    for (auto t : rec.semantic.tokens) EXPECT_LT(t, 528u);
  }

  const auto t = gen(w.path("g3"), {"--transcript", "1,2"});
  EXPECT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(gen(w.path("g4"), {"--transcript", ""}).code, 0);
  const auto bad = gen(w.path("g5"), {"--transcript", "3,77"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("77"), std::string::npos);
  EXPECT_EQ(gen(w.path("g6"), {"--speech-from", w.data}).code, 0);

  const auto e = run({"eval", "--config", w.config, "--generated", w.path("g1"), "--data", w.heldout,
                      "--fad-shrinkage", "1e-6"});
  EXPECT_EQ(e.code, 0) << e.err;
  for (const char* key : {"wer", "delta_wer", "fad", "lpaps_proxy", "desync"}) EXPECT_NE(e.out.find(key), std::string::npos);
}
