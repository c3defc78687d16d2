// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "markdiff/checkpoint.hpp"
#include "markdiff/config.hpp"
#include "markdiff/errors.hpp"
#include "markdiff/metrics.hpp"
#include "markdiff/trainer.hpp"
#include "test_util.hpp"

namespace markdiff {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, DefaultsValidateAndRoundTrip) {
  RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.lambda = 0.125;
  cfg.encoder_channels = {4, 8, 8, 8};
  cfg.out_dir = "elsewhere";
  cfg.lr_schedule = "cosine";
  const std::string text = config_to_json(cfg);
  const RunConfig back = config_from_json(text);
  EXPECT_EQ(config_to_json(back), text);
  EXPECT_EQ(back.lambda, 0.125);
  EXPECT_EQ(back.encoder_channels[0], 4u);
  EXPECT_EQ(back.out_dir, "elsewhere");
  EXPECT_EQ(config_from_json("{}").seed, RunConfig{}.seed);
}

TEST(Config, StrictParsing) {
  EXPECT_THROW(config_from_json(R"({"lamda": 0.1})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"lambda": "big"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"steps": -3})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"encoder_channels": [1, 2]})"), ConfigError);
  EXPECT_THROW(config_from_json("{\"lambda\": 0.1"), ConfigError);
  EXPECT_THROW(config_from_json("[1, 2]"), ConfigError);
}

TEST(Config, RangeValidation) {
  const auto bad = [](auto mutate) {
    RunConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](RunConfig& c) { c.lambda = -1.0; });
  bad([](RunConfig& c) { c.tau = 0.0; });
  bad([](RunConfig& c) { c.T = 0; });
  bad([](RunConfig& c) { c.beta_end = 1.0; });
  bad([](RunConfig& c) { c.beta_start = 0.5; });
  bad([](RunConfig& c) { c.lr = std::numeric_limits<double>::quiet_NaN(); });
  bad([](RunConfig& c) { c.lr_schedule = "step"; });
  bad([](RunConfig& c) { c.cl_denominator = "other"; });
  bad([](RunConfig& c) { c.num_negatives = c.batch; });
  bad([](RunConfig& c) { c.checkpoint_every = 0; });
}

TEST(Config, EnvironmentOverrides) {
  std::string a = "FSACDM_LAMBDA=0.25", b = "FSACDM_OUT_DIR=from_env", c = "FSACDM_STEPS=12", d = "PATH=/usr/bin",
              e = "FSACDM_ENCODER_CHANNELS=[2,4,4,4]";
  char* env[] = {a.data(), b.data(), c.data(), d.data(), e.data(), nullptr};
  RunConfig cfg;
  apply_env_overrides(cfg, env);
  EXPECT_EQ(cfg.lambda, 0.25);
  EXPECT_EQ(cfg.out_dir, "from_env");
  EXPECT_EQ(cfg.steps, 12u);
  EXPECT_EQ(cfg.encoder_channels[1], 4u);

  std::string unknown = "FSACDM_LAMBDAA=1";
  char* env2[] = {unknown.data(), nullptr};
  EXPECT_THROW(apply_env_overrides(cfg, env2), ConfigError);
  std::string typed = "FSACDM_STEPS=many";
  char* env3[] = {typed.data(), nullptr};
  EXPECT_THROW(apply_env_overrides(cfg, env3), ConfigError);
}

// ---------------------------------------------------------------------------
// Checkpoints

ParamSet sample_tensors() {
  RngStream rng(51, "ckpt");
  ParamSet p;
  p.add("a.weight", testing::random_array({3, 5}, rng));
  p.add("b.bias", testing::random_array({7}, rng));
  p.add("scalar", DenseArray::scalar(-0.0));
  DenseArray odd({2, 1, 3});
  odd[0] = std::numeric_limits<double>::denorm_min();
  odd[1] = -std::numeric_limits<double>::max();
  odd[2] = 1.0 / 3.0;
  p.add("c.odd", odd);
  return p;
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const ParamSet p = sample_tensors();
  const auto bytes = encode_checkpoint(p);
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FSAC");
  EXPECT_EQ(bytes[4], kCheckpointVersion);
  EXPECT_EQ(bytes[8], p.count());
  const ParamSet back = decode_checkpoint(bytes);
  ASSERT_TRUE(back.same_layout(p));
  for (const auto& [name, value] : p.entries()) {
    const auto& got = back.get(name);
    EXPECT_EQ(std::memcmp(got.data().data(), value.data().data(), value.size() * sizeof(double)), 0) << name;
  }
  EXPECT_TRUE(std::signbit(back.get("scalar")[0]));
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const auto dir = testing::scratch_dir("ckpt");
  save_checkpoint(dir / "x.fsac", p);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(dir / "x.fsac")), bytes);
  EXPECT_FALSE(fs::exists(dir / "x.fsac.tmp"));
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto bytes = encode_checkpoint(sample_tensors());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto flipped = bytes;
    flipped[i] ^= 0x10;
    EXPECT_THROW(decode_checkpoint(flipped), IoError) << "byte " << i;
  }
  for (std::size_t n = 0; n < bytes.size(); ++n)
    EXPECT_THROW(decode_checkpoint({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n)}), IoError);
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(decode_checkpoint(longer), IoError);
}

TEST(Checkpoint, FileErrors) {
  const auto dir = testing::scratch_dir("ckpt_io");
  EXPECT_THROW(load_checkpoint(dir / "missing.fsac"), IoError);
  EXPECT_THROW(save_checkpoint(dir / "no" / "such" / "dir" / "x.fsac", sample_tensors()), IoError);
}

// ---------------------------------------------------------------------------
// Training

class Training : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(testing::scratch_dir("training"));
    RunConfig cfg;
    cmd_corpus(cfg, *root_ / "corpus");
  }
  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }

  RunConfig config(const std::string& out) const {
    RunConfig cfg;
    cfg.corpus_dir = (*root_ / "corpus").string();
    cfg.out_dir = (*root_ / out).string();
    cfg.steps = 4;
    cfg.checkpoint_every = 2;
    cfg.lr = 1e-3;
    return cfg;
  }

  static fs::path* root_;
};

fs::path* Training::root_ = nullptr;

TEST_F(Training, LearningRateSchedule) {
  RunConfig cfg = config("lr");
  cfg.warmup_steps = 10;
  cfg.steps = 110;
  cfg.lr_schedule = "cosine";
  const Trainer t(cfg, read_corpus(cfg.corpus_dir));
  EXPECT_DOUBLE_EQ(t.learning_rate(0), cfg.lr / 10);
  EXPECT_DOUBLE_EQ(t.learning_rate(9), cfg.lr);
  EXPECT_DOUBLE_EQ(t.learning_rate(10), cfg.lr);
  EXPECT_NEAR(t.learning_rate(60), cfg.lr / 2, 1e-18);
  EXPECT_NEAR(t.learning_rate(110), 0.0, 1e-18);
  cfg.lr_schedule = "constant";
  EXPECT_EQ(Trainer(cfg, read_corpus(cfg.corpus_dir)).learning_rate(80), cfg.lr);
}

TEST_F(Training, LogAndCheckpointLayout) {
  const RunConfig cfg = config("plain");
  std::ostringstream progress;
  const auto s = cmd_train(cfg, progress);
  EXPECT_EQ(s.first_step, 1u);
  EXPECT_EQ(s.last_step, 4u);
  const auto rows = lines(slurp(s.loss_log));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], loss_log_header());
  EXPECT_EQ(rows[0], "step,lr,l_fa,elbo_anchor,elbo_pos,eubo_neg_term,l_cl,total");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::stringstream ss(rows[i]);
    std::string cell;
    std::getline(ss, cell, ',');
    EXPECT_EQ(std::stoul(cell), i);
    int cells = 1;
    while (std::getline(ss, cell, ',')) {
      EXPECT_TRUE(std::isfinite(std::stod(cell))) << rows[i];
      ++cells;
    }
    EXPECT_EQ(cells, 8);
  }
  const ParamSet state = load_checkpoint(s.checkpoint);
  EXPECT_EQ(state.get("train.step")[0], 4.0);
  const ParamSet params = model_params(state);
  EXPECT_EQ(params.count() * 3 + 1, state.count());
  for (const auto& [name, _] : params.entries()) {
    EXPECT_FALSE(name.starts_with("adam.")) << name;
    EXPECT_TRUE(state.contains("adam.m." + name));
  }
  EXPECT_EQ(config_from_json(slurp(fs::path(cfg.out_dir) / "config.json")).steps, 4u);
}

TEST_F(Training, ResumeMatchesUninterruptedRun) {
  const RunConfig full = config("full");
  cmd_train(full, std::cerr);

  RunConfig part = config("part");
  part.steps = 2;
  cmd_train(part, std::cerr);
  RunConfig rest = config("part");
  rest.resume_from = (fs::path(part.out_dir) / "checkpoint.fsac").string();
  const auto s = cmd_train(rest, std::cerr);
  EXPECT_EQ(s.first_step, 3u);

  EXPECT_EQ(slurp(fs::path(full.out_dir) / "checkpoint.fsac"), slurp(fs::path(rest.out_dir) / "checkpoint.fsac"));
  EXPECT_EQ(slurp(fs::path(full.out_dir) / "loss.csv"), slurp(fs::path(rest.out_dir) / "loss.csv"));
}

TEST_F(Training, ResumeTruncatesLogPastCheckpoint) {
  const RunConfig full = config("trunc_ref");
  cmd_train(full, std::cerr);
  RunConfig a = config("trunc");
  cmd_train(a, std::cerr);
  // Simulate a crash after step 3 with the last checkpoint at step 2.
  RunConfig two = config("trunc_two");
  two.steps = 2;
  cmd_train(two, std::cerr);
  RunConfig rest = config("trunc");
  rest.resume_from = (fs::path(two.out_dir) / "checkpoint.fsac").string();
  cmd_train(rest, std::cerr);
  EXPECT_EQ(slurp(fs::path(full.out_dir) / "loss.csv"), slurp(fs::path(rest.out_dir) / "loss.csv"));
}

TEST_F(Training, ThreadCountDoesNotChangeResults) {
  RunConfig cfg = config("threads");
  cfg.anchors_per_step = 3;
  Trainer one(cfg, read_corpus(cfg.corpus_dir));
  cfg.threads = 2;
  Trainer two(cfg, read_corpus(cfg.corpus_dir));
  for (int i = 0; i < 2; ++i) EXPECT_EQ(loss_log_row(one.step()), loss_log_row(two.step()));
  EXPECT_EQ(encode_checkpoint(one.state()), encode_checkpoint(two.state()));
}

TEST_F(Training, RestoreRejectsForeignState) {
  RunConfig cfg = config("foreign");
  Trainer t(cfg, read_corpus(cfg.corpus_dir));
  t.step();
  cfg.d_model = 32;
  Trainer other(cfg, read_corpus(cfg.corpus_dir));
  EXPECT_THROW(other.restore(t.state()), ConfigError);
  EXPECT_THROW(other.restore(model_params(t.state())), ConfigError);
}

TEST_F(Training, NonFiniteStepKeepsLastGoodCheckpoint) {
  RunConfig cfg = config("blowup");
  cfg.lr = 1e300;
  cfg.checkpoint_every = 100;
  cfg.steps = 6;
  EXPECT_THROW(cmd_train(cfg, std::cerr), NumericError);
  const ParamSet state = load_checkpoint(fs::path(cfg.out_dir) / "checkpoint.fsac");
  const double done = state.get("train.step")[0];
  EXPECT_LT(done, 6.0);
  for (const auto& [name, value] : state.entries()) EXPECT_TRUE(value.all_finite()) << name;
  EXPECT_EQ(lines(slurp(fs::path(cfg.out_dir) / "loss.csv")).size(), static_cast<std::size_t>(done) + 1);
}

TEST_F(Training, MissingCorpusIsIoError) {
  RunConfig cfg = config("nocorpus");
  cfg.corpus_dir = (*root_ / "absent").string();
  EXPECT_THROW(cmd_train(cfg, std::cerr), IoError);
}

TEST_F(Training, SampleFromCheckpoint) {
  RunConfig cfg = config("sampled");
  cfg.steps = 1;
  cmd_train(cfg, std::cerr);
  const fs::path ckpt = fs::path(cfg.out_dir) / "checkpoint.fsac";
  const auto out = *root_ / "sampled" / "images";
  const auto files = cmd_sample(cfg, ckpt, {"x^{2}+1"}, out);
  ASSERT_EQ(files.size(), 1u);
  const auto img = read_image(files[0]);
  EXPECT_EQ(img.height, cfg.image_height);
  EXPECT_EQ(img.width, cfg.image_width);
  const auto again = cmd_sample(cfg, ckpt, {"x^{2}+1"}, *root_ / "sampled" / "again");
  EXPECT_EQ(slurp(files[0]), slurp(again[0]));

  EXPECT_THROW(cmd_sample(cfg, ckpt, {"\\frac{a}"}, out), ParseError);
  RunConfig other = cfg;
  other.d_model = 32;
  EXPECT_THROW(cmd_sample(other, ckpt, {"a"}, out), ConfigError);
  EXPECT_THROW(cmd_sample(cfg, *root_ / "absent.fsac", {"a"}, out), IoError);
}

// ---------------------------------------------------------------------------
// Executable exit codes

class Executable : public ::testing::Test {
 protected:
  void SetUp() override {
    const char* cli = std::getenv("MARKDIFF_CLI");
    if (cli == nullptr || !fs::exists(cli)) GTEST_SKIP() << "MARKDIFF_CLI not set";
    cli_ = cli;
    dir_ = testing::scratch_dir("exe");
  }

  int run(const std::string& args, const std::string& env = "") const {
    const std::string cmd = "cd '" + dir_.string() + "' && " + env + " '" + cli_ + "' " + args + " >out.txt 2>err.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string cli_;
  fs::path dir_;
};

TEST_F(Executable, UsageErrors) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("gradcheck --no-such-flag"), 2);
  EXPECT_EQ(run("--seed notanumber gradcheck"), 2);
}

TEST_F(Executable, ConfigErrors) {
  spit(dir_ / "typo.json", R"({"lamda": 0.1})");
  EXPECT_EQ(run("--config typo.json corpus"), 2);
  spit(dir_ / "range.json", R"({"tau": -1})");
  EXPECT_EQ(run("--config range.json corpus"), 2);
  EXPECT_EQ(run("corpus", "FSACDM_NOT_A_KEY=1"), 2);
  EXPECT_EQ(run("--config absent.json corpus"), 4);
}

TEST_F(Executable, PipelineAndIoErrors) {
  spit(dir_ / "tiny.json", R"({"steps": 2, "checkpoint_every": 1, "corpus_size": 8})");
  EXPECT_EQ(run("--config tiny.json train"), 4);
  EXPECT_EQ(run("--config tiny.json corpus"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "corpus" / "corpus.jsonl"));
  EXPECT_EQ(run("--config tiny.json --out r train"), 0);
  EXPECT_EQ(lines(slurp(dir_ / "r" / "loss.csv")).size(), 3u);
  EXPECT_EQ(run("--config tiny.json sample --checkpoint r/checkpoint.fsac --markup 'a+b' --out s"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "s"));
  EXPECT_EQ(run("--config tiny.json sample --checkpoint r/checkpoint.fsac --markup '\\frac{a'"), 2);
  spit(dir_ / "junk.fsac", "FSAC not really");
  EXPECT_EQ(run("--config tiny.json sample --checkpoint junk.fsac --markup a"), 4);
  EXPECT_EQ(run("eval missing corpus/images"), 4);
  EXPECT_EQ(run("eval corpus/images corpus/images --out m"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "m" / "metrics.csv"));

  spit(dir_ / "blowup.json", R"({"steps": 6, "lr": 1e300})");
  EXPECT_EQ(run("--config blowup.json --out b train"), 3);
  EXPECT_TRUE(fs::exists(dir_ / "b" / "checkpoint.fsac"));
}

TEST_F(Executable, Checks) {
  EXPECT_EQ(run("gradcheck"), 0);
  EXPECT_NE(slurp(dir_ / "out.txt").find(" pass"), std::string::npos);
  EXPECT_EQ(slurp(dir_ / "out.txt").find(" FAIL"), std::string::npos);
  EXPECT_EQ(run("verify-bounds", "FSACDM_VERIFY_SAMPLES=100000"), 0);
  EXPECT_EQ(run("verify-bounds", "FSACDM_VERIFY_SAMPLES=10"), 2);
}

}  // namespace
}  // namespace markdiff
