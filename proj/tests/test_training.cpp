#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "slt/training.hpp"
#include "support/memorization.hpp"
#include "support/synthetic.hpp"

using namespace slt;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("slt_training_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<EncodedPair> random_pairs(std::size_t n, std::uint64_t seed, std::size_t max_len = 9) {
  CounterRng rng(seed);
  std::vector<EncodedPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    EncodedPair p;
    p.id = i;
    const auto ls = 1 + rng.below(max_len), lt = 1 + rng.below(max_len);
    for (std::size_t k = 0; k < ls; ++k) p.source.push_back(static_cast<TokenId>(4 + rng.below(20)));
    for (std::size_t k = 0; k < lt; ++k) p.target.push_back(static_cast<TokenId>(4 + rng.below(20)));
    out.push_back(std::move(p));
  }
  return out;
}

// Mini training setup shared by the loop tests: tiny model on the weather corpus.
struct Toy {
  fixtures::MemorizationSetup s = fixtures::memorization_setup();
  Toy() {
    s.model.d_model = 16;
    s.model.num_heads = 2;
    s.model.ffn_dim = 32;
    s.model.num_layers = 1;
    s.training.max_epochs = 4;
    s.training.warmup_steps = 40;
    s.training.initial_lr = 1.0;
  }
};

}  // namespace

TEST(Noam, ClosedFormAtWarmup) {
  const double expected = 0.5 / std::sqrt(512.0) / std::sqrt(3000.0);
  EXPECT_NEAR(noam_lr(3000, 0.5, 512, 3000), expected, 1e-12);
  EXPECT_NEAR(noam_lr(3000, 0.5, 512, 3000), 4.034e-4, 5e-8);
}

TEST(Noam, ContinuousAndPeakAtWarmup) {
  for (std::size_t w : {1u, 7u, 1000u, 3000u, 8000u}) {
    const double peak = noam_lr(w, 0.2, 256, w);
    const double s = static_cast<double>(w);
    EXPECT_NEAR(0.2 / std::sqrt(256.0) * s * std::pow(s, -1.5), peak, 1e-12);
    EXPECT_NEAR(0.2 / std::sqrt(256.0) / std::sqrt(s), peak, 1e-12);
    if (w > 1) {
      EXPECT_LT(noam_lr(w - 1, 0.2, 256, w), peak);
    }
    EXPECT_LT(noam_lr(w + 1, 0.2, 256, w), peak);
  }
}

TEST(Noam, LinearWarmupThenInverseSqrt) {
  const std::size_t w = 400;
  for (std::size_t s = 1; s < w; s += 37) {
    EXPECT_NEAR(noam_lr(2 * s, 1.0, 64, w) / noam_lr(s, 1.0, 64, w), s * 2 <= w ? 2.0 : noam_lr(2 * s, 1.0, 64, w) / noam_lr(s, 1.0, 64, w), 1e-12);
  }
  EXPECT_NEAR(noam_lr(2 * w, 0.5, 512, w) / noam_lr(w, 0.5, 512, w), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_THROW(noam_lr(0, 0.5, 512, w), ContractError);
}

TEST(Adam, FirstStepClosedForm) {
  Tensor<double> w({2, 3}, {0.5, -1.0, 2.0, 0.0, 3.0, -0.25}, true);
  const std::vector<double> g{0.3, -2.0, 1e-3, 5.0, -1e-6, 0.7};
  std::copy(g.begin(), g.end(), w.mutable_grad().begin());
  std::vector<std::pair<std::string, Tensor<double>>> params{{"w", w}};
  AdamState<double> state;
  const AdamOptions opt{0.9, 0.998, 1e-8};
  const double lr = 0.01;
  const std::vector<double> before(w.data().begin(), w.data().end());
  adam_step(params, state, lr, opt);
  for (std::size_t i = 0; i < g.size(); ++i) {
    // m_hat = g, v_hat = g^2 after bias correction
    const double expected = before[i] - lr * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(w.data()[i], expected, 1e-10);
    EXPECT_NEAR(w.data()[i] - before[i], -lr * (g[i] > 0 ? 1.0 : -1.0), 1e-10 + lr * 1e-8 / std::abs(g[i]));
  }
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, SecondStepMatchesReference) {
  Tensor<double> w({1}, {1.0}, true);
  std::vector<std::pair<std::string, Tensor<double>>> params{{"w", w}};
  AdamState<double> state;
  const AdamOptions opt{0.9, 0.998, 1e-8};
  w.mutable_grad()[0] = 0.5;
  adam_step(params, state, 0.1, opt);
  w.mutable_grad()[0] = -0.2;
  adam_step(params, state, 0.1, opt);
  const double m = 0.9 * (0.1 * 0.5) + 0.1 * -0.2;
  const double v = 0.998 * (0.002 * 0.25) + 0.002 * 0.04;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.998 * 0.998);
  const double w1 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
  EXPECT_NEAR(w.data()[0], w1 - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor<double> w({4}, {1, 2, 3, 4}, true);
  std::vector<std::pair<std::string, Tensor<double>>> params{{"w", w}};
  AdamState<double> state;
  adam_step(params, state, 0.5, AdamOptions{});
  EXPECT_EQ(std::vector<double>(w.data().begin(), w.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Tensor<float> a({2}, {1, 2}, true), b({2}, {3, 4}, true);
  b.mutable_grad()[1] = std::numeric_limits<float>::quiet_NaN();
  std::vector<std::pair<std::string, Tensor<float>>> params{{"encoder.ok", a}, {"decoder.bad", b}};
  AdamState<float> state;
  a.mutable_grad()[0] = 1.0f;
  try {
    adam_step(params, state, 0.1, AdamOptions{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.bad"), std::string::npos);
  }
  EXPECT_EQ(a.data()[0], 1.0f);
  EXPECT_EQ(state.step, 0u);
}

TEST(Batching, IsAPartition) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto data = random_pairs(137, seed);
    const auto batches = make_batches(data, 40, seed);
    std::map<std::size_t, int> seen;
    std::size_t tokens = 0;
    for (const auto& b : batches) {
      EXPECT_LE(b.size() * b.target_width, 40u);
      for (std::size_t r = 0; r < b.size(); ++r) {
        ++seen[b.indices[r]];
        EXPECT_EQ(strip_padding(b.target_row(r)), data[b.indices[r]].target);
        EXPECT_EQ(strip_padding(b.source_row(r)), data[b.indices[r]].source);
      }
      tokens += b.target_tokens;
    }
    ASSERT_EQ(seen.size(), data.size());
    for (const auto& [idx, count] : seen) EXPECT_EQ(count, 1);
    std::size_t total = 0;
    for (const auto& p : data) total += p.target.size();
    EXPECT_EQ(tokens, total);
  }
}

TEST(Batching, PadsWithPadId) {
  const auto data = random_pairs(30, 3);
  for (const auto& b : make_batches(data, 50, 1))
    for (std::size_t r = 0; r < b.size(); ++r) {
      const auto row = b.target_row(r);
      const auto len = data[b.indices[r]].target.size();
      for (std::size_t c = len; c < row.size(); ++c) EXPECT_EQ(row[c], Vocabulary::pad_id);
    }
}

TEST(Batching, DeterministicPerSeed) {
  const auto data = random_pairs(80, 5);
  const auto a = make_batches(data, 30, 11), b = make_batches(data, 30, 11), c = make_batches(data, 30, 12);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].indices, b[i].indices);
  bool differs = a.size() != c.size();
  for (std::size_t i = 0; !differs && i < a.size(); ++i) differs = a[i].indices != c[i].indices;
  EXPECT_TRUE(differs);
}

TEST(Batching, LargeBudgetGivesSingleBatch) {
  const auto data = random_pairs(25, 2);
  std::size_t longest = 0;
  for (const auto& p : data) longest = std::max(longest, p.target.size());
  // the budget counts padded tokens
  EXPECT_EQ(make_batches(data, data.size() * longest, 0).size(), 1u);
  EXPECT_GT(make_batches(data, data.size() * longest - 1, 0).size(), 1u);
  std::vector<EncodedPair> same(data.begin(), data.begin() + 10);
  std::size_t total = 0;
  for (auto& p : same) {
    p.target.resize(4, 5);
    total += 4;
  }
  EXPECT_EQ(make_batches(same, total, 0).size(), 1u);
  EXPECT_EQ(make_batches(data, 25, 0, true).size(), 1u);
}

TEST(Batching, SentenceCountMode) {
  const auto data = random_pairs(23, 2);
  const auto batches = make_batches(data, 5, 0, true);
  EXPECT_EQ(batches.size(), 5u);
  for (const auto& b : batches) EXPECT_LE(b.size(), 5u);
}

TEST(Batching, OversizeSentenceIsContractError) {
  auto data = random_pairs(5, 2, 4);
  data[3].target.assign(30, 5);
  EXPECT_THROW(make_batches(data, 20, 0), ContractError);
  EXPECT_THROW(make_batches({}, 20, 0), ContractError);
}

TEST(EarlyStopping, StopsExactlyPatienceEvaluationsPastBest) {
  EarlyStopping es(5);
  EXPECT_TRUE(es.update(10.0));
  for (int i = 1; i <= 5; ++i) {
    EXPECT_FALSE(es.should_stop());
    EXPECT_FALSE(es.update(10.0 - i));
  }
  EXPECT_TRUE(es.should_stop());
  EXPECT_EQ(*es.best(), 10.0);
}

TEST(EarlyStopping, TiesDoNotResetPatience) {
  EarlyStopping es(2);
  es.update(1.0);
  es.update(1.0);
  EXPECT_FALSE(es.should_stop());
  es.update(1.0);
  EXPECT_TRUE(es.should_stop());
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.warmup_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.label_smoothing = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Training, LossAtInitializationIsNearLogV) {
  ModelConfig c;
  c.num_layers = 1;
  c.d_model = 16;
  c.num_heads = 2;
  c.ffn_dim = 32;
  c.dropout = 0.0;
  c.src_vocab = 200;
  c.tgt_vocab = 200;
  CounterRng rng(3);
  TransformerModel<double> m(c, rng);
  std::vector<EncodedPair> data;
  CounterRng draw(4);
  for (std::size_t i = 0; i < 40; ++i) {
    EncodedPair p;
    for (std::size_t k = 0; k < 8; ++k) p.source.push_back(static_cast<TokenId>(4 + draw.below(196)));
    for (std::size_t k = 0; k < 8; ++k) p.target.push_back(static_cast<TokenId>(4 + draw.below(196)));
    data.push_back(std::move(p));
  }
  const double loss = mean_loss(m, data, 0.0);
  EXPECT_NEAR(loss, std::log(200.0), 0.05 * std::log(200.0));
}

TEST(Training, LoopLogsHalfEpochEvaluations) {
  Toy t;
  t.s.training.patience = 100;
  CounterRng rng(1);
  TransformerModel<float> m(t.s.model, rng);
  const auto res = train(m, t.s.train, t.s.dev, t.s.target_vocab, t.s.training);
  EXPECT_EQ(res.log.records.size(), 8u);
  EXPECT_EQ(res.log.epoch_losses.size(), 4u);
  EXPECT_EQ(res.log.stop_reason, "max_epochs");
  for (std::size_t i = 1; i < res.log.records.size(); ++i) EXPECT_GT(res.log.records[i].step, res.log.records[i - 1].step);
  // best record holds the maximum dev BLEU-4 over all evaluations
  ASSERT_NE(res.log.best_record(), nullptr);
  for (const auto& r : res.log.records) EXPECT_LE(r.dev_bleu4, res.log.best_record()->dev_bleu4);
  EXPECT_NEAR(bleu(greedy_translations(res.best_model, t.s.dev.pairs, t.s.target_vocab), t.s.dev.references, 4).score,
              res.log.best_record()->dev_bleu4, 1e-9);
}

TEST(Training, EarlyStopsWithPatience) {
  Toy t;
  t.s.training.patience = 1;
  t.s.training.initial_lr = 1e-9;  // nothing moves, so BLEU never improves
  t.s.training.max_epochs = 50;
  CounterRng rng(1);
  TransformerModel<float> m(t.s.model, rng);
  const auto res = train(m, t.s.train, t.s.dev, t.s.target_vocab, t.s.training);
  EXPECT_EQ(res.log.stop_reason, "early_stopping");
  EXPECT_EQ(res.log.records.size(), 2u);
  EXPECT_EQ(*res.log.best, 0u);
}

TEST(Training, WritesCheckpointsAndLogDeterministically) {
  Toy t;
  t.s.training.max_epochs = 2;
  auto run = [&](const std::string& name) {
    auto cfg = t.s.training;
    cfg.output_dir = fresh_dir(name).string();
    CounterRng rng(9);
    TransformerModel<float> m(t.s.model, rng);
    return train(m, t.s.train, t.s.dev, t.s.target_vocab, cfg);
  };
  const auto a = run("det_a");
  const auto b = run("det_b");
  ASSERT_FALSE(a.best_checkpoint.empty());
  EXPECT_TRUE(fs::exists(a.best_checkpoint));
  EXPECT_EQ(slurp(a.best_checkpoint), slurp(b.best_checkpoint));
  EXPECT_EQ(fs::path(a.best_checkpoint).filename(), fs::path(b.best_checkpoint).filename());
  EXPECT_NE(fs::path(a.best_checkpoint).filename().string().find("step"), std::string::npos);
  EXPECT_EQ(a.log.records.front().checkpoint, fs::path(a.best_checkpoint).filename().string());
  EXPECT_EQ(slurp(fs::path(a.best_checkpoint).parent_path() / "train_log.jsonl"),
            slurp(fs::path(b.best_checkpoint).parent_path() / "train_log.jsonl"));
  const auto line = slurp(fs::path(a.best_checkpoint).parent_path() / "train_log.jsonl");
  const auto first = nlohmann::json::parse(line.substr(0, line.find('\n')));
  for (const char* key : {"step", "lr", "dev_loss", "dev_bleu4"}) EXPECT_TRUE(first.contains(key)) << key;
}

TEST(Training, EmptySplitsRejected) {
  Toy t;
  CounterRng rng(1);
  TransformerModel<float> m(t.s.model, rng);
  EXPECT_THROW(train(m, {}, t.s.dev, t.s.target_vocab, t.s.training), ConfigError);
  EXPECT_THROW(train(m, t.s.train, DevSet{}, t.s.target_vocab, t.s.training), ConfigError);
}

TEST(Training, MemorizesToyCorpusWithNonIncreasingLoss) {
  auto s = fixtures::memorization_setup();
  CounterRng rng(1);
  TransformerModel<float> m(s.model, rng);
  const auto res = train(m, s.train, s.dev, s.target_vocab, s.training);
  const auto& losses = res.log.epoch_losses;
  ASSERT_GE(losses.size(), 5u);
  for (std::size_t e = 1; e < losses.size(); ++e) EXPECT_LE(losses[e], losses[e - 1] + 1e-3) << "epoch " << e + 1;
  EXPECT_GT(token_accuracy(res.best_model, s.train), 0.99);
  const auto hyps = greedy_translations(res.best_model, s.train, s.target_vocab);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) exact += hyps[i] == s.dev.references[i];
  EXPECT_GE(exact, 48u);
}

TEST(Summary, PopulationStatistics) {
  std::vector<SeedRun> runs(3);
  const double b4[] = {10.0, 20.0, 30.0};
  for (std::size_t i = 0; i < 3; ++i) runs[i].dev.bleu[3] = b4[i];
  const auto s = summarize_runs(runs);
  EXPECT_DOUBLE_EQ(s.at("dev.bleu4").mean, 20.0);
  EXPECT_DOUBLE_EQ(s.at("dev.bleu4").stddev, std::sqrt(200.0 / 3.0));
  EXPECT_EQ(s.count("test.bleu4"), 0u);
}

TEST(MultiSeed, SingleSeedHasZeroSpread) {
  Toy t;
  t.s.training.max_epochs = 1;
  const auto data = prepare_data(fixtures::synthetic_corpus(30, 10, 10, 3), t.s.source_vocab, t.s.target_vocab);
  DecodeConfig dc;
  auto cfg = t.s.model;
  const auto report = multi_seed_run<float>(cfg, t.s.training, dc, data, {5});
  ASSERT_EQ(report.runs.size(), 1u);
  EXPECT_EQ(report.summary.at("dev.bleu4").stddev, 0.0);
  EXPECT_EQ(report.summary.at("dev.bleu4").mean, report.runs[0].dev.bleu[3]);
  EXPECT_TRUE(report.runs[0].test.has_value());
  const auto twice = multi_seed_run<float>(cfg, t.s.training, dc, data, {5, 5});
  EXPECT_EQ(twice.summary.at("dev.bleu4").stddev, 0.0);
  EXPECT_THROW(multi_seed_run<float>(cfg, t.s.training, dc, data, {}), ConfigError);
}

TEST(MultiSeed, ThreeSeedsThreeRunDirectories) {
  Toy t;
  t.s.training.max_epochs = 1;
  const auto dir = fresh_dir("multi");
  t.s.training.output_dir = dir.string();
  const auto data = prepare_data(fixtures::synthetic_corpus(30, 10, 0, 3), t.s.source_vocab, t.s.target_vocab);
  const auto report = multi_seed_run<float>(t.s.model, t.s.training, DecodeConfig{}, data, {1, 2, 3});
  ASSERT_EQ(report.runs.size(), 3u);
  std::set<std::string> checkpoints;
  for (const auto& r : report.runs) {
    EXPECT_TRUE(fs::exists(r.checkpoint));
    checkpoints.insert(r.checkpoint);
  }
  EXPECT_EQ(checkpoints.size(), 3u);
  for (const char* d : {"seed_1", "seed_2", "seed_3"}) EXPECT_TRUE(fs::is_directory(dir / d));
  const auto j = report.to_json();
  EXPECT_EQ(j["runs"].size(), 3u);
  EXPECT_TRUE(j["summary"].contains("dev.bleu4"));
}
