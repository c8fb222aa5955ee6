#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "slt/checkpoint.hpp"
#include "slt/corpus.hpp"
#include "slt/decoding.hpp"
#include "slt/metrics.hpp"
#include "slt/random.hpp"
#include "slt/transformer.hpp"

namespace slt {

struct TrainConfig {
  double initial_lr = 0.5;
  std::size_t warmup_steps = 3000;
  std::size_t batch_tokens = 2048;
  bool batch_by_sentences = false;  // batch_tokens then counts sentences
  double label_smoothing = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.998;
  double adam_eps = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables clipping
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 1;
  std::string output_dir;  // empty: no files written
  std::map<std::string, std::string> checkpoint_metadata;

  void validate() const {
    if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (batch_tokens < 1) throw ConfigError("batch_tokens must be >= 1");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0,1)");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  }
};

// lr = initial * d^-0.5 * min(step^-0.5, step * warmup^-1.5)
inline double noam_lr(std::size_t step, double initial_lr, std::size_t d_model, std::size_t warmup_steps) {
  if (step < 1) throw ContractError("noam_lr: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return initial_lr * std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::size_t step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.998;
  double eps = 1e-8;
};

// One bias-corrected Adam update. The step counter is advanced first; a
// non-finite gradient aborts before any parameter is touched.
template <typename T>
void adam_step(std::vector<std::pair<std::string, Tensor<T>>>& params, AdamState<T>& state, double lr,
               const AdamOptions& opt) {
  for (auto& [name, p] : params) {
    for (T g : p.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in parameter " + name);
    }
  }
  if (state.first_moment.empty()) {
    for (auto& [name, p] : params) {
      state.first_moment.emplace_back(p.size(), T(0));
      state.second_moment.emplace_back(p.size(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) throw ContractError("optimizer state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].second;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.size()) throw ContractError("moment shape mismatch for " + params[k].first);
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = opt.beta1 * static_cast<double>(m[i]) + (1.0 - opt.beta1) * gi;
      const double vi = opt.beta2 * static_cast<double>(v[i]) + (1.0 - opt.beta2) * gi * gi;
      m[i] = T(mi);
      v[i] = T(vi);
      w[i] = T(static_cast<double>(w[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + opt.eps));
    }
  }
}

struct EncodedPair {
  std::size_t id = 0;
  std::vector<TokenId> source;
  std::vector<TokenId> target;  // without bos/eos
};

inline std::vector<EncodedPair> encode_pairs(const std::vector<SentencePair>& pairs, const Vocabulary& src,
                                             const Vocabulary& tgt) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.id, encode(p.source, src), encode(p.target, tgt)});
  return out;
}

struct Batch {
  std::vector<std::size_t> indices;  // positions in the encoded corpus
  std::size_t source_width = 0;
  std::size_t target_width = 0;
  std::vector<TokenId> source;  // [n, source_width], padded with pad_id
  std::vector<TokenId> target;  // [n, target_width], padded with pad_id
  std::size_t source_tokens = 0;
  std::size_t target_tokens = 0;

  std::size_t size() const { return indices.size(); }

  std::span<const TokenId> source_row(std::size_t i) const {
    return std::span<const TokenId>(source).subspan(i * source_width, source_width);
  }
  std::span<const TokenId> target_row(std::size_t i) const {
    return std::span<const TokenId>(target).subspan(i * target_width, target_width);
  }
};

// Length-bucketed batches whose padded target size (sentences x longest
// target) stays within `batch_tokens`. Same seed, same batches.
inline std::vector<Batch> make_batches(const std::vector<EncodedPair>& data, std::size_t batch_tokens,
                                       std::uint64_t seed, bool by_sentences = false) {
  if (data.empty()) throw ContractError("make_batches: corpus is empty");
  if (batch_tokens == 0) throw ContractError("make_batches: batch size must be positive");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
    if (!by_sentences && data[i].target.size() > batch_tokens) {
      throw ContractError("sentence " + std::to_string(data[i].id) + " has " + std::to_string(data[i].target.size()) +
                          " target tokens, more than batch_tokens=" + std::to_string(batch_tokens));
    }
  }
  CounterRng rng(seed);
  shuffle(order, rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (data[a].target.size() != data[b].target.size()) return data[a].target.size() < data[b].target.size();
    return data[a].source.size() < data[b].source.size();
  });

  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> current;
  std::size_t width = 0;
  for (std::size_t idx : order) {
    const std::size_t len = data[idx].target.size();
    const std::size_t new_width = std::max(width, len);
    const bool fits = by_sentences ? current.size() + 1 <= batch_tokens : (current.size() + 1) * new_width <= batch_tokens;
    if (!current.empty() && !fits) {
      groups.push_back(std::move(current));
      current.clear();
      width = 0;
    }
    current.push_back(idx);
    width = std::max(width, len);
  }
  if (!current.empty()) groups.push_back(std::move(current));
  shuffle(groups, rng);

  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (auto& g : groups) {
    Batch b;
    b.indices = std::move(g);
    for (std::size_t idx : b.indices) {
      b.source_width = std::max(b.source_width, data[idx].source.size());
      b.target_width = std::max(b.target_width, data[idx].target.size());
    }
    b.source.assign(b.size() * b.source_width, Vocabulary::pad_id);
    b.target.assign(b.size() * b.target_width, Vocabulary::pad_id);
    for (std::size_t r = 0; r < b.size(); ++r) {
      const auto& p = data[b.indices[r]];
      std::copy(p.source.begin(), p.source.end(), b.source.begin() + static_cast<std::ptrdiff_t>(r * b.source_width));
      std::copy(p.target.begin(), p.target.end(), b.target.begin() + static_cast<std::ptrdiff_t>(r * b.target_width));
      b.source_tokens += p.source.size();
      b.target_tokens += p.target.size();
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

inline std::vector<TokenId> strip_padding(std::span<const TokenId> row) {
  std::vector<TokenId> out;
  for (TokenId t : row) {
    if (t != Vocabulary::pad_id) out.push_back(t);
  }
  return out;
}

struct ValidationRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_bleu4 = 0.0;
  std::string checkpoint;  // file name inside the run directory

  nlohmann::json to_json() const {
    return {{"step", step},           {"epoch", epoch},         {"lr", lr},
            {"train_loss", train_loss}, {"dev_loss", dev_loss}, {"dev_bleu4", dev_bleu4},
            {"checkpoint", checkpoint}};
  }
};

struct TrainLog {
  std::vector<ValidationRecord> records;
  std::optional<std::size_t> best;  // index into records
  std::vector<double> epoch_losses;  // mean training loss per epoch
  std::string stop_reason;

  const ValidationRecord* best_record() const { return best ? &records[*best] : nullptr; }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& r : records) out += r.to_json().dump() + '\n';
    return out;
  }
};

// Stops once `patience` consecutive evaluations fail to beat the best score.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when `score` is a new best.
  bool update(double score) {
    if (!has_best_ || score > best_) {
      best_ = score;
      has_best_ = true;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }

  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t evaluations_since_best() const { return since_best_; }
  std::optional<double> best() const { return has_best_ ? std::optional<double>(best_) : std::nullopt; }

 private:
  std::size_t patience_;
  std::size_t since_best_ = 0;
  double best_ = 0.0;
  bool has_best_ = false;
};

// Dev split as the training loop needs it: encoded pairs plus the raw
// reference sentences BLEU is computed against.
struct DevSet {
  std::vector<EncodedPair> pairs;
  std::vector<Sentence> sources;
  std::vector<Sentence> references;
};

inline DevSet make_dev_set(const std::vector<SentencePair>& pairs, const Vocabulary& src, const Vocabulary& tgt) {
  DevSet dev;
  dev.pairs = encode_pairs(pairs, src, tgt);
  for (const auto& p : pairs) {
    dev.sources.push_back(p.source);
    dev.references.push_back(p.target);
  }
  return dev;
}

template <typename T>
double mean_loss(const TransformerModel<T>& model, const std::vector<EncodedPair>& data, double label_smoothing) {
  NoGradGuard guard;
  ForwardContext ctx;
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& p : data) {
    total += static_cast<double>(model.loss(p.source, p.target, label_smoothing, ctx, 1.0).item());
    tokens += p.target.size() + 1;
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

// Fraction of teacher-forced positions (including eos) whose argmax is the gold token.
template <typename T>
double token_accuracy(const TransformerModel<T>& model, const std::vector<EncodedPair>& data) {
  NoGradGuard guard;
  ForwardContext ctx;
  std::size_t correct = 0, total = 0;
  for (const auto& p : data) {
    std::vector<TokenId> input{Vocabulary::bos_id};
    input.insert(input.end(), p.target.begin(), p.target.end());
    const auto memory = model.encode_source(p.source, ctx);
    const auto res = model.decode(memory, input, ctx);
    const std::size_t v = res.logits.cols();
    for (std::size_t r = 0; r < input.size(); ++r) {
      const TokenId gold = r < p.target.size() ? p.target[r] : Vocabulary::eos_id;
      const auto row = res.logits.data().subspan(r * v, v);
      const auto arg = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += arg == gold;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

template <typename T>
std::vector<Sentence> greedy_translations(const TransformerModel<T>& model, const std::vector<EncodedPair>& data,
                                          const Vocabulary& target_vocab) {
  DecodeConfig cfg;
  cfg.beam_width = 1;
  cfg.replace_unk = false;
  std::vector<Sentence> out;
  out.reserve(data.size());
  for (const auto& p : data) out.push_back(decode(greedy_decode(model, p.source, cfg).output(), target_vocab));
  return out;
}

template <typename T>
struct TrainResult {
  TransformerModel<T> best_model;
  TrainLog log;
  std::string best_checkpoint;  // path, empty when no output_dir
};

namespace detail {
inline std::string checkpoint_name(std::size_t step, double bleu) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "ckpt_step%07zu_bleu%.2f.bin", step, bleu);
  return buf;
}
}  // namespace detail

// Adam with the Noam schedule on label-smoothed cross-entropy. The dev set is
// evaluated (loss and greedy BLEU-4) after ceil(B/2) and B batches of each
// epoch; training stops after `patience` evaluations without a new best
// BLEU-4, and the best-scoring parameters are returned.
template <typename T>
TrainResult<T> train(TransformerModel<T>& model, const std::vector<EncodedPair>& train_data, const DevSet& dev,
                     const Vocabulary& target_vocab, const TrainConfig& cfg) {
  cfg.validate();
  if (train_data.empty()) throw ConfigError("training split is empty");
  if (dev.pairs.empty()) throw ConfigError("dev split is empty");
  if (!cfg.output_dir.empty()) std::filesystem::create_directories(cfg.output_dir);

  auto params = model.named_parameters();
  AdamState<T> state;
  const AdamOptions adam{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  const CounterRng root(cfg.seed);
  CounterRng dropout_rng = root.fork(0x5EED);
  EarlyStopping stopper(cfg.patience);
  TrainResult<T> result{model.clone(), {}, {}};
  std::ofstream log_file;
  if (!cfg.output_dir.empty()) log_file.open(cfg.output_dir + "/train_log.jsonl", std::ios::binary | std::ios::trunc);

  double window_loss = 0.0;
  std::size_t window_tokens = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto batches = make_batches(train_data, cfg.batch_tokens, root.fork(epoch).seed(), cfg.batch_by_sentences);
    const std::size_t half = (batches.size() + 1) / 2;
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      model.zero_grad();
      const double denom = static_cast<double>(batch.target_tokens + batch.size());
      ForwardContext ctx{true, &dropout_rng};
      for (std::size_t r = 0; r < batch.size(); ++r) {
        const auto src = strip_padding(batch.source_row(r));
        const auto tgt = strip_padding(batch.target_row(r));
        auto loss = model.loss(src, tgt, cfg.label_smoothing, ctx, denom);
        const double summed = static_cast<double>(loss.item()) * denom;
        if (!std::isfinite(summed)) throw NumericError("non-finite training loss at step " + std::to_string(state.step + 1));
        backward(loss);
        epoch_loss += summed;
        window_loss += summed;
      }
      epoch_tokens += batch.target_tokens + batch.size();
      window_tokens += batch.target_tokens + batch.size();
      if (cfg.max_grad_norm > 0.0) {
        double sq = 0.0;
        for (auto& [name, p] : params)
          for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
        const double norm = std::sqrt(sq);
        if (norm > cfg.max_grad_norm) {
          const T f = T(cfg.max_grad_norm / norm);
          for (auto& [name, p] : params)
            for (auto& g : p.mutable_grad()) g *= f;
        }
      }
      const double lr = noam_lr(state.step + 1, cfg.initial_lr, model.config().d_model, cfg.warmup_steps);
      adam_step(params, state, lr, adam);

      if (b + 1 != half && b + 1 != batches.size()) continue;
      ValidationRecord rec;
      rec.step = state.step;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.train_loss = window_tokens ? window_loss / static_cast<double>(window_tokens) : 0.0;
      window_loss = 0.0;
      window_tokens = 0;
      rec.dev_loss = mean_loss(model, dev.pairs, cfg.label_smoothing);
      rec.dev_bleu4 = bleu(greedy_translations(model, dev.pairs, target_vocab), dev.references, 4).score;
      if (stopper.update(rec.dev_bleu4)) {
        result.best_model = model.clone();
        result.log.best = result.log.records.size();
        if (!cfg.output_dir.empty()) {
          rec.checkpoint = detail::checkpoint_name(rec.step, rec.dev_bleu4);
          result.best_checkpoint = cfg.output_dir + "/" + rec.checkpoint;
          save_checkpoint(result.best_checkpoint, model, cfg.checkpoint_metadata);
        }
      }
      if (log_file) log_file << rec.to_json().dump() << '\n' << std::flush;
      result.log.records.push_back(std::move(rec));
      if (stopper.should_stop()) break;
    }
    result.log.epoch_losses.push_back(epoch_tokens ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0);
    if (stopper.should_stop()) {
      result.log.stop_reason = "early_stopping";
      break;
    }
  }
  if (result.log.stop_reason.empty()) result.log.stop_reason = "max_epochs";
  return result;
}

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::string checkpoint;
  MetricReport dev;
  std::optional<MetricReport> test;
  TrainLog log;
};

struct AggregateReport {
  std::vector<SeedRun> runs;
  std::map<std::string, MetricSummary> summary;  // keys like "dev.bleu4"

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["runs"] = nlohmann::json::array();
    for (const auto& r : runs) {
      nlohmann::json rj{{"seed", r.seed}, {"checkpoint", r.checkpoint}, {"dev", r.dev.to_json()},
                        {"stop_reason", r.log.stop_reason}};
      rj["dev"].erase("sentence_bleu4");
      if (r.test) {
        rj["test"] = r.test->to_json();
        rj["test"].erase("sentence_bleu4");
      }
      j["runs"].push_back(std::move(rj));
    }
    for (const auto& [k, s] : summary) j["summary"][k] = {{"mean", s.mean}, {"std", s.stddev}};
    return j;
  }
};

inline std::map<std::string, MetricSummary> summarize_runs(const std::vector<SeedRun>& runs) {
  std::map<std::string, std::vector<double>> values;
  auto collect = [&](const std::string& prefix, const MetricReport& m) {
    for (std::size_t n = 0; n < 4; ++n) values[prefix + ".bleu" + std::to_string(n + 1)].push_back(m.bleu[n]);
    values[prefix + ".rouge_l"].push_back(m.rouge_l);
    values[prefix + ".meteor"].push_back(m.meteor);
  };
  for (const auto& r : runs) {
    collect("dev", r.dev);
    if (r.test) collect("test", *r.test);
  }
  std::map<std::string, MetricSummary> out;
  for (const auto& [k, v] : values) {
    MetricSummary s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size()));
    out[k] = s;
  }
  return out;
}

// Everything a training run reads, already encoded.
struct PreparedData {
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  std::vector<EncodedPair> train;
  DevSet dev;
  std::vector<Sentence> test_sources;
  std::vector<Sentence> test_references;
};

inline PreparedData prepare_data(const ParallelCorpus& corpus, Vocabulary source_vocab, Vocabulary target_vocab) {
  PreparedData d{std::move(source_vocab), std::move(target_vocab), {}, {}, {}, {}};
  d.train = encode_pairs(corpus.at(Split::train), d.source_vocab, d.target_vocab);
  if (!corpus.has(Split::dev)) throw ConfigError("dev split is required for training");
  d.dev = make_dev_set(corpus.at(Split::dev), d.source_vocab, d.target_vocab);
  if (corpus.has(Split::test)) {
    for (const auto& p : corpus.at(Split::test)) {
      d.test_sources.push_back(p.source);
      d.test_references.push_back(p.target);
    }
  }
  return d;
}

template <typename T>
using ModelInit = std::function<void(TransformerModel<T>&, CounterRng&)>;

// Trains one model per seed from scratch and reports per-seed dev/test
// metrics (beam decoding with `decode_cfg`) plus their mean and spread.
// With an output_dir, each seed writes into <output_dir>/seed_<seed>.
// `init` runs on each fresh model before training (pretrained vectors).
template <typename T>
AggregateReport multi_seed_run(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                               const DecodeConfig& decode_cfg, const PreparedData& data,
                               const std::vector<std::uint64_t>& seeds, const ModelInit<T>& init = {}) {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  AggregateReport report;
  for (std::uint64_t seed : seeds) {
    TrainConfig cfg = train_cfg;
    cfg.seed = seed;
    if (!train_cfg.output_dir.empty()) cfg.output_dir = train_cfg.output_dir + "/seed_" + std::to_string(seed);
    CounterRng init_rng(seed);
    TransformerModel<T> model(model_cfg, init_rng);
    if (init) init(model, init_rng);
    auto res = train(model, data.train, data.dev, data.target_vocab, cfg);
    SeedRun run;
    run.seed = seed;
    run.checkpoint = res.best_checkpoint;
    run.log = std::move(res.log);
    Ensemble<T> single(res.best_model);
    run.dev = evaluate(translate_corpus(single, data.dev.sources, data.source_vocab, data.target_vocab, decode_cfg),
                       data.dev.references);
    if (!data.test_sources.empty()) {
      run.test = evaluate(translate_corpus(single, data.test_sources, data.source_vocab, data.target_vocab, decode_cfg),
                          data.test_references);
    }
    report.runs.push_back(std::move(run));
  }
  report.summary = summarize_runs(report.runs);
  return report;
}

}  // namespace slt
