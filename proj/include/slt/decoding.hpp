#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "slt/corpus.hpp"
#include "slt/transformer.hpp"

namespace slt {

struct DecodeConfig {
  std::size_t beam_width = 4;
  std::size_t max_length = 0;  // 0: 1.5 * source length + 5
  double length_penalty = 1.0;  // score = log-prob / length^alpha
  bool replace_unk = true;

  void validate() const {
    if (beam_width < 1) throw ConfigError("beam_width must be >= 1");
    if (!(length_penalty >= 0.0)) throw ConfigError("length_penalty must be >= 0");
  }
};

// Maximum number of generated tokens, bounded so that the decoder prefix
// (bos + generated) never exceeds max_positions.
inline std::size_t resolve_max_length(const DecodeConfig& cfg, std::size_t source_length, std::size_t max_positions) {
  std::size_t n = cfg.max_length ? cfg.max_length : static_cast<std::size_t>(1.5 * static_cast<double>(source_length)) + 5;
  n = std::min(n, max_positions - 1);
  return std::max<std::size_t>(n, 1);
}

struct Hypothesis {
  std::vector<TokenId> tokens{Vocabulary::bos_id};
  double log_prob = 0.0;
  std::vector<std::vector<double>> attention;  // one head-averaged vector per generated token
  bool finished = false;

  std::size_t generated() const { return tokens.size() - 1; }

  double score(double alpha) const {
    const auto len = static_cast<double>(std::max<std::size_t>(generated(), 1));
    return alpha == 0.0 ? log_prob : log_prob / std::pow(len, alpha);
  }

  // Generated tokens without bos and the final eos.
  std::vector<TokenId> output() const {
    std::vector<TokenId> out(tokens.begin() + 1, tokens.end());
    if (finished && !out.empty() && out.back() == Vocabulary::eos_id) out.pop_back();
    return out;
  }
};

// Models decoded together; all members share one target vocabulary.
template <typename T>
class Ensemble {
 public:
  explicit Ensemble(std::vector<const TransformerModel<T>*> members) : members_(std::move(members)) {
    if (members_.empty()) throw ConfigError("ensemble needs at least one model");
    for (const auto* m : members_) {
      if (m->config().tgt_vocab != members_[0]->config().tgt_vocab) {
        throw ConfigError("ensemble members disagree on target vocabulary size (" +
                          std::to_string(m->config().tgt_vocab) + " vs " +
                          std::to_string(members_[0]->config().tgt_vocab) + ")");
      }
      if (m->config().src_vocab != members_[0]->config().src_vocab) {
        throw ConfigError("ensemble members disagree on source vocabulary size");
      }
    }
  }

  explicit Ensemble(const TransformerModel<T>& single) : Ensemble(std::vector<const TransformerModel<T>*>{&single}) {}

  std::size_t size() const { return members_.size(); }
  const TransformerModel<T>& operator[](std::size_t i) const { return *members_[i]; }
  std::size_t target_vocab() const { return members_[0]->config().tgt_vocab; }
  std::size_t max_positions() const {
    std::size_t p = members_[0]->config().max_positions;
    for (const auto* m : members_) p = std::min(p, m->config().max_positions);
    return p;
  }

  std::vector<Tensor<T>> encode(std::span<const TokenId> source) const {
    NoGradGuard guard;
    std::vector<Tensor<T>> memories;
    ForwardContext ctx;
    for (const auto* m : members_) memories.push_back(m->encode_source(source, ctx));
    return memories;
  }

 private:
  std::vector<const TransformerModel<T>*> members_;
};

struct Distribution {
  std::vector<double> probs;
  std::vector<double> attention;  // member-averaged, head-averaged cross-attention
};

// Arithmetic mean of the members' softmax outputs. Summation is carried out
// in long double so that k identical members reproduce the single-model
// distribution bit for bit.
template <typename T>
Distribution ensemble_distribution(const Ensemble<T>& models, const std::vector<Tensor<T>>& memories,
                                   std::span<const TokenId> prefix) {
  if (memories.size() != models.size()) throw ContractError("one encoder memory per ensemble member is required");
  NoGradGuard guard;
  const std::size_t v = models.target_vocab();
  std::vector<long double> acc(v, 0.0L);
  std::vector<long double> att;
  std::vector<double> p(v);
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto step = models[k].decode_step(memories[k], prefix);
    const auto logits = step.logits.data();
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
    double z = 0.0;
    for (std::size_t i = 0; i < v; ++i) z += (p[i] = std::exp(static_cast<double>(logits[i]) - mx));
    for (std::size_t i = 0; i < v; ++i) acc[i] += static_cast<long double>(p[i] / z);
    if (att.empty()) att.assign(step.trace.mean.size(), 0.0L);
    for (std::size_t i = 0; i < att.size(); ++i) att[i] += static_cast<long double>(step.trace.mean[i]);
  }
  const auto k = static_cast<long double>(models.size());
  Distribution d;
  d.probs.resize(v);
  for (std::size_t i = 0; i < v; ++i) d.probs[i] = static_cast<double>(acc[i] / k);
  d.attention.resize(att.size());
  for (std::size_t i = 0; i < att.size(); ++i) d.attention[i] = static_cast<double>(att[i] / k);
  return d;
}

// Padding and bos are never generated.
inline bool generatable(TokenId id) { return id != Vocabulary::pad_id && id != Vocabulary::bos_id; }

template <typename T>
Hypothesis greedy_decode(const Ensemble<T>& models, std::span<const TokenId> source, const DecodeConfig& cfg) {
  Hypothesis hyp;
  if (source.empty()) return hyp;
  const auto memories = models.encode(source);
  const std::size_t max_len = resolve_max_length(cfg, source.size(), models.max_positions());
  while (hyp.generated() < max_len) {
    const auto dist = ensemble_distribution(models, memories, hyp.tokens);
    TokenId best = -1;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) {
      const auto id = static_cast<TokenId>(i);
      if (!generatable(id)) continue;
      if (best < 0 || dist.probs[i] > dist.probs[static_cast<std::size_t>(best)]) best = id;
    }
    hyp.tokens.push_back(best);
    hyp.log_prob += std::log(dist.probs[static_cast<std::size_t>(best)]);
    hyp.attention.push_back(dist.attention);
    if (best == Vocabulary::eos_id) {
      hyp.finished = true;
      break;
    }
  }
  return hyp;
}

template <typename T>
Hypothesis greedy_decode(const TransformerModel<T>& model, std::span<const TokenId> source, const DecodeConfig& cfg) {
  return greedy_decode(Ensemble<T>(model), source, cfg);
}

// Beam search over length-normalized scores. Each step expands every live
// hypothesis over the vocabulary and keeps the beam_width best candidates;
// candidates ending in eos retire to the completed pool. Hypotheses still
// live at max_length are retired unfinished, so the result is never empty.
template <typename T>
std::vector<Hypothesis> beam_search(const Ensemble<T>& models, std::span<const TokenId> source,
                                    const DecodeConfig& cfg) {
  cfg.validate();
  if (source.empty()) return {Hypothesis{}};
  const auto memories = models.encode(source);
  const std::size_t max_len = resolve_max_length(cfg, source.size(), models.max_positions());
  const double alpha = cfg.length_penalty;

  struct Candidate {
    std::size_t parent;
    TokenId token;
    double log_prob;
    double score;
  };

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> completed;
  for (std::size_t step = 1; step <= max_len && !live.empty(); ++step) {
    std::vector<Candidate> candidates;
    std::vector<std::vector<double>> attention(live.size());
    const double norm = alpha == 0.0 ? 1.0 : std::pow(static_cast<double>(step), alpha);
    for (std::size_t h = 0; h < live.size(); ++h) {
      auto dist = ensemble_distribution(models, memories, live[h].tokens);
      attention[h] = std::move(dist.attention);
      for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        const auto id = static_cast<TokenId>(i);
        if (!generatable(id)) continue;
        const double lp = live[h].log_prob + std::log(dist.probs[i]);
        candidates.push_back({h, id, lp, lp / norm});
      }
    }
    const std::size_t keep = std::min(cfg.beam_width, candidates.size());
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = candidates[c];
      Hypothesis h = live[cand.parent];
      h.tokens.push_back(cand.token);
      h.log_prob = cand.log_prob;
      h.attention.push_back(attention[cand.parent]);
      if (cand.token == Vocabulary::eos_id) {
        h.finished = true;
        completed.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  for (auto& h : live) completed.push_back(std::move(h));
  std::stable_sort(completed.begin(), completed.end(),
                   [alpha](const Hypothesis& a, const Hypothesis& b) { return a.score(alpha) > b.score(alpha); });
  return completed;
}

template <typename T>
std::vector<Hypothesis> beam_search(const TransformerModel<T>& model, std::span<const TokenId> source,
                                    const DecodeConfig& cfg) {
  return beam_search(Ensemble<T>(model), source, cfg);
}

// Substitutes each generated unk with the source token that received the
// highest head-averaged attention at that step (lowest index on ties).
inline Sentence replace_unk(const Hypothesis& hyp, const Sentence& source, const Vocabulary& target_vocab) {
  const auto ids = hyp.output();
  if (hyp.attention.size() < ids.size()) {
    throw ContractError("unk replacement needs one attention vector per generated token");
  }
  Sentence out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != Vocabulary::unk_id) {
      out.push_back(target_vocab.token(ids[i]));
      continue;
    }
    const auto& att = hyp.attention[i];
    if (att.empty() || att.size() != source.size()) {
      throw ContractError("attention vector length does not match the source sentence");
    }
    const auto best = static_cast<std::size_t>(std::max_element(att.begin(), att.end()) - att.begin());
    out.push_back(source[best]);
  }
  return out;
}

// Decodes every sentence with beam search and returns the best hypothesis of
// each, in input order.
template <typename T>
std::vector<Sentence> translate_corpus(const Ensemble<T>& models, const std::vector<Sentence>& sources,
                                       const Vocabulary& source_vocab, const Vocabulary& target_vocab,
                                       const DecodeConfig& cfg) {
  std::vector<Sentence> out;
  out.reserve(sources.size());
  for (const auto& src : sources) {
    if (src.empty()) {
      out.emplace_back();
      continue;
    }
    const auto ids = encode(src, source_vocab, false);
    const auto hyps = beam_search(models, ids, cfg);
    const auto& best = hyps.front();
    out.push_back(cfg.replace_unk ? replace_unk(best, src, target_vocab) : decode(best.output(), target_vocab));
  }
  return out;
}

}  // namespace slt
