#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "slt/corpus.hpp"
#include "slt/errors.hpp"
#include "slt/text.hpp"

namespace slt {

using TokenCorpus = std::vector<Sentence>;

namespace detail {

inline void require_aligned(std::size_t hyps, std::size_t refs) {
  if (hyps != refs) throw AlignmentError(hyps, refs);
}

inline std::map<std::vector<std::string_view>, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<std::vector<std::string_view>, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::vector<std::string_view> g(s.begin() + static_cast<std::ptrdiff_t>(i),
                                    s.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++counts[g];
  }
  return counts;
}

// Clipped matches and hypothesis n-gram count for one order.
inline std::pair<std::size_t, std::size_t> clipped_matches(const Sentence& hyp, const Sentence& ref, std::size_t n) {
  const auto h = ngram_counts(hyp, n);
  const auto r = ngram_counts(ref, n);
  std::size_t matches = 0;
  for (const auto& [g, c] : h) {
    auto it = r.find(g);
    if (it != r.end()) matches += std::min(c, it->second);
  }
  return {matches, hyp.size() >= n ? hyp.size() - n + 1 : 0};
}

inline double brevity_penalty(std::size_t hyp_len, std::size_t ref_len) {
  if (hyp_len == 0) return 0.0;
  if (hyp_len >= ref_len) return 1.0;
  return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
}

}  // namespace detail

struct BleuScore {
  double score = 0.0;  // percent
  int max_n = 4;
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::array<std::size_t, 4> ref_totals{};
  std::array<double, 4> precisions{};  // percent
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

// Corpus BLEU-N with uniform weights and no smoothing: a zero precision at
// any order gives 0. An order for which neither side has any n-gram (every
// sentence shorter than n) counts as fully matched.
inline BleuScore bleu(const TokenCorpus& hyps, const TokenCorpus& refs, int max_n = 4) {
  detail::require_aligned(hyps.size(), refs.size());
  if (max_n < 1 || max_n > 4) throw ContractError("BLEU order must be in 1..4");
  BleuScore s;
  s.max_n = max_n;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    s.hyp_length += hyps[i].size();
    s.ref_length += refs[i].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto [m, t] = detail::clipped_matches(hyps[i], refs[i], n);
      s.matches[n - 1] += m;
      s.totals[n - 1] += t;
      s.ref_totals[n - 1] += refs[i].size() >= n ? refs[i].size() - n + 1 : 0;
    }
  }
  for (std::size_t n = 0; n < 4; ++n) {
    s.precisions[n] = s.totals[n] ? 100.0 * static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]) : 0.0;
  }
  s.brevity_penalty = detail::brevity_penalty(s.hyp_length, s.ref_length);
  double log_sum = 0.0;
  for (std::size_t n = 0; n < static_cast<std::size_t>(max_n); ++n) {
    if (s.totals[n] == 0 && s.ref_totals[n] == 0 && s.hyp_length > 0) continue;
    if (s.matches[n] == 0) return s;
    log_sum += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
  }
  s.score = 100.0 * s.brevity_penalty * std::exp(log_sum / max_n);
  return s;
}

// Sentence-level BLEU-4 for qualitative listings. Unsmoothed when every order
// has a match; otherwise orders 2..4 use add-one counts so short sentences do
// not all collapse to zero.
inline double sentence_bleu(const Sentence& hyp, const Sentence& ref) {
  std::array<std::pair<std::size_t, std::size_t>, 4> counts;
  bool any_zero = false;
  for (std::size_t n = 1; n <= 4; ++n) {
    counts[n - 1] = detail::clipped_matches(hyp, ref, n);
    any_zero = any_zero || counts[n - 1].first == 0;
  }
  if (counts[0].first == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double m = static_cast<double>(counts[n].first), t = static_cast<double>(counts[n].second);
    if (any_zero && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    log_sum += std::log(m / t);
  }
  return 100.0 * detail::brevity_penalty(hyp.size(), ref.size()) * std::exp(log_sum / 4.0);
}

inline std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Sentence ROUGE-L F-measure in [0,1]; beta = 1 is the balanced F1.
inline double rouge_l_sentence(const Sentence& hyp, const Sentence& ref, double beta = 1.0) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(hyp, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(hyp.size());
  const double r = lcs / static_cast<double>(ref.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

// Corpus ROUGE-L: mean of per-sentence F scores, in percent.
inline double rouge_l(const TokenCorpus& hyps, const TokenCorpus& refs, double beta = 1.0) {
  detail::require_aligned(hyps.size(), refs.size());
  if (hyps.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) total += rouge_l_sentence(hyps[i], refs[i], beta);
  return 100.0 * total / static_cast<double>(hyps.size());
}

// Light suffix stripper used by the METEOR stem stage.
inline std::string suffix_stem(std::string_view word) {
  static const std::array<std::string_view, 14> suffixes = {"ungen", "ings", "ung", "ing", "ern", "ies", "ed",
                                                            "es",    "en",   "er",  "em",  "s",   "e",   "n"};
  for (auto suf : suffixes) {
    if (word.size() >= suf.size() + 3 && word.substr(word.size() - suf.size()) == suf) {
      return std::string(word.substr(0, word.size() - suf.size()));
    }
  }
  return std::string(word);
}

struct MeteorStats {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

// Unigram alignment in two stages (exact, then stem). Within a stage each
// hypothesis token, left to right, takes the free reference position closest
// to the continuation of the previous alignment, which keeps chunks few.
inline MeteorStats meteor_align(const Sentence& hyp, const Sentence& ref) {
  MeteorStats st;
  st.hyp_length = hyp.size();
  st.ref_length = ref.size();
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> link(hyp.size(), none);
  std::vector<bool> ref_used(ref.size(), false);
  std::vector<std::string> hyp_stem, ref_stem;
  for (const auto& w : hyp) hyp_stem.push_back(suffix_stem(w));
  for (const auto& w : ref) ref_stem.push_back(suffix_stem(w));
  for (int stage = 0; stage < 2; ++stage) {
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      if (link[i] != none) continue;
      const std::size_t want = (i > 0 && link[i - 1] != none) ? link[i - 1] + 1 : none;
      std::size_t best = none;
      std::size_t best_dist = none;
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (ref_used[j]) continue;
        const bool ok = stage == 0 ? hyp[i] == ref[j] : hyp_stem[i] == ref_stem[j];
        if (!ok) continue;
        const std::size_t dist = want == none ? j : (j > want ? j - want : want - j);
        if (dist < best_dist) {
          best = j;
          best_dist = dist;
        }
      }
      if (best != none) {
        link[i] = best;
        ref_used[best] = true;
      }
    }
  }
  std::size_t prev_h = none, prev_r = none;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (link[i] == none) continue;
    ++st.matches;
    if (prev_h == none || i != prev_h + 1 || link[i] != prev_r + 1) ++st.chunks;
    prev_h = i;
    prev_r = link[i];
  }
  return st;
}

// METEOR from summed statistics: Fmean = 10PR/(R+9P), penalty
// 0.5 * (chunks/matches)^3. Percent.
inline double meteor_from_stats(const MeteorStats& st) {
  if (st.matches == 0) return 0.0;
  const double m = static_cast<double>(st.matches);
  const double p = m / static_cast<double>(st.hyp_length);
  const double r = m / static_cast<double>(st.ref_length);
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(st.chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return 100.0 * fmean * (1.0 - penalty);
}

inline double meteor(const TokenCorpus& hyps, const TokenCorpus& refs) {
  detail::require_aligned(hyps.size(), refs.size());
  MeteorStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto st = meteor_align(hyps[i], refs[i]);
    total.matches += st.matches;
    total.chunks += st.chunks;
    total.hyp_length += st.hyp_length;
    total.ref_length += st.ref_length;
  }
  return meteor_from_stats(total);
}

struct MetricReport {
  std::array<double, 4> bleu{};  // BLEU-1..4, percent
  double rouge_l = 0.0;
  double meteor = 0.0;
  std::size_t sentences = 0;
  double brevity_penalty = 0.0;
  std::array<double, 4> precisions{};
  std::vector<double> sentence_bleu4;

  std::string to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "sentences " << sentences << '\n';
    for (std::size_t n = 0; n < 4; ++n) os << "BLEU-" << n + 1 << ' ' << bleu[n] << '\n';
    os << "ROUGE-L " << rouge_l << '\n';
    os << "METEOR " << meteor << '\n';
    os << "BP " << std::setprecision(4) << brevity_penalty << '\n';
    os << "precisions";
    for (double p : precisions) os << ' ' << std::setprecision(2) << p;
    os << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    return {{"sentences", sentences},         {"bleu1", bleu[0]},   {"bleu2", bleu[1]},
            {"bleu3", bleu[2]},               {"bleu4", bleu[3]},   {"rouge_l", rouge_l},
            {"meteor", meteor},               {"brevity_penalty", brevity_penalty},
            {"precisions", precisions},       {"sentence_bleu4", sentence_bleu4}};
  }
};

inline MetricReport evaluate(const TokenCorpus& hyps, const TokenCorpus& refs) {
  detail::require_aligned(hyps.size(), refs.size());
  MetricReport r;
  r.sentences = hyps.size();
  for (int n = 1; n <= 4; ++n) {
    const auto b = bleu(hyps, refs, n);
    r.bleu[static_cast<std::size_t>(n - 1)] = b.score;
    if (n == 4) {
      r.brevity_penalty = b.brevity_penalty;
      r.precisions = b.precisions;
    }
  }
  r.rouge_l = rouge_l(hyps, refs);
  r.meteor = meteor(hyps, refs);
  r.sentence_bleu4.reserve(hyps.size());
  for (std::size_t i = 0; i < hyps.size(); ++i) r.sentence_bleu4.push_back(sentence_bleu(hyps[i], refs[i]));
  return r;
}

inline TokenCorpus tokenize_lines(const std::vector<std::string>& lines) {
  TokenCorpus out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(split_whitespace(l));
  return out;
}

// Scores the lowercased source glosses of a split directly against its
// references, i.e. translation by copying.
inline MetricReport raw_gloss_baseline(const std::vector<SentencePair>& pairs) {
  TokenCorpus hyps, refs;
  for (const auto& p : pairs) {
    Sentence h;
    for (const auto& tok : p.source) h.push_back(utf8_lower(tok));
    hyps.push_back(std::move(h));
    refs.push_back(p.target);
  }
  return evaluate(hyps, refs);
}

inline MetricReport evaluate_files(const std::string& hyp_path, const std::string& ref_path) {
  return evaluate(tokenize_lines(read_lines(hyp_path)), tokenize_lines(read_lines(ref_path)));
}

}  // namespace slt
