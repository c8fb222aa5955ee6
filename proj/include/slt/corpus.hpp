#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "slt/errors.hpp"
#include "slt/text.hpp"

namespace slt {

using TokenId = std::int32_t;
using Sentence = std::vector<std::string>;

enum class Split { train, dev, test };
enum class Side { source, target };

inline constexpr std::array<Split, 3> kAllSplits = {Split::train, Split::dev, Split::test};

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "dev") return Split::dev;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

inline constexpr std::string_view kSourceSuffix = ".gloss";
inline constexpr std::string_view kTargetSuffix = ".txt";

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";

struct SentencePair {
  Sentence source;
  Sentence target;
  std::size_t id = 0;

  const Sentence& side(Side s) const { return s == Side::source ? source : target; }
  Sentence& side(Side s) { return s == Side::source ? source : target; }
};

struct ParallelCorpus {
  std::map<Split, std::vector<SentencePair>> splits;
  std::string source_lang = "gloss";
  std::string target_lang = "txt";

  bool has(Split s) const { return splits.count(s) != 0; }

  const std::vector<SentencePair>& at(Split s) const {
    auto it = splits.find(s);
    if (it == splits.end()) throw ConfigError("corpus has no " + std::string(split_name(s)) + " split");
    return it->second;
  }

  // Merges another fragment's splits into this corpus, replacing duplicates.
  void merge(ParallelCorpus other) {
    for (auto& [split, pairs] : other.splits) splits[split] = std::move(pairs);
  }
};

struct LoadOptions {
  bool lowercase_target = true;
  bool lowercase_source = false;
};

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

// Builds a one-split corpus fragment from aligned line lists.
inline ParallelCorpus make_fragment(const std::vector<std::string>& source_lines,
                                    const std::vector<std::string>& target_lines, Split split,
                                    const LoadOptions& opts = {}) {
  if (source_lines.size() != target_lines.size()) {
    throw AlignmentError(source_lines.size(), target_lines.size());
  }
  if (source_lines.empty()) throw EmptyCorpusError("empty corpus for split " + std::string(split_name(split)));
  ParallelCorpus corpus;
  auto& pairs = corpus.splits[split];
  pairs.reserve(source_lines.size());
  for (std::size_t i = 0; i < source_lines.size(); ++i) {
    SentencePair p;
    p.id = i;
    p.source = split_whitespace(opts.lowercase_source ? utf8_lower(source_lines[i]) : source_lines[i]);
    p.target = split_whitespace(opts.lowercase_target ? utf8_lower(target_lines[i]) : target_lines[i]);
    if (p.source.empty() || p.target.empty()) {
      throw EmptyCorpusError("empty sentence at line " + std::to_string(i + 1) + " of split " +
                             std::string(split_name(split)));
    }
    pairs.push_back(std::move(p));
  }
  return corpus;
}

inline ParallelCorpus load_parallel(const std::string& source_path, const std::string& target_path, Split split,
                                    const LoadOptions& opts = {}) {
  auto source_lines = read_lines(source_path);
  return make_fragment(source_lines, read_lines(target_path), split, opts);
}

// Loads <dir>/<split>.gloss and <dir>/<split>.txt for each split that exists.
inline ParallelCorpus load_corpus_dir(const std::string& dir, const LoadOptions& opts = {}) {
  ParallelCorpus corpus;
  for (Split s : kAllSplits) {
    const std::string base = dir + "/" + std::string(split_name(s));
    const std::string src = base + std::string(kSourceSuffix);
    const std::string tgt = base + std::string(kTargetSuffix);
    if (!std::ifstream(src).good() && !std::ifstream(tgt).good()) continue;
    corpus.merge(load_parallel(src, tgt, s, opts));
  }
  if (corpus.splits.empty()) throw PathError(dir + "/train" + std::string(kSourceSuffix), "no corpus files found");
  return corpus;
}

inline void write_corpus_dir(const ParallelCorpus& corpus, const std::string& dir) {
  for (const auto& [split, pairs] : corpus.splits) {
    const std::string base = dir + "/" + std::string(split_name(split));
    std::ofstream src(base + std::string(kSourceSuffix), std::ios::binary);
    std::ofstream tgt(base + std::string(kTargetSuffix), std::ios::binary);
    if (!src) throw PathError(base + std::string(kSourceSuffix), "cannot write");
    if (!tgt) throw PathError(base + std::string(kTargetSuffix), "cannot write");
    for (const auto& p : pairs) {
      src << join(p.source) << '\n';
      tgt << join(p.target) << '\n';
    }
  }
}

inline const std::vector<std::string>& default_asl_prefixes() {
  static const std::vector<std::string> prefixes = {"X-", "DESC-"};
  return prefixes;
}

// Removes at most one prefix per token, trying longer prefixes first. A token
// that consists of nothing but a prefix is kept as is.
inline Sentence strip_asl_prefixes(const Sentence& sentence, const std::vector<std::string>& prefixes) {
  std::vector<std::string_view> ordered(prefixes.begin(), prefixes.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](std::string_view a, std::string_view b) { return a.size() > b.size(); });
  Sentence out;
  out.reserve(sentence.size());
  for (const auto& tok : sentence) {
    std::string_view view(tok);
    std::string stripped = tok;
    for (auto prefix : ordered) {
      if (prefix.empty()) continue;
      if (view.size() > prefix.size() && view.substr(0, prefix.size()) == prefix) {
        stripped = std::string(view.substr(prefix.size()));
        break;
      }
      if (view == prefix) break;
    }
    out.push_back(std::move(stripped));
  }
  return out;
}

inline ParallelCorpus strip_asl_prefixes(ParallelCorpus corpus, const std::vector<std::string>& prefixes) {
  for (auto& [split, pairs] : corpus.splits) {
    for (auto& p : pairs) p.source = strip_asl_prefixes(p.source, prefixes);
  }
  return corpus;
}

using FrequencyMap = std::unordered_map<std::string, std::size_t>;

inline FrequencyMap count_tokens(const std::vector<SentencePair>& pairs, Side side) {
  FrequencyMap freq;
  for (const auto& p : pairs) {
    for (const auto& tok : p.side(side)) ++freq[tok];
  }
  return freq;
}

// Replaces tokens seen in training fewer than `threshold` times by <unk>, in
// every split. Tokens absent from training are left alone; they become <unk>
// only at encoding time, so OOV statistics and unk replacement still see them.
inline ParallelCorpus apply_min_freq_threshold(ParallelCorpus corpus, Side side, std::size_t threshold) {
  if (threshold < 1) throw ConfigError("frequency threshold must be >= 1");
  const FrequencyMap freq = count_tokens(corpus.at(Split::train), side);
  if (threshold == 1) return corpus;
  for (auto& [split, pairs] : corpus.splits) {
    for (auto& p : pairs) {
      for (auto& tok : p.side(side)) {
        auto it = freq.find(tok);
        if (it != freq.end() && it->second < threshold) tok = std::string(kUnkToken);
      }
    }
  }
  return corpus;
}

class Vocabulary {
 public:
  static constexpr TokenId pad_id = 0;
  static constexpr TokenId unk_id = 1;
  static constexpr TokenId bos_id = 2;
  static constexpr TokenId eos_id = 3;
  static constexpr std::size_t num_specials = 4;

  Vocabulary() {
    for (auto tok : {kPadToken, kUnkToken, kBosToken, kEosToken}) add(std::string(tok), 0);
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t num_regular() const { return tokens_.size() - num_specials; }

  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  TokenId id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? unk_id : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw IndexError("token id " + std::to_string(id) + " out of range [0," + std::to_string(size()) + ")");
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t frequency(TokenId id) const { return freqs_.at(static_cast<std::size_t>(id)); }

  static bool is_special(TokenId id) { return id >= 0 && id < static_cast<TokenId>(num_specials); }

  // Appends a token with its training frequency; existing tokens are ignored.
  TokenId add(const std::string& token, std::size_t frequency) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const auto id = static_cast<TokenId>(tokens_.size());
    index_.emplace(token, id);
    tokens_.push_back(token);
    freqs_.push_back(frequency);
    return id;
  }

  void set_frequency(TokenId id, std::size_t frequency) { freqs_.at(static_cast<std::size_t>(id)) = frequency; }

  void write(std::ostream& out) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << freqs_[i] << '\n';
  }

  static Vocabulary read(std::istream& in) {
    Vocabulary vocab;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.rfind('\t');
      if (tab == std::string::npos || tab == 0) throw ParseError("expected token<TAB>frequency", lineno);
      const std::string token = line.substr(0, tab);
      std::size_t freq = 0;
      try {
        std::size_t used = 0;
        freq = std::stoull(line.substr(tab + 1), &used);
        if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("bad frequency '" + line.substr(tab + 1) + "'", lineno);
      }
      if (lineno <= num_specials) {
        if (vocab.tokens_[lineno - 1] != token) {
          throw ParseError("special token '" + vocab.tokens_[lineno - 1] + "' expected", lineno);
        }
        vocab.freqs_[lineno - 1] = freq;
        continue;
      }
      if (vocab.contains(token)) throw ParseError("duplicate token '" + token + "'", lineno);
      vocab.add(token, freq);
    }
    return vocab;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PathError(path, "cannot write");
    write(out);
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PathError(path);
    return read(in);
  }

  // Stable 64-bit hash of the token list in id order.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& tok : tokens_) {
      h = fnv1a(tok, h);
      h = fnv1a(std::string_view("\n", 1), h);
    }
    return h;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> freqs_;
  std::unordered_map<std::string, TokenId> index_;
};

// Ordered by descending training frequency, ties broken by byte order.
inline Vocabulary build_vocab(const ParallelCorpus& corpus, Side side, std::size_t min_freq = 1) {
  const FrequencyMap freq = count_tokens(corpus.at(Split::train), side);
  std::vector<std::pair<std::string, std::size_t>> entries;
  Vocabulary vocab;
  for (const auto& [tok, count] : freq) {
    if (vocab.contains(tok)) {
      vocab.set_frequency(vocab.id(tok), count);
      continue;
    }
    if (count >= min_freq) entries.emplace_back(tok, count);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (const auto& [tok, count] : entries) vocab.add(tok, count);
  return vocab;
}

inline std::vector<TokenId> encode(const Sentence& sentence, const Vocabulary& vocab, bool add_bos_eos = false) {
  std::vector<TokenId> ids;
  ids.reserve(sentence.size() + 2);
  if (add_bos_eos) ids.push_back(Vocabulary::bos_id);
  for (const auto& tok : sentence) ids.push_back(vocab.id(tok));
  if (add_bos_eos) ids.push_back(Vocabulary::eos_id);
  return ids;
}

// Maps ids back to tokens. With strip_framing, bos/eos/pad are dropped.
inline Sentence decode(const std::vector<TokenId>& ids, const Vocabulary& vocab, bool strip_framing = true) {
  Sentence out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (strip_framing && (id == Vocabulary::bos_id || id == Vocabulary::eos_id || id == Vocabulary::pad_id)) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

struct SplitStats {
  std::size_t phrases = 0;
  std::size_t vocab_size = 0;
  std::size_t total_words = 0;
  std::size_t oov_tokens = 0;
  std::size_t oov_types = 0;
  std::size_t singletons = 0;

  friend bool operator==(const SplitStats&, const SplitStats&) = default;
};

struct CorpusStats {
  std::map<Split, SplitStats> splits;

  const SplitStats& at(Split s) const {
    static const SplitStats empty{};
    auto it = splits.find(s);
    return it == splits.end() ? empty : it->second;
  }
};

// OOVs are counted against the training vocabulary only; singletons are
// training types with frequency exactly 1.
inline CorpusStats corpus_statistics(const ParallelCorpus& corpus, Side side) {
  CorpusStats stats;
  FrequencyMap train_freq;
  if (corpus.has(Split::train)) train_freq = count_tokens(corpus.at(Split::train), side);
  for (const auto& [split, pairs] : corpus.splits) {
    SplitStats s;
    s.phrases = pairs.size();
    const FrequencyMap freq = split == Split::train ? train_freq : count_tokens(pairs, side);
    s.vocab_size = freq.size();
    for (const auto& [tok, count] : freq) {
      s.total_words += count;
      if (split == Split::train) {
        if (count == 1) ++s.singletons;
      } else if (train_freq.count(tok) == 0) {
        ++s.oov_types;
        s.oov_tokens += count;
      }
    }
    stats.splits[split] = s;
  }
  return stats;
}

// Renders a table with one column group per side and one column per split.
inline std::string format_stats_table(const std::vector<std::pair<std::string, CorpusStats>>& sides) {
  std::ostringstream out;
  auto with_commas = [](std::size_t v) {
    std::string digits = std::to_string(v);
    std::string res;
    for (std::size_t i = 0; i < digits.size(); ++i) {
      if (i && (digits.size() - i) % 3 == 0) res += ',';
      res += digits[i];
    }
    return res;
  };
  constexpr int label_w = 12;
  constexpr int col_w = 10;
  out << std::left << std::setw(label_w) << "";
  for (const auto& [name, stats] : sides) out << std::right << std::setw(col_w * 3) << name;
  out << '\n' << std::left << std::setw(label_w) << "";
  for (std::size_t i = 0; i < sides.size(); ++i) {
    for (Split s : kAllSplits) {
      std::string head(split_name(s));
      head[0] = static_cast<char>(head[0] - 'a' + 'A');
      out << std::right << std::setw(col_w) << head;
    }
  }
  out << '\n';
  struct Row {
    const char* label;
    std::size_t SplitStats::*field;
    bool train_only;
    bool eval_only;
  };
  const Row rows[] = {{"Phrases", &SplitStats::phrases, false, false},
                      {"Vocab.", &SplitStats::vocab_size, false, false},
                      {"tot. words", &SplitStats::total_words, false, false},
                      {"tot. OOVs", &SplitStats::oov_tokens, false, true},
                      {"singletons", &SplitStats::singletons, true, false}};
  for (const auto& row : rows) {
    out << std::left << std::setw(label_w) << row.label;
    for (const auto& [name, stats] : sides) {
      for (Split s : kAllSplits) {
        const bool na = (row.train_only && s != Split::train) || (row.eval_only && s == Split::train) ||
                        stats.splits.count(s) == 0;
        out << std::right << std::setw(col_w) << (na ? std::string("-") : with_commas(stats.at(s).*row.field));
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace slt
