#pragma once

#include <fstream>
#include <istream>
#include <string>
#include <unordered_map>
#include <vector>

#include "slt/corpus.hpp"
#include "slt/text.hpp"
#include "slt/transformer.hpp"

namespace slt {

struct WordVectors {
  std::size_t dimension = 0;
  std::unordered_map<std::string, std::vector<double>> vectors;
};

// Textual word2vec layout: "word v1 v2 ...", optionally preceded by a
// "count dim" header line.
inline WordVectors read_word_vectors(std::istream& in) {
  WordVectors wv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = split_whitespace(line);
    if (fields.empty()) continue;
    if (lineno == 1 && fields.size() == 2) {
      try {
        std::size_t used = 0;
        std::stoull(fields[0], &used);
        if (used == fields[0].size()) {
          wv.dimension = std::stoull(fields[1]);
          continue;
        }
      } catch (const std::exception&) {
      }
    }
    if (fields.size() < 2) throw ParseError("word vector line has no values", lineno);
    std::vector<double> values;
    values.reserve(fields.size() - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(fields[i], &used));
        if (used != fields[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("non-numeric vector component '" + fields[i] + "'", lineno);
      }
    }
    if (wv.dimension == 0) wv.dimension = values.size();
    if (values.size() != wv.dimension) {
      throw ParseError("expected " + std::to_string(wv.dimension) + " components, got " + std::to_string(values.size()),
                       lineno);
    }
    wv.vectors.emplace(fields[0], std::move(values));
  }
  return wv;
}

inline WordVectors read_word_vectors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError(path);
  return read_word_vectors(in);
}

struct EmbeddingCoverage {
  std::size_t matched = 0;
  std::size_t total = 0;  // non-special vocabulary entries
  std::size_t dimension = 0;
  bool projected = false;

  double percent() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(matched) / static_cast<double>(total); }
};

enum class EmbeddingSide { encoder, decoder };

// Overwrites the rows of matched vocabulary entries; the rest keep a random
// initialization. Vectors narrower or wider than d_model go through a learned
// projection.
template <typename T>
EmbeddingCoverage load_pretrained_embeddings(TransformerModel<T>& model, const WordVectors& vectors, EmbeddingSide side,
                                             const Vocabulary& vocab, CounterRng& rng) {
  const bool source = side == EmbeddingSide::encoder;
  const std::size_t expected_vocab = source ? model.config().src_vocab : model.config().tgt_vocab;
  if (vocab.size() != expected_vocab) {
    throw ConfigError("vocabulary size " + std::to_string(vocab.size()) + " does not match model side size " +
                      std::to_string(expected_vocab));
  }
  if (vectors.dimension == 0) throw ConfigError("word vector file is empty");
  const std::size_t current = source ? model.config().src_dim() : model.config().tgt_dim();
  if (current != vectors.dimension) model.reshape_embedding(source, vectors.dimension, rng);
  EmbeddingCoverage cov;
  cov.dimension = vectors.dimension;
  cov.projected = vectors.dimension != model.config().d_model;
  auto table = model.mutable_embedding(source).mutable_data();
  for (std::size_t id = Vocabulary::num_specials; id < vocab.size(); ++id) {
    ++cov.total;
    auto it = vectors.vectors.find(vocab.token(static_cast<TokenId>(id)));
    if (it == vectors.vectors.end()) continue;
    ++cov.matched;
    for (std::size_t c = 0; c < vectors.dimension; ++c) table[id * vectors.dimension + c] = T(it->second[c]);
  }
  return cov;
}

}  // namespace slt
