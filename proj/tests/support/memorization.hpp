#pragma once

#include "slt/training.hpp"
#include "support/synthetic.hpp"

namespace slt::fixtures {

// 50 distinct weather-report pairs and a d_model 64 model that should learn
// them by heart. The dev set is the training set itself.
struct MemorizationSetup {
  ParallelCorpus corpus;
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  std::vector<EncodedPair> train;
  DevSet dev;
  ModelConfig model;
  TrainConfig training;
};

inline MemorizationSetup memorization_setup(std::uint64_t seed = 7) {
  MemorizationSetup s;
  s.corpus = synthetic_corpus(50, 0, 0, seed);
  s.source_vocab = build_vocab(s.corpus, Side::source);
  s.target_vocab = build_vocab(s.corpus, Side::target);
  s.train = encode_pairs(s.corpus.at(Split::train), s.source_vocab, s.target_vocab);
  s.dev = make_dev_set(s.corpus.at(Split::train), s.source_vocab, s.target_vocab);
  s.model.d_model = 64;
  s.model.num_heads = 4;
  s.model.ffn_dim = 128;
  s.model.dropout = 0.0;
  s.model.src_vocab = s.source_vocab.size();
  s.model.tgt_vocab = s.target_vocab.size();
  s.model.max_positions = 64;
  s.training.initial_lr = 0.5;
  s.training.warmup_steps = 200;
  s.training.batch_tokens = 128;
  s.training.max_epochs = 60;
  s.training.patience = 60;
  return s;
}

}  // namespace slt::fixtures
