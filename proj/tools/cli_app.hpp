#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "slt/checkpoint.hpp"
#include "slt/corpus.hpp"
#include "slt/decoding.hpp"
#include "slt/embeddings.hpp"
#include "slt/metrics.hpp"
#include "slt/training.hpp"

namespace slt::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, usage = 1, data_error = 2, numeric_error = 3 };

// Every configurable setting. Defaults follow the PHOENIX gloss-to-text recipe.
struct RunConfig {
  std::string workdir = ".";
  std::string raw_dir = "raw";
  std::string data_dir = "data";
  std::string run_dir = "runs/default";

  bool asl = false;
  std::size_t min_freq = 1;
  std::string threshold_side = "source";
  bool lowercase_target = true;

  std::size_t layers = 2;
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t ffn_dim = 2048;
  double dropout = 0.1;
  bool tied = false;
  std::size_t max_positions = 512;
  std::string src_vectors;
  std::string tgt_vectors;

  double lr = 0.5;
  std::size_t warmup = 3000;
  std::size_t batch_tokens = 2048;
  bool batch_sentences = false;
  double label_smoothing = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.998;
  double adam_eps = 1e-8;
  double max_grad_norm = 0.0;
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  std::vector<std::uint64_t> seeds{1};

  std::size_t beam = 4;
  double length_penalty = 1.0;
  std::size_t max_length = 0;
  bool replace_unk = true;

  std::string path(const std::string& p) const {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(workdir) / p).lexically_normal().string();
  }

  ModelConfig model(std::size_t src_vocab, std::size_t tgt_vocab) const {
    ModelConfig m;
    m.num_layers = layers;
    m.d_model = d_model;
    m.num_heads = heads;
    m.ffn_dim = ffn_dim;
    m.dropout = dropout;
    m.tie_decoder_embeddings = tied;
    m.max_positions = max_positions;
    m.src_vocab = src_vocab;
    m.tgt_vocab = tgt_vocab;
    m.validate();
    return m;
  }

  TrainConfig training() const {
    TrainConfig t;
    t.initial_lr = lr;
    t.warmup_steps = warmup;
    t.batch_tokens = batch_tokens;
    t.batch_by_sentences = batch_sentences;
    t.label_smoothing = label_smoothing;
    t.adam_beta1 = adam_beta1;
    t.adam_beta2 = adam_beta2;
    t.adam_eps = adam_eps;
    t.max_grad_norm = max_grad_norm;
    t.patience = patience;
    t.max_epochs = max_epochs;
    t.seed = seeds.empty() ? 1 : seeds.front();
    t.output_dir = path(run_dir);
    t.validate();
    return t;
  }

  DecodeConfig decoding() const {
    DecodeConfig d;
    d.beam_width = beam;
    d.length_penalty = length_penalty;
    d.max_length = max_length;
    d.replace_unk = replace_unk;
    d.validate();
    return d;
  }
};

struct TranslateArgs {
  std::vector<std::string> checkpoints;
  std::string input;
  std::string output;
};

struct EvaluateArgs {
  std::string hyp;
  std::string ref;
  std::string output;
  bool lowercase = false;
};

struct SweepArgs {
  std::string axis;
  std::vector<double> values;
  std::vector<std::string> checkpoints;
};

struct StatsArgs {
  std::string dir;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PathError(path, "cannot write");
  out << text;
  if (!out) throw PathError(path, "write failed");
}

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::vector<Side> threshold_sides(const std::string& which) {
  if (which == "source") return {Side::source};
  if (which == "target") return {Side::target};
  if (which == "both") return {Side::source, Side::target};
  throw ConfigError("threshold_side must be source, target or both, got '" + which + "'");
}

struct Vocabularies {
  Vocabulary source;
  Vocabulary target;
};

// Vocabulary files written by preprocess, or built from the train split
// when they are absent.
inline Vocabularies load_vocabularies(const RunConfig& cfg, const ParallelCorpus* corpus) {
  const std::string dir = cfg.path(cfg.data_dir);
  const std::string src = dir + "/vocab.gloss", tgt = dir + "/vocab.txt";
  if (fs::exists(src) && fs::exists(tgt)) return {Vocabulary::load(src), Vocabulary::load(tgt)};
  if (!corpus) throw PathError(src, "vocabulary not found");
  return {build_vocab(*corpus, Side::source), build_vocab(*corpus, Side::target)};
}

inline std::map<std::string, std::string> vocab_metadata(const Vocabularies& v) {
  return {{"source_vocab", hex64(v.source.fingerprint())}, {"target_vocab", hex64(v.target.fingerprint())}};
}

inline std::string stats_table(const ParallelCorpus& corpus) {
  return format_stats_table({{"Gloss", corpus_statistics(corpus, Side::source)},
                             {"Text", corpus_statistics(corpus, Side::target)}});
}

class App {
 public:
  App(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(int argc, const char* const* argv) {
    CLI::App app{"Gloss-to-text Transformer translation toolkit", "slt"};
    // --workdir is needed before the config file is read
    for (int i = 1; i < argc; ++i) {
      const std::string a = argv[i];
      if (a == "--workdir" && i + 1 < argc) cfg_.workdir = argv[i + 1];
      if (a.rfind("--workdir=", 0) == 0) cfg_.workdir = a.substr(10);
    }
    configure(app);
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out_, err_);
      return code == 0 ? ok : usage;
    }
    try {
      if (active_ == "preprocess") preprocess();
      if (active_ == "train") train(app);
      if (active_ == "translate") translate();
      if (active_ == "evaluate") evaluate();
      if (active_ == "sweep") sweep(app);
      if (active_ == "stats") stats();
    } catch (const NumericError& e) {
      err_ << "numeric error: " << e.what() << '\n';
      return numeric_error;
    } catch (const DataError& e) {
      err_ << "data error: " << e.what() << '\n';
      return data_error;
    } catch (const Error& e) {
      err_ << "error: " << e.what() << '\n';
      return usage;
    } catch (const fs::filesystem_error& e) {
      err_ << "data error: " << e.what() << '\n';
      return data_error;
    }
    return ok;
  }

  const RunConfig& config() const { return cfg_; }

 private:
  void configure(CLI::App& app) {
    // a repeated option keeps its last value, so later flags override earlier ones
    app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.config_formatter(std::make_shared<CLI::ConfigINI>());
    app.set_config("--config", "", "INI config file; flags override its values")
        ->envname("SLT_CONFIG")
        ->transform([this](const std::string& p) { return cfg_.path(p); });
    app.add_option("--workdir", cfg_.workdir, "Base directory for every relative path")->configurable(false);
    app.fallthrough();
    app.require_subcommand(1);

    const std::string paths = "Paths", prep = "Preprocessing", model = "Model", train = "Training",
                      dec = "Decoding";
    app.add_option("--raw_dir", cfg_.raw_dir, "Raw corpus directory (<split>.gloss, <split>.txt)")->group(paths);
    app.add_option("--data_dir", cfg_.data_dir, "Preprocessed corpus and vocabulary directory")->group(paths);
    app.add_option("--run_dir", cfg_.run_dir, "Output directory for checkpoints, logs and reports")->group(paths);

    app.add_option("--asl", cfg_.asl, "Strip ASLG-PC12 gloss prefixes")
        ->default_str(cfg_.asl ? "true" : "false")->group(prep);
    app.add_option("--min_freq", cfg_.min_freq, "Train-frequency threshold below which tokens become <unk>")
        ->check(CLI::PositiveNumber)
        ->group(prep);
    app.add_option("--threshold_side", cfg_.threshold_side, "Side the threshold applies to")
        ->check(CLI::IsMember({"source", "target", "both"}))
        ->group(prep);
    app.add_option("--lowercase_target", cfg_.lowercase_target, "Lowercase target text")
        ->default_str(cfg_.lowercase_target ? "true" : "false")
        ->group(prep);

    app.add_option("--layers", cfg_.layers, "Encoder and decoder layers")->group(model);
    app.add_option("--d_model", cfg_.d_model, "Model width")->group(model);
    app.add_option("--heads", cfg_.heads, "Attention heads")->group(model);
    app.add_option("--ffn_dim", cfg_.ffn_dim, "Feed-forward hidden units")->group(model);
    app.add_option("--dropout", cfg_.dropout, "Dropout rate")->group(model);
    app.add_option("--tied", cfg_.tied, "Tie decoder input and output embeddings")
        ->default_str(cfg_.tied ? "true" : "false")->group(model);
    app.add_option("--max_positions", cfg_.max_positions, "Longest sequence the model accepts")->group(model);
    app.add_option("--src_vectors", cfg_.src_vectors, "Pretrained vectors for the encoder embedding")->group(model);
    app.add_option("--tgt_vectors", cfg_.tgt_vectors, "Pretrained vectors for the decoder embedding")->group(model);

    app.add_option("--lr", cfg_.lr, "Initial learning rate of the Noam schedule")->group(train);
    app.add_option("--warmup", cfg_.warmup, "Warm-up steps")->group(train);
    app.add_option("--batch_tokens", cfg_.batch_tokens, "Padded target tokens per batch")->group(train);
    app.add_option("--batch_sentences", cfg_.batch_sentences,
                 "Count batch_tokens in sentences instead")
        ->default_str(cfg_.batch_sentences ? "true" : "false")
        ->group(train);
    app.add_option("--label_smoothing", cfg_.label_smoothing, "Label smoothing")->group(train);
    app.add_option("--adam_beta1", cfg_.adam_beta1, "Adam beta1")->group(train);
    app.add_option("--adam_beta2", cfg_.adam_beta2, "Adam beta2")->group(train);
    app.add_option("--adam_eps", cfg_.adam_eps, "Adam epsilon")->group(train);
    app.add_option("--max_grad_norm", cfg_.max_grad_norm, "Gradient clipping norm, 0 disables")->group(train);
    app.add_option("--patience", cfg_.patience, "Dev evaluations without improvement before stopping")->group(train);
    app.add_option("--max_epochs", cfg_.max_epochs, "Epoch limit")->group(train);
    app.add_option("--seeds", cfg_.seeds, "Seeds, one training run each")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->group(train);

    app.add_option("--beam", cfg_.beam, "Beam width")->group(dec);
    app.add_option("--length_penalty", cfg_.length_penalty, "Length normalization exponent")->group(dec);
    app.add_option("--max_length", cfg_.max_length, "Generated-token limit, 0 for 1.5 x source + 5")->group(dec);
    app.add_option("--replace_unk", cfg_.replace_unk, "Copy attended source token for <unk>")
        ->default_str(cfg_.replace_unk ? "true" : "false")
        ->group(dec);

    auto select = [this](CLI::App* sub) { sub->final_callback([this, sub] { active_ = sub->get_name(); }); };

    select(app.add_subcommand("preprocess", "Strip prefixes, apply the threshold, write vocabularies and stats"));
    select(app.add_subcommand("train", "Train one model per seed"));

    auto* tr = app.add_subcommand("translate", "Translate a gloss file with one checkpoint or an ensemble");
    tr->add_option("--checkpoint", translate_.checkpoints, "Checkpoint file; repeat for an ensemble")
        ->required()
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    tr->add_option("--input", translate_.input, "Gloss file, one sentence per line")->required();
    tr->add_option("--output", translate_.output, "Hypothesis file")->required();
    select(tr);

    auto* ev = app.add_subcommand("evaluate", "Score a hypothesis file against references");
    ev->add_option("--hyp", evaluate_.hyp, "Hypothesis file")->required();
    ev->add_option("--ref", evaluate_.ref, "Reference file")->required();
    ev->add_option("--output", evaluate_.output, "Also write the report as JSON");
    ev->add_flag("--lowercase", evaluate_.lowercase, "Lowercase hypotheses before scoring");
    select(ev);

    auto* sw = app.add_subcommand("sweep", "Dev/test BLEU-4 over warmup, lr or beam values");
    sw->add_option("--axis", sweep_.axis, "Swept setting")->required()->check(CLI::IsMember({"warmup", "lr", "beam"}));
    sw->add_option("--values", sweep_.values, "Values to try")->required()->delimiter(',')->expected(1, -1)->multi_option_policy(
        CLI::MultiOptionPolicy::TakeAll);
    sw->add_option("--checkpoint", sweep_.checkpoints, "Checkpoint(s) decoded by the beam sweep")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    select(sw);

    auto* st = app.add_subcommand("stats", "Print corpus statistics");
    st->add_option("--dir", stats_.dir, "Corpus directory, data_dir when empty");
    select(st);
  }

  // Resolved values of every configurable top-level option, readable back
  // through --config.
  static std::string resolved_config(const CLI::App& app) {
    auto quote = [](const std::string& v) {
      return v.empty() || v.find_first_of(" \t\"") != std::string::npos ? "\"" + v + "\"" : v;
    };
    std::string text;
    for (const CLI::Option* opt : app.get_options()) {
      if (!opt->get_configurable() || opt->get_lnames().empty() || opt == app.get_config_ptr() ||
          opt == app.get_help_ptr()) {
        continue;
      }
      std::vector<std::string> values = opt->reduced_results();
      if (opt->count() == 0) {
        std::string d = opt->get_default_str();
        if (d.size() >= 2 && d.front() == '[' && d.back() == ']') d = d.substr(1, d.size() - 2);
        values = opt->get_items_expected_max() > 1 ? CLI::detail::split(d, ',') : std::vector<std::string>{d};
      }
      text += opt->get_lnames().front() + " =";
      for (const auto& v : values) text += " " + quote(CLI::detail::trim_copy(v));
      text += '\n';
    }
    return text;
  }

  void save_config(const CLI::App& app) { write_text(cfg_.path(cfg_.run_dir) + "/config.ini", resolved_config(app)); }

  void preprocess() {
    LoadOptions opts;
    opts.lowercase_target = cfg_.lowercase_target;
    ParallelCorpus corpus = load_corpus_dir(cfg_.path(cfg_.raw_dir), opts);
    if (!corpus.has(Split::train)) throw EmptyCorpusError("raw corpus has no train split");
    if (cfg_.asl) corpus = strip_asl_prefixes(std::move(corpus), default_asl_prefixes());
    for (Side s : threshold_sides(cfg_.threshold_side)) corpus = apply_min_freq_threshold(std::move(corpus), s, cfg_.min_freq);
    const std::string dir = cfg_.path(cfg_.data_dir);
    fs::create_directories(dir);
    write_corpus_dir(corpus, dir);
    build_vocab(corpus, Side::source).save(dir + "/vocab.gloss");
    build_vocab(corpus, Side::target).save(dir + "/vocab.txt");
    const std::string table = stats_table(corpus);
    write_text(dir + "/stats.txt", table);
    out_ << table;
  }

  PreparedData prepared() {
    const ParallelCorpus corpus = load_corpus_dir(cfg_.path(cfg_.data_dir));
    auto vocabs = load_vocabularies(cfg_, &corpus);
    return prepare_data(corpus, std::move(vocabs.source), std::move(vocabs.target));
  }

  ModelInit<float> pretrained_init(const PreparedData& data) {
    if (cfg_.src_vectors.empty() && cfg_.tgt_vectors.empty()) return {};
    std::vector<std::pair<EmbeddingSide, WordVectors>> loaded;
    if (!cfg_.src_vectors.empty()) loaded.emplace_back(EmbeddingSide::encoder, read_word_vectors(cfg_.path(cfg_.src_vectors)));
    if (!cfg_.tgt_vectors.empty()) loaded.emplace_back(EmbeddingSide::decoder, read_word_vectors(cfg_.path(cfg_.tgt_vectors)));
    auto shared = std::make_shared<decltype(loaded)>(std::move(loaded));
    return [this, shared, &data](TransformerModel<float>& model, CounterRng& rng) {
      for (const auto& [side, vectors] : *shared) {
        const bool enc = side == EmbeddingSide::encoder;
        const auto cov = load_pretrained_embeddings(model, vectors, side, enc ? data.source_vocab : data.target_vocab, rng);
        err_ << (enc ? "source" : "target") << " vectors: " << cov.matched << "/" << cov.total << " matched ("
             << format_value(cov.percent()) << "%), dimension " << cov.dimension << (cov.projected ? ", projected" : "")
             << '\n';
      }
    };
  }

  AggregateReport train_runs(const PreparedData& data, const TrainConfig& tc) {
    const auto model_cfg = cfg_.model(data.source_vocab.size(), data.target_vocab.size());
    TrainConfig t = tc;
    t.checkpoint_metadata = vocab_metadata({data.source_vocab, data.target_vocab});
    if (cfg_.seeds.empty()) throw ConfigError("at least one seed is required");
    return multi_seed_run<float>(model_cfg, t, cfg_.decoding(), data, cfg_.seeds, pretrained_init(data));
  }

  static nlohmann::json report_json(const AggregateReport& report, const std::string& base) {
    auto j = report.to_json();
    for (auto& r : j["runs"]) {
      const auto ckpt = r["checkpoint"].get<std::string>();
      if (!ckpt.empty()) r["checkpoint"] = fs::relative(ckpt, base).generic_string();
    }
    return j;
  }

  void train(const CLI::App& app) {
    const auto data = prepared();
    const auto tc = cfg_.training();
    save_config(app);
    const auto report = train_runs(data, tc);
    write_text(tc.output_dir + "/report.json", report_json(report, tc.output_dir).dump(2) + "\n");
    for (const auto& r : report.runs) {
      out_ << "seed " << r.seed << "  dev BLEU-4 " << format_value(r.dev.bleu[3]);
      if (r.test) out_ << "  test BLEU-4 " << format_value(r.test->bleu[3]);
      out_ << "  " << fs::relative(r.checkpoint, tc.output_dir).generic_string() << '\n';
    }
    const auto& dev = report.summary.at("dev.bleu4");
    out_ << "dev BLEU-4 mean " << format_value(dev.mean) << " std " << format_value(dev.stddev) << '\n';
  }

  struct LoadedEnsemble {
    std::vector<std::unique_ptr<TransformerModel<float>>> models;
    std::unique_ptr<Ensemble<float>> ensemble;
    std::map<std::string, std::string> metadata;
  };

  LoadedEnsemble load_ensemble(const std::vector<std::string>& paths) {
    if (paths.empty()) throw ConfigError("at least one checkpoint is required");
    LoadedEnsemble le;
    std::vector<const TransformerModel<float>*> ptrs;
    for (const auto& p : paths) {
      auto ckpt = load_checkpoint<float>(cfg_.path(p));
      if (le.models.empty()) {
        le.metadata = ckpt.metadata;
      } else {
        for (const char* key : {"source_vocab", "target_vocab"}) {
          if (ckpt.metadata.count(key) && le.metadata.count(key) && ckpt.metadata.at(key) != le.metadata.at(key)) {
            throw ConfigError("checkpoint " + p + " was trained with a different " + key);
          }
        }
      }
      le.models.push_back(std::make_unique<TransformerModel<float>>(std::move(ckpt.model)));
      ptrs.push_back(le.models.back().get());
    }
    le.ensemble = std::make_unique<Ensemble<float>>(ptrs);
    return le;
  }

  Vocabularies checked_vocabularies(const LoadedEnsemble& le) {
    auto v = load_vocabularies(cfg_, nullptr);
    const auto expected = vocab_metadata(v);
    for (const auto& [key, value] : expected) {
      auto it = le.metadata.find(key);
      if (it != le.metadata.end() && it->second != value) {
        throw ConfigError("vocabulary in " + cfg_.path(cfg_.data_dir) + " does not match the checkpoint's " + key);
      }
    }
    if (v.target.size() != le.ensemble->target_vocab()) throw ConfigError("target vocabulary size differs from the checkpoint");
    return v;
  }

  void translate() {
    const auto le = load_ensemble(translate_.checkpoints);
    const auto vocabs = checked_vocabularies(le);
    std::vector<Sentence> sources;
    for (const auto& line : read_lines(cfg_.path(translate_.input))) sources.push_back(split_whitespace(line));
    const auto hyps = translate_corpus(*le.ensemble, sources, vocabs.source, vocabs.target, cfg_.decoding());
    std::string text;
    for (const auto& h : hyps) text += join(h) + '\n';
    write_text(cfg_.path(translate_.output), text);
    out_ << "translated " << hyps.size() << " sentences with " << le.models.size() << " model(s)\n";
  }

  void evaluate() {
    auto hyps = tokenize_lines(read_lines(cfg_.path(evaluate_.hyp)));
    const auto refs = tokenize_lines(read_lines(cfg_.path(evaluate_.ref)));
    if (evaluate_.lowercase)
      for (auto& s : hyps)
        for (auto& tok : s) tok = utf8_lower(tok);
    const auto report = slt::evaluate(hyps, refs);
    out_ << report.to_text();
    if (!evaluate_.output.empty()) write_text(cfg_.path(evaluate_.output), report.to_json().dump(2) + "\n");
  }

  void sweep(const CLI::App& app) {
    if (sweep_.values.empty()) throw ConfigError("sweep needs at least one value");
    const auto data = prepared();
    std::ostringstream table;
    table << "value\tdev_bleu4\ttest_bleu4\n";
    const std::string base = cfg_.path(cfg_.run_dir);
    save_config(app);
    auto row = [&](double value, double dev, std::optional<double> test) {
      table << format_value(value) << '\t' << format_value(dev) << '\t' << (test ? format_value(*test) : "-") << '\n';
    };
    if (sweep_.axis == "beam") {
      if (sweep_.checkpoints.empty()) throw ConfigError("beam sweep needs --checkpoint");
      const auto le = load_ensemble(sweep_.checkpoints);
      checked_vocabularies(le);
      for (double v : sweep_.values) {
        if (v < 1 || v != static_cast<double>(static_cast<std::size_t>(v))) {
          throw ConfigError("beam width must be a positive integer, got " + format_value(v));
        }
        auto dc = cfg_.decoding();
        dc.beam_width = static_cast<std::size_t>(v);
        const double dev =
            bleu(translate_corpus(*le.ensemble, data.dev.sources, data.source_vocab, data.target_vocab, dc),
                 data.dev.references, 4)
                .score;
        std::optional<double> test;
        if (!data.test_sources.empty()) {
          test = bleu(translate_corpus(*le.ensemble, data.test_sources, data.source_vocab, data.target_vocab, dc),
                      data.test_references, 4)
                     .score;
        }
        row(v, dev, test);
      }
    } else {
      const auto seeds = cfg_.seeds;
      if (seeds.empty()) throw ConfigError("at least one seed is required");
      for (double v : sweep_.values) {
        auto tc = cfg_.training();
        if (sweep_.axis == "warmup") {
          if (v < 1 || v != static_cast<double>(static_cast<std::size_t>(v))) {
            throw ConfigError("warmup must be a positive integer, got " + format_value(v));
          }
          tc.warmup_steps = static_cast<std::size_t>(v);
        } else {
          if (!(v > 0)) throw ConfigError("learning rate must be positive, got " + format_value(v));
          tc.initial_lr = v;
        }
        tc.output_dir = base + "/sweep_" + sweep_.axis + "_" + format_value(v);
        const auto report = train_runs(data, tc);
        write_text(tc.output_dir + "/report.json", report_json(report, tc.output_dir).dump(2) + "\n");
        std::optional<double> test;
        if (report.summary.count("test.bleu4")) test = report.summary.at("test.bleu4").mean;
        row(v, report.summary.at("dev.bleu4").mean, test);
      }
    }
    write_text(base + "/sweep_" + sweep_.axis + ".tsv", table.str());
    out_ << table.str();
  }

  void stats() {
    const std::string dir = cfg_.path(stats_.dir.empty() ? cfg_.data_dir : stats_.dir);
    out_ << stats_table(load_corpus_dir(dir));
  }

  std::ostream& out_;
  std::ostream& err_;
  RunConfig cfg_;
  TranslateArgs translate_;
  EvaluateArgs evaluate_;
  SweepArgs sweep_;
  StatsArgs stats_;
  std::string active_;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  App app(out, err);
  return app.run(argc, argv);
}

}  // namespace slt::cli
