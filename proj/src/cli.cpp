#include "elm/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>

#include "elm/config.hpp"
#include "elm/corpus.hpp"
#include "elm/error.hpp"
#include "elm/io.hpp"
#include "elm/params.hpp"
#include "elm/rescoring.hpp"
#include "elm/synthetic.hpp"
#include "elm/training.hpp"

namespace elm::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Run configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config key (key=value), repeatable")->allow_extra_args(false);
  cmd->add_option("--out", c.out_dir, "Output directory")->capture_default_str();
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  apply_overrides(cfg, c.overrides);
  cfg.validate();
  return cfg;
}

std::string sub_dir(const Common& c, const char* name) {
  const std::string dir = (fs::path(c.out_dir) / name).string();
  ensure_directory(dir);
  return dir;
}

std::string join(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

// File name up to its first dot: "test.nbest.jsonl" -> "test".
std::string stem(const std::string& path) {
  const std::string file = fs::path(path).filename().string();
  return file.substr(0, file.find('.'));
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

Vocab resolve_vocab(const RunConfig& cfg, const std::vector<std::string>& corpus_lines) {
  if (!cfg.vocab.empty()) return Vocab::load(cfg.vocab);
  return Vocab::from_text(corpus_lines);
}

// ---------------------------------------------------------------------------

int cmd_train_alm(const Common& common, const std::string& corpus_path, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  const Vocab vocab = resolve_vocab(cfg, read_lines(corpus_path));
  const Corpus corpus = load_corpus(corpus_path, vocab, cfg.max_len);
  if (corpus.empty()) throw ContractError("training corpus '" + corpus_path + "' is empty");
  AutoregressiveLM alm(vocab, cfg.transformer(vocab.size()), cfg.seed);
  Optimizer opt(cfg.phi_optimizer());
  CorpusBatchSource source(corpus, cfg.batch_size, cfg.seed);
  std::string log;
  for (std::size_t step = 1; step <= cfg.alm_steps; ++step) {
    const auto batch = source.next_batch();
    const double nll = alm_mle_step(alm, batch, opt);
    log += "step=" + std::to_string(step) + " nll=" + fmt(nll) + "\n";
  }
  const std::string ckpt_dir = sub_dir(common, "checkpoints");
  alm.save(join(ckpt_dir, "alm.ckpt"));
  vocab.save(join(ckpt_dir, "vocab.txt"));
  write_text_file(join(sub_dir(common, "metrics"), "train-alm.log"), log);
  write_text_file(join(sub_dir(common, "reports"), "train-alm.config"), cfg.to_text());
  out << "trained ALM for " << cfg.alm_steps << " steps on " << corpus.size() << " sentences -> "
      << join(ckpt_dir, "alm.ckpt") << "\n";
  return kOk;
}

int cmd_train_elm(const Common& common, const std::string& corpus_path, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  std::unique_ptr<AutoregressiveLM> noise;
  Vocab vocab;
  if (!cfg.noise_checkpoint.empty()) {
    noise = std::make_unique<AutoregressiveLM>(AutoregressiveLM::load(cfg.noise_checkpoint));
    vocab = cfg.vocab.empty() ? noise->vocab() : Vocab::load(cfg.vocab);
    if (!(vocab == noise->vocab())) throw ConfigError("vocab differs from the noise checkpoint's vocabulary");
  } else {
    vocab = resolve_vocab(cfg, read_lines(corpus_path));
  }
  const Corpus corpus = load_corpus(corpus_path, vocab, cfg.max_len);
  if (corpus.empty()) throw ContractError("training corpus '" + corpus_path + "' is empty");
  if (!noise) {
    Rng seeder = make_stream(cfg.seed, "noise-init");
    noise = std::make_unique<AutoregressiveLM>(vocab, cfg.transformer(vocab.size()), seeder());
  }
  if (noise->max_len() < cfg.max_len) throw ConfigError("noise checkpoint max_len is below the configured max_len");

  EnergyModel model(vocab, cfg.energy(vocab.size()), cfg.seed);
  if (cfg.model_kind == ModelKind::TrfLm) model.set_length_prior(empirical_length_prior(corpus.sentences, cfg.max_len));

  const std::string ckpt_dir = sub_dir(common, "checkpoints");
  const std::string metrics_dir = sub_dir(common, "metrics");
  write_text_file(join(sub_dir(common, "reports"), "train-elm.config"), cfg.to_text());
  vocab.save(join(ckpt_dir, "vocab.txt"));

  ElmTrainer trainer(model, *noise, cfg.training());
  CorpusBatchSource source(corpus, cfg.batch_size, cfg.seed);
  std::string log;
  auto flush_log = [&] { write_text_file(join(metrics_dir, "train-elm.log"), log); };
  try {
    trainer.run(source, [&](const StepMetrics& m) {
      log += format_metrics(m) + "\n";
      if (cfg.checkpoint_every > 0 && m.step % cfg.checkpoint_every == 0 && m.step < cfg.steps) {
        model.save(join(ckpt_dir, "elm-step" + std::to_string(m.step) + ".ckpt"));
      }
    });
  } catch (const DivergenceError& e) {
    log += "aborted at step " + std::to_string(trainer.steps_done() + 1) + ": " + e.what() + "\n";
    flush_log();
    throw;
  }
  flush_log();
  model.save(join(ckpt_dir, "elm.ckpt"));
  noise->save(join(ckpt_dir, "noise.ckpt"));
  out << "trained " << to_string(cfg.model_kind) << "/" << to_string(cfg.architecture) << " with "
      << to_string(cfg.method) << " for " << cfg.steps << " steps -> " << join(ckpt_dir, "elm.ckpt") << "\n";
  return kOk;
}

// Scorer for a checkpoint path, or no scorer for "none".
struct LoadedScorer {
  std::unique_ptr<EnergyModel> elm;
  std::unique_ptr<AutoregressiveLM> alm;
  LmScorer scorer;
  const Vocab* vocab = nullptr;
};

LoadedScorer load_scorer(const std::string& path) {
  LoadedScorer s;
  if (path == "none") {
    s.scorer = [](const Hypothesis&) { return 0.0; };
    return s;
  }
  const CheckpointData data = read_checkpoint(path);
  const std::string kind = data.meta("model");
  if (kind == "elm") {
    s.elm = std::make_unique<EnergyModel>(EnergyModel::from_checkpoint(data));
    s.scorer = energy_scorer(*s.elm);
    s.vocab = &s.elm->vocab();
  } else if (kind == "alm") {
    s.alm = std::make_unique<AutoregressiveLM>(AutoregressiveLM::from_checkpoint(data));
    s.scorer = alm_scorer(*s.alm);
    s.vocab = &s.alm->vocab();
  } else {
    throw ParseError("checkpoint '" + path + "' has unknown model type '" + kind + "'");
  }
  return s;
}

int cmd_rescore(const Common& common, const std::string& model_path, const std::string& nbest_path,
                const std::string& dev_path, std::string name, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  if (name.empty()) name = stem(nbest_path);
  LoadedScorer scorer = load_scorer(model_path);
  InterpWeights w{cfg.alpha, cfg.beta};
  std::string report;
  if (!dev_path.empty()) {
    auto dev = read_nbest_jsonl(dev_path);
    tokenize(dev, scorer.vocab);
    score_lists(dev, scorer.scorer);
    const TuneResult tuned = tune_weights(dev, cfg.grid());
    w = tuned.weights;
    report += "dev_cer=" + fmt(tuned.dev_cer) + "\n";
  }
  auto lists = read_nbest_jsonl(nbest_path);
  tokenize(lists, scorer.vocab);
  score_lists(lists, scorer.scorer);
  const auto selections = rescore(lists, w, cfg.temperature);
  std::size_t fallbacks = 0;
  for (const auto& s : selections) fallbacks += s.fallback ? 1 : 0;
  report = "alpha=" + fmt(w.alpha) + "\nbeta=" + fmt(w.beta) + "\n" + report +
           "fallbacks=" + std::to_string(fallbacks) + "\n";
  const std::string sel_path = join(sub_dir(common, "selections"), name + ".jsonl");
  write_text_file(sel_path, selections_jsonl(selections));
  write_text_file(join(sub_dir(common, "reports"), name + ".rescore.txt"), report);
  out << "rescored " << lists.size() << " utterances (alpha=" << fmt(w.alpha) << ", beta=" << fmt(w.beta)
      << ", fallbacks=" << fallbacks << ") -> " << sel_path << "\n";
  return kOk;
}

int cmd_evaluate(const Common& common, const std::string& nbest_path, const std::string& sel_path, std::string name,
                 std::ostream& out) {
  resolve_config(common);
  if (name.empty()) name = stem(sel_path);
  const auto lists = read_nbest_jsonl(nbest_path);
  const auto selections = read_selections_jsonl(sel_path);
  const CorpusCer c = selection_cer(lists, selections);
  std::ostringstream report;
  report << "cer=" << fmt(c.rate) << "\nerrors=" << c.errors << "\nref_chars=" << c.ref_chars
         << "\nutterances=" << c.utterances << "\nempty_refs=" << c.empty_refs
         << "\nempty_ref_insertions=" << c.empty_ref_insertions << "\n";
  write_text_file(join(sub_dir(common, "metrics"), name + ".cer.txt"), report.str());
  out << "CER " << fmt(c.rate) << " (" << c.errors << " errors / " << c.ref_chars << " characters)\n";
  return kOk;
}

int cmd_significance(const Common& common, const std::vector<std::string>& paths,
                     const std::vector<std::string>& test_sets, const std::string& dataset,
                     const std::string& label_a, const std::string& label_b, std::ostream& out) {
  resolve_config(common);
  if (paths.empty() || paths.size() % 3 != 0) {
    throw ConfigError("significance takes NBEST SEL_A SEL_B triples, one per test set");
  }
  SignificanceRow row;
  row.dataset = dataset;
  row.system_a = label_a;
  row.system_b = label_b;
  for (std::size_t i = 0; i < paths.size(); i += 3) {
    const auto lists = read_nbest_jsonl(paths[i]);
    const auto ea = per_utterance_errors(lists, read_selections_jsonl(paths[i + 1]));
    const auto eb = per_utterance_errors(lists, read_selections_jsonl(paths[i + 2]));
    row.test_sets.push_back(i / 3 < test_sets.size() ? test_sets[i / 3] : stem(paths[i]));
    row.results.push_back(matched_pair_test(ea, eb));
  }
  const std::string table = format_significance_table({row});
  write_text_file(join(sub_dir(common, "reports"), "significance.txt"), table);
  out << table;
  return kOk;
}

int cmd_confidence(const Common& common, const std::string& nbest_path, const std::string& sel_path,
                   std::string name, std::ostream& out) {
  resolve_config(common);
  if (name.empty()) name = stem(sel_path);
  const auto lists = read_nbest_jsonl(nbest_path);
  const auto selections = read_selections_jsonl(sel_path);
  const auto texts = selected_texts(lists, selections);
  std::map<std::string, const NBestList*> by_utt;
  for (const auto& l : lists) by_utt[l.utt] = &l;
  std::vector<double> conf;
  std::vector<bool> labels;
  for (std::size_t i = 0; i < selections.size(); ++i) {
    conf.push_back(selections[i].confidence);
    labels.push_back(texts[i] == by_utt.at(selections[i].utt)->ref);
  }
  const PrCurve curve = pr_curve_auc(conf, labels);
  const std::string dir = sub_dir(common, "reports");
  write_text_file(join(dir, name + ".pr.csv"), pr_curve_csv(curve));
  if (std::isnan(curve.auc)) {
    write_text_file(join(dir, name + ".auc.txt"), "auc=undefined\nreason=no positive labels\n");
    throw DomainError("PR-AUC is undefined: no selection matches its reference");
  }
  write_text_file(join(dir, name + ".auc.txt"), "auc=" + fmt(curve.auc) + "\n");
  out << "PR-AUC " << fmt(curve.auc) << " over " << selections.size() << " utterances\n";
  return kOk;
}

int cmd_logz(const Common& common, const std::string& model_path, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  const std::string bytes = read_text_file(model_path);
  char sum[24];
  std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  const std::string cache = join(sub_dir(common, "reports"), stem(model_path) + ".logz.txt");
  if (file_exists(cache)) {
    const std::string cached = read_text_file(cache);
    if (cached.rfind(std::string("checksum=") + sum + "\n", 0) == 0) {
      out << cached << "(cached)\n";
      return kOk;
    }
  }
  const EnergyModel model = EnergyModel::load(model_path);
  const Normalizers z = exact_log_z(model, {}, cfg.enum_budget);
  std::ostringstream report;
  report << "checksum=" << sum << "\nkind=" << to_string(z.kind) << "\n";
  char buf[64];
  for (const auto& [len, lz] : z.log_z_by_length) {
    std::snprintf(buf, sizeof buf, "log_z[%zu]=%.17g\n", len, lz);
    report << buf;
  }
  std::snprintf(buf, sizeof buf, "log_z=%.17g\n", z.log_z);
  report << buf;
  write_text_file(cache, report.str());
  out << report.str();
  return kOk;
}

int cmd_sample(const Common& common, const std::string& model_path, const std::string& proposal_path,
               std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  const CheckpointData data = read_checkpoint(model_path);
  Rng rng = make_stream(cfg.seed, "sample");
  std::string report;
  if (data.meta("model") == "alm") {
    const AutoregressiveLM alm = AutoregressiveLM::from_checkpoint(data);
    for (std::size_t i = 0; i < cfg.num_samples; ++i) {
      const AlmSample s = alm.sample(alm.max_len(), rng);
      report += alm.vocab().decode_text(s.tokens) + (s.truncated ? "\t[truncated]" : "") + "\n";
    }
  } else {
    const EnergyModel model = EnergyModel::from_checkpoint(data);
    const std::string qpath = proposal_path.empty() ? cfg.noise_checkpoint : proposal_path;
    if (qpath.empty()) throw ConfigError("sampling an energy model needs --proposal or noise_checkpoint");
    const AutoregressiveLM q = AutoregressiveLM::load(qpath);
    if (!(q.vocab() == model.vocab())) throw ConfigError("proposal vocabulary differs from the model's");
    const MisResult chain = mis_sample(model, q, cfg.num_samples, rng);
    for (const auto& x : chain.states) report += model.vocab().decode_text(x) + "\n";
    report += "acceptance_rate=" + fmt(chain.acceptance_rate()) + "\n";
  }
  write_text_file(join(sub_dir(common, "reports"), stem(model_path) + ".samples.txt"), report);
  out << report;
  return kOk;
}

struct SynthOptions {
  std::size_t train = 2000, dev = 200, test = 200;
  NBestSynthConfig nbest;
};

int cmd_synth(const Common& common, const SynthOptions& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  Rng rng = make_stream(cfg.seed, "synth");
  const std::string dir = sub_dir(common, "data");
  auto lines = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& l : v) s += l + "\n";
    return s;
  };
  const auto train = toy_corpus(o.train, rng);
  const auto dev = toy_corpus(o.dev, rng);
  const auto test = toy_corpus(o.test, rng);
  const auto alphabet = toy_grammar_alphabet();
  write_text_file(join(dir, "train.txt"), lines(train));
  Vocab(alphabet).save(join(dir, "vocab.txt"));
  write_text_file(join(dir, "dev.nbest.jsonl"), nbest_jsonl(synthesize_nbest(dev, alphabet, o.nbest, rng, "dev")));
  write_text_file(join(dir, "test.nbest.jsonl"),
                  nbest_jsonl(synthesize_nbest(test, alphabet, o.nbest, rng, "test")));
  out << "wrote toy-grammar corpus and n-best lists to " << dir << "\n";
  return kOk;
}

int categorize(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Config: return kConfig;
    case ErrorKind::Io: return kIo;
    case ErrorKind::Parse: return kParse;
    case ErrorKind::Dimension:
    case ErrorKind::Index:
    case ErrorKind::Domain:
    case ErrorKind::Length: return kData;
    case ErrorKind::Budget: return kBudget;
    case ErrorKind::Divergence: return kDivergence;
    case ErrorKind::Contract: return kContract;
  }
  return kInternal;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Energy-based language models for n-best rescoring", "elm"};
  app.require_subcommand(1);

  Common common;
  std::string corpus, model, nbest, dev, name, sel, proposal;
  std::vector<std::string> paths, test_sets;
  std::string dataset = "data", label_a = "A", label_b = "B";
  SynthOptions synth;

  auto* train_alm = app.add_subcommand("train-alm", "Train the autoregressive noise/proposal model");
  add_common(train_alm, common);
  train_alm->add_option("corpus", corpus, "Training sentences, one per line")->required();

  auto* train_elm = app.add_subcommand("train-elm", "Train an energy model with NCE, DNCE, or MLE");
  add_common(train_elm, common);
  train_elm->add_option("corpus", corpus, "Training sentences, one per line")->required();

  auto* rescore_cmd = app.add_subcommand("rescore", "Rescore n-best lists with a language model");
  add_common(rescore_cmd, common);
  rescore_cmd->add_option("model", model, "Checkpoint, or 'none' for the first pass")->required();
  rescore_cmd->add_option("nbest", nbest, "N-best JSON lines")->required();
  rescore_cmd->add_option("--dev", dev, "Tune alpha/beta on this n-best file");
  rescore_cmd->add_option("--name", name, "Output name (default: n-best file stem)");

  auto* evaluate = app.add_subcommand("evaluate", "Corpus CER of a selections file");
  add_common(evaluate, common);
  evaluate->add_option("nbest", nbest)->required();
  evaluate->add_option("selections", sel)->required();
  evaluate->add_option("--name", name);

  auto* significance = app.add_subcommand("significance", "Matched-pair test between two systems");
  add_common(significance, common);
  significance->add_option("paths", paths, "NBEST SEL_A SEL_B, repeated per test set")->required();
  significance->add_option("--test-set", test_sets, "Test set names, in order")->allow_extra_args(false);
  significance->add_option("--dataset", dataset);
  significance->add_option("--label-a", label_a);
  significance->add_option("--label-b", label_b);

  auto* confidence = app.add_subcommand("confidence", "Precision-recall curve and AUC of selection confidence");
  add_common(confidence, common);
  confidence->add_option("nbest", nbest)->required();
  confidence->add_option("selections", sel)->required();
  confidence->add_option("--name", name);

  auto* logz = app.add_subcommand("logz", "Exact normalizers of a small energy model by enumeration");
  add_common(logz, common);
  logz->add_option("model", model)->required();

  auto* sample = app.add_subcommand("sample", "Draw sentences from a model (MIS for energy models)");
  add_common(sample, common);
  sample->add_option("model", model)->required();
  sample->add_option("--proposal", proposal, "ALM checkpoint used as the MIS proposal");

  auto* synth_cmd = app.add_subcommand("synth", "Write a toy-grammar corpus and synthetic n-best lists");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--train-size", synth.train)->capture_default_str();
  synth_cmd->add_option("--dev-size", synth.dev)->capture_default_str();
  synth_cmd->add_option("--test-size", synth.test)->capture_default_str();
  synth_cmd->add_option("--hyps", synth.nbest.hyps_per_utt)->capture_default_str();
  synth_cmd->add_option("--am-noise", synth.nbest.am_noise)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_alm) return cmd_train_alm(common, corpus, out);
    if (*train_elm) return cmd_train_elm(common, corpus, out);
    if (*rescore_cmd) return cmd_rescore(common, model, nbest, dev, name, out);
    if (*evaluate) return cmd_evaluate(common, nbest, sel, name, out);
    if (*significance) return cmd_significance(common, paths, test_sets, dataset, label_a, label_b, out);
    if (*confidence) return cmd_confidence(common, nbest, sel, name, out);
    if (*logz) return cmd_logz(common, model, out);
    if (*sample) return cmd_sample(common, model, proposal, out);
    if (*synth_cmd) return cmd_synth(common, synth, out);
  } catch (const Error& e) {
    err << to_string(e.kind()) << ": " << e.what() << "\n";
    return categorize(e);
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace elm::cli
