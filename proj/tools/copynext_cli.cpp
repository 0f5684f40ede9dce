// Command-line front end for the span transducer pipeline:
// prep, linearize, train, predict, eval, bench, selfcheck.

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <json.hpp>

#include "copynext/checkpoint.hpp"
#include "copynext/corpus_io.hpp"
#include "copynext/evaluation.hpp"
#include "copynext/inference.hpp"
#include "copynext/linearize.hpp"
#include "copynext/parallel.hpp"
#include "copynext/training.hpp"

namespace cn = copynext;

namespace {

struct CommonFlags {
  std::string scheme = "copynext";
  uint64_t seed = 1;
  int workers = 0;  // 0 = hardware concurrency
};

int effective_workers(int workers) {
  if (workers > 0) return workers;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void attach_embeddings_if_given(const std::string& path, cn::Corpus& corpus) {
  if (path.empty()) return;
  cn::load_embeddings(path, corpus.sentences);
}

std::vector<cn::Prediction> load_predictions(const std::string& path, cn::LabelSet& labels) {
  std::ifstream in(path);
  if (!in) throw cn::CorpusError("cannot open predictions file: " + path);
  std::vector<cn::Prediction> preds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
      cn::Prediction p;
      p.id = rec.at("id").get<std::string>();
      p.decode_ms = rec.value("decode_ms", 0.0);
      for (const auto& sp : rec.value("spans", nlohmann::json::array()))
        p.spans.push_back({sp.at(0).get<int>(), sp.at(1).get<int>(),
                           labels.add(sp.at(2).get<std::string>())});
      preds.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw cn::CorpusError(path + ":" + std::to_string(lineno) + ": malformed record: " +
                            e.what());
    }
  }
  return preds;
}

int run_prep(const std::string& corpus_path, const std::string& out_path,
             const std::string& emb_path, const std::string& static_emb_path,
             bool subword, bool pool, const std::string& out_emb_path) {
  cn::Corpus corpus = cn::load_corpus(corpus_path);
  std::vector<cn::SubwordMap> maps;
  if (subword) {
    for (auto& sent : corpus.sentences) {
      auto [aligned, map] = cn::subword_align(sent, cn::whitespace_tokenizer);
      sent = std::move(aligned);
      maps.push_back(std::move(map));
    }
  }
  if (!emb_path.empty()) attach_embeddings_if_given(emb_path, corpus);
  if (!static_emb_path.empty())
    cn::attach_static_embeddings(cn::load_static_embeddings(static_emb_path), corpus.sentences);
  if (pool) {
    if (maps.empty()) throw cn::ConfigError("--pool requires --subword-align");
    if (out_emb_path.empty()) throw cn::ConfigError("--pool requires --out-embeddings");
    std::ofstream out(out_emb_path);
    for (size_t i = 0; i < corpus.sentences.size(); ++i) {
      cn::Sentence pooled = cn::pool_subwords(corpus.sentences[i].sentence, maps[i]);
      nlohmann::json rec;
      rec["id"] = pooled.id;
      auto vecs = nlohmann::json::array();
      for (const auto& v : pooled.vectors) {
        auto row = nlohmann::json::array();
        for (Eigen::Index k = 0; k < v.size(); ++k) row.push_back(v[k]);
        vecs.push_back(row);
      }
      rec["vectors"] = vecs;
      out << rec.dump() << '\n';
    }
  }
  for (const auto& sent : corpus.sentences) sent.validate(corpus.labels);
  cn::save_corpus(corpus, out_path);
  std::cout << "wrote " << corpus.sentences.size() << " sentences to " << out_path << "\n";
  return 0;
}

int run_linearize(const std::string& corpus_path, const CommonFlags& common) {
  cn::Corpus corpus = cn::load_corpus(corpus_path);
  const cn::Scheme scheme = cn::scheme_from_name(common.scheme);
  for (size_t i = 0; i < corpus.sentences.size(); ++i) {
    const auto& sent = corpus.sentences[i];
    cn::TargetSequence seq =
        cn::gold_sequence(sent, corpus.labels, scheme, common.seed, i);
    auto round = cn::delinearize(seq, sent.sentence.size(), corpus.labels, scheme);
    std::sort(round.begin(), round.end());
    auto want = sent.spans;
    std::sort(want.begin(), want.end());
    if (round != want)
      throw cn::StructureError("round-trip mismatch for sentence " + sent.sentence.id);
    std::cout << cn::format_sequence(seq, corpus.labels) << "\n";
  }
  return 0;
}

int run_train(const std::string& corpus_path, const std::string& dev_path,
              const std::string& emb_path, const std::string& dev_emb_path,
              const std::string& out_path, cn::TrainConfig cfg, const CommonFlags& common) {
  cfg.scheme = cn::scheme_from_name(common.scheme);
  cfg.seed = common.seed;
  cfg.workers = effective_workers(common.workers);
  std::cout << "config: epochs=" << cfg.epochs << " batch=" << cfg.batch_size
            << " lr=" << cfg.learning_rate << " clip=" << cfg.clip_norm
            << " scheme=" << common.scheme << " layers=" << cfg.layers
            << " hidden=" << cfg.hidden << " embed_dim=" << cfg.input_dim
            << " dropout=" << cfg.dropout << " patience=" << cfg.patience
            << " eval_interval=" << cfg.eval_interval << " seed=" << cfg.seed
            << " workers=" << cfg.workers << "\n";
  cn::Corpus corpus = cn::load_corpus(corpus_path);
  attach_embeddings_if_given(emb_path, corpus);
  std::vector<cn::AnnotatedSentence> dev;
  if (!dev_path.empty()) {
    cn::Corpus dev_corpus = cn::load_corpus(dev_path);
    // Dev labels must be scorable against the training label inventory.
    for (const auto& name : dev_corpus.labels.names()) corpus.labels.add(name);
    for (auto& sent : dev_corpus.sentences) {
      for (auto& sp : sent.spans)
        sp.label = corpus.labels.id(dev_corpus.labels.name(sp.label));
      dev.push_back(std::move(sent));
    }
    if (!dev_emb_path.empty()) {
      cn::Corpus tmp;
      tmp.sentences = std::move(dev);
      cn::load_embeddings(dev_emb_path, tmp.sentences);
      dev = std::move(tmp.sentences);
    }
  }
  auto [params, report] = cn::train<double>(corpus, dev, cfg);
  cn::save_checkpoint(params, out_path);
  for (size_t e = 0; e < report.epoch_loss.size(); ++e)
    std::cout << "epoch " << e << ": loss/decision " << report.epoch_loss[e] << " ("
              << report.epoch_seconds[e] << " s)\n";
  for (const auto& ev : report.dev_evals)
    std::cout << "dev@" << ev.epoch << ": P " << ev.precision << " R " << ev.recall << " F1 "
              << ev.f1 << "\n";
  if (report.best_epoch >= 0)
    std::cout << "best dev F1 " << report.best_dev_f1 << " at epoch " << report.best_epoch
              << "\n";
  std::cout << "checkpoint written to " << out_path << "\n";
  return 0;
}

int run_predict(const std::string& corpus_path, const std::string& ckpt_path,
                const std::string& emb_path, const std::string& out_path, int beam,
                int max_len, const CommonFlags& common, bool scheme_given) {
  cn::TransducerParams<double> params = cn::load_checkpoint(ckpt_path);
  if (scheme_given && cn::scheme_from_name(common.scheme) != params.scheme)
    throw cn::ConfigError("checkpoint was trained with scheme " +
                          std::string(cn::scheme_name(params.scheme)) +
                          " but --scheme requests " + common.scheme);
  cn::Corpus corpus = cn::load_corpus(corpus_path);
  for (const auto& name : params.labels.names()) corpus.labels.add(name);
  attach_embeddings_if_given(emb_path, corpus);
  cn::DecodeConfig cfg;
  cfg.beam = beam;
  cfg.max_len = max_len;
  const size_t n = corpus.sentences.size();
  std::vector<nlohmann::json> records(n);
  cn::parallel_for(n, effective_workers(common.workers), [&](size_t i) {
    const auto& sent = corpus.sentences[i].sentence;
    auto in = cn::make_input(sent, params);
    const auto t0 = std::chrono::steady_clock::now();
    cn::TargetSequence seq = cn::decode(in, params, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    auto spans = cn::delinearize(seq, sent.size(), params.labels, params.scheme);
    nlohmann::json rec;
    rec["id"] = sent.id;
    auto arr = nlohmann::json::array();
    for (const auto& sp : spans)
      arr.push_back({sp.start, sp.end, params.labels.name(sp.label)});
    rec["spans"] = arr;
    rec["sequence"] = cn::format_sequence(seq, params.labels);
    rec["decode_ms"] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    records[i] = std::move(rec);
  });
  std::ofstream out(out_path);
  if (!out) throw cn::ConfigError("cannot write predictions: " + out_path);
  for (const auto& rec : records) out << rec.dump() << '\n';
  std::cout << "wrote " << n << " predictions to " << out_path << "\n";
  return 0;
}

int run_eval(const std::string& gold_path, const std::string& pred_path,
             const std::string& csv_path) {
  cn::Corpus gold = cn::load_corpus(gold_path);
  auto preds = load_predictions(pred_path, gold.labels);
  if (preds.size() != gold.sentences.size())
    throw cn::CorpusError("prediction count does not match gold corpus");
  cn::EvalReport rep = cn::score(gold.sentences, preds);
  std::cout << cn::format_eval_report(rep);
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    cn::write_eval_csv(rep, gold.labels, out);
    std::cout << "per-label CSV written to " << csv_path << "\n";
  }
  return 0;
}

int run_bench(const std::string& corpus_path, const std::string& ckpt_path,
              const std::string& emb_path, const std::string& csv_path, int beam,
              int max_len) {
  cn::TransducerParams<double> params = cn::load_checkpoint(ckpt_path);
  cn::Corpus corpus = cn::load_corpus(corpus_path);
  attach_embeddings_if_given(emb_path, corpus);
  cn::DecodeConfig cfg;
  cfg.beam = beam;
  cfg.max_len = max_len;
  cn::BenchReport rep = cn::bench_decode(corpus.sentences, params, cfg);
  std::cout << "sentences/sec " << rep.sentences_per_sec << "\n"
            << "decisions/sec " << rep.decisions_per_sec << "\n"
            << "time(N) fit: " << rep.intercept_ms << " + " << rep.slope_ms_per_token
            << "*N ms (quadratic share at max N: " << rep.quad_share_at_max << ")\n"
            << "spearman(N, time) " << rep.spearman_rho << "\n";
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    cn::write_bench_csv(rep, out);
    std::cout << "per-sentence CSV written to " << csv_path << "\n";
  }
  return 0;
}

// Quick automaton-vs-parser equivalence and a gradient spot check.
int run_selfcheck() {
  using cn::Decision;
  cn::LabelSet labels({"EOS", "A", "B"});
  const int n = 3;
  int checked = 0;
  for (cn::Scheme scheme :
       {cn::Scheme::CopyNextForward, cn::Scheme::CopyOnly, cn::Scheme::CopyPrevBackward}) {
    const int space = cn::decision_space(n, labels.size());
    std::vector<int> codes;
    // Every decision string of length <= 5.
    std::function<void()> recurse = [&]() {
      cn::TargetSequence seq;
      for (int c : codes) seq.push_back(Decision::decode(c, n, labels.size()));
      bool parses = true;
      try {
        (void)cn::delinearize(seq, n, labels, scheme);
      } catch (const cn::StructureError&) {
        parses = false;
      }
      if (parses != cn::accepts(seq, n, labels, scheme)) {
        std::cout << "selfcheck FAILED: automaton/parser disagree on '"
                  << cn::format_sequence(seq, labels) << "'\n";
        std::exit(1);
      }
      ++checked;
      if (codes.size() >= 5) return;
      for (int c = 0; c < space; ++c) {
        codes.push_back(c);
        recurse();
        codes.pop_back();
      }
    };
    recurse();
  }
  std::cout << "selfcheck: automaton equivalence ok (" << checked << " sequences)\n";

  // Gradient spot check on a tiny instance.
  cn::LabelSet gl({"EOS", "A"});
  auto params = cn::make_transducer<double>(1, 4, 3, gl, cn::Scheme::CopyNextForward, 7,
                                            {"<unk>", "a", "b"});
  std::mt19937_64 rng(7);
  cn::init_params(params, rng);
  cn::Sentence sent;
  sent.id = "g";
  sent.tokens = {"a", "b", "a"};
  auto in = cn::make_input(sent, params);
  cn::TargetSequence gold = {Decision::point(0), Decision::copy_next(), Decision::label(1),
                             Decision::label(0)};
  auto grad = cn::zeros_like(params);
  (void)cn::sequence_loss(in, gold, params, grad);
  double max_rel = 0;
  const double h = 1e-5;
  std::vector<std::pair<double*, Eigen::Index>> pslots, gslots;
  params.visit_arrays([&](const std::string&, auto& a) { pslots.push_back({a.data(), a.size()}); });
  grad.visit_arrays([&](const std::string&, auto& a) { gslots.push_back({a.data(), a.size()}); });
  for (size_t s = 0; s < pslots.size(); ++s)
    for (Eigen::Index k = 0; k < pslots[s].second; ++k) {
      double& w = pslots[s].first[k];
      const double orig = w;
      w = orig + h;
      auto in_p = cn::make_input(sent, params);
      const double lp = cn::sequence_loss_value(in_p, gold, params);
      w = orig - h;
      auto in_m = cn::make_input(sent, params);
      const double lm = cn::sequence_loss_value(in_m, gold, params);
      w = orig;
      const double fd = (lp - lm) / (2 * h);
      const double an = gslots[s].first[k];
      // Floor keeps FD rounding noise from dominating zero-gradient coords.
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4});
      max_rel = std::max(max_rel, rel);
    }
  if (max_rel > 1e-4) {
    std::cout << "selfcheck FAILED: gradient check max relative error " << max_rel << "\n";
    return 1;
  }
  std::cout << "selfcheck: gradient check ok (max relative error " << max_rel << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CopyNext span transducer"};
  app.require_subcommand(1);

  CommonFlags common;
  std::string corpus_path, dev_path, out_path, emb_path, dev_emb_path, static_emb_path;
  std::string ckpt_path, pred_path, csv_path, out_emb_path;
  bool subword = false, pool = false;
  int beam = 1, max_len = 0;
  cn::TrainConfig tcfg;

  auto add_common = [&](CLI::App* sub, bool with_scheme = true) {
    if (with_scheme)
      sub->add_option("--scheme", common.scheme, "copynext|copy|copyprev")
          ->check(CLI::IsMember({"copynext", "copy", "copyprev"}));
    sub->add_option("--seed", common.seed, "master seed");
    sub->add_option("--workers", common.workers, "worker threads (0 = all cores)");
  };

  auto* prep = app.add_subcommand("prep", "validate, align, and attach embeddings");
  prep->add_option("--corpus", corpus_path)->required();
  prep->add_option("--out", out_path)->required();
  prep->add_option("--embeddings", emb_path, "contextual embedding JSONL");
  prep->add_option("--static-embeddings", static_emb_path, "static word-vector table");
  prep->add_flag("--subword-align", subword, "re-tokenize on whitespace and remap spans");
  prep->add_flag("--pool", pool, "mean-pool subword vectors back to tokens");
  prep->add_option("--out-embeddings", out_emb_path, "pooled embedding JSONL output");

  auto* lin = app.add_subcommand("linearize", "print decision sequences for a corpus");
  lin->add_option("--corpus", corpus_path)->required();
  add_common(lin);

  auto* train = app.add_subcommand("train", "train a transducer");
  train->add_option("--corpus", corpus_path)->required();
  train->add_option("--dev", dev_path, "development corpus for model selection");
  train->add_option("--embeddings", emb_path, "contextual embedding JSONL (train)");
  train->add_option("--dev-embeddings", dev_emb_path, "contextual embedding JSONL (dev)");
  train->add_option("--out", out_path, "checkpoint path")->required();
  train->add_option("--epochs", tcfg.epochs);
  train->add_option("--batch", tcfg.batch_size);
  train->add_option("--lr", tcfg.learning_rate);
  train->add_option("--clip", tcfg.clip_norm);
  train->add_option("--layers", tcfg.layers, "stacked LSTM layers J");
  train->add_option("--hidden", tcfg.hidden, "hidden size D (even)");
  train->add_option("--embed-dim", tcfg.input_dim, "learned embedding dim E");
  train->add_option("--dropout", tcfg.dropout);
  train->add_option("--patience", tcfg.patience);
  train->add_option("--eval-interval", tcfg.eval_interval);
  train->set_config("--config", "", "TOML key-value config file");
  add_common(train);

  auto* predict = app.add_subcommand("predict", "decode a corpus with a checkpoint");
  predict->add_option("--corpus", corpus_path)->required();
  predict->add_option("--checkpoint", ckpt_path)->required();
  predict->add_option("--embeddings", emb_path);
  predict->add_option("--out", out_path)->required();
  predict->add_option("--beam", beam, "beam size (1 = greedy)");
  predict->add_option("--max-len", max_len, "max output length (0 = 8*N)");
  add_common(predict);

  auto* eval = app.add_subcommand("eval", "score predictions against gold");
  eval->add_option("--gold", corpus_path)->required();
  eval->add_option("--pred", pred_path)->required();
  eval->add_option("--csv", csv_path, "per-label CSV output");

  auto* bench = app.add_subcommand("bench", "time decoding over a corpus (single worker)");
  bench->add_option("--corpus", corpus_path)->required();
  bench->add_option("--checkpoint", ckpt_path)->required();
  bench->add_option("--embeddings", emb_path);
  bench->add_option("--csv", csv_path, "per-sentence CSV output");
  bench->add_option("--beam", beam);
  bench->add_option("--max-len", max_len);

  auto* selfcheck = app.add_subcommand("selfcheck", "run built-in oracles");
  (void)selfcheck;

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(prep))
      return run_prep(corpus_path, out_path, emb_path, static_emb_path, subword, pool,
                      out_emb_path);
    if (app.got_subcommand(lin)) return run_linearize(corpus_path, common);
    if (app.got_subcommand(train))
      return run_train(corpus_path, dev_path, emb_path, dev_emb_path, out_path, tcfg, common);
    if (app.got_subcommand(predict))
      return run_predict(corpus_path, ckpt_path, emb_path, out_path, beam, max_len, common,
                         predict->count("--scheme") > 0);
    if (app.got_subcommand(eval)) return run_eval(corpus_path, pred_path, csv_path);
    if (app.got_subcommand(bench))
      return run_bench(corpus_path, ckpt_path, emb_path, csv_path, beam, max_len);
    if (app.got_subcommand(selfcheck)) return run_selfcheck();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
