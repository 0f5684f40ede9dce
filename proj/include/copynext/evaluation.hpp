#pragma once

#include <algorithm>
#include <chrono>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "copynext/corpus_io.hpp"
#include "copynext/inference.hpp"
#include "copynext/types.hpp"

namespace copynext {

struct Prediction {
  std::string id;
  std::vector<LabeledSpan> spans;
  double decode_ms = 0;
};

struct LabelScore {
  int gold = 0, predicted = 0, matched = 0;
};

enum class ErrorType : uint8_t {
  MislabeledSpan,    // exact boundaries, wrong label
  BoundaryError,     // overlapping span, right label
  SpanAndLabelError, // overlapping span, wrong label
  MissingSpan,
  SpuriousSpan,
};

inline const char* error_type_name(ErrorType t) {
  switch (t) {
    case ErrorType::MislabeledSpan: return "mislabeled_span";
    case ErrorType::BoundaryError: return "boundary_error";
    case ErrorType::SpanAndLabelError: return "span_and_label_error";
    case ErrorType::MissingSpan: return "missing_span";
    case ErrorType::SpuriousSpan: return "spurious_span";
  }
  return "?";
}

struct ErrorRecord {
  std::string sentence_id;
  ErrorType type;
  std::optional<LabeledSpan> gold;
  std::optional<LabeledSpan> predicted;
};

struct EvalReport {
  double precision = 0, recall = 0, f1 = 0;
  int gold_total = 0, predicted_total = 0, matched_total = 0;
  std::map<int, LabelScore> per_label;
  std::map<ErrorType, int> error_counts;
};

namespace detail {

inline double safe_p(int matched, int predicted) {
  return predicted == 0 ? 1.0 : static_cast<double>(matched) / predicted;
}
inline double safe_r(int matched, int gold) {
  return gold == 0 ? 1.0 : static_cast<double>(matched) / gold;
}
inline double f1_of(double p, double r) { return p + r == 0 ? 0.0 : 2 * p * r / (p + r); }

/// Exact (start, end, label) set matching for one sentence; returns the
/// unmatched remainder on both sides. Duplicate-safe via multiset semantics.
inline void match_sentence(const std::vector<LabeledSpan>& gold,
                           const std::vector<LabeledSpan>& pred, int& matched,
                           std::vector<LabeledSpan>& gold_left,
                           std::vector<LabeledSpan>& pred_left) {
  std::vector<bool> used(pred.size(), false);
  for (const auto& g : gold) {
    bool hit = false;
    for (size_t i = 0; i < pred.size(); ++i)
      if (!used[i] && pred[i] == g) {
        used[i] = true;
        hit = true;
        ++matched;
        break;
      }
    if (!hit) gold_left.push_back(g);
  }
  for (size_t i = 0; i < pred.size(); ++i)
    if (!used[i]) pred_left.push_back(pred[i]);
}

inline bool overlaps(const LabeledSpan& a, const LabeledSpan& b) {
  return a.start < b.end && b.start < a.end;
}

}  // namespace detail

/// Micro-averaged exact-match P/R/F1 over span triples, with per-label
/// breakdown and error-type counts.
inline EvalReport score(const std::vector<AnnotatedSentence>& gold,
                        const std::vector<Prediction>& pred,
                        std::vector<ErrorRecord>* errors_out = nullptr) {
  if (gold.size() != pred.size())
    throw CorpusError("score: gold and prediction counts differ");
  EvalReport rep;
  std::vector<ErrorRecord> errors;
  for (size_t si = 0; si < gold.size(); ++si) {
    if (gold[si].sentence.id != pred[si].id)
      throw CorpusError("score: id mismatch at record " + std::to_string(si) + " (" +
                        gold[si].sentence.id + " vs " + pred[si].id + ")");
    int matched = 0;
    std::vector<LabeledSpan> gold_left, pred_left;
    detail::match_sentence(gold[si].spans, pred[si].spans, matched, gold_left, pred_left);
    rep.gold_total += static_cast<int>(gold[si].spans.size());
    rep.predicted_total += static_cast<int>(pred[si].spans.size());
    rep.matched_total += matched;
    for (const auto& g : gold[si].spans) ++rep.per_label[g.label].gold;
    for (const auto& s : pred[si].spans) ++rep.per_label[s.label].predicted;
    for (const auto& g : gold[si].spans)
      for (const auto& s : pred[si].spans)
        if (g == s) { ++rep.per_label[g.label].matched; break; }

    // Error taxonomy, by precedence: exact boundaries > same-label overlap >
    // any overlap > missing. Each unmatched prediction is consumed at most
    // once; leftovers are spurious.
    std::vector<bool> consumed(pred_left.size(), false);
    for (const auto& g : gold_left) {
      int pick = -1;
      ErrorType type = ErrorType::MissingSpan;
      for (size_t i = 0; i < pred_left.size() && pick < 0; ++i)
        if (!consumed[i] && pred_left[i].start == g.start && pred_left[i].end == g.end) {
          pick = static_cast<int>(i);
          type = ErrorType::MislabeledSpan;
        }
      for (size_t i = 0; i < pred_left.size() && pick < 0; ++i)
        if (!consumed[i] && pred_left[i].label == g.label && detail::overlaps(pred_left[i], g)) {
          pick = static_cast<int>(i);
          type = ErrorType::BoundaryError;
        }
      for (size_t i = 0; i < pred_left.size() && pick < 0; ++i)
        if (!consumed[i] && detail::overlaps(pred_left[i], g)) {
          pick = static_cast<int>(i);
          type = ErrorType::SpanAndLabelError;
        }
      ErrorRecord rec{gold[si].sentence.id, type, g, std::nullopt};
      if (pick >= 0) {
        consumed[pick] = true;
        rec.predicted = pred_left[pick];
      }
      errors.push_back(rec);
    }
    for (size_t i = 0; i < pred_left.size(); ++i)
      if (!consumed[i])
        errors.push_back({gold[si].sentence.id, ErrorType::SpuriousSpan, std::nullopt,
                          pred_left[i]});
  }
  rep.precision = (rep.predicted_total == 0 && rep.matched_total == 0)
                      ? 1.0
                      : detail::safe_p(rep.matched_total, rep.predicted_total);
  rep.recall = detail::safe_r(rep.matched_total, rep.gold_total);
  rep.f1 = detail::f1_of(rep.precision, rep.recall);
  for (const auto& e : errors) ++rep.error_counts[e.type];
  if (errors_out) *errors_out = std::move(errors);
  return rep;
}

inline std::vector<ErrorRecord> classify_errors(const std::vector<AnnotatedSentence>& gold,
                                                const std::vector<Prediction>& pred) {
  std::vector<ErrorRecord> errors;
  score(gold, pred, &errors);
  return errors;
}

/// Synthetic nested-span generator. Entities are bracketed with
/// label-specific open/close marker tokens, so boundaries and labels are
/// deterministic functions of the token sequence (the task is learnable by
/// construction). Children carry a different label than their parent.
struct SyntheticConfig {
  std::vector<std::string> labels = {"LA", "LB", "LC"};
  int max_depth = 2;
  int min_len = 6, max_len = 16;
  uint64_t seed = 1;
  int num_fillers = 6;
  double entity_prob = 0.35;  // per position, chance of opening an entity
  double child_prob = 0.75;   // chance a non-leaf entity contains a child
};

inline Corpus gen_synthetic(const SyntheticConfig& cfg, int count) {
  if (cfg.max_depth < 1) throw ConfigError("gen_synthetic: depth must be >= 1");
  Corpus corpus;
  std::vector<int> label_ids;
  for (const auto& l : cfg.labels) label_ids.push_back(corpus.labels.add(l));
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> filler(0, cfg.num_fillers - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  for (int si = 0; si < count; ++si) {
    AnnotatedSentence sent;
    sent.sentence.id = "syn" + std::to_string(si);
    std::uniform_int_distribution<int> len_dist(cfg.min_len, cfg.max_len);
    const int target = len_dist(rng);
    auto& toks = sent.sentence.tokens;

    // Emits one entity of the given depth; returns after pushing its tokens
    // and recording its span (and any children's).
    auto emit_entity = [&](auto&& self, int depth, int avoid_label) -> void {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(label_ids.size()) - 1);
      int label = label_ids[pick(rng)];
      while (static_cast<int>(label_ids.size()) > 1 && label == avoid_label)
        label = label_ids[pick(rng)];
      const int start = static_cast<int>(toks.size());
      toks.push_back("open_" + corpus.labels.name(label));
      if (depth > 1 && coin(rng) < cfg.child_prob) {
        self(self, depth - 1, label);
      } else {
        const int inner = 1 + (coin(rng) < 0.5 ? 1 : 0);
        for (int i = 0; i < inner; ++i) toks.push_back("w" + std::to_string(filler(rng)));
      }
      toks.push_back("close_" + corpus.labels.name(label));
      sent.spans.push_back({start, static_cast<int>(toks.size()), label});
    };

    while (static_cast<int>(toks.size()) < target) {
      if (coin(rng) < cfg.entity_prob) {
        std::uniform_int_distribution<int> depth_dist(1, cfg.max_depth);
        emit_entity(emit_entity, depth_dist(rng), -1);
      } else {
        toks.push_back("w" + std::to_string(filler(rng)));
      }
    }
    sent.validate(corpus.labels);
    corpus.sentences.push_back(std::move(sent));
  }
  return corpus;
}

struct BenchReport {
  struct Point {
    std::string id;
    int n = 0;
    int decisions = 0;
    double ms = 0;
  };
  std::vector<Point> points;
  double sentences_per_sec = 0;
  double decisions_per_sec = 0;
  double slope_ms_per_token = 0;   // least-squares linear fit time = a + b*N
  double intercept_ms = 0;
  double quad_coeff = 0;           // c in time = a + b*N + c*N^2
  double quad_share_at_max = 0;    // c*Nmax^2 / predicted(Nmax)
  double spearman_rho = 0;
};

namespace detail {

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (size_t i = 0; i < idx.size();) {
      size_t j = i;
      while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
      const double mean_rank = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0;
      for (size_t k = i; k < j; ++k) r[idx[k]] = mean_rank;
      i = j;
    }
    return r;
  };
  auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) { mx += rx[i]; my += ry[i]; }
  mx /= n; my /= n;
  double num = 0, dx = 0, dy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  return dx == 0 || dy == 0 ? 0 : num / std::sqrt(dx * dy);
}

}  // namespace detail

/// Times greedy span prediction per sentence (single worker, with warmup)
/// and fits linear and quadratic models of time vs N. Each sentence is
/// decoded `reps` times and the minimum is kept, which suppresses scheduler
/// and allocator noise in the per-sentence figures.
template <typename Scalar>
BenchReport bench_decode(const std::vector<AnnotatedSentence>& corpus,
                         const TransducerParams<Scalar>& params, const DecodeConfig& cfg,
                         int warmup = 3, int reps = 1) {
  if (corpus.empty()) throw ConfigError("bench_decode: empty corpus");
  using clock = std::chrono::steady_clock;
  BenchReport rep;
  for (int w = 0; w < warmup; ++w) {
    auto in = make_input(corpus[w % corpus.size()].sentence, params);
    (void)decode(in, params, cfg);
  }
  double total_ms = 0;
  long total_decisions = 0;
  for (const auto& sent : corpus) {
    auto in = make_input(sent.sentence, params);
    double ms = std::numeric_limits<double>::infinity();
    TargetSequence seq;
    for (int r = 0; r < std::max(reps, 1); ++r) {
      const auto t0 = clock::now();
      seq = decode(in, params, cfg);
      const auto t1 = clock::now();
      ms = std::min(ms, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    rep.points.push_back({sent.sentence.id, in.size(), static_cast<int>(seq.size()), ms});
    total_ms += ms;
    total_decisions += static_cast<long>(seq.size());
  }
  rep.sentences_per_sec = 1000.0 * static_cast<double>(corpus.size()) / total_ms;
  rep.decisions_per_sec = 1000.0 * static_cast<double>(total_decisions) / total_ms;

  // Least squares: linear fit, then quadratic via normal equations.
  const auto m = static_cast<Eigen::Index>(rep.points.size());
  Eigen::MatrixXd a1(m, 2), a2(m, 3);
  Eigen::VectorXd y(m);
  std::vector<double> ns, ts;
  double n_max = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double n = rep.points[static_cast<size_t>(i)].n;
    a1(i, 0) = 1; a1(i, 1) = n;
    a2(i, 0) = 1; a2(i, 1) = n; a2(i, 2) = n * n;
    y[i] = rep.points[static_cast<size_t>(i)].ms;
    ns.push_back(n);
    ts.push_back(y[i]);
    n_max = std::max(n_max, n);
  }
  Eigen::Vector2d lin = a1.colPivHouseholderQr().solve(y);
  rep.intercept_ms = lin[0];
  rep.slope_ms_per_token = lin[1];
  Eigen::Vector3d quad = a2.colPivHouseholderQr().solve(y);
  rep.quad_coeff = quad[2];
  const double predicted_max = quad[0] + quad[1] * n_max + quad[2] * n_max * n_max;
  rep.quad_share_at_max =
      predicted_max == 0 ? 0 : std::abs(quad[2] * n_max * n_max) / std::abs(predicted_max);
  rep.spearman_rho = detail::spearman(ns, ts);
  return rep;
}

inline void write_bench_csv(const BenchReport& rep, std::ostream& out) {
  out << "id,n_tokens,n_decisions,decode_ms\n";
  for (const auto& pt : rep.points)
    out << pt.id << ',' << pt.n << ',' << pt.decisions << ',' << pt.ms << '\n';
}

inline void write_eval_csv(const EvalReport& rep, const LabelSet& labels, std::ostream& out) {
  out << "label,gold,predicted,matched,precision,recall,f1\n";
  auto line = [&](const std::string& name, const LabelScore& s) {
    const double p = detail::safe_p(s.matched, s.predicted);
    const double r = detail::safe_r(s.matched, s.gold);
    out << name << ',' << s.gold << ',' << s.predicted << ',' << s.matched << ',' << p << ','
        << r << ',' << detail::f1_of(p, r) << '\n';
  };
  line("ALL", {rep.gold_total, rep.predicted_total, rep.matched_total});
  for (const auto& [label, s] : rep.per_label) line(labels.name(label), s);
}

inline std::string format_eval_report(const EvalReport& rep) {
  std::ostringstream out;
  out << "precision " << rep.precision << "  recall " << rep.recall << "  f1 " << rep.f1
      << "\n";
  out << "gold " << rep.gold_total << "  predicted " << rep.predicted_total << "  matched "
      << rep.matched_total << "\n";
  for (const auto& [type, count] : rep.error_counts)
    out << "  " << error_type_name(type) << ": " << count << "\n";
  return out.str();
}

}  // namespace copynext
