#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <random>
#include <vector>

#include "copynext/evaluation.hpp"
#include "copynext/inference.hpp"
#include "copynext/linearize.hpp"
#include "copynext/parallel.hpp"
#include "copynext/transducer.hpp"

namespace copynext {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  uint64_t seed = 1;
  Scheme scheme = Scheme::CopyNextForward;
  int layers = 2;          // J
  int hidden = 64;         // D
  int input_dim = 32;      // E, used when embeddings are learned
  double dropout = 0.0;
  int patience = 5;        // dev evals without improvement before stopping
  int eval_interval = 1;   // epochs between dev evals
  int workers = 1;
  double stop_at_dev_f1 = 1.01;  // early exit once dev F1 reaches this
};

struct TrainReport {
  std::vector<double> epoch_loss;       // mean loss per decision
  std::vector<double> epoch_seconds;
  struct DevEval {
    int epoch;
    double precision, recall, f1;
  };
  std::vector<DevEval> dev_evals;
  double best_dev_f1 = -1;
  int best_epoch = -1;
};

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Adam over the flattened parameter arrays, with global-norm clipping.
template <typename Scalar>
class AdamOptimizer {
 public:
  AdamOptimizer(TransducerParams<Scalar>& params, double lr, double clip_norm)
      : params_(params), lr_(lr), clip_(clip_norm) {
    params_.visit_arrays([&](const std::string&, auto& a) {
      slots_.push_back({a.data(), a.size()});
    });
    Eigen::Index total = 0;
    for (const auto& s : slots_) total += s.size;
    m_.setZero(total);
    v_.setZero(total);
  }

  void step(TransducerParams<Scalar>& grad) {
    std::vector<std::pair<Scalar*, Eigen::Index>> gslots;
    grad.visit_arrays([&](const std::string&, auto& a) {
      gslots.push_back({a.data(), a.size()});
    });
    double norm_sq = 0;
    for (const auto& [ptr, size] : gslots)
      norm_sq += Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(ptr, size)
                     .squaredNorm();
    const double norm = std::sqrt(norm_sq);
    const Scalar scale = (clip_ > 0 && norm > clip_) ? Scalar(clip_ / norm) : Scalar(1);
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    Eigen::Index off = 0;
    for (size_t k = 0; k < slots_.size(); ++k) {
      auto p = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(slots_[k].ptr,
                                                                    slots_[k].size);
      auto g = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(gslots[k].first,
                                                                    gslots[k].second);
      auto m = m_.segment(off, slots_[k].size);
      auto v = v_.segment(off, slots_[k].size);
      m = beta1_ * m + (1 - beta1_) * (scale * g).template cast<double>();
      v = beta2_ * v +
          (1 - beta2_) * (scale * g).array().square().matrix().template cast<double>();
      p -= (lr_ * (m / bc1).array() / ((v / bc2).array().sqrt() + eps_))
               .matrix()
               .template cast<Scalar>();
      off += slots_[k].size;
    }
  }

 private:
  struct Slot {
    Scalar* ptr;
    Eigen::Index size;
  };
  TransducerParams<Scalar>& params_;
  std::vector<Slot> slots_;
  Eigen::VectorXd m_, v_;
  double lr_, clip_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

/// Gold linearization for sentence `index`, tie order seeded from the run
/// seed so reruns are identical.
inline TargetSequence gold_sequence(const AnnotatedSentence& sent, const LabelSet& labels,
                                    Scheme scheme, uint64_t run_seed, size_t index) {
  return linearize(sent.spans, sent.sentence.size(), labels, scheme,
                   detail::splitmix64(run_seed ^ (0x51ED2700ULL + index)));
}

template <typename Scalar>
EvalReport evaluate_greedy(const std::vector<AnnotatedSentence>& dev,
                           const TransducerParams<Scalar>& params, int workers = 1) {
  std::vector<Prediction> preds(dev.size());
  DecodeConfig cfg;
  parallel_for(dev.size(), workers, [&](size_t i) {
    auto in = make_input(dev[i].sentence, params);
    preds[i] = {dev[i].sentence.id, predict_spans(in, params, cfg), 0.0};
  });
  return score(dev, preds);
}

/// Teacher-forced training: batches grouped by sentence length, per-decision
/// mean loss, gradient-norm clipping, Adam updates, dev-F1 model selection
/// with early stopping.
template <typename Scalar>
std::pair<TransducerParams<Scalar>, TrainReport> train(const Corpus& corpus,
                                                       const std::vector<AnnotatedSentence>& dev,
                                                       const TrainConfig& cfg) {
  if (corpus.sentences.empty()) throw ConfigError("train: empty corpus");
  const bool ingested = corpus.sentences.front().sentence.has_vectors();
  std::vector<std::string> vocab;
  int input_dim = cfg.input_dim;
  if (ingested) {
    input_dim = static_cast<int>(corpus.sentences.front().sentence.vectors.front().size());
  } else {
    vocab = Vocab::build(corpus.sentences).names();
  }
  auto params = make_transducer<Scalar>(cfg.layers, cfg.hidden, input_dim, corpus.labels,
                                        cfg.scheme, cfg.seed, vocab);
  std::mt19937_64 rng(detail::splitmix64(cfg.seed));
  init_params(params, rng);

  // Precompute inputs and gold sequences (tie order fixed per run).
  const size_t n_sent = corpus.sentences.size();
  std::vector<SentenceInput<Scalar>> inputs(n_sent);
  std::vector<TargetSequence> golds(n_sent);
  for (size_t i = 0; i < n_sent; ++i) {
    golds[i] = gold_sequence(corpus.sentences[i], corpus.labels, cfg.scheme, cfg.seed, i);
    if (!accepts(golds[i], corpus.sentences[i].sentence.size(), corpus.labels, cfg.scheme))
      throw StructureError("train: gold linearization rejected for sentence " +
                           corpus.sentences[i].sentence.id);
    if (ingested) inputs[i] = make_input(corpus.sentences[i].sentence, params);
  }

  // Batches group sentences of similar length.
  std::vector<size_t> order(n_sent);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return corpus.sentences[a].sentence.size() < corpus.sentences[b].sentence.size();
  });
  std::vector<std::vector<size_t>> batches;
  for (size_t i = 0; i < n_sent; i += static_cast<size_t>(cfg.batch_size))
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(
                                             i + static_cast<size_t>(cfg.batch_size), n_sent)));

  AdamOptimizer<Scalar> opt(params, cfg.learning_rate, cfg.clip_norm);
  TrainReport report;
  TransducerParams<Scalar> best = params;
  int evals_since_best = 0;
  bool stop = false;

  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(batches.begin(), batches.end(), rng);
    double loss_sum = 0;
    long decision_count = 0;
    for (const auto& batch : batches) {
      // Per-sentence gradients fan out across workers; the reduction runs in
      // batch order so results do not depend on worker count.
      long batch_decisions = 0;
      for (size_t i : batch) batch_decisions += static_cast<long>(golds[i].size());
      std::vector<TransducerParams<Scalar>> locals(batch.size());
      std::vector<double> losses(batch.size(), 0.0);
      std::vector<std::mt19937_64> drop_rngs;
      for (size_t bi = 0; bi < batch.size(); ++bi)
        drop_rngs.emplace_back(
            detail::splitmix64(cfg.seed ^ (static_cast<uint64_t>(epoch) * 1000003ULL + batch[bi])));
      parallel_for(batch.size(), std::max(cfg.workers, 1), [&](size_t bi) {
        const size_t i = batch[bi];
        SentenceInput<Scalar> in =
            ingested ? inputs[i] : make_input(corpus.sentences[i].sentence, params);
        locals[bi] = zeros_like(params);
        DropoutSpec drop{cfg.dropout, cfg.dropout > 0 ? &drop_rngs[bi] : nullptr};
        losses[bi] = static_cast<double>(sequence_loss(in, golds[i], params, locals[bi], drop));
      });
      TransducerParams<Scalar> grad = zeros_like(params);
      std::vector<std::pair<Scalar*, Eigen::Index>> dst;
      grad.visit_arrays([&](const std::string&, auto& a) { dst.push_back({a.data(), a.size()}); });
      for (size_t bi = 0; bi < batch.size(); ++bi) {
        loss_sum += losses[bi];
        std::vector<std::pair<Scalar*, Eigen::Index>> src;
        locals[bi].visit_arrays(
            [&](const std::string&, auto& a) { src.push_back({a.data(), a.size()}); });
        for (size_t s = 0; s < dst.size(); ++s)
          Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(dst[s].first, dst[s].second) +=
              Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(src[s].first, src[s].second);
      }
      decision_count += batch_decisions;
      // Per-decision mean so long linearizations do not dominate.
      grad.visit_arrays([&](const std::string&, auto& a) {
        a /= static_cast<Scalar>(batch_decisions);
      });
      opt.step(grad);
    }
    const auto t1 = std::chrono::steady_clock::now();
    report.epoch_loss.push_back(loss_sum / static_cast<double>(decision_count));
    report.epoch_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());

    if (!dev.empty() && ((epoch + 1) % cfg.eval_interval == 0 || epoch + 1 == cfg.epochs)) {
      EvalReport ev = evaluate_greedy(dev, params, cfg.workers);
      report.dev_evals.push_back({epoch, ev.precision, ev.recall, ev.f1});
      if (ev.f1 > report.best_dev_f1) {
        report.best_dev_f1 = ev.f1;
        report.best_epoch = epoch;
        best = params;
        evals_since_best = 0;
      } else if (++evals_since_best >= cfg.patience) {
        stop = true;
      }
      if (ev.f1 >= cfg.stop_at_dev_f1) stop = true;
    }
  }
  if (dev.empty()) best = params;
  return {std::move(best), std::move(report)};
}

}  // namespace copynext
