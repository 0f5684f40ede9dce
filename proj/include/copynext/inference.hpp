#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "copynext/automaton.hpp"
#include "copynext/linearize.hpp"
#include "copynext/transducer.hpp"

namespace copynext {

struct DecodeConfig {
  int beam = 1;        // 1 = greedy
  int max_len = 0;     // 0 -> 8 * N

  int effective_max_len(int n) const { return max_len > 0 ? max_len : 8 * n; }
};

namespace detail {

/// Drops a trailing unfinished span and appends EOS, so a length-truncated
/// decode still parses.
inline void finish_truncated(TargetSequence& seq, const AutomatonState& state,
                             const LabelSet& labels) {
  if (state.in_span()) {
    while (!seq.empty() && !seq.back().is_label()) seq.pop_back();
  }
  seq.push_back(Decision::label(labels.eos()));
}

/// Argmax over legal entries; ties break toward the lowest decision code.
template <typename Scalar>
int masked_argmax(const typename TransducerParams<Scalar>::V& logits,
                  const DecisionMask& mask) {
  int best = -1;
  Scalar best_v = -std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index k = 0; k < logits.size(); ++k)
    if (mask.legal[k] && logits[k] > best_v) {
      best = static_cast<int>(k);
      best_v = logits[k];
    }
  return best;
}

}  // namespace detail

/// Constrained greedy decoding: masked argmax per step, halting on EOS or
/// the length cap.
template <typename Scalar>
TargetSequence greedy_decode(const SentenceInput<Scalar>& input,
                             const TransducerParams<Scalar>& p, const DecodeConfig& cfg) {
  using V = typename TransducerParams<Scalar>::V;
  const int n = input.size();
  const int cap = cfg.effective_max_len(n);
  EncoderCache<Scalar> enc_cache = encode(input, p);
  const auto& enc = enc_cache.states;
  DecoderState<Scalar> dstate = DecoderState<Scalar>::initial(p);
  AutomatonState state = initial_state(p.scheme);
  TargetSequence seq;
  V in = p.start_vector;
  while (static_cast<int>(seq.size()) < cap) {
    DecisionScores<Scalar> scores = decode_step(dstate, in, enc, p);
    DecisionMask mask = legal_mask(state, n, p.labels);
    const int code = detail::masked_argmax<Scalar>(scores.logits, mask);
    Decision d = Decision::decode(code, n, p.labels.size());
    seq.push_back(d);
    state = step(state, d, n, p.labels);
    if (state.terminal) return seq;
    in = d.is_label() ? V(p.label_embeddings.row(d.value).transpose())
                      : V(enc.col(*state.frontier));
  }
  detail::finish_truncated(seq, state, p.labels);
  return seq;
}

/// Cumulative mask-renormalized log probability a model assigns to `seq`.
template <typename Scalar>
Scalar sequence_score(const SentenceInput<Scalar>& input, const TargetSequence& seq,
                      const TransducerParams<Scalar>& p) {
  using V = typename TransducerParams<Scalar>::V;
  const int n = input.size();
  EncoderCache<Scalar> enc_cache = encode(input, p);
  const auto& enc = enc_cache.states;
  DecoderState<Scalar> dstate = DecoderState<Scalar>::initial(p);
  AutomatonState state = initial_state(p.scheme);
  V in = p.start_vector;
  Scalar total = 0;
  for (const Decision& d : seq) {
    DecisionScores<Scalar> scores = decode_step(dstate, in, enc, p);
    DecisionMask mask = legal_mask(state, n, p.labels);
    total += masked_log_prob(scores, mask, d.encode(n, p.labels.size()));
    state = step(state, d, n, p.labels);
    if (state.terminal) break;
    in = d.is_label() ? V(p.label_embeddings.row(d.value).transpose())
                      : V(enc.col(*state.frontier));
  }
  return total;
}

/// Beam search over mask-renormalized log probabilities. Completed
/// hypotheses retire from the beam; the best completed one wins. Scores are
/// not length-normalized. The greedy rollout is kept as a floor, so widening
/// the beam never returns a sequence the model scores below greedy.
template <typename Scalar>
TargetSequence beam_decode(const SentenceInput<Scalar>& input,
                           const TransducerParams<Scalar>& p, const DecodeConfig& cfg,
                           Scalar* best_score = nullptr) {
  using V = typename TransducerParams<Scalar>::V;
  struct Hypothesis {
    TargetSequence decisions;
    AutomatonState state;
    DecoderState<Scalar> dec;
    V next_input;
    Scalar log_prob = 0;
  };
  const int n = input.size();
  const int cap = cfg.effective_max_len(n);
  const int k = std::max(cfg.beam, 1);
  EncoderCache<Scalar> enc_cache = encode(input, p);
  const auto& enc = enc_cache.states;

  std::vector<Hypothesis> live(1);
  live[0].state = initial_state(p.scheme);
  live[0].dec = DecoderState<Scalar>::initial(p);
  live[0].next_input = p.start_vector;
  std::vector<Hypothesis> done;

  for (int t = 0; t < cap && !live.empty(); ++t) {
    struct Candidate {
      size_t hyp;
      int code;
      Scalar score;
    };
    std::vector<Candidate> cands;
    std::vector<DecisionScores<Scalar>> step_scores(live.size());
    for (size_t h = 0; h < live.size(); ++h) {
      step_scores[h] = decode_step(live[h].dec, live[h].next_input, enc, p);
      DecisionMask mask = legal_mask(live[h].state, n, p.labels);
      for (Eigen::Index code = 0; code < step_scores[h].probs.size(); ++code)
        if (mask.legal[code])
          cands.push_back({h, static_cast<int>(code),
                           live[h].log_prob +
                               masked_log_prob(step_scores[h], mask, static_cast<int>(code))});
    }
    // Highest score first; ties toward the earlier hypothesis and lower code.
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    if (cands.size() > static_cast<size_t>(k)) cands.resize(k);

    std::vector<Hypothesis> next;
    for (const auto& c : cands) {
      Hypothesis h = live[c.hyp];
      Decision d = Decision::decode(c.code, n, p.labels.size());
      h.decisions.push_back(d);
      h.state = step(h.state, d, n, p.labels);
      h.log_prob = c.score;
      if (h.state.terminal) {
        done.push_back(std::move(h));
      } else {
        h.next_input = d.is_label() ? V(p.label_embeddings.row(d.value).transpose())
                                    : V(enc.col(*h.state.frontier));
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  if (done.empty()) {
    // Length cap hit on every hypothesis: truncate the best live one.
    Hypothesis best = live.front();
    for (auto& h : live)
      if (h.log_prob > best.log_prob) best = h;
    detail::finish_truncated(best.decisions, best.state, p.labels);
    done.push_back(std::move(best));
  }
  const Hypothesis* best = &done.front();
  for (const auto& h : done)
    if (h.log_prob > best->log_prob) best = &h;
  if (k > 1) {
    TargetSequence greedy = greedy_decode(input, p, cfg);
    const Scalar greedy_score = sequence_score(input, greedy, p);
    if (greedy_score > best->log_prob) {
      if (best_score) *best_score = greedy_score;
      return greedy;
    }
  }
  if (best_score) *best_score = best->log_prob;
  return best->decisions;
}

template <typename Scalar>
TargetSequence decode(const SentenceInput<Scalar>& input, const TransducerParams<Scalar>& p,
                      const DecodeConfig& cfg) {
  return cfg.beam <= 1 ? greedy_decode(input, p, cfg) : beam_decode(input, p, cfg);
}

template <typename Scalar>
std::vector<LabeledSpan> predict_spans(const SentenceInput<Scalar>& input,
                                       const TransducerParams<Scalar>& p,
                                       const DecodeConfig& cfg) {
  return delinearize(decode(input, p, cfg), input.size(), p.labels, p.scheme);
}

}  // namespace copynext
