#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "copynext/automaton.hpp"
#include "copynext/corpus_io.hpp"
#include "copynext/lstm.hpp"
#include "copynext/types.hpp"

namespace copynext {

/// All learnable arrays of the span transducer.
///
/// Encoder: `layers` stacked bidirectional LSTMs, each direction hidden D/2,
/// so the per-token output [forward; backward] lands in R^D. Decoder:
/// `layers` stacked unidirectional LSTMs, hidden D. The decision head scores
/// pointing (dot products against encoder states), labels (w_label) and the
/// CopyNext symbol (w_copy) in the layout [points; labels; CN].
template <typename Scalar>
struct TransducerParams {
  using M = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using V = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  int layers = 1;
  int hidden = 8;     // D, even
  int input_dim = 8;  // E
  Scheme scheme = Scheme::CopyNextForward;
  uint64_t seed = 0;
  LabelSet labels;

  M token_embeddings;               // V x E; 0x0 when precomputed vectors are ingested
  std::vector<std::string> vocab;   // aligned with token_embeddings rows

  std::vector<LstmCell<Scalar>> enc_fwd, enc_bwd;  // per layer
  std::vector<LstmCell<Scalar>> dec;               // per layer
  M label_embeddings;  // |L| x D
  M w_label;           // D x |L|
  V w_copy;            // D
  V start_vector;      // D

  bool learned_embeddings() const { return token_embeddings.size() > 0; }

  template <typename F>
  void visit_arrays(F&& f) {
    if (learned_embeddings()) f(std::string("token_embeddings"), token_embeddings);
    for (size_t j = 0; j < enc_fwd.size(); ++j) {
      const std::string p = "enc." + std::to_string(j);
      f(p + ".fwd.w_x", enc_fwd[j].w_x);
      f(p + ".fwd.w_h", enc_fwd[j].w_h);
      f(p + ".fwd.b", enc_fwd[j].b);
      f(p + ".bwd.w_x", enc_bwd[j].w_x);
      f(p + ".bwd.w_h", enc_bwd[j].w_h);
      f(p + ".bwd.b", enc_bwd[j].b);
    }
    for (size_t j = 0; j < dec.size(); ++j) {
      const std::string p = "dec." + std::to_string(j);
      f(p + ".w_x", dec[j].w_x);
      f(p + ".w_h", dec[j].w_h);
      f(p + ".b", dec[j].b);
    }
    f(std::string("label_embeddings"), label_embeddings);
    f(std::string("w_label"), w_label);
    f(std::string("w_copy"), w_copy);
    f(std::string("start_vector"), start_vector);
  }
  template <typename F>
  void visit_arrays(F&& f) const {
    const_cast<TransducerParams*>(this)->visit_arrays(
        [&](const std::string& name, auto& arr) { f(name, std::as_const(arr)); });
  }

  Eigen::Index coordinate_count() const {
    Eigen::Index n = 0;
    visit_arrays([&](const std::string&, const auto& a) { n += a.size(); });
    return n;
  }
};

template <typename Scalar>
TransducerParams<Scalar> make_transducer(int layers, int hidden, int input_dim,
                                         const LabelSet& labels, Scheme scheme,
                                         uint64_t seed,
                                         const std::vector<std::string>& vocab = {}) {
  if (hidden % 2 != 0) throw ConfigError("hidden size D must be even");
  if (layers < 1) throw ConfigError("need at least one layer");
  TransducerParams<Scalar> p;
  p.layers = layers;
  p.hidden = hidden;
  p.input_dim = input_dim;
  p.scheme = scheme;
  p.seed = seed;
  p.labels = labels;
  p.vocab = vocab;
  const int half = hidden / 2;
  for (int j = 0; j < layers; ++j) {
    const int in = j == 0 ? input_dim : hidden;
    p.enc_fwd.push_back(LstmCell<Scalar>::sized(in, half));
    p.enc_bwd.push_back(LstmCell<Scalar>::sized(in, half));
    p.dec.push_back(LstmCell<Scalar>::sized(hidden, hidden));
  }
  if (!vocab.empty())
    p.token_embeddings.setZero(static_cast<int>(vocab.size()), input_dim);
  p.label_embeddings.setZero(labels.size(), hidden);
  p.w_label.setZero(hidden, labels.size());
  p.w_copy.setZero(hidden);
  p.start_vector.setZero(hidden);
  return p;
}

/// Uniform(-0.1, 0.1) for recurrent weights, zero biases, N(0, 0.02) for
/// embeddings and head arrays.
template <typename Scalar>
void init_params(TransducerParams<Scalar>& p, std::mt19937_64& rng) {
  for (int j = 0; j < p.layers; ++j) {
    p.enc_fwd[j].init(rng);
    p.enc_bwd[j].init(rng);
    p.dec[j].init(rng);
  }
  std::normal_distribution<double> n(0.0, 0.02);
  auto fill = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(n(rng));
  };
  if (p.learned_embeddings()) fill(p.token_embeddings);
  fill(p.label_embeddings);
  fill(p.w_label);
  fill(p.w_copy);
  fill(p.start_vector);
}

template <typename Scalar>
TransducerParams<Scalar> zeros_like(const TransducerParams<Scalar>& p) {
  TransducerParams<Scalar> z = p;
  z.visit_arrays([](const std::string&, auto& a) { a.setZero(); });
  return z;
}

/// Per-sentence model input: one E-dim feature column per token, plus the
/// vocab ids used to route gradients when embeddings are learned.
template <typename Scalar>
struct SentenceInput {
  typename TransducerParams<Scalar>::M features;  // E x N
  std::vector<int> token_ids;                     // empty when vectors are ingested

  int size() const { return static_cast<int>(features.cols()); }
};

template <typename Scalar>
SentenceInput<Scalar> make_input(const Sentence& sent, const TransducerParams<Scalar>& p) {
  SentenceInput<Scalar> in;
  const int n = sent.size();
  in.features.resize(p.input_dim, n);
  if (p.learned_embeddings()) {
    Vocab vocab(p.vocab);
    for (int i = 0; i < n; ++i) {
      int id = vocab.id(sent.tokens[i]);
      in.token_ids.push_back(id);
      in.features.col(i) = p.token_embeddings.row(id).transpose();
    }
  } else {
    if (!sent.has_vectors())
      throw ConfigError("sentence " + sent.id +
                        " has no precomputed vectors and the model has no token embeddings");
    if (sent.vectors.front().size() != p.input_dim)
      throw ConfigError("sentence " + sent.id + ": vector dim " +
                        std::to_string(sent.vectors.front().size()) +
                        " != model input dim " + std::to_string(p.input_dim));
    for (int i = 0; i < n; ++i) in.features.col(i) = sent.vectors[i].template cast<Scalar>();
  }
  return in;
}

/// Encoder forward activations. `states` holds the last-layer outputs
/// (one D-column per token); per-step caches back the reverse pass.
template <typename Scalar>
struct EncoderCache {
  using M = typename TransducerParams<Scalar>::M;

  std::vector<std::vector<LstmStepCache<Scalar>>> fwd, bwd;  // [layer][t]
  std::vector<M> drop_masks;                                 // per layer >= 1, or empty
  M states;                                                  // D x N
};

struct DropoutSpec {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rate > 0.0 && rng != nullptr; }
};

template <typename Scalar>
EncoderCache<Scalar> encode(const SentenceInput<Scalar>& input,
                            const TransducerParams<Scalar>& p,
                            const DropoutSpec& dropout = {}) {
  using M = typename TransducerParams<Scalar>::M;
  using V = typename TransducerParams<Scalar>::V;
  const int n = input.size();
  const int half = p.hidden / 2;
  EncoderCache<Scalar> cache;
  cache.fwd.resize(p.layers);
  cache.bwd.resize(p.layers);
  M layer_in = input.features;
  std::bernoulli_distribution keep(1.0 - dropout.rate);
  for (int j = 0; j < p.layers; ++j) {
    if (j > 0 && dropout.active()) {
      M mask(layer_in.rows(), layer_in.cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i)
        mask.data()[i] = keep(*dropout.rng) ? Scalar(1.0 / (1.0 - dropout.rate)) : Scalar(0);
      cache.drop_masks.push_back(mask);
      layer_in = layer_in.cwiseProduct(mask);
    }
    cache.fwd[j].resize(n);
    cache.bwd[j].resize(n);
    V h = V::Zero(half), c = V::Zero(half);
    for (int t = 0; t < n; ++t) {
      cache.fwd[j][t] = lstm_forward(p.enc_fwd[j], V(layer_in.col(t)), h, c);
      h = cache.fwd[j][t].h;
      c = cache.fwd[j][t].c;
    }
    h.setZero();
    c.setZero();
    for (int t = n - 1; t >= 0; --t) {
      cache.bwd[j][t] = lstm_forward(p.enc_bwd[j], V(layer_in.col(t)), h, c);
      h = cache.bwd[j][t].h;
      c = cache.bwd[j][t].c;
    }
    M out(p.hidden, n);
    for (int t = 0; t < n; ++t) {
      out.col(t).head(half) = cache.fwd[j][t].h;
      out.col(t).tail(half) = cache.bwd[j][t].h;
    }
    layer_in = std::move(out);
  }
  cache.states = std::move(layer_in);
  return cache;
}

/// Reverse pass through the encoder stack. `d_states` is the gradient on the
/// last-layer outputs; routes input gradients into token embedding rows when
/// the model owns them.
template <typename Scalar>
void encode_backward(const SentenceInput<Scalar>& input, const TransducerParams<Scalar>& p,
                     const EncoderCache<Scalar>& cache,
                     typename TransducerParams<Scalar>::M d_states,
                     TransducerParams<Scalar>& grad) {
  using M = typename TransducerParams<Scalar>::M;
  using V = typename TransducerParams<Scalar>::V;
  const int n = input.size();
  const int half = p.hidden / 2;
  for (int j = p.layers - 1; j >= 0; --j) {
    const Eigen::Index in_rows = p.enc_fwd[j].input();
    M d_in = M::Zero(in_rows, n);
    V dx(in_rows), dh_prev(half), dc_prev(half);
    V dh_carry = V::Zero(half), dc_carry = V::Zero(half);
    for (int t = n - 1; t >= 0; --t) {
      V dh = d_states.col(t).head(half) + dh_carry;
      lstm_backward(p.enc_fwd[j], cache.fwd[j][t], dh, dc_carry, grad.enc_fwd[j], dx,
                    dh_prev, dc_prev);
      d_in.col(t) += dx;
      dh_carry = dh_prev;
      dc_carry = dc_prev;
    }
    dh_carry.setZero();
    dc_carry.setZero();
    for (int t = 0; t < n; ++t) {
      V dh = d_states.col(t).tail(half) + dh_carry;
      lstm_backward(p.enc_bwd[j], cache.bwd[j][t], dh, dc_carry, grad.enc_bwd[j], dx,
                    dh_prev, dc_prev);
      d_in.col(t) += dx;
      dh_carry = dh_prev;
      dc_carry = dc_prev;
    }
    if (j > 0 && !cache.drop_masks.empty())
      d_in = d_in.cwiseProduct(cache.drop_masks[j - 1]);
    d_states = std::move(d_in);
  }
  if (p.learned_embeddings()) {
    for (int t = 0; t < n; ++t)
      grad.token_embeddings.row(input.token_ids[t]) += d_states.col(t).transpose();
  }
}

/// Incremental decoder state (per-layer hidden and cell vectors).
template <typename Scalar>
struct DecoderState {
  using V = typename TransducerParams<Scalar>::V;
  std::vector<V> h, c;

  static DecoderState initial(const TransducerParams<Scalar>& p) {
    DecoderState s;
    s.h.assign(p.layers, V::Zero(p.hidden));
    s.c.assign(p.layers, V::Zero(p.hidden));
    return s;
  }
};

/// Scores over the decision space: `logits` and `probs` have layout
/// [points 0..N-1; labels 0..|L|-1; CN], length N + |L| + 1.
template <typename Scalar>
struct DecisionScores {
  using V = typename TransducerParams<Scalar>::V;
  V logits;
  V probs;
};

template <typename Scalar>
DecisionScores<Scalar> decision_scores(const typename TransducerParams<Scalar>::M& enc,
                                       const typename TransducerParams<Scalar>::V& d_t,
                                       const TransducerParams<Scalar>& p) {
  using V = typename TransducerParams<Scalar>::V;
  const int n = static_cast<int>(enc.cols());
  const int num_labels = p.labels.size();
  DecisionScores<Scalar> out;
  out.logits.resize(decision_space(n, num_labels));
  out.logits.head(n).noalias() = enc.transpose() * d_t;
  out.logits.segment(n, num_labels).noalias() = p.w_label.transpose() * d_t;
  out.logits[n + num_labels] = p.w_copy.dot(d_t);
  const Scalar mx = out.logits.maxCoeff();
  V ex = (out.logits.array() - mx).exp().matrix();
  out.probs = ex / ex.sum();
  return out;
}

/// Advances the stacked decoder one step and scores the decision space.
/// When `step_caches` is non-null the per-layer activations are appended for
/// the training reverse pass.
template <typename Scalar>
DecisionScores<Scalar> decode_step(DecoderState<Scalar>& state,
                                   const typename TransducerParams<Scalar>::V& input,
                                   const typename TransducerParams<Scalar>::M& enc,
                                   const TransducerParams<Scalar>& p,
                                   std::vector<LstmStepCache<Scalar>>* step_caches = nullptr) {
  using V = typename TransducerParams<Scalar>::V;
  V x = input;
  for (int j = 0; j < p.layers; ++j) {
    auto c = lstm_forward(p.dec[j], x, state.h[j], state.c[j]);
    state.h[j] = c.h;
    state.c[j] = c.c;
    x = c.h;
    if (step_caches) step_caches->push_back(std::move(c));
  }
  return decision_scores(enc, state.h.back(), p);
}

/// Log of the renormalized probability of decision `code` over the mask's
/// legal support. With an all-true mask this is plain log prob.
template <typename Scalar>
Scalar masked_log_prob(const DecisionScores<Scalar>& scores, const DecisionMask& mask,
                       int code) {
  if (!mask.legal[code]) throw StructureError("masked_log_prob: decision is illegal");
  Scalar total = 0;
  for (Eigen::Index k = 0; k < scores.probs.size(); ++k)
    if (mask.legal[k]) total += scores.probs[k];
  return std::log(scores.probs[code]) - std::log(total);
}

/// Where each decoder input came from, for gradient routing.
struct InputSource {
  enum class Kind : uint8_t { Start, Encoder, LabelEmbedding };
  Kind kind = Kind::Start;
  int index = 0;  // token index or label id
};

/// Decoder input for the step after `prev` was decided. `frontier` is the
/// token index fed at the previous step (required for CopyNext).
template <typename Scalar>
typename TransducerParams<Scalar>::V decoder_input(
    const std::optional<Decision>& prev, const typename TransducerParams<Scalar>::M& enc,
    const TransducerParams<Scalar>& p, std::optional<int> frontier = std::nullopt) {
  if (!prev) return p.start_vector;
  switch (prev->kind) {
    case Decision::Kind::Point:
      return enc.col(prev->value);
    case Decision::Kind::Label:
      return p.label_embeddings.row(prev->value).transpose();
    case Decision::Kind::CopyNext: {
      if (!frontier) throw StructureError("decoder_input: CopyNext without a frontier");
      const int i = *frontier + (p.scheme == Scheme::CopyPrevBackward ? -1 : 1);
      if (i < 0 || i >= enc.cols())
        throw StructureError("decoder_input: CopyNext crosses the sentence boundary");
      return enc.col(i);
    }
  }
  throw StructureError("decoder_input: bad decision");
}

/// Teacher-forced forward/backward pass. Returns the summed cross-entropy
/// loss (-sum_t log y_t[gold_t]) and accumulates exact reverse-mode
/// gradients into `grad`. `gold` must be accepted by the automaton.
template <typename Scalar>
Scalar sequence_loss(const SentenceInput<Scalar>& input, const TargetSequence& gold,
                     const TransducerParams<Scalar>& p, TransducerParams<Scalar>& grad,
                     const DropoutSpec& dropout = {}) {
  using M = typename TransducerParams<Scalar>::M;
  using V = typename TransducerParams<Scalar>::V;
  const int n = input.size();
  const int num_labels = p.labels.size();
  const int T = static_cast<int>(gold.size());

  EncoderCache<Scalar> enc_cache = encode(input, p, dropout);
  const M& enc = enc_cache.states;

  // Teacher forcing: input t=0 is the start vector, input t>0 follows from
  // gold[t-1] with the automaton tracking the copy frontier.
  std::vector<InputSource> sources(T);
  std::vector<V> inputs(T);
  inputs[0] = p.start_vector;
  sources[0] = {InputSource::Kind::Start, 0};
  AutomatonState state = initial_state(p.scheme);
  for (int t = 1; t < T; ++t) {
    state = step(state, gold[t - 1], n, p.labels);
    if (gold[t - 1].is_label()) {
      sources[t] = {InputSource::Kind::LabelEmbedding, gold[t - 1].value};
      inputs[t] = p.label_embeddings.row(gold[t - 1].value).transpose();
    } else {
      sources[t] = {InputSource::Kind::Encoder, *state.frontier};
      inputs[t] = enc.col(*state.frontier);
    }
  }

  std::vector<std::vector<LstmStepCache<Scalar>>> dec_caches(T);
  std::vector<M> drop_masks;  // [t] stacked masks (hidden x (layers-1)), or empty
  std::bernoulli_distribution keep(1.0 - dropout.rate);
  DecoderState<Scalar> dstate = DecoderState<Scalar>::initial(p);
  Scalar loss = 0;
  std::vector<V> d_tops(T);  // gradient into the top decoder output per step
  M d_enc = M::Zero(p.hidden, n);
  if (dropout.active()) drop_masks.resize(T);

  for (int t = 0; t < T; ++t) {
    // Stacked decoder forward with optional inter-layer dropout.
    V x = inputs[t];
    if (dropout.active()) drop_masks[t].resize(p.hidden, std::max(p.layers - 1, 0));
    for (int j = 0; j < p.layers; ++j) {
      if (j > 0 && dropout.active()) {
        for (int k = 0; k < p.hidden; ++k)
          drop_masks[t](k, j - 1) =
              keep(*dropout.rng) ? Scalar(1.0 / (1.0 - dropout.rate)) : Scalar(0);
        x = x.cwiseProduct(drop_masks[t].col(j - 1));
      }
      auto c = lstm_forward(p.dec[j], x, dstate.h[j], dstate.c[j]);
      dstate.h[j] = c.h;
      dstate.c[j] = c.c;
      x = c.h;
      dec_caches[t].push_back(std::move(c));
    }
    const V& d_t = dstate.h.back();
    DecisionScores<Scalar> scores = decision_scores(enc, d_t, p);
    const int code = gold[t].encode(n, num_labels);
    const Scalar mx = scores.logits.maxCoeff();
    const Scalar lse = mx + std::log((scores.logits.array() - mx).exp().sum());
    loss += lse - scores.logits[code];
    if (!std::isfinite(loss))
      throw NumericError("non-finite loss at step " + std::to_string(t));

    // d loss / d logits = probs - onehot(gold)
    V dz = scores.probs;
    dz[code] -= Scalar(1);
    d_tops[t] = enc * dz.head(n) + p.w_label * dz.segment(n, num_labels) +
                p.w_copy * dz[n + num_labels];
    d_enc.noalias() += d_t * dz.head(n).transpose();
    grad.w_label.noalias() += d_t * dz.segment(n, num_labels).transpose();
    grad.w_copy += dz[n + num_labels] * d_t;
  }

  // Decoder BPTT.
  std::vector<V> dh_carry(p.layers, V::Zero(p.hidden));
  std::vector<V> dc_carry(p.layers, V::Zero(p.hidden));
  V dx(p.hidden), dh_prev(p.hidden), dc_prev(p.hidden);
  for (int t = T - 1; t >= 0; --t) {
    V d_above = d_tops[t];
    for (int j = p.layers - 1; j >= 0; --j) {
      V dh = d_above + dh_carry[j];
      lstm_backward(p.dec[j], dec_caches[t][j], dh, dc_carry[j], grad.dec[j], dx, dh_prev,
                    dc_prev);
      dh_carry[j] = dh_prev;
      dc_carry[j] = dc_prev;
      if (j > 0 && dropout.active()) dx = dx.cwiseProduct(drop_masks[t].col(j - 1));
      d_above = dx;
    }
    switch (sources[t].kind) {
      case InputSource::Kind::Start:
        grad.start_vector += d_above;
        break;
      case InputSource::Kind::Encoder:
        d_enc.col(sources[t].index) += d_above;
        break;
      case InputSource::Kind::LabelEmbedding:
        grad.label_embeddings.row(sources[t].index) += d_above.transpose();
        break;
    }
  }

  encode_backward(input, p, enc_cache, std::move(d_enc), grad);
  return loss;
}

/// Forward-only loss, for finite-difference checks and reporting.
template <typename Scalar>
Scalar sequence_loss_value(const SentenceInput<Scalar>& input, const TargetSequence& gold,
                           const TransducerParams<Scalar>& p) {
  using M = typename TransducerParams<Scalar>::M;
  using V = typename TransducerParams<Scalar>::V;
  const int n = input.size();
  const int T = static_cast<int>(gold.size());
  EncoderCache<Scalar> enc_cache = encode(input, p);
  const M& enc = enc_cache.states;
  DecoderState<Scalar> dstate = DecoderState<Scalar>::initial(p);
  AutomatonState state = initial_state(p.scheme);
  V in = p.start_vector;
  Scalar loss = 0;
  for (int t = 0; t < T; ++t) {
    DecisionScores<Scalar> scores = decode_step(dstate, in, enc, p);
    const int code = gold[t].encode(n, p.labels.size());
    const Scalar mx = scores.logits.maxCoeff();
    loss += mx + std::log((scores.logits.array() - mx).exp().sum()) - scores.logits[code];
    if (t + 1 < T) {
      state = step(state, gold[t], n, p.labels);
      in = gold[t].is_label() ? V(p.label_embeddings.row(gold[t].value).transpose())
                              : V(enc.col(*state.frontier));
    }
  }
  return loss;
}

}  // namespace copynext
