#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "copynext/inference.hpp"
#include "helpers.hpp"

using namespace copynext;

namespace {

LabelSet small_labels() { return LabelSet({"EOS", "A", "B"}); }

/// All automaton-accepted sequences of length <= cap, with their model scores.
std::vector<std::pair<TargetSequence, double>> enumerate_scored(
    const SentenceInput<double>& in, const TransducerParams<double>& p, int cap) {
  std::vector<std::pair<TargetSequence, double>> out;
  const int n = in.size();
  std::function<void(TargetSequence&, const AutomatonState&)> recurse =
      [&](TargetSequence& prefix, const AutomatonState& state) {
        if (state.terminal) {
          out.emplace_back(prefix, sequence_score(in, prefix, p));
          return;
        }
        if (static_cast<int>(prefix.size()) >= cap) return;
        DecisionMask m = legal_mask(state, n, p.labels);
        for (Eigen::Index c = 0; c < m.legal.size(); ++c) {
          if (!m.legal[c]) continue;
          Decision d = Decision::decode(static_cast<int>(c), n, p.labels.size());
          prefix.push_back(d);
          AutomatonState nx = step(state, d, n, p.labels);
          recurse(prefix, nx);
          prefix.pop_back();
        }
      };
  TargetSequence prefix;
  recurse(prefix, initial_state(p.scheme));
  return out;
}

}  // namespace

TEST_CASE("greedy decodes from random parameters are always well formed") {
  LabelSet labels = small_labels();
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Scheme sch = static_cast<Scheme>(trial % 3);
    const int n = 1 + static_cast<int>(rng() % 8);
    auto p = testing::random_params(1, 6, 3, labels, sch, rng());
    auto in = testing::random_input(rng, n, 3);
    TargetSequence seq = greedy_decode(in, p, DecodeConfig{});
    CHECK(accepts(seq, n, labels, sch));
  }
}

TEST_CASE("length-capped decodes still parse via the truncation rule") {
  LabelSet labels = small_labels();
  std::mt19937_64 rng(2);
  DecodeConfig cfg;
  cfg.max_len = 3;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 6);
    auto p = testing::random_params(1, 6, 3, labels, Scheme::CopyNextForward, rng());
    auto in = testing::random_input(rng, n, 3);
    TargetSequence seq = greedy_decode(in, p, cfg);
    CHECK(accepts(seq, n, labels, Scheme::CopyNextForward));
    CHECK(seq.size() <= 4);  // cap plus the appended EOS at worst
  }
}

TEST_CASE("a model that prefers EOS at step 0 emits the empty structure") {
  LabelSet labels = small_labels();
  auto p = testing::random_params(1, 6, 3, labels, Scheme::CopyNextForward, 3);
  std::mt19937_64 rng(3);
  auto in = testing::random_input(rng, 5, 3);
  // Point w_label's EOS column along the first decoder state.
  auto cache = encode(in, p);
  DecoderState<double> st = DecoderState<double>::initial(p);
  (void)decode_step(st, typename TransducerParams<double>::V(p.start_vector), cache.states, p);
  p.w_label.col(labels.eos()) = 100.0 * st.h.back();
  TargetSequence seq = greedy_decode(in, p, DecodeConfig{});
  REQUIRE(seq.size() == 1);
  CHECK(seq[0] == Decision::label(labels.eos()));
  CHECK(predict_spans(in, p, DecodeConfig{}).empty());
}

TEST_CASE("beam size 1 reproduces greedy exactly") {
  LabelSet labels = small_labels();
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 7);
    auto p = testing::random_params(1, 6, 3, labels, Scheme::CopyNextForward, rng());
    auto in = testing::random_input(rng, n, 3);
    DecodeConfig greedy_cfg;
    DecodeConfig beam_cfg;
    beam_cfg.beam = 1;
    CHECK(greedy_decode(in, p, greedy_cfg) == beam_decode(in, p, beam_cfg));
  }
}

TEST_CASE("beam search never scores below greedy") {
  LabelSet labels = small_labels();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    auto p = testing::random_params(1, 6, 3, labels, Scheme::CopyNextForward, rng());
    auto in = testing::random_input(rng, n, 3);
    TargetSequence g = greedy_decode(in, p, DecodeConfig{});
    DecodeConfig cfg;
    cfg.beam = 4;
    double beam_score = 0;
    (void)beam_decode(in, p, cfg, &beam_score);
    CHECK(beam_score >= sequence_score(in, g, p) - 1e-9);
  }
}

TEST_CASE("beam search finds the optimum where greedy does not") {
  LabelSet labels = small_labels();
  std::mt19937_64 rng(6);
  int greedy_suboptimal = 0;
  for (int trial = 0; trial < 300 && greedy_suboptimal < 3; ++trial) {
    const int n = 2;
    auto p = testing::random_params(1, 4, 2, labels, Scheme::CopyNextForward, rng());
    auto in = testing::random_input(rng, n, 2);
    DecodeConfig cfg;
    cfg.max_len = 4;
    auto all = enumerate_scored(in, p, cfg.max_len);
    REQUIRE(!all.empty());
    double best = -1e300;
    for (const auto& [seq, sc] : all) best = std::max(best, sc);
    const double greedy_score = sequence_score(in, greedy_decode(in, p, cfg), p);
    if (greedy_score < best - 1e-9) {
      ++greedy_suboptimal;
      // A beam as wide as the decision space is exhaustive here.
      cfg.beam = decision_space(n, labels.size());
      double beam_score = 0;
      (void)beam_decode(in, p, cfg, &beam_score);
      CHECK(beam_score == doctest::Approx(best).epsilon(1e-9));
    }
  }
  CHECK(greedy_suboptimal >= 3);  // untrained models do exhibit the gap
}

TEST_CASE("predicted spans always respect sentence bounds") {
  LabelSet labels = small_labels();
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const Scheme sch = static_cast<Scheme>(trial % 3);
    const int n = 1 + static_cast<int>(rng() % 8);
    auto p = testing::random_params(1, 6, 3, labels, sch, rng());
    auto in = testing::random_input(rng, n, 3);
    for (const auto& s : predict_spans(in, p, DecodeConfig{})) {
      CHECK(0 <= s.start);
      CHECK(s.start < s.end);
      CHECK(s.end <= n);
      CHECK(s.label != labels.eos());
    }
  }
}
