#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "copynext/transducer.hpp"
#include "helpers.hpp"

using namespace copynext;

namespace {

LabelSet small_labels() { return LabelSet({"EOS", "A", "B"}); }

// Scalar-loop bidirectional LSTM oracle: plain double loops, no Eigen ops.
// Gate layout follows the cell convention [i; f; g; o].
std::vector<std::vector<double>> scalar_bilstm(const TransducerParams<double>& p,
                                               const std::vector<std::vector<double>>& x) {
  const int n = static_cast<int>(x.size());
  const int half = p.hidden / 2;
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  auto run_dir = [&](const LstmCell<double>& cell, bool forward,
                     const std::vector<std::vector<double>>& in) {
    const int in_dim = cell.input();
    std::vector<std::vector<double>> hs(n, std::vector<double>(half, 0.0));
    std::vector<double> h(half, 0.0), c(half, 0.0);
    for (int step = 0; step < n; ++step) {
      const int t = forward ? step : n - 1 - step;
      std::vector<double> pre(4 * half, 0.0);
      for (int r = 0; r < 4 * half; ++r) {
        double acc = cell.b(r);
        for (int k = 0; k < in_dim; ++k) acc += cell.w_x(r, k) * in[t][k];
        for (int k = 0; k < half; ++k) acc += cell.w_h(r, k) * h[k];
        pre[r] = acc;
      }
      for (int k = 0; k < half; ++k) {
        const double gi = sigmoid(pre[k]);
        const double gf = sigmoid(pre[half + k]);
        const double gg = std::tanh(pre[2 * half + k]);
        const double go = sigmoid(pre[3 * half + k]);
        c[k] = gf * c[k] + gi * gg;
        h[k] = go * std::tanh(c[k]);
      }
      hs[t] = h;
    }
    return hs;
  };
  std::vector<std::vector<double>> layer = x;
  for (int j = 0; j < p.layers; ++j) {
    auto fw = run_dir(p.enc_fwd[j], true, layer);
    auto bw = run_dir(p.enc_bwd[j], false, layer);
    std::vector<std::vector<double>> out(n, std::vector<double>(p.hidden));
    for (int t = 0; t < n; ++t) {
      for (int k = 0; k < half; ++k) {
        out[t][k] = fw[t][k];
        out[t][half + k] = bw[t][k];
      }
    }
    layer = out;
  }
  return layer;
}

}  // namespace

TEST_CASE("zero parameters encode everything to zero") {
  LabelSet labels = small_labels();
  auto p = make_transducer<double>(2, 6, 4, labels, Scheme::CopyNextForward, 0);
  std::mt19937_64 rng(1);
  auto in = testing::random_input(rng, 5, 4);
  auto cache = encode(in, p);
  CHECK(cache.states.rows() == 6);
  CHECK(cache.states.cols() == 5);
  CHECK(cache.states.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single-token sentences encode to dimension D") {
  LabelSet labels = small_labels();
  auto p = testing::random_params(2, 8, 3, labels, Scheme::CopyNextForward, 2);
  std::mt19937_64 rng(2);
  auto in = testing::random_input(rng, 1, 3);
  auto cache = encode(in, p);
  CHECK(cache.states.cols() == 1);
  CHECK(cache.states.rows() == 8);
  CHECK(cache.states.allFinite());
}

TEST_CASE("encoder matches the scalar-loop oracle") {
  LabelSet labels = small_labels();
  for (int layers : {1, 2}) {
    auto p = testing::random_params(layers, 4, 3, labels, Scheme::CopyNextForward,
                                    41 + static_cast<uint64_t>(layers));
    std::mt19937_64 rng(7);
    auto in = testing::random_input(rng, 3, 3);
    std::vector<std::vector<double>> x(3, std::vector<double>(3));
    for (int t = 0; t < 3; ++t)
      for (int k = 0; k < 3; ++k) x[t][k] = in.features(k, t);
    auto oracle = scalar_bilstm(p, x);
    auto cache = encode(in, p);
    for (int t = 0; t < 3; ++t)
      for (int k = 0; k < 4; ++k)
        CHECK(cache.states(k, t) == doctest::Approx(oracle[t][k]).epsilon(1e-10));
  }
}

TEST_CASE("mismatched feature dimension is a configuration error") {
  LabelSet labels = small_labels();
  auto p = testing::random_params(1, 4, 3, labels, Scheme::CopyNextForward, 5);
  Sentence sent;
  sent.id = "bad";
  sent.tokens = {"a"};
  sent.vectors = {Vec::Zero(7)};
  CHECK_THROWS_AS(make_input(sent, p), ConfigError);
}

TEST_CASE("zero logits give a uniform decision distribution") {
  LabelSet labels = small_labels();
  auto p = make_transducer<double>(1, 4, 3, labels, Scheme::CopyNextForward, 0);
  std::mt19937_64 rng(3);
  auto in = testing::random_input(rng, 4, 3);
  auto cache = encode(in, p);
  DecoderState<double> st = DecoderState<double>::initial(p);
  auto scores = decode_step(st, typename TransducerParams<double>::V(p.start_vector), cache.states, p);
  const int space = decision_space(4, labels.size());
  REQUIRE(scores.probs.size() == space);
  for (int k = 0; k < space; ++k)
    CHECK(scores.probs[k] == doctest::Approx(1.0 / space).epsilon(1e-12));
}

TEST_CASE("decision scores match a hand-computed softmax") {
  LabelSet labels({"EOS", "A"});  // |L| = 2
  auto p = make_transducer<double>(1, 2, 2, labels, Scheme::CopyNextForward, 0);
  typename TransducerParams<double>::M enc(2, 2);
  enc << 1.0, -0.5,
         0.25, 2.0;
  typename TransducerParams<double>::V d(2);
  d << 0.5, -1.0;
  p.w_label << 0.1, -0.2,
               0.3,  0.4;
  p.w_copy << -0.7, 0.6;
  auto scores = decision_scores(enc, d, p);
  // By hand: s0 = 1*0.5 + 0.25*-1, s1 = -0.5*0.5 + 2*-1, l = W_L^T d, c = w_c . d
  const double z[5] = {0.25, -2.25, 0.1 * 0.5 + 0.3 * -1.0, -0.2 * 0.5 + 0.4 * -1.0,
                       -0.7 * 0.5 + 0.6 * -1.0};
  double denom = 0;
  for (double v : z) denom += std::exp(v);
  for (int k = 0; k < 5; ++k) {
    CHECK(scores.logits[k] == doctest::Approx(z[k]).epsilon(1e-12));
    CHECK(scores.probs[k] == doctest::Approx(std::exp(z[k]) / denom).epsilon(1e-12));
  }
}

TEST_CASE("decision distribution always normalizes") {
  LabelSet labels = small_labels();
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    auto p = testing::random_params(1, 4, 3, labels, Scheme::CopyNextForward, rng());
    auto in = testing::random_input(rng, n, 3);
    auto cache = encode(in, p);
    DecoderState<double> st = DecoderState<double>::initial(p);
    auto scores = decode_step(st, typename TransducerParams<double>::V(p.start_vector),
                              cache.states, p);
    REQUIRE(scores.probs.size() == decision_space(n, labels.size()));
    CHECK(std::abs(scores.probs.sum() - 1.0) < 1e-9);
    CHECK(scores.probs.minCoeff() > 0.0);
  }
}

TEST_CASE("masked log prob renormalizes over the legal support") {
  LabelSet labels = small_labels();
  const int n = 6;
  const int space = decision_space(n, labels.size());  // 10
  DecisionScores<double> scores;
  scores.logits = Eigen::VectorXd::Zero(space);
  scores.probs = Eigen::VectorXd::Constant(space, 1.0 / space);

  DecisionMask all;
  all.legal = BoolArray::Constant(space, true);
  CHECK(masked_log_prob(scores, all, 3) == doctest::Approx(std::log(1.0 / space)).epsilon(1e-12));

  DecisionMask four;
  four.legal = BoolArray::Constant(space, false);
  for (int k : {1, 4, 5, 8}) four.legal[k] = true;
  CHECK(masked_log_prob(scores, four, 4) == doctest::Approx(std::log(0.25)).epsilon(1e-12));
  CHECK_THROWS_AS(masked_log_prob(scores, four, 0), StructureError);

  // Random case against a direct-summation oracle.
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd raw(space);
    for (int k = 0; k < space; ++k) raw[k] = u(rng);
    scores.probs = raw / raw.sum();
    DecisionMask m;
    m.legal = BoolArray::Constant(space, false);
    int legal_count = 0;
    for (int k = 0; k < space; ++k)
      if (rng() % 2) {
        m.legal[k] = true;
        ++legal_count;
      }
    if (legal_count == 0) {
      m.legal[0] = true;
      legal_count = 1;
    }
    int pick;
    do {
      pick = static_cast<int>(rng() % space);
    } while (!m.legal[pick]);
    double total = 0;
    for (int k = 0; k < space; ++k)
      if (m.legal[k]) total += scores.probs[k];
    CHECK(masked_log_prob(scores, m, pick) ==
          doctest::Approx(std::log(scores.probs[pick] / total)).epsilon(1e-10));
  }
}

TEST_CASE("decoder input selection follows the previous decision") {
  LabelSet labels = small_labels();
  auto p = testing::random_params(1, 4, 3, labels, Scheme::CopyNextForward, 19);
  std::mt19937_64 rng(19);
  auto in = testing::random_input(rng, 6, 3);
  auto cache = encode(in, p);
  const auto& enc = cache.states;

  CHECK(decoder_input<double>(std::nullopt, enc, p).isApprox(p.start_vector));
  CHECK(decoder_input<double>(Decision::point(4), enc, p).isApprox(enc.col(4)));
  CHECK(decoder_input<double>(Decision::label(labels.id("A")), enc, p)
            .isApprox(p.label_embeddings.row(labels.id("A")).transpose()));
  CHECK(decoder_input<double>(Decision::copy_next(), enc, p, 4).isApprox(enc.col(5)));
  CHECK_THROWS_AS(decoder_input<double>(Decision::copy_next(), enc, p, 5), StructureError);

  auto bp = testing::random_params(1, 4, 3, labels, Scheme::CopyPrevBackward, 19);
  auto bcache = encode(in, bp);
  CHECK(decoder_input<double>(Decision::copy_next(), bcache.states, bp, 4)
            .isApprox(bcache.states.col(3)));
}

TEST_CASE("uniform model loss is T times log of the decision space") {
  LabelSet labels = small_labels();
  auto p = make_transducer<double>(1, 4, 3, labels, Scheme::CopyNextForward, 0);
  std::mt19937_64 rng(23);
  const int n = 5;
  auto in = testing::random_input(rng, n, 3);
  TargetSequence gold = {Decision::point(1), Decision::copy_next(),
                         Decision::label(labels.id("B")), Decision::label(labels.eos())};
  auto grad = zeros_like(p);
  const double loss = sequence_loss(in, gold, p, grad);
  CHECK(loss == doctest::Approx(4.0 * std::log(decision_space(n, labels.size()))).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences") {
  LabelSet labels = small_labels();
  std::mt19937_64 rng(101);
  for (int fixture = 0; fixture < 3; ++fixture) {
    const int layers = 1 + fixture % 2;
    auto p = testing::random_params(layers, 4, 3, labels, Scheme::CopyNextForward, rng());
    const int n = 4;
    auto in = testing::random_input(rng, n, 3);
    TargetSequence gold = {Decision::point(0), Decision::copy_next(),
                           Decision::label(labels.id("A")), Decision::point(2),
                           Decision::label(labels.id("B")), Decision::label(labels.eos())};
    auto grad = zeros_like(p);
    (void)sequence_loss(in, gold, p, grad);
    const double h = 1e-5;
    std::vector<std::pair<double*, Eigen::Index>> ps, gs;
    p.visit_arrays([&](const std::string&, auto& a) { ps.push_back({a.data(), a.size()}); });
    grad.visit_arrays([&](const std::string&, auto& a) { gs.push_back({a.data(), a.size()}); });
    double max_rel = 0;
    for (size_t s = 0; s < ps.size(); ++s)
      for (Eigen::Index k = 0; k < ps[s].second; ++k) {
        const double orig = ps[s].first[k];
        ps[s].first[k] = orig + h;
        const double lp = sequence_loss_value(in, gold, p);
        ps[s].first[k] = orig - h;
        const double lm = sequence_loss_value(in, gold, p);
        ps[s].first[k] = orig;
        const double fd = (lp - lm) / (2 * h);
        const double an = gs[s].first[k];
        // The floor keeps FD rounding noise (~1e-10 absolute) from blowing up
        // the ratio on coordinates whose true gradient is zero.
        max_rel = std::max(max_rel,
                           std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}));
      }
    CHECK(max_rel < 1e-4);
  }
}

TEST_CASE("gradients flow into learned token embeddings") {
  LabelSet labels = small_labels();
  std::vector<std::string> vocab = {"<unk>", "a", "b"};
  auto p = make_transducer<double>(1, 4, 3, labels, Scheme::CopyNextForward, 31, vocab);
  std::mt19937_64 rng(31);
  init_params(p, rng);
  Sentence sent;
  sent.id = "g";
  sent.tokens = {"a", "b", "zzz"};
  auto in = make_input(sent, p);
  CHECK(in.token_ids == std::vector<int>{1, 2, 0});  // unknown -> UNK row
  TargetSequence gold = {Decision::point(0), Decision::label(labels.id("A")),
                         Decision::label(labels.eos())};
  auto grad = zeros_like(p);
  (void)sequence_loss(in, gold, p, grad);
  CHECK(grad.token_embeddings.cwiseAbs().maxCoeff() > 0.0);

  const double h = 1e-6;
  double max_rel = 0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      const double orig = p.token_embeddings(r, c);
      p.token_embeddings(r, c) = orig + h;
      const double lp = sequence_loss_value(make_input(sent, p), gold, p);
      p.token_embeddings(r, c) = orig - h;
      const double lm = sequence_loss_value(make_input(sent, p), gold, p);
      p.token_embeddings(r, c) = orig;
      const double fd = (lp - lm) / (2 * h);
      max_rel = std::max(max_rel, std::abs(fd - grad.token_embeddings(r, c)) /
                                      std::max({std::abs(fd), 1e-8}));
    }
  CHECK(max_rel < 1e-4);
}

TEST_CASE("reversing inputs and swapping directions reverses encoder outputs") {
  LabelSet labels = small_labels();
  auto p = testing::random_params(2, 6, 3, labels, Scheme::CopyNextForward, 77);
  std::mt19937_64 rng(77);
  const int n = 5;
  auto in = testing::random_input(rng, n, 3);
  auto fwd = encode(in, p);

  TransducerParams<double> swapped = p;
  std::swap(swapped.enc_fwd, swapped.enc_bwd);
  // Layers above the first consume [fwd; bwd] blocks, which the direction
  // swap flips, so their input-weight column halves must swap too.
  const int blk = p.hidden / 2;
  for (int j = 1; j < p.layers; ++j)
    for (auto* cell : {&swapped.enc_fwd[j], &swapped.enc_bwd[j]}) {
      Eigen::MatrixXd wx = cell->w_x;
      cell->w_x.leftCols(blk) = wx.rightCols(blk);
      cell->w_x.rightCols(blk) = wx.leftCols(blk);
    }
  SentenceInput<double> rev;
  rev.features = in.features.rowwise().reverse();
  auto bwd = encode(rev, swapped);

  const int half = p.hidden / 2;
  for (int t = 0; t < n; ++t) {
    // Forward block of e_t becomes the backward block of e_{n-1-t}.
    CHECK(fwd.states.col(t).head(half).isApprox(bwd.states.col(n - 1 - t).tail(half), 1e-12));
    CHECK(fwd.states.col(t).tail(half).isApprox(bwd.states.col(n - 1 - t).head(half), 1e-12));
  }
}

TEST_CASE("losses are bit-identical across repeated runs") {
  LabelSet labels = small_labels();
  auto p = testing::random_params(2, 6, 3, labels, Scheme::CopyNextForward, 99);
  std::mt19937_64 rng(99);
  auto in = testing::random_input(rng, 4, 3);
  TargetSequence gold = {Decision::point(1), Decision::label(labels.id("A")),
                         Decision::label(labels.eos())};
  auto g1 = zeros_like(p), g2 = zeros_like(p);
  const double l1 = sequence_loss(in, gold, p, g1);
  const double l2 = sequence_loss(in, gold, p, g2);
  CHECK(l1 == l2);
  CHECK(g1.w_label == g2.w_label);
}
