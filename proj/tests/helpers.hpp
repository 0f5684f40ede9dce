#pragma once

#include <random>
#include <set>
#include <vector>

#include "copynext/transducer.hpp"
#include "copynext/types.hpp"

namespace copynext::testing {

/// Random valid span set: nesting and overlap allowed, duplicate triples not.
inline std::vector<LabeledSpan> random_nested_spans(std::mt19937_64& rng, int n,
                                                    const LabelSet& labels,
                                                    int max_spans = 8) {
  std::uniform_int_distribution<int> count_dist(0, max_spans);
  std::uniform_int_distribution<int> pos(0, n - 1);
  std::vector<int> non_eos;
  for (int l = 0; l < labels.size(); ++l)
    if (l != labels.eos()) non_eos.push_back(l);
  std::uniform_int_distribution<int> label_dist(0, static_cast<int>(non_eos.size()) - 1);
  std::set<LabeledSpan> seen;
  const int want = count_dist(rng);
  for (int tries = 0; tries < 4 * want && static_cast<int>(seen.size()) < want; ++tries) {
    int a = pos(rng), b = pos(rng);
    if (a == b) continue;
    LabeledSpan s{std::min(a, b), std::max(a, b) + (std::max(a, b) == std::min(a, b) ? 1 : 0),
                  non_eos[label_dist(rng)]};
    if (s.start >= s.end) s.end = s.start + 1;
    seen.insert(s);
  }
  return {seen.begin(), seen.end()};
}

inline std::vector<LabeledSpan> sorted(std::vector<LabeledSpan> spans) {
  std::sort(spans.begin(), spans.end());
  return spans;
}

/// Random small transducer over ingested feature vectors.
inline TransducerParams<double> random_params(int layers, int hidden, int input_dim,
                                              const LabelSet& labels, Scheme scheme,
                                              uint64_t seed) {
  auto p = make_transducer<double>(layers, hidden, input_dim, labels, scheme, seed);
  std::mt19937_64 rng(seed);
  init_params(p, rng);
  return p;
}

inline SentenceInput<double> random_input(std::mt19937_64& rng, int n, int dim) {
  SentenceInput<double> in;
  std::normal_distribution<double> g(0.0, 1.0);
  in.features.resize(dim, n);
  for (Eigen::Index i = 0; i < in.features.size(); ++i) in.features.data()[i] = g(rng);
  return in;
}

}  // namespace copynext::testing
