#pragma once

#include <optional>
#include <string>

#include "copynext/types.hpp"

namespace copynext {

/// Well-formedness state machine over decision sequences. Boundary is the
/// initial state and the state after every label; InSpan tracks the frontier
/// (last copied index) of the span currently being emitted.
struct AutomatonState {
  enum class Phase : uint8_t { Boundary, InSpan };

  Phase phase = Phase::Boundary;
  std::optional<int> frontier;  // present iff InSpan
  int first = 0;                // index pointed at when the span opened
  Scheme scheme = Scheme::CopyNextForward;
  bool terminal = false;        // EOS seen

  bool in_span() const { return phase == Phase::InSpan; }
};

inline AutomatonState initial_state(Scheme scheme) {
  AutomatonState s;
  s.scheme = scheme;
  return s;
}

struct DecisionMask {
  BoolArray legal;  // length N + |L| + 1, layout [points; labels; CN]
};

inline DecisionMask legal_mask(const AutomatonState& state, int n, const LabelSet& labels) {
  DecisionMask m;
  m.legal = BoolArray::Constant(decision_space(n, labels.size()), false);
  const int cn_pos = n + labels.size();
  if (state.terminal) return m;  // unreachable from decode loops
  if (!state.in_span()) {
    m.legal.head(n).setConstant(true);
    m.legal[n + labels.eos()] = true;
    return m;
  }
  const int j = *state.frontier;
  for (int l = 0; l < labels.size(); ++l)
    if (l != labels.eos()) m.legal[n + l] = true;
  switch (state.scheme) {
    case Scheme::CopyNextForward:
      if (j + 1 < n) m.legal[cn_pos] = true;
      break;
    case Scheme::CopyPrevBackward:
      if (j - 1 >= 0) m.legal[cn_pos] = true;
      break;
    case Scheme::CopyOnly:
      if (j + 1 < n) m.legal[j + 1] = true;
      break;
  }
  return m;
}

inline AutomatonState step(const AutomatonState& state, const Decision& d, int n,
                           const LabelSet& labels) {
  auto illegal = [&](const std::string& why) {
    throw StructureError("illegal transition (" + why + ") in phase " +
                         (state.in_span() ? std::string("InSpan") : std::string("Boundary")));
  };
  DecisionMask mask = legal_mask(state, n, labels);
  if (!mask.legal[d.encode(n, labels.size())]) illegal("masked decision");
  AutomatonState next = state;
  switch (d.kind) {
    case Decision::Kind::Point:
      if (state.in_span()) {
        next.frontier = d.value;  // copy-only continuation
      } else {
        next.phase = AutomatonState::Phase::InSpan;
        next.first = d.value;
        next.frontier = d.value;
      }
      break;
    case Decision::Kind::CopyNext:
      next.frontier = *state.frontier + (state.scheme == Scheme::CopyPrevBackward ? -1 : 1);
      break;
    case Decision::Kind::Label:
      next.phase = AutomatonState::Phase::Boundary;
      next.frontier.reset();
      if (d.value == labels.eos()) next.terminal = true;
      break;
  }
  return next;
}

/// True iff every step is legal and the sequence ends exactly at EOS.
inline bool accepts(const TargetSequence& seq, int n, const LabelSet& labels, Scheme scheme) {
  AutomatonState state = initial_state(scheme);
  for (size_t t = 0; t < seq.size(); ++t) {
    if (state.terminal) return false;
    const int code = seq[t].encode(n, labels.size());
    if (code < 0 || code >= decision_space(n, labels.size())) return false;
    if (seq[t].is_point() && (seq[t].value < 0 || seq[t].value >= n)) return false;
    if (seq[t].is_label() && (seq[t].value < 0 || seq[t].value >= labels.size())) return false;
    if (!legal_mask(state, n, labels).legal[code]) return false;
    state = step(state, seq[t], n, labels);
  }
  return state.terminal;
}

}  // namespace copynext
