#pragma once

#include <algorithm>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "copynext/types.hpp"

namespace copynext {

/// Orders spans for emission. Forward schemes sort by (start asc, length
/// desc); the backward scheme by (end desc, length desc). Spans still tied
/// after that (same boundaries, different labels) are shuffled by `seed` so
/// tie order is random but replayable.
inline std::vector<LabeledSpan> emission_order(std::vector<LabeledSpan> spans,
                                               Scheme scheme, uint64_t seed) {
  auto key_lt = [scheme](const LabeledSpan& a, const LabeledSpan& b) {
    if (scheme == Scheme::CopyPrevBackward) {
      if (a.end != b.end) return a.end > b.end;
    } else {
      if (a.start != b.start) return a.start < b.start;
    }
    return a.length() > b.length();
  };
  std::stable_sort(spans.begin(), spans.end(), key_lt);
  std::mt19937_64 rng(seed);
  size_t i = 0;
  while (i < spans.size()) {
    size_t j = i + 1;
    while (j < spans.size() && !key_lt(spans[i], spans[j]) && !key_lt(spans[j], spans[i]))
      ++j;
    std::shuffle(spans.begin() + i, spans.begin() + j, rng);
    i = j;
  }
  return spans;
}

inline TargetSequence linearize(const std::vector<LabeledSpan>& spans, int n,
                                const LabelSet& labels, Scheme scheme,
                                uint64_t seed) {
  TargetSequence seq;
  for (const auto& s : emission_order(spans, scheme, seed)) {
    switch (scheme) {
      case Scheme::CopyNextForward:
        seq.push_back(Decision::point(s.start));
        for (int k = 0; k < s.length() - 1; ++k) seq.push_back(Decision::copy_next());
        break;
      case Scheme::CopyOnly:
        for (int i = s.start; i < s.end; ++i) seq.push_back(Decision::point(i));
        break;
      case Scheme::CopyPrevBackward:
        seq.push_back(Decision::point(s.end - 1));
        for (int k = 0; k < s.length() - 1; ++k) seq.push_back(Decision::copy_next());
        break;
    }
    seq.push_back(Decision::label(s.label));
  }
  seq.push_back(Decision::label(labels.eos()));
  return seq;
}

/// Inverse parse: decision sequence back to the span set. Throws
/// StructureError (naming the step index) on any sequence the automaton
/// would reject. Span order in the sequence is not enforced.
inline std::vector<LabeledSpan> delinearize(const TargetSequence& seq, int n,
                                            const LabelSet& labels, Scheme scheme) {
  auto fail = [](size_t t, const std::string& what) {
    throw StructureError("step " + std::to_string(t) + ": " + what);
  };
  std::vector<LabeledSpan> spans;
  bool in_span = false;
  int first = 0;    // index pointed at when the span opened
  int frontier = 0; // last copied index
  bool done = false;
  for (size_t t = 0; t < seq.size(); ++t) {
    const Decision& d = seq[t];
    if (done) fail(t, "decision after EOS");
    switch (d.kind) {
      case Decision::Kind::Point:
        if (d.value < 0 || d.value >= n) fail(t, "point index out of range");
        if (in_span) {
          if (scheme != Scheme::CopyOnly) fail(t, "point inside an open span");
          if (d.value != frontier + 1) fail(t, "point jump within a copy-only span");
          frontier = d.value;
        } else {
          in_span = true;
          first = frontier = d.value;
        }
        break;
      case Decision::Kind::CopyNext:
        if (!in_span) fail(t, "CN with no open span");
        if (scheme == Scheme::CopyOnly) fail(t, "CN under the copy-only scheme");
        if (scheme == Scheme::CopyPrevBackward) {
          if (frontier - 1 < 0) fail(t, "CN past the left boundary");
          --frontier;
        } else {
          if (frontier + 1 >= n) fail(t, "CN past the right boundary");
          ++frontier;
        }
        break;
      case Decision::Kind::Label:
        if (d.value < 0 || d.value >= labels.size()) fail(t, "label id out of range");
        if (d.value == labels.eos()) {
          if (in_span) fail(t, "EOS inside an open span");
          done = true;
        } else {
          if (!in_span) fail(t, "label with no open span");
          LabeledSpan s;
          if (scheme == Scheme::CopyPrevBackward) {
            s = {frontier, first + 1, d.value};
          } else {
            s = {first, frontier + 1, d.value};
          }
          spans.push_back(s);
          in_span = false;
        }
        break;
    }
  }
  if (!done) fail(seq.size(), "sequence does not end with EOS");
  return spans;
}

/// Length of linearize() output: one decision per span token boundary move,
/// one label per span, one EOS.
inline int target_length(const std::vector<LabeledSpan>& spans, Scheme) {
  int len = 1;
  for (const auto& s : spans) len += s.length() + 1;
  return len;
}

inline std::string format_sequence(const TargetSequence& seq, const LabelSet& labels) {
  std::ostringstream out;
  for (size_t t = 0; t < seq.size(); ++t) {
    if (t) out << ' ';
    switch (seq[t].kind) {
      case Decision::Kind::Point: out << seq[t].value; break;
      case Decision::Kind::CopyNext: out << "CN"; break;
      case Decision::Kind::Label: out << labels.name(seq[t].value); break;
    }
  }
  return out.str();
}

inline TargetSequence parse_sequence(const std::string& text, const LabelSet& labels) {
  TargetSequence seq;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    if (tok == "CN") {
      seq.push_back(Decision::copy_next());
    } else if (!tok.empty() && (std::isdigit(static_cast<unsigned char>(tok[0])))) {
      seq.push_back(Decision::point(std::stoi(tok)));
    } else {
      seq.push_back(Decision::label(labels.id(tok)));
    }
  }
  return seq;
}

}  // namespace copynext
