#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace copynext {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using BoolArray = Eigen::Array<bool, Eigen::Dynamic, 1>;

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StructureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A contiguous token range [start, end) with a label id.
struct LabeledSpan {
  int start = 0;  // inclusive
  int end = 0;    // exclusive
  int label = 0;

  int length() const { return end - start; }
  friend bool operator==(const LabeledSpan&, const LabeledSpan&) = default;
  friend auto operator<=>(const LabeledSpan&, const LabeledSpan&) = default;
};

/// Ordered label inventory. EOS is a real member of the set so a label
/// head of size |L| covers the halting decision too.
class LabelSet {
 public:
  static constexpr const char* kEos = "EOS";

  LabelSet() { add(kEos); }
  explicit LabelSet(const std::vector<std::string>& names) {
    for (const auto& n : names) add(n);
    if (eos_ < 0) throw CorpusError("label set is missing EOS");
  }

  int add(const std::string& name) {
    for (size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    names_.push_back(name);
    int id = static_cast<int>(names_.size()) - 1;
    if (name == kEos) {
      if (eos_ >= 0) throw CorpusError("duplicate EOS in label set");
      eos_ = id;
    }
    return id;
  }

  int id(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    throw CorpusError("unknown label: " + name);
  }
  bool contains(const std::string& name) const {
    for (const auto& n : names_)
      if (n == name) return true;
    return false;
  }

  const std::string& name(int id) const { return names_.at(id); }
  int eos() const { return eos_; }
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  int eos_ = -1;
};

/// Tokenized sentence, optionally carrying one precomputed vector per token.
struct Sentence {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<Vec> vectors;  // empty, or one E-vector per token

  int size() const { return static_cast<int>(tokens.size()); }
  bool has_vectors() const { return !vectors.empty(); }

  void validate() const {
    if (tokens.empty()) throw CorpusError("sentence " + id + ": empty token list");
    if (!vectors.empty()) {
      if (vectors.size() != tokens.size())
        throw CorpusError("sentence " + id + ": vector count != token count");
      const auto dim = vectors.front().size();
      if (dim <= 0) throw CorpusError("sentence " + id + ": zero-dim vectors");
      for (const auto& v : vectors)
        if (v.size() != dim)
          throw CorpusError("sentence " + id + ": inconsistent vector dims");
    }
  }
};

struct AnnotatedSentence {
  Sentence sentence;
  std::vector<LabeledSpan> spans;

  void validate(const LabelSet& labels) const {
    sentence.validate();
    const int n = sentence.size();
    for (const auto& s : spans) {
      if (!(0 <= s.start && s.start < s.end && s.end <= n))
        throw CorpusError("sentence " + sentence.id + ": span out of bounds");
      if (s.label < 0 || s.label >= labels.size() || s.label == labels.eos())
        throw CorpusError("sentence " + sentence.id + ": bad span label");
    }
    for (size_t i = 0; i < spans.size(); ++i)
      for (size_t j = i + 1; j < spans.size(); ++j)
        if (spans[i] == spans[j])
          throw CorpusError("sentence " + sentence.id + ": duplicate span triple");
  }
};

/// Maps each original token to its contiguous subword range [first, last).
struct SubwordMap {
  std::vector<std::pair<int, int>> ranges;

  int subword_count() const { return ranges.empty() ? 0 : ranges.back().second; }
};

enum class Scheme : uint8_t {
  CopyNextForward = 0,  // point at start, CN extends rightward
  CopyOnly = 1,         // every span token pointed at individually
  CopyPrevBackward = 2, // point at last token, CN extends leftward
};

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::CopyNextForward: return "copynext";
    case Scheme::CopyOnly: return "copy";
    case Scheme::CopyPrevBackward: return "copyprev";
  }
  return "?";
}

inline Scheme scheme_from_name(const std::string& s) {
  if (s == "copynext") return Scheme::CopyNextForward;
  if (s == "copy") return Scheme::CopyOnly;
  if (s == "copyprev") return Scheme::CopyPrevBackward;
  throw ConfigError("unknown scheme: " + s);
}

/// One step of the linearized output. Encoded layout matches the decision
/// head [s; l; c]: values [0, N) are Point, [N, N+|L|) are Label, N+|L| is CN.
struct Decision {
  enum class Kind : uint8_t { Point, Label, CopyNext };

  Kind kind = Kind::CopyNext;
  int value = 0;  // token index for Point, label id for Label

  static Decision point(int i) { return {Kind::Point, i}; }
  static Decision label(int l) { return {Kind::Label, l}; }
  static Decision copy_next() { return {Kind::CopyNext, 0}; }

  bool is_point() const { return kind == Kind::Point; }
  bool is_label() const { return kind == Kind::Label; }
  bool is_copy_next() const { return kind == Kind::CopyNext; }

  int encode(int n, int num_labels) const {
    switch (kind) {
      case Kind::Point: return value;
      case Kind::Label: return n + value;
      case Kind::CopyNext: return n + num_labels;
    }
    return -1;
  }

  static Decision decode(int code, int n, int num_labels) {
    if (code < 0 || code > n + num_labels)
      throw StructureError("decision code out of range");
    if (code < n) return point(code);
    if (code < n + num_labels) return label(code - n);
    return copy_next();
  }

  friend bool operator==(const Decision&, const Decision&) = default;
};

using TargetSequence = std::vector<Decision>;

inline int decision_space(int n, int num_labels) { return n + num_labels + 1; }

}  // namespace copynext
