#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "copynext/types.hpp"

namespace copynext {

using Tokenizer = std::function<std::vector<std::string>(const std::string&)>;

inline std::vector<std::string> whitespace_tokenizer(const std::string& token) {
  std::vector<std::string> out;
  std::istringstream in(token);
  std::string piece;
  while (in >> piece) out.push_back(piece);
  if (out.empty()) out.push_back(token);
  return out;
}

struct Corpus {
  std::vector<AnnotatedSentence> sentences;
  LabelSet labels;
};

/// Reads a JSON-lines corpus: {"id": str, "tokens": [str], "spans": [[s,e,label]]}.
/// Labels are interned into a fresh LabelSet (EOS always present).
inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file: " + path);
  Corpus corpus;
  std::string line;
  int lineno = 0;
  int next_auto_id = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
    AnnotatedSentence sent;
    try {
      sent.sentence.id = rec.contains("id") ? rec.at("id").get<std::string>()
                                            : std::to_string(next_auto_id);
      sent.sentence.tokens = rec.at("tokens").get<std::vector<std::string>>();
      for (const auto& sp : rec.value("spans", nlohmann::json::array())) {
        LabeledSpan span;
        span.start = sp.at(0).get<int>();
        span.end = sp.at(1).get<int>();
        span.label = corpus.labels.add(sp.at(2).get<std::string>());
        sent.spans.push_back(span);
      }
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
    ++next_auto_id;
    sent.validate(corpus.labels);
    corpus.sentences.push_back(std::move(sent));
  }
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write corpus file: " + path);
  for (const auto& s : corpus.sentences) {
    nlohmann::json rec;
    rec["id"] = s.sentence.id;
    rec["tokens"] = s.sentence.tokens;
    auto spans = nlohmann::json::array();
    for (const auto& sp : s.spans)
      spans.push_back({sp.start, sp.end, corpus.labels.name(sp.label)});
    rec["spans"] = spans;
    out << rec.dump() << '\n';
  }
}

/// Re-tokenizes a sentence into subwords and remaps span offsets: start maps
/// to the first subword of the original start token, end to one past the
/// last subword of token end-1.
inline std::pair<AnnotatedSentence, SubwordMap> subword_align(
    const AnnotatedSentence& sent, const Tokenizer& tokenizer) {
  SubwordMap map;
  AnnotatedSentence out;
  out.sentence.id = sent.sentence.id;
  for (const auto& tok : sent.sentence.tokens) {
    auto pieces = tokenizer(tok);
    if (pieces.empty())
      throw CorpusError("sentence " + sent.sentence.id +
                        ": tokenizer produced no subwords for token '" + tok + "'");
    int first = static_cast<int>(out.sentence.tokens.size());
    for (auto& p : pieces) out.sentence.tokens.push_back(std::move(p));
    map.ranges.emplace_back(first, static_cast<int>(out.sentence.tokens.size()));
  }
  for (const auto& sp : sent.spans) {
    LabeledSpan mapped;
    mapped.start = map.ranges[sp.start].first;
    mapped.end = map.ranges[sp.end - 1].second;
    mapped.label = sp.label;
    out.spans.push_back(mapped);
  }
  return {std::move(out), std::move(map)};
}

/// Mean-pools subword-level vectors back to original-token granularity.
inline Sentence pool_subwords(const Sentence& sent, const SubwordMap& map) {
  if (!sent.has_vectors())
    throw CorpusError("pool_subwords: sentence " + sent.id + " has no vectors");
  if (map.subword_count() != sent.size())
    throw CorpusError("pool_subwords: map does not cover sentence " + sent.id);
  Sentence out;
  out.id = sent.id;
  for (const auto& [first, last] : map.ranges) {
    Vec mean = Vec::Zero(sent.vectors.front().size());
    for (int i = first; i < last; ++i) mean += sent.vectors[i];
    mean /= static_cast<double>(last - first);
    out.vectors.push_back(std::move(mean));
    std::string merged;
    for (int i = first; i < last; ++i) merged += sent.tokens[i];
    out.tokens.push_back(std::move(merged));
  }
  return out;
}

/// Attaches precomputed contextual vectors (JSON-lines keyed by sentence id)
/// to every sentence in the corpus. Returns the embedding dimension E.
inline int load_embeddings(const std::string& path, std::vector<AnnotatedSentence>& corpus) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open embedding file: " + path);
  std::map<std::string, std::vector<Vec>> table;
  std::string line;
  int lineno = 0;
  Eigen::Index dim = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
      std::string id = rec.at("id").get<std::string>();
      std::vector<Vec> vecs;
      for (const auto& row : rec.at("vectors")) {
        Vec v(row.size());
        for (size_t k = 0; k < row.size(); ++k) v[static_cast<Eigen::Index>(k)] = row[k].get<double>();
        if (dim < 0) dim = v.size();
        if (v.size() != dim)
          throw CorpusError(path + ":" + std::to_string(lineno) +
                            ": embedding dimension mismatch (expected " +
                            std::to_string(dim) + ", got " + std::to_string(v.size()) + ")");
        vecs.push_back(std::move(v));
      }
      table[id] = std::move(vecs);
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
  }
  std::string missing;
  for (auto& sent : corpus) {
    auto it = table.find(sent.sentence.id);
    if (it == table.end()) {
      missing += (missing.empty() ? "" : ", ") + sent.sentence.id;
      continue;
    }
    if (static_cast<int>(it->second.size()) != sent.sentence.size())
      throw CorpusError("embedding file " + path + ": sentence " + sent.sentence.id +
                        " has " + std::to_string(it->second.size()) + " vectors for " +
                        std::to_string(sent.sentence.size()) + " tokens");
    sent.sentence.vectors = it->second;
    sent.sentence.validate();
  }
  if (!missing.empty())
    throw CorpusError("embedding file " + path + " does not cover sentence ids: " + missing);
  return static_cast<int>(dim);
}

/// Static word-vector table: first line "V E", then V lines "token v1 .. vE".
struct StaticEmbeddings {
  std::map<std::string, Vec> table;
  int dim = 0;
};

inline StaticEmbeddings load_static_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open embedding file: " + path);
  StaticEmbeddings emb;
  int v = 0;
  if (!(in >> v >> emb.dim) || v <= 0 || emb.dim <= 0)
    throw CorpusError(path + ": bad header line (want \"V E\")");
  for (int i = 0; i < v; ++i) {
    std::string tok;
    if (!(in >> tok)) throw CorpusError(path + ": truncated at entry " + std::to_string(i));
    Vec vec(emb.dim);
    for (int k = 0; k < emb.dim; ++k)
      if (!(in >> vec[k])) throw CorpusError(path + ": truncated vector for token " + tok);
    emb.table[tok] = std::move(vec);
  }
  return emb;
}

/// Attaches static vectors by token lookup; unknown tokens get the mean of
/// the table (closed-vocabulary fallback).
inline void attach_static_embeddings(const StaticEmbeddings& emb,
                                     std::vector<AnnotatedSentence>& corpus) {
  Vec unk = Vec::Zero(emb.dim);
  for (const auto& [_, v] : emb.table) unk += v;
  if (!emb.table.empty()) unk /= static_cast<double>(emb.table.size());
  for (auto& sent : corpus) {
    sent.sentence.vectors.clear();
    for (const auto& tok : sent.sentence.tokens) {
      auto it = emb.table.find(tok);
      sent.sentence.vectors.push_back(it == emb.table.end() ? unk : it->second);
    }
  }
}

/// Closed token vocabulary for learned embeddings. Index 0 is UNK.
class Vocab {
 public:
  static constexpr const char* kUnk = "<unk>";

  Vocab() { add(kUnk); }
  explicit Vocab(const std::vector<std::string>& tokens) {
    for (const auto& t : tokens) names_.push_back(t);
    if (names_.empty() || names_[0] != kUnk)
      throw CorpusError("vocab must start with " + std::string(kUnk));
    for (size_t i = 0; i < names_.size(); ++i) index_[names_[i]] = static_cast<int>(i);
  }

  int add(const std::string& tok) {
    auto it = index_.find(tok);
    if (it != index_.end()) return it->second;
    names_.push_back(tok);
    return index_[tok] = static_cast<int>(names_.size()) - 1;
  }
  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? 0 : it->second;
  }
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

  static Vocab build(const std::vector<AnnotatedSentence>& corpus) {
    Vocab v;
    for (const auto& s : corpus)
      for (const auto& t : s.sentence.tokens) v.add(t);
    return v;
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
};

}  // namespace copynext
