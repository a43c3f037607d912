#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "lmfb/common.hpp"

namespace lmfb {

enum class EditOp { Match, Substitute, Delete, Insert };

struct AlignmentStep {
  EditOp op;
  int ref_pos;  // -1 for insertions
  int hyp_pos;  // -1 for deletions
};

struct Alignment {
  std::vector<AlignmentStep> steps;
  std::size_t matches = 0, substitutions = 0, deletions = 0, insertions = 0;
  std::size_t cost() const { return substitutions + deletions + insertions; }
};

// Minimal-cost Levenshtein alignment with unit costs. Deterministic
// tie-breaking: match > substitute > delete > insert at equal cost.
template <typename Token>
Alignment align(const std::vector<Token>& ref, const std::vector<Token>& hyp) {
  const std::size_t r = ref.size(), h = hyp.size();
  std::vector<std::size_t> dp((r + 1) * (h + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dp[i * (h + 1) + j]; };
  for (std::size_t i = 0; i <= r; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= h; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= r; ++i)
    for (std::size_t j = 1; j <= h; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }

  Alignment out;
  std::size_t i = r, j = h;
  while (i > 0 || j > 0) {
    const std::size_t cur = at(i, j);
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && cur == at(i - 1, j - 1)) {
      out.steps.push_back({EditOp::Match, static_cast<int>(i - 1), static_cast<int>(j - 1)});
      ++out.matches;
      --i, --j;
    } else if (i > 0 && j > 0 && cur == at(i - 1, j - 1) + 1) {
      out.steps.push_back({EditOp::Substitute, static_cast<int>(i - 1), static_cast<int>(j - 1)});
      ++out.substitutions;
      --i, --j;
    } else if (i > 0 && cur == at(i - 1, j) + 1) {
      out.steps.push_back({EditOp::Delete, static_cast<int>(i - 1), -1});
      ++out.deletions;
      --i;
    } else {
      out.steps.push_back({EditOp::Insert, -1, static_cast<int>(j - 1)});
      ++out.insertions;
      --j;
    }
  }
  std::reverse(out.steps.begin(), out.steps.end());
  return out;
}

struct ErrorCounts {
  std::size_t substitutions = 0, deletions = 0, insertions = 0;
  std::size_t ref_len = 0;
  std::size_t entity_errors = 0, entity_refs = 0;

  std::size_t word_errors() const { return substitutions + deletions + insertions; }

  void accumulate(const ErrorCounts& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    ref_len += o.ref_len;
    entity_errors += o.entity_errors;
    entity_refs += o.entity_refs;
  }
};

// Alignment-derived counts for one (ref, hyp) pair. Entity indices address
// reference positions; insertions have no reference anchor and never count
// as entity errors.
inline ErrorCounts count_errors(const std::vector<std::string>& ref,
                                const std::vector<std::string>& hyp,
                                const std::vector<std::size_t>& entity_indices = {}) {
  ErrorCounts c;
  c.ref_len = ref.size();
  c.entity_refs = entity_indices.size();
  const std::set<std::size_t> entities(entity_indices.begin(), entity_indices.end());
  Alignment a = align(ref, hyp);
  c.substitutions = a.substitutions;
  c.deletions = a.deletions;
  c.insertions = a.insertions;
  for (const auto& s : a.steps) {
    if ((s.op == EditOp::Substitute || s.op == EditOp::Delete) &&
        entities.count(static_cast<std::size_t>(s.ref_pos)))
      ++c.entity_errors;
  }
  return c;
}

inline double wer_from_counts(const ErrorCounts& c) {
  if (c.ref_len == 0) throw MetricError("wer: total reference length is zero");
  return 100.0 * static_cast<double>(c.word_errors()) / static_cast<double>(c.ref_len);
}

inline double ewer_from_counts(const ErrorCounts& c) {
  if (c.entity_refs == 0) throw MetricError("ewer: zero entity reference words");
  return 100.0 * static_cast<double>(c.entity_errors) / static_cast<double>(c.entity_refs);
}

inline double wer(const std::vector<std::vector<std::string>>& refs,
                  const std::vector<std::vector<std::string>>& hyps) {
  if (refs.size() != hyps.size()) throw UsageError("wer: refs and hyps must be paired");
  ErrorCounts total;
  for (std::size_t i = 0; i < refs.size(); ++i) total.accumulate(count_errors(refs[i], hyps[i]));
  return wer_from_counts(total);
}

inline double ewer(const std::vector<std::vector<std::string>>& refs,
                   const std::vector<std::vector<std::string>>& hyps,
                   const std::vector<std::vector<std::size_t>>& entity_annotations) {
  if (refs.size() != hyps.size() || refs.size() != entity_annotations.size())
    throw UsageError("ewer: refs, hyps and annotations must be paired");
  ErrorCounts total;
  for (std::size_t i = 0; i < refs.size(); ++i)
    total.accumulate(count_errors(refs[i], hyps[i], entity_annotations[i]));
  return ewer_from_counts(total);
}

// TER is WER over surface tokens compared verbatim: no case folding, no
// punctuation stripping.
inline double ter(const std::vector<std::vector<std::string>>& refs,
                  const std::vector<std::vector<std::string>>& hyps) {
  return wer(refs, hyps);
}

// WER/EWER token normalization: lowercase, strip edge punctuation. A token
// that would normalize to nothing is kept verbatim so entity indices stay
// valid.
inline std::string normalize_token(const std::string& tok) {
  static const std::string punct = ".,!?;:'\"()";
  std::size_t b = 0, e = tok.size();
  while (b < e && punct.find(tok[b]) != std::string::npos) ++b;
  while (e > b && punct.find(tok[e - 1]) != std::string::npos) --e;
  if (b == e) return tok;
  std::string out = tok.substr(b, e - b);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::vector<std::string> normalize_tokens(const std::vector<std::string>& toks) {
  std::vector<std::string> out;
  out.reserve(toks.size());
  for (const auto& t : toks) out.push_back(normalize_token(t));
  return out;
}

// Per-domain slice of an EvalReport: WER/EWER over normalized tokens, TER
// over surface tokens, raw counts kept for pooling.
struct DomainMetrics {
  std::string domain;
  ErrorCounts word_counts;   // normalized tokens
  ErrorCounts token_counts;  // surface tokens (TER)
  double wer = 0.0, ewer = 0.0, ter = 0.0;
  bool has_entities = false;

  void finalize() {
    wer = wer_from_counts(word_counts);
    has_entities = word_counts.entity_refs > 0;
    ewer = has_entities ? ewer_from_counts(word_counts) : 0.0;
    ter = wer_from_counts(token_counts);
  }
};

inline DomainMetrics pool_metrics(const std::string& name, const std::vector<DomainMetrics>& parts) {
  DomainMetrics out;
  out.domain = name;
  for (const auto& p : parts) {
    out.word_counts.accumulate(p.word_counts);
    out.token_counts.accumulate(p.token_counts);
  }
  out.finalize();
  return out;
}

}  // namespace lmfb
