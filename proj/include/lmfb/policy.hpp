#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmfb/adam.hpp"
#include "lmfb/ops.hpp"
#include "lmfb/params.hpp"
#include "lmfb/rng.hpp"
#include "lmfb/world.hpp"

namespace lmfb {

namespace op = lmfb::ops;

// ---------------------------------------------------------------------------
// Token inventory: word tokens + BOS/EOS
// ---------------------------------------------------------------------------

struct TokenInventory {
  std::vector<std::string> words;
  std::unordered_map<std::string, int> index;
  int bos = 0, eos = 0;

  static TokenInventory from_words(std::vector<std::string> ws) {
    TokenInventory inv;
    inv.words = std::move(ws);
    for (std::size_t i = 0; i < inv.words.size(); ++i)
      inv.index[inv.words[i]] = static_cast<int>(i);
    inv.bos = static_cast<int>(inv.words.size());
    inv.eos = inv.bos + 1;
    return inv;
  }

  int size() const { return static_cast<int>(words.size()) + 2; }

  int word_id(const std::string& w) const {
    auto it = index.find(w);
    if (it == index.end()) throw DataError("unknown token: " + w);
    return it->second;
  }

  const std::string& word(int id) const { return words[static_cast<std::size_t>(id)]; }
  bool is_word(int id) const { return id >= 0 && id < static_cast<int>(words.size()); }
};

// word ids plus a trailing EOS; the training/scoring target layout
inline std::vector<int> tokenize(const TokenInventory& inv, const std::vector<std::string>& text) {
  std::vector<int> ids;
  ids.reserve(text.size() + 1);
  for (const auto& w : text) ids.push_back(inv.word_id(w));
  ids.push_back(inv.eos);
  return ids;
}

// ---------------------------------------------------------------------------
// Policy parameters
// ---------------------------------------------------------------------------

// Single-layer frame-projection encoder + one cross-attention decoder step
// conditioned on (previous token, position). Small enough that acoustic
// ambiguity must be resolved through the attention context.
struct PolicyParams {
  TokenInventory vocab;
  ParamStore store;
  std::size_t frame_dim = 16;
  std::size_t hidden = 48;
  std::size_t max_len = 12;  // output words per utterance

  static PolicyParams init(TokenInventory inv, std::size_t frame_dim, std::size_t hidden,
                           std::size_t max_len, std::uint64_t seed) {
    PolicyParams p;
    p.vocab = std::move(inv);
    p.frame_dim = frame_dim;
    p.hidden = hidden;
    p.max_len = max_len;
    Rng rng = Rng::substream(seed, "policy/init");
    auto randn = [&](Shape shape, double sd) {
      Tensor t = Tensor::zeros(std::move(shape), true);
      for (auto& v : t.values()) v = sd * rng.normal();
      return t;
    };
    const auto V = static_cast<std::size_t>(p.vocab.size());
    const double hs = 1.0 / std::sqrt(static_cast<double>(hidden));
    p.store.add("enc_w", randn({frame_dim, hidden}, 1.0 / std::sqrt(static_cast<double>(frame_dim))));
    p.store.add("enc_b", Tensor::zeros({1, hidden}, true));
    p.store.add("enc_sentinel", randn({1, hidden}, 0.5));
    p.store.add("tok_embed", randn({V, hidden}, 0.3));
    p.store.add("pos_embed", randn({max_len + 1, hidden}, 0.3));
    p.store.add("wq", randn({hidden, hidden}, hs));
    p.store.add("wk", randn({hidden, hidden}, hs));
    p.store.add("wv", randn({hidden, hidden}, hs));
    p.store.add("wc", randn({hidden, hidden}, hs));
    p.store.add("ws", randn({hidden, hidden}, hs));
    p.store.add("bh", Tensor::zeros({1, hidden}, true));
    p.store.add("w_out", randn({hidden, V}, hs));
    return p;
  }

  const std::string& checkpoint_id() const { return store.checkpoint_id(); }
};

inline Tensor frames_tensor(const std::vector<std::vector<double>>& frames) {
  if (frames.empty()) throw UsageError("frames must be non-empty");
  const std::size_t t = frames.size(), d = frames[0].size();
  Tensor out = Tensor::zeros({t, d});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = frames[i][j];
  return out;
}

// ---------------------------------------------------------------------------
// Forward pieces
// ---------------------------------------------------------------------------

struct EncodedAudio {
  Tensor keys;    // [T+1, hidden], last row from the end-of-audio sentinel
  Tensor values;  // [T+1, hidden]
};

inline EncodedAudio encode(Tape* tape, const PolicyParams& p, const Tensor& frames) {
  Tensor h = op::tanh(tape, op::add_rowvec(tape, op::matmul(tape, frames, p.store.at("enc_w")),
                                           p.store.at("enc_b")));
  Tensor m = op::concat_rows(tape, h, p.store.at("enc_sentinel"));
  return {op::matmul(tape, m, p.store.at("wk")), op::matmul(tape, m, p.store.at("wv"))};
}

// Log-probabilities over the inventory for one decoder position.
inline Tensor step_logits(Tape* tape, const PolicyParams& p, const EncodedAudio& enc,
                          int prev_token, std::size_t position) {
  const std::size_t pos = std::min(position, p.max_len);
  Tensor s = op::add(tape, op::row(tape, p.store.at("tok_embed"), static_cast<std::size_t>(prev_token)),
                     op::row(tape, p.store.at("pos_embed"), pos));
  Tensor q = op::matmul(tape, s, p.store.at("wq"));
  Tensor scores =
      op::scale(tape, op::matmul_nt(tape, q, enc.keys), 1.0 / std::sqrt(static_cast<double>(p.hidden)));
  Tensor alpha = op::softmax_rows(tape, scores);
  Tensor ctx = op::matmul(tape, alpha, enc.values);
  Tensor u = op::tanh(tape, op::add(tape, op::add(tape, op::matmul(tape, ctx, p.store.at("wc")),
                                                  op::matmul(tape, s, p.store.at("ws"))),
                                    p.store.at("bh")));
  return op::matmul(tape, u, p.store.at("w_out"));
}

inline Tensor step_logprobs(Tape* tape, const PolicyParams& p, const EncodedAudio& enc,
                            int prev_token, std::size_t position) {
  return op::log_softmax_rows(tape, step_logits(tape, p, enc, prev_token, position));
}

// Differentiable sum of per-token log-probs for a full sequence (ends at EOS).
inline Tensor sequence_logprob_t(Tape* tape, const PolicyParams& p, const EncodedAudio& enc,
                                 const std::vector<int>& tokens) {
  if (tokens.empty() || tokens.back() != p.vocab.eos)
    throw UsageError("sequence_logprob: tokens must end with EOS");
  std::vector<Tensor> terms;
  int prev = p.vocab.bos;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Tensor logp = step_logprobs(tape, p, enc, prev, t);
    terms.push_back(op::pick(tape, logp, static_cast<std::size_t>(tokens[t])));
    prev = tokens[t];
  }
  return op::sum(tape, op::stack(tape, std::move(terms)));
}

// P_asr(a | X): plain forward, deterministic, never mutates params.
inline double sequence_logprob(const PolicyParams& p, const std::vector<std::vector<double>>& frames,
                               const std::vector<int>& tokens) {
  EncodedAudio enc = encode(nullptr, p, frames_tensor(frames));
  return sequence_logprob_t(nullptr, p, enc, tokens).item();
}

inline std::vector<double> per_token_logprobs(const PolicyParams& p,
                                              const std::vector<std::vector<double>>& frames,
                                              const std::vector<int>& tokens) {
  EncodedAudio enc = encode(nullptr, p, frames_tensor(frames));
  std::vector<double> out;
  int prev = p.vocab.bos;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Tensor logp = step_logprobs(nullptr, p, enc, prev, t);
    out.push_back(logp.at(static_cast<std::size_t>(tokens[t])));
    prev = tokens[t];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Teacher-forced training
// ---------------------------------------------------------------------------

struct LabeledFrames {
  std::vector<std::vector<double>> frames;
  std::vector<int> tokens;  // word ids + EOS
};

inline LabeledFrames to_labeled(const PolicyParams& p, const Utterance& u) {
  return {u.frames, tokenize(p.vocab, u.text)};
}

// Mean token-level NLL over the pooled batch tokens.
inline Tensor teacher_forced_loss(Tape* tape, const PolicyParams& p,
                                  const std::vector<LabeledFrames>& batch) {
  if (batch.empty()) throw UsageError("teacher_forced_loss: empty batch");
  std::vector<Tensor> terms;
  for (const auto& ex : batch) {
    EncodedAudio enc = encode(tape, p, frames_tensor(ex.frames));
    int prev = p.vocab.bos;
    for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
      Tensor logp = step_logprobs(tape, p, enc, prev, t);
      terms.push_back(op::pick(tape, logp, static_cast<std::size_t>(ex.tokens[t])));
      prev = ex.tokens[t];
    }
  }
  return op::neg(tape, op::mean(tape, op::stack(tape, std::move(terms))));
}

inline double mean_nll(const PolicyParams& p, const std::vector<LabeledFrames>& batch) {
  return teacher_forced_loss(nullptr, p, batch).item();
}

// One gradient step on the batch NLL; returns the pre-step loss.
inline double teacher_forced_step(PolicyParams& p, AdamW& opt,
                                  const std::vector<LabeledFrames>& batch, double lr,
                                  double grad_clip = 0.0) {
  Tape tape;
  Tensor loss = teacher_forced_loss(&tape, p, batch);
  p.store.zero_grads();
  tape.backward(loss);
  clip_grad_norm(p.store, grad_clip);
  opt.step(lr);
  return loss.item();
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

struct Hypothesis {
  std::vector<int> tokens;  // word ids ending at EOS (unless truncated)
  std::vector<double> per_token_logprob;
  double total_logprob = 0.0;
  bool truncated = false;

  std::vector<std::string> words(const TokenInventory& inv) const {
    std::vector<std::string> out;
    for (int id : tokens)
      if (inv.is_word(id)) out.push_back(inv.word(id));
    return out;
  }
};

struct NBestMeta {
  int beam_width = 0;
  double patience = 0.0;
  double temperature = 0.0;
  int pool_size = 0;
  int n_keep = 0;
  std::string policy_checkpoint;
};

struct NBestList {
  std::string utterance_id;
  std::vector<Hypothesis> hypotheses;  // ordered by total_logprob descending
  NBestMeta meta;
};

namespace decode_detail {

// Per-utterance memo: the decoder state is (prev token, position), so
// distributions can be shared across beams.
class StepCache {
 public:
  StepCache(const PolicyParams& p, const EncodedAudio& enc) : p_(p), enc_(enc) {}

  const std::vector<double>& logprobs(int prev, std::size_t pos) {
    const std::uint64_t key = (static_cast<std::uint64_t>(prev) << 32) | pos;
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    Tensor t = step_logprobs(nullptr, p_, enc_, prev, pos);
    auto v = t.values();
    return cache_.emplace(key, std::vector<double>(v.begin(), v.end())).first->second;
  }

 private:
  const PolicyParams& p_;
  const EncodedAudio& enc_;
  std::unordered_map<std::uint64_t, std::vector<double>> cache_;
};

// argmax over word tokens (+ EOS when allowed); BOS is never a candidate
// and EOS is masked at the first position. Ties break to the lowest index.
inline int masked_argmax(const std::vector<double>& logp, const TokenInventory& inv,
                         bool allow_eos) {
  int best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(logp.size());
  for (int i = 0; i < n; ++i) {
    if (i == inv.bos) continue;
    if (i == inv.eos && !allow_eos) continue;
    if (logp[static_cast<std::size_t>(i)] > best_v) {
      best_v = logp[static_cast<std::size_t>(i)];
      best = i;
    }
  }
  return best;
}

}  // namespace decode_detail

inline Hypothesis greedy_decode(const PolicyParams& p, const std::vector<std::vector<double>>& frames) {
  EncodedAudio enc = encode(nullptr, p, frames_tensor(frames));
  Hypothesis h;
  int prev = p.vocab.bos;
  for (std::size_t t = 0; t <= p.max_len; ++t) {
    Tensor logp_t = step_logprobs(nullptr, p, enc, prev, t);
    std::vector<double> logp(logp_t.values().begin(), logp_t.values().end());
    const int tok = decode_detail::masked_argmax(logp, p.vocab, t > 0);
    h.tokens.push_back(tok);
    h.per_token_logprob.push_back(logp[static_cast<std::size_t>(tok)]);
    h.total_logprob += logp[static_cast<std::size_t>(tok)];
    if (tok == p.vocab.eos) return h;
    prev = tok;
  }
  h.truncated = true;  // max length reached without EOS
  return h;
}

struct BeamParams {
  int beam_width = 8;
  double patience = 3.0;
  double temperature = 1.0;
  int pool_size = 24;
  int n_keep = 8;
  int expansions = 2;  // stochastic candidates sampled per live beam per step
};

// Sampling-based beam search with a patience-controlled stopping rule:
// decoding runs until ceil(patience * beam_width) finished hypotheses are
// collected (or the length budget ends), then n_keep distinct hypotheses
// are drawn uniformly from the pool. Stored log-probs always come from the
// untempered distribution, so they match sequence_logprob exactly.
inline NBestList beam_sample(const PolicyParams& p, const std::vector<std::vector<double>>& frames,
                             const BeamParams& bp, Rng& rng) {
  if (bp.beam_width < 1 || bp.patience < 1.0) throw UsageError("beam_sample: width and patience must be >= 1");
  if (bp.n_keep > bp.pool_size) throw UsageError("beam_sample: n_keep must be <= pool_size");
  EncodedAudio enc = encode(nullptr, p, frames_tensor(frames));
  decode_detail::StepCache cache(p, enc);

  struct Beam {
    std::vector<int> tokens;
    std::vector<double> logps;
    double total = 0.0;
  };
  const int target_finished =
      static_cast<int>(std::ceil(bp.patience * static_cast<double>(bp.beam_width)));
  std::vector<Beam> live{Beam{}};
  std::vector<Hypothesis> finished;

  for (std::size_t step = 0; step <= p.max_len && !live.empty() &&
                             static_cast<int>(finished.size()) < target_finished;
       ++step) {
    // temperature -> 0 degenerates to deterministic argmax expansion, which
    // keeps the (width 1, patience 1) path identical to greedy_decode
    const int per_beam =
        bp.temperature <= 1e-12
            ? 1
            : std::max(bp.expansions, static_cast<int>(std::ceil(
                                          2.0 * bp.beam_width / static_cast<double>(live.size()))));
    std::vector<Beam> candidates;
    for (const Beam& b : live) {
      const int prev = b.tokens.empty() ? p.vocab.bos : b.tokens.back();
      const auto& logp = cache.logprobs(prev, step);
      const bool allow_eos = step > 0;

      // candidate tokens: top-k for temperature -> 0, otherwise sampled
      // without replacement from the tempered distribution
      std::vector<int> picks;
      const int n_tok = static_cast<int>(logp.size());
      const int want = std::min(per_beam, n_tok - (allow_eos ? 1 : 2));
      if (bp.temperature <= 1e-12) {
        std::vector<int> order;
        for (int i = 0; i < n_tok; ++i)
          if (i != p.vocab.bos && (allow_eos || i != p.vocab.eos)) order.push_back(i);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b2) {
          return logp[static_cast<std::size_t>(a)] > logp[static_cast<std::size_t>(b2)];
        });
        picks.assign(order.begin(), order.begin() + want);
      } else {
        std::vector<double> w(logp.size(), 0.0);
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < n_tok; ++i) {
          if (i == p.vocab.bos || (!allow_eos && i == p.vocab.eos)) continue;
          mx = std::max(mx, logp[static_cast<std::size_t>(i)] / bp.temperature);
        }
        for (int i = 0; i < n_tok; ++i) {
          if (i == p.vocab.bos || (!allow_eos && i == p.vocab.eos)) continue;
          w[static_cast<std::size_t>(i)] =
              std::exp(logp[static_cast<std::size_t>(i)] / bp.temperature - mx);
        }
        for (int k = 0; k < want; ++k) {
          const std::size_t idx = rng.categorical(w);
          picks.push_back(static_cast<int>(idx));
          w[idx] = 0.0;
        }
      }

      for (int tok : picks) {
        Beam nb = b;
        nb.tokens.push_back(tok);
        nb.logps.push_back(logp[static_cast<std::size_t>(tok)]);
        nb.total += logp[static_cast<std::size_t>(tok)];
        candidates.push_back(std::move(nb));
      }
    }

    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Beam& a, const Beam& b) { return a.total > b.total; });
    std::vector<Beam> next_live;
    for (Beam& c : candidates) {
      if (c.tokens.back() == p.vocab.eos) {
        if (static_cast<int>(finished.size()) < target_finished)
          finished.push_back({c.tokens, c.logps, c.total, false});
      } else if (static_cast<int>(next_live.size()) < bp.beam_width) {
        next_live.push_back(std::move(c));
      }
    }
    live = std::move(next_live);
  }

  if (finished.empty()) {
    std::vector<std::vector<int>> partials;
    for (const auto& b : live) partials.push_back(b.tokens);
    throw DecodeError("beam_sample: no finished hypothesis within max length", std::move(partials));
  }

  // pool: first pool_size finished, deduplicated by token sequence
  std::vector<Hypothesis> pool;
  {
    std::set<std::vector<int>> seen;
    for (const auto& h : finished) {
      if (static_cast<int>(pool.size()) >= bp.pool_size) break;
      if (seen.insert(h.tokens).second) pool.push_back(h);
    }
  }

  NBestList out;
  if (static_cast<int>(pool.size()) <= bp.n_keep) {
    out.hypotheses = pool;
  } else {
    for (std::size_t i : rng.sample_without_replacement(pool.size(), static_cast<std::size_t>(bp.n_keep)))
      out.hypotheses.push_back(pool[i]);
  }
  std::stable_sort(out.hypotheses.begin(), out.hypotheses.end(),
                   [](const Hypothesis& a, const Hypothesis& b) {
                     return a.total_logprob > b.total_logprob;
                   });
  out.meta = {bp.beam_width, bp.patience, bp.temperature, bp.pool_size, bp.n_keep,
              p.checkpoint_id()};
  return out;
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double train_nll = 0.0;
  double holdout_nll = 0.0;
};

inline std::vector<EpochStats> pretrain_policy(PolicyParams& p, const Corpus& pretrain,
                                               int epochs, double lr, std::size_t batch_size,
                                               double holdout_fraction, Rng& rng) {
  std::vector<LabeledFrames> all;
  for (const auto& u : pretrain.utterances) all.push_back(to_labeled(p, u));
  const std::size_t holdout_n =
      std::min(all.size() / 2, static_cast<std::size_t>(holdout_fraction * all.size()));
  std::vector<LabeledFrames> holdout(all.end() - static_cast<long>(holdout_n), all.end());
  all.resize(all.size() - holdout_n);
  if (all.empty()) throw ConfigError("pretrain_policy: empty training split");

  AdamW opt(p.store);
  std::vector<EpochStats> stats;
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(all);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < all.size(); i += batch_size) {
      std::vector<LabeledFrames> batch(all.begin() + static_cast<long>(i),
                                       all.begin() + static_cast<long>(std::min(i + batch_size, all.size())));
      total += teacher_forced_step(p, opt, batch, lr);
      ++batches;
    }
    EpochStats s;
    s.epoch = e + 1;
    s.train_nll = total / static_cast<double>(batches);
    s.holdout_nll = holdout.empty() ? 0.0 : mean_nll(p, holdout);
    stats.push_back(s);
  }
  return stats;
}

}  // namespace lmfb
