#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "lmfb/policy.hpp"
#include "support.hpp"

using namespace lmfb;

namespace {

World tiny_world(std::uint64_t seed, std::size_t common = 6) {
  WorldParams p;
  p.common_words = common;
  p.entities_per_domain = 2;
  p.variant_words = 2;
  p.confusable_fraction = 0.0;
  p.sentence_min = 2;
  p.sentence_max = 4;
  return build_world(seed, p);
}

PolicyParams tiny_policy(const World& w, std::uint64_t seed, std::size_t hidden = 24) {
  return PolicyParams::init(TokenInventory::from_words(w.codebook.vocabulary),
                            w.codebook.frame_dim, hidden, 8, seed);
}

}  // namespace

TEST_CASE("teacher-forced memorization drives NLL below 0.01") {
  World w = tiny_world(1);
  PolicyParams p = tiny_policy(w, 1);
  Rng rng(5);
  Utterance u = synthesize_utterance(w.domain("general"), w.codebook, 0.0, rng);
  std::vector<LabeledFrames> batch{to_labeled(p, u)};
  AdamW opt(p.store);
  double loss = 0.0;
  for (int i = 0; i < 400; ++i) loss = teacher_forced_step(p, opt, batch, 0.02);
  CHECK(loss < 0.01);
  // and the certainty limit: total sequence log-prob approaches 0
  CHECK(sequence_logprob(p, u.frames, tokenize(p.vocab, u.text)) > -0.1);
}

TEST_CASE("lr = 0 leaves parameters bit-exactly unchanged") {
  World w = tiny_world(2);
  PolicyParams p = tiny_policy(w, 2);
  Rng rng(6);
  Utterance u = synthesize_utterance(w.domain("general"), w.codebook, 0.3, rng);
  std::vector<std::vector<double>> before;
  for (std::size_t i = 0; i < p.store.count(); ++i) {
    auto v = p.store.tensor(i).values();
    before.emplace_back(v.begin(), v.end());
  }
  AdamW opt(p.store);
  teacher_forced_step(p, opt, {to_labeled(p, u)}, 0.0);
  for (std::size_t i = 0; i < p.store.count(); ++i) {
    auto v = p.store.tensor(i).values();
    for (std::size_t j = 0; j < v.size(); ++j) REQUIRE(v[j] == before[i][j]);
  }
}

TEST_CASE("uniform output head gives ln(vocab) NLL and L*ln(1/K) scores") {
  World w = tiny_world(3);
  PolicyParams p = tiny_policy(w, 3);
  auto wo = p.store.at("w_out").values();
  std::fill(wo.begin(), wo.end(), 0.0);
  p.store.mark_dirty();
  Rng rng(7);
  Utterance u = synthesize_utterance(w.domain("general"), w.codebook, 0.3, rng);
  const double k = static_cast<double>(p.vocab.size());

  const double nll = mean_nll(p, {to_labeled(p, u)});
  CHECK(nll == Catch::Approx(std::log(k)).epsilon(0.05));

  auto tokens = tokenize(p.vocab, u.text);
  const double lp = sequence_logprob(p, u.frames, tokens);
  CHECK(lp == Catch::Approx(static_cast<double>(tokens.size()) * std::log(1.0 / k)).margin(1e-6));
}

TEST_CASE("unknown reference token raises a data error naming it") {
  World w = tiny_world(4);
  PolicyParams p = tiny_policy(w, 4);
  try {
    tokenize(p.vocab, {"definitely-not-a-word"});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("definitely-not-a-word") != std::string::npos);
  }
}

TEST_CASE("sequence_logprob equals the negated teacher-forced NLL times length") {
  World w = tiny_world(5);
  PolicyParams p = tiny_policy(w, 5);
  Rng rng(8);
  Utterance u = synthesize_utterance(w.domain("ordering"), w.codebook, 0.3, rng);
  auto labeled = to_labeled(p, u);
  const double nll = mean_nll(p, {labeled});
  const double lp = sequence_logprob(p, u.frames, labeled.tokens);
  CHECK(lp == Catch::Approx(-nll * static_cast<double>(labeled.tokens.size())).margin(1e-9));
  CHECK(lp <= 0.0);
  // deterministic
  CHECK(sequence_logprob(p, u.frames, labeled.tokens) == lp);
}

TEST_CASE("teacher-forced NLL gradient matches finite differences") {
  World w = tiny_world(6, 4);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    PolicyParams p = PolicyParams::init(TokenInventory::from_words(w.codebook.vocabulary),
                                        w.codebook.frame_dim, 6, 5, seed);
    Rng rng(seed);
    Utterance a = synthesize_utterance(w.domain("general"), w.codebook, 0.3, rng);
    Utterance b = synthesize_utterance(w.domain("command"), w.codebook, 0.3, rng);
    std::vector<LabeledFrames> batch{to_labeled(p, a), to_labeled(p, b)};
    Tape tape;
    Tensor loss = teacher_forced_loss(&tape, p, batch);
    p.store.zero_grads();
    tape.backward(loss);
    auto res = testsupport::grad_check_store(
        p.store, [&]() { return teacher_forced_loss(nullptr, p, batch).item(); });
    CHECK(res.worst_rel < 1e-4);
  }
}

TEST_CASE("greedy decode: determinism, stepwise argmax, trained recovery") {
  // a 3-word world with zero noise is separable; train to convergence
  WorldParams wp;
  wp.common_words = 3;
  wp.entities_per_domain = 1;
  wp.variant_words = 1;
  wp.confusable_fraction = 0.0;
  wp.sentence_min = 2;
  wp.sentence_max = 4;
  wp.noise_sigma = 0.0;
  World w = build_world(11, wp);
  PolicyParams p = tiny_policy(w, 11);
  Rng rng(12);
  const DomainSpec& src = w.domain("general");
  std::vector<LabeledFrames> batch;
  for (int i = 0; i < 24; ++i)
    batch.push_back(to_labeled(p, synthesize_utterance(src, w.codebook, 0.0, rng)));
  AdamW opt(p.store);
  double loss = 1e9;
  for (int i = 0; i < 300 && loss > 0.02; ++i) loss = teacher_forced_step(p, opt, batch, 0.02);
  REQUIRE(loss < 0.05);

  const std::string id_before = p.checkpoint_id();
  for (int trial = 0; trial < 10; ++trial) {
    Utterance u = synthesize_utterance(src, w.codebook, 0.0, rng);
    Hypothesis h = greedy_decode(p, u.frames);
    CHECK_FALSE(h.truncated);
    CHECK(h.words(p.vocab) == u.text);  // exact reference recovered

    Hypothesis again = greedy_decode(p, u.frames);
    REQUIRE(h.tokens == again.tokens);
    REQUIRE(h.total_logprob == again.total_logprob);  // bit-identical

    // stepwise argmax oracle against the per-step distributions
    EncodedAudio enc = encode(nullptr, p, frames_tensor(u.frames));
    int prev = p.vocab.bos;
    for (std::size_t t = 0; t < h.tokens.size(); ++t) {
      Tensor logp = step_logprobs(nullptr, p, enc, prev, t);
      double total = 0.0;
      for (double v : logp.values()) total += std::exp(v);
      CHECK(total == Catch::Approx(1.0).margin(1e-9));  // valid distribution
      std::vector<double> row(logp.values().begin(), logp.values().end());
      CHECK(h.tokens[t] == decode_detail::masked_argmax(row, p.vocab, t > 0));
      prev = h.tokens[t];
    }
  }
  CHECK(p.checkpoint_id() == id_before);  // decoding never mutates params
}

TEST_CASE("beam_sample honors the paper defaults and the n-best contract") {
  BeamParams defaults;
  CHECK(defaults.beam_width == 8);
  CHECK(defaults.patience == 3.0);
  CHECK(defaults.pool_size == 24);
  CHECK(defaults.n_keep == 8);

  World w = tiny_world(21);
  PolicyParams p = tiny_policy(w, 21);
  Rng rng(22);
  const std::string id_before = p.checkpoint_id();
  for (int trial = 0; trial < 10; ++trial) {
    Utterance u = synthesize_utterance(w.domain("ordering"), w.codebook, 0.3, rng);
    NBestList nb = beam_sample(p, u.frames, defaults, rng);
    REQUIRE(!nb.hypotheses.empty());
    CHECK(nb.hypotheses.size() <= 8);
    CHECK(nb.meta.policy_checkpoint == id_before);

    std::set<std::vector<int>> seen;
    double prev_total = std::numeric_limits<double>::infinity();
    for (const auto& h : nb.hypotheses) {
      CHECK(seen.insert(h.tokens).second);  // mutually distinct
      CHECK(h.total_logprob <= prev_total);  // ordered descending
      prev_total = h.total_logprob;
      REQUIRE(h.tokens.back() == p.vocab.eos);
      // stored log-probs match independent rescoring
      double s = 0.0;
      for (double v : h.per_token_logprob) s += v;
      CHECK(h.total_logprob == Catch::Approx(s).margin(1e-9));
      CHECK(sequence_logprob(p, u.frames, h.tokens) ==
            Catch::Approx(h.total_logprob).margin(1e-9));
    }
  }
  CHECK(p.checkpoint_id() == id_before);
}

TEST_CASE("beam_sample with width 1, patience 1, temperature -> 0 equals greedy") {
  World w = tiny_world(31);
  PolicyParams p = tiny_policy(w, 31);
  Rng rng(32);
  BeamParams bp;
  bp.beam_width = 1;
  bp.patience = 1.0;
  bp.temperature = 0.0;
  bp.pool_size = 1;
  bp.n_keep = 1;
  for (int trial = 0; trial < 25; ++trial) {
    Utterance u = synthesize_utterance(w.domain("command"), w.codebook, 0.3, rng);
    Hypothesis greedy = greedy_decode(p, u.frames);
    if (greedy.truncated) continue;
    NBestList nb = beam_sample(p, u.frames, bp, rng);
    REQUIRE(nb.hypotheses.size() == 1);
    CHECK(nb.hypotheses[0].tokens == greedy.tokens);
    CHECK(nb.hypotheses[0].total_logprob == greedy.total_logprob);
  }
}

TEST_CASE("beam_sample raises a decode error carrying partial state") {
  World w = tiny_world(41);
  PolicyParams p = tiny_policy(w, 41);
  p.max_len = 0;  // EOS is masked at the first position, so nothing can finish
  Rng rng(42);
  Utterance u = synthesize_utterance(w.domain("general"), w.codebook, 0.3, rng);
  BeamParams bp;
  try {
    beam_sample(p, u.frames, bp, rng);
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK_FALSE(e.partial_sequences.empty());
  }
}

TEST_CASE("pretraining strictly decreases held-out NLL over the first 3 epochs") {
  int successes = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    WorldParams wp;
    wp.common_words = 12;
    wp.entities_per_domain = 2;
    wp.variant_words = 2;
    wp.pretrain_utts = 60;
    World w = build_world(seed, wp);
    SplitSizes sizes{wp.pretrain_utts, 10, 10, 30, 2};
    auto splits = generate_corpus(w, sizes, wp.noise_sigma, seed);
    PolicyParams p = tiny_policy(w, seed);
    Rng rng = Rng::substream(seed, "pretrain");
    auto stats = pretrain_policy(p, splits.at("pretrain"), 3, 0.01, 8, 0.15, rng);
    REQUIRE(stats.size() == 3);
    const bool initial_beats =
        stats[0].holdout_nll > stats[1].holdout_nll && stats[1].holdout_nll > stats[2].holdout_nll;
    if (initial_beats) ++successes;
  }
  CHECK(successes >= 3);  // median over 5 seeds
}
