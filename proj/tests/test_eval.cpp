#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "lmfb/eval.hpp"

using namespace lmfb;

namespace {

using Seq = std::vector<std::string>;

Seq words(std::initializer_list<const char*> ws) {
  Seq s;
  for (auto* w : ws) s.emplace_back(w);
  return s;
}

// Independent oracle: minimum cost over every monotone alignment,
// enumerated recursively with no memoization.
std::size_t brute_force_cost(const Seq& ref, const Seq& hyp, std::size_t i = 0, std::size_t j = 0) {
  if (i == ref.size() && j == hyp.size()) return 0;
  std::size_t best = static_cast<std::size_t>(-1);
  if (i < ref.size() && j < hyp.size())
    best = std::min(best, (ref[i] == hyp[j] ? 0u : 1u) + brute_force_cost(ref, hyp, i + 1, j + 1));
  if (i < ref.size()) best = std::min(best, 1 + brute_force_cost(ref, hyp, i + 1, j));
  if (j < hyp.size()) best = std::min(best, 1 + brute_force_cost(ref, hyp, i, j + 1));
  return best;
}

std::vector<Seq> all_sequences_up_to(std::size_t max_len) {
  const std::vector<std::string> alphabet{"a", "b", "c"};
  std::vector<Seq> out{{}};
  std::vector<Seq> frontier{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<Seq> next;
    for (const auto& s : frontier)
      for (const auto& sym : alphabet) {
        Seq t = s;
        t.push_back(sym);
        next.push_back(t);
      }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

}  // namespace

TEST_CASE("align basic cases") {
  auto same = align(words({"a", "b", "c"}), words({"a", "b", "c"}));
  CHECK(same.cost() == 0);
  CHECK(same.matches == 3);

  auto sub = align(words({"a", "b", "c"}), words({"a", "x", "c"}));
  CHECK(sub.cost() == 1);
  CHECK(sub.substitutions == 1);
  CHECK(sub.matches == 2);

  auto ins = align(Seq{}, words({"a"}));
  CHECK(ins.cost() == 1);
  CHECK(ins.insertions == 1);
}

TEST_CASE("DP alignment equals exhaustive brute force (len <= 4, 3 symbols)") {
  auto seqs = all_sequences_up_to(4);
  REQUIRE(seqs.size() == 121);
  for (const auto& ref : seqs)
    for (const auto& hyp : seqs) {
      Alignment a = align(ref, hyp);
      REQUIRE(a.cost() == brute_force_cost(ref, hyp));
      // structural identities
      REQUIRE(a.matches + a.substitutions + a.deletions == ref.size());
      REQUIRE(a.matches + a.substitutions + a.insertions == hyp.size());
    }
}

TEST_CASE("swap symmetry: (S, D, I) maps to (S, I, D)") {
  auto seqs = all_sequences_up_to(3);
  for (const auto& ref : seqs)
    for (const auto& hyp : seqs) {
      Alignment fwd = align(ref, hyp);
      Alignment bwd = align(hyp, ref);
      CHECK(fwd.substitutions == bwd.substitutions);
      CHECK(fwd.deletions == bwd.insertions);
      CHECK(fwd.insertions == bwd.deletions);
    }
}

TEST_CASE("wer") {
  CHECK(wer({words({"a", "b"})}, {words({"a", "b"})}) == 0.0);
  CHECK(wer({words({"a", "b", "c"})}, {words({"a", "x", "c"})}) ==
        Catch::Approx(100.0 / 3.0).margin(0.005));
  // one deletion + one insertion over 10 reference words
  Seq ref10 = words({"w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8", "w9", "w10"});
  Seq hyp = ref10;
  hyp.erase(hyp.begin() + 2);
  hyp.push_back("extra");
  CHECK(wer({ref10}, {hyp}) == Catch::Approx(20.0).margin(1e-12));

  CHECK_THROWS_AS(wer({Seq{}}, {Seq{}}), MetricError);
}

TEST_CASE("ewer definition") {
  // substitution of the entity word only
  Seq ref = words({"turn", "on", "the", "heater"});
  Seq hyp = words({"turn", "on", "the", "theater"});
  CHECK(ewer({ref}, {hyp}, {{3}}) == Catch::Approx(100.0).margin(1e-12));
  CHECK(wer({ref}, {hyp}) == Catch::Approx(25.0).margin(1e-12));

  // entities correct, everything else wrong
  Seq ref2 = words({"x", "heater", "y"});
  Seq hyp2 = words({"q", "heater", "r"});
  CHECK(ewer({ref2}, {hyp2}, {{1}}) == 0.0);

  // deleted entity counts once
  Seq hyp3 = words({"turn", "on", "the"});
  CHECK(ewer({ref}, {hyp3}, {{3}}) == Catch::Approx(100.0).margin(1e-12));

  // insertions never count as entity errors
  Seq hyp4 = words({"turn", "on", "the", "heater", "now"});
  CHECK(ewer({ref}, {hyp4}, {{3}}) == 0.0);

  CHECK_THROWS_AS(ewer({ref}, {hyp}, {{}}), MetricError);
}

TEST_CASE("ter is exact-surface") {
  CHECK(ter({words({"Call", "me."})}, {words({"call", "me."})}) ==
        Catch::Approx(50.0).margin(1e-12));
  CHECK(ter({words({"(425)-123"})}, {words({"(425)-123"})}) == 0.0);
  CHECK(ter({words({"Hello,", "world."})}, {words({"hello", "world"})}) ==
        Catch::Approx(100.0).margin(1e-12));
}

TEST_CASE("normalization folds case and edge punctuation") {
  CHECK(normalize_token("Call") == "call");
  CHECK(normalize_token("me.") == "me");
  CHECK(normalize_token("(425)-123") == "425)-123");
  CHECK(normalize_token("...") == "...");  // would normalize to nothing: kept
  // normalized WER sees the TER example above as clean
  auto nref = normalize_tokens(words({"Hello,", "world."}));
  auto nhyp = normalize_tokens(words({"hello", "world"}));
  CHECK(wer({nref}, {nhyp}) == 0.0);
}

TEST_CASE("pooled average uses summed counts, not mean of rates") {
  // domain A: 1 error over 10 words; domain B: 5 errors over 5 words
  DomainMetrics a;
  a.domain = "A";
  a.word_counts.substitutions = 1;
  a.word_counts.ref_len = 10;
  a.word_counts.entity_errors = 1;
  a.word_counts.entity_refs = 2;
  a.token_counts = a.word_counts;
  a.finalize();
  DomainMetrics b;
  b.domain = "B";
  b.word_counts.substitutions = 5;
  b.word_counts.ref_len = 5;
  b.word_counts.entity_errors = 2;
  b.word_counts.entity_refs = 2;
  b.token_counts = b.word_counts;
  b.finalize();

  DomainMetrics avg = pool_metrics("average", {a, b});
  CHECK(avg.wer == Catch::Approx(100.0 * 6.0 / 15.0).margin(1e-12));   // pooled
  CHECK(avg.wer != Catch::Approx((10.0 + 100.0) / 2.0).margin(1e-9));  // not macro
  CHECK(avg.ewer == Catch::Approx(100.0 * 3.0 / 4.0).margin(1e-12));
}
