#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "lmfb/common.hpp"
#include "lmfb/config.hpp"
#include "lmfb/rng.hpp"

namespace lmfb {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

// Fixed per-word acoustic prototypes. Surface tokens map to an acoustic
// class; display variants ("Bato." vs "bato") share their base word's
// class, every other pair of words gets its own draw.
struct WordCodebook {
  std::size_t frames_per_word = 2;
  std::size_t frame_dim = 16;
  std::vector<std::string> vocabulary;                    // surface tokens
  std::unordered_map<std::string, std::size_t> index;     // token -> word id
  std::vector<std::size_t> acoustic_class;                // word id -> prototype id
  std::vector<std::vector<double>> prototypes;            // frames_per_word*frame_dim each

  std::size_t word_id(const std::string& w) const {
    auto it = index.find(w);
    if (it == index.end()) throw DataError("unknown word: " + w);
    return it->second;
  }

  const std::vector<double>& prototype_of(std::size_t word) const {
    return prototypes[acoustic_class[word]];
  }
};

// One domain's text distribution: a bigram chain over member words (start
// weights + per-conditioning-word transition rows, each summing to 1), plus
// the prompt fed to the reward LM and the entity annotation set.
struct DomainSpec {
  std::string name;
  std::string context_prompt;
  bool is_source = false;
  std::vector<std::size_t> members;                 // codebook word ids
  std::vector<double> start_weights;                // over members, sums to 1
  std::vector<std::vector<double>> transitions;     // per member, sums to 1
  std::set<std::string> entity_lexicon;
  double entity_rate = 0.0;                         // configured occurrence rate
  std::size_t sentence_min = 3, sentence_max = 7;
};

struct Utterance {
  std::string id;
  std::string domain;
  std::vector<std::vector<double>> frames;   // T x frame_dim
  std::vector<std::string> text;
  std::vector<std::size_t> entities;         // indices into text
};

// Frames-only view handed to adaptation consumers; the reference text never
// crosses this boundary.
struct AdaptUtterance {
  std::string id;
  std::string domain;
  std::vector<std::vector<double>> frames;
};

struct Corpus {
  std::string split;  // pretrain | adapt | test | lm-text
  std::vector<Utterance> utterances;
  std::string checksum;
};

struct World {
  WordCodebook codebook;
  std::vector<DomainSpec> domains;  // sources first, then targets in config order

  const DomainSpec& domain(const std::string& name) const {
    for (const auto& d : domains)
      if (d.name == name) return d;
    throw DataError("unknown domain: " + name);
  }
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace worldgen {

inline std::string make_word(Rng& rng, int syllables) {
  static const char* consonants = "bdfgklmnprstvz";
  static const char* vowels = "aeiou";
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += consonants[rng.below(14)];
    w += vowels[rng.below(5)];
  }
  return w;
}

inline std::vector<std::string> distinct_words(Rng& rng, std::size_t n, int syllables,
                                               std::unordered_set<std::string>& used) {
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w = make_word(rng, syllables);
    if (used.insert(w).second) out.push_back(w);
  }
  return out;
}

inline std::string display_variant(const std::string& w) {
  std::string v = w;
  v[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(v[0])));
  return v + ".";
}

// Peaked random distribution: softmax of concentration-scaled normals.
inline std::vector<double> random_distribution(Rng& rng, std::size_t n, double concentration) {
  std::vector<double> w(n);
  double mx = -1e300;
  for (auto& v : w) {
    v = concentration * rng.normal();
    mx = std::max(mx, v);
  }
  double total = 0.0;
  for (auto& v : w) {
    v = std::exp(v - mx);
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace worldgen

struct WorldParams {
  std::size_t common_words = 40;
  std::size_t entities_per_domain = 8;
  std::size_t variant_words = 12;
  double confusable_fraction = 0.5;
  double confusable_gap = 0.5;
  std::size_t frames_per_word = 2;
  std::size_t frame_dim = 16;
  double noise_sigma = 0.3;
  std::size_t sentence_min = 3, sentence_max = 7;
  double entity_rate = 0.22;
  double bigram_concentration = 1.5;
  std::vector<std::string> source_domains{"general"};
  std::vector<std::string> target_domains{"ordering", "command", "readability"};
  std::map<std::string, std::string> prompts;  // domain -> context prompt
  std::size_t pretrain_utts = 400;
  std::size_t adapt_per_domain = 300;
  std::size_t test_per_domain = 250;
  std::size_t lm_sentences_per_domain = 400;
  std::size_t min_entity_count = 25;

  std::string prompt_for(const std::string& domain) const {
    auto it = prompts.find(domain);
    if (it != prompts.end()) return it->second;
    if (domain == "ordering") return "Generate a message for ordering at Starbucks.";
    if (domain == "command") return "Generate a voice command message.";
    if (domain == "readability")
      return "Generate a message that includes numbers or digits in a display-friendly format.";
    for (const auto& s : source_domains)
      if (s == domain) return "Generate a casual chat message.";
    return "Generate a message for the " + domain + " domain.";
  }

  static WorldParams from_config(const Config& cfg) {
    WorldParams p;
    p.common_words = static_cast<std::size_t>(cfg.get_int("world.common_words", 40));
    p.entities_per_domain = static_cast<std::size_t>(cfg.get_int("world.entities_per_domain", 8));
    p.variant_words = static_cast<std::size_t>(cfg.get_int("world.variant_words", 12));
    p.confusable_fraction = cfg.get_double("world.confusable_fraction", 0.5);
    p.confusable_gap = cfg.get_double("world.confusable_gap", 0.5);
    p.frames_per_word = static_cast<std::size_t>(cfg.get_int("world.frames_per_word", 2));
    p.frame_dim = static_cast<std::size_t>(cfg.get_int("world.frame_dim", 16));
    p.noise_sigma = cfg.get_double("world.noise_sigma", 0.3);
    p.sentence_min = static_cast<std::size_t>(cfg.get_int("world.sentence_min", 3));
    p.sentence_max = static_cast<std::size_t>(cfg.get_int("world.sentence_max", 7));
    p.entity_rate = cfg.get_double("world.entity_rate", 0.22);
    p.bigram_concentration = cfg.get_double("world.bigram_concentration", 1.5);
    p.source_domains = cfg.get_list("world.source_domains", {"general"});
    p.target_domains = cfg.get_list("world.target_domains", {"ordering", "command", "readability"});
    p.pretrain_utts = static_cast<std::size_t>(cfg.get_int("world.pretrain_utts", 400));
    p.adapt_per_domain = static_cast<std::size_t>(cfg.get_int("world.adapt_per_domain", 300));
    p.test_per_domain = static_cast<std::size_t>(cfg.get_int("world.test_per_domain", 250));
    p.lm_sentences_per_domain =
        static_cast<std::size_t>(cfg.get_int("world.lm_sentences_per_domain", 400));
    p.min_entity_count = static_cast<std::size_t>(cfg.get_int("world.min_entity_count", 25));
    for (const auto& d : p.source_domains)
      p.prompts[d] = cfg.get_string("world.domain." + d + ".prompt", p.prompt_for(d));
    for (const auto& d : p.target_domains)
      p.prompts[d] = cfg.get_string("world.domain." + d + ".prompt", p.prompt_for(d));
    return p;
  }
};

inline void validate_world(const WordCodebook& codebook, const std::vector<DomainSpec>& domains) {
  std::unordered_set<std::string> names;
  for (const auto& d : domains) {
    if (!names.insert(d.name).second) throw ConfigError("overlapping domain name: " + d.name);
    for (const auto& e : d.entity_lexicon)
      if (!codebook.index.count(e))
        throw ConfigError("entity word absent from vocabulary: " + e + " (domain " + d.name + ")");
    const double tol = 1e-9;
    double s = 0.0;
    for (double w : d.start_weights) s += w;
    if (std::fabs(s - 1.0) > tol) throw ConfigError("start weights do not sum to 1: " + d.name);
    for (const auto& row : d.transitions) {
      double rs = 0.0;
      for (double w : row) rs += w;
      if (std::fabs(rs - 1.0) > tol)
        throw ConfigError("transition row does not sum to 1: " + d.name);
    }
  }
}

// Deterministic world construction. The source domains draw only on common
// words, so every target entity token has probability zero under every
// source word_distribution: the domain-mismatch premise.
inline World build_world(std::uint64_t seed, const WorldParams& params) {
  {
    std::unordered_set<std::string> names;
    for (const auto& n : params.source_domains)
      if (!names.insert(n).second) throw ConfigError("overlapping domain name: " + n);
    for (const auto& n : params.target_domains)
      if (!names.insert(n).second) throw ConfigError("overlapping domain name: " + n);
    if (params.source_domains.empty() || params.target_domains.empty())
      throw ConfigError("need at least one source and one target domain");
  }

  World world;
  WordCodebook& cb = world.codebook;
  cb.frames_per_word = params.frames_per_word;
  cb.frame_dim = params.frame_dim;

  Rng vocab_rng = Rng::substream(seed, "world/vocab");
  std::unordered_set<std::string> used;
  std::vector<std::string> common = worldgen::distinct_words(vocab_rng, params.common_words, 2, used);

  auto add_word = [&](const std::string& w, std::size_t acoustic) {
    cb.index[w] = cb.vocabulary.size();
    cb.vocabulary.push_back(w);
    cb.acoustic_class.push_back(acoustic);
  };

  Rng proto_rng = Rng::substream(seed, "world/prototypes");
  const std::size_t proto_len = params.frames_per_word * params.frame_dim;
  auto fresh_prototype = [&]() {
    std::vector<double> p(proto_len);
    for (auto& v : p) v = proto_rng.normal();
    cb.prototypes.push_back(std::move(p));
    return cb.prototypes.size() - 1;
  };

  // Common words; a configured fraction form acoustically close pairs
  // (center +/- gap * direction) so noise produces a recoverable error floor.
  const std::size_t n_pairs =
      static_cast<std::size_t>(params.confusable_fraction * params.common_words / 2.0);
  for (std::size_t i = 0; i < common.size(); ++i) {
    if (i + 1 < common.size() && i / 2 < n_pairs && i % 2 == 0) {
      std::vector<double> center(proto_len), dir(proto_len);
      for (auto& v : center) v = proto_rng.normal();
      for (auto& v : dir) v = proto_rng.normal();
      double norm = 0.0;
      for (double v : dir) norm += v * v;
      norm = std::sqrt(norm);
      std::vector<double> a(proto_len), b(proto_len);
      for (std::size_t j = 0; j < proto_len; ++j) {
        const double d = params.confusable_gap * dir[j] / norm;
        a[j] = center[j] + d;
        b[j] = center[j] - d;
      }
      cb.prototypes.push_back(std::move(a));
      add_word(common[i], cb.prototypes.size() - 1);
      cb.prototypes.push_back(std::move(b));
      add_word(common[i + 1], cb.prototypes.size() - 1);
      ++i;
    } else {
      add_word(common[i], fresh_prototype());
    }
  }

  // Per-domain entity words (fresh acoustics) and readability variants
  // (alias the base word's acoustics).
  std::map<std::string, std::vector<std::string>> entities;
  for (const auto& dname : params.target_domains) {
    if (dname == "readability") {
      std::vector<std::string> vs;
      for (std::size_t i = 0; i < std::min(params.variant_words, common.size()); ++i) {
        const std::string base = common[common.size() - 1 - i];  // away from pair block
        const std::string v = worldgen::display_variant(base);
        add_word(v, cb.acoustic_class[cb.word_id(base)]);
        vs.push_back(v);
      }
      entities[dname] = vs;
    } else {
      auto ws = worldgen::distinct_words(vocab_rng, params.entities_per_domain, 3, used);
      for (const auto& w : ws) add_word(w, fresh_prototype());
      entities[dname] = ws;
    }
  }

  // Domain text chains.
  auto build_domain = [&](const std::string& name, bool is_source) {
    DomainSpec d;
    d.name = name;
    d.is_source = is_source;
    d.context_prompt = params.prompt_for(name);
    d.sentence_min = params.sentence_min;
    d.sentence_max = params.sentence_max;
    Rng chain_rng = Rng::substream(seed, "world/chain/" + name);
    for (const auto& w : common) d.members.push_back(cb.word_id(w));
    std::vector<std::size_t> entity_members;
    if (!is_source) {
      for (const auto& e : entities[name]) {
        d.entity_lexicon.insert(e);
        entity_members.push_back(cb.word_id(e));
      }
      d.entity_rate = params.entity_rate;
    }
    const std::size_t n_common = d.members.size();
    for (const auto& id : entity_members) d.members.push_back(id);
    const std::size_t n_all = d.members.size();

    // Rows mix a peaked chain over common words with a flat entity slot;
    // entities never follow entities, so row mass r/(1-r) makes the
    // stationary entity fraction equal the configured entity_rate.
    auto make_row = [&](bool from_entity) {
      std::vector<double> row(n_all, 0.0);
      auto base = worldgen::random_distribution(chain_rng, n_common, params.bigram_concentration);
      const double e_mass = (entity_members.empty() || from_entity)
                                ? 0.0
                                : std::min(0.9, d.entity_rate / (1.0 - d.entity_rate));
      for (std::size_t j = 0; j < n_common; ++j) row[j] = (1.0 - e_mass) * base[j];
      for (std::size_t j = 0; j < entity_members.size(); ++j)
        row[n_common + j] = e_mass / static_cast<double>(entity_members.size());
      return row;
    };
    d.start_weights = make_row(false);
    for (std::size_t i = 0; i < n_all; ++i) d.transitions.push_back(make_row(i >= n_common));
    return d;
  };

  for (const auto& n : params.source_domains) world.domains.push_back(build_domain(n, true));
  for (const auto& n : params.target_domains) world.domains.push_back(build_domain(n, false));
  validate_world(cb, world.domains);
  return world;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

inline Utterance synthesize_utterance(const DomainSpec& spec, const WordCodebook& codebook,
                                      double noise_sigma, Rng& rng) {
  if (noise_sigma < 0.0) throw UsageError("synthesize_utterance: noise_sigma must be >= 0");
  Utterance u;
  u.domain = spec.name;
  const std::size_t len =
      spec.sentence_min + rng.below(spec.sentence_max - spec.sentence_min + 1);
  std::size_t member = rng.categorical(spec.start_weights);
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t word = spec.members[member];
    const std::string& surface = codebook.vocabulary[word];
    if (spec.entity_lexicon.count(surface)) u.entities.push_back(u.text.size());
    u.text.push_back(surface);
    const auto& proto = codebook.prototype_of(word);
    for (std::size_t f = 0; f < codebook.frames_per_word; ++f) {
      std::vector<double> frame(codebook.frame_dim);
      for (std::size_t j = 0; j < codebook.frame_dim; ++j) {
        frame[j] = proto[f * codebook.frame_dim + j];
        if (noise_sigma > 0.0) frame[j] += noise_sigma * rng.normal();
      }
      u.frames.push_back(std::move(frame));
    }
    if (t + 1 < len) member = rng.categorical(spec.transitions[member]);
  }
  return u;
}

// ---------------------------------------------------------------------------
// Corpus generation and persistence
// ---------------------------------------------------------------------------

inline nlohmann::json utterance_to_json(const Utterance& u) {
  nlohmann::json j;
  j["id"] = u.id;
  j["domain"] = u.domain;
  j["frames"] = u.frames;
  std::string text;
  for (std::size_t i = 0; i < u.text.size(); ++i) {
    if (i) text += ' ';
    text += u.text[i];
  }
  j["text"] = text;
  j["entities"] = u.entities;
  return j;
}

inline Utterance utterance_from_json(const nlohmann::json& j) {
  Utterance u;
  u.id = j.at("id").get<std::string>();
  u.domain = j.at("domain").get<std::string>();
  u.frames = j.at("frames").get<std::vector<std::vector<double>>>();
  std::string text = j.at("text").get<std::string>();
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) u.text.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) u.text.push_back(cur);
  u.entities = j.at("entities").get<std::vector<std::size_t>>();
  return u;
}

struct SplitSizes {
  std::size_t pretrain = 400;
  std::size_t adapt_per_domain = 300;
  std::size_t test_per_domain = 250;
  std::size_t lm_per_domain = 400;
  std::size_t min_entity_count = 25;
};

// All splits are pure functions of (seed, world). Pretrain text comes from
// source domains only; adapt/test from targets; lm-text is text-only and
// covers every domain so the reward model can know entities the policy has
// never seen.
inline std::map<std::string, Corpus> generate_corpus(const World& world, const SplitSizes& sizes,
                                                     double noise_sigma, std::uint64_t seed) {
  if (sizes.pretrain == 0 || sizes.adapt_per_domain == 0 || sizes.test_per_domain == 0 ||
      sizes.lm_per_domain == 0)
    throw ConfigError("generate_corpus: split sizes must be positive");
  std::map<std::string, Corpus> out;
  std::vector<const DomainSpec*> sources, targets;
  for (const auto& d : world.domains) (d.is_source ? sources : targets).push_back(&d);

  auto fill = [&](Corpus& corpus, const DomainSpec& spec, std::size_t n, bool with_audio,
                  Rng& rng) {
    for (std::size_t i = 0; i < n; ++i) {
      Utterance u = synthesize_utterance(spec, world.codebook, with_audio ? noise_sigma : 0.0, rng);
      if (!with_audio) u.frames.clear();
      u.id = corpus.split + "-" + spec.name + "-" + std::to_string(i);
      corpus.utterances.push_back(std::move(u));
    }
  };

  {
    Corpus c;
    c.split = "pretrain";
    Rng rng = Rng::substream(seed, "corpus/pretrain");
    const std::size_t per = sizes.pretrain / sources.size();
    for (const auto* s : sources) fill(c, *s, per, true, rng);
    out["pretrain"] = std::move(c);
  }
  {
    Corpus c;
    c.split = "adapt";
    Rng rng = Rng::substream(seed, "corpus/adapt");
    for (const auto* t : targets) fill(c, *t, sizes.adapt_per_domain, true, rng);
    rng.shuffle(c.utterances);
    out["adapt"] = std::move(c);
  }
  {
    Corpus c;
    c.split = "test";
    Rng rng = Rng::substream(seed, "corpus/test");
    for (const auto* t : targets) fill(c, *t, sizes.test_per_domain, true, rng);
    out["test"] = std::move(c);
  }
  {
    Corpus c;
    c.split = "lm-text";
    Rng rng = Rng::substream(seed, "corpus/lm-text");
    for (const auto& d : world.domains) fill(c, d, sizes.lm_per_domain, false, rng);
    // top up until every entity word occurs at least min_entity_count times
    std::map<std::string, std::size_t> counts;
    for (const auto& u : c.utterances)
      for (std::size_t idx : u.entities) counts[u.text[idx]]++;
    for (const auto* t : targets) {
      std::size_t extra = 0;
      auto lacking = [&]() {
        for (const auto& e : t->entity_lexicon)
          if (counts[e] < sizes.min_entity_count) return true;
        return false;
      };
      while (lacking()) {
        if (extra > 200 * sizes.min_entity_count * t->entity_lexicon.size())
          throw ConfigError("lm-text top-up did not converge for domain " + t->name);
        Utterance u = synthesize_utterance(*t, world.codebook, 0.0, rng);
        u.frames.clear();
        u.id = "lm-text-" + t->name + "-extra-" + std::to_string(extra++);
        for (std::size_t idx : u.entities) counts[u.text[idx]]++;
        if (!u.entities.empty()) c.utterances.push_back(std::move(u));
      }
    }
    out["lm-text"] = std::move(c);
  }

  for (auto& [name, corpus] : out) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& u : corpus.utterances) h = fnv1a(utterance_to_json(u).dump(), h);
    corpus.checksum = hex64(h);
  }
  return out;
}

inline void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream outfile(path, std::ios::trunc);
  if (!outfile) throw ConfigError("cannot write corpus file: " + path.string());
  for (const auto& u : corpus.utterances) outfile << utterance_to_json(u).dump() << "\n";
}

inline Corpus read_corpus(const std::filesystem::path& path, const std::string& split) {
  std::ifstream in(path);
  if (!in) throw ConfigError("corpus file not found: " + path.string());
  Corpus c;
  c.split = split;
  std::string line;
  std::uint64_t h = 0xcbf29ce484222325ull;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Utterance u = utterance_from_json(nlohmann::json::parse(line));
    h = fnv1a(utterance_to_json(u).dump(), h);
    c.utterances.push_back(std::move(u));
  }
  c.checksum = hex64(h);
  return c;
}

// The unlabeled training view: frames only.
inline std::vector<AdaptUtterance> adapt_view(const Corpus& corpus) {
  std::vector<AdaptUtterance> out;
  out.reserve(corpus.utterances.size());
  for (const auto& u : corpus.utterances) out.push_back({u.id, u.domain, u.frames});
  return out;
}

}  // namespace lmfb
