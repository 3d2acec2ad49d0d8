#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "albumcrf/corpus.hpp"
#include "albumcrf/error.hpp"
#include "albumcrf/rng.hpp"
#include "albumcrf/util.hpp"

using namespace albumcrf;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig cfg;
  cfg.n_identities = 12;
  cfg.instances_per_identity = 8;
  cfg.events_per_identity = 4;
  cfg.albums_per_event = 2;
  cfg.head_dim = 8;
  cfg.context_dim = 8;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generate_corpus counts follow config") {
  GeneratorConfig cfg;
  cfg.n_identities = 100;
  cfg.instances_per_identity = 20;
  cfg.head_dim = 8;
  cfg.context_dim = 8;
  const Corpus corpus = generate_corpus(cfg, 7);
  CHECK(corpus.instances.size() == 2000);
  for (const auto& [identity, members] : corpus.by_identity()) {
    CHECK(members.size() == 20);
  }
  CHECK(corpus.identities().size() == 100);
}

TEST_CASE("generate_corpus is deterministic") {
  const GeneratorConfig cfg = small_config();
  const Corpus a = generate_corpus(cfg, 99);
  const Corpus b = generate_corpus(cfg, 99);
  CHECK(corpus_to_jsonl(a) == corpus_to_jsonl(b));
  const Corpus c = generate_corpus(cfg, 100);
  CHECK(corpus_to_jsonl(a) != corpus_to_jsonl(c));
}

TEST_CASE("generate_corpus rejects invalid configs") {
  GeneratorConfig cfg = small_config();
  cfg.n_identities = 0;
  CHECK_THROWS_AS(generate_corpus(cfg, 1), ConfigError);
  cfg = small_config();
  cfg.noise_sigma = 0.0;
  CHECK_THROWS_AS(generate_corpus(cfg, 1), ConfigError);
}

TEST_CASE("context features carry event structure") {
  GeneratorConfig cfg = small_config();
  cfg.event_signal_weight = 1.0;
  const Corpus corpus = generate_corpus(cfg, 5);

  // Oracle: mean cosine similarity over same-identity pairs, split by
  // whether the two instances share an event.
  double same_event_sum = 0, diff_event_sum = 0;
  int same_event_n = 0, diff_event_n = 0;
  for (const auto& [identity, members] : corpus.by_identity()) {
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        const Instance& x = corpus.instances[members[a]];
        const Instance& y = corpus.instances[members[b]];
        const double cs = cosine_similarity(x.context_features, y.context_features);
        if (x.event_id == y.event_id) {
          same_event_sum += cs;
          ++same_event_n;
        } else {
          diff_event_sum += cs;
          ++diff_event_n;
        }
      }
    }
  }
  REQUIRE(same_event_n > 0);
  REQUIRE(diff_event_n > 0);
  CHECK(same_event_sum / same_event_n > diff_event_sum / diff_event_n);
}

TEST_CASE("corpus save/load round trip") {
  const Corpus corpus = generate_corpus(small_config(), 3);
  const std::string path = temp_path("corpus_roundtrip.jsonl");
  save_corpus(corpus, path);
  const Corpus loaded = load_corpus(path);
  CHECK(corpus_to_jsonl(loaded) == corpus_to_jsonl(corpus));
  CHECK(loaded.head_dim == corpus.head_dim);
  CHECK(loaded.provenance.kind == Provenance::Kind::Ingested);
  std::remove(path.c_str());
}

TEST_CASE("corpus gzip round trip") {
  const Corpus corpus = generate_corpus(small_config(), 3);
  const std::string path = temp_path("corpus_roundtrip.jsonl.gz");
  save_corpus(corpus, path);
  const Corpus loaded = load_corpus(path);
  CHECK(corpus_to_jsonl(loaded) == corpus_to_jsonl(corpus));
  std::remove(path.c_str());
}

TEST_CASE("load_corpus reports malformed input with line numbers") {
  const std::string path = temp_path("corpus_bad.jsonl");

  SUBCASE("ragged feature dimension") {
    write_text_file(path,
                    R"({"instance_id":"a","photo_id":"p1","album_id":"al1","event_id":"e1","identity":"x","head_features":[1,2,3,4,5,6,7,8],"context_features":[0,0]})"
                    "\n"
                    R"({"instance_id":"b","photo_id":"p2","album_id":"al1","event_id":"e1","identity":"x","head_features":[1,2,3,4],"context_features":[0,0]})"
                    "\n");
    try {
      load_corpus(path);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }

  SUBCASE("duplicate instance_id") {
    write_text_file(path,
                    R"({"instance_id":"a","photo_id":"p1","album_id":"al1","event_id":"e1","identity":"x","head_features":[1],"context_features":[2]})"
                    "\n"
                    R"({"instance_id":"a","photo_id":"p2","album_id":"al1","event_id":"e1","identity":"x","head_features":[1],"context_features":[2]})"
                    "\n");
    try {
      load_corpus(path);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("line 2") != std::string::npos);
      CHECK(msg.find("duplicate") != std::string::npos);
    }
  }

  SUBCASE("missing field") {
    write_text_file(path,
                    R"({"instance_id":"a","photo_id":"p1","album_id":"al1","event_id":"e1","identity":"x","head_features":[1]})"
                    "\n");
    try {
      load_corpus(path);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("context_features") != std::string::npos);
    }
  }

  SUBCASE("empty file") {
    write_text_file(path, "");
    try {
      load_corpus(path);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("no instances") != std::string::npos);
    }
  }

  std::remove(path.c_str());
}

TEST_CASE("make_splits halves every identity") {
  const Corpus corpus = generate_corpus(small_config(), 11);
  const SplitAssignment splits = make_splits(corpus, DomainMode::WithinEvents, 2);
  for (const auto& [identity, members] : corpus.by_identity()) {
    int c0 = 0, c1 = 0;
    for (int idx : members) {
      (splits.side(corpus.instances[idx].instance_id) == 0 ? c0 : c1) += 1;
    }
    CHECK(c0 == 4);  // 8 instances -> 4/4
    CHECK(c1 == 4);
  }
}

TEST_CASE("make_splits rounds odd counts into split0") {
  GeneratorConfig cfg = small_config();
  cfg.n_identities = 3;
  cfg.instances_per_identity = 5;
  const Corpus corpus = generate_corpus(cfg, 13);
  const SplitAssignment splits = make_splits(corpus, DomainMode::WithinEvents, 2);
  for (const auto& [identity, members] : corpus.by_identity()) {
    int c0 = 0, c1 = 0;
    for (int idx : members) {
      (splits.side(corpus.instances[idx].instance_id) == 0 ? c0 : c1) += 1;
    }
    CHECK(c0 == 3);
    CHECK(c1 == 2);
  }
}

TEST_CASE("across-events splits keep event sets disjoint per identity") {
  const Corpus corpus = generate_corpus(small_config(), 17);
  const SplitAssignment splits = make_splits(corpus, DomainMode::AcrossEvents, 5);
  for (const auto& [identity, members] : corpus.by_identity()) {
    std::set<std::string> events0, events1;
    int c0 = 0, c1 = 0;
    for (int idx : members) {
      const Instance& inst = corpus.instances[idx];
      if (splits.side(inst.instance_id) == 0) {
        events0.insert(inst.event_id);
        ++c0;
      } else {
        events1.insert(inst.event_id);
        ++c1;
      }
    }
    for (const auto& e : events0) CHECK(events1.count(e) == 0);
    CHECK(std::abs(c0 - c1) <= 1);  // 8 instances over 4 equal events
  }
}

TEST_CASE("across-events split rejects single-event identities") {
  GeneratorConfig cfg = small_config();
  cfg.events_per_identity = 1;
  const Corpus corpus = generate_corpus(cfg, 19);
  try {
    make_splits(corpus, DomainMode::AcrossEvents, 1);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("id0000") != std::string::npos);
  }
}

TEST_CASE("sample_tags tags all of split0 at tau = mean size") {
  const Corpus corpus = generate_corpus(small_config(), 23);
  const SplitAssignment splits = make_splits(corpus, DomainMode::WithinEvents, 3);
  const TagSet tags = sample_tags(corpus, splits, 4.0, 9);  // split0 has 4/identity
  int split0_count = 0;
  for (const Instance& inst : corpus.instances) {
    if (splits.side(inst.instance_id) == 0) {
      ++split0_count;
      CHECK(tags.contains(inst.instance_id));
    } else {
      CHECK(!tags.contains(inst.instance_id));
    }
  }
  CHECK(static_cast<int>(tags.tagged.size()) == split0_count);
}

TEST_CASE("sample_tags realized count stays near tau") {
  GeneratorConfig cfg = small_config();
  cfg.n_identities = 600;
  cfg.instances_per_identity = 20;  // split0: 10 per identity
  cfg.head_dim = 2;
  cfg.context_dim = 2;
  const Corpus corpus = generate_corpus(cfg, 29);
  const SplitAssignment splits = make_splits(corpus, DomainMode::WithinEvents, 4);
  const TagSet tags = sample_tags(corpus, splits, 1.25, 31);
  // Expectation 750 over 600 identities; binomial-style bound.
  CHECK(tags.tagged.size() >= 700);
  CHECK(tags.tagged.size() <= 800);
  // TagSet invariant: realized mean within 10% of tau.
  const double realized = static_cast<double>(tags.tagged.size()) / 600.0;
  CHECK(realized > 1.25 * 0.9);
  CHECK(realized < 1.25 * 1.1);
}

TEST_CASE("sample_tags tags at least one instance per identity") {
  GeneratorConfig cfg = small_config();
  cfg.instances_per_identity = 4;  // split0: 2 per identity
  const Corpus corpus = generate_corpus(cfg, 37);
  const SplitAssignment splits = make_splits(corpus, DomainMode::WithinEvents, 5);
  const TagSet tags = sample_tags(corpus, splits, 1.25, 41);
  std::map<std::string, int> per_identity;
  for (const Instance& inst : corpus.instances) {
    if (tags.contains(inst.instance_id)) ++per_identity[inst.identity];
  }
  for (const auto& identity : corpus.identities()) {
    CHECK(per_identity[identity] >= 1);
  }
}

TEST_CASE("sample_tags rejects bad tau") {
  const Corpus corpus = generate_corpus(small_config(), 43);
  const SplitAssignment splits = make_splits(corpus, DomainMode::WithinEvents, 6);
  CHECK_THROWS_AS(sample_tags(corpus, splits, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(sample_tags(corpus, splits, -1.0, 1), ConfigError);
  CHECK_THROWS_AS(sample_tags(corpus, splits, 100.0, 1), ConfigError);
}

TEST_CASE("sample_tags is deterministic") {
  const Corpus corpus = generate_corpus(small_config(), 47);
  const SplitAssignment splits = make_splits(corpus, DomainMode::WithinEvents, 7);
  const TagSet a = sample_tags(corpus, splits, 2.0, 11);
  const TagSet b = sample_tags(corpus, splits, 2.0, 11);
  CHECK(a.tagged == b.tagged);
}

TEST_CASE("apply_obfuscation fill-ins and identity cases") {
  const std::vector<double> x = {0.3, -0.7, 2.1, 0.0};
  BlurParams params;
  params.corpus_head_mean = {0.1, 0.1, 0.1, 0.1};

  const auto black = apply_obfuscation(x, {ObfuscationType::Black, 0.0}, params, 1);
  for (double v : black) CHECK(v == -1.0);
  const std::vector<double> other = {9.0, 9.0, 9.0, 9.0};
  CHECK(apply_obfuscation(other, {ObfuscationType::Black, 0.0}, params, 2) == black);

  const auto white = apply_obfuscation(x, {ObfuscationType::White, 0.0}, params, 1);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(black[i] != white[i]);

  CHECK(apply_obfuscation(x, {ObfuscationType::Blur, 0.0}, params, 3) == x);
  CHECK(apply_obfuscation(x, {ObfuscationType::Visible, 0.0}, params, 4) == x);

  const auto blurred = apply_obfuscation(x, {ObfuscationType::Blur, 0.6}, params, 5);
  CHECK(blurred == apply_obfuscation(x, {ObfuscationType::Blur, 0.6}, params, 5));
  CHECK(blurred != apply_obfuscation(x, {ObfuscationType::Blur, 0.6}, params, 6));

  CHECK_THROWS_AS(apply_obfuscation(x, {ObfuscationType::Blur, 1.5}, params, 1), ConfigError);
  CHECK_THROWS_AS(apply_obfuscation(x, {ObfuscationType::Blur, -0.1}, params, 1), ConfigError);
}

TEST_CASE("plan_obfuscation realizes each scenario") {
  const Corpus corpus = generate_corpus(small_config(), 53);
  const SplitAssignment splits = make_splits(corpus, DomainMode::WithinEvents, 8);
  const TagSet tags = sample_tags(corpus, splits, 4.0, 12);
  const Obfuscation black{ObfuscationType::Black, 0.0};

  auto count_obfuscated = [&](const ObfuscationPlan& plan) {
    int n = 0;
    for (const Instance& inst : corpus.instances) {
      if (plan.obfuscated(inst.instance_id)) ++n;
    }
    return n;
  };

  SUBCASE("S0 and S1 obfuscate nothing") {
    const Scenario s0{ScenarioKind::S0, 10.0};
    const Scenario s1{ScenarioKind::S1, 10.0};
    CHECK(count_obfuscated(plan_obfuscation(s0, corpus, splits, tags, black)) == 0);
    CHECK(count_obfuscated(plan_obfuscation(s1, corpus, splits, tags, black)) == 0);
  }

  SUBCASE("S2 obfuscates exactly the query") {
    std::string query;
    for (const Instance& inst : corpus.instances) {
      if (splits.side(inst.instance_id) == 1) {
        query = inst.instance_id;
        break;
      }
    }
    const ObfuscationPlan plan =
        plan_obfuscation({ScenarioKind::S2, 10.0}, corpus, splits, tags, black, query);
    CHECK(count_obfuscated(plan) == 1);
    CHECK(plan.obfuscated(query));
  }

  SUBCASE("S2 errors") {
    CHECK_THROWS_AS(plan_obfuscation({ScenarioKind::S2, 10.0}, corpus, splits, tags, black),
                    ConfigError);
    std::string tagged_id = *tags.tagged.begin();
    CHECK_THROWS_AS(
        plan_obfuscation({ScenarioKind::S2, 10.0}, corpus, splits, tags, black, tagged_id),
        ConfigError);
  }

  SUBCASE("S3 obfuscates everything") {
    const ObfuscationPlan plan =
        plan_obfuscation({ScenarioKind::S3, 10.0}, corpus, splits, tags, black);
    CHECK(count_obfuscated(plan) == static_cast<int>(corpus.instances.size()));
  }

  SUBCASE("S3' and S3'' partition along the split boundary") {
    const ObfuscationPlan p3p =
        plan_obfuscation({ScenarioKind::S3Prime, 10.0}, corpus, splits, tags, black);
    const ObfuscationPlan p3pp =
        plan_obfuscation({ScenarioKind::S3DoublePrime, 10.0}, corpus, splits, tags, black);
    for (const Instance& inst : corpus.instances) {
      const bool in_split0 = splits.side(inst.instance_id) == 0;
      CHECK(p3p.obfuscated(inst.instance_id) == in_split0);
      CHECK(p3pp.obfuscated(inst.instance_id) == !in_split0);
    }
  }
}

TEST_CASE("obfuscation never touches context features") {
  const Corpus corpus = generate_corpus(small_config(), 59);
  const SplitAssignment splits = make_splits(corpus, DomainMode::WithinEvents, 9);
  const TagSet tags = sample_tags(corpus, splits, 4.0, 13);
  const ObfuscationPlan plan = plan_obfuscation({ScenarioKind::S3, 10.0}, corpus, splits,
                                                tags, {ObfuscationType::Blur, 0.6});
  BlurParams params;
  params.corpus_head_mean = corpus.head_feature_mean();
  for (const Instance& inst : corpus.instances) {
    Instance copy = inst;
    copy.head_features =
        apply_obfuscation(inst.head_features, plan.of(inst.instance_id), params, 77);
    CHECK(copy.context_features == inst.context_features);
  }
}
