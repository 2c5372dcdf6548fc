#include "doctest.h"

#include <set>

#include "ccprompt/data.hpp"
#include "ccprompt/error.hpp"
#include "ccprompt/random.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace ccprompt;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("pcg32 reproduces the reference generator's published stream") {
  // pcg32-demo, pcg32_srandom_r(&rng, 42u, 54u)
  Pcg32 rng(42, 54);
  const std::vector<std::uint32_t> expected{0xa15c02b7, 0x7b47f409, 0xba1d3330,
                                            0x83d2f293, 0xbfa4784b, 0xcbed606e};
  for (auto e : expected) CHECK(rng.next() == e);
}

TEST_CASE("splitmix64 reference values") {
  // First outputs of the reference generator seeded with 0, where each call
  // advances the state by the golden gamma before mixing.
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
  CHECK(splitmix64(0x9e3779b97f4a7c15ULL) == 0x6e789e6aa1b965f4ULL);
}

TEST_CASE("bounded draws stay in range and uniform draws in [0, 1)") {
  Pcg32 rng(1, 2);
  std::vector<int> hist(7, 0);
  for (int k = 0; k < 7000; ++k) ++hist[rng.bounded(7)];
  for (int h : hist) CHECK(h > 800);
  for (int k = 0; k < 1000; ++k) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("labels file: order, negative label, errors") {
  const LabelSet l = parse_labels("# comment\nper:title\nno_relation\norg:founded\n");
  CHECK(l.names == std::vector<std::string>{"per:title", "no_relation", "org:founded"});
  CHECK(l.negative == Index{1});
  const LabelSet m = parse_labels("a\nnegative: other\n");
  CHECK(m.negative == Index{1});
  CHECK(m.names[1] == "other");
  CHECK_FALSE(parse_labels("a\nb\n").negative.has_value());
  CHECK(code_of([] { parse_labels("a\na\n"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_labels("a\n"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_labels("negative:a\nnegative:b\n"); }) == ErrorCode::ParseError);
}

TEST_CASE("jsonl parsing and errors carry the line number") {
  const LabelSet labels = parse_labels("A\nB\n");
  const auto insts = parse_jsonl(
      R"({"id":"1","tokens":["x","y"],"label":"A"}
{"id":"2","tokens":["z"],"label":"B","spans":[[0,1,"head"]]}
)",
      labels, "mem");
  REQUIRE(insts.size() == 2);
  CHECK(insts[1].label == 1);
  CHECK(insts[1].spans[0].role == "head");

  try {
    parse_jsonl("{\"id\":\"1\",\"tokens\":[\"x\"],\"label\":\"A\"}\n{broken\n", labels, "mem");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("mem:2") != std::string::npos);
  }
  CHECK(code_of([&] { parse_jsonl(R"({"id":"1","tokens":["x"],"label":"C"})", labels, "m"); }) ==
        ErrorCode::UnknownLabel);
  CHECK(code_of([&] {
          parse_jsonl(R"({"id":"1","tokens":["x"],"label":"A","spans":[[0,2,"h"]]})", labels, "m");
        }) == ErrorCode::SpanOutOfBounds);
  CHECK(code_of([&] {
          parse_jsonl("{\"id\":\"1\",\"tokens\":[\"x\"],\"label\":\"A\"}\n"
                      "{\"id\":\"1\",\"tokens\":[\"x\"],\"label\":\"A\"}\n",
                      labels, "m");
        }) == ErrorCode::ParseError);
}

TEST_CASE("property: load, serialize, load is the identity") {
  const LabelSet labels = fixtures::class_labels(4);
  for (unsigned seed = 0; seed < 10; ++seed) {
    auto insts = fixtures::synthetic(4, 5, seed);
    insts[static_cast<std::size_t>(seed)].spans.push_back({0, 2, "e1"});
    CHECK(parse_jsonl(to_jsonl(insts, labels), labels, "rt") == insts);
  }
}

TEST_CASE("episodes: count law, determinism, no duplicates, disjoint dev") {
  const auto split = fixtures::synthetic(3, 10, 1);
  const auto ep = sample_episode(split, 3, 2, 13, "toy");
  CHECK(ep.train_ids.size() == 6);
  CHECK(ep.dev_ids.size() == 6);
  CHECK(ep.warnings.empty());
  const auto again = sample_episode(split, 3, 2, 13, "toy");
  CHECK(again.train_ids == ep.train_ids);
  CHECK(again.dev_ids == ep.dev_ids);
  CHECK(sample_episode(split, 3, 2, 21, "toy").train_ids != ep.train_ids);

  for (Index k : {1, 2, 4}) {
    const auto e = sample_episode(split, 3, k, 42, "toy");
    std::set<std::string> train(e.train_ids.begin(), e.train_ids.end());
    CHECK(train.size() == e.train_ids.size());
    for (const auto& id : e.dev_ids) CHECK(train.count(id) == 0);
    std::vector<int> per_class(3, 0);
    for (const auto& inst : select_by_ids(split, e.train_ids)) ++per_class[static_cast<std::size_t>(inst.label)];
    for (int n : per_class) CHECK(n == k);
  }
}

TEST_CASE("episode ids are pinned for a fixed split and seed") {
  // Frozen once; a change here means episodes differ from earlier runs.
  const auto split = fixtures::synthetic(2, 5, 3);
  const auto ep = sample_episode(split, 2, 2, 13, "toy");
  CHECK(ep.train_ids == std::vector<std::string>{"x-0-3", "x-0-4", "x-1-2", "x-1-4"});
  CHECK(ep.dev_ids == std::vector<std::string>{"x-0-2", "x-0-1", "x-1-0", "x-1-1"});
}

TEST_CASE("five default seeds, K=1, ten classes: ten ids each; the seed mean matches a manual average") {
  const auto split = fixtures::synthetic(10, 4, 6);
  std::vector<double> per_seed;
  for (std::uint64_t seed : kDefaultEpisodeSeeds) {
    const auto ep = sample_episode(split, 10, 1, seed, "toy");
    CHECK(ep.train_ids.size() == 10);
    // Any per-episode number will do; the share of ids ending in "-0".
    double zeros = 0;
    for (const auto& id : ep.train_ids) zeros += id.back() == '0';
    per_seed.push_back(zeros / 10.0);
  }
  double manual = 0.0;
  for (double v : per_seed) manual += v;
  manual /= 5.0;
  const SeedAggregate a = aggregate_over_seeds(per_seed);
  CHECK(a.runs == 5);
  CHECK(std::abs(a.mean - manual) <= 1e-12);
}

TEST_CASE("seed aggregate: sample deviation, single run, empty input") {
  const SeedAggregate a = aggregate_over_seeds({1.0, 2.0, 3.0, 4.0});
  CHECK(a.mean == 2.5);
  CHECK(a.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(aggregate_over_seeds({0.7}).stddev == 0.0);
  CHECK(code_of([] { aggregate_over_seeds({}); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("shortfall and empty classes warn instead of failing") {
  auto split = fixtures::synthetic(3, 3, 2);
  split.erase(std::remove_if(split.begin(), split.end(), [](const auto& i) { return i.label == 2; }),
              split.end());
  const auto ep = sample_episode(split, 3, 4, 13, "toy");
  CHECK(ep.train_ids.size() == 6);
  CHECK(ep.dev_ids.empty());
  bool empty_class = false, shortfall = false;
  for (const auto& w : ep.warnings) {
    empty_class |= w.rfind("EmptyClass", 0) == 0;
    shortfall |= w.rfind("shortfall", 0) == 0;
  }
  CHECK(empty_class);
  CHECK(shortfall);
  CHECK(code_of([&] { sample_episode(split, 3, 0, 13, "toy"); }) == ErrorCode::ConfigError);
}

TEST_CASE("episode manifest round trip") {
  const auto split = fixtures::synthetic(3, 6, 4);
  const auto ep = sample_episode(split, 3, 2, 87, "toy");
  const auto back = episode_from_json(episode_to_json(ep));
  CHECK(back.train_ids == ep.train_ids);
  CHECK(back.dev_ids == ep.dev_ids);
  CHECK(back.k == 2);
  CHECK(back.seed == 87);
  CHECK(back.split_size == 18);
  CHECK(code_of([&] { select_by_ids(split, {"missing"}); }) == ErrorCode::DataError);
}

TEST_CASE("micro-F1 examples") {
  CHECK(micro_f1({0, 1, 2}, {0, 1, 2}, std::nullopt) == 1.0);
  CHECK(micro_f1({0, 0, 0}, {1, 2, 1}, Index{0}) == 0.0);
  CHECK(micro_f1({1, 2, 2, 0}, {1, 1, 2, 0}, Index{0}) == doctest::Approx(2.0 / 3.0));
  CHECK(code_of([] { micro_f1({1}, {1, 2}, std::nullopt); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("property: micro-F1 matches the TP/FP/FN tally and equals accuracy without a negative") {
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 300; ++trial) {
    const long r = oracle::uniform_int(gen, 2, 6);
    const long n = oracle::uniform_int(gen, 1, 40);
    std::vector<Index> p, g;
    std::vector<long> pl, gl;
    for (long k = 0; k < n; ++k) {
      p.push_back(oracle::uniform_int(gen, 0, r - 1));
      g.push_back(oracle::uniform_int(gen, 0, r - 1));
      pl.push_back(p.back());
      gl.push_back(g.back());
    }
    const long neg = oracle::uniform_int(gen, 0, r - 1);
    CHECK(micro_f1(p, g, Index{neg}) == doctest::Approx(oracle::micro_f1(pl, gl, neg)).epsilon(1e-12));
    CHECK(micro_f1(p, g, std::nullopt) == doctest::Approx(accuracy(p, g)).epsilon(1e-12));
  }
}

TEST_CASE("accuracy examples") {
  CHECK(accuracy({1, 2}, {1, 2}) == 1.0);
  CHECK(accuracy({0, 0}, {1, 2}) == 0.0);
  CHECK(accuracy({1, 0}, {1, 2}) == 0.5);
}
