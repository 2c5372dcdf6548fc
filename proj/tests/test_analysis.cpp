#include "doctest.h"

#include "ccprompt/analysis.hpp"
#include "ccprompt/error.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace ccprompt;

namespace {

PredictionRecord record(const std::string& id, Index gold, Index pred,
                        std::vector<SelectedSlot> sel) {
  return {id, gold, pred, std::move(sel)};
}

ReportInput fixed_report() {
  ReportInput in;
  in.metadata = {{"config_hash", "0123456789abcdef"}, {"split", "test"}, {"accuracy", "0.75"}};
  in.label_names = {"sports", "politics", "science|tech"};
  in.table = counterfact_frequency(
      {record("a", 0, 0, {{0, 1, 2.0}, {2, 0, 1.0}}), record("b", 0, 0, {{0, 2, 1.5}}),
       record("c", 0, 0, {{0, 1, 0.9}}), record("d", 2, 2, {{1, 0, 3.0}, {2, 1, 0.5}})},
      true);
  MatrixXd states(4, 2);
  states << 1, 0,
            0, 1,
            1, 1,
            -1, 0.5;
  VectorXd dir(2);
  dir << 1, 0.2;
  in.cases.push_back({"a", "gold sports vs politics",
                      highlight_tokens({"the", "<goal>", "&", "team"}, states, dir)});
  return in;
}

}  // namespace

TEST_CASE("a single instance maps its fact to its counterfact") {
  const auto t = counterfact_frequency({record("x", 0, 0, {{0, 1, 1.0}})}, false);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].fact == 0);
  CHECK(t.rows[0].counterfact == 1);
  CHECK(t.rows[0].count == 1);
  CHECK(t.contributing == 1);
}

TEST_CASE("the first selected slot with the gold fact is the one counted") {
  const auto t = counterfact_frequency({record("x", 1, 1, {{0, 2, 5.0}, {1, 2, 4.0}, {1, 0, 3.0}})}, false);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].fact == 1);
  CHECK(t.rows[0].counterfact == 2);
}

TEST_CASE("correct_only over all-wrong predictions gives an empty table") {
  const auto t = counterfact_frequency({record("x", 0, 1, {{0, 1, 1.0}}), record("y", 1, 0, {{1, 0, 1.0}})}, true);
  CHECK(t.rows.empty());
  CHECK(t.contributing == 0);
}

TEST_CASE("empty selection is an error") {
  try {
    counterfact_frequency({record("x", 0, 0, {})}, false);
    FAIL("expected EmptySelection");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySelection);
  }
}

TEST_CASE("property: forced selections reproduce a manual tally, counts sum to contributors") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Index r = oracle::uniform_int(gen, 2, 5);
    std::vector<PredictionRecord> recs;
    std::map<Index, std::map<Index, Index>> manual;
    Index contributing = 0;
    const long n = oracle::uniform_int(gen, 1, 30);
    for (long k = 0; k < n; ++k) {
      const Index gold = oracle::uniform_int(gen, 0, r - 1);
      const Index pred = oracle::uniform_int(gen, 0, 1) ? gold : oracle::uniform_int(gen, 0, r - 1);
      Index cf = oracle::uniform_int(gen, 0, r - 2);
      if (cf >= gold) ++cf;
      std::vector<SelectedSlot> sel{{(gold + 1) % r, gold, 9.0}, {gold, cf, 1.0}};
      recs.push_back(record(std::to_string(k), gold, pred, sel));
      if (pred == gold) {
        ++manual[gold][cf];
        ++contributing;
      }
    }
    const auto t = counterfact_frequency(recs, true);
    CHECK(t.contributing == contributing);
    Index total = 0;
    REQUIRE(t.rows.size() == manual.size());
    for (const auto& row : t.rows) {
      CHECK(row.tally == manual[row.fact]);
      Index best = -1, best_count = 0;
      for (const auto& [cf, c] : manual[row.fact])
        if (c > best_count) best = cf, best_count = c;
      CHECK(row.counterfact == best);
      CHECK(row.count == best_count);
      for (const auto& [cf, c] : row.tally) total += c;
    }
    CHECK(total == contributing);
  }
}

TEST_CASE("highlight: equal scores highlight nothing") {
  const MatrixXd states = MatrixXd::Ones(4, 3);
  const auto h = highlight_tokens({"a", "b", "c", "d"}, states, VectorXd::Ones(3));
  for (const auto& t : h) CHECK_FALSE(t.highlighted);
}

TEST_CASE("highlight: one strong token among zeros") {
  // Scores 1, 0 x 9 scaled: only token 0 is aligned; the rest are orthogonal.
  MatrixXd states = MatrixXd::Zero(10, 2);
  states(0, 0) = 10;
  for (Index k = 1; k < 10; ++k) states(k, 1) = 1;
  std::vector<std::string> toks(10, "w");
  const auto h = highlight_tokens(toks, states, (VectorXd(2) << 1, 0).finished());
  CHECK(h[0].highlighted);
  for (Index k = 1; k < 10; ++k) CHECK_FALSE(h[static_cast<std::size_t>(k)].highlighted);
}

TEST_CASE("property: highlights match the two-pass oracle and are scale-invariant") {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 300; ++trial) {
    const Index l = oracle::uniform_int(gen, 1, 12), d = oracle::uniform_int(gen, 1, 8);
    const MatrixXd states = oracle::random_matrix(gen, l, d);
    const VectorXd dir = oracle::random_matrix(gen, d, 1);
    std::vector<std::string> toks(static_cast<std::size_t>(l), "t");
    const auto h = highlight_tokens(toks, states, dir);
    const auto expected = oracle::highlight(oracle::to_mat(states), oracle::to_vec(dir), 1.02);
    for (std::size_t k = 0; k < h.size(); ++k) CHECK(h[k].highlighted == expected[k]);
    const auto scaled = highlight_tokens(toks, states, VectorXd(3.5 * dir));
    for (std::size_t k = 0; k < h.size(); ++k) CHECK(scaled[k].score == doctest::Approx(h[k].score));
  }
}

TEST_CASE("highlight errors") {
  try {
    highlight_tokens({"a"}, MatrixXd::Ones(1, 2), VectorXd::Zero(2));
    FAIL("expected DegenerateDirection");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateDirection);
  }
  CHECK_THROWS_AS(highlight_tokens({"a", "b"}, MatrixXd::Ones(1, 2), VectorXd::Ones(2)), Error);
}

TEST_CASE("records round-trip") {
  const std::vector<PredictionRecord> recs{record("a", 1, 2, {{1, 0, 0.5}, {2, 1, -1.25}})};
  const auto back = records_from_jsonl(records_to_jsonl(recs));
  REQUIRE(back.size() == 1);
  CHECK(back[0].id == "a");
  CHECK(back[0].selection[1].counterfact == 1);
  CHECK(back[0].selection[1].score == -1.25);
}

TEST_CASE("report: empty inputs render every section") {
  const std::string md = render_report({}, ReportFormat::Markdown);
  CHECK(md.find("_no metadata_") != std::string::npos);
  CHECK(md.find("_no contributing instances_") != std::string::npos);
  CHECK(md.find("_no cases_") != std::string::npos);
  const std::string html = render_report({}, ReportFormat::Html);
  CHECK(html.find("</html>") != std::string::npos);
}

TEST_CASE("report: deterministic and equal to the frozen golden files") {
  const ReportInput in = fixed_report();
  const std::string md = render_report(in, ReportFormat::Markdown);
  CHECK(md == render_report(in, ReportFormat::Markdown));
  const std::string html = render_report(in, ReportFormat::Html);
  CHECK(md == fixtures::read(std::string(CCPROMPT_GOLDEN_DIR) + "/report.md"));
  CHECK(html == fixtures::read(std::string(CCPROMPT_GOLDEN_DIR) + "/report.html"));
}
