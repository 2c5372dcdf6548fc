#include "doctest.h"

#include <sstream>

#include "ccprompt/error.hpp"
#include "ccprompt/trainer.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace ccprompt;

namespace {

struct Setup {
  std::vector<LabeledInstance> data;
  Vocabulary vocab;
  std::unique_ptr<CCPromptModel> model;
  std::vector<Example> examples;
};

Setup make_setup(int classes, int per_class, ModelConfig cfg, std::uint64_t seed = 1) {
  Setup s;
  s.data = fixtures::synthetic(classes, per_class, 17);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& d : s.data) corpus.push_back(d.tokens);
  s.vocab = Vocabulary::build(corpus, 100);
  std::vector<std::string> labels;
  for (int c = 0; c < classes; ++c) labels.push_back("class" + std::to_string(c));
  s.model = std::make_unique<CCPromptModel>(cfg, labels, s.vocab, seed);
  for (const auto& d : s.data) s.examples.push_back({d.id, s.model->tokenize(d.tokens), d.label});
  return s;
}

}  // namespace

TEST_CASE("siamese loss value follows the symmetric negative-cosine form") {
  std::mt19937_64 gen(1);
  const VectorXd z = oracle::random_matrix(gen, 3, 1), zp = oracle::random_matrix(gen, 3, 1);
  const Mlp f = Mlp::identity(3);
  const double expected = 0.5 * oracle::negative_cosine(oracle::to_vec(z), oracle::to_vec(zp)) +
                          0.5 * oracle::negative_cosine(oracle::to_vec(zp), oracle::to_vec(z));
  CHECK(siamese_loss(z, zp, f) == doctest::Approx(expected));
  CHECK(siamese_loss(z, z, f) == doctest::Approx(-1.0));
}

TEST_CASE("siamese graph: the target side carries exactly zero gradient") {
  std::mt19937_64 gen(2);
  Pcg32 rng(3);
  const Mlp f(3, 4, 3, rng);
  const ag::Var z = ag::parameter(oracle::random_matrix(gen, 1, 3));
  const ag::Var zp = ag::parameter(oracle::random_matrix(gen, 1, 3));
  // Only the first half: z+ appears solely as a stop-gradient target.
  ag::backward(ag::negative_cosine(f.forward(z), ag::stop_gradient(zp)));
  CHECK(zp.grad().size() == 0);
  CHECK(z.grad().size() != 0);

  // Full loss: each branch's gradient is the online path only, so it equals
  // the derivative with the targets frozen.
  ag::Var a = z, b = zp;
  a.zero_grad();
  b.zero_grad();
  ag::backward(siamese_loss(z, zp, f));
  const StopTargets frozen{z.value(), zp.value()};
  auto fa = [&](const MatrixXd& x) {
    return siamese_loss(ag::constant(x), ag::constant(zp.value()), f, &frozen).scalar();
  };
  auto fb = [&](const MatrixXd& x) {
    return siamese_loss(ag::constant(z.value()), ag::constant(x), f, &frozen).scalar();
  };
  CHECK(oracle::relative_error(z.grad(), oracle::finite_difference(fa, z.value())) < 1e-7);
  CHECK(oracle::relative_error(zp.grad(), oracle::finite_difference(fb, zp.value())) < 1e-7);
}

TEST_CASE("AdamW step against the closed form, and parameters without gradient stay put") {
  const ag::Var x = ag::parameter(MatrixXd::Constant(1, 1, 1.0));
  const ag::Var idle = ag::parameter(MatrixXd::Constant(1, 1, 5.0));
  AdamW opt({{"x", x}, {"idle", idle}}, 0.1, 0.01);
  double ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    opt.zero_grad();
    ag::backward(ag::mul(x, x));  // gradient 2x
    const double g = 2.0 * ref;
    ref *= 1.0 - 0.1 * 0.01;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ref -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    opt.step();
    CHECK(x.value()(0, 0) == doctest::Approx(ref).epsilon(1e-14));
  }
  CHECK(idle.value()(0, 0) == 5.0);
}

TEST_CASE("global-norm clipping") {
  const ag::Var a = ag::parameter(MatrixXd::Zero(1, 2));
  AdamW opt({{"a", a}}, 0.1, 0.0);
  ag::Var g = a;
  g.mutable_grad() = (MatrixXd(1, 2) << 3, 4).finished();
  CHECK(opt.clip_grad_norm(1.0) == doctest::Approx(5.0));
  CHECK(a.grad().norm() == doctest::Approx(1.0));
}

TEST_CASE("forward: selection size, prompt pieces and ablation switches") {
  auto s = make_setup(3, 4, gradcheck::tiny_config());
  CCPromptModel& model = *s.model;
  const auto& ids = s.examples[0].ids;

  const auto full = model.forward(ids, {}, 0);
  CHECK(full.selection.m() == 2);
  CHECK(full.attributes.rows() == 6);
  CHECK(full.z_plus.valid());
  const auto terms = model.losses(full, 0, {});
  CHECK(terms.l_s.valid());
  CHECK(terms.l_con.valid());

  ForwardOptions one;
  one.m = 1;
  CHECK(model.forward(ids, one).selection.m() == 1);
  CHECK_FALSE(model.forward(ids, {}).z_plus.valid());  // no gold, no positive branch

  ForwardOptions o;
  o.ablation = Ablation::NoConAtt;
  auto f = model.forward(ids, o, 0);
  CHECK_FALSE(f.attributes.valid());
  CHECK(f.selection.empty());
  CHECK_FALSE(f.z_plus.valid());
  auto t = model.losses(f, 0, o);
  CHECK_FALSE(t.l_s.valid());
  CHECK_FALSE(t.l_con.valid());

  o.ablation = Ablation::NoLcon;
  f = model.forward(ids, o, 0);
  t = model.losses(f, 0, o);
  CHECK(t.l_s.valid());
  CHECK_FALSE(t.l_con.valid());

  o.ablation = Ablation::NoSiamese;
  f = model.forward(ids, o, 0);
  t = model.losses(f, 0, o);
  CHECK_FALSE(t.l_s.valid());
  CHECK(t.l_con.valid());

  o.ablation = Ablation::NoPrototypes;
  f = model.forward(ids, o, 0);
  t = model.losses(f, 0, o);
  CHECK_FALSE(t.l_con.valid());
  const auto tensor = construct_all_attributes(model.verbalizer(), VectorXd(f.repr.h.value().transpose()));
  const VectorXd scores = verbalizer_slot_scores(tensor, model.verbalizer().vectors,
                                                 model.prototype_bank().weight);
  CHECK(f.selection.selected[0].slot == top_m_slots(scores, 2)[0]);

  CHECK_THROWS_AS(model.forward(ids, {}, 3), Error);
}

TEST_CASE("ablation names round-trip") {
  for (auto a : {Ablation::None, Ablation::NoConAtt, Ablation::NoPrototypes, Ablation::NoLcon,
                 Ablation::NoSiamese})
    CHECK(parse_ablation(to_string(a)) == a);
  CHECK_FALSE(parse_ablation("no_such").has_value());
}

TEST_CASE("batch loss gradient matches finite differences, term by term") {
  auto s = make_setup(3, 2, gradcheck::tiny_config(), 5);
  const std::span<const Example> batch(s.examples.data(), 3);
  for (auto [wc, ws, wcon] : {std::tuple{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}) {
    TrainConfig tc;
    tc.weight_cls = wc;
    tc.weight_s = ws;
    tc.weight_con = wcon;
    const auto report = gradcheck::check(*s.model, batch, tc);
    INFO("worst parameter " << report.worst_parameter);
    CHECK(report.worst < 1e-5);
    CHECK(report.parameter_count <= 200);
  }
}

TEST_CASE("training lowers the loss and dev selection restores the best epoch") {
  ModelConfig cfg = gradcheck::tiny_config();
  cfg.toy.dim = 8;
  cfg.head_hidden = 8;
  cfg.toy.ffn_hidden = 8;
  auto s = make_setup(3, 6, cfg, 2);
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.batch_size = 6;
  tc.epochs = 15;
  tc.include_positive_in_denominator = true;
  Trainer trainer(*s.model, tc);
  std::ostringstream log;
  std::vector<double> scores_seen;
  auto metric = [&](CCPromptModel& m, std::span<const Example> dev) {
    std::vector<Index> p, g;
    for (const auto& pr : predict_all(m, dev, tc.forward_options())) p.push_back(pr.label);
    for (const auto& e : dev) g.push_back(e.label);
    scores_seen.push_back(accuracy(p, g));
    return scores_seen.back();
  };
  const auto result = trainer.fit(s.examples, s.examples, metric, &log);
  REQUIRE(result.step_losses.size() == 45);
  CHECK(result.step_losses.back().l_cls < result.step_losses.front().l_cls);
  CHECK(result.best_dev == *std::max_element(scores_seen.begin(), scores_seen.end()));
  CHECK(metric(*s.model, s.examples) == doctest::Approx(result.best_dev));
  CHECK(log.str().rfind("step=1 epoch=0 l_cls=", 0) == 0);
  CHECK(log.str().find("epoch=14 dev_metric=") != std::string::npos);
}

TEST_CASE("non-finite loss is a numeric failure") {
  auto s = make_setup(3, 2, gradcheck::tiny_config());
  for (auto& p : s.model->parameters())
    if (p.name == "prototypes") p.var.mutable_value()(0, 0) = std::nan("");
  Trainer trainer(*s.model, {});
  try {
    trainer.train_step(std::span<const Example>(s.examples.data(), 1));
    FAIL("expected NumericFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NumericFailure);
  }
}

TEST_CASE("same seed, same model") {
  auto a = make_setup(3, 2, gradcheck::tiny_config(), 9);
  auto b = make_setup(3, 2, gradcheck::tiny_config(), 9);
  auto pa = a.model->parameters(), pb = b.model->parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k].var.value() == pb[k].var.value());
}

TEST_CASE("metrics line format") {
  CHECK(format_metrics_line(3, 1, {0.5, -0.25, 1.0, 1.25}) ==
        "step=3 epoch=1 l_cls=0.5 l_s=-0.25 l_con=1 total=1.25");
}
