#include <doctest.h>

#include <functional>
#include <random>

#include "fixtures.hpp"
#include "generator.hpp"
#include "penet/construct.hpp"
#include "penet/error.hpp"
#include "penet/infer.hpp"

using namespace penet;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::Internal;
}

PENet net_of(const std::string& kb_name, const std::string& plan_name) {
  auto kb = fixtures::kb(kb_name);
  return build_pe_net(fixtures::plan(plan_name, kb), kb);
}

}  // namespace

TEST_CASE("exact matches brute-force enumeration on random nets") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 40; ++i) {
    auto inst = gen::random_instance(rng);
    auto net = build_pe_net(inst.plan, inst.kb);
    std::vector<const Node*> nodes;
    for (const auto& n : net.nodes()) nodes.push_back(&n);
    for (int qn = 0; qn < 5; ++qn) {
      const auto& t = *nodes[std::uniform_int_distribution<std::size_t>(0, nodes.size() - 1)(rng)];
      const auto& e = *nodes[std::uniform_int_distribution<std::size_t>(0, nodes.size() - 1)(rng)];
      Query q{{{t.id.key(), t.states.front()}}, {}};
      if (e.id.key() != t.id.key()) q.evidence.push_back({e.id.key(), e.states.back()});
      try {
        auto ref = oracle_enumerate(net, q);
        CHECK(exact_query(net, q).probability == doctest::Approx(ref.probability).epsilon(1e-9));
      } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::InfeasibleEvidence);
        CHECK(code_of([&] { exact_query(net, q); }) == ErrorCode::InfeasibleEvidence);
      }
    }
  }
}

TEST_CASE("marginals sum to one and the prior is recovered") {
  auto net = net_of("commute.kb", "commute.plan");
  auto m = exact_marginal(net, "(Weather)@S0");
  CHECK(m.at("rainy") == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(m.at("sunny") == doctest::Approx(0.6).epsilon(1e-12));
  double total = 0;
  for (const auto& [s, p] : exact_marginal(net, "(At Ann)@S1")) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("evidence conditions the query") {
  auto net = net_of("move.kb", "two_moves.plan");
  auto joint = exact_query(net, {{{"(Loc A)@S1", "L2"}, {"(Loc A)@S2", "L2"}}, {}}).probability;
  auto cond = exact_query(net, {{{"(Loc A)@S2", "L2"}}, {{"(Loc A)@S1", "L2"}}});
  CHECK(cond.evidence_probability == doctest::Approx(0.9));
  CHECK(cond.probability == doctest::Approx(joint / 0.9).epsilon(1e-12));
  CHECK(cond.probability == doctest::Approx(0.98));
}

TEST_CASE("query errors") {
  auto net = net_of("relocate.kb", "relocate.plan");
  CHECK(code_of([&] { exact_query(net, {{{"(Loc Q)@S1", "L2"}}, {}}); }) == ErrorCode::UnknownNode);
  CHECK(code_of([&] { exact_query(net, {{{"(Loc X)@S1", "L2"}}, {{"(Loc X)@S0", "L9"}}}); }) ==
        ErrorCode::InvalidQuery);
  auto big = net_of("move.kb", "two_moves.plan");
  const std::vector<Assignment> impossible{{"(Loc B)@S1", "L3"}, {"(Loc B)@S2", "L2"}};
  CHECK(code_of([&] { exact_query(big, {{{"(Loc A)@S2", "L2"}}, impossible}); }) == ErrorCode::InfeasibleEvidence);
  CHECK(code_of([&] { oracle_enumerate(big, {{{"(Loc A)@S2", "L2"}}, impossible}); }) ==
        ErrorCode::InfeasibleEvidence);
  CHECK(code_of([&] { mc_query(big, {{{"(Loc A)@S2", "L2"}}, impossible}, {1000, 3, 1}); }) == ErrorCode::ZeroWeight);
  CHECK(code_of([&] { exact_query(big, {{{"(Loc A)@S2", "L2"}}, {{"(Loc A)@S1", "L1"}, {"(Loc A)@S1", "L2"}}}); }) ==
        ErrorCode::InfeasibleEvidence);
  CHECK(code_of([&] { oracle_enumerate(big, {{{"(Loc A)@S2", "L2"}}, {}}, 1); }) == ErrorCode::TooLarge);
  CHECK(code_of([&] { exact_query(big, {{{"(Loc A)@S2", "L2"}}, {}}, ExactMode{0}); }) == ErrorCode::WidthExceeded);
}

TEST_CASE("a target state the node never takes has probability zero") {
  auto net = net_of("relocate.kb", "relocate.plan");
  CHECK(exact_query(net, {{{"(Loc X)@S1", "L3"}}, {}}).probability == 0.0);
  CHECK(mc_query(net, {{{"(Loc X)@S1", "L3"}}, {}}, {500, 1, 1}).probability == 0.0);
}

TEST_CASE("min-fill width on a chain") {
  auto net = net_of("move.kb", "two_moves.plan");
  auto plan = min_fill_order(net, {"(Loc A)@S0", "(Loc A)@S1", "(Loc A)@S2"});
  CHECK(plan.order.size() == 3);
  CHECK(plan.width <= 1);
}

TEST_CASE("Monte Carlo is seeded and thread-count independent") {
  auto net = net_of("move.kb", "two_moves.plan");
  Query q{{{"(Loc B)@S2", "L1"}}, {{"(Loc A)@S1", "L2"}}};
  auto a = mc_query(net, q, {20000, 42, 1});
  auto b = mc_query(net, q, {20000, 42, 4});
  auto c = mc_query(net, q, {20000, 43, 1});
  CHECK(a.probability == b.probability);
  CHECK(*a.standard_error == *b.standard_error);
  CHECK(a.probability != c.probability);
  CHECK(a.samples == 20000);
  auto exact = exact_query(net, q).probability;
  CHECK(std::abs(a.probability - exact) <= 4 * *a.standard_error);
}

TEST_CASE("plan success never exceeds leads-to-success") {
  for (auto [k, pl] : {std::pair{"assembly.kb", "assembly.plan"}, {"commute.kb", "commute.plan"}, {"move.kb", "two_moves.plan"}}) {
    auto net = net_of(k, pl);
    auto plan = plan_success(net).probability;
    auto leads = leads_to_success(net).probability;
    CHECK(plan <= leads + 1e-12);
  }
  auto hier = net_of("assembly.kb", "assembly.plan");
  CHECK(leads_to_success(hier).probability == doctest::Approx(0.645668).epsilon(1e-6));
  CHECK(plan_success(hier).probability == doctest::Approx(0.427373).epsilon(1e-6));
  auto contingent = net_of("commute.kb", "commute.plan");
  CHECK(plan_success(contingent).probability == doctest::Approx(0.8656).epsilon(1e-12));
  CHECK(leads_to_success(contingent).probability == doctest::Approx(0.8656).epsilon(1e-12));
}

TEST_CASE("run_query dispatches on the mode") {
  auto net = net_of("move.kb", "two_moves.plan");
  Query q{{{"(Loc A)@S1", "L2"}}, {}};
  CHECK(run_query(net, q).estimator == Estimator::Exact);
  q.mode = MonteCarloMode{100, 1, 1};
  auto r = run_query(net, q);
  CHECK(r.estimator == Estimator::MonteCarlo);
  CHECK(r.standard_error.has_value());
}
