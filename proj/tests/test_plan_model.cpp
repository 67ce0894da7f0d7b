#include <doctest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "penet/error.hpp"
#include "penet/plan_model.hpp"

using namespace penet;

namespace {

std::size_t pos(const std::vector<std::string>& v, const std::string& x) {
  return static_cast<std::size_t>(std::find(v.begin(), v.end(), x) - v.begin());
}

}  // namespace

TEST_CASE("two-step plan linearizes uniquely") {
  auto kb = fixtures::kb("move.kb");
  auto plan = fixtures::plan("two_moves.plan", kb);
  CHECK(plan.steps.size() == 2);
  CHECK(plan.contingencies.empty());
  CHECK(linearize(plan) == std::vector<std::string>{"b0", "b1", "b2"});
  CHECK(precedes(plan, "b0", "b2"));
  CHECK_FALSE(precedes(plan, "b2", "b1"));
}

TEST_CASE("overlapping agents: default order and seeded variants") {
  auto kb = fixtures::kb("overlap.kb");
  auto plan = fixtures::plan("overlap.plan", kb);
  auto order = linearize(plan);
  CHECK(order == std::vector<std::string>{"b0", "b1", "b2", "b3"});
  CHECK_FALSE(precedes(plan, "b1", "b2"));
  CHECK_FALSE(precedes(plan, "b2", "b1"));
  bool other_order = false;
  for (std::uint64_t s = 0; s < 32; ++s) {
    auto o = linearize(plan, TieBreak::seeded(s));
    CHECK(o.front() == "b0");
    CHECK(o.back() == "b3");
    CHECK(linearize(plan, TieBreak::seeded(s)) == o);
    if (pos(o, "b2") < pos(o, "b1")) other_order = true;
  }
  CHECK(other_order);
}

TEST_CASE("cyclic ordering is rejected") {
  auto kb = fixtures::kb("overlap.kb");
  auto plan = fixtures::plan("overlap.plan", kb);
  plan.orderings.emplace_back("b3", "b1");
  try {
    linearize(plan);
    FAIL("expected CyclicOrder");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CyclicOrder);
  }
}

TEST_CASE("every linearization respects the precedence edges") {
  auto kb = fixtures::kb("assembly.kb");
  auto flat = flatten_hierarchy(fixtures::plan("assembly.plan", kb), kb);
  auto edges = precedence_edges(flat);
  for (std::uint64_t s = 0; s < 16; ++s) {
    auto o = linearize(flat, TieBreak::seeded(s));
    for (const auto& [a, b] : edges) CHECK(pos(o, a) < pos(o, b));
  }
}

TEST_CASE("flattening a hierarchy") {
  auto kb = fixtures::kb("assembly.kb");
  auto plan = fixtures::plan("assembly.plan", kb);
  auto flat = flatten_hierarchy(plan, kb);
  CHECK(flat.expansions.empty());
  CHECK(flat.step("C") == nullptr);
  REQUIRE(flat.step("C1a") != nullptr);
  REQUIRE(flat.step("C2a") != nullptr);
  CHECK(flat.step("C1a")->guards == std::vector<Guard>{{"C", "C1"}});
  CHECK(flat.step("C2a")->guards == std::vector<Guard>{{"C", "C2"}});
  CHECK(flat.step("C1a")->agent == "crew");

  const auto* g = flat.group("C");
  REQUIRE(g != nullptr);
  CHECK(g->selected == std::optional<std::string>("C1"));
  CHECK(g->on_selected_path);
  CHECK(g->boundary == "b1");

  // Tidy is only modelled by the abstract action: it survives as a residual.
  bool tidy = false;
  for (const auto& r : flat.residuals)
    for (const auto& t : r.targets)
      if (t == GroundAtom{"Tidy", {"Shop"}}) tidy = true;
  CHECK(tidy);

  CHECK(flatten_hierarchy(flat, kb) == flat);
}

TEST_CASE("validate_plan") {
  auto kb = fixtures::kb("commute.kb");
  auto plan = fixtures::plan("commute.plan", kb);
  CHECK(validate_plan(plan, kb).empty());
  plan.steps[0].action = "Fly";
  CHECK_FALSE(validate_plan(plan, kb).empty());
  plan = fixtures::plan("commute.plan", kb);
  plan.goals.emplace_back(GroundAtom{"At", {"Ann"}}, "moon");
  CHECK_FALSE(validate_plan(plan, kb).empty());
  plan = fixtures::plan("commute.plan", kb);
  plan.contingencies[0].selector[0].distribution = {{"teleport", 1.0}};
  CHECK_FALSE(validate_plan(plan, kb).empty());
}

TEST_CASE("selection states include noop only when reachable") {
  auto kb = fixtures::kb("commute.kb");
  auto plan = fixtures::plan("commute.plan", kb);
  const auto& g = plan.contingencies[0];
  auto states = g.selection_states({2});
  CHECK(std::find(states.begin(), states.end(), "walk") != states.end());
  CHECK(std::find(states.begin(), states.end(), "drive") != states.end());
  CHECK(std::find(states.begin(), states.end(), "noop") == states.end());
  auto partial = g;
  partial.selector.pop_back();
  auto s2 = partial.selection_states({2});
  CHECK(std::find(s2.begin(), s2.end(), "noop") != s2.end());
}
