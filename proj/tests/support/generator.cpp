#include "generator.hpp"

#include <algorithm>
#include <set>

namespace gen {

using namespace penet;

namespace {

double uniform(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

bool chance(std::mt19937_64& rng, double p) { return uniform(rng) < p; }

template <class T>
const T& choose(std::mt19937_64& rng, const std::vector<T>& v) {
  return v[pick(rng, v.size())];
}

std::vector<std::pair<Term, double>> as_row(const Distribution& d) { return {d.begin(), d.end()}; }

// Every label combination over the given state lists.
std::vector<std::vector<std::string>> combos(const std::vector<std::vector<std::string>>& lists) {
  std::vector<std::vector<std::string>> out{{}};
  for (const auto& l : lists) {
    std::vector<std::vector<std::string>> next;
    for (const auto& c : out)
      for (const auto& s : l) {
        auto c2 = c;
        c2.push_back(s);
        next.push_back(c2);
      }
    out = std::move(next);
  }
  return out;
}

const std::vector<std::string> kConstants{"a", "b"};

}  // namespace

Distribution random_distribution(std::mt19937_64& rng, const std::vector<std::string>& labels, std::size_t support) {
  auto pool = labels;
  std::shuffle(pool.begin(), pool.end(), rng);
  const std::size_t n = 1 + pick(rng, std::min(support, pool.size()));
  Distribution d;
  if (n == 1) {
    d[pool[0]] = 1.0;
    return d;
  }
  // Quarters keep the arithmetic short and exactly representable.
  std::vector<double> w(n);
  double total = 0;
  for (auto& x : w) total += (x = 1.0 + static_cast<double>(pick(rng, 3)));
  double used = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    d[pool[i]] = w[i] / total;
    used += d[pool[i]];
  }
  d[pool[n - 1]] = 1.0 - used;
  return d;
}

Instance random_instance(std::mt19937_64& rng, const Options& opts) {
  Instance inst;
  auto& kb = inst.kb;

  // Primitive predicates and their ground atoms.
  std::vector<GroundAtom> atoms;
  const std::size_t npred = 1 + pick(rng, 3);
  for (std::size_t i = 0; i < npred; ++i) {
    PredicateSchema s;
    s.name = "P" + std::to_string(i);
    const bool unary = atoms.size() + 2 <= opts.max_atoms - 1 && chance(rng, 0.5);
    if (unary) s.parameters = {"?o"};
    const std::size_t nstates = 2 + pick(rng, opts.max_states - 1);
    for (std::size_t k = 0; k < nstates; ++k) s.states.push_back("s" + std::to_string(k));
    if (unary)
      for (const auto& c : kConstants) atoms.push_back({s.name, {c}});
    else
      atoms.push_back({s.name, {}});
    kb.schemas[s.name] = s;
    if (atoms.size() >= opts.max_atoms - 1) break;
  }
  auto states_of = [&](const GroundAtom& a) { return kb.schemas.at(a.predicate).states; };
  auto pattern = [](const GroundAtom& a) { return AtomPattern{a.predicate, a.args}; };

  // Optional derived predicate over one or two primitive atoms.
  if (chance(rng, opts.derived) && atoms.size() < opts.max_atoms) {
    PredicateSchema d{"D", {}, {"t", "f"}, PredicateKind::Derived, {}};
    kb.schemas["D"] = d;
    DerivedDefinition def;
    def.predicate = {"D", {}};
    std::vector<GroundAtom> parents{choose(rng, atoms)};
    if (atoms.size() > 1 && chance(rng, 0.5)) {
      auto other = choose(rng, atoms);
      if (other != parents[0]) parents.push_back(other);
    }
    std::vector<std::vector<std::string>> lists;
    for (const auto& p : parents) {
      def.parents.push_back(pattern(p));
      lists.push_back(states_of(p));
    }
    for (const auto& c : combos(lists)) {
      if (chance(rng, 0.3)) continue;
      def.rows.push_back({c, as_row(random_distribution(rng, d.states, opts.row_support)), {}});
    }
    def.rows.push_back({std::vector<Term>(parents.size(), "*"), as_row(random_distribution(rng, d.states, 1)), {}});
    kb.derived.push_back(def);
  }

  // Actions with partial effect models.
  const std::size_t nact = 1 + pick(rng, 3);
  for (std::size_t i = 0; i < nact; ++i) {
    ActionModel m;
    m.name = "A" + std::to_string(i);
    m.duration = {{1, 1.0}};
    const std::size_t neff = 1 + pick(rng, 2);
    std::set<GroundAtom> targets;
    for (std::size_t e = 0; e < neff; ++e) {
      auto target = choose(rng, atoms);
      if (!targets.insert(target).second) continue;
      EffectModel eff;
      eff.target = pattern(target);
      std::vector<GroundAtom> given{target};
      if (atoms.size() > 1 && chance(rng, 0.4)) {
        auto other = choose(rng, atoms);
        if (other != target) given.push_back(other);
      }
      if (chance(rng, 0.2) && given.size() == 2) std::swap(given[0], given[1]);
      std::vector<std::vector<std::string>> lists;
      for (const auto& g : given) {
        eff.given.push_back(pattern(g));
        lists.push_back(states_of(g));
      }
      for (const auto& c : combos(lists)) {
        if (chance(rng, 0.4)) continue;
        eff.rows.push_back({c, as_row(random_distribution(rng, states_of(target), opts.row_support)), {}});
      }
      if (eff.rows.empty())
        eff.rows.push_back({combos(lists).front(), as_row(random_distribution(rng, states_of(target), 1)), {}});
      m.effects.push_back(eff);
    }
    if (chance(rng, opts.during)) {
      auto a = choose(rng, atoms);
      DuringCondition c{pattern(a), choose(rng, states_of(a)), std::nullopt, {}};
      if (chance(rng, 0.5)) c.gates = m.effects.front().target;
      m.during_conditions.push_back(c);
    }
    if (chance(rng, opts.during)) {
      auto a = choose(rng, atoms);
      EffectModel eff{pattern(a), {pattern(a)}, {}, {}};
      for (const auto& s : states_of(a))
        if (chance(rng, 0.5)) eff.rows.push_back({{s}, as_row(random_distribution(rng, states_of(a), opts.row_support)), {}});
      if (!eff.rows.empty()) m.during_effects.push_back(eff);
    }
    kb.actions.push_back(m);
  }

  // Persistence for some predicates, some rows only.
  for (const auto& [name, s] : kb.schemas) {
    if (s.kind != PredicateKind::Primitive || !chance(rng, 0.5)) continue;
    PersistenceModel pm;
    pm.predicate = {name, s.parameters};
    for (const auto& prev : s.states)
      if (chance(rng, 0.6)) pm.rows.push_back({prev, std::nullopt, as_row(random_distribution(rng, s.states, opts.row_support)), {}});
    if (chance(rng, 0.2)) pm.rows.push_back({"*", std::nullopt, as_row(random_distribution(rng, s.states, 1)), {}});
    if (!pm.rows.empty()) kb.persistence.push_back(pm);
  }

  // Plan.
  auto& plan = inst.plan;
  const std::size_t T = 1 + pick(rng, opts.max_transitions);
  auto step = [&](const std::string& id, const std::string& agent, const std::string& start, const std::string& end) {
    PlanStep s;
    s.id = id;
    s.agent = agent;
    s.action = kb.actions[pick(rng, kb.actions.size())].name;
    s.start = start;
    s.end = end;
    return s;
  };
  plan.initial_boundary = "b0";
  for (std::size_t k = 1; k <= T; ++k) plan.boundaries.push_back("b" + std::to_string(k));
  if (T >= 2 && chance(rng, opts.multi_agent)) {
    // Two agents; the second spans the first one's steps.
    for (std::size_t k = 1; k <= T; ++k)
      plan.steps.push_back(step("s" + std::to_string(k), "r1", "b" + std::to_string(k - 1), "b" + std::to_string(k)));
    const auto first = pick(rng, T - 1);
    plan.steps.push_back(step("w", "r2", "b" + std::to_string(first), "b" + std::to_string(T)));
  } else {
    for (std::size_t k = 1; k <= T; ++k)
      plan.steps.push_back(step("s" + std::to_string(k), "r1", "b" + std::to_string(k - 1), "b" + std::to_string(k)));
  }

  if (chance(rng, opts.contingency)) {
    const auto at = pick(rng, plan.steps.size());
    const auto base = plan.steps[at];
    auto alt = step(base.id + "x", base.agent, base.start, base.end);
    plan.steps.insert(plan.steps.begin() + static_cast<long>(at) + 1, alt);
    ContingencyGroup g;
    g.name = "g";
    g.boundary = base.start;
    g.alternatives = {base.id, alt.id};
    auto cond = choose(rng, atoms);
    g.conditions.push_back({cond, ""});
    std::vector<std::string> labels{base.id, alt.id, std::string(kNoOp)};
    for (const auto& s : states_of(cond))
      if (chance(rng, 0.7)) g.selector.push_back({{s}, random_distribution(rng, labels, 2), {}});
    for (auto& s : plan.steps)
      if (s.id == base.id || s.id == alt.id) s.guards.push_back({g.name, s.id});
    plan.contingencies.push_back(g);
  }

  for (const auto& a : atoms)
    if (chance(rng, 0.6)) plan.initial_state[a] = random_distribution(rng, states_of(a), 3);
  const std::size_t ngoals = 1 + pick(rng, 2);
  std::set<GroundAtom> used;
  for (std::size_t i = 0; i < ngoals; ++i) {
    auto a = choose(rng, atoms);
    if (used.insert(a).second) plan.goals.emplace_back(a, choose(rng, states_of(a)));
  }
  if (kb.schemas.count("D")) plan.tracked.push_back({"D", {}});
  return inst;
}

}  // namespace gen

namespace gen {

PENet fragment_base() { return PENet({"S0", "S1"}); }

Fragment random_fragment(std::mt19937_64& rng, const std::string& source) {
  const std::vector<std::string> labels{"u", "v", "w"};
  struct Spec {
    NodeId id;
    NodeKind kind;
    std::vector<std::string> parents;
  };
  const std::vector<Spec> specs{
      {{NodeRole::Atom, "(X)", "S0"}, NodeKind::Primitive, {}},
      {{NodeRole::Atom, "(Y)", "S0"}, NodeKind::Primitive, {}},
      {{NodeRole::Atom, "(X)", "S1"}, NodeKind::Primitive, {"(X)@S0", "(Y)@S0"}},
      {{NodeRole::Atom, "(Y)", "S1"}, NodeKind::Primitive, {"(Y)@S0"}},
      {{NodeRole::Atom, "(Z)", "S1"}, NodeKind::Derived, {"(X)@S1"}},
  };
  Fragment f{source, {}};
  // Parents come first so the fragment is self-contained.
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (chance(rng, 0.6)) chosen.push_back(i);
  if (chosen.empty()) chosen.push_back(2);
  std::set<std::size_t> need(chosen.begin(), chosen.end());
  for (std::size_t grown = 0; grown != need.size();) {
    grown = need.size();
    for (auto i : std::set<std::size_t>(need))
      for (const auto& p : specs[i].parents)
        for (std::size_t j = 0; j < specs.size(); ++j)
          if (specs[j].id.key() == p) need.insert(j);
  }
  for (auto i : need) {
    const auto& s = specs[i];
    FragmentNode n{s.id, s.kind, {}, s.parents, {}};
    n.states = labels;
    std::vector<std::vector<std::string>> lists(s.parents.size(), labels);
    for (const auto& c : combos(lists)) {
      if (!chance(rng, 0.5)) continue;
      n.rows.push_back({c, random_distribution(rng, n.states, 2)});
    }
    if (s.parents.empty() && chance(rng, 0.7)) n.rows = {{{}, random_distribution(rng, n.states, 2)}};
    f.nodes.push_back(std::move(n));
  }
  return f;
}

}  // namespace gen
