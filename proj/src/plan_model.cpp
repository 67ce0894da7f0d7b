#include "penet/plan_model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <set>
#include <tuple>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "penet/error.hpp"

namespace penet {

std::string PlanStep::call() const {
  std::string out = "(" + action;
  for (const auto& a : args) out += " " + a;
  return out + ")";
}

std::string ConditionRef::str() const { return atom ? atom->str() : "(select " + group + ")"; }

std::vector<std::string> ContingencyGroup::selection_states(
    const std::vector<std::size_t>& condition_cardinality) const {
  std::vector<std::string> out = alternatives;
  bool noop = false;
  for (const auto& row : selector) {
    auto it = row.distribution.find(std::string(kNoOp));
    if (it != row.distribution.end() && it->second > 0) noop = true;
  }
  if (fallback == kNoOp) {
    std::size_t combos = 1;
    for (auto c : condition_cardinality) combos *= c;
    std::set<std::vector<std::string>> covered;
    for (const auto& row : selector) covered.insert(row.condition);
    if (covered.size() < combos) noop = true;
  }
  if (noop) out.emplace_back(kNoOp);
  return out;
}

const PlanStep* Plan::step(std::string_view id) const {
  for (const auto& s : steps)
    if (s.id == id) return &s;
  return nullptr;
}

const ContingencyGroup* Plan::group(std::string_view name) const {
  for (const auto& g : contingencies)
    if (g.name == name) return &g;
  return nullptr;
}

std::size_t Plan::agent_index(const PlanStep& target) const {
  std::size_t i = 0;
  for (const auto& s : steps) {
    if (&s == &target || s.id == target.id) return i;
    if (s.agent == target.agent) ++i;
  }
  return i;
}

namespace {

bool mutually_exclusive(const PlanStep& a, const PlanStep& b) {
  for (const auto& ga : a.guards)
    for (const auto& gb : b.guards)
      if (ga.group == gb.group && ga.alternative != gb.alternative) return true;
  return false;
}

std::vector<std::string> all_boundaries(const Plan& plan) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto add = [&](const std::string& b) {
    if (seen.insert(b).second) out.push_back(b);
  };
  add(plan.initial_boundary);
  for (const auto& b : plan.boundaries) add(b);
  for (const auto& s : plan.steps) {
    add(s.start);
    add(s.end);
  }
  for (const auto& [a, b] : plan.orderings) {
    add(a);
    add(b);
  }
  for (const auto& g : plan.contingencies) add(g.boundary);
  return out;
}

// FNV-1a, stable across standard libraries.
std::uint64_t stable_hash(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  return h;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> precedence_edges(const Plan& plan) {
  std::vector<std::pair<std::string, std::string>> edges;
  std::set<std::pair<std::string, std::string>> seen;
  auto add = [&](const std::string& a, const std::string& b) {
    if (a != b && seen.emplace(a, b).second) edges.emplace_back(a, b);
  };
  for (const auto& b : all_boundaries(plan))
    if (b != plan.initial_boundary) add(plan.initial_boundary, b);
  for (const auto& [a, b] : plan.orderings) {
    if (a == b) throw Error(ErrorCode::CyclicOrder, fmt::format("boundary {} ordered before itself", a));
    add(a, b);
  }
  for (const auto& s : plan.steps) {
    if (s.start == s.end) throw Error(ErrorCode::CyclicOrder, fmt::format("step {} starts and ends at {}", s.id, s.start));
    add(s.start, s.end);
  }
  for (std::size_t i = 0; i < plan.steps.size(); ++i)
    for (std::size_t j = i + 1; j < plan.steps.size(); ++j) {
      const auto& a = plan.steps[i];
      const auto& b = plan.steps[j];
      if (a.agent != b.agent || mutually_exclusive(a, b)) continue;
      add(a.end, b.start);
    }
  return edges;
}

std::vector<std::string> linearize(const Plan& plan, const TieBreak& tie_break) {
  const auto boundaries = all_boundaries(plan);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < boundaries.size(); ++i) index[boundaries[i]] = i;

  std::vector<std::vector<std::size_t>> succ(boundaries.size());
  std::vector<int> indegree(boundaries.size(), 0);
  for (const auto& [a, b] : precedence_edges(plan)) {
    succ[index.at(a)].push_back(index.at(b));
    ++indegree[index.at(b)];
  }

  // (no ending step, agent, per-agent index, name)
  using Key = std::tuple<int, std::string, std::size_t, std::uint64_t, std::string>;
  std::vector<Key> keys(boundaries.size());
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    Key k{1, "", 0, 0, boundaries[i]};
    if (tie_break.seed) {
      std::get<3>(k) = stable_hash(boundaries[i], *tie_break.seed);
      std::get<0>(k) = 0;
    } else {
      for (const auto& s : plan.steps) {
        if (s.end != boundaries[i]) continue;
        Key cand{0, s.agent, plan.agent_index(s), 0, boundaries[i]};
        if (cand < k) k = cand;
      }
    }
    keys[i] = k;
  }

  auto cmp = [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(cmp)> ready(cmp);
  for (std::size_t i = 0; i < boundaries.size(); ++i)
    if (indegree[i] == 0) ready.push(i);

  std::vector<std::string> order;
  while (!ready.empty()) {
    auto n = ready.top();
    ready.pop();
    order.push_back(boundaries[n]);
    for (auto m : succ[n])
      if (--indegree[m] == 0) ready.push(m);
  }
  if (order.size() != boundaries.size()) {
    std::vector<std::string> stuck;
    for (std::size_t i = 0; i < boundaries.size(); ++i)
      if (indegree[i] > 0) stuck.push_back(boundaries[i]);
    throw Error(ErrorCode::CyclicOrder, fmt::format("ordering cycle among {}", fmt::join(stuck, ", ")));
  }
  return order;
}

bool precedes(const Plan& plan, const std::string& a, const std::string& b) {
  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& [x, y] : precedence_edges(plan)) succ[x].push_back(y);
  std::set<std::string> seen;
  std::vector<std::string> stack{a};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    for (const auto& m : succ[n]) {
      if (m == b) return true;
      if (seen.insert(m).second) stack.push_back(m);
    }
  }
  return false;
}

// --- hierarchy -------------------------------------------------------------

namespace {

std::vector<GroundAtom> consequence_targets(const KnowledgeBase& kb, const std::string& action,
                                            const std::vector<std::string>& args, std::optional<int> level) {
  std::vector<GroundAtom> out;
  const auto* model = kb.action(action, level);
  if (!model || model->parameters.size() != args.size()) return out;
  auto bindings = bind_parameters(model->parameters, args);
  for (const auto& e : model->effects) {
    auto atom = instantiate(e.target, bindings);
    if (std::find(out.begin(), out.end(), atom) == out.end()) out.push_back(atom);
  }
  return out;
}

bool on_selected_path(const Plan& plan, const std::vector<Guard>& guards) {
  for (const auto& g : guards) {
    const auto* group = plan.group(g.group);
    if (!group) continue;
    if (group->selected && (*group->selected != g.alternative || !group->on_selected_path)) return false;
  }
  return true;
}

void expand_one(Plan& out, const ExpansionNode& exp, std::size_t abstract_index, const KnowledgeBase& kb) {
  const PlanStep abstract = out.steps[abstract_index];
  if (exp.alternatives.empty())
    throw Error(ErrorCode::MalformedExpansion, fmt::format("expansion of {} has no alternatives", exp.step));
  if (exp.selected >= exp.alternatives.size())
    throw Error(ErrorCode::MalformedExpansion, fmt::format("expansion of {} selects a missing alternative", exp.step));

  const bool grouped = exp.alternatives.size() > 1;
  if (grouped && out.group(abstract.id))
    throw Error(ErrorCode::MalformedExpansion, fmt::format("group name {} already in use", abstract.id));

  std::set<std::string> existing;
  for (const auto& b : all_boundaries(out)) existing.insert(b);
  std::set<std::string> existing_steps;
  for (const auto& s : out.steps) existing_steps.insert(s.id);

  std::map<std::string, std::string> internal_owner;  // boundary -> alternative label
  std::vector<PlanStep> spliced;
  for (const auto& alt : exp.alternatives) {
    if (alt.steps.empty())
      throw Error(ErrorCode::MalformedExpansion, fmt::format("alternative {} of {} is empty", alt.label, exp.step));
    std::vector<Guard> guards = abstract.guards;
    if (grouped) guards.push_back({abstract.id, alt.label});
    for (auto sub : alt.steps) {
      if (sub.id != abstract.id && existing_steps.count(sub.id))
        throw Error(ErrorCode::MalformedExpansion, fmt::format("sub-step id {} already in use", sub.id));
      if (sub.agent.empty()) sub.agent = abstract.agent;
      for (const auto* b : {&sub.start, &sub.end}) {
        if (*b == abstract.start || *b == abstract.end) continue;
        if (existing.count(*b))
          throw Error(ErrorCode::MalformedExpansion,
                      fmt::format("sub-step {} boundary {} escapes the interval of {}", sub.id, *b, abstract.id));
        auto [it, inserted] = internal_owner.emplace(*b, alt.label);
        if (!inserted && it->second != alt.label)
          throw Error(ErrorCode::MalformedExpansion,
                      fmt::format("boundary {} shared by alternatives {} and {}", *b, it->second, alt.label));
      }
      if (sub.start == abstract.end || sub.end == abstract.start)
        throw Error(ErrorCode::MalformedExpansion,
                    fmt::format("sub-step {} runs outside the interval of {}", sub.id, abstract.id));
      sub.guards = guards;
      spliced.push_back(std::move(sub));
    }

    auto targets = consequence_targets(kb, abstract.action, abstract.args, abstract.level);
    std::vector<GroundAtom> mentioned;
    for (const auto& sub : alt.steps) {
      auto t = consequence_targets(kb, sub.action, sub.args, sub.level);
      mentioned.insert(mentioned.end(), t.begin(), t.end());
    }
    std::erase_if(targets, [&](const GroundAtom& a) {
      return std::find(mentioned.begin(), mentioned.end(), a) != mentioned.end();
    });
    if (!targets.empty())
      out.residuals.push_back({abstract.id, abstract.action, abstract.args, abstract.level, abstract.start,
                               abstract.end, guards, std::move(targets)});
  }

  for (const auto& [b, label] : internal_owner) {
    out.boundaries.push_back(b);
    out.orderings.emplace_back(abstract.start, b);
    out.orderings.emplace_back(b, abstract.end);
  }

  if (grouped) {
    ContingencyGroup g;
    g.name = abstract.id;
    g.boundary = abstract.start;
    for (const auto& alt : exp.alternatives) g.alternatives.push_back(alt.label);
    g.conditions = exp.conditions;
    g.selector = exp.selection_conditions;
    g.fallback = exp.alternatives[exp.selected].label;
    g.selected = g.fallback;
    g.on_selected_path = on_selected_path(out, abstract.guards);
    g.loc = exp.loc;
    out.contingencies.push_back(std::move(g));
  }

  out.steps.erase(out.steps.begin() + static_cast<std::ptrdiff_t>(abstract_index));
  out.steps.insert(out.steps.begin() + static_cast<std::ptrdiff_t>(abstract_index), spliced.begin(), spliced.end());
}

}  // namespace

Plan flatten_hierarchy(const Plan& plan, const KnowledgeBase& kb) {
  Plan out = plan;
  while (!out.expansions.empty()) {
    bool progress = false;
    for (std::size_t i = 0; i < out.expansions.size(); ++i) {
      auto it = std::find_if(out.steps.begin(), out.steps.end(),
                             [&](const PlanStep& s) { return s.id == out.expansions[i].step; });
      if (it == out.steps.end()) continue;
      ExpansionNode exp = out.expansions[i];
      out.expansions.erase(out.expansions.begin() + static_cast<std::ptrdiff_t>(i));
      expand_one(out, exp, static_cast<std::size_t>(it - out.steps.begin()), kb);
      progress = true;
      break;
    }
    if (!progress)
      throw Error(ErrorCode::MalformedExpansion,
                  fmt::format("expansion refers to unknown step {}", out.expansions.front().step));
  }
  return out;
}

// --- validation ------------------------------------------------------------

std::vector<Diagnostic> validate_plan(const Plan& plan, const KnowledgeBase& kb) {
  std::vector<Diagnostic> out;
  auto report = [&](const SourceLoc& loc, std::string msg) { out.push_back({loc, std::move(msg)}); };

  auto check_atom = [&](const GroundAtom& atom, const SourceLoc& loc, const std::string& owner) -> const PredicateSchema* {
    const auto* s = kb.schema(atom.predicate);
    if (!s) {
      report(loc, fmt::format("{}: unknown predicate {}", owner, atom.predicate));
      return nullptr;
    }
    if (s->parameters.size() != atom.args.size()) {
      report(loc, fmt::format("{}: {} expects {} arguments, got {}", owner, atom.predicate, s->parameters.size(),
                              atom.args.size()));
      return nullptr;
    }
    return s;
  };

  std::set<std::string> ids;
  for (const auto& s : plan.steps) {
    if (!ids.insert(s.id).second) report(s.loc, fmt::format("duplicate step id {}", s.id));
    const auto* model = kb.action(s.action, s.level);
    if (!model) {
      report(s.loc, fmt::format("step {}: unknown or ambiguous action {}", s.id, s.action));
      continue;
    }
    if (model->parameters.size() != s.args.size())
      report(s.loc, fmt::format("step {}: {} expects {} arguments, got {}", s.id, s.action, model->parameters.size(),
                                s.args.size()));
  }
  for (const auto& e : plan.expansions) {
    for (const auto& alt : e.alternatives)
      for (const auto& s : alt.steps) {
        if (!kb.action(s.action, s.level))
          report(s.loc, fmt::format("step {}: unknown or ambiguous action {}", s.id, s.action));
      }
  }

  for (const auto& [atom, dist] : plan.initial_state) {
    const auto* s = check_atom(atom, {}, "initial");
    if (!s) continue;
    if (s->kind != PredicateKind::Primitive)
      report({}, fmt::format("initial: {} is derived; priors belong to primitive atoms", atom.str()));
    double sum = 0;
    for (const auto& [label, p] : dist) {
      if (!s->has_state(label)) report({}, fmt::format("initial: {} is not a state of {}", label, atom.predicate));
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbTolerance)
      report({}, fmt::format("initial: prior for {} sums to {}, expected 1 (normalization)", atom.str(), sum));
  }
  for (const auto& [atom, state] : plan.goals) {
    const auto* s = check_atom(atom, {}, "goal");
    if (s && !s->has_state(state)) report({}, fmt::format("goal: {} is not a state of {}", state, atom.predicate));
  }
  for (const auto& atom : plan.tracked) check_atom(atom, {}, "track");

  for (const auto& g : plan.contingencies) {
    std::string owner = "contingent " + g.name;
    for (const auto& c : g.conditions) {
      if (c.atom) check_atom(*c.atom, g.loc, owner);
      else if (!plan.group(c.group)) report(g.loc, fmt::format("{}: unknown selection group {}", owner, c.group));
    }
    for (const auto& alt : g.alternatives) {
      if (g.selected) continue;
      const auto* s = plan.step(alt);
      if (!s) report(g.loc, fmt::format("{}: unknown step {}", owner, alt));
      else if (s->start != g.boundary)
        report(g.loc, fmt::format("{}: alternative {} does not start at {}", owner, alt, g.boundary));
    }
    for (const auto& row : g.selector) {
      if (row.condition.size() != g.conditions.size())
        report(row.loc, fmt::format("{}: row has {} condition labels, expected {}", owner, row.condition.size(),
                                    g.conditions.size()));
      double sum = 0;
      for (const auto& [label, p] : row.distribution) {
        if (label != kNoOp && std::find(g.alternatives.begin(), g.alternatives.end(), label) == g.alternatives.end())
          report(row.loc, fmt::format("{}: {} is not an alternative", owner, label));
        sum += p;
      }
      if (std::abs(sum - 1.0) > kProbTolerance)
        report(row.loc, fmt::format("{}: selector row sums to {}, expected 1 (normalization)", owner, sum));
    }
  }

  try {
    linearize(plan);
  } catch (const Error& e) {
    report({}, e.what());
  }
  return out;
}

}  // namespace penet
