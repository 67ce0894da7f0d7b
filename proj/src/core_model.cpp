#include "penet/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "penet/error.hpp"

namespace penet {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnboundVariable: return "UnboundVariable";
    case ErrorCode::ArityMismatch: return "ArityMismatch";
    case ErrorCode::UnknownPredicate: return "UnknownPredicate";
    case ErrorCode::UnknownAction: return "UnknownAction";
    case ErrorCode::CyclicOrder: return "CyclicOrder";
    case ErrorCode::MalformedExpansion: return "MalformedExpansion";
    case ErrorCode::LayeringViolation: return "LayeringViolation";
    case ErrorCode::InvalidFragment: return "InvalidFragment";
    case ErrorCode::FrozenNet: return "FrozenNet";
    case ErrorCode::IncompleteCPT: return "IncompleteCPT";
    case ErrorCode::UnknownConditionNode: return "UnknownConditionNode";
    case ErrorCode::MissingDuration: return "MissingDuration";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::InvalidKnowledgeBase: return "InvalidKnowledgeBase";
    case ErrorCode::InvalidPlan: return "InvalidPlan";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::InvalidQuery: return "InvalidQuery";
    case ErrorCode::InfeasibleEvidence: return "InfeasibleEvidence";
    case ErrorCode::WidthExceeded: return "WidthExceeded";
    case ErrorCode::ZeroWeight: return "ZeroWeight";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

std::string Diagnostic::str() const {
  std::string where = loc.file.empty() ? std::string("<input>") : loc.file;
  return fmt::format("{}:{}:{}: error: {}", where, loc.line, loc.column, message);
}

std::ostream& operator<<(std::ostream& os, const Diagnostic& d) { return os << d.str(); }

std::string_view to_string(PredicateKind kind) {
  return kind == PredicateKind::Primitive ? "primitive" : "derived";
}

bool PredicateSchema::has_state(std::string_view label) const {
  return std::find(states.begin(), states.end(), label) != states.end();
}

bool is_variable(std::string_view term) { return !term.empty() && term.front() == '?'; }

namespace {

std::string join_atom(const std::string& predicate, const std::vector<std::string>& args) {
  std::string out = "(" + predicate;
  for (const auto& a : args) out += " " + a;
  return out + ")";
}

}  // namespace

std::string AtomPattern::str() const { return join_atom(predicate, args); }
std::string GroundAtom::str() const { return join_atom(predicate, args); }

std::vector<AtomPattern> ActionModel::predecessors() const {
  std::vector<AtomPattern> out;
  auto add = [&](const std::vector<EffectModel>& effects) {
    for (const auto& e : effects)
      for (const auto& g : e.given)
        if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
  };
  add(effects);
  add(during_effects);
  return out;
}

std::string ActionModel::signature() const {
  return join_atom(name, parameters) + (level ? fmt::format(" level={}", level) : "");
}

std::string ElapsedBucket::str() const {
  return hi ? fmt::format("[{},{})", lo, *hi) : fmt::format("[{},inf)", lo);
}

const PredicateSchema* KnowledgeBase::schema(std::string_view predicate) const {
  auto it = schemas.find(std::string(predicate));
  return it == schemas.end() ? nullptr : &it->second;
}

const ActionModel* KnowledgeBase::action(std::string_view name, std::optional<int> level) const {
  const ActionModel* found = nullptr;
  for (const auto& a : actions) {
    if (a.name != name) continue;
    if (level) {
      if (a.level == *level) return &a;
      continue;
    }
    if (found) return nullptr;
    found = &a;
  }
  return found;
}

const PersistenceModel* KnowledgeBase::persistence_for(std::string_view predicate) const {
  for (const auto& p : persistence)
    if (p.predicate.predicate == predicate) return &p;
  return nullptr;
}

const DerivedDefinition* KnowledgeBase::derived_for(const GroundAtom& atom, Bindings* bindings) const {
  for (const auto& d : derived) {
    Bindings b;
    if (unify(d.predicate, atom, b)) {
      if (bindings) *bindings = std::move(b);
      return &d;
    }
  }
  return nullptr;
}

Term substitute(const Term& term, const Bindings& bindings) {
  if (!is_variable(term)) return term;
  auto it = bindings.find(term);
  if (it == bindings.end()) throw Error(ErrorCode::UnboundVariable, "no binding for " + term);
  return it->second;
}

GroundAtom instantiate(const AtomPattern& pattern, const Bindings& bindings) {
  GroundAtom atom{pattern.predicate, {}};
  atom.args.reserve(pattern.args.size());
  for (const auto& t : pattern.args) {
    if (is_variable(t) && !bindings.count(t))
      throw Error(ErrorCode::UnboundVariable, fmt::format("{} in {}", t, pattern.str()));
    atom.args.push_back(substitute(t, bindings));
  }
  return atom;
}

GroundAtom instantiate(const KnowledgeBase& kb, const AtomPattern& pattern, const Bindings& bindings) {
  const auto* schema = kb.schema(pattern.predicate);
  if (!schema) throw Error(ErrorCode::UnknownPredicate, pattern.str());
  if (schema->parameters.size() != pattern.args.size())
    throw Error(ErrorCode::ArityMismatch,
                fmt::format("{} expects {} arguments, got {}", pattern.predicate,
                            schema->parameters.size(), pattern.args.size()));
  return instantiate(pattern, bindings);
}

bool unify(const AtomPattern& pattern, const GroundAtom& atom, Bindings& bindings) {
  if (pattern.predicate != atom.predicate || pattern.args.size() != atom.args.size()) return false;
  for (std::size_t i = 0; i < pattern.args.size(); ++i) {
    const auto& t = pattern.args[i];
    if (!is_variable(t)) {
      if (t != atom.args[i]) return false;
      continue;
    }
    auto [it, inserted] = bindings.emplace(t, atom.args[i]);
    if (!inserted && it->second != atom.args[i]) return false;
  }
  return true;
}

Bindings bind_parameters(const std::vector<std::string>& parameters, const std::vector<std::string>& args) {
  if (parameters.size() != args.size())
    throw Error(ErrorCode::ArityMismatch,
                fmt::format("expected {} arguments, got {}", parameters.size(), args.size()));
  Bindings b;
  for (std::size_t i = 0; i < parameters.size(); ++i) b[parameters[i]] = args[i];
  return b;
}

Distribution instantiate_distribution(const std::vector<std::pair<Term, double>>& dist,
                                      const Bindings& bindings) {
  Distribution out;
  for (const auto& [label, p] : dist) out[substitute(label, bindings)] += p;
  return out;
}

const Distribution* GroundEffect::row(const std::vector<std::string>& condition) const {
  auto it = rows.find(condition);
  return it == rows.end() ? nullptr : &it->second;
}

namespace {

// Calls fn for every combination of labels where `*` positions range over
// the matching schema states.
template <class Fn>
void expand_wildcards(const std::vector<std::string>& condition,
                      const std::vector<const PredicateSchema*>& schemas, Fn&& fn) {
  std::vector<std::string> current(condition.size());
  auto rec = [&](auto&& self, std::size_t i) -> void {
    if (i == condition.size()) {
      fn(current);
      return;
    }
    if (condition[i] == kWildcard) {
      for (const auto& s : schemas[i]->states) {
        current[i] = s;
        self(self, i + 1);
      }
    } else {
      current[i] = condition[i];
      self(self, i + 1);
    }
  };
  rec(rec, 0);
}

}  // namespace

GroundEffect instantiate_effect(const KnowledgeBase& kb, const EffectModel& effect, const Bindings& bindings) {
  GroundEffect g;
  g.target = instantiate(kb, effect.target, bindings);
  std::vector<const PredicateSchema*> schemas;
  for (const auto& p : effect.given) {
    g.given.push_back(instantiate(kb, p, bindings));
    schemas.push_back(kb.schema(p.predicate));
  }
  std::vector<const RowPattern*> wildcard_rows;
  for (const auto& row : effect.rows) {
    if (row.condition.size() != g.given.size())
      throw Error(ErrorCode::ArityMismatch,
                  fmt::format("row for {} has {} condition labels, expected {}", g.target.str(),
                              row.condition.size(), g.given.size()));
    if (std::find(row.condition.begin(), row.condition.end(), kWildcard) != row.condition.end()) {
      wildcard_rows.push_back(&row);
      continue;
    }
    std::vector<std::string> cond;
    for (const auto& t : row.condition) cond.push_back(substitute(t, bindings));
    if (!g.rows.emplace(cond, instantiate_distribution(row.distribution, bindings)).second)
      throw Error(ErrorCode::InvalidKnowledgeBase,
                  fmt::format("{}: two rows share a condition after instantiation", g.target.str()));
  }
  // Explicit rows take precedence; earlier wildcard rows win overlaps.
  for (const auto* row : wildcard_rows) {
    std::vector<std::string> cond;
    for (const auto& t : row->condition) cond.push_back(t == kWildcard ? t : substitute(t, bindings));
    auto dist = instantiate_distribution(row->distribution, bindings);
    expand_wildcards(cond, schemas, [&](const std::vector<std::string>& c) { g.rows.emplace(c, dist); });
  }
  return g;
}

// --- validation ------------------------------------------------------------

namespace {

class Validator {
 public:
  explicit Validator(const KnowledgeBase& kb) : kb_(kb) {}

  std::vector<Diagnostic> run() {
    for (const auto& [name, s] : kb_.schemas) check_schema(s);
    for (const auto& a : kb_.actions) check_action(a);
    std::set<std::string> seen_persistence;
    for (const auto& p : kb_.persistence) {
      if (!seen_persistence.insert(p.predicate.predicate).second)
        report(p.loc, fmt::format("persistence {}: second persistence model for predicate {}",
                                  p.predicate.str(), p.predicate.predicate));
      check_persistence(p);
    }
    for (const auto& d : kb_.derived) check_derived(d);
    return std::move(out_);
  }

 private:
  void report(const SourceLoc& loc, std::string msg) { out_.push_back({loc, std::move(msg)}); }

  void check_schema(const PredicateSchema& s) {
    if (s.states.empty()) report(s.loc, fmt::format("predicate {}: empty state list", s.name));
    std::set<std::string> seen;
    for (const auto& st : s.states)
      if (!seen.insert(st).second)
        report(s.loc, fmt::format("predicate {}: duplicate state label {}", s.name, st));
    for (const auto& p : s.parameters)
      if (!is_variable(p)) report(s.loc, fmt::format("predicate {}: parameter {} is not a variable", s.name, p));
  }

  // Returns the schema if the pattern is well formed.
  const PredicateSchema* check_pattern(const AtomPattern& p, const SourceLoc& loc, const std::string& owner,
                                       const std::vector<std::string>* scope) {
    const auto* s = kb_.schema(p.predicate);
    if (!s) {
      report(loc, fmt::format("{}: undeclared predicate {}", owner, p.predicate));
      return nullptr;
    }
    if (s->parameters.size() != p.args.size()) {
      report(loc, fmt::format("{}: {} expects {} arguments, got {}", owner, p.predicate, s->parameters.size(),
                              p.args.size()));
      return nullptr;
    }
    if (scope)
      for (const auto& t : p.args)
        if (is_variable(t) && std::find(scope->begin(), scope->end(), t) == scope->end())
          report(loc, fmt::format("{}: variable {} in {} is not a parameter", owner, t, p.str()));
    return s;
  }

  void check_label(const Term& label, const PredicateSchema* s, const SourceLoc& loc, const std::string& owner,
                   const std::vector<std::string>* scope, bool allow_wildcard) {
    if (!s) return;
    if (label == kWildcard) {
      if (!allow_wildcard) report(loc, fmt::format("{}: wildcard not allowed here", owner));
      return;
    }
    if (is_variable(label)) {
      if (scope && std::find(scope->begin(), scope->end(), label) == scope->end())
        report(loc, fmt::format("{}: variable {} is not a parameter", owner, label));
      return;
    }
    if (!s->has_state(label))
      report(loc, fmt::format("{}: {} is not a state of {}", owner, label, s->name));
  }

  void check_distribution(const std::vector<std::pair<Term, double>>& dist, const PredicateSchema* s,
                          const SourceLoc& loc, const std::string& owner, const std::vector<std::string>* scope) {
    double sum = 0;
    for (const auto& [label, p] : dist) {
      check_label(label, s, loc, owner, scope, false);
      if (!(p >= 0.0 && p <= 1.0)) report(loc, fmt::format("{}: probability {} outside [0,1]", owner, p));
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbTolerance)
      report(loc, fmt::format("{}: row distribution sums to {}, expected 1 (normalization)", owner, sum));
  }

  void check_rows(const std::vector<RowPattern>& rows, const std::vector<const PredicateSchema*>& given,
                  const PredicateSchema* target, const std::string& owner, const std::vector<std::string>* scope) {
    std::set<std::vector<Term>> seen;
    for (const auto& r : rows) {
      if (r.condition.size() != given.size()) {
        report(r.loc, fmt::format("{}: row has {} condition labels, expected {}", owner, r.condition.size(),
                                  given.size()));
        continue;
      }
      for (std::size_t i = 0; i < given.size(); ++i) check_label(r.condition[i], given[i], r.loc, owner, scope, true);
      if (!seen.insert(r.condition).second) report(r.loc, fmt::format("{}: duplicate row condition", owner));
      check_distribution(r.distribution, target, r.loc, owner, scope);
    }
  }

  void check_effect(const EffectModel& e, const ActionModel& a, const std::string& what) {
    std::string owner = fmt::format("action {} {} {}", a.signature(), what, e.target.str());
    const auto* target = check_pattern(e.target, e.loc, owner, &a.parameters);
    if (target && target->kind == PredicateKind::Derived)
      report(e.loc, fmt::format("{}: derived predicate as action consequence; consequences must be primitive",
                                owner));
    std::vector<const PredicateSchema*> given;
    for (const auto& g : e.given) given.push_back(check_pattern(g, e.loc, owner, &a.parameters));
    check_rows(e.rows, given, target, owner, &a.parameters);
  }

  void check_action(const ActionModel& a) {
    std::string owner = "action " + a.signature();
    if (a.level < 0) report(a.loc, owner + ": negative abstraction level");
    for (const auto& p : a.parameters)
      if (!is_variable(p)) report(a.loc, fmt::format("{}: parameter {} is not a variable", owner, p));
    for (const auto& e : a.effects) check_effect(e, a, "effect");
    for (const auto& e : a.during_effects) check_effect(e, a, "during-effect");
    for (const auto& c : a.during_conditions) {
      const auto* s = check_pattern(c.atom, c.loc, owner + " during-cond", &a.parameters);
      check_label(c.state, s, c.loc, owner + " during-cond", &a.parameters, false);
      if (c.gates) {
        bool found = std::any_of(a.effects.begin(), a.effects.end(),
                                 [&](const EffectModel& e) { return e.target == *c.gates; });
        if (!found)
          report(c.loc, fmt::format("{}: during-cond gates {} which is not a consequence", owner, c.gates->str()));
      }
    }
    if (!a.duration.empty()) {
      double sum = 0;
      for (const auto& [d, p] : a.duration) {
        if (d < 0) report(a.loc, fmt::format("{}: negative duration {}", owner, d));
        if (!(p >= 0.0 && p <= 1.0)) report(a.loc, fmt::format("{}: duration probability {} outside [0,1]", owner, p));
        sum += p;
      }
      if (std::abs(sum - 1.0) > kProbTolerance)
        report(a.loc, fmt::format("{}: duration distribution sums to {}, expected 1 (normalization)", owner, sum));
    }
    int same = 0;
    for (const auto& other : kb_.actions) same += other.name == a.name && other.level == a.level;
    if (same > 1 && &a == kb_.action(a.name, a.level))
      report(a.loc, fmt::format("{}: duplicate action model at level {}", owner, a.level));
  }

  void check_persistence(const PersistenceModel& p) {
    std::string owner = "persistence " + p.predicate.str();
    const auto* s = check_pattern(p.predicate, p.loc, owner, nullptr);
    if (s && s->kind == PredicateKind::Derived)
      report(p.loc, owner + ": persistence model for a derived predicate");
    // Buckets must tile [0, inf) in order.
    if (!p.buckets.empty()) {
      long expect = 0;
      bool ok = true;
      for (std::size_t i = 0; i < p.buckets.size(); ++i) {
        const auto& b = p.buckets[i];
        if (b.lo != expect || (b.hi && *b.hi <= b.lo) || (!b.hi && i + 1 != p.buckets.size())) ok = false;
        if (b.hi) expect = *b.hi;
        else expect = -1;
      }
      if (!ok || expect != -1)
        report(p.loc, owner + ": elapsed buckets must be disjoint and cover [0,inf)");
    }
    std::set<std::pair<Term, std::optional<std::size_t>>> seen;
    std::vector<std::string> scope = p.predicate.args;
    for (const auto& r : p.rows) {
      check_label(r.previous, s, r.loc, owner, &scope, true);
      if (r.bucket && *r.bucket >= p.buckets.size())
        report(r.loc, owner + ": row refers to an undeclared elapsed bucket");
      if (!seen.insert({r.previous, r.bucket}).second) report(r.loc, owner + ": duplicate row condition");
      check_distribution(r.distribution, s, r.loc, owner, &scope);
    }
  }

  void check_derived(const DerivedDefinition& d) {
    std::string owner = "derived " + d.predicate.str();
    const auto* s = check_pattern(d.predicate, d.loc, owner, nullptr);
    if (s && s->kind != PredicateKind::Derived)
      report(d.loc, owner + ": definition target must be a derived predicate");
    std::vector<std::string> scope = d.predicate.args;
    std::vector<const PredicateSchema*> parents;
    for (const auto& p : d.parents) {
      const auto* ps = check_pattern(p, d.loc, owner, &scope);
      if (ps && ps->kind != PredicateKind::Primitive)
        report(d.loc, fmt::format("{}: parent {} must be primitive", owner, p.str()));
      parents.push_back(ps);
    }
    check_rows(d.rows, parents, s, owner, &scope);
  }

  const KnowledgeBase& kb_;
  std::vector<Diagnostic> out_;
};

}  // namespace

std::vector<Diagnostic> validate_kb(const KnowledgeBase& kb) { return Validator(kb).run(); }

}  // namespace penet
