#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

namespace oracle {

using namespace penet;

Joint Joint::project(const std::vector<std::string>& subset) const {
  std::vector<std::size_t> pos;
  for (const auto& k : subset) {
    auto it = std::find(keys.begin(), keys.end(), k);
    if (it == keys.end()) throw std::runtime_error("projection onto unknown key " + k);
    pos.push_back(static_cast<std::size_t>(it - keys.begin()));
  }
  Joint out;
  out.keys = subset;
  for (const auto& [v, p] : probs) {
    std::vector<std::string> w;
    for (auto i : pos) w.push_back(v[i]);
    out.probs[w] += p;
  }
  return out;
}

double Joint::probability(const std::map<std::string, std::string>& assignment) const {
  double total = 0;
  for (const auto& [v, p] : probs) {
    bool ok = true;
    for (std::size_t i = 0; i < keys.size() && ok; ++i) {
      auto it = assignment.find(keys[i]);
      if (it != assignment.end() && it->second != v[i]) ok = false;
    }
    if (ok) total += p;
  }
  return total;
}

double max_difference(const Joint& a, const Joint& b) {
  if (a.keys != b.keys) throw std::runtime_error("joints over different keys");
  double worst = 0;
  for (const auto& [v, p] : a.probs) {
    auto it = b.probs.find(v);
    worst = std::max(worst, std::abs(p - (it == b.probs.end() ? 0.0 : it->second)));
  }
  for (const auto& [v, p] : b.probs)
    if (!a.probs.count(v)) worst = std::max(worst, std::abs(p));
  return worst;
}

std::vector<GroundAtom> net_atoms(const PENet& net) {
  std::vector<GroundAtom> out;
  for (const auto& n : net.nodes()) {
    if (n.id.role != NodeRole::Atom || n.id.situation != net.situations().front()) continue;
    std::istringstream in(n.id.subject.substr(1, n.id.subject.size() - 2));
    GroundAtom a;
    in >> a.predicate;
    for (std::string w; in >> w;) a.args.push_back(w);
    out.push_back(a);
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

using State = std::map<GroundAtom, std::string>;

struct Step {
  PlanStep step;
  std::vector<GroundEffect> effects;
  std::vector<GroundEffect> during_effects;
  struct Cond {
    GroundAtom atom;
    std::string state;
    std::optional<GroundAtom> gates;
  };
  std::vector<Cond> conditions;
  std::map<long, double> duration;
};

std::vector<Step> ground(const Plan& flat, const KnowledgeBase& kb) {
  std::vector<Step> out;
  for (const auto& s : flat.steps) {
    const auto* m = kb.action(s.action, s.level);
    if (!m) throw std::runtime_error("oracle: no model for " + s.action);
    Step g{s, {}, {}, {}, {}};
    auto b = bind_parameters(m->parameters, s.args);
    for (const auto& e : m->effects) g.effects.push_back(instantiate_effect(kb, e, b));
    for (const auto& e : m->during_effects) g.during_effects.push_back(instantiate_effect(kb, e, b));
    for (const auto& c : m->during_conditions) {
      Step::Cond d{instantiate(c.atom, b), substitute(c.state, b), std::nullopt};
      if (c.gates) d.gates = instantiate(*c.gates, b);
      g.conditions.push_back(d);
    }
    for (const auto& [d, p] : m->duration) g.duration[d] += p;
    out.push_back(std::move(g));
  }
  return out;
}

struct Residual {
  ResidualEffect r;
  std::vector<GroundEffect> effects;
};

std::vector<Residual> ground_residuals(const Plan& flat, const KnowledgeBase& kb) {
  std::vector<Residual> out;
  for (const auto& r : flat.residuals) {
    const auto* m = kb.action(r.action, r.level);
    auto b = bind_parameters(m->parameters, r.args);
    Residual g{r, {}};
    for (const auto& e : m->effects) {
      auto ge = instantiate_effect(kb, e, b);
      if (std::find(r.targets.begin(), r.targets.end(), ge.target) != r.targets.end()) g.effects.push_back(ge);
    }
    out.push_back(std::move(g));
  }
  return out;
}

const Distribution* lookup(const GroundEffect& e, const State& before) {
  std::vector<std::string> labels;
  for (const auto& g : e.given) {
    auto it = before.find(g);
    if (it == before.end()) return nullptr;
    labels.push_back(it->second);
  }
  return e.row(labels);
}

Distribution persistence(const KnowledgeBase& kb, const GroundAtom& a, const std::string& prev,
                         std::optional<long> elapsed) {
  Distribution identity{{prev, 1.0}};
  const auto* pm = kb.persistence_for(a.predicate);
  Bindings b;
  if (!pm || !unify(pm->predicate, a, b)) return identity;
  if (elapsed && *elapsed < 0) return identity;
  std::optional<std::size_t> bucket;
  if (elapsed)
    for (std::size_t i = 0; i < pm->buckets.size(); ++i)
      if (pm->buckets[i].contains(*elapsed)) bucket = i;
  auto find = [&](bool wildcard, bool bucketed) -> const PersistenceRow* {
    for (const auto& r : pm->rows) {
      auto label = substitute(r.previous, b);
      if (wildcard ? label != "*" : label != prev) continue;
      if (bucketed ? r.bucket != bucket : r.bucket.has_value()) continue;
      return &r;
    }
    return nullptr;
  };
  const PersistenceRow* row = nullptr;
  if (elapsed && bucket) {
    row = find(false, true);
    if (!row) row = find(true, true);
  }
  if (!row) row = find(false, false);
  if (!row) row = find(true, false);
  if (!row) return identity;
  return instantiate_distribution(row->distribution, b);
}

bool active(const std::vector<Guard>& guards, const std::map<std::string, std::string>& sel) {
  for (const auto& g : guards) {
    auto it = sel.find(g.group);
    if (it == sel.end() || it->second != g.alternative) return false;
  }
  return true;
}

// Cartesian product of independent per-variable distributions.
template <class Key>
std::vector<std::pair<std::map<Key, std::string>, double>> product(const std::vector<std::pair<Key, Distribution>>& vars) {
  std::vector<std::pair<std::map<Key, std::string>, double>> out{{{}, 1.0}};
  for (const auto& [k, d] : vars) {
    std::vector<std::pair<std::map<Key, std::string>, double>> next;
    for (const auto& [m, p] : out)
      for (const auto& [label, q] : d) {
        if (q <= 0) continue;
        auto m2 = m;
        m2[k] = label;
        next.emplace_back(std::move(m2), p * q);
      }
    out = std::move(next);
  }
  return out;
}

Distribution derived_dist(const KnowledgeBase& kb, const GroundAtom& a, const State& now) {
  Bindings b;
  const auto* def = kb.derived_for(a, &b);
  if (!def) throw std::runtime_error("oracle: no derived definition for " + a.str());
  auto ge = instantiate_effect(kb, EffectModel{def->predicate, def->parents, def->rows, {}}, b);
  const auto* d = lookup(ge, now);
  if (!d) throw std::runtime_error("oracle: derived definition of " + a.str() + " has no row");
  return *d;
}

Distribution initial_dist(const Plan& flat, const KnowledgeBase& kb, const GroundAtom& a) {
  auto it = flat.initial_state.find(a);
  if (it != flat.initial_state.end()) return it->second;
  return {{kb.schema(a.predicate)->states.front(), 1.0}};
}

struct World {
  std::vector<State> slots;
  std::map<std::string, std::string> sel;
  double p = 1;
};

}  // namespace

Joint trajectories(const Plan& plan, const KnowledgeBase& kb, const std::vector<GroundAtom>& atoms,
                   DuringFailure failure, const TieBreak& tie) {
  const Plan flat = flatten_hierarchy(plan, kb);
  const auto order = linearize(flat, tie);
  std::map<std::string, std::size_t> rank;
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;
  const auto steps = ground(flat, kb);
  const auto residuals = ground_residuals(flat, kb);

  std::vector<GroundAtom> prim, derived;
  for (const auto& a : atoms) (kb.schema(a.predicate)->kind == PredicateKind::Primitive ? prim : derived).push_back(a);

  auto expand_derived_and_selection = [&](std::vector<World> worlds, std::size_t k) {
    std::vector<World> out;
    for (auto& w : worlds) {
      std::vector<std::pair<GroundAtom, Distribution>> vars;
      for (const auto& a : derived) vars.emplace_back(a, derived_dist(kb, a, w.slots[k]));
      for (auto& [m, q] : product(vars)) {
        World w2 = w;
        for (auto& [a, s] : m) w2.slots[k][a] = s;
        w2.p *= q;
        out.push_back(std::move(w2));
      }
    }
    // Selection nodes in plan order; conditions on other groups refer to earlier ones.
    for (const auto& g : flat.contingencies) {
      if (rank.at(g.boundary) != k) continue;
      std::vector<World> next;
      for (auto& w : out) {
        std::vector<std::string> labels;
        for (const auto& c : g.conditions) labels.push_back(c.atom ? w.slots[k].at(*c.atom) : w.sel.at(c.group));
        Distribution d{{g.fallback, 1.0}};
        for (const auto& row : g.selector) {
          bool match = row.condition.size() == labels.size();
          for (std::size_t i = 0; match && i < labels.size(); ++i)
            match = row.condition[i] == "*" || row.condition[i] == labels[i];
          if (match) {
            d = row.distribution;
            break;
          }
        }
        for (const auto& [alt, q] : d) {
          if (q <= 0) continue;
          World w2 = w;
          w2.sel[g.name] = alt;
          w2.p *= q;
          next.push_back(std::move(w2));
        }
      }
      out = std::move(next);
    }
    return out;
  };

  std::vector<World> worlds;
  {
    std::vector<std::pair<GroundAtom, Distribution>> vars;
    for (const auto& a : prim) vars.emplace_back(a, initial_dist(flat, kb, a));
    for (auto& [m, q] : product(vars)) worlds.push_back({{State(m.begin(), m.end())}, {}, q});
    worlds = expand_derived_and_selection(std::move(worlds), 0);
  }

  for (std::size_t k = 1; k < order.size(); ++k) {
    std::vector<World> next;
    for (auto& w : worlds) {
      const auto& before = w.slots[k - 1];
      std::vector<std::pair<GroundAtom, Distribution>> vars;
      for (const auto& a : prim) {
        std::optional<Distribution> d;
        for (const auto& st : steps) {
          if (rank.at(st.step.end) != k || !active(st.step.guards, w.sel)) continue;
          const auto s = rank.at(st.step.start);
          for (const auto& e : st.effects) {
            if (e.target != a) continue;
            bool gated_ok = true;
            for (const auto& c : st.conditions) {
              bool relevant = failure == DuringFailure::NullifyAction || !c.gates || *c.gates == a;
              if (!relevant) continue;
              for (auto j = s + 1; j < k; ++j)
                if (w.slots[j].at(c.atom) != c.state) gated_ok = false;
            }
            if (!gated_ok) continue;
            if (const auto* r = lookup(e, before)) d = *r;
          }
        }
        if (!d)
          for (const auto& r : residuals) {
            if (d || rank.at(r.r.end) != k || !active(r.r.guards, w.sel)) continue;
            for (const auto& e : r.effects)
              if (!d && e.target == a)
                if (const auto* row = lookup(e, before)) d = *row;
          }
        for (const auto& st : steps) {
          const auto s = rank.at(st.step.start), e = rank.at(st.step.end);
          if (!(s < k && k < e) || !active(st.step.guards, w.sel)) continue;
          for (const auto& eff : st.during_effects)
            if (eff.target == a)
              if (const auto* r = lookup(eff, before)) d = *r;
        }
        if (!d) d = persistence(kb, a, before.at(a), std::nullopt);
        vars.emplace_back(a, *d);
      }
      for (auto& [m, q] : product(vars)) {
        World w2 = w;
        w2.slots.emplace_back(m.begin(), m.end());
        w2.p *= q;
        next.push_back(std::move(w2));
      }
    }
    worlds = expand_derived_and_selection(std::move(next), k);
  }

  Joint out;
  for (std::size_t k = 0; k < order.size(); ++k)
    for (const auto& a : atoms) out.keys.push_back(a.str() + "@S" + std::to_string(k));
  for (const auto& g : flat.contingencies) out.keys.push_back("select[" + g.name + "]@S" + std::to_string(rank.at(g.boundary)));
  for (const auto& w : worlds) {
    std::vector<std::string> v;
    for (std::size_t k = 0; k < order.size(); ++k)
      for (const auto& a : atoms) v.push_back(w.slots[k].at(a));
    for (const auto& g : flat.contingencies) v.push_back(w.sel.at(g.name));
    out.probs[v] += w.p;
  }
  return out;
}

Joint timed_final(const Plan& plan, const KnowledgeBase& kb, const std::vector<GroundAtom>& atoms) {
  const Plan flat = flatten_hierarchy(plan, kb);
  if (!flat.contingencies.empty()) throw std::runtime_error("timed oracle: contingencies not supported");
  const auto order = linearize(flat);
  std::map<std::string, std::size_t> rank;
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;
  const auto steps = ground(flat, kb);
  const auto edges = precedence_edges(flat);

  std::vector<GroundAtom> prim;
  for (const auto& a : atoms)
    if (kb.schema(a.predicate)->kind == PredicateKind::Primitive) prim.push_back(a);

  Joint out;
  for (const auto& a : atoms) out.keys.push_back(a.str());

  std::vector<long> dur(steps.size());
  std::function<void(std::size_t, double)> over = [&](std::size_t i, double pd) {
    if (i < steps.size()) {
      for (const auto& [d, p] : steps[i].duration) {
        dur[i] = d;
        over(i + 1, pd * p);
      }
      return;
    }
    std::vector<long> t(order.size(), 0);
    for (std::size_t r = 1; r < order.size(); ++r) {
      for (const auto& [a, b] : edges)
        if (rank.at(b) == r) t[r] = std::max(t[r], t[rank.at(a)]);
      for (std::size_t s = 0; s < steps.size(); ++s)
        if (rank.at(steps[s].step.end) == r) t[r] = std::max(t[r], t[rank.at(steps[s].step.start)] + dur[s]);
    }
    std::vector<std::size_t> events(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) events[r] = r;
    std::stable_sort(events.begin(), events.end(), [&](auto a, auto b) { return t[a] < t[b]; });

    std::vector<std::pair<State, double>> states;
    {
      std::vector<std::pair<GroundAtom, Distribution>> vars;
      for (const auto& a : prim) vars.emplace_back(a, initial_dist(flat, kb, a));
      for (auto& [m, q] : product(vars)) states.emplace_back(State(m.begin(), m.end()), q);
    }
    for (std::size_t i = 1; i < events.size(); ++i) {
      const auto r = events[i];
      const long elapsed = t[r] - t[events[i - 1]];
      std::vector<std::pair<State, double>> next;
      for (const auto& [before, p] : states) {
        std::vector<std::pair<GroundAtom, Distribution>> vars;
        for (const auto& a : prim) {
          std::optional<Distribution> d;
          for (const auto& st : steps) {
            if (rank.at(st.step.end) != r) continue;
            for (const auto& e : st.effects)
              if (e.target == a)
                if (const auto* row = lookup(e, before)) d = *row;
          }
          if (!d) d = persistence(kb, a, before.at(a), elapsed);
          vars.emplace_back(a, *d);
        }
        for (auto& [m, q] : product(vars)) next.emplace_back(State(m.begin(), m.end()), p * q);
      }
      states = std::move(next);
    }
    for (auto& [s, p] : states) {
      for (const auto& a : atoms)
        if (kb.schema(a.predicate)->kind != PredicateKind::Primitive)
          throw std::runtime_error("timed oracle: derived atoms not supported");
      std::vector<std::string> v;
      for (const auto& a : atoms) v.push_back(s.at(a));
      out.probs[v] += p * pd;
    }
  };
  over(0, 1.0);
  return out;
}

Joint net_joint(const PENet& net, const std::vector<std::string>& keys) {
  // Ancestral closure of the requested keys.
  std::set<std::string> needed;
  std::vector<std::string> stack = keys;
  while (!stack.empty()) {
    auto k = stack.back();
    stack.pop_back();
    if (!needed.insert(k).second) continue;
    for (const auto& p : net.node(k).parents) stack.push_back(p);
  }
  std::vector<const Node*> order;
  for (auto i : net.topological_order())
    if (needed.count(net.nodes()[i].key())) order.push_back(&net.nodes()[i]);
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]->key()] = i;

  Joint out;
  out.keys = keys;
  std::vector<int> value(order.size(), -1);
  std::function<void(std::size_t, double)> walk = [&](std::size_t i, double p) {
    if (i == order.size()) {
      std::vector<std::string> v;
      for (const auto& k : keys) {
        const auto* n = order[pos.at(k)];
        v.push_back(n->states[static_cast<std::size_t>(value[pos.at(k)])]);
      }
      out.probs[v] += p;
      return;
    }
    const auto& n = *order[i];
    ParentCombo combo;
    for (const auto& par : n.parents) combo.push_back(value[pos.at(par)]);
    auto it = n.rows.find(combo);
    if (it == n.rows.end()) throw std::runtime_error("net_joint: missing row in " + n.key());
    for (std::size_t s = 0; s < n.states.size(); ++s) {
      const double q = it->second.probs[s];
      if (q <= 0) continue;
      value[i] = static_cast<int>(s);
      walk(i + 1, p * q);
    }
    value[i] = -1;
  };
  walk(0, 1.0);
  return out;
}

}  // namespace oracle
