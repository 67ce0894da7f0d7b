#include "penet/construct.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <tuple>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "penet/error.hpp"

namespace penet {

namespace {

constexpr std::string_view kHeld = "held";
constexpr std::string_view kFailed = "failed";
constexpr std::string_view kNegative = "negative";
constexpr std::string_view kNonNegative = "nonnegative";

std::string other() { return std::string(kOther); }

}  // namespace

bool SituationPlan::is_split(const std::string& boundary) const {
  auto it = event_slots.find(boundary);
  return it != event_slots.end() && it->second.size() > 1;
}

std::size_t SituationPlan::slot_of(const std::string& boundary) const {
  auto it = event_slots.find(boundary);
  if (it == event_slots.end()) throw Error(ErrorCode::Internal, "no situation for boundary " + boundary);
  return it->second.front();
}

// --- grounding ---------------------------------------------------------------

namespace {

std::vector<GroundStep> ground_steps(const Plan& flat, const KnowledgeBase& kb, bool need_duration) {
  std::vector<GroundStep> out;
  for (const auto& s : flat.steps) {
    GroundStep g;
    g.step = s;
    g.model = kb.action(s.action, s.level);
    if (!g.model) throw Error(ErrorCode::UnknownAction, fmt::format("step {}: no model for {}", s.id, s.action));
    auto b = bind_parameters(g.model->parameters, s.args);
    for (const auto& e : g.model->effects) {
      auto ge = instantiate_effect(kb, e, b);
      const auto* schema = kb.schema(ge.target.predicate);
      if (schema && schema->kind != PredicateKind::Primitive)
        throw Error(ErrorCode::InvalidKnowledgeBase,
                    fmt::format("{}: consequence {} is derived; consequences must be primitive", s.call(),
                                ge.target.str()));
      g.effects.push_back(std::move(ge));
    }
    for (const auto& c : g.model->during_conditions) {
      GroundStep::DuringCheck d{instantiate(kb, c.atom, b), substitute(c.state, b), std::nullopt};
      if (c.gates) d.gates = instantiate(kb, *c.gates, b);
      g.conditions.push_back(std::move(d));
    }
    for (const auto& e : g.model->during_effects) g.during_effects.push_back(instantiate_effect(kb, e, b));
    for (const auto& [d, p] : g.model->duration) g.duration[d] += p;
    if (need_duration && g.duration.empty())
      throw Error(ErrorCode::MissingDuration, fmt::format("step {} {} has no duration model", s.id, s.call()));
    out.push_back(std::move(g));
  }
  return out;
}

// --- schedule ----------------------------------------------------------------

struct TimingWorlds {
  std::vector<std::vector<long>> times;  // per world, indexed by rank
};

std::vector<std::vector<bool>> reachability(const std::vector<std::string>& order,
                                            const std::vector<std::pair<std::string, std::string>>& edges) {
  std::map<std::string, std::size_t> rank;
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;
  const auto n = order.size();
  std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
  std::vector<std::vector<std::size_t>> succ(n);
  for (const auto& [a, b] : edges) succ[rank.at(a)].push_back(rank.at(b));
  // Ranks are a topological order, so one backward sweep closes the relation.
  for (std::size_t i = n; i-- > 0;)
    for (auto j : succ[i]) {
      reach[i][j] = true;
      for (std::size_t k = 0; k < n; ++k)
        if (reach[j][k]) reach[i][k] = true;
    }
  return reach;
}

TimingWorlds timing_worlds(const Plan& flat, const std::vector<GroundStep>& steps, const SituationPlan& sp,
                           std::size_t limit) {
  // Selection domains of the groups that guard some step.
  std::vector<std::string> groups;
  std::map<std::string, std::vector<std::string>> domain;
  for (const auto& g : steps)
    for (const auto& guard : g.step.guards) {
      if (domain.count(guard.group)) continue;
      groups.push_back(guard.group);
      std::set<std::string> d;
      if (const auto* grp = flat.group(guard.group)) {
        d.insert(grp->alternatives.begin(), grp->alternatives.end());
        d.insert(grp->fallback);
        for (const auto& row : grp->selector)
          for (const auto& [label, p] : row.distribution)
            if (p > 0) d.insert(label);
      }
      d.insert(guard.alternative);
      domain[guard.group] = {d.begin(), d.end()};
    }

  double count = 1;
  for (const auto& s : steps) count *= static_cast<double>(s.duration.size());
  for (const auto& g : groups) count *= static_cast<double>(domain[g].size());
  if (count > static_cast<double>(limit))
    throw Error(ErrorCode::Unsupported,
                fmt::format("{} duration/selection combinations exceed the splitting limit of {}", count, limit));

  const auto n = sp.boundary_order.size();
  std::vector<std::vector<std::size_t>> preds(n);
  for (const auto& [a, b] : precedence_edges(flat)) preds[sp.rank.at(b)].push_back(sp.rank.at(a));

  TimingWorlds out;
  std::vector<long> duration(steps.size(), 0);
  std::map<std::string, std::string> choice;

  std::function<void(std::size_t)> over_groups;
  std::function<void(std::size_t)> over_steps = [&](std::size_t i) {
    if (i == steps.size()) {
      over_groups(0);
      return;
    }
    for (const auto& [d, p] : steps[i].duration) {
      if (p <= 0) continue;
      duration[i] = d;
      over_steps(i + 1);
    }
  };
  over_groups = [&](std::size_t gi) {
    if (gi < groups.size()) {
      for (const auto& alt : domain[groups[gi]]) {
        choice[groups[gi]] = alt;
        over_groups(gi + 1);
      }
      return;
    }
    std::vector<long> t(n, 0);
    for (std::size_t r = 1; r < n; ++r) {
      long v = 0;
      for (auto p : preds[r]) v = std::max(v, t[p]);
      for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto& st = steps[i].step;
        if (sp.rank.at(st.end) != r) continue;
        bool active = std::all_of(st.guards.begin(), st.guards.end(),
                                  [&](const Guard& g) { return choice[g.group] == g.alternative; });
        if (active) v = std::max(v, t[sp.rank.at(st.start)] + duration[i]);
      }
      t[r] = v;
    }
    out.times.push_back(std::move(t));
  };
  over_steps(0);
  std::sort(out.times.begin(), out.times.end());
  out.times.erase(std::unique(out.times.begin(), out.times.end()), out.times.end());
  return out;
}

// Boundary ranks in the order an execution visits them.
std::vector<std::size_t> actual_order(const std::vector<long>& t) {
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return t[a] < t[b]; });
  return order;
}

struct Insertion {
  std::size_t event;
  std::size_t at;
};

// Greedy earliest embedding of `order` into the slot sequence. With
// `insertion` set, the first conflict is reported instead of failing.
std::optional<std::vector<std::size_t>> embed(const std::vector<std::size_t>& order,
                                              const std::vector<std::size_t>& slots,
                                              std::optional<Insertion>* insertion) {
  std::vector<std::size_t> placed(order.size(), 0);
  std::vector<std::size_t> position(order.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;
  std::size_t pos = 0;
  for (std::size_t idx = 1; idx < order.size(); ++idx) {
    const auto e = order[idx];
    std::size_t q = pos + 1;
    while (q < slots.size() && slots[q] != e) ++q;
    if (q == slots.size()) {
      if (insertion) *insertion = Insertion{e, pos + 1};
      return std::nullopt;
    }
    if (insertion) {
      for (std::size_t j = pos + 1; j < q; ++j) {
        const auto f = slots[j];
        if (position[f] <= idx) continue;
        bool later_slot = false;
        for (std::size_t k = q + 1; k < slots.size(); ++k)
          if (slots[k] == f) later_slot = true;
        if (!later_slot) {
          *insertion = Insertion{e, j};
          return std::nullopt;
        }
      }
    }
    placed[e] = q;
    pos = q;
  }
  return placed;
}

std::string slot_suffix(std::size_t i) {
  std::string s;
  do {
    s.insert(s.begin(), static_cast<char>('a' + i % 26));
    i /= 26;
  } while (i-- > 0);
  return s;
}

}  // namespace

SituationPlan make_schedule(const Plan& flat, const std::vector<GroundStep>& steps, const BuildOptions& opts) {
  SituationPlan sp;
  sp.initial = flat.initial_boundary;
  sp.boundary_order = linearize(flat, opts.tie_break);
  if (sp.boundary_order.empty() || sp.boundary_order.front() != sp.initial)
    throw Error(ErrorCode::InvalidPlan, fmt::format("initial boundary {} is not first in the order", sp.initial));
  const auto n = sp.boundary_order.size();
  for (std::size_t i = 0; i < n; ++i) sp.rank[sp.boundary_order[i]] = i;

  std::vector<std::size_t> slots(n);
  std::iota(slots.begin(), slots.end(), 0);

  TimingWorlds worlds;
  if (opts.clock_enabled) {
    worlds = timing_worlds(flat, steps, sp, opts.max_timing_worlds);

    const auto reach = reachability(sp.boundary_order, precedence_edges(flat));
    auto before_eq = [&](const std::string& a, const std::string& b) {
      return a == b || reach[sp.rank.at(a)][sp.rank.at(b)];
    };
    std::size_t overlapping = 0;
    for (std::size_t i = 0; i < steps.size(); ++i)
      for (std::size_t j = i + 1; j < steps.size(); ++j) {
        const auto& a = steps[i].step;
        const auto& b = steps[j].step;
        if (!before_eq(a.end, b.start) && !before_eq(b.end, a.start)) ++overlapping;
      }
    const std::size_t cap = std::max<std::size_t>(1, overlapping) * std::max<std::size_t>(1, n);

    bool changed = true;
    while (changed) {
      changed = false;
      for (const auto& t : worlds.times) {
        std::optional<Insertion> ins;
        if (embed(actual_order(t), slots, &ins)) continue;
        if (++sp.split_insertions > cap)
          throw Error(ErrorCode::Internal, fmt::format("situation splitting did not settle after {} insertions", cap));
        slots.insert(slots.begin() + static_cast<std::ptrdiff_t>(ins->at), ins->event);
        changed = true;
        break;
      }
    }
  }

  std::map<std::size_t, std::size_t> seen;
  std::map<std::size_t, std::size_t> total;
  for (auto e : slots) ++total[e];
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto e = slots[k];
    const auto& b = sp.boundary_order[e];
    std::string name = fmt::format("S{}", e);
    if (total[e] > 1) name += slot_suffix(seen[e]++);
    sp.slots.push_back({name, b});
    sp.event_slots[b].push_back(k);
  }

  if (!opts.clock_enabled) return sp;

  // Pairs whose time order varies between executions.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 1; a < n; ++a)
    for (std::size_t b = 1; b < a; ++b) {
      bool neg = false, nonneg = false;
      for (const auto& t : worlds.times) (t[a] < t[b] ? neg : nonneg) = true;
      if (neg && nonneg) {
        pairs.emplace_back(a, b);
        sp.uncertain_pairs.emplace_back(sp.boundary_order[a], sp.boundary_order[b]);
      }
    }

  for (std::size_t e = 1; e < n; ++e) {
    const auto& b = sp.boundary_order[e];
    if (!sp.is_split(b)) continue;
    std::map<std::vector<bool>, std::size_t> realized;
    for (const auto& t : worlds.times) {
      auto placed = embed(actual_order(t), slots, nullptr);
      if (!placed) throw Error(ErrorCode::Internal, "execution does not embed into the split schedule");
      std::vector<bool> signs;
      for (const auto& [x, y] : pairs) signs.push_back(t[x] < t[y]);
      realized[signs] = (*placed)[e];
    }
    std::vector<std::size_t> keep(pairs.size());
    std::iota(keep.begin(), keep.end(), 0);
    auto project = [](const std::vector<bool>& v, const std::vector<std::size_t>& idx) {
      std::vector<bool> out;
      for (auto i : idx) out.push_back(v[i]);
      return out;
    };
    auto consistent = [&](const std::vector<std::size_t>& idx) {
      std::map<std::vector<bool>, std::size_t> m;
      for (const auto& [v, slot] : realized) {
        auto [it, fresh] = m.emplace(project(v, idx), slot);
        if (!fresh && it->second != slot) return false;
      }
      return true;
    };
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      auto trial = keep;
      std::erase(trial, i);
      if (consistent(trial)) keep = trial;
    }
    sp.occupancy_pairs[b] = keep;
    auto& table = sp.occupancy[b];
    for (const auto& [v, slot] : realized) table[project(v, keep)] = slot;
  }
  return sp;
}

// --- construction ------------------------------------------------------------

namespace {

enum class NodeType { InitialAtom, Atom, Derived, Selection, Gate, InitialClock, EventClock, SlotClock, RelEnd };

class Lookup {
 public:
  Lookup(const std::vector<std::string>& keys, const std::vector<std::string>& labels) : keys_(keys), labels_(labels) {}
  const std::string& operator()(const std::string& key) const {
    for (std::size_t i = 0; i < keys_.size(); ++i)
      if (keys_[i] == key) return labels_[i];
    throw Error(ErrorCode::Internal, "lookup of " + key + " outside the fragment parents");
  }

 private:
  const std::vector<std::string>& keys_;
  const std::vector<std::string>& labels_;
};

struct GateCheck {
  std::string cond;
  std::string tracker;  // empty when the condition spans one situation
  std::string required;
};

struct Contribution {
  std::string source;
  const GroundEffect* effect = nullptr;
  std::vector<std::string> given;
  std::vector<std::pair<std::string, std::string>> guards;  // selection node, alternative
  std::vector<GateCheck> gates;

  std::vector<std::string> parents() const {
    std::vector<std::string> out;
    auto add = [&](const std::string& k) {
      if (!k.empty() && std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
    };
    for (const auto& g : given) add(g);
    for (const auto& g : guards) add(g.first);
    for (const auto& g : gates) {
      add(g.cond);
      add(g.tracker);
    }
    return out;
  }

  const Distribution* apply(const Lookup& at) const {
    for (const auto& [key, alt] : guards)
      if (at(key) != alt) return nullptr;
    for (const auto& g : gates) {
      if (at(g.cond) != g.required) return nullptr;
      if (!g.tracker.empty() && at(g.tracker) != kHeld) return nullptr;
    }
    std::vector<std::string> labels;
    for (const auto& g : given) labels.push_back(at(g));
    return effect->row(labels);
  }
};

struct TimedStep {
  std::string start_time;
  std::vector<std::pair<std::string, std::string>> guards;
  const std::map<long, double>* duration = nullptr;
};

struct NodePlan {
  NodeId id;
  NodeKind kind = NodeKind::Primitive;
  NodeType type = NodeType::Atom;
  std::vector<std::string> parents;
  std::vector<std::string> preferred;  // state order hint
  std::vector<std::string> states;
  std::map<std::string, std::string> merged;
  std::map<std::string, double> mass;
  std::set<std::string> protect;
  std::size_t cap = 0;

  GroundAtom atom;
  std::size_t slot = 0;
  std::string prev;
  std::vector<Contribution> actions, during, residuals;
  const PersistenceModel* persistence = nullptr;
  Bindings persistence_bindings;
  std::string clock_prev, clock_now;
  std::string event;
  std::vector<std::string> occupancy_keys;
  Distribution initial;

  const GroundEffect* derived = nullptr;
  std::vector<std::string> derived_parents;

  const ContingencyGroup* group = nullptr;
  std::vector<std::string> condition_keys;

  std::string gate_cond, gate_tracker, gate_required;

  std::vector<std::string> pred_times;
  std::vector<TimedStep> timed;
  std::string end_time;
  std::string time_a, time_b;

  void add_parent(const std::string& k) {
    if (!k.empty() && std::find(parents.begin(), parents.end(), k) == parents.end()) parents.push_back(k);
  }
  std::string compact(const std::string& label) const {
    auto it = merged.find(label);
    return it == merged.end() ? label : it->second;
  }
  Distribution compact(const Distribution& d) const {
    Distribution out;
    for (const auto& [l, p] : d) {
      // A zero entry must not bring back a label enumeration left out.
      if (p == 0 && std::find(states.begin(), states.end(), compact(l)) == states.end()) continue;
      out[compact(l)] += p;
    }
    return out;
  }
};

enum class PersistKind { Model, NegativeElapsed, Default };

long to_time(const std::string& label) { return std::stol(label); }

}  // namespace

struct Construction::Impl {
  const KnowledgeBase& kb;
  BuildOptions opts;
  Plan flat;
  std::vector<GroundStep> steps;
  std::vector<GroundResidual> residuals;
  SituationPlan sp;
  PENet net;

  std::vector<NodePlan> plans;
  std::map<std::string, std::size_t> index;
  std::set<GroundAtom> primitive_atoms, derived_atoms;
  std::map<GroundAtom, GroundEffect> derived_models;
  std::vector<std::pair<std::size_t, std::size_t>> action_list, during_list, residual_list;
  std::map<std::string, std::vector<std::size_t>> gates_of_step;  // step id -> gate plans
  std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> during_of_step;
  std::map<std::string, std::vector<std::string>> states;
  bool enumerated = false;

  Impl(const Plan& plan, const KnowledgeBase& k, BuildOptions o) : kb(k), opts(std::move(o)) {
    if (opts.state_cap < 2 || opts.clock_cap < 2)
      throw Error(ErrorCode::InvalidPlan, "state caps must be at least 2");
    flat = flatten_hierarchy(plan, kb);
    steps = ground_steps(flat, kb, opts.clock_enabled);
    for (const auto& r : flat.residuals) {
      GroundResidual gr{r, {}};
      const auto* model = kb.action(r.action, r.level);
      if (!model) throw Error(ErrorCode::UnknownAction, "no model for " + r.action);
      auto b = bind_parameters(model->parameters, r.args);
      for (const auto& e : model->effects) {
        auto ge = instantiate_effect(kb, e, b);
        if (std::find(r.targets.begin(), r.targets.end(), ge.target) != r.targets.end())
          gr.effects.push_back(std::move(ge));
      }
      residuals.push_back(std::move(gr));
    }
    sp = make_schedule(flat, steps, opts);
    std::vector<std::string> names;
    for (const auto& s : sp.slots) names.push_back(s.name);
    net = PENet(names);
    plan_nodes();
  }

  const std::string& sit(std::size_t slot) const { return sp.slots[slot].name; }

  std::string atom_key(const GroundAtom& a, std::size_t slot) const { return NodeId::atom(a, sit(slot)).key(); }

  std::string clock_key(std::size_t slot) const { return "clock@" + sit(slot); }

  std::string time_key(const std::string& boundary) const {
    if (sp.is_split(boundary)) return "endtime[" + boundary + "]@" + sit(sp.slot_of(boundary));
    return clock_key(sp.slot_of(boundary));
  }

  std::string relend_key(const std::pair<std::string, std::string>& pr) const {
    return fmt::format("relend[{}-{}]@{}", pr.first, pr.second, sit(sp.slot_of(pr.first)));
  }

  std::string select_key(const std::string& group) const {
    const auto* g = flat.group(group);
    if (!g) throw Error(ErrorCode::UnknownConditionNode, "no selection node for group " + group);
    return "select[" + group + "]@" + sit(sp.slot_of(g->boundary));
  }

  NodePlan& add(NodeId id, NodeKind kind, NodeType type) {
    auto key = id.key();
    if (index.count(key)) return plans[index[key]];
    NodePlan p;
    p.id = std::move(id);
    p.kind = kind;
    p.type = type;
    plans.push_back(std::move(p));
    index[key] = plans.size() - 1;
    return plans.back();
  }

  NodePlan& plan_of(const std::string& key) {
    auto it = index.find(key);
    if (it == index.end()) throw Error(ErrorCode::Internal, "unplanned node " + key);
    return plans[it->second];
  }

  const PredicateSchema& schema_of(const GroundAtom& a) const {
    const auto* s = kb.schema(a.predicate);
    if (!s) throw Error(ErrorCode::UnknownPredicate, a.str());
    if (s->parameters.size() != a.args.size())
      throw Error(ErrorCode::ArityMismatch, fmt::format("{} expects {} arguments", a.predicate, s->parameters.size()));
    return *s;
  }

  void collect_atoms() {
    std::vector<GroundAtom> seen;
    auto note = [&](const GroundAtom& a) { seen.push_back(a); };
    for (const auto& [a, d] : flat.initial_state) note(a);
    for (const auto& [a, s] : flat.goals) note(a);
    for (const auto& a : flat.tracked) note(a);
    for (const auto& g : steps) {
      for (const auto& e : g.effects) {
        note(e.target);
        for (const auto& x : e.given) note(x);
      }
      for (const auto& e : g.during_effects) {
        note(e.target);
        for (const auto& x : e.given) note(x);
      }
      for (const auto& c : g.conditions) note(c.atom);
    }
    for (const auto& r : residuals)
      for (const auto& e : r.effects) {
        note(e.target);
        for (const auto& x : e.given) note(x);
      }
    for (const auto& g : flat.contingencies)
      for (const auto& c : g.conditions)
        if (c.atom) note(*c.atom);

    for (const auto& a : seen)
      (schema_of(a).kind == PredicateKind::Primitive ? primitive_atoms : derived_atoms).insert(a);

    auto model_for = [&](const GroundAtom& a) {
      Bindings b;
      const auto* def = kb.derived_for(a, &b);
      if (!def) throw Error(ErrorCode::InvalidKnowledgeBase, "no derived definition for " + a.str());
      EffectModel em{def->predicate, def->parents, def->rows, def->loc};
      auto ge = instantiate_effect(kb, em, b);
      ge.target = a;
      return ge;
    };
    for (const auto& a : derived_atoms) {
      auto ge = model_for(a);
      for (const auto& p : ge.given) {
        if (schema_of(p).kind != PredicateKind::Primitive)
          throw Error(ErrorCode::InvalidKnowledgeBase, fmt::format("{} depends on derived {}", a.str(), p.str()));
        primitive_atoms.insert(p);
      }
      derived_models.emplace(a, std::move(ge));
    }
    // Fully ground definitions over atoms already in the net.
    for (const auto& def : kb.derived) {
      auto ground = [](const AtomPattern& p) {
        return std::none_of(p.args.begin(), p.args.end(), [](const Term& t) { return is_variable(t); });
      };
      if (!ground(def.predicate) || !std::all_of(def.parents.begin(), def.parents.end(), ground)) continue;
      auto atom = instantiate(def.predicate, {});
      if (derived_atoms.count(atom)) continue;
      bool inside = std::all_of(def.parents.begin(), def.parents.end(), [&](const AtomPattern& p) {
        return primitive_atoms.count(instantiate(p, {})) > 0;
      });
      if (!inside || schema_of(atom).kind != PredicateKind::Derived) continue;
      derived_atoms.insert(atom);
      derived_models.emplace(atom, model_for(atom));
    }
  }

  void plan_nodes() {
    collect_atoms();
    const auto last = sp.slots.size() - 1;

    std::map<GroundAtom, std::set<std::string>> protect;
    for (const auto& [a, s] : flat.goals) protect[a].insert(s);
    for (const auto& g : steps)
      for (const auto& c : g.conditions) protect[c.atom].insert(c.state);

    for (std::size_t k = 0; k <= last; ++k) {
      if (opts.clock_enabled) {
        // Initial and single-slot clocks are event times; split slots copy.
        const auto& ev = sp.slots[k].event;
        auto& c = add({NodeRole::ClockTime, "clock", sit(k)}, NodeKind::Clock,
                      k == 0 ? NodeType::InitialClock : sp.is_split(ev) ? NodeType::SlotClock : NodeType::EventClock);
        c.cap = opts.clock_cap;
        c.event = ev;
        c.slot = k;
      }
      for (const auto& a : primitive_atoms) {
        auto& n = add(NodeId::atom(a, sit(k)), NodeKind::Primitive, k == 0 ? NodeType::InitialAtom : NodeType::Atom);
        const auto& schema = schema_of(a);
        n.atom = a;
        n.slot = k;
        n.preferred = schema.states;
        n.cap = opts.state_cap;
        n.protect = protect[a];
        n.event = sp.slots[k].event;
        if (k == 0) {
          auto it = flat.initial_state.find(a);
          if (it != flat.initial_state.end()) n.initial = it->second;
          else n.initial = {{schema.states.front(), 1.0}};
          continue;
        }
        n.prev = atom_key(a, k - 1);
        n.add_parent(n.prev);
        Bindings b;
        if (const auto* pm = kb.persistence_for(a.predicate)) {
          if (unify(pm->predicate, a, b)) {
            n.persistence = pm;
            n.persistence_bindings = b;
            if (opts.clock_enabled && !pm->buckets.empty()) {
              n.clock_prev = clock_key(k - 1);
              n.clock_now = clock_key(k);
            }
          }
        }
      }
      for (const auto& a : derived_atoms) {
        auto& n = add(NodeId::atom(a, sit(k)), NodeKind::Derived, NodeType::Derived);
        n.atom = a;
        n.slot = k;
        n.preferred = schema_of(a).states;
        n.cap = opts.state_cap;
        n.protect = protect[a];
        n.derived = &derived_models.at(a);
        for (const auto& p : n.derived->given) n.derived_parents.push_back(atom_key(p, k));
      }
    }

    plan_selection();
    plan_steps();
    plan_residuals();
    if (opts.clock_enabled) plan_clock();

    for (auto& n : plans) {
      switch (n.type) {
        case NodeType::Atom:
          if (!n.clock_prev.empty()) {
            n.add_parent(n.clock_prev);
            n.add_parent(n.clock_now);
          }
          if (sp.is_split(n.event))
            for (auto i : sp.occupancy_pairs.at(n.event)) n.occupancy_keys.push_back(relend_key(sp.uncertain_pairs[i]));
          for (const auto& k : n.occupancy_keys) n.add_parent(k);
          break;
        case NodeType::Derived:
          for (const auto& k : n.derived_parents) n.add_parent(k);
          break;
        default:
          break;
      }
    }
  }

  void plan_selection() {
    for (const auto& g : flat.contingencies) {
      if (sp.is_split(g.boundary))
        throw Error(ErrorCode::Unsupported,
                    fmt::format("contingency {} starts at {}, whose situation is split by concurrent timing", g.name,
                                g.boundary));
      const auto slot = sp.slot_of(g.boundary);
      auto& n = add({NodeRole::ActionSelection, "select[" + g.name + "]", sit(slot)}, NodeKind::ActionSelection,
                    NodeType::Selection);
      n.group = &g;
      n.slot = slot;
      n.preferred = g.alternatives;
      n.preferred.emplace_back(kNoOp);
      for (const auto& c : g.conditions) {
        std::string key;
        if (c.atom) {
          key = atom_key(*c.atom, slot);
          if (!index.count(key)) throw Error(ErrorCode::UnknownConditionNode, "no node for condition " + c.str());
        } else {
          key = select_key(c.group);
        }
        n.condition_keys.push_back(key);
      }
      for (const auto& k : n.condition_keys) n.add_parent(k);
    }
  }

  std::vector<std::pair<std::string, std::string>> guard_keys(const std::vector<Guard>& guards) const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& g : guards) out.emplace_back(select_key(g.group), g.alternative);
    return out;
  }

  void add_contribution(std::vector<std::pair<std::size_t, std::size_t>>& list, std::size_t node_index,
                        std::vector<Contribution> NodePlan::*field, Contribution c) {
    auto& n = plans[node_index];
    for (const auto& p : c.parents()) n.add_parent(p);
    (n.*field).push_back(std::move(c));
    list.emplace_back(node_index, (n.*field).size() - 1);
  }

  void plan_steps() {
    for (const auto& g : steps) {
      const auto& st = g.step;
      const bool has_during = !g.conditions.empty() || !g.during_effects.empty();
      const auto& start_slots = sp.event_slots.at(st.start);
      const auto& end_slots = sp.event_slots.at(st.end);
      std::size_t s = start_slots.front(), e = end_slots.front();
      if (has_during) {
        bool split = sp.is_split(st.start) || sp.is_split(st.end);
        for (auto k = s; k <= e && !split; ++k) split = sp.is_split(sp.slots[k].event);
        if (split)
          throw Error(ErrorCode::Unsupported,
                      fmt::format("step {} has during conditions or effects spanning a split situation", st.id));
      }
      const auto guards = guard_keys(st.guards);
      const std::string label = fmt::format("{} {}", st.id, st.call());

      // Gates for each condition, evaluated in the slot before the end.
      std::vector<GateCheck> checks(g.conditions.size());
      const std::size_t inner = e > s ? e - s - 1 : 0;
      for (std::size_t i = 0; i < g.conditions.size() && inner > 0; ++i) {
        const auto& c = g.conditions[i];
        checks[i].cond = atom_key(c.atom, e - 1);
        checks[i].required = c.state;
        for (auto j = s + 2; j <= e - 1 && inner >= 2; ++j) {
          NodeId id{NodeRole::DuringGate, fmt::format("gate[{}#{}]", st.id, i), sit(j)};
          auto& t = add(id, NodeKind::Primitive, NodeType::Gate);
          t.slot = j;
          t.preferred = {std::string(kHeld), std::string(kFailed)};
          t.gate_cond = atom_key(c.atom, j - 1);
          t.gate_required = c.state;
          if (j > s + 2) t.gate_tracker = NodeId{NodeRole::DuringGate, id.subject, sit(j - 1)}.key();
          t.add_parent(t.gate_cond);
          t.add_parent(t.gate_tracker);
          gates_of_step[st.id].push_back(index.at(id.key()));
          checks[i].tracker = id.key();
        }
      }

      for (const auto& eff : g.effects) {
        std::vector<GateCheck> gates;
        if (inner > 0)
          for (std::size_t i = 0; i < g.conditions.size(); ++i) {
            const auto& c = g.conditions[i];
            bool relevant = opts.during_failure == DuringFailure::NullifyAction || !c.gates || *c.gates == eff.target;
            if (relevant) gates.push_back(checks[i]);
          }
        for (auto k : end_slots) {
          Contribution c;
          c.source = "action " + label;
          c.effect = &eff;
          for (const auto& x : eff.given) c.given.push_back(atom_key(x, k - 1));
          c.guards = guards;
          c.gates = gates;
          add_contribution(action_list, index.at(atom_key(eff.target, k)), &NodePlan::actions, std::move(c));
        }
      }
      for (const auto& eff : g.during_effects)
        for (auto j = s + 1; j < e; ++j) {
          Contribution c;
          c.source = "during " + label;
          c.effect = &eff;
          for (const auto& x : eff.given) c.given.push_back(atom_key(x, j - 1));
          c.guards = guards;
          add_contribution(during_list, index.at(atom_key(eff.target, j)), &NodePlan::during, c);
          during_of_step[st.id].push_back(during_list.back());
        }
    }
  }

  void plan_residuals() {
    for (const auto& r : residuals) {
      const auto guards = guard_keys(r.residual.guards);
      for (const auto& eff : r.effects)
        for (auto k : sp.event_slots.at(r.residual.end)) {
          Contribution c;
          c.source = fmt::format("residual {} ({}{})", r.residual.abstract_step, r.residual.action,
                                 r.residual.args.empty() ? "" : " " + fmt::format("{}", fmt::join(r.residual.args, " ")));
          c.effect = &eff;
          for (const auto& x : eff.given) c.given.push_back(atom_key(x, k - 1));
          c.guards = guards;
          add_contribution(residual_list, index.at(atom_key(eff.target, k)), &NodePlan::residuals, std::move(c));
        }
    }
  }

  void plan_clock() {
    std::map<std::string, std::vector<std::string>> preds;
    for (const auto& [a, b] : precedence_edges(flat)) preds[b].push_back(a);

    for (std::size_t r = 1; r < sp.boundary_order.size(); ++r) {
      const auto& b = sp.boundary_order[r];
      const auto first = sp.slot_of(b);
      std::string key = time_key(b);
      if (sp.is_split(b)) {
        auto& et = add({NodeRole::EventTime, "endtime[" + b + "]", sit(first)}, NodeKind::Clock, NodeType::EventClock);
        et.cap = opts.clock_cap;
        et.event = b;
        et.slot = first;
      }
      auto& n = plan_of(key);
      for (const auto& p : preds[b]) n.pred_times.push_back(time_key(p));
      for (const auto& g : steps) {
        if (g.step.end != b) continue;
        n.timed.push_back({time_key(g.step.start), guard_keys(g.step.guards), &g.duration});
      }
      for (const auto& k : n.pred_times) n.add_parent(k);
      for (const auto& t : n.timed) {
        n.add_parent(t.start_time);
        for (const auto& [k, alt] : t.guards) n.add_parent(k);
      }
    }
    for (const auto& pr : sp.uncertain_pairs) {
      bool used = false;
      for (const auto& [ev, idx] : sp.occupancy_pairs)
        for (auto i : idx) used = used || sp.uncertain_pairs[i] == pr;
      if (!used) continue;
      auto key = relend_key(pr);
      auto& n = add({NodeRole::RelativeEndTime, key.substr(0, key.find('@')), sit(sp.slot_of(pr.first))},
                    NodeKind::RelativeEndTime, NodeType::RelEnd);
      n.preferred = {std::string(kNegative), std::string(kNonNegative)};
      n.time_a = time_key(pr.first);
      n.time_b = time_key(pr.second);
      n.add_parent(n.time_a);
      n.add_parent(n.time_b);
    }
    for (auto& n : plans) {
      if (n.type != NodeType::SlotClock) continue;
      n.end_time = time_key(n.event);
      n.clock_prev = clock_key(n.slot - 1);
      for (auto i : sp.occupancy_pairs.at(n.event)) n.occupancy_keys.push_back(relend_key(sp.uncertain_pairs[i]));
      n.add_parent(n.end_time);
      for (const auto& k : n.occupancy_keys) n.add_parent(k);
      n.add_parent(n.clock_prev);
    }
  }

  // --- row semantics ---------------------------------------------------------

  bool occupied(const NodePlan& n, const Lookup& at) const {
    if (!sp.is_split(n.event)) return true;
    std::vector<bool> signs;
    for (const auto& k : n.occupancy_keys) signs.push_back(at(k) == kNegative);
    const auto& table = sp.occupancy.at(n.event);
    auto it = table.find(signs);
    const auto slot = it == table.end() ? sp.event_slots.at(n.event).back() : it->second;
    return slot == n.slot;
  }

  std::pair<Distribution, PersistKind> persistence_row(const NodePlan& n, const Lookup& at) const {
    const auto& prev = at(n.prev);
    Distribution identity{{prev, 1.0}};
    if (!n.persistence) return {identity, PersistKind::Default};
    std::optional<std::size_t> bucket;
    bool elapsed_known = false;
    if (!n.clock_prev.empty()) {
      const auto& t0 = at(n.clock_prev);
      const auto& t1 = at(n.clock_now);
      if (t0 != kOther && t1 != kOther) {
        long el = to_time(t1) - to_time(t0);
        if (el < 0) return {identity, PersistKind::NegativeElapsed};
        elapsed_known = true;
        for (std::size_t i = 0; i < n.persistence->buckets.size(); ++i)
          if (n.persistence->buckets[i].contains(el)) bucket = i;
      }
    }
    const PersistenceRow* found = nullptr;
    auto search = [&](bool wildcard, bool bucketed) {
      for (const auto& row : n.persistence->rows) {
        if (found) return;
        const auto prev_label = substitute(row.previous, n.persistence_bindings);
        if (wildcard ? prev_label != kWildcard : prev_label != prev) continue;
        if (bucketed ? row.bucket != bucket : row.bucket.has_value()) continue;
        found = &row;
      }
    };
    if (prev != kOther) {
      if (elapsed_known && bucket) {
        search(false, true);
        search(true, true);
      }
      search(false, false);
      search(true, false);
    }
    if (!found) return {identity, PersistKind::Default};
    return {instantiate_distribution(found->distribution, n.persistence_bindings), PersistKind::Model};
  }

  struct Outcome {
    std::vector<Distribution> pasted;  // in paste order; the last one wins
  };

  // Every row written for this parent combination over the whole pipeline.
  Outcome evaluate(const NodePlan& n, const Lookup& at) const {
    Outcome out;
    switch (n.type) {
      case NodeType::InitialAtom:
        out.pasted.push_back(n.initial);
        break;
      case NodeType::Atom: {
        bool row = false;
        for (const auto& c : n.actions)
          if (const auto* d = c.apply(at)) {
            out.pasted.push_back(*d);
            row = true;
          }
        if (!row)
          for (const auto& c : n.residuals)
            if (const auto* d = c.apply(at)) {
              out.pasted.push_back(*d);
              row = true;
              break;
            }
        for (const auto& c : n.during)
          if (const auto* d = c.apply(at)) {
            out.pasted.push_back(*d);
            row = true;
          }
        if (!occupied(n, at)) {
          out.pasted.push_back({{at(n.prev), 1.0}});
          row = true;
        }
        if (!row) out.pasted.push_back(persistence_row(n, at).first);
        break;
      }
      case NodeType::Derived:
        if (auto d = derived_row(n, at)) out.pasted.push_back(*d);
        break;
      case NodeType::Selection:
        out.pasted.push_back(selection_row(n, at));
        break;
      case NodeType::Gate:
        out.pasted.push_back(gate_row(n, at));
        break;
      case NodeType::InitialClock:
        out.pasted.push_back({{"0", 1.0}});
        break;
      case NodeType::EventClock:
        out.pasted.push_back(event_clock_row(n, at));
        break;
      case NodeType::SlotClock:
        out.pasted.push_back({{occupied(n, at) ? at(n.end_time) : at(n.clock_prev), 1.0}});
        break;
      case NodeType::RelEnd:
        out.pasted.push_back(relend_row(n, at));
        break;
    }
    return out;
  }

  std::optional<Distribution> derived_row(const NodePlan& n, const Lookup& at) const {
    std::vector<std::string> labels;
    for (const auto& k : n.derived_parents) labels.push_back(at(k));
    if (const auto* d = n.derived->row(labels)) return *d;
    if (std::find(labels.begin(), labels.end(), kOther) != labels.end()) return Distribution{{other(), 1.0}};
    return std::nullopt;
  }

  Distribution selection_row(const NodePlan& n, const Lookup& at) const {
    std::vector<std::string> labels;
    for (const auto& k : n.condition_keys) labels.push_back(at(k));
    for (const auto& row : n.group->selector) {
      bool match = row.condition.size() == labels.size();
      for (std::size_t i = 0; match && i < labels.size(); ++i)
        match = row.condition[i] == kWildcard || row.condition[i] == labels[i];
      if (match) return row.distribution;
    }
    return {{n.group->fallback, 1.0}};
  }

  Distribution gate_row(const NodePlan& n, const Lookup& at) const {
    bool held = at(n.gate_cond) == n.gate_required && (n.gate_tracker.empty() || at(n.gate_tracker) == kHeld);
    return {{std::string(held ? kHeld : kFailed), 1.0}};
  }

  Distribution event_clock_row(const NodePlan& n, const Lookup& at) const {
    long base = 0;
    for (const auto& k : n.pred_times) {
      const auto& v = at(k);
      if (v == kOther) return {{other(), 1.0}};
      base = std::max(base, to_time(v));
    }
    std::map<long, double> dist{{base, 1.0}};
    for (const auto& t : n.timed) {
      bool active = std::all_of(t.guards.begin(), t.guards.end(),
                                [&](const auto& g) { return at(g.first) == g.second; });
      if (!active) continue;
      const auto& sv = at(t.start_time);
      if (sv == kOther) return {{other(), 1.0}};
      const long start = to_time(sv);
      std::map<long, double> next;
      for (const auto& [v, p] : dist)
        for (const auto& [d, q] : *t.duration) next[std::max(v, start + d)] += p * q;
      dist = std::move(next);
    }
    Distribution out;
    for (const auto& [v, p] : dist)
      if (p > 0) out[std::to_string(v)] += p;
    return out;
  }

  Distribution relend_row(const NodePlan& n, const Lookup& at) const {
    const auto& a = at(n.time_a);
    const auto& b = at(n.time_b);
    bool negative = a != kOther && b != kOther && to_time(a) < to_time(b);
    return {{std::string(negative ? kNegative : kNonNegative), 1.0}};
  }

  // --- enumeration -----------------------------------------------------------

  template <class F>
  void for_each_assignment(const std::vector<std::string>& keys, F&& fn) const {
    std::vector<std::size_t> card;
    std::vector<const NodePlan*> ps;
    for (const auto& k : keys) {
      ps.push_back(&plans[index.at(k)]);
      card.push_back(ps.back()->states.size());
    }
    std::vector<std::string> labels(keys.size());
    for_each_combination(card, [&](const ParentCombo& c) {
      double w = 1.0;
      for (std::size_t i = 0; i < keys.size(); ++i) {
        labels[i] = ps[i]->states[static_cast<std::size_t>(c[i])];
        auto m = ps[i]->mass.find(labels[i]);
        w *= m == ps[i]->mass.end() ? 0.0 : m->second;
      }
      fn(Lookup(keys, labels), labels, w);
    });
  }

  std::vector<std::size_t> plan_order() const {
    std::vector<int> indegree(plans.size(), 0);
    std::vector<std::vector<std::size_t>> children(plans.size());
    for (std::size_t i = 0; i < plans.size(); ++i)
      for (const auto& p : plans[i].parents) {
        auto it = index.find(p);
        if (it == index.end()) throw Error(ErrorCode::Internal, "unplanned parent " + p);
        children[it->second].push_back(i);
        ++indegree[i];
      }
    std::set<std::size_t> ready;
    for (std::size_t i = 0; i < plans.size(); ++i)
      if (indegree[i] == 0) ready.insert(i);
    std::vector<std::size_t> order;
    while (!ready.empty()) {
      auto n = *ready.begin();
      ready.erase(ready.begin());
      order.push_back(n);
      for (auto c : children[n])
        if (--indegree[c] == 0) ready.insert(c);
    }
    if (order.size() != plans.size())
      throw Error(ErrorCode::LayeringViolation, "the planned network contains a directed cycle");
    return order;
  }

  void enumerate() {
    if (enumerated) return;
    for (auto i : plan_order()) {
      auto& n = plans[i];
      std::set<std::string> support;
      std::map<std::string, double> mass;
      for_each_assignment(n.parents, [&](const Lookup& at, const std::vector<std::string>&, double w) {
        auto out = evaluate(n, at);
        for (const auto& d : out.pasted)
          for (const auto& [l, p] : d)
            if (p > 0) support.insert(l);
        if (!out.pasted.empty())
          for (const auto& [l, p] : out.pasted.back()) mass[l] += w * p;
      });
      order_states(n, support);
      compact(n, mass);
      states[n.id.key()] = n.states;
    }
    enumerated = true;
  }

  void order_states(NodePlan& n, const std::set<std::string>& support) const {
    n.states.clear();
    if (n.kind == NodeKind::Clock) {
      std::vector<long> values;
      for (const auto& l : support)
        if (l != kOther) values.push_back(to_time(l));
      std::sort(values.begin(), values.end());
      for (auto v : values) n.states.push_back(std::to_string(v));
      if (support.count(other())) n.states.push_back(other());
      return;
    }
    for (const auto& l : n.preferred)
      if (support.count(l)) n.states.push_back(l);
    for (const auto& l : support)
      if (l != kOther && std::find(n.states.begin(), n.states.end(), l) == n.states.end()) n.states.push_back(l);
    if (support.count(other())) n.states.push_back(other());
  }

  // Merges the least likely labels into OTHER until the node fits its cap.
  void compact(NodePlan& n, const std::map<std::string, double>& mass) const {
    n.mass = mass;
    if (n.cap == 0 || n.states.size() <= n.cap) return;
    const bool has_other = std::find(n.states.begin(), n.states.end(), kOther) != n.states.end();
    std::size_t merge = n.states.size() - n.cap + (has_other ? 0 : 1);
    std::vector<std::pair<double, std::size_t>> candidates;
    for (std::size_t i = 0; i < n.states.size(); ++i) {
      const auto& l = n.states[i];
      if (l == kOther || n.protect.count(l)) continue;
      auto it = mass.find(l);
      candidates.emplace_back(it == mass.end() ? 0.0 : it->second, i);
    }
    std::sort(candidates.begin(), candidates.end());
    merge = std::min(merge, candidates.size());
    if (merge == 0) return;
    std::set<std::size_t> drop;
    for (std::size_t i = 0; i < merge; ++i) drop.insert(candidates[i].second);
    std::vector<std::string> kept;
    double other_mass = n.mass.count(other()) ? n.mass[other()] : 0.0;
    for (std::size_t i = 0; i < n.states.size(); ++i) {
      const auto& l = n.states[i];
      if (l == kOther) continue;
      if (drop.count(i)) {
        n.merged[l] = other();
        other_mass += n.mass[l];
        n.mass.erase(l);
      } else {
        kept.push_back(l);
      }
    }
    kept.push_back(other());
    n.mass[other()] = other_mass;
    n.states = std::move(kept);
  }

  // --- pasting -----------------------------------------------------------------

  void paste(const NodePlan& n, const std::vector<std::string>& parents, const std::string& source, PasteMode mode,
             const std::function<std::optional<Distribution>(const Lookup&)>& fn) {
    FragmentNode main{n.id, n.kind, n.states, parents, {}};
    // Into rows that would be ignored must not widen the state list either.
    const Node* existing = mode == PasteMode::Into ? net.find(n.id.key()) : nullptr;
    auto covered = [&](const std::vector<std::string>& labels) {
      if (!existing) return false;
      ParentCombo base;
      std::vector<std::size_t> free, card;
      for (std::size_t i = 0; i < existing->parents.size(); ++i) {
        const auto& p = existing->parents[i];
        auto f = std::find(parents.begin(), parents.end(), p);
        if (f == parents.end()) {
          free.push_back(i);
          card.push_back(net.node(p).states.size());
          base.push_back(0);
          continue;
        }
        int s = net.node(p).state_index(labels[f - parents.begin()]);
        if (s < 0) return false;
        base.push_back(s);
      }
      bool all = true;
      for_each_combination(card, [&](const ParentCombo& c) {
        auto combo = base;
        for (std::size_t j = 0; j < free.size(); ++j) combo[free[j]] = c[j];
        if (!existing->rows.count(combo)) all = false;
      });
      return all;
    };
    for_each_assignment(parents, [&](const Lookup& at, const std::vector<std::string>& labels, double) {
      if (covered(labels)) return;
      if (auto d = fn(at)) main.rows.push_back({labels, n.compact(*d)});
    });
    if (main.rows.empty()) return;
    Fragment f{source, {}};
    for (const auto& p : parents) {
      if (net.find(p)) continue;
      const auto& pp = plans[index.at(p)];
      f.nodes.push_back({pp.id, pp.kind, pp.states, {}, {}});
    }
    f.nodes.push_back(std::move(main));
    net.paste(f, mode);
  }

  void paste_whole(const NodePlan& n, const std::string& source) {
    paste(n, n.parents, source, PasteMode::Onto, [&](const Lookup& at) -> std::optional<Distribution> {
      auto out = evaluate(n, at);
      if (out.pasted.empty()) return std::nullopt;
      return out.pasted.back();
    });
  }

  void paste_contribution(const std::pair<std::size_t, std::size_t>& ref, std::vector<Contribution> NodePlan::*field,
                          PasteMode mode) {
    const auto& n = plans[ref.first];
    const auto& c = (n.*field)[ref.second];
    paste(n, c.parents(), c.source, mode, [&](const Lookup& at) -> std::optional<Distribution> {
      if (const auto* d = c.apply(at)) return *d;
      return std::nullopt;
    });
  }
};

Construction::Construction(const Plan& plan, const KnowledgeBase& kb, BuildOptions opts)
    : impl_(std::make_unique<Impl>(plan, kb, std::move(opts))) {}

Construction::~Construction() = default;

const Plan& Construction::flat_plan() const { return impl_->flat; }
const SituationPlan& Construction::schedule() const { return impl_->sp; }
const std::vector<GroundStep>& Construction::steps() const { return impl_->steps; }
const PENet& Construction::net() const { return impl_->net; }

const std::map<std::string, std::vector<std::string>>& Construction::enumerate_states() {
  impl_->enumerate();
  return impl_->states;
}

void Construction::paste_initial() {
  enumerate_states();
  auto& im = *impl_;
  Fragment f{"initial", {}};
  for (const auto& n : im.plans) {
    if (n.type != NodeType::InitialAtom) continue;
    FragmentNode fn{n.id, n.kind, n.states, {}, {}};
    fn.rows.push_back({{}, n.compact(n.initial)});
    f.nodes.push_back(std::move(fn));
  }
  if (!f.nodes.empty()) im.net.paste(f, PasteMode::Onto);
}

void Construction::paste_actions() {
  enumerate_states();
  for (const auto& ref : impl_->action_list) impl_->paste_contribution(ref, &NodePlan::actions, PasteMode::Onto);
}

void Construction::merge_contingent(const ContingencyGroup& group) {
  enumerate_states();
  auto& im = *impl_;
  const auto& n = im.plan_of(im.select_key(group.name));
  im.paste_whole(n, "selection " + group.name);
}

void Construction::paste_residuals() {
  enumerate_states();
  for (const auto& ref : impl_->residual_list) impl_->paste_contribution(ref, &NodePlan::residuals, PasteMode::Into);
}

void Construction::attach_during(const GroundStep& step) {
  enumerate_states();
  auto& im = *impl_;
  const auto label = fmt::format("{} {}", step.step.id, step.step.call());
  if (auto it = im.gates_of_step.find(step.step.id); it != im.gates_of_step.end())
    for (auto i : it->second) im.paste_whole(im.plans[i], "gate " + label);
  if (auto it = im.during_of_step.find(step.step.id); it != im.during_of_step.end())
    for (const auto& ref : it->second) im.paste_contribution(ref, &NodePlan::during, PasteMode::Onto);
}

void Construction::add_clock() {
  enumerate_states();
  auto& im = *impl_;
  for (const auto& n : im.plans) {
    if (n.type == NodeType::InitialClock || n.type == NodeType::EventClock)
      im.paste_whole(n, n.id.role == NodeRole::EventTime ? "end time" : "clock");
  }
  for (const auto& n : im.plans)
    if (n.type == NodeType::SlotClock) im.paste_whole(n, "clock");
}

void Construction::split_situations() {
  enumerate_states();
  auto& im = *impl_;
  for (const auto& n : im.plans)
    if (n.type == NodeType::RelEnd) im.paste_whole(n, "relative end time");
  for (const auto& n : im.plans) {
    if (n.type != NodeType::Atom || !im.sp.is_split(n.event)) continue;
    std::vector<std::string> parents{n.prev};
    parents.insert(parents.end(), n.occupancy_keys.begin(), n.occupancy_keys.end());
    im.paste(n, parents, "idle slot " + n.id.situation, PasteMode::Onto,
             [&](const Lookup& at) -> std::optional<Distribution> {
               if (im.occupied(n, at)) return std::nullopt;
               return Distribution{{at(n.prev), 1.0}};
             });
  }
}

void Construction::complete_with_persistence() {
  enumerate_states();
  auto& im = *impl_;
  for (std::size_t k = im.sp.slots.size(); k-- > 1;) {
    for (const auto& n : im.plans) {
      if (n.type != NodeType::Atom || n.slot != k) continue;
      std::vector<std::string> parents{n.prev};
      if (!n.clock_prev.empty()) {
        parents.push_back(n.clock_prev);
        parents.push_back(n.clock_now);
      }
      auto part = [&](PersistKind kind) {
        return [&, kind](const Lookup& at) -> std::optional<Distribution> {
          auto [d, k2] = im.persistence_row(n, at);
          if (k2 != kind) return std::nullopt;
          return d;
        };
      };
      if (n.persistence)
        im.paste(n, parents, "persistence " + n.persistence->predicate.str(), PasteMode::Into, part(PersistKind::Model));
      im.paste(n, parents, std::string(kNegativeElapsedSource), PasteMode::Into, part(PersistKind::NegativeElapsed));
      im.paste(n, parents, "default persistence", PasteMode::Into, part(PersistKind::Default));
    }
  }
}

void Construction::attach_derived() {
  enumerate_states();
  auto& im = *impl_;
  for (const auto& n : im.plans)
    if (n.type == NodeType::Derived) im.paste_whole(n, "derived " + n.atom.str());
}

PENet Construction::finalize() {
  enumerate_states();
  auto& im = *impl_;
  auto& ann = im.net.annotations();
  ann.goals.clear();
  ann.selected_path.clear();
  const auto last = im.sp.slots.size() - 1;
  for (const auto& [a, s] : im.flat.goals) ann.goals.emplace_back(im.atom_key(a, last), s);
  for (const auto& g : im.flat.contingencies)
    if (g.selected && g.on_selected_path) ann.selected_path.emplace_back(im.select_key(g.name), *g.selected);
  return penet::finalize(im.net);
}

PENet Construction::build() {
  enumerate_states();
  paste_initial();
  paste_actions();
  for (const auto& g : impl_->flat.contingencies) merge_contingent(g);
  paste_residuals();
  for (const auto& s : impl_->steps) attach_during(s);
  if (impl_->opts.clock_enabled) {
    add_clock();
    split_situations();
  }
  complete_with_persistence();
  attach_derived();
  return finalize();
}

PENet build_pe_net(const Plan& plan, const KnowledgeBase& kb, const BuildOptions& opts) {
  Construction c(plan, kb, opts);
  return c.build();
}

std::vector<NegativeElapsedRow> negative_elapsed_rows(const PENet& net) {
  std::vector<NegativeElapsedRow> out;
  for (const auto& n : net.nodes())
    for (const auto& [combo, row] : n.rows)
      if (row.provenance.source == kNegativeElapsedSource) out.push_back({n.key(), combo});
  return out;
}

}  // namespace penet
