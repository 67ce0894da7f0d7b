#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "penet/core_model.hpp"

namespace penet {

/// Alternative label meaning "execute nothing".
inline constexpr std::string_view kNoOp = "noop";

/// A step only executes when the named selection node takes `alternative`.
struct Guard {
  std::string group;
  std::string alternative;

  friend auto operator<=>(const Guard&, const Guard&) = default;
};

struct PlanStep {
  std::string id;
  std::string agent;
  std::string action;
  std::vector<std::string> args;
  std::optional<int> level;
  std::string start;
  std::string end;
  std::vector<Guard> guards;
  SourceLoc loc;

  std::string call() const;
  friend bool operator==(const PlanStep&, const PlanStep&) = default;
};

/// What an action-selection node is conditioned on: a ground atom read in the
/// group's start situation, or another group's selection node.
struct ConditionRef {
  std::optional<GroundAtom> atom;
  std::string group;  // set when conditioning on a selection node

  std::string str() const;
  friend bool operator==(const ConditionRef&, const ConditionRef&) = default;
};

struct SelectorRow {
  std::vector<std::string> condition;
  Distribution distribution;  // over alternative labels
  SourceLoc loc;

  friend bool operator==(const SelectorRow&, const SelectorRow&) = default;
};

struct ContingencyGroup {
  std::string name;
  std::string boundary;
  std::vector<std::string> alternatives;  // real alternatives, never kNoOp
  std::vector<ConditionRef> conditions;
  std::vector<SelectorRow> selector;
  /// Chosen when no selector row matches the condition states.
  std::string fallback{kNoOp};
  /// Set for groups produced from an expansion: the planner's choice.
  std::optional<std::string> selected;
  /// True when every enclosing expansion choice is the selected one.
  bool on_selected_path = false;
  SourceLoc loc;

  /// Alternatives plus kNoOp when some condition combination can pick it.
  std::vector<std::string> selection_states(const std::vector<std::size_t>& condition_cardinality) const;
  friend bool operator==(const ContingencyGroup&, const ContingencyGroup&) = default;
};

struct ExpansionAlternative {
  std::string label;
  std::vector<PlanStep> steps;

  friend bool operator==(const ExpansionAlternative&, const ExpansionAlternative&) = default;
};

struct ExpansionNode {
  std::string step;  // id of the abstract step being refined
  std::vector<ExpansionAlternative> alternatives;
  std::size_t selected = 0;
  std::vector<ConditionRef> conditions;
  std::vector<SelectorRow> selection_conditions;
  SourceLoc loc;

  friend bool operator==(const ExpansionNode&, const ExpansionNode&) = default;
};

/// Consequences of an expanded abstract step that the chosen refinement does
/// not mention. They are pasted into the net without overriding anything.
struct ResidualEffect {
  std::string abstract_step;
  std::string action;
  std::vector<std::string> args;
  std::optional<int> level;
  std::string start;
  std::string end;
  std::vector<Guard> guards;
  std::vector<GroundAtom> targets;

  friend bool operator==(const ResidualEffect&, const ResidualEffect&) = default;
};

struct Plan {
  std::string initial_boundary = "b0";
  std::vector<std::string> boundaries;  // declaration order
  std::vector<std::pair<std::string, std::string>> orderings;  // (before, after)
  std::vector<PlanStep> steps;
  std::vector<ContingencyGroup> contingencies;
  std::vector<ExpansionNode> expansions;
  std::vector<ResidualEffect> residuals;
  std::map<GroundAtom, Distribution> initial_state;
  std::vector<std::pair<GroundAtom, std::string>> goals;
  std::vector<GroundAtom> tracked;  // extra derived atoms to keep in the net

  const PlanStep* step(std::string_view id) const;
  const ContingencyGroup* group(std::string_view name) const;
  /// Index of the step among its agent's steps, in plan order.
  std::size_t agent_index(const PlanStep& step) const;

  friend bool operator==(const Plan&, const Plan&) = default;
};

/// Deterministic ordering key for linearization. The default prefers the
/// boundary ending the lexicographically smallest (agent, per-agent index)
/// step; seeded variants permute available boundaries pseudo-randomly.
struct TieBreak {
  std::optional<std::uint64_t> seed;

  static TieBreak lexicographic() { return {}; }
  static TieBreak seeded(std::uint64_t s) { return TieBreak{s}; }
};

/// Every boundary-precedence edge implied by the plan: explicit orderings,
/// step start < end, the initial boundary before everything, and per-agent
/// sequencing (mutually exclusive alternatives excepted).
std::vector<std::pair<std::string, std::string>> precedence_edges(const Plan& plan);

/// Total order on boundaries extending the interlock partial order.
/// Throws CyclicOrder.
std::vector<std::string> linearize(const Plan& plan, const TieBreak& tie_break = {});

/// True when `a` must precede `b` in every linearization.
bool precedes(const Plan& plan, const std::string& a, const std::string& b);

/// Rewrites every expansion into a contingency group plus guarded spliced
/// steps and records residual abstract effects. Idempotent.
Plan flatten_hierarchy(const Plan& plan, const KnowledgeBase& kb);

/// Structural checks on a plan against a knowledge base.
std::vector<Diagnostic> validate_plan(const Plan& plan, const KnowledgeBase& kb);

}  // namespace penet
