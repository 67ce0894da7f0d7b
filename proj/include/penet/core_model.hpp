#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "penet/diagnostics.hpp"

namespace penet {

/// Row distributions must sum to one within this tolerance.
inline constexpr double kProbTolerance = 1e-9;

/// Reserved state label absorbing compacted or irrelevant states.
inline constexpr std::string_view kOther = "OTHER";

/// Wildcard condition label in model rows; matches every schema state not
/// covered by an explicit row.
inline constexpr std::string_view kWildcard = "*";

enum class PredicateKind { Primitive, Derived };

std::string_view to_string(PredicateKind kind);

struct PredicateSchema {
  std::string name;
  std::vector<std::string> parameters;  // variable slots, e.g. "?obj"
  std::vector<std::string> states;
  PredicateKind kind = PredicateKind::Primitive;
  SourceLoc loc;

  bool has_state(std::string_view label) const;

  friend bool operator==(const PredicateSchema&, const PredicateSchema&) = default;
};

/// A variable (leading '?') or a constant symbol.
using Term = std::string;

bool is_variable(std::string_view term);

struct AtomPattern {
  std::string predicate;
  std::vector<Term> args;

  std::string str() const;
  friend bool operator==(const AtomPattern&, const AtomPattern&) = default;
};

struct GroundAtom {
  std::string predicate;
  std::vector<std::string> args;

  /// Canonical text form, e.g. "(Loc A)".
  std::string str() const;
  friend auto operator<=>(const GroundAtom&, const GroundAtom&) = default;
};

using Bindings = std::map<std::string, std::string>;

/// Distribution over state labels, ordered by label.
using Distribution = std::map<std::string, double>;

struct RowPattern {
  std::vector<Term> condition;  // one label per conditioning atom
  std::vector<std::pair<Term, double>> distribution;
  SourceLoc loc;

  friend bool operator==(const RowPattern&, const RowPattern&) = default;
};

/// A consequence (or during effect) of an action: rows give the target's
/// distribution in the end situation given the `given` atoms' states in the
/// situation before.
struct EffectModel {
  AtomPattern target;
  std::vector<AtomPattern> given;
  std::vector<RowPattern> rows;
  SourceLoc loc;

  friend bool operator==(const EffectModel&, const EffectModel&) = default;
};

/// A proposition that must hold in every intermediate situation of the
/// action. `gates` names the consequence it guards; unset guards all of them.
struct DuringCondition {
  AtomPattern atom;
  Term state;
  std::optional<AtomPattern> gates;
  SourceLoc loc;

  friend bool operator==(const DuringCondition&, const DuringCondition&) = default;
};

struct ActionModel {
  std::string name;
  std::vector<std::string> parameters;
  int level = 0;
  std::vector<EffectModel> effects;
  std::vector<DuringCondition> during_conditions;
  std::vector<EffectModel> during_effects;
  std::vector<std::pair<long, double>> duration;  // empty: no duration model
  SourceLoc loc;

  /// Union of every effect's conditioning atoms, in first-seen order.
  std::vector<AtomPattern> predecessors() const;
  std::string signature() const;

  friend bool operator==(const ActionModel&, const ActionModel&) = default;
};

/// Half-open interval [lo, hi) over elapsed ticks; unset hi means infinity.
struct ElapsedBucket {
  long lo = 0;
  std::optional<long> hi;

  bool contains(long elapsed) const { return elapsed >= lo && (!hi || elapsed < *hi); }
  std::string str() const;
  friend bool operator==(const ElapsedBucket&, const ElapsedBucket&) = default;
};

struct PersistenceRow {
  Term previous;
  std::optional<std::size_t> bucket;  // index into the model's buckets
  std::vector<std::pair<Term, double>> distribution;
  SourceLoc loc;

  friend bool operator==(const PersistenceRow&, const PersistenceRow&) = default;
};

struct PersistenceModel {
  AtomPattern predicate;
  std::vector<ElapsedBucket> buckets;
  std::vector<PersistenceRow> rows;
  SourceLoc loc;

  friend bool operator==(const PersistenceModel&, const PersistenceModel&) = default;
};

struct DerivedDefinition {
  AtomPattern predicate;
  std::vector<AtomPattern> parents;
  std::vector<RowPattern> rows;
  SourceLoc loc;

  friend bool operator==(const DerivedDefinition&, const DerivedDefinition&) = default;
};

struct KnowledgeBase {
  std::map<std::string, PredicateSchema> schemas;
  std::vector<ActionModel> actions;
  std::vector<PersistenceModel> persistence;
  std::vector<DerivedDefinition> derived;

  const PredicateSchema* schema(std::string_view predicate) const;
  /// Unset level picks the only model with that name; ambiguity yields null.
  const ActionModel* action(std::string_view name, std::optional<int> level = std::nullopt) const;
  const PersistenceModel* persistence_for(std::string_view predicate) const;
  /// First definition whose pattern unifies with the atom.
  const DerivedDefinition* derived_for(const GroundAtom& atom, Bindings* bindings = nullptr) const;

  friend bool operator==(const KnowledgeBase&, const KnowledgeBase&) = default;
};

// --- grounding -------------------------------------------------------------

Term substitute(const Term& term, const Bindings& bindings);

/// Replaces every variable of the pattern. Throws UnboundVariable.
GroundAtom instantiate(const AtomPattern& pattern, const Bindings& bindings);

/// As above, additionally checking the pattern against its schema
/// (UnknownPredicate, ArityMismatch).
GroundAtom instantiate(const KnowledgeBase& kb, const AtomPattern& pattern, const Bindings& bindings);

/// Extends `bindings` so that `pattern` matches `atom`; false on mismatch.
bool unify(const AtomPattern& pattern, const GroundAtom& atom, Bindings& bindings);

/// Bindings for an action's parameters from call arguments (ArityMismatch).
Bindings bind_parameters(const std::vector<std::string>& parameters,
                         const std::vector<std::string>& args);

/// An effect with every variable substituted and wildcard rows expanded
/// over the conditioning atoms' schema states.
struct GroundEffect {
  GroundAtom target;
  std::vector<GroundAtom> given;
  std::map<std::vector<std::string>, Distribution> rows;

  const Distribution* row(const std::vector<std::string>& condition) const;
};

GroundEffect instantiate_effect(const KnowledgeBase& kb, const EffectModel& effect, const Bindings& bindings);

/// Substitutes and merges a row distribution (duplicate labels add up).
Distribution instantiate_distribution(const std::vector<std::pair<Term, double>>& dist,
                                      const Bindings& bindings);

// --- validation ------------------------------------------------------------

/// Checks every knowledge-base invariant. Empty result means well formed.
std::vector<Diagnostic> validate_kb(const KnowledgeBase& kb);

}  // namespace penet
