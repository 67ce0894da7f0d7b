#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "penet/core_model.hpp"

namespace penet {

enum class NodeKind { Primitive, Derived, ActionSelection, Clock, RelativeEndTime };

std::string_view to_string(NodeKind kind);

/// What a node stands for. Atom covers primitive and derived predicates;
/// EventTime is the end time of a boundary whose situation was split;
/// DuringGate tracks whether a during condition has held so far.
enum class NodeRole { Atom, ActionSelection, ClockTime, EventTime, RelativeEndTime, DuringGate };

struct NodeId {
  NodeRole role = NodeRole::Atom;
  std::string subject;    // "(Loc A)", "select[g1]", "clock", "relend[b2<b1]", ...
  std::string situation;  // "S0", "S2a", ...

  std::string key() const { return subject + "@" + situation; }

  static NodeId atom(const GroundAtom& a, std::string situation) {
    return {NodeRole::Atom, a.str(), std::move(situation)};
  }
  friend bool operator==(const NodeId&, const NodeId&) = default;
};

enum class PasteMode { Onto, Into };

/// Which model and which paste operation produced a CPT row.
struct Provenance {
  std::string source;
  PasteMode mode = PasteMode::Onto;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct CptRow {
  std::vector<double> probs;  // aligned with Node::states
  Provenance provenance;

  friend bool operator==(const CptRow&, const CptRow&) = default;
};

/// Parent-state combination, one state index per parent.
using ParentCombo = std::vector<int>;

struct Node {
  NodeId id;
  NodeKind kind = NodeKind::Primitive;
  std::vector<std::string> states;
  std::vector<std::string> parents;  // node keys
  std::map<ParentCombo, CptRow> rows;

  std::string key() const { return id.key(); }
  int state_index(std::string_view label) const;

  friend bool operator==(const Node&, const Node&) = default;
};

struct FragmentRow {
  std::vector<std::string> parent_states;  // aligned with FragmentNode::parents
  Distribution distribution;
};

struct FragmentNode {
  NodeId id;
  NodeKind kind = NodeKind::Primitive;
  std::vector<std::string> states;
  std::vector<std::string> parents;
  std::vector<FragmentRow> rows;
};

/// A partial network produced by instantiating one model.
struct Fragment {
  std::string source;
  std::vector<FragmentNode> nodes;
};

/// Construction metadata consumed by the plan-success metrics.
struct PlanAnnotations {
  std::vector<std::pair<std::string, std::string>> goals;          // node key, state
  std::vector<std::pair<std::string, std::string>> selected_path;  // selection node key, state

  friend bool operator==(const PlanAnnotations&, const PlanAnnotations&) = default;
};

/// Situation-layered belief network. Mutable while being pasted together,
/// frozen by finalize.
class PENet {
 public:
  explicit PENet(std::vector<std::string> situations = {"S0"});

  const std::vector<std::string>& situations() const { return situations_; }
  int situation_index(std::string_view name) const;

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node* find(std::string_view key) const;
  const Node& node(std::string_view key) const;
  std::size_t size() const { return nodes_.size(); }

  bool finalized() const { return finalized_; }

  PlanAnnotations& annotations() { return annotations_; }
  const PlanAnnotations& annotations() const { return annotations_; }

  /// Merges a fragment. Onto: fragment rows replace existing rows for the
  /// same parent combination. Into: only absent rows and nodes are added.
  /// Throws LayeringViolation, InvalidFragment, FrozenNet.
  void paste(const Fragment& fragment, PasteMode mode);

  /// Every parent combination over the parents' state lists.
  std::vector<ParentCombo> combinations(const Node& node) const;

  /// Node indices with every parent before its children.
  std::vector<std::size_t> topological_order() const;

  void freeze() { finalized_ = true; }

  friend bool operator==(const PENet&, const PENet&) = default;

 private:
  Node& mutable_node(std::string_view key);
  void check_arc(const Node& parent, const Node& child) const;
  void extend_parents(Node& node, const std::vector<std::string>& extra);
  void extend_states(Node& node, const std::vector<std::string>& extra);

  std::vector<std::string> situations_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
  PlanAnnotations annotations_;
  bool finalized_ = false;
};

PENet paste_onto(PENet net, const Fragment& fragment);
PENet paste_into(PENet net, const Fragment& fragment);

/// Checks that every node covers all parent combinations with normalized
/// rows, then freezes. Throws IncompleteCPT.
PENet finalize(PENet net);

/// Calls fn(combo) for every combination in the cartesian product.
void for_each_combination(const std::vector<std::size_t>& cardinality,
                          const std::function<void(const ParentCombo&)>& fn);

}  // namespace penet
