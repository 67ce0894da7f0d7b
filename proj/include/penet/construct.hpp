#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "penet/core_model.hpp"
#include "penet/pe_net.hpp"
#include "penet/plan_model.hpp"

namespace penet {

/// What a failed during condition suppresses: only the consequences it
/// gates, or every consequence of the action.
enum class DuringFailure { GateEffectOnly, NullifyAction };

struct BuildOptions {
  DuringFailure during_failure = DuringFailure::GateEffectOnly;
  bool clock_enabled = false;
  std::size_t clock_cap = 64;
  std::size_t state_cap = 64;
  TieBreak tie_break;
  /// Guard on duration/selection combinations enumerated while splitting.
  std::size_t max_timing_worlds = 1'000'000;
};

/// One situation of the final network. A boundary whose time may precede
/// an earlier-ordered boundary owns several slots; it occupies exactly one
/// of them in any execution.
struct Slot {
  std::string name;   // "S0", "S2a", ...
  std::string event;  // hosted boundary
};

/// The linearized schedule the network is laid out on.
struct SituationPlan {
  std::string initial;
  std::vector<std::string> boundary_order;
  std::vector<Slot> slots;
  std::map<std::string, std::vector<std::size_t>> event_slots;
  std::map<std::string, std::size_t> rank;  // position in boundary_order

  /// Concurrent boundary pairs (later-ranked, earlier-ranked) whose time
  /// order varies across executions; each gets a relative-end-time node.
  std::vector<std::pair<std::string, std::string>> uncertain_pairs;
  /// Per split boundary: which uncertain pairs decide the occupied slot,
  /// and the slot chosen for each realized sign pattern (true = negative).
  std::map<std::string, std::vector<std::size_t>> occupancy_pairs;
  std::map<std::string, std::map<std::vector<bool>, std::size_t>> occupancy;
  std::size_t split_insertions = 0;

  bool is_split(const std::string& boundary) const;
  /// Single slot of an unsplit boundary.
  std::size_t slot_of(const std::string& boundary) const;
  const std::string& final_situation() const { return slots.back().name; }
};

/// A plan step with its action model grounded.
struct GroundStep {
  struct DuringCheck {
    GroundAtom atom;
    std::string state;
    std::optional<GroundAtom> gates;
  };

  PlanStep step;
  const ActionModel* model = nullptr;
  std::vector<GroundEffect> effects;
  std::vector<DuringCheck> conditions;
  std::vector<GroundEffect> during_effects;
  std::map<long, double> duration;
};

struct GroundResidual {
  ResidualEffect residual;
  std::vector<GroundEffect> effects;
};

/// Compiles a plan and a knowledge base into a PE-net. The stages are
/// exposed so tests can observe the network between them; build() runs
/// them in order.
class Construction {
 public:
  Construction(const Plan& plan, const KnowledgeBase& kb, BuildOptions opts = {});
  ~Construction();
  Construction(const Construction&) = delete;
  Construction& operator=(const Construction&) = delete;

  const Plan& flat_plan() const;
  const SituationPlan& schedule() const;
  const std::vector<GroundStep>& steps() const;
  const PENet& net() const;

  /// Reachable state labels per node key, with OTHER compaction applied.
  const std::map<std::string, std::vector<std::string>>& enumerate_states();

  void paste_initial();
  void paste_actions();
  void merge_contingent(const ContingencyGroup& group);
  void paste_residuals();
  void attach_during(const GroundStep& step);
  void add_clock();
  void split_situations();
  void complete_with_persistence();
  void attach_derived();
  PENet finalize();

  /// Runs every stage in pipeline order.
  PENet build();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Linearizes the flattened plan and, when clock time is enabled, splits
/// situations until every execution visits them in temporal order.
SituationPlan make_schedule(const Plan& flat, const std::vector<GroundStep>& steps, const BuildOptions& opts);

PENet build_pe_net(const Plan& plan, const KnowledgeBase& kb, const BuildOptions& opts = {});

/// Persistence rows conditioned on a negative elapsed time (provenance
/// marker); reachability is left to the caller.
struct NegativeElapsedRow {
  std::string node;
  ParentCombo combo;
};
std::vector<NegativeElapsedRow> negative_elapsed_rows(const PENet& net);

inline constexpr std::string_view kNegativeElapsedSource = "default persistence (negative elapsed)";

}  // namespace penet
