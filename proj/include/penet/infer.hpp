#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "penet/pe_net.hpp"

namespace penet {

/// node key = state label
struct Assignment {
  std::string node;
  std::string state;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

struct ExactMode {
  std::size_t max_width = 20;
};

struct MonteCarloMode {
  std::size_t samples = 10000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

using InferenceMode = std::variant<ExactMode, MonteCarloMode>;

/// P(all targets | all evidence).
struct Query {
  std::vector<Assignment> targets;
  std::vector<Assignment> evidence;
  InferenceMode mode = ExactMode{};
};

enum class Estimator { Exact, MonteCarlo, Enumeration };

std::string_view to_string(Estimator e);

struct QueryResult {
  double probability = 0;
  Estimator estimator = Estimator::Exact;
  std::optional<double> standard_error;  // Monte Carlo only
  std::size_t elimination_width = 0;     // exact only
  std::size_t samples = 0;               // Monte Carlo only
  double evidence_probability = 1;       // exact and enumeration
};

/// Samples per deterministic RNG chunk.
inline constexpr std::size_t kChunkSize = 4096;

/// Variable elimination over the ancestors of the query variables.
/// Throws WidthExceeded, InfeasibleEvidence, UnknownNode, InvalidQuery.
QueryResult exact_query(const PENet& net, const Query& q, const ExactMode& mode = {});

/// Likelihood-weighted forward sampling. Results depend only on the seed
/// and sample count, not on the thread count. Throws ZeroWeight.
QueryResult mc_query(const PENet& net, const Query& q, const MonteCarloMode& mode);

/// Dispatches on q.mode.
QueryResult run_query(const PENet& net, const Query& q);

/// Brute-force enumeration over the ancestral closure; a reference for
/// small networks. Throws TooLarge when the joint exceeds `limit` states.
QueryResult oracle_enumerate(const PENet& net, const Query& q, double limit = 1e7);

/// Posterior over every state of one node.
std::map<std::string, double> exact_marginal(const PENet& net, const std::string& node,
                                             const std::vector<Assignment>& evidence = {},
                                             const ExactMode& mode = {});

/// Goals hold in the final situation and every expansion choice on the
/// selected path was taken.
QueryResult plan_success(const PENet& net, const InferenceMode& mode = ExactMode{},
                         const std::vector<Assignment>& evidence = {});

/// Goals hold in the final situation, however they were reached.
QueryResult leads_to_success(const PENet& net, const InferenceMode& mode = ExactMode{},
                             const std::vector<Assignment>& evidence = {});

/// Min-fill elimination order over the given nodes' moral graph, and the
/// induced width it achieves.
struct EliminationPlan {
  std::vector<std::string> order;
  std::size_t width = 0;
};
EliminationPlan min_fill_order(const PENet& net, const std::vector<std::string>& nodes);

}  // namespace penet
