#pragma once

#include <random>
#include <string>

#include "penet/core_model.hpp"
#include "penet/plan_model.hpp"

namespace gen {

struct Options {
  std::size_t max_atoms = 10;
  std::size_t max_states = 4;
  std::size_t max_transitions = 3;
  double contingency = 0.35;
  double derived = 0.4;
  double multi_agent = 0.3;
  double during = 0.0;
  /// Upper bound on branching per row, keeps the joints enumerable.
  std::size_t row_support = 2;
};

struct Instance {
  penet::KnowledgeBase kb;
  penet::Plan plan;
};

/// Random partial action models, persistence, optional derived predicate,
/// optional contingency; always passes validate_kb and validate_plan.
Instance random_instance(std::mt19937_64& rng, const Options& opts = {});

/// Random distribution over `labels` with at most `support` nonzero entries.
penet::Distribution random_distribution(std::mt19937_64& rng, const std::vector<std::string>& labels,
                                        std::size_t support);

}  // namespace gen

#include "penet/pe_net.hpp"

namespace gen {

/// Random fragment over a fixed two-situation vocabulary: primitive (X) and
/// (Y) in S0 and S1, derived (Z) in S1. Parent lists are fixed per node; the
/// row subset and probabilities vary.
penet::Fragment random_fragment(std::mt19937_64& rng, const std::string& source);

/// Empty two-situation net for random_fragment.
penet::PENet fragment_base();

}  // namespace gen
