#pragma once

#include <optional>
#include <string>
#include <vector>

#include "penet/core_model.hpp"
#include "penet/diagnostics.hpp"
#include "penet/infer.hpp"
#include "penet/plan_model.hpp"

namespace penet {

struct SourceDocument {
  std::string text;
  std::string origin;  // file path, used in diagnostics

  static SourceDocument from_file(const std::string& path);
};

template <class T>
struct Parsed {
  T value;
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return diagnostics.empty(); }
};

/// Syntax errors and row normalization are reported here; the remaining
/// semantic checks belong to validate_kb.
Parsed<KnowledgeBase> parse_kb(const SourceDocument& doc);

/// Also reports unknown actions and predicates, arity errors and ordering
/// cycles, each at the offending line.
Parsed<Plan> parse_plan(const SourceDocument& doc, const KnowledgeBase& kb);

/// Canonical text; parse_kb(print_kb(kb)) reproduces kb.
std::string print_kb(const KnowledgeBase& kb);
std::string print_plan(const Plan& plan);

/// "(Loc A)=L2@S1" -> {"(Loc A)@S1", "L2"}; also accepts "select[g]@S0=alt".
std::optional<Assignment> parse_assignment(const std::string& text);

}  // namespace penet
