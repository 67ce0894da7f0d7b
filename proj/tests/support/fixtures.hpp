#pragma once

#include <stdexcept>
#include <string>

#include "penet/dsl.hpp"

namespace fixtures {

inline std::string path(const std::string& name) { return std::string(PENET_TEST_DATA) + "/" + name; }

inline penet::KnowledgeBase kb(const std::string& name) {
  auto r = penet::parse_kb(penet::SourceDocument::from_file(path(name)));
  if (!r.ok()) throw std::runtime_error(r.diagnostics.front().str());
  return r.value;
}

inline penet::Plan plan(const std::string& name, const penet::KnowledgeBase& kb) {
  auto r = penet::parse_plan(penet::SourceDocument::from_file(path(name)), kb);
  if (!r.ok()) throw std::runtime_error(r.diagnostics.front().str());
  return r.value;
}

}  // namespace fixtures
