#include "penet/graph_export.hpp"

#include <map>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "penet/error.hpp"

namespace penet {

namespace {

std::string_view shape(const Node& n) {
  switch (n.kind) {
    case NodeKind::Primitive: return n.id.role == NodeRole::DuringGate ? "note" : "ellipse";
    case NodeKind::Derived: return "box";
    case NodeKind::ActionSelection: return "diamond";
    case NodeKind::Clock: return n.id.role == NodeRole::EventTime ? "doubleoctagon" : "octagon";
    case NodeKind::RelativeEndTime: return "hexagon";
  }
  return "ellipse";
}

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string export_graph(const PENet& net) {
  if (!net.finalized()) throw Error(ErrorCode::InvalidQuery, "export needs a finalized net");
  std::map<std::string, std::vector<const Node*>> by_situation;
  for (const auto& n : net.nodes()) by_situation[n.id.situation].push_back(&n);

  std::string out = "digraph penet {\n  rankdir=LR;\n  node [fontsize=10];\n";
  for (std::size_t i = 0; i < net.situations().size(); ++i) {
    const auto& s = net.situations()[i];
    out += fmt::format("  subgraph cluster_{} {{\n    label={};\n", i, quote(s));
    for (const auto* n : by_situation[s])
      out += fmt::format("    {} [label={}, shape={}, situation={}, states={}];\n", quote(n->key()),
                         quote(n->id.subject), shape(*n), i, quote(fmt::format("{}", fmt::join(n->states, ","))));
    out += "  }\n";
  }
  for (const auto& n : net.nodes())
    for (const auto& p : n.parents) out += fmt::format("  {} -> {};\n", quote(p), quote(n.key()));
  return out + "}\n";
}

std::string dump_net(const PENet& net) {
  std::string out = fmt::format("situations {}\n", fmt::join(net.situations(), " "));
  for (const auto& n : net.nodes()) {
    out += fmt::format("node {} kind={} states={{{}}} parents={{{}}}\n", n.key(), to_string(n.kind),
                       fmt::join(n.states, " "), fmt::join(n.parents, " "));
    for (const auto& [combo, row] : n.rows) {
      std::vector<std::string> labels;
      for (std::size_t i = 0; i < combo.size(); ++i) labels.push_back(net.node(n.parents[i]).states[combo[i]]);
      out += fmt::format("  [{}] -> [{}]  # {} ({})\n", fmt::join(labels, " "), fmt::join(row.probs, " "),
                         row.provenance.source, row.provenance.mode == PasteMode::Onto ? "onto" : "into");
    }
  }
  for (const auto& [k, s] : net.annotations().goals) out += fmt::format("goal {}={}\n", k, s);
  for (const auto& [k, s] : net.annotations().selected_path) out += fmt::format("selected {}={}\n", k, s);
  return out;
}

}  // namespace penet
