#include "penet/pe_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "penet/error.hpp"

namespace penet {

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Primitive: return "primitive";
    case NodeKind::Derived: return "derived";
    case NodeKind::ActionSelection: return "action-selection";
    case NodeKind::Clock: return "clock";
    case NodeKind::RelativeEndTime: return "relative-end-time";
  }
  return "?";
}

int Node::state_index(std::string_view label) const {
  auto it = std::find(states.begin(), states.end(), label);
  return it == states.end() ? -1 : static_cast<int>(it - states.begin());
}

void for_each_combination(const std::vector<std::size_t>& cardinality,
                          const std::function<void(const ParentCombo&)>& fn) {
  for (auto c : cardinality)
    if (c == 0) return;
  ParentCombo combo(cardinality.size(), 0);
  while (true) {
    fn(combo);
    std::size_t i = cardinality.size();
    while (i > 0) {
      --i;
      if (static_cast<std::size_t>(++combo[i]) < cardinality[i]) break;
      combo[i] = 0;
      if (i == 0) return;
    }
    if (cardinality.empty()) return;
  }
}

PENet::PENet(std::vector<std::string> situations) : situations_(std::move(situations)) {}

int PENet::situation_index(std::string_view name) const {
  auto it = std::find(situations_.begin(), situations_.end(), name);
  return it == situations_.end() ? -1 : static_cast<int>(it - situations_.begin());
}

const Node* PENet::find(std::string_view key) const {
  auto it = index_.find(std::string(key));
  return it == index_.end() ? nullptr : &nodes_[it->second];
}

const Node& PENet::node(std::string_view key) const {
  const auto* n = find(key);
  if (!n) throw Error(ErrorCode::UnknownNode, std::string(key));
  return *n;
}

Node& PENet::mutable_node(std::string_view key) { return nodes_[index_.at(std::string(key))]; }

std::vector<ParentCombo> PENet::combinations(const Node& node) const {
  std::vector<std::size_t> card;
  for (const auto& p : node.parents) card.push_back(this->node(p).states.size());
  std::vector<ParentCombo> out;
  for_each_combination(card, [&](const ParentCombo& c) { out.push_back(c); });
  return out;
}

std::vector<std::size_t> PENet::topological_order() const {
  std::vector<int> indegree(nodes_.size(), 0);
  std::vector<std::vector<std::size_t>> children(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    for (const auto& p : nodes_[i].parents) {
      children[index_.at(p)].push_back(i);
      ++indegree[i];
    }
  std::vector<std::size_t> order, ready;
  for (std::size_t i = nodes_.size(); i-- > 0;)
    if (indegree[i] == 0) ready.push_back(i);
  // Smallest index first keeps the order deterministic and close to insertion order.
  while (!ready.empty()) {
    auto it = std::min_element(ready.begin(), ready.end());
    auto n = *it;
    ready.erase(it);
    order.push_back(n);
    for (auto c : children[n])
      if (--indegree[c] == 0) ready.push_back(c);
  }
  return order;
}

void PENet::check_arc(const Node& parent, const Node& child) const {
  const bool world_parent = parent.kind == NodeKind::Primitive || parent.kind == NodeKind::Derived;
  const int ps = situation_index(parent.id.situation);
  const int cs = situation_index(child.id.situation);
  if (child.kind == NodeKind::Primitive && world_parent && ps != cs - 1)
    throw Error(ErrorCode::LayeringViolation,
                fmt::format("arc {} -> {}: primitive nodes may only depend on the preceding situation",
                            parent.key(), child.key()));
  if (child.kind == NodeKind::Derived && (parent.kind != NodeKind::Primitive || ps != cs))
    throw Error(ErrorCode::LayeringViolation,
                fmt::format("arc {} -> {}: derived nodes may only depend on primitive nodes of their own situation",
                            parent.key(), child.key()));
}

void PENet::extend_states(Node& node, const std::vector<std::string>& extra) {
  for (const auto& s : extra) {
    if (node.state_index(s) >= 0) continue;
    node.states.push_back(s);
    for (auto& [combo, row] : node.rows) row.probs.push_back(0.0);
  }
}

void PENet::extend_parents(Node& node, const std::vector<std::string>& extra) {
  for (const auto& p : extra) {
    if (std::find(node.parents.begin(), node.parents.end(), p) != node.parents.end()) continue;
    const auto& parent = this->node(p);
    check_arc(parent, node);
    node.parents.push_back(p);
    std::map<ParentCombo, CptRow> rows;
    for (auto& [combo, row] : node.rows)
      for (std::size_t s = 0; s < parent.states.size(); ++s) {
        auto c = combo;
        c.push_back(static_cast<int>(s));
        rows.emplace(std::move(c), row);
      }
    node.rows = std::move(rows);
  }
}

void PENet::paste(const Fragment& fragment, PasteMode mode) {
  if (finalized_) throw Error(ErrorCode::FrozenNet, "cannot paste into a finalized net");

  // Touched nodes are backed up so a failed paste leaves the net unchanged.
  const std::size_t original_size = nodes_.size();
  std::vector<std::pair<std::size_t, Node>> backup;
  bool arcs_added = false;
  auto rollback = [&] {
    for (auto& [i, n] : backup) nodes_[i] = std::move(n);
    while (nodes_.size() > original_size) {
      index_.erase(nodes_.back().key());
      nodes_.pop_back();
    }
  };

  try {
    for (const auto& fn : fragment.nodes) {
      const auto key = fn.id.key();
      if (situation_index(fn.id.situation) < 0)
        throw Error(ErrorCode::InvalidFragment, fmt::format("{}: unknown situation", key));
      if (fn.parents.size() != std::set<std::string>(fn.parents.begin(), fn.parents.end()).size())
        throw Error(ErrorCode::InvalidFragment, fmt::format("{}: repeated parent", key));

      auto it = index_.find(key);
      if (it == index_.end()) {
        Node n;
        n.id = fn.id;
        n.kind = fn.kind;
        nodes_.push_back(std::move(n));
        index_[key] = nodes_.size() - 1;
      } else {
        if (nodes_[it->second].kind != fn.kind)
          throw Error(ErrorCode::InvalidFragment, fmt::format("{}: node kind mismatch", key));
        if (it->second < original_size &&
            std::none_of(backup.begin(), backup.end(), [&](const auto& b) { return b.first == it->second; }))
          backup.emplace_back(it->second, nodes_[it->second]);
      }
      const std::size_t idx = index_.at(key);

      std::vector<std::string> labels = fn.states;
      for (const auto& r : fn.rows)
        for (const auto& [label, p] : r.distribution)
          if (std::find(labels.begin(), labels.end(), label) == labels.end()) labels.push_back(label);
      extend_states(nodes_[idx], labels);

      for (const auto& p : fn.parents) {
        if (!find(p)) throw Error(ErrorCode::InvalidFragment, fmt::format("{}: unknown parent {}", key, p));
        if (std::find(nodes_[idx].parents.begin(), nodes_[idx].parents.end(), p) == nodes_[idx].parents.end())
          arcs_added = true;
      }
      extend_parents(nodes_[idx], fn.parents);

      Node& node = nodes_[idx];
      // Position of each node parent within the fragment's parent list.
      std::vector<int> frag_pos(node.parents.size(), -1);
      std::vector<std::size_t> free_card;
      std::vector<std::size_t> free_slots;
      for (std::size_t i = 0; i < node.parents.size(); ++i) {
        auto f = std::find(fn.parents.begin(), fn.parents.end(), node.parents[i]);
        if (f != fn.parents.end()) {
          frag_pos[i] = static_cast<int>(f - fn.parents.begin());
        } else {
          free_slots.push_back(i);
          free_card.push_back(this->node(node.parents[i]).states.size());
        }
      }

      for (const auto& r : fn.rows) {
        if (r.parent_states.size() != fn.parents.size())
          throw Error(ErrorCode::InvalidFragment, fmt::format("{}: row arity mismatch", key));
        ParentCombo base(node.parents.size(), 0);
        for (std::size_t i = 0; i < node.parents.size(); ++i) {
          if (frag_pos[i] < 0) continue;
          const auto& label = r.parent_states[static_cast<std::size_t>(frag_pos[i])];
          int s = this->node(node.parents[i]).state_index(label);
          if (s < 0)
            throw Error(ErrorCode::InvalidFragment,
                        fmt::format("{}: {} is not a state of parent {}", key, label, node.parents[i]));
          base[i] = s;
        }
        CptRow row;
        row.probs.assign(node.states.size(), 0.0);
        for (const auto& [label, p] : r.distribution) row.probs[static_cast<std::size_t>(node.state_index(label))] += p;
        row.provenance = {fragment.source, mode};
        for_each_combination(free_card, [&](const ParentCombo& free) {
          auto combo = base;
          for (std::size_t k = 0; k < free_slots.size(); ++k) combo[free_slots[k]] = free[k];
          if (mode == PasteMode::Onto) node.rows[combo] = row;
          else node.rows.emplace(std::move(combo), row);
        });
      }
    }
    if (arcs_added && topological_order().size() != nodes_.size())
      throw Error(ErrorCode::LayeringViolation, "paste would create a directed cycle");
  } catch (...) {
    rollback();
    throw;
  }
}

PENet paste_onto(PENet net, const Fragment& fragment) {
  net.paste(fragment, PasteMode::Onto);
  return net;
}

PENet paste_into(PENet net, const Fragment& fragment) {
  net.paste(fragment, PasteMode::Into);
  return net;
}

PENet finalize(PENet net) {
  if (net.finalized()) return net;
  for (const auto& node : net.nodes()) {
    if (node.states.empty()) throw Error(ErrorCode::IncompleteCPT, node.key() + ": no states");
    for (const auto& combo : net.combinations(node)) {
      auto describe = [&] {
        std::vector<std::string> parts;
        for (std::size_t i = 0; i < combo.size(); ++i)
          parts.push_back(node.parents[i] + "=" + net.node(node.parents[i]).states[static_cast<std::size_t>(combo[i])]);
        return fmt::format("{} [{}]", node.key(), fmt::join(parts, ", "));
      };
      auto it = node.rows.find(combo);
      if (it == node.rows.end())
        throw Error(ErrorCode::IncompleteCPT, "missing row for " + describe());
      double sum = 0;
      for (double p : it->second.probs) {
        if (p < -kProbTolerance || p > 1 + kProbTolerance)
          throw Error(ErrorCode::IncompleteCPT, fmt::format("probability {} outside [0,1] in {}", p, describe()));
        sum += p;
      }
      if (std::abs(sum - 1.0) > kProbTolerance)
        throw Error(ErrorCode::IncompleteCPT, fmt::format("row sums to {} in {}", sum, describe()));
    }
  }
  net.freeze();
  return net;
}

}  // namespace penet
