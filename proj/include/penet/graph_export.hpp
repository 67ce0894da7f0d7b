#pragma once

#include <string>

#include "penet/pe_net.hpp"

namespace penet {

/// Graphviz digraph, one cluster per situation. Byte-identical for equal nets.
std::string export_graph(const PENet& net);

/// Plain listing of nodes, parents and CPT rows with provenance.
std::string dump_net(const PENet& net);

}  // namespace penet
