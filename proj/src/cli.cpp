#include "penet/cli.hpp"

#include <fstream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "penet/construct.hpp"
#include "penet/dsl.hpp"
#include "penet/error.hpp"
#include "penet/graph_export.hpp"
#include "penet/infer.hpp"

namespace penet {

namespace {

struct Exit {
  int code;
};

struct Inputs {
  std::string kb_path;
  std::string plan_path;
  bool clock = false;
  bool nullify = false;
  std::size_t state_cap = 64;
  std::size_t clock_cap = 64;
};

void add_inputs(CLI::App* cmd, Inputs& in) {
  cmd->add_option("kb", in.kb_path, "knowledge base file")->required();
  cmd->add_option("plan", in.plan_path, "plan file")->required();
  cmd->add_flag("--clock", in.clock, "model action durations and clock time");
  cmd->add_flag("--nullify-on-during-failure", in.nullify, "a failed during condition cancels the whole action");
  cmd->add_option("--state-cap", in.state_cap, "states per node before OTHER compaction")->check(CLI::Range(2, 1 << 20));
  cmd->add_option("--clock-cap", in.clock_cap, "clock values before OTHER compaction")->check(CLI::Range(2, 1 << 20));
}

void print_diagnostics(const std::vector<Diagnostic>& ds, std::ostream& err) {
  for (const auto& d : ds) err << d.str() << "\n";
}

SourceDocument read(const std::string& path, std::ostream& err) {
  try {
    return SourceDocument::from_file(path);
  } catch (const std::exception& e) {
    err << path << ":0:0: error: " << e.what() << "\n";
    throw Exit{1};
  }
}

struct Loaded {
  KnowledgeBase kb;
  Plan plan;
};

Loaded load(const Inputs& in, std::ostream& err) {
  auto kb = parse_kb(read(in.kb_path, err));
  if (!kb.ok()) {
    print_diagnostics(kb.diagnostics, err);
    throw Exit{1};
  }
  if (auto ds = validate_kb(kb.value); !ds.empty()) {
    print_diagnostics(ds, err);
    throw Exit{1};
  }
  auto plan = parse_plan(read(in.plan_path, err), kb.value);
  if (!plan.ok()) {
    print_diagnostics(plan.diagnostics, err);
    throw Exit{1};
  }
  if (auto ds = validate_plan(plan.value, kb.value); !ds.empty()) {
    print_diagnostics(ds, err);
    throw Exit{1};
  }
  return {std::move(kb.value), std::move(plan.value)};
}

BuildOptions options(const Inputs& in) {
  BuildOptions o;
  o.clock_enabled = in.clock;
  o.during_failure = in.nullify ? DuringFailure::NullifyAction : DuringFailure::GateEffectOnly;
  o.state_cap = in.state_cap;
  o.clock_cap = in.clock_cap;
  return o;
}

PENet build(const Loaded& l, const BuildOptions& o, const Inputs& in, std::ostream& err) {
  try {
    return build_pe_net(l.plan, l.kb, o);
  } catch (const Error& e) {
    err << in.plan_path << ":0:0: error: " << e.what() << "\n";
    throw Exit{1};
  }
}

std::vector<Assignment> assignments(const std::vector<std::string>& texts, std::ostream& err) {
  std::vector<Assignment> out;
  for (const auto& t : texts) {
    auto a = parse_assignment(t);
    if (!a) {
      err << "error: cannot read assignment '" << t << "', expected (Pred args)=state@S or key=state\n";
      throw Exit{1};
    }
    out.push_back(*a);
  }
  return out;
}

std::string report(const std::string& key, const QueryResult& r) {
  if (r.standard_error) return fmt::format("{} = {:.6f} ± {:.6f}\n", key, r.probability, *r.standard_error);
  return fmt::format("{} = {:.6f}\n", key, r.probability);
}

void write_file(const std::string& path, const std::string& text, std::ostream& err) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) {
    err << path << ":0:0: error: cannot write file\n";
    throw Exit{1};
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Plan evaluation networks: build, evaluate and export"};
  app.require_subcommand(1);

  Inputs build_in, eval_in, export_in, cmp_in;
  std::string net_out, dot_out;
  bool goal_only = false, exact = false;
  std::optional<std::size_t> mc;
  std::uint64_t seed = 0;
  std::size_t threads = 1, seeds = 5;
  std::vector<std::string> evidence, queries;

  auto* build_cmd = app.add_subcommand("build", "construct and finalize the net");
  add_inputs(build_cmd, build_in);
  build_cmd->add_option("--out", net_out, "write a listing of the net");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate plan success probabilities");
  add_inputs(eval_cmd, eval_in);
  eval_cmd->add_flag("--goal-only", goal_only, "report leads_to_success only");
  auto* exact_opt = eval_cmd->add_flag("--exact", exact, "variable elimination (default)");
  auto* mc_opt = eval_cmd->add_option("--mc", mc, "Monte Carlo with N samples");
  exact_opt->excludes(mc_opt);
  eval_cmd->add_option("--seed", seed, "Monte Carlo seed");
  eval_cmd->add_option("--threads", threads, "Monte Carlo worker threads")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--evidence", evidence, "(Pred args)=state@S");
  eval_cmd->add_option("--query", queries, "extra probability to report, (Pred args)=state@S");

  auto* export_cmd = app.add_subcommand("export", "write the net as a Graphviz digraph");
  add_inputs(export_cmd, export_in);
  export_cmd->add_option("--dot-out", dot_out, "output file")->required();

  auto* cmp_cmd = app.add_subcommand("compare-linearizations", "goal probability under seeded tie-breaks");
  add_inputs(cmp_cmd, cmp_in);
  cmp_cmd->add_option("--seeds", seeds, "number of seeded linearizations");

  std::vector<std::string> args(argv.size() > 1 ? argv.begin() + 1 : argv.end(), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (build_cmd->parsed()) {
      auto l = load(build_in, err);
      auto net = build(l, options(build_in), build_in, err);
      out << fmt::format("situations = {}\nnodes = {}\n", net.situations().size(), net.size());
      if (!net_out.empty()) write_file(net_out, dump_net(net), err);
      return 0;
    }
    if (export_cmd->parsed()) {
      auto l = load(export_in, err);
      auto net = build(l, options(export_in), export_in, err);
      write_file(dot_out, export_graph(net), err);
      return 0;
    }
    if (eval_cmd->parsed()) {
      auto l = load(eval_in, err);
      auto net = build(l, options(eval_in), eval_in, err);
      InferenceMode mode = ExactMode{};
      if (mc) mode = MonteCarloMode{*mc, seed, threads};
      auto ev = assignments(evidence, err);
      auto qs = assignments(queries, err);
      try {
        std::string text = report("leads_to_success", leads_to_success(net, mode, ev));
        if (!goal_only) text += report("plan_success", plan_success(net, mode, ev));
        for (const auto& q : qs)
          text += report(fmt::format("P({}={})", q.node, q.state), run_query(net, Query{{q}, ev, mode}));
        out << text;
      } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
      }
      return 0;
    }
    if (cmp_cmd->parsed()) {
      auto l = load(cmp_in, err);
      auto o = options(cmp_in);
      try {
        out << report("leads_to_success[default]", leads_to_success(build(l, o, cmp_in, err)));
        for (std::size_t s = 0; s < seeds; ++s) {
          o.tie_break = TieBreak::seeded(s);
          out << report(fmt::format("leads_to_success[seed={}]", s), leads_to_success(build(l, o, cmp_in, err)));
        }
      } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
      }
      return 0;
    }
  } catch (const Exit& e) {
    return e.code;
  }
  return 1;
}

}  // namespace penet
