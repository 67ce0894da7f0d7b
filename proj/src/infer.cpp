#include "penet/infer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "penet/error.hpp"

namespace penet {

std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::Exact: return "exact";
    case Estimator::MonteCarlo: return "monte-carlo";
    case Estimator::Enumeration: return "enumeration";
  }
  return "?";
}

namespace {

// Relevant part of a finalized net with dense CPT tables.
struct Compiled {
  std::vector<const Node*> nodes;  // topological order
  std::map<std::string, int> local;
  std::vector<int> card;
  std::vector<std::vector<int>> parents;
  std::vector<std::vector<double>> table;  // [combo * card + state], first parent most significant

  const double* row(int i, const std::vector<int>& values) const {
    std::size_t combo = 0;
    for (int p : parents[static_cast<std::size_t>(i)])
      combo = combo * static_cast<std::size_t>(card[static_cast<std::size_t>(p)]) +
              static_cast<std::size_t>(values[static_cast<std::size_t>(p)]);
    return &table[static_cast<std::size_t>(i)][combo * static_cast<std::size_t>(card[static_cast<std::size_t>(i)])];
  }
};

Compiled compile(const PENet& net, const std::vector<std::string>& roots) {
  std::set<std::string> keep;
  std::vector<std::string> stack(roots.begin(), roots.end());
  while (!stack.empty()) {
    auto k = stack.back();
    stack.pop_back();
    if (!keep.insert(k).second) continue;
    for (const auto& p : net.node(k).parents) stack.push_back(p);
  }
  Compiled c;
  for (auto i : net.topological_order()) {
    const auto& n = net.nodes()[i];
    if (!keep.count(n.key())) continue;
    c.local[n.key()] = static_cast<int>(c.nodes.size());
    c.nodes.push_back(&n);
  }
  for (const auto* n : c.nodes) c.card.push_back(static_cast<int>(n->states.size()));
  for (const auto* n : c.nodes) {
    std::vector<int> ps;
    std::size_t combos = 1;
    for (const auto& p : n->parents) {
      ps.push_back(c.local.at(p));
      combos *= static_cast<std::size_t>(c.card[static_cast<std::size_t>(ps.back())]);
    }
    std::vector<double> t(combos * n->states.size(), 0.0);
    for (const auto& [combo, row] : n->rows) {
      std::size_t idx = 0;
      for (std::size_t j = 0; j < combo.size(); ++j)
        idx = idx * static_cast<std::size_t>(c.card[static_cast<std::size_t>(ps[j])]) + static_cast<std::size_t>(combo[j]);
      std::copy(row.probs.begin(), row.probs.end(), t.begin() + static_cast<std::ptrdiff_t>(idx * n->states.size()));
    }
    c.parents.push_back(std::move(ps));
    c.table.push_back(std::move(t));
  }
  return c;
}

struct Clamps {
  std::map<std::string, int> targets;
  std::map<std::string, int> evidence;
  bool target_conflict = false;  // targets contradict themselves or the evidence
};

Clamps check_query(const PENet& net, const Query& q) {
  if (!net.finalized()) throw Error(ErrorCode::InvalidQuery, "the net must be finalized before querying");
  Clamps out;
  auto resolve = [&](const Assignment& a) {
    const auto& n = net.node(a.node);
    int s = n.state_index(a.state);
    if (s < 0) throw Error(ErrorCode::InvalidQuery, fmt::format("{} is not a state of {}", a.state, a.node));
    return s;
  };
  for (const auto& e : q.evidence) {
    int s = resolve(e);
    auto [it, fresh] = out.evidence.emplace(e.node, s);
    if (!fresh && it->second != s)
      throw Error(ErrorCode::InfeasibleEvidence, fmt::format("contradictory evidence on {}", e.node));
  }
  for (const auto& t : q.targets) {
    // A state that was never enumerated is unreachable.
    if (net.node(t.node).state_index(t.state) < 0) {
      out.target_conflict = true;
      continue;
    }
    int s = resolve(t);
    auto [it, fresh] = out.targets.emplace(t.node, s);
    if (!fresh && it->second != s) out.target_conflict = true;
    auto ev = out.evidence.find(t.node);
    if (ev != out.evidence.end() && ev->second != s) out.target_conflict = true;
  }
  return out;
}

std::vector<std::string> query_roots(const Query& q) {
  std::vector<std::string> roots;
  for (const auto& a : q.targets) roots.push_back(a.node);
  for (const auto& a : q.evidence) roots.push_back(a.node);
  return roots;
}

// --- variable elimination ----------------------------------------------------

struct Factor {
  std::vector<int> vars;  // ascending
  std::vector<int> card;
  std::vector<double> values;
};

Factor multiply(const std::vector<const Factor*>& fs, const std::vector<int>& card) {
  Factor out;
  std::set<int> scope;
  for (const auto* f : fs) scope.insert(f->vars.begin(), f->vars.end());
  out.vars.assign(scope.begin(), scope.end());
  std::size_t size = 1;
  for (int v : out.vars) {
    out.card.push_back(card[static_cast<std::size_t>(v)]);
    size *= static_cast<std::size_t>(card[static_cast<std::size_t>(v)]);
  }
  // strides[f][j]: contribution of out.vars[j] to factor f's index.
  std::vector<std::vector<std::size_t>> strides;
  for (const auto* f : fs) {
    std::vector<std::size_t> s(out.vars.size(), 0);
    std::size_t stride = 1;
    for (std::size_t k = f->vars.size(); k-- > 0;) {
      auto pos = static_cast<std::size_t>(std::lower_bound(out.vars.begin(), out.vars.end(), f->vars[k]) - out.vars.begin());
      s[pos] = stride;
      stride *= static_cast<std::size_t>(f->card[k]);
    }
    strides.push_back(std::move(s));
  }
  out.values.assign(size, 1.0);
  std::vector<int> a(out.vars.size(), 0);
  for (std::size_t i = 0; i < size; ++i) {
    double v = 1.0;
    for (std::size_t f = 0; f < fs.size() && v != 0.0; ++f) {
      std::size_t idx = 0;
      for (std::size_t j = 0; j < a.size(); ++j) idx += strides[f][j] * static_cast<std::size_t>(a[j]);
      v *= fs[f]->values[idx];
    }
    out.values[i] = v;
    for (std::size_t j = a.size(); j-- > 0;) {
      if (++a[j] < out.card[j]) break;
      a[j] = 0;
    }
  }
  return out;
}

Factor sum_out(const Factor& f, int var) {
  auto pos = static_cast<std::size_t>(std::find(f.vars.begin(), f.vars.end(), var) - f.vars.begin());
  Factor out;
  for (std::size_t j = 0; j < f.vars.size(); ++j)
    if (j != pos) {
      out.vars.push_back(f.vars[j]);
      out.card.push_back(f.card[j]);
    }
  std::size_t inner = 1;
  for (std::size_t j = pos + 1; j < f.vars.size(); ++j) inner *= static_cast<std::size_t>(f.card[j]);
  const auto k = static_cast<std::size_t>(f.card[pos]);
  const std::size_t outer = f.values.size() / (inner * k);
  out.values.assign(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t s = 0; s < k; ++s)
      for (std::size_t i = 0; i < inner; ++i) out.values[o * inner + i] += f.values[(o * k + s) * inner + i];
  return out;
}

struct Order {
  std::vector<int> order;
  std::size_t width = 0;
};

// Greedy min-fill; ties go to the smaller node key.
Order min_fill(std::map<int, std::set<int>> adj, const std::vector<std::string>& names) {
  Order out;
  while (!adj.empty()) {
    int best = -1;
    std::size_t best_fill = 0;
    for (const auto& [v, nb] : adj) {
      std::size_t fill = 0;
      for (auto a = nb.begin(); a != nb.end(); ++a)
        for (auto b = std::next(a); b != nb.end(); ++b)
          if (!adj.at(*a).count(*b)) ++fill;
      if (best < 0 || fill < best_fill ||
          (fill == best_fill && names[static_cast<std::size_t>(v)] < names[static_cast<std::size_t>(best)])) {
        best = v;
        best_fill = fill;
      }
    }
    const auto nb = adj.at(best);
    out.width = std::max(out.width, nb.size());
    for (int a : nb) {
      for (int b : nb)
        if (a != b) adj.at(a).insert(b);
      adj.at(a).erase(best);
    }
    adj.erase(best);
    out.order.push_back(best);
  }
  return out;
}

struct Elimination {
  double value = 0;
  std::size_t width = 0;
};

Elimination eliminate(const Compiled& c, const std::map<int, int>& clamp, std::size_t max_width) {
  std::vector<Factor> factors;
  std::map<int, std::set<int>> adj;
  std::vector<std::string> names;
  for (const auto* n : c.nodes) names.push_back(n->key());

  for (std::size_t i = 0; i < c.nodes.size(); ++i) {
    std::vector<int> scope = c.parents[i];
    scope.push_back(static_cast<int>(i));
    Factor f;
    std::vector<int> free;
    for (int v : scope)
      if (!clamp.count(v)) free.push_back(v);
    std::sort(free.begin(), free.end());
    free.erase(std::unique(free.begin(), free.end()), free.end());
    f.vars = free;
    std::size_t size = 1;
    for (int v : free) {
      f.card.push_back(c.card[static_cast<std::size_t>(v)]);
      size *= static_cast<std::size_t>(c.card[static_cast<std::size_t>(v)]);
    }
    f.values.resize(size);
    std::vector<int> values(c.nodes.size(), 0);
    for (const auto& [v, s] : clamp) values[static_cast<std::size_t>(v)] = s;
    std::vector<int> a(free.size(), 0);
    for (std::size_t k = 0; k < size; ++k) {
      for (std::size_t j = 0; j < free.size(); ++j) values[static_cast<std::size_t>(free[j])] = a[j];
      f.values[k] = c.row(static_cast<int>(i), values)[values[i]];
      for (std::size_t j = a.size(); j-- > 0;) {
        if (++a[j] < f.card[j]) break;
        a[j] = 0;
      }
    }
    for (int v : free) {
      adj[v];
      for (int w : free)
        if (v != w) adj[v].insert(w);
    }
    factors.push_back(std::move(f));
  }

  auto order = min_fill(adj, names);
  if (order.width > max_width)
    throw Error(ErrorCode::WidthExceeded,
                fmt::format("induced width {} exceeds the limit of {}", order.width, max_width));

  std::vector<Factor> pool = std::move(factors);
  for (int v : order.order) {
    std::vector<const Factor*> with;
    std::vector<Factor> rest;
    for (const auto& f : pool)
      if (std::find(f.vars.begin(), f.vars.end(), v) != f.vars.end()) with.push_back(&f);
    Factor merged = sum_out(multiply(with, c.card), v);
    for (auto& f : pool)
      if (std::find(f.vars.begin(), f.vars.end(), v) == f.vars.end()) rest.push_back(std::move(f));
    rest.push_back(std::move(merged));
    pool = std::move(rest);
  }
  double value = 1.0;
  for (const auto& f : pool) value *= f.values.empty() ? 1.0 : f.values.front();
  return {value, order.width};
}

std::map<int, int> localize(const Compiled& c, const std::map<std::string, int>& m) {
  std::map<int, int> out;
  for (const auto& [k, s] : m) out[c.local.at(k)] = s;
  return out;
}

}  // namespace

QueryResult exact_query(const PENet& net, const Query& q, const ExactMode& mode) {
  auto clamps = check_query(net, q);
  QueryResult r;
  r.estimator = Estimator::Exact;
  auto c = compile(net, query_roots(q));

  auto evidence = localize(c, clamps.evidence);
  auto pe = eliminate(c, evidence, mode.max_width);
  r.elimination_width = pe.width;
  r.evidence_probability = pe.value;
  if (pe.value <= 0) throw Error(ErrorCode::InfeasibleEvidence, "the evidence has probability zero");
  if (clamps.target_conflict) return r;

  auto joint = evidence;
  for (const auto& [k, s] : localize(c, clamps.targets)) joint[k] = s;
  auto pte = eliminate(c, joint, mode.max_width);
  r.elimination_width = std::max(r.elimination_width, pte.width);
  r.probability = std::clamp(pte.value / pe.value, 0.0, 1.0);
  return r;
}

// --- Monte Carlo -------------------------------------------------------------

namespace {

struct ChunkSums {
  double w = 0, wf = 0, w2 = 0, w2f = 0;
};

double u01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

ChunkSums run_chunk(const Compiled& c, const std::vector<int>& evidence, const std::vector<int>& target,
                    std::uint64_t seed, std::size_t chunk, std::size_t samples) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chunk & 0xffffffffu), static_cast<std::uint32_t>(chunk >> 32)};
  std::mt19937_64 rng(seq);
  ChunkSums s;
  std::vector<int> values(c.nodes.size(), 0);
  for (std::size_t n = 0; n < samples; ++n) {
    double w = 1.0;
    bool hit = true;
    for (std::size_t i = 0; i < c.nodes.size(); ++i) {
      const double* row = c.row(static_cast<int>(i), values);
      if (evidence[i] >= 0) {
        values[i] = evidence[i];
        w *= row[evidence[i]];
      } else {
        const double u = u01(rng);
        const int k = c.card[i];
        double acc = 0;
        int pick = -1;
        for (int x = 0; x < k; ++x) {
          if (row[x] <= 0) continue;
          acc += row[x];
          pick = x;
          if (u < acc) break;
        }
        values[i] = pick < 0 ? 0 : pick;
      }
      if (target[i] >= 0 && values[i] != target[i]) hit = false;
    }
    s.w += w;
    s.w2 += w * w;
    if (hit) {
      s.wf += w;
      s.w2f += w * w;
    }
  }
  return s;
}

}  // namespace

QueryResult mc_query(const PENet& net, const Query& q, const MonteCarloMode& mode) {
  auto clamps = check_query(net, q);
  if (mode.samples == 0) throw Error(ErrorCode::InvalidQuery, "sample count must be positive");
  auto c = compile(net, query_roots(q));
  std::vector<int> evidence(c.nodes.size(), -1), target(c.nodes.size(), -1);
  for (const auto& [k, s] : clamps.evidence) evidence[static_cast<std::size_t>(c.local.at(k))] = s;
  for (const auto& [k, s] : clamps.targets) target[static_cast<std::size_t>(c.local.at(k))] = s;

  const std::size_t chunks = (mode.samples + kChunkSize - 1) / kChunkSize;
  std::vector<ChunkSums> sums(chunks);
  auto work = [&](std::size_t t, std::size_t stride) {
    for (std::size_t k = t; k < chunks; k += stride) {
      const auto n = std::min(kChunkSize, mode.samples - k * kChunkSize);
      sums[k] = run_chunk(c, evidence, target, mode.seed, k, n);
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(mode.threads, 1, chunks);
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  ChunkSums total;
  for (const auto& s : sums) {
    total.w += s.w;
    total.wf += s.wf;
    total.w2 += s.w2;
    total.w2f += s.w2f;
  }
  if (total.w <= 0) throw Error(ErrorCode::ZeroWeight, "every sample has zero weight under the evidence");
  if (clamps.target_conflict) total.wf = total.w2f = 0;
  QueryResult r;
  r.estimator = Estimator::MonteCarlo;
  r.samples = mode.samples;
  const double mu = total.wf / total.w;
  r.probability = mu;
  const double var = (total.w2f * (1 - 2 * mu) + mu * mu * total.w2) / (total.w * total.w);
  r.standard_error = std::sqrt(std::max(0.0, var));
  r.evidence_probability = std::nan("");
  return r;
}

QueryResult run_query(const PENet& net, const Query& q) {
  if (const auto* m = std::get_if<MonteCarloMode>(&q.mode)) return mc_query(net, q, *m);
  return exact_query(net, q, std::get<ExactMode>(q.mode));
}

// --- enumeration -------------------------------------------------------------

QueryResult oracle_enumerate(const PENet& net, const Query& q, double limit) {
  auto clamps = check_query(net, q);
  auto c = compile(net, query_roots(q));
  double joint = 1;
  for (auto k : c.card) joint *= k;
  if (joint > limit)
    throw Error(ErrorCode::TooLarge, fmt::format("{} joint states exceed the enumeration limit {}", joint, limit));
  std::vector<int> evidence(c.nodes.size(), -1), target(c.nodes.size(), -1);
  for (const auto& [k, s] : clamps.evidence) evidence[static_cast<std::size_t>(c.local.at(k))] = s;
  for (const auto& [k, s] : clamps.targets) target[static_cast<std::size_t>(c.local.at(k))] = s;

  double pe = 0, pte = 0;
  std::vector<int> values(c.nodes.size(), 0);
  std::function<void(std::size_t, double, bool)> walk = [&](std::size_t i, double p, bool hit) {
    if (i == c.nodes.size()) {
      pe += p;
      if (hit) pte += p;
      return;
    }
    const double* row = c.row(static_cast<int>(i), values);
    for (int s = 0; s < c.card[i]; ++s) {
      if (evidence[i] >= 0 && s != evidence[i]) continue;
      if (row[s] <= 0) continue;
      values[i] = s;
      walk(i + 1, p * row[s], hit && (target[i] < 0 || target[i] == s));
    }
  };
  walk(0, 1.0, !clamps.target_conflict);
  if (pe <= 0) throw Error(ErrorCode::InfeasibleEvidence, "the evidence has probability zero");
  QueryResult r;
  r.estimator = Estimator::Enumeration;
  r.probability = std::clamp(pte / pe, 0.0, 1.0);
  r.evidence_probability = pe;
  return r;
}

std::map<std::string, double> exact_marginal(const PENet& net, const std::string& node,
                                             const std::vector<Assignment>& evidence, const ExactMode& mode) {
  std::map<std::string, double> out;
  for (const auto& s : net.node(node).states) {
    Query q{{{node, s}}, evidence, mode};
    out[s] = exact_query(net, q, mode).probability;
  }
  return out;
}

namespace {

QueryResult success_query(const PENet& net, const InferenceMode& mode, const std::vector<Assignment>& evidence,
                          bool with_path) {
  Query q;
  q.mode = mode;
  q.evidence = evidence;
  for (const auto& [k, s] : net.annotations().goals) q.targets.push_back({k, s});
  if (with_path)
    for (const auto& [k, s] : net.annotations().selected_path) q.targets.push_back({k, s});
  return run_query(net, q);
}

}  // namespace

QueryResult plan_success(const PENet& net, const InferenceMode& mode, const std::vector<Assignment>& evidence) {
  return success_query(net, mode, evidence, true);
}

QueryResult leads_to_success(const PENet& net, const InferenceMode& mode, const std::vector<Assignment>& evidence) {
  return success_query(net, mode, evidence, false);
}

EliminationPlan min_fill_order(const PENet& net, const std::vector<std::string>& nodes) {
  std::map<std::string, int> id;
  std::vector<std::string> names;
  for (const auto& k : nodes) {
    net.node(k);
    if (id.emplace(k, static_cast<int>(names.size())).second) names.push_back(k);
  }
  std::map<int, std::set<int>> adj;
  for (const auto& k : names) {
    std::vector<int> scope{id.at(k)};
    for (const auto& p : net.node(k).parents)
      if (id.count(p)) scope.push_back(id.at(p));
    for (int a : scope) {
      adj[a];
      for (int b : scope)
        if (a != b) adj[a].insert(b);
    }
  }
  auto o = min_fill(adj, names);
  EliminationPlan out;
  for (int v : o.order) out.order.push_back(names[static_cast<std::size_t>(v)]);
  out.width = o.width;
  return out;
}

}  // namespace penet
