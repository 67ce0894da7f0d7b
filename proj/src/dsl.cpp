#include "penet/dsl.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "penet/error.hpp"

namespace penet {

SourceDocument SourceDocument::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return {ss.str(), path};
}

namespace {

enum class Tok { LParen, RParen, LBrace, RBrace, Arrow, Equals, Colon, Pipe, Interval, Word, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  int line = 0;
  int col = 0;
};

struct SyntaxError {
  SourceLoc loc;
  std::string message;
};

bool word_char(char c) {
  if (std::isspace(static_cast<unsigned char>(c))) return false;
  return std::string_view("(){}=:|#;[").find(c) == std::string_view::npos;
}

std::vector<Token> lex(const SourceDocument& doc, std::vector<Diagnostic>& diags) {
  std::vector<Token> out;
  const auto& s = doc.text;
  int line = 1, col = 1;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n && i < s.size(); ++k, ++i) {
      if (s[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    if (c == '#' || c == ';') {
      while (i < s.size() && s[i] != '\n') advance(1);
      continue;
    }
    Token t;
    t.line = line;
    t.col = col;
    auto single = [&](Tok k) {
      t.kind = k;
      t.text = std::string(1, c);
      advance(1);
    };
    switch (c) {
      case '(': single(Tok::LParen); break;
      case ')': single(Tok::RParen); break;
      case '{': single(Tok::LBrace); break;
      case '}': single(Tok::RBrace); break;
      case '=': single(Tok::Equals); break;
      case ':': single(Tok::Colon); break;
      case '|': single(Tok::Pipe); break;
      case '[': {
        auto end = s.find_first_of(")]\n", i);
        if (end == std::string::npos || s[end] == '\n') {
          diags.push_back({{doc.origin, line, col}, "unterminated interval"});
          advance(1);
          continue;
        }
        t.kind = Tok::Interval;
        t.text = s.substr(i, end - i + 1);
        t.text.erase(std::remove_if(t.text.begin(), t.text.end(), [](char x) { return std::isspace(static_cast<unsigned char>(x)); }),
                     t.text.end());
        advance(end - i + 1);
        break;
      }
      default:
        if (c == '-' && i + 1 < s.size() && s[i + 1] == '>') {
          t.kind = Tok::Arrow;
          t.text = "->";
          advance(2);
          break;
        }
        t.kind = Tok::Word;
        while (i < s.size() && word_char(s[i]) && !(s[i] == '-' && i + 1 < s.size() && s[i + 1] == '>')) {
          t.text += s[i];
          advance(1);
        }
        if (t.text.empty()) {
          diags.push_back({{doc.origin, line, col}, fmt::format("unexpected character '{}'", c)});
          advance(1);
          continue;
        }
    }
    out.push_back(std::move(t));
  }
  out.push_back({Tok::End, "", line, col});
  return out;
}

std::string describe(const Token& t) {
  if (t.kind == Tok::End) return "end of input";
  return "'" + t.text + "'";
}

class Parser {
 public:
  Parser(const SourceDocument& doc, std::vector<Diagnostic>& diags) : doc_(doc), diags_(diags) {
    toks_ = lex(doc, diags);
  }

  bool at_end() const { return peek().kind == Tok::End; }
  const Token& peek(std::size_t ahead = 0) const { return toks_[std::min(pos_ + ahead, toks_.size() - 1)]; }
  const Token& next() {
    const auto& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }
  SourceLoc loc(const Token& t) const { return {doc_.origin, t.line, t.col}; }
  SourceLoc here() const { return loc(peek()); }

  [[noreturn]] void fail(const Token& t, const std::string& msg) const { throw SyntaxError{loc(t), msg}; }

  const Token& expect(Tok kind, const std::string& what) {
    if (peek().kind != kind) fail(peek(), fmt::format("expected {}, found {}", what, describe(peek())));
    return next();
  }
  bool accept(Tok kind) {
    if (peek().kind != kind) return false;
    next();
    return true;
  }
  bool peek_word(std::string_view w, std::size_t ahead = 0) const {
    return peek(ahead).kind == Tok::Word && peek(ahead).text == w;
  }
  std::string word(const std::string& what) { return expect(Tok::Word, what).text; }

  void keyword(std::string_view w) {
    if (!peek_word(w)) fail(peek(), fmt::format("expected '{}', found {}", w, describe(peek())));
    next();
  }

  // key=value attribute, e.g. level=1
  std::string attribute(std::string_view key) {
    keyword(key);
    expect(Tok::Equals, "'='");
    return word(std::string(key) + " value");
  }

  AtomPattern atom() {
    expect(Tok::LParen, "'('");
    AtomPattern a;
    a.predicate = word("predicate name");
    while (peek().kind == Tok::Word) a.args.push_back(next().text);
    expect(Tok::RParen, "')'");
    return a;
  }

  double number(const Token& t) const {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(t.text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.text.size() || !std::isfinite(v)) fail(t, fmt::format("expected a number, found {}", describe(t)));
    return v;
  }

  long integer(const Token& t) const {
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(t.text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.text.size()) fail(t, fmt::format("expected an integer, found {}", describe(t)));
    return v;
  }

  // { s:p ... }
  std::vector<std::pair<Term, double>> distribution() {
    expect(Tok::LBrace, "'{'");
    std::vector<std::pair<Term, double>> out;
    while (!accept(Tok::RBrace)) {
      auto label = word("state label");
      expect(Tok::Colon, "':'");
      const auto& p = expect(Tok::Word, "probability");
      out.emplace_back(label, number(p));
    }
    return out;
  }

  void check_sum(const std::vector<std::pair<Term, double>>& dist, const SourceLoc& at, const std::string& owner) {
    double sum = 0;
    for (const auto& [l, p] : dist) sum += p;
    if (std::abs(sum - 1.0) > kProbTolerance)
      diags_.push_back({at, fmt::format("{}: row distribution sums to {}, expected 1 (normalization)", owner, sum)});
  }

  // { labels -> { s:p } ... }
  std::vector<RowPattern> rows(const std::string& owner) {
    expect(Tok::LBrace, "'{'");
    std::vector<RowPattern> out;
    while (!accept(Tok::RBrace)) {
      RowPattern r;
      r.loc = here();
      while (peek().kind == Tok::Word) r.condition.push_back(next().text);
      expect(Tok::Arrow, "'->'");
      r.distribution = distribution();
      check_sum(r.distribution, r.loc, owner);
      out.push_back(std::move(r));
    }
    return out;
  }

  std::vector<AtomPattern> atom_list() {
    expect(Tok::LBrace, "'{'");
    std::vector<AtomPattern> out;
    while (!accept(Tok::RBrace)) out.push_back(atom());
    return out;
  }

  // Skips to the next top-level keyword after an error.
  void resync(const std::set<std::string>& keywords) {
    int depth = 0;
    bool moved = false;
    while (!at_end()) {
      const auto& t = peek();
      if (moved && depth <= 0 && t.kind == Tok::Word && keywords.count(t.text) && t.col == 1) return;
      if (t.kind == Tok::LBrace) ++depth;
      if (t.kind == Tok::RBrace) --depth;
      next();
      moved = true;
    }
  }

  void report(const SourceLoc& at, std::string msg) { diags_.push_back({at, std::move(msg)}); }

 private:
  const SourceDocument& doc_;
  std::vector<Diagnostic>& diags_;
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

// --- knowledge base ----------------------------------------------------------

const std::set<std::string> kKbKeywords{"predicate", "action", "persistence", "derived"};

void parse_predicate(Parser& p, KnowledgeBase& kb) {
  auto at = p.here();
  p.keyword("predicate");
  PredicateSchema s;
  s.loc = at;
  auto a = p.atom();
  s.name = a.predicate;
  s.parameters = a.args;
  bool have_kind = false, have_states = false;
  while (p.peek_word("kind") || p.peek_word("states")) {
    if (p.peek_word("kind")) {
      const auto& t = p.peek(2);
      auto k = p.attribute("kind");
      if (k == "primitive") s.kind = PredicateKind::Primitive;
      else if (k == "derived") s.kind = PredicateKind::Derived;
      else p.fail(t, "kind must be primitive or derived");
      have_kind = true;
    } else {
      p.keyword("states");
      p.expect(Tok::LBrace, "'{'");
      while (!p.accept(Tok::RBrace)) s.states.push_back(p.word("state label"));
      have_states = true;
    }
  }
  if (!have_kind) p.fail(p.peek(), "predicate needs kind=primitive|derived");
  if (!have_states) p.fail(p.peek(), "predicate needs a states { ... } list");
  if (kb.schemas.count(s.name)) {
    p.report(at, fmt::format("predicate {} declared twice", s.name));
    return;
  }
  kb.schemas.emplace(s.name, std::move(s));
}

EffectModel parse_effect(Parser& p, const std::string& owner) {
  EffectModel e;
  e.loc = p.here();
  e.target = p.atom();
  if (p.peek_word("given")) {
    p.next();
    e.given = p.atom_list();
  } else {
    e.given = {e.target};
  }
  e.rows = p.rows(owner + " effect " + e.target.str());
  return e;
}

void parse_action(Parser& p, KnowledgeBase& kb) {
  auto at = p.here();
  p.keyword("action");
  ActionModel a;
  a.loc = at;
  auto sig = p.atom();
  a.name = sig.predicate;
  a.parameters = sig.args;
  if (p.peek_word("level")) {
    const auto& t = p.peek(2);
    a.level = static_cast<int>(p.integer(t));
    p.attribute("level");
  }
  const auto owner = "action " + a.signature();
  p.expect(Tok::LBrace, "'{'");
  while (!p.accept(Tok::RBrace)) {
    if (p.peek_word("duration")) {
      p.next();
      auto dloc = p.here();
      p.expect(Tok::LBrace, "'{'");
      std::vector<std::pair<Term, double>> check;
      while (!p.accept(Tok::RBrace)) {
        const auto& d = p.expect(Tok::Word, "duration");
        long v = p.integer(d);
        p.expect(Tok::Colon, "':'");
        const auto& pr = p.expect(Tok::Word, "probability");
        double q = p.number(pr);
        a.duration.emplace_back(v, q);
        check.emplace_back(d.text, q);
      }
      p.check_sum(check, dloc, owner + " duration");
    } else if (p.peek_word("effect")) {
      p.next();
      a.effects.push_back(parse_effect(p, owner));
    } else if (p.peek_word("during-effect")) {
      p.next();
      a.during_effects.push_back(parse_effect(p, owner));
    } else if (p.peek_word("during-cond")) {
      DuringCondition c;
      c.loc = p.here();
      p.next();
      c.atom = p.atom();
      p.expect(Tok::Equals, "'='");
      c.state = p.word("state label");
      if (p.peek_word("gates")) {
        p.next();
        c.gates = p.atom();
      }
      a.during_conditions.push_back(std::move(c));
    } else {
      p.fail(p.peek(), fmt::format("expected duration, effect, during-cond or during-effect, found {}",
                                   describe(p.peek())));
    }
  }
  kb.actions.push_back(std::move(a));
}

ElapsedBucket parse_bucket(Parser& p, const Token& t) {
  // [lo,hi) or [lo,inf)
  const auto& s = t.text;
  auto comma = s.find(',');
  if (s.size() < 5 || s.front() != '[' || s.back() != ')' || comma == std::string::npos)
    p.fail(t, "elapsed bucket must look like [lo,hi) or [lo,inf)");
  ElapsedBucket b;
  Token lo = t, hi = t;
  lo.text = s.substr(1, comma - 1);
  hi.text = s.substr(comma + 1, s.size() - comma - 2);
  b.lo = p.integer(lo);
  if (hi.text != "inf") b.hi = p.integer(hi);
  return b;
}

void parse_persistence(Parser& p, KnowledgeBase& kb) {
  auto at = p.here();
  p.keyword("persistence");
  PersistenceModel m;
  m.loc = at;
  m.predicate = p.atom();
  if (p.peek_word("elapsed")) {
    p.next();
    p.expect(Tok::LBrace, "'{'");
    while (!p.accept(Tok::RBrace)) m.buckets.push_back(parse_bucket(p, p.expect(Tok::Interval, "elapsed bucket")));
  }
  const auto owner = "persistence " + m.predicate.str();
  p.expect(Tok::LBrace, "'{'");
  while (!p.accept(Tok::RBrace)) {
    PersistenceRow r;
    r.loc = p.here();
    r.previous = p.word("previous state");
    if (p.peek().kind == Tok::Interval) {
      const auto& t = p.next();
      auto b = parse_bucket(p, t);
      auto it = std::find(m.buckets.begin(), m.buckets.end(), b);
      if (it == m.buckets.end() || it->lo != b.lo || it->hi != b.hi) p.fail(t, "row refers to an undeclared elapsed bucket");
      r.bucket = static_cast<std::size_t>(it - m.buckets.begin());
    }
    p.expect(Tok::Arrow, "'->'");
    r.distribution = p.distribution();
    p.check_sum(r.distribution, r.loc, owner);
    m.rows.push_back(std::move(r));
  }
  kb.persistence.push_back(std::move(m));
}

void parse_derived(Parser& p, KnowledgeBase& kb) {
  auto at = p.here();
  p.keyword("derived");
  DerivedDefinition d;
  d.loc = at;
  d.predicate = p.atom();
  p.keyword("from");
  d.parents = p.atom_list();
  d.rows = p.rows("derived " + d.predicate.str());
  kb.derived.push_back(std::move(d));
}

}  // namespace

Parsed<KnowledgeBase> parse_kb(const SourceDocument& doc) {
  Parsed<KnowledgeBase> out;
  Parser p(doc, out.diagnostics);
  while (!p.at_end()) {
    try {
      if (p.peek_word("predicate")) parse_predicate(p, out.value);
      else if (p.peek_word("action")) parse_action(p, out.value);
      else if (p.peek_word("persistence")) parse_persistence(p, out.value);
      else if (p.peek_word("derived")) parse_derived(p, out.value);
      else p.fail(p.peek(), fmt::format("expected predicate, action, persistence or derived, found {}", describe(p.peek())));
    } catch (const SyntaxError& e) {
      out.diagnostics.push_back({e.loc, e.message});
      p.resync(kKbKeywords);
    }
  }
  return out;
}

// --- plan --------------------------------------------------------------------

namespace {

const std::set<std::string> kPlanKeywords{"agent", "start", "boundary", "step", "before", "contingent",
                                          "expand", "initial", "goal", "track"};

const char* kDefaultAgent = "main";

GroundAtom ground(Parser& p, const Token& at, const AtomPattern& a) {
  for (const auto& t : a.args)
    if (is_variable(t)) p.fail(at, fmt::format("{} must be ground in a plan", a.str()));
  return {a.predicate, a.args};
}

struct PlanParser {
  Parser& p;
  const KnowledgeBase& kb;
  Plan plan;
  std::vector<SourceLoc> ordering_locs;
  std::map<std::string, SourceLoc> group_locs;
  std::size_t anonymous_groups = 0;

  void check_atom(const GroundAtom& a, const SourceLoc& at, std::optional<std::string> state) {
    const auto* s = kb.schema(a.predicate);
    if (!s) {
      p.report(at, fmt::format("unknown predicate {}", a.predicate));
      return;
    }
    if (s->parameters.size() != a.args.size()) {
      p.report(at, fmt::format("{} expects {} arguments, got {}", a.predicate, s->parameters.size(), a.args.size()));
      return;
    }
    if (state && !s->has_state(*state)) p.report(at, fmt::format("{} is not a state of {}", *state, a.predicate));
  }

  void check_step(const PlanStep& s) {
    const auto* m = kb.action(s.action, s.level);
    if (!m) {
      p.report(s.loc, fmt::format("step {}: unknown action {}", s.id, s.action));
      return;
    }
    if (m->parameters.size() != s.args.size())
      p.report(s.loc, fmt::format("step {}: {} expects {} arguments, got {}", s.id, s.action, m->parameters.size(),
                                  s.args.size()));
    if (s.start == s.end) p.report(s.loc, fmt::format("step {} starts and ends at {}", s.id, s.start));
  }

  PlanStep step(bool agent_optional) {
    PlanStep s;
    s.loc = p.here();
    p.keyword("step");
    s.id = p.word("step id");
    if (p.peek().kind == Tok::Word) s.agent = p.next().text;
    else if (!agent_optional) s.agent = kDefaultAgent;
    auto call = p.atom();
    s.action = call.predicate;
    s.args = call.args;
    while (p.peek_word("level") || p.peek_word("start") || p.peek_word("end")) {
      if (p.peek_word("level")) {
        const auto& t = p.peek(2);
        s.level = static_cast<int>(p.integer(t));
        p.attribute("level");
      } else if (p.peek_word("start")) {
        s.start = p.attribute("start");
      } else {
        s.end = p.attribute("end");
      }
    }
    if (s.start.empty() || s.end.empty()) p.fail(p.peek(), fmt::format("step {} needs start= and end=", s.id));
    check_step(s);
    return s;
  }

  std::vector<ConditionRef> conditions() {
    p.keyword("given");
    p.expect(Tok::LBrace, "'{'");
    std::vector<ConditionRef> out;
    while (!p.accept(Tok::RBrace)) {
      const auto& at = p.peek();
      auto a = p.atom();
      if (a.predicate == "select") {
        if (a.args.size() != 1) p.fail(at, "(select g) takes one group name");
        out.push_back({std::nullopt, a.args[0]});
        continue;
      }
      auto g = ground(p, at, a);
      check_atom(g, p.loc(at), std::nullopt);
      out.push_back({g, ""});
    }
    return out;
  }

  // labels -> alt | labels -> { alt:p ... }
  std::vector<SelectorRow> selector(std::vector<std::string>* alternatives) {
    p.expect(Tok::LBrace, "'{'");
    std::vector<SelectorRow> out;
    while (!p.accept(Tok::RBrace)) {
      SelectorRow r;
      r.loc = p.here();
      while (p.peek().kind == Tok::Word) r.condition.push_back(p.next().text);
      p.expect(Tok::Arrow, "'->'");
      if (p.peek().kind == Tok::LBrace) {
        auto d = p.distribution();
        p.check_sum(d, r.loc, "selector");
        for (const auto& [l, q] : d) r.distribution[l] += q;
      } else {
        r.distribution[p.word("alternative")] = 1.0;
      }
      if (alternatives)
        for (const auto& [l, q] : r.distribution)
          if (l != kNoOp && std::find(alternatives->begin(), alternatives->end(), l) == alternatives->end())
            alternatives->push_back(l);
      out.push_back(std::move(r));
    }
    return out;
  }

  void contingent() {
    auto at = p.here();
    p.keyword("contingent");
    ContingencyGroup g;
    g.loc = at;
    if (!p.peek_word("at")) g.name = p.word("group name");
    p.keyword("at");
    g.boundary = p.word("boundary");
    if (g.name.empty()) g.name = fmt::format("g{}", ++anonymous_groups);
    // Alternatives no selector row mentions still need listing.
    if (p.peek_word("options")) {
      p.next();
      p.expect(Tok::LBrace, "'{'");
      while (!p.accept(Tok::RBrace)) g.alternatives.push_back(p.word("step id"));
    }
    if (p.peek_word("given")) g.conditions = conditions();
    g.selector = selector(&g.alternatives);
    if (plan.group(g.name)) p.report(at, fmt::format("contingency group {} declared twice", g.name));
    group_locs[g.name] = at;
    plan.contingencies.push_back(std::move(g));
  }

  void expand() {
    auto at = p.here();
    p.keyword("expand");
    ExpansionNode e;
    e.loc = at;
    e.step = p.word("abstract step id");
    p.expect(Tok::LBrace, "'{'");
    int selected = 0;
    while (!p.accept(Tok::RBrace)) {
      if (p.peek_word("selected") || p.peek_word("alt")) {
        const bool sel = p.next().text == "selected";
        ExpansionAlternative alt;
        alt.label = p.word("alternative label");
        if (sel) {
          e.selected = e.alternatives.size();
          ++selected;
        }
        p.expect(Tok::LBrace, "'{'");
        while (!p.accept(Tok::RBrace)) alt.steps.push_back(step(true));
        e.alternatives.push_back(std::move(alt));
      } else if (p.peek_word("given")) {
        e.conditions = conditions();
        e.selection_conditions = selector(nullptr);
      } else {
        p.fail(p.peek(), fmt::format("expected selected, alt or given, found {}", describe(p.peek())));
      }
    }
    if (selected != 1) p.report(at, fmt::format("expansion of {} must mark exactly one alternative selected", e.step));
    plan.expansions.push_back(std::move(e));
  }

  void initial() {
    p.keyword("initial");
    p.expect(Tok::LBrace, "'{'");
    while (!p.accept(Tok::RBrace)) {
      const auto& at = p.peek();
      auto a = ground(p, at, p.atom());
      p.expect(Tok::Equals, "'='");
      auto& dist = plan.initial_state[a];
      if (p.peek().kind == Tok::LBrace) {
        for (const auto& [l, q] : p.distribution()) {
          dist[l] += q;
          check_atom(a, p.loc(at), l);
        }
        continue;
      }
      auto state = p.word("state label");
      double q = 1.0;
      if (p.accept(Tok::Colon)) q = p.number(p.expect(Tok::Word, "probability"));
      dist[state] += q;
      check_atom(a, p.loc(at), state);
    }
  }

  void goal() {
    p.keyword("goal");
    p.expect(Tok::LBrace, "'{'");
    while (!p.accept(Tok::RBrace)) {
      const auto& at = p.peek();
      auto a = ground(p, at, p.atom());
      p.expect(Tok::Equals, "'='");
      auto state = p.word("state label");
      check_atom(a, p.loc(at), state);
      plan.goals.emplace_back(a, state);
    }
  }

  void track() {
    p.keyword("track");
    p.expect(Tok::LBrace, "'{'");
    while (!p.accept(Tok::RBrace)) {
      const auto& at = p.peek();
      auto a = ground(p, at, p.atom());
      check_atom(a, p.loc(at), std::nullopt);
      plan.tracked.push_back(a);
    }
  }

  void statement() {
    if (p.peek_word("agent")) {
      p.next();
      while (p.peek().kind == Tok::Word && !kPlanKeywords.count(p.peek().text)) p.next();
    } else if (p.peek_word("start")) {
      p.next();
      plan.initial_boundary = p.word("boundary");
    } else if (p.peek_word("boundary")) {
      p.next();
      while (p.peek().kind == Tok::Word && !kPlanKeywords.count(p.peek().text)) plan.boundaries.push_back(p.next().text);
    } else if (p.peek_word("step")) {
      plan.steps.push_back(step(false));
    } else if (p.peek_word("before")) {
      auto at = p.here();
      p.next();
      auto a = p.word("boundary");
      auto b = p.word("boundary");
      plan.orderings.emplace_back(a, b);
      ordering_locs.push_back(at);
    } else if (p.peek_word("contingent")) {
      contingent();
    } else if (p.peek_word("expand")) {
      expand();
    } else if (p.peek_word("initial")) {
      initial();
    } else if (p.peek_word("goal")) {
      goal();
    } else if (p.peek_word("track")) {
      track();
    } else {
      p.fail(p.peek(), fmt::format("expected a plan statement, found {}", describe(p.peek())));
    }
  }

  void finish() {
    std::set<std::string> ids;
    for (const auto& s : plan.steps)
      if (!ids.insert(s.id).second) p.report(s.loc, fmt::format("duplicate step id {}", s.id));
    for (auto& g : plan.contingencies)
      for (const auto& alt : g.alternatives) {
        auto it = std::find_if(plan.steps.begin(), plan.steps.end(), [&](const PlanStep& s) { return s.id == alt; });
        if (it == plan.steps.end()) {
          p.report(group_locs[g.name], fmt::format("contingent {}: unknown step {}", g.name, alt));
          continue;
        }
        if (it->start != g.boundary)
          p.report(group_locs[g.name], fmt::format("contingent {}: step {} does not start at {}", g.name, alt, g.boundary));
        it->guards.push_back({g.name, alt});
      }
    for (const auto& g : plan.contingencies)
      for (const auto& c : g.conditions)
        if (!c.atom && !plan.group(c.group))
          p.report(group_locs[g.name], fmt::format("contingent {}: unknown selection group {}", g.name, c.group));

    // Ordering cycles are reported at the constraint that closes them.
    Plan probe = plan;
    probe.orderings.clear();
    probe.expansions.clear();
    try {
      linearize(probe);
    } catch (const Error& e) {
      p.report(plan.steps.empty() ? SourceLoc{} : plan.steps.back().loc, e.what());
      return;
    }
    for (std::size_t i = 0; i < plan.orderings.size(); ++i) {
      probe.orderings.push_back(plan.orderings[i]);
      try {
        linearize(probe);
      } catch (const Error& e) {
        p.report(ordering_locs[i], e.what());
        return;
      }
    }
  }
};

}  // namespace

Parsed<Plan> parse_plan(const SourceDocument& doc, const KnowledgeBase& kb) {
  Parsed<Plan> out;
  Parser p(doc, out.diagnostics);
  PlanParser pp{p, kb, {}, {}, {}, 0};
  while (!p.at_end()) {
    try {
      pp.statement();
    } catch (const SyntaxError& e) {
      out.diagnostics.push_back({e.loc, e.message});
      p.resync(kPlanKeywords);
    }
  }
  if (out.diagnostics.empty()) pp.finish();
  for (auto& d : out.diagnostics)
    if (!d.loc.known()) d.loc = {doc.origin, 1, 1};
  out.value = std::move(pp.plan);
  return out;
}

// --- printing ----------------------------------------------------------------

namespace {

std::string fmt_prob(double p) { return fmt::format("{}", p); }

std::string fmt_dist(const std::vector<std::pair<Term, double>>& d) {
  std::string out = "{";
  for (const auto& [l, p] : d) out += fmt::format(" {}:{}", l, fmt_prob(p));
  return out + " }";
}

std::string fmt_dist(const Distribution& d) {
  std::vector<std::pair<Term, double>> v(d.begin(), d.end());
  return fmt_dist(v);
}

std::string fmt_atoms(const std::vector<AtomPattern>& atoms) {
  std::string out = "{";
  for (const auto& a : atoms) out += " " + a.str();
  return out + " }";
}

void print_rows(std::string& out, const std::vector<RowPattern>& rows, const std::string& indent) {
  out += "{\n";
  for (const auto& r : rows) {
    out += indent + "  ";
    for (const auto& c : r.condition) out += c + " ";
    out += "-> " + fmt_dist(r.distribution) + "\n";
  }
  out += indent + "}";
}

void print_effect(std::string& out, const std::string& keyword, const EffectModel& e) {
  out += fmt::format("  {} {} given {} ", keyword, e.target.str(), fmt_atoms(e.given));
  print_rows(out, e.rows, "  ");
  out += "\n";
}

}  // namespace

std::string print_kb(const KnowledgeBase& kb) {
  std::string out;
  for (const auto& [name, s] : kb.schemas) {
    AtomPattern a{s.name, s.parameters};
    out += fmt::format("predicate {} kind={} states {{ {} }}\n", a.str(), to_string(s.kind), fmt::join(s.states, " "));
  }
  for (const auto& a : kb.actions) {
    AtomPattern sig{a.name, a.parameters};
    out += fmt::format("action {} level={} {{\n", sig.str(), a.level);
    if (!a.duration.empty()) {
      out += "  duration {";
      for (const auto& [d, p] : a.duration) out += fmt::format(" {}:{}", d, fmt_prob(p));
      out += " }\n";
    }
    for (const auto& e : a.effects) print_effect(out, "effect", e);
    for (const auto& c : a.during_conditions) {
      out += fmt::format("  during-cond {}={}", c.atom.str(), c.state);
      if (c.gates) out += " gates " + c.gates->str();
      out += "\n";
    }
    for (const auto& e : a.during_effects) print_effect(out, "during-effect", e);
    out += "}\n";
  }
  for (const auto& m : kb.persistence) {
    out += "persistence " + m.predicate.str();
    if (!m.buckets.empty()) {
      out += " elapsed {";
      for (const auto& b : m.buckets) out += " " + b.str();
      out += " }";
    }
    out += " {\n";
    for (const auto& r : m.rows) {
      out += "  " + r.previous;
      if (r.bucket) out += " " + m.buckets.at(*r.bucket).str();
      out += " -> " + fmt_dist(r.distribution) + "\n";
    }
    out += "}\n";
  }
  for (const auto& d : kb.derived) {
    out += fmt::format("derived {} from {} ", d.predicate.str(), fmt_atoms(d.parents));
    print_rows(out, d.rows, "");
    out += "\n";
  }
  return out;
}

namespace {

std::string print_step(const PlanStep& s, bool with_agent) {
  std::string out = "step " + s.id;
  if (with_agent && !s.agent.empty()) out += " " + s.agent;
  out += " " + s.call();
  if (s.level) out += fmt::format(" level={}", *s.level);
  return out + fmt::format(" start={} end={}", s.start, s.end);
}

std::string print_conditions(const std::vector<ConditionRef>& cs) {
  std::string out = "given {";
  for (const auto& c : cs) out += " " + c.str();
  return out + " }";
}

std::string print_selector(const std::vector<SelectorRow>& rows) {
  std::string out = "{\n";
  for (const auto& r : rows) {
    out += "  ";
    for (const auto& c : r.condition) out += c + " ";
    out += "-> " + fmt_dist(r.distribution) + "\n";
  }
  return out + "}";
}

}  // namespace

std::string print_plan(const Plan& plan) {
  std::string out = "start " + plan.initial_boundary + "\n";
  if (!plan.boundaries.empty()) out += fmt::format("boundary {}\n", fmt::join(plan.boundaries, " "));
  for (const auto& s : plan.steps) out += print_step(s, true) + "\n";
  for (const auto& [a, b] : plan.orderings) out += fmt::format("before {} {}\n", a, b);
  for (const auto& g : plan.contingencies) {
    if (g.selected) continue;
    out += fmt::format("contingent {} at {} options {{ {} }} ", g.name, g.boundary, fmt::join(g.alternatives, " "));
    if (!g.conditions.empty()) out += print_conditions(g.conditions) + " ";
    out += print_selector(g.selector) + "\n";
  }
  for (const auto& e : plan.expansions) {
    out += fmt::format("expand {} {{\n", e.step);
    for (std::size_t i = 0; i < e.alternatives.size(); ++i) {
      const auto& alt = e.alternatives[i];
      out += fmt::format("  {} {} {{\n", i == e.selected ? "selected" : "alt", alt.label);
      for (const auto& s : alt.steps) out += "    " + print_step(s, true) + "\n";
      out += "  }\n";
    }
    if (!e.conditions.empty() || !e.selection_conditions.empty())
      out += "  " + print_conditions(e.conditions) + " " + print_selector(e.selection_conditions) + "\n";
    out += "}\n";
  }
  if (!plan.initial_state.empty()) {
    out += "initial {\n";
    for (const auto& [a, d] : plan.initial_state) out += fmt::format("  {}={}\n", a.str(), fmt_dist(d));
    out += "}\n";
  }
  if (!plan.goals.empty()) {
    out += "goal {";
    for (const auto& [a, s] : plan.goals) out += fmt::format(" {}={}", a.str(), s);
    out += " }\n";
  }
  if (!plan.tracked.empty()) {
    out += "track {";
    for (const auto& a : plan.tracked) out += " " + a.str();
    out += " }\n";
  }
  return out;
}

std::optional<Assignment> parse_assignment(const std::string& text) {
  auto trim = [](std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
  };
  auto t = trim(text);
  if (!t.empty() && t.front() == '(') {
    auto close = t.find(')');
    if (close == std::string::npos) return std::nullopt;
    std::istringstream in(t.substr(1, close - 1));
    std::vector<std::string> parts;
    for (std::string w; in >> w;) parts.push_back(w);
    if (parts.empty()) return std::nullopt;
    auto rest = t.substr(close + 1);
    auto eq = rest.find('=');
    auto at = rest.rfind('@');
    if (eq == std::string::npos || at == std::string::npos || at < eq) return std::nullopt;
    auto state = trim(rest.substr(eq + 1, at - eq - 1));
    auto situation = trim(rest.substr(at + 1));
    if (state.empty() || situation.empty()) return std::nullopt;
    GroundAtom a{parts[0], {parts.begin() + 1, parts.end()}};
    return Assignment{a.str() + "@" + situation, state};
  }
  auto eq = t.rfind('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == t.size()) return std::nullopt;
  return Assignment{trim(t.substr(0, eq)), trim(t.substr(eq + 1))};
}

}  // namespace penet
