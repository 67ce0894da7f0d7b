#include <doctest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "penet/cli.hpp"

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "penet");
  std::ostringstream out, err;
  int code = penet::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("eval prints both success measures") {
  auto r = run({"eval", fixtures::path("relocate.kb"), fixtures::path("relocate.plan")});
  CHECK(r.code == 0);
  CHECK(r.out == "leads_to_success = 1.000000\nplan_success = 1.000000\n");
  auto goal = run({"eval", "--goal-only", fixtures::path("relocate.kb"), fixtures::path("relocate.plan")});
  CHECK(goal.out == "leads_to_success = 1.000000\n");
}

TEST_CASE("eval with queries, evidence and sampling") {
  auto r = run({"eval", fixtures::path("move.kb"), fixtures::path("two_moves.plan"), "--query", "(Loc A)=L2@S2", "--evidence",
                "(Loc A)=L2@S1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("P((Loc A)@S2=L2) = 0.980000") != std::string::npos);
  auto a = run({"eval", fixtures::path("commute.kb"), fixtures::path("commute.plan"), "--mc", "3000", "--seed", "9"});
  auto b = run({"eval", fixtures::path("commute.kb"), fixtures::path("commute.plan"), "--mc", "3000", "--seed", "9",
                "--threads", "3"});
  CHECK(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out.find("±") != std::string::npos);
}

TEST_CASE("exit codes") {
  auto bad_kb = run({"eval", fixtures::path("relocate_inverted.kb"), fixtures::path("relocate.plan")});
  CHECK(bad_kb.code == 1);
  CHECK(bad_kb.err.find(":9:10: error:") != std::string::npos);
  auto missing = run({"eval", "/nonexistent.kb", fixtures::path("relocate.plan")});
  CHECK(missing.code == 1);
  auto infeasible = run({"eval", fixtures::path("move.kb"), fixtures::path("two_moves.plan"), "--evidence", "(Loc B)=L3@S1",
                         "--evidence", "(Loc B)=L2@S2"});
  CHECK(infeasible.code == 2);
  CHECK(infeasible.err.find("InfeasibleEvidence") != std::string::npos);
  CHECK(run({"eval", fixtures::path("relocate.kb")}).code != 0);
}

TEST_CASE("export is deterministic") {
  const std::string a = "cli_export_a.dot", b = "cli_export_b.dot";
  for (const auto& path : {a, b})
    REQUIRE(run({"export", fixtures::path("overlap.kb"), fixtures::path("overlap.plan"), "--clock", "--dot-out", path}).code == 0);
  auto text = slurp(a);
  CHECK(text == slurp(b));
  CHECK(text.rfind("digraph", 0) == 0);
  CHECK(text.find("relend[b2-b1]@S2a") != std::string::npos);
}

TEST_CASE("build writes a listing") {
  const std::string path = "cli_build.txt";
  auto r = run({"build", fixtures::path("move.kb"), fixtures::path("two_moves.plan"), "--out", path});
  CHECK(r.code == 0);
  CHECK(r.out.find("situations = 3") != std::string::npos);
  CHECK(slurp(path).find("action m1 (Move A L1 L2) (onto)") != std::string::npos);
}

TEST_CASE("compare-linearizations reports every seed") {
  auto r = run({"compare-linearizations", fixtures::path("overlap.kb"), fixtures::path("overlap.plan"), "--seeds", "3"});
  CHECK(r.code == 0);
  CHECK(r.out.find("leads_to_success[default] = 0.900000") != std::string::npos);
  CHECK(r.out.find("leads_to_success[seed=2]") != std::string::npos);
  CHECK(r.out.find("leads_to_success[seed=3]") == std::string::npos);
}
