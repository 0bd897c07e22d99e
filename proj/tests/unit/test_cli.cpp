#include "doctest.h"

#include <sstream>

#include "json.hpp"

#include "emlasso/cli.hpp"
#include "emlasso/simlab.hpp"
#include "support.hpp"

using namespace emlasso;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "emlasso");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Scenario-1 data set used by the fit tests.
const testutil::TempFile& s1_csv() {
  static const testutil::TempFile file("s1");
  static const bool written = [] {
    ScenarioConfig c;
    Rng rng(derive_seed(2024, 2));
    write_csv(generate_scenario(c, rng).table, file.path());
    return true;
  }();
  (void)written;
  return file;
}

const std::string kQ = "1 + A + X + V1 + V2 + V3 + V4 + V1*V2*V3 + A*V1 + A*V3";
const std::string kG = "1 + Z + X + V1 + V2";

}  // namespace

TEST_CASE("fit: golden selection on scenario-1 data") {
  const auto r = run({"fit", "--data", s1_csv().str(), "--em", "V1,V2,V3,V4", "--q-model", kQ, "--g-model", kG,
                      "--seed", "7"});
  REQUIRE(r.code == kExitOk);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["selected"] == std::vector<std::string>{"V1", "V3"});
  CHECK(j["config"]["truncation"].is_null());
  CHECK(j["intervals"].size() == 2);
  CHECK(j["n"] == 1000);
  CHECK(j["coefficients"][1]["beta"] == 0.0);

  // same flags, same bytes
  CHECK(run({"fit", "--data", s1_csv().str(), "--em", "V1,V2,V3,V4", "--q-model", kQ, "--g-model", kG, "--seed",
             "7"}).out == r.out);
}

TEST_CASE("fit: truncation is echoed") {
  const auto r = run({"fit", "--data", s1_csv().str(), "--em", "V1,V2,V3,V4", "--q-model", kQ, "--g-model", kG,
                      "--trunc", "0.05"});
  REQUIRE(r.code == kExitOk);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["config"]["truncation"][0] == 0.05);
  CHECK(j["config"]["truncation"][1] == 0.95);
  CHECK(j["nuisance"]["min_g1"].get<double>() >= 0.05);
}

TEST_CASE("fit: HAL propensity runs and is recorded") {
  ScenarioConfig c;
  c.n = 250;
  Rng rng(5);
  testutil::TempFile small("small");
  write_csv(generate_scenario(c, rng).table, small.path());
  const auto r = run({"fit", "--data", small.str(), "--em", "V1,V2,V3,V4", "--q-model", kQ, "--g-model", "hal",
                      "--trunc", "0.05"});
  REQUIRE(r.code == kExitOk);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["config"]["g_model"] == "hal(max_order=3)");
  CHECK(j["config"]["truncation"][0] == 0.05);
}

TEST_CASE("fit: missing outcome column exits 2 naming it") {
  const auto r = run({"fit", "--data", s1_csv().str(), "--outcome", "Outcome", "--em", "V1", "--q-model", kQ,
                      "--g-model", kG});
  CHECK(r.code == kExitValidation);
  CHECK(r.err.find("Outcome") != std::string::npos);
  // unknown column inside a formula
  const auto f = run({"fit", "--data", s1_csv().str(), "--em", "V1", "--q-model", "1 + A + Q7", "--g-model", kG});
  CHECK(f.code == kExitValidation);
  CHECK(f.err.find("Q7") != std::string::npos);
}

TEST_CASE("fit: numerical failure exits 3") {
  // V2 duplicated: the outcome design is rank deficient
  testutil::TempFile dup("dup", "X,V1,V2,A,Y\n0,1,1,1,2\n1,0,0,0,1\n1,1,1,0,3\n0,0,0,1,2\n1,1,1,1,4\n0,1,1,0,1\n");
  const auto r = run({"fit", "--data", dup.str(), "--em", "V1", "--q-model", "1 + A + V1 + V2", "--g-model", "1 + X"});
  CHECK(r.code == kExitNumerical);
  CHECK(r.err.find("outcome model") != std::string::npos);
}

TEST_CASE("simulate: flags and exit codes") {
  CHECK(run({"simulate", "--scenario", "s1", "--impl", "qcgc", "--reps", "0"}).code == kExitValidation);
  CHECK(run({"simulate", "--scenario", "s7", "--impl", "qcgc", "--reps", "1"}).code == kExitValidation);
  CHECK(run({"simulate", "--scenario", "s1", "--impl", "oracle", "--reps", "1"}).code == kExitValidation);
  CHECK(run({"simulate", "--scenario", "s1"}).code == kExitValidation);
  CHECK(run({}).code == kExitValidation);
}

TEST_CASE("simulate: CSV with four rows, deterministic across threads") {
  const std::vector<std::string> base = {"simulate", "--scenario", "s1", "--impl", "qcgc", "--n", "300",
                                         "--reps", "4", "--seed", "42"};
  const auto a = run(base);
  REQUIRE(a.code == kExitOk);
  std::istringstream in(a.out);
  int rows = 0;
  for (std::string l; std::getline(in, l);) ++rows;
  CHECK(rows == 5);
  auto threaded = base;
  threaded.insert(threaded.end(), {"--threads", "3"});
  CHECK(run(threaded).out == a.out);

  testutil::TempFile j1("j1"), j2("j2");
  auto with_json = base;
  with_json.insert(with_json.end(), {"--json", j1.str()});
  REQUIRE(run(with_json).code == kExitOk);
  with_json.back() = j2.str();
  with_json.insert(with_json.end(), {"--threads", "2"});
  REQUIRE(run(with_json).code == kExitOk);
  CHECK(j1.read() == j2.read());
  CHECK_FALSE(j1.read().empty());
}

TEST_CASE("report: renders emitted files and rejects bad ones") {
  testutil::TempFile json_file("rep_json"), csv_file("rep_csv");
  REQUIRE(run({"simulate", "--scenario", "s1", "--impl", "nlin", "--n", "200", "--reps", "3", "--json",
               json_file.str(), "--csv", csv_file.str()}).code == kExitOk);
  const auto one = run({"report", json_file.str()});
  REQUIRE(one.code == kExitOk);
  CHECK(one.out.rfind("Coef  mean_beta  %sel  %cov  FCR", 0) == 0);
  const auto two = run({"report", json_file.str(), csv_file.str()});
  CHECK(two.code == kExitOk);

  testutil::TempFile empty("empty", "");
  CHECK(run({"report", empty.str()}).code == kExitValidation);
  testutil::TempFile wrong("wrong", "{\"schema\": 99}");
  const auto bad = run({"report", wrong.str()});
  CHECK(bad.code == kExitValidation);
  CHECK(bad.err.find("schema") != std::string::npos);
  CHECK(run({"report", "/nonexistent/report.json"}).code == kExitValidation);
}
