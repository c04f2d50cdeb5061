#include <string>
#include <vector>

#include "doctest.h"
#include "sphereflow/checks.hpp"
#include "sphereflow/common.hpp"

using namespace sfm;

namespace {

template <class F>
bool throws_code(F&& f, ErrorCode want) {
  try {
    f();
  } catch (const Error& e) {
    return e.code() == want;
  }
  return false;
}

}  // namespace

TEST_CASE("suite registry lists every module in canonical order") {
  const std::vector<std::string> want = {"geometry", "flowpath", "velocitynet", "trainer",
                                         "sampler",  "datasets", "evalsuite",   "alignlab"};
  CHECK(checks::suite_names() == want);
}

TEST_CASE("result arithmetic counts failures") {
  CheckResult r;
  r.suite = "x";
  CHECK(r.n_failed() == 0);
  CHECK(r.ok());
  r.items.push_back({"a", true, ""});
  r.items.push_back({"b", false, ""});
  r.items.push_back({"c", false, ""});
  CHECK(r.n_failed() == 2);
  CHECK(!r.ok());
}

TEST_CASE("full run passes every suite") {
  CheckOptions opt;
  std::vector<CheckResult> results = checks::run_checks(opt);
  REQUIRE(results.size() == checks::suite_names().size());
  for (size_t i = 0; i < results.size(); ++i) {
    INFO(results[i].suite, ": ", checks::render_results({results[i]}));
    CHECK(results[i].suite == checks::suite_names()[i]);
    CHECK(results[i].ok());
    CHECK(results[i].items.size() >= 4);
  }
  CHECK(checks::all_ok(results));
  const std::string text = checks::render_results(results);
  CHECK(text.find("all suites passed") != std::string::npos);
  CHECK(text.find("FAIL") == std::string::npos);
}

TEST_CASE("suite selection runs only the named suites, in request order") {
  CheckOptions opt;
  opt.suites = {"flowpath", "geometry"};
  std::vector<CheckResult> results = checks::run_checks(opt);
  REQUIRE(results.size() == 2);
  CHECK(results[0].suite == "flowpath");
  CHECK(results[1].suite == "geometry");
  CHECK(checks::all_ok(results));
}

TEST_CASE("unknown suite names are rejected before any sweep runs") {
  CheckOptions opt;
  opt.suites = {"geometry", "nonsense"};
  CHECK(throws_code([&] { checks::run_checks(opt); }, ErrorCode::Config));
}

TEST_CASE("injected fault fails exactly the targeted suite") {
  CheckOptions opt;
  opt.suites = {"flowpath"};
  opt.inject_fault = "flowpath";
  std::vector<CheckResult> results = checks::run_checks(opt);
  REQUIRE(results.size() == 1);
  CHECK(!checks::all_ok(results));
  CHECK(results[0].n_failed() == 1);
  CHECK(results[0].items.back().name == "injected_fault");

  const std::string text = checks::render_results(results);
  CHECK(text.find("flowpath: FAIL") != std::string::npos);
  CHECK(text.find("FAIL injected_fault") != std::string::npos);
  CHECK(text.find("failed suites: flowpath") != std::string::npos);
  CHECK(text.find("all suites passed") == std::string::npos);
}

TEST_CASE("fault targeting rejects bad names") {
  CheckOptions opt;
  opt.suites = {"geometry"};
  opt.inject_fault = "flowpath";
  CHECK(throws_code([&] { checks::run_checks(opt); }, ErrorCode::Config));
  opt.suites.clear();
  opt.inject_fault = "nonsense";
  CHECK(throws_code([&] { checks::run_checks(opt); }, ErrorCode::Config));
}

TEST_CASE("same options reproduce the same report") {
  CheckOptions opt;
  opt.suites = {"flowpath"};
  opt.seed = 7;
  std::vector<CheckResult> a = checks::run_checks(opt);
  std::vector<CheckResult> b = checks::run_checks(opt);
  REQUIRE(a.size() == 1);
  REQUIRE(a[0].items.size() == b[0].items.size());
  for (size_t i = 0; i < a[0].items.size(); ++i) {
    CHECK(a[0].items[i].name == b[0].items[i].name);
    CHECK(a[0].items[i].ok == b[0].items[i].ok);
    CHECK(a[0].items[i].detail == b[0].items[i].detail);
  }
}
