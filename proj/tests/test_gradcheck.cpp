#include <doctest.h>

#include <set>

#include "scda/gradcheck.hpp"

using namespace scda;

TEST_CASE("default gradcheck passes within the time budget") {
  const GradcheckReport r = run_gradcheck({});
  for (const GradcheckEntry& e : r.entries) {
    CAPTURE(e.name);
    CAPTURE(e.max_rel_error);
    CHECK(e.passed());
    CHECK(e.tolerance == (e.composed ? 1e-4 : 1e-5));
  }
  CHECK(r.passed());
  CHECK(r.seconds < 30.0);
}

TEST_CASE("the report names every loss term and the composed total") {
  const GradcheckReport r = run_gradcheck({});
  std::set<std::string> names;
  for (const GradcheckEntry& e : r.entries) names.insert(e.name);
  for (const char* loss : {"loss.ce", "loss.pdd_ss", "loss.pdd_st", "loss.mi", "loss.adv", "loss.total", "op.grl"}) {
    CAPTURE(loss);
    CHECK(names.count(loss) == 1);
  }
  const std::string text = gradcheck_text(r);
  CHECK(text.find("loss.total") != std::string::npos);
  CHECK(text.find("max_rel_err=") != std::string::npos);
  CHECK(text.find("all checks passed") != std::string::npos);

  const auto j = gradcheck_json(r);
  CHECK(j["passed"] == true);
  CHECK(j["checks"].size() == r.entries.size());
}

TEST_CASE("a sign bug in the gradient reversal is caught") {
  GradcheckOptions opt;
  opt.inject_grl_bug = true;
  const GradcheckReport r = run_gradcheck(opt);
  CHECK_FALSE(r.passed());
  std::set<std::string> failed;
  for (const GradcheckEntry& e : r.entries)
    if (!e.passed()) failed.insert(e.name);
  CHECK(failed.count("op.grl") == 1);
  CHECK(failed.count("loss.pdd_ss") == 1);
  CHECK(failed.count("loss.total") == 1);
  CHECK(failed.count("loss.ce") == 0);
  CHECK(gradcheck_text(r).find("FAILED") != std::string::npos);
}

TEST_CASE("gradcheck passes for other seeds") {
  for (std::uint64_t seed : {2u, 3u, 17u}) {
    GradcheckOptions opt;
    opt.seed = seed;
    CAPTURE(seed);
    CHECK(run_gradcheck(opt).passed());
  }
}
