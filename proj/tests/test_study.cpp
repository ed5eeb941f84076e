#include "doctest.h"

#include "vidfm/study.hpp"

#include <cmath>

using namespace vidfm;

namespace {

StudyConfig small_config() {
  StudyConfig cfg;
  cfg.cells = {StudyCell{20, 40, 1, 0, 0.3, MissingPattern::kNone}};
  cfg.betas = {0.2, 0.5};
  cfg.replications = 2;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("one row per estimator and beta, metrics in range") {
  const auto rows = run_study(small_config());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].estimator == "ML");
  CHECK(std::isnan(rows[0].mean_p_z));
  for (const auto& row : rows) {
    CHECK(row.replications == 2);
    CHECK(row.failures == 0);
    CHECK(row.mean_p_f >= 0.0);
    CHECK(row.mean_p_f <= 1.0 + 1e-12);
    CHECK(row.mean_e_lambda >= 0.0);
  }
  CHECK(rows[1].beta == 0.2);
  CHECK(rows[2].beta == 0.5);
  CHECK(rows[1].mean_p_z > 0.5);
}

TEST_CASE("study CSV is reproducible for a fixed seed") {
  const std::string a = format_study_csv(run_study(small_config()));
  const std::string b = format_study_csv(run_study(small_config()));
  CHECK(a == b);
  CHECK(a.rfind("n,T,r,p,omega,pattern,estimator,beta,replications,failures,P_Z,E_Lambda,P_F\n", 0) == 0);
  StudyConfig other = small_config();
  other.seed = 6;
  CHECK(format_study_csv(run_study(other)) != a);
}

TEST_CASE("replication results depend only on the seed") {
  const StudyConfig cfg = small_config();
  const auto a = run_replication(cfg.cells[0], cfg, 99);
  const auto b = run_replication(cfg.cells[0], cfg, 99);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].p_f == b[k].p_f);
    CHECK(a[k].e_lambda == b[k].e_lambda);
  }
}

TEST_CASE("presets") {
  const StudyConfig t1 = study_preset("reference-cell");
  REQUIRE(t1.cells.size() == 1);
  CHECK(t1.cells[0].n == 50);
  CHECK(t1.cells[0].T == 100);
  CHECK(t1.replications == 100);
  CHECK(t1.betas == std::vector<double>{0.2});
  const StudyConfig e2 = study_preset("experiment2");
  CHECK(e2.cells.size() == 2);
  CHECK(e2.cells[0].n == 800);
  CHECK(e2.cells[0].pattern == MissingPattern::kExperiment2);
  CHECK(study_preset("experiment2-small").cells[0].n == 200);
  CHECK_THROWS_AS(study_preset("nope"), ConfigError);
}
