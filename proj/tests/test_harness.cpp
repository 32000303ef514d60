// Copyright 2026 The mlcm-lab Authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include "mlcm/harness.hpp"

namespace mlcm {
namespace {

ExperimentSpec small_spec() {
  ExperimentSpec spec;
  spec.instance.catalog.m = 8;
  spec.instance.catalog.n_students = 6;
  spec.instance.catalog.max_courses = 3;
  spec.instance.catalog.n_popular = 3;
  spec.instance.generator.n_favorites = 3;
  spec.n_instances = 2;
  spec.seed = 40;
  MechanismConfig cm;
  cm.kind = MechanismKind::kCm;
  cm.course_match.stage1.max_steps = 60;
  MechanismConfig rsd_cfg;
  rsd_cfg.kind = MechanismKind::kRsd;
  spec.mechanisms = {{"CM", cm}, {"RSD", rsd_cfg}};
  return spec;
}

TEST(Harness, MeanCiArithmetic) {
  const auto [mean, ci] = mean_ci({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(mean, 2.5);
  // Sample sd sqrt(5/3), n = 4.
  EXPECT_DOUBLE_EQ(ci, 1.96 * std::sqrt(5.0 / 3.0) / 2.0);
  EXPECT_EQ(mean_ci({7.0}), std::make_pair(7.0, 0.0));
  EXPECT_EQ(mean_ci({}), std::make_pair(0.0, 0.0));
}

TEST(Harness, CsvHelpers) {
  EXPECT_EQ(fmt(1.0 / 3.0, 3), "0.333");
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("mlcm(10,obis)"), "\"mlcm(10,obis)\"");
  EXPECT_EQ(csv_field("a,\"b\""), "\"a,\"\"b\"\"\"");
}

TEST(Harness, ExperimentAddsNormalizerAndIsReproducible) {
  const auto spec = small_spec();
  const auto r1 = run_experiment(spec);
  const auto r2 = run_experiment(spec);
  ASSERT_EQ(r1.metrics.size(), 3U);
  EXPECT_EQ(r1.metrics[0].label, kCmStarLabel);
  EXPECT_NEAR(r1.metrics[0].avg_mean, 100.0, 1e-9);
  EXPECT_EQ(r1.raw.size(), 6U);
  EXPECT_EQ(metrics_csv(r1), metrics_csv(r2));
  EXPECT_EQ(raw_csv(r1), raw_csv(r2));
  // Normalized columns are 100 * raw / normalizer.
  for (const auto& m : r1.metrics) {
    std::vector<double> avgs;
    for (const auto& row : r1.raw) {
      if (row.label == m.label) avgs.push_back(100.0 * row.average / r1.normalizer);
    }
    EXPECT_NEAR(m.avg_mean, mean_ci(avgs).first, 1e-9);
  }
}

TEST(Harness, GivenInstancesReplaceGeneratedOnes) {
  auto spec = small_spec();
  const auto generated = run_experiment(spec);
  for (int i = 0; i < spec.n_instances; ++i) {
    spec.instances.push_back(make_instance(spec.instance, instance_seed(spec.seed, i)));
  }
  spec.n_instances = 0;
  EXPECT_EQ(raw_csv(run_experiment(spec)), raw_csv(generated));
}

TEST(Harness, ValidateRejectsEmptySpecs) {
  auto spec = small_spec();
  spec.mechanisms.clear();
  EXPECT_THROW(run_experiment(spec), ValidationError);
  spec = small_spec();
  spec.n_instances = 0;
  EXPECT_THROW(run_experiment(spec), ValidationError);
}

TEST(Harness, OptInSummaryArithmetic) {
  std::vector<OptInRow> rows(4);
  rows[0].preferred = 1;
  rows[0].gain = 10.0;
  rows[1].preferred = 1;
  rows[1].gain = 20.0;
  rows[2].preferred = -1;
  rows[2].gain = -6.0;
  rows[3].preferred = 0;
  const auto s = summarize(rows);
  EXPECT_DOUBLE_EQ(s.share_mlcm, 50.0);
  EXPECT_DOUBLE_EQ(s.share_cm, 25.0);
  EXPECT_DOUBLE_EQ(s.share_indifferent, 25.0);
  EXPECT_DOUBLE_EQ(s.expected_gain, 6.0);
  EXPECT_DOUBLE_EQ(s.gain_if_mlcm, 15.0);
  EXPECT_DOUBLE_EQ(s.gain_if_cm, -6.0);
}

TEST(Harness, OptInWithoutQueriesIsIndifferent) {
  auto spec = small_spec();
  spec.n_instances = 1;
  MechanismConfig ml;
  ml.n_queries = 0;
  ml.n_t2 = 20;
  ml.n_t3 = 20;
  ml.course_match.stage1.max_steps = 60;
  const auto r = opt_in_study(spec, ml, OptInMode::kNobodyElse);
  EXPECT_EQ(r.rows.size(), 6U);
  EXPECT_DOUBLE_EQ(r.summary.share_indifferent, 100.0);
}

TEST(Harness, QueryStudyCurvesHaveOnePointPerQuery) {
  auto spec = small_spec();
  spec.n_instances = 1;
  MechanismConfig ml;
  ml.n_t2 = 20;
  ml.n_t3 = 20;
  ml.course_match.stage1.max_steps = 60;
  const auto curves = query_algorithm_study(spec, ml, 3, {QueryAlgorithm::kRandom});
  ASSERT_EQ(curves.size(), 1U);
  EXPECT_EQ(curves[0].ordinal_size.size(), 3U);
  // Random queries add exactly one comparison each.
  for (std::size_t t = 0; t < 3; ++t) EXPECT_DOUBLE_EQ(curves[0].ordinal_size[t], static_cast<double>(t + 1));
}

}  // namespace
}  // namespace mlcm
