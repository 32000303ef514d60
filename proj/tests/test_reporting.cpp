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

#include "mlcm/reporting.hpp"

namespace mlcm {
namespace {

std::vector<TrueUtility> students(int n_instances, std::uint64_t seed) {
  std::vector<TrueUtility> out;
  for (int i = 0; i < n_instances; ++i) {
    const Catalog cat = make_catalog(CatalogConfig{}, seed + static_cast<std::uint64_t>(i));
    GeneratorConfig g;
    g.seed = seed + static_cast<std::uint64_t>(i);
    auto v = generate_instance(g, cat, 30, {5, 0, {}});
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

TEST(EvalGui, WorkedExample) {
  GuiReport r;
  r.base = {75, 77, 42, 45};
  EXPECT_DOUBLE_EQ(eval_gui(r, Schedule::of({1, 3})), 122.0);
  r.adjustments.push_back({1, 3, -10.0});
  EXPECT_DOUBLE_EQ(eval_gui(r, Schedule::of({1, 3})), 112.0);
  EXPECT_DOUBLE_EQ(eval_gui(r, Schedule::of({1, 2})), 119.0);
  EXPECT_DOUBLE_EQ(eval_gui(r, Schedule()), 0.0);
}

// Without mistakes the report is exact on every schedule of at most two
// courses, up to the GUI's smallest enterable value.
TEST(Report, NoMistakesIsExactOnSchedulesOfAtMostTwoCourses) {
  for (const auto& u : students(2, 40)) {
    const GuiReport r = report(u, MistakeProfile::none(), 1);
    auto floor_gap = [&](int j) {
      const double b = u.base[static_cast<std::size_t>(j)];
      return b > 0.0 ? std::max(b, kMinReportedBase) - b : 0.0;
    };
    for (int a = 0; a < u.m(); ++a) {
      EXPECT_NEAR(eval_gui(r, Schedule::of({a})), eval_true(u, Schedule::of({a})) + floor_gap(a), 1e-9);
      for (int b = a + 1; b < u.m(); ++b) {
        const Schedule x = Schedule::of({a, b});
        EXPECT_NEAR(eval_gui(r, x), eval_true(u, x) + floor_gap(a) + floor_gap(b), 1e-9);
      }
    }
  }
}

TEST(Report, ForgetsLowestValuedCoursesFirst) {
  TrueUtility u;
  u.base = {10, 90, 20, 80, 30, 70};
  MistakeProfile mp;
  mp.f_b = 0.5;
  const GuiReport r = report(u, mp, 3);
  EXPECT_EQ(r.base, (std::vector<double>{0, 90, 0, 80, 0, 70}));
}

TEST(Report, ForgottenCountIsUnbiased) {
  // 25 positive courses, f_b = 0.5: 12.5 expected forgotten, so the
  // reported count averages 12.5 and takes only the values 12 and 13.
  TrueUtility u;
  for (int j = 0; j < 25; ++j) u.base.push_back(1.0 + j);
  MistakeProfile mp;
  mp.f_b = 0.5;
  double total = 0.0;
  const int n = 4000;
  for (int s = 0; s < n; ++s) {
    const int reported = report(u, mp, static_cast<std::uint64_t>(s)).n_reported();
    EXPECT_TRUE(reported == 12 || reported == 13);
    total += reported;
  }
  EXPECT_NEAR(total / n, 12.5, 0.05);
}

TEST(Report, GammaScalesEveryMistake) {
  MistakeProfile mp = MistakeProfile::popular9();
  mp.gamma = 0.5;
  const MistakeProfile s = mp.scaled();
  EXPECT_DOUBLE_EQ(s.f_b, 0.25);
  EXPECT_DOUBLE_EQ(s.f_a, 0.24);
  EXPECT_DOUBLE_EQ(s.sigma_b, 11.5);
  EXPECT_DOUBLE_EQ(s.sigma_a, 0.1);
  mp.gamma = 3.0;
  EXPECT_DOUBLE_EQ(mp.scaled().f_b, 1.0);
}

TEST(Report, ValuesStayInGuiRanges) {
  for (const auto& u : students(2, 60)) {
    const GuiReport r = report(u, MistakeProfile::popular9(), 5);
    for (double v : r.base) EXPECT_TRUE(v == 0.0 || (v >= kMinReportedBase && v <= kMaxBaseValue));
    for (const auto& a : r.adjustments) {
      EXPECT_LT(a.a, a.b);
      EXPECT_TRUE(r.reported(a.a) && r.reported(a.b));
      EXPECT_LE(std::abs(a.value), kMaxAdjustment);
    }
  }
}

TEST(Report, Deterministic) {
  const auto u = students(1, 70).front();
  EXPECT_EQ(report(u, MistakeProfile::popular9(), 9), report(u, MistakeProfile::popular9(), 9));
}

TEST(Report, RejectsInvalidProfile) {
  TrueUtility u;
  u.base = {1, 2};
  MistakeProfile mp;
  mp.f_b = 1.5;
  EXPECT_THROW(report(u, mp, 0), ValidationError);
  mp = MistakeProfile{};
  mp.sigma_b = -1;
  EXPECT_THROW(report(u, mp, 0), ValidationError);
}

TEST(DisagreementGap, SignAndScale) {
  EXPECT_FALSE(disagreement_gap(120, 100, true).has_value());
  EXPECT_DOUBLE_EQ(*disagreement_gap(80, 100, true), -20.0);
  EXPECT_DOUBLE_EQ(*disagreement_gap(100, 80, false), -20.0);
  EXPECT_DOUBLE_EQ(*disagreement_gap(0, 0, true), 0.0);
}

TEST(Calibration, NoMistakesAndTopFractionOne) {
  const auto all = students(1, 80);
  ProbeConfig probes;
  probes.top_fraction = 1.0;
  const auto c = calibration_metrics(all, MistakeProfile::none(), probes, 1);
  EXPECT_EQ(c.n_students, 30);
  EXPECT_DOUBLE_EQ(c.reported_mean, 25.0);
  EXPECT_DOUBLE_EQ(c.low_mean + c.high_mean, c.reported_mean);
  EXPECT_GT(c.n_probes, 0);
  EXPECT_GE(c.accuracy, 0.0);
  EXPECT_LE(c.accuracy, 100.0);
}

TEST(Calibration, DeterministicCsv) {
  const auto all = students(1, 90);
  const auto a = calibration_metrics(all, MistakeProfile::popular9(), ProbeConfig{}, 2);
  const auto b = calibration_metrics(all, MistakeProfile::popular9(), ProbeConfig{}, 2);
  EXPECT_EQ(to_csv_row(a), to_csv_row(b));
  EXPECT_THROW(calibration_metrics(all, MistakeProfile::popular9(), ProbeConfig{25, 0.0}, 2), ValidationError);
}

TEST(GuiReportJson, RoundTrip) {
  GuiReport r;
  r.base = {0, 55.5, 0, 80};
  r.adjustments.push_back({1, 3, -12.25});
  const auto j = nlohmann::json(r);
  EXPECT_EQ(j.dump(), R"({"adj":[[1,3,-12.25]],"base":{"1":55.5,"3":80.0}})");
  EXPECT_EQ(gui_report_from_json(j, 4), r);
}

TEST(GuiReportJson, RejectsOutOfRangeInput) {
  auto parse = [](const char* text) { return gui_report_from_json(nlohmann::json::parse(text), 4); };
  EXPECT_THROW(parse(R"({"base":{"0":101}})"), ValidationError);
  EXPECT_THROW(parse(R"({"base":{"7":10}})"), ValidationError);
  EXPECT_THROW(parse(R"({"base":{"x":10}})"), ValidationError);
  EXPECT_THROW(parse(R"({"base":{"0":10,"1":10},"adj":[[0,1,250]]})"), ValidationError);
  EXPECT_THROW(parse(R"({"base":{"0":10},"adj":[[0,0,5]]})"), ValidationError);
  EXPECT_THROW(parse(R"({"base":{},"adj":[[0,1,5],[1,0,6]]})"), ValidationError);
  EXPECT_NO_THROW(parse(R"({"base":{"0":10,"1":10},"adj":[[1,0,-200]]})"));
}

}  // namespace
}  // namespace mlcm
