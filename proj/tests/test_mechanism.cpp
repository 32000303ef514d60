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

#include "mlcm/mechanism.hpp"

namespace mlcm {
namespace {

InstanceConfig small_config() {
  InstanceConfig cfg;
  cfg.catalog.m = 8;
  cfg.catalog.n_students = 6;
  cfg.catalog.max_courses = 3;
  cfg.catalog.n_popular = 3;
  cfg.generator.n_favorites = 3;
  return cfg;
}

MechanismConfig fast(MechanismKind kind, std::uint64_t seed) {
  MechanismConfig cfg;
  cfg.kind = kind;
  cfg.n_queries = 2;
  cfg.n_t2 = 20;
  cfg.n_t3 = 20;
  cfg.course_match.stage1.max_steps = 60;
  cfg.seed = seed;
  cfg.course_match.stage1.seed = seed;
  cfg.course_match.stage3_seed = seed;
  return cfg;
}

TEST(Mechanism, PerturbPricesIdentityAndClamp) {
  const PriceVector p{0.0, 0.4, 5.0};
  PriceNoise none;
  const auto same = perturb_prices(p, none, 1.04, 1);
  EXPECT_EQ(same, (PriceVector{0.0, 0.4, 1.04}));
  PriceNoise g{PriceNoise::Kind::kGaussian, 0.2, 0.0};
  for (double v : perturb_prices(p, g, 1.04, 2)) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.04);
  }
  PriceNoise u{PriceNoise::Kind::kUniform, 0.0, 0.1};
  const auto pu = perturb_prices(p, u, 1.04, 3);
  EXPECT_EQ(pu[0], 0.0);
  EXPECT_GE(pu[1], 0.36);
  EXPECT_LE(pu[1], 0.44);
  EXPECT_THROW(perturb_prices(p, PriceNoise{PriceNoise::Kind::kGaussian, -1.0, 0.0}, 1.0, 0),
               ValidationError);
}

TEST(Mechanism, ParseNames) {
  EXPECT_EQ(parse_mechanism("cm_star"), MechanismKind::kCmStar);
  EXPECT_EQ(parse_mechanism("MLCM"), MechanismKind::kMlcm);
  EXPECT_EQ(parse_mechanism("cm-star"), MechanismKind::kCmStar);
  EXPECT_EQ(parse_mechanism("cmnm"), MechanismKind::kCmNoMistakes);
  EXPECT_EQ(parse_mechanism("Mlcm-Projected"), MechanismKind::kMlcmProjected);
  EXPECT_THROW(parse_mechanism("lottery"), ValidationError);
}

TEST(Mechanism, InstanceJsonRoundTrip) {
  const Instance inst = make_instance(small_config(), 3);
  const nlohmann::json j = inst;
  const Instance back = j.get<Instance>();
  EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
  nlohmann::json bad = j;
  bad["budgets"].erase(0);
  EXPECT_THROW(bad.get<Instance>(), ValidationError);
}

TEST(Mechanism, EveryKindIsFeasibleAndDeterministic) {
  const Instance inst = make_instance(small_config(), 5);
  const std::vector<Permissibility> perms(static_cast<std::size_t>(inst.n()), inst.perm);
  for (auto k : {MechanismKind::kCm, MechanismKind::kCmStar, MechanismKind::kCmNoMistakes,
                 MechanismKind::kMlcm, MechanismKind::kMlcmProjected, MechanismKind::kRsd}) {
    const auto r1 = run_mechanism(inst, fast(k, 9));
    const auto r2 = run_mechanism(inst, fast(k, 9));
    EXPECT_TRUE(feasible(r1.allocation, inst.catalog, perms)) << to_string(k);
    EXPECT_EQ(nlohmann::json(r1).dump(), nlohmann::json(r2).dump()) << to_string(k);
    ASSERT_EQ(r1.utilities.size(), static_cast<std::size_t>(inst.n()));
    for (int i = 0; i < inst.n(); ++i) {
      EXPECT_DOUBLE_EQ(r1.utilities[static_cast<std::size_t>(i)],
                       eval_true(inst.truth[static_cast<std::size_t>(i)], r1.allocation[static_cast<std::size_t>(i)]));
    }
  }
}

TEST(Mechanism, NoQueriesAndNobodyOptedInIsCm) {
  const Instance inst = make_instance(small_config(), 6);
  auto ml = fast(MechanismKind::kMlcm, 4);
  ml.opt_in.assign(static_cast<std::size_t>(inst.n()), false);
  const auto a = run_mechanism(inst, ml);
  const auto b = run_mechanism(inst, fast(MechanismKind::kCm, 4));
  EXPECT_EQ(a.allocation, b.allocation);
}

TEST(Mechanism, ExternalPricesAreUsed) {
  const Instance inst = make_instance(small_config(), 7);
  auto ml = fast(MechanismKind::kMlcm, 1);
  ml.price_source.kind = PriceSource::Kind::kExternal;
  ml.price_source.prices = PriceVector(8, 0.25);
  EXPECT_NO_THROW(run_mechanism(inst, ml));
  ml.price_source.prices = PriceVector(3, 0.25);
  EXPECT_THROW(run_mechanism(inst, ml), ValidationError);
}

TEST(Mechanism, FixedModelIsTakenAsGiven) {
  const Instance inst = make_instance(small_config(), 8);
  auto ml = fast(MechanismKind::kMlcm, 2);
  // Student 0 only wants course 7.
  std::vector<double> coefs(8, 0.0);
  coefs[7] = 1.0;
  ml.fixed_models.assign(static_cast<std::size_t>(inst.n()), std::nullopt);
  ml.fixed_models[0] = MonotoneValueModel::linear(8, coefs);
  const auto r = run_mechanism(inst, ml);
  EXPECT_TRUE(r.allocation[0].contains(7) || r.prices[7] > inst.budgets[0]);
  ml.fixed_models.resize(2);
  EXPECT_THROW(run_mechanism(inst, ml), ValidationError);
}

TEST(Mechanism, ValidateRejectsBadConfigs) {
  MechanismConfig cfg;
  cfg.n_queries = -1;
  EXPECT_THROW(validate(cfg, 3), ValidationError);
  cfg.n_queries = 1;
  cfg.opt_in = {true};
  EXPECT_THROW(validate(cfg, 3), ValidationError);
}

}  // namespace
}  // namespace mlcm
