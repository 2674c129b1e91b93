#include <gtest/gtest.h>

#include "ioi/interventions.hpp"

using namespace ioi;

namespace {

ModelConfig make_config(int layers, int heads) {
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  return c;
}

TrainConfig short_train(int steps) {
  TrainConfig t;
  t.total_steps = steps;
  return t;
}

}  // namespace

TEST(MeanEmbed, EveryNameRowBecomesTheMean) {
  const auto p = init_params(make_config(1, 2), 4);
  const auto q = mean_name_embed_patch(p);
  for (std::size_t j = 0; j < 8; ++j) {
    double mean = 0.0;
    for (std::size_t t = 0; t < 6; ++t) mean += p.W_E(t, j);
    mean /= 6.0;
    for (std::size_t t = 0; t < 6; ++t) EXPECT_NEAR(q.W_E(t, j), mean, 1e-15);
    EXPECT_EQ(q.W_E(6, j), p.W_E(6, j));
    EXPECT_EQ(q.W_E(7, j), p.W_E(7, j));
  }
  EXPECT_EQ(q.W_U, p.W_U);
  EXPECT_EQ(q.blocks, p.blocks);
}

TEST(MeanEmbed, PatchedModelCannotTellNamesApart) {
  const auto cfg = make_config(1, 2);
  const auto p = train(cfg, short_train(300)).params;
  const auto rep = run_mean_name_embed(cfg, p, enumerate_dataset());
  // every prompt now yields the same MID distribution, so at most one name wins everywhere
  EXPECT_LE(rep.aggregate.accuracy, 10.0 / 60.0 + 1e-12);
  EXPECT_EQ(rep.attention.size(), 3u);
  EXPECT_EQ(rep.baseline_attention.size(), 3u);
  EXPECT_GT(rep.accuracy_drop(), 0.0);
}

TEST(NoPos, ReportsPerSeedAndMean) {
  const auto rep = run_no_pos_retrain(make_config(1, 2), short_train(40), {1, 2, 3});
  ASSERT_EQ(rep.per_seed.size(), 3u);
  double mean = 0.0;
  for (const auto& s : rep.per_seed) mean += s.intervened.accuracy;
  EXPECT_NEAR(rep.aggregate.accuracy, mean / 3.0, 1e-15);
  EXPECT_EQ(rep.attention.size(), 3u);
  EXPECT_FALSE(rep.attention[0].mean.empty());
  EXPECT_THROW(run_no_pos_retrain(make_config(1, 2), short_train(5), {}), DomainError);
}

TEST(NoPos, DeterministicAcrossCalls) {
  const auto a = run_no_pos_retrain(make_config(1, 2), short_train(30), {4, 5, 6});
  const auto b = run_no_pos_retrain(make_config(1, 2), short_train(30), {4, 5, 6});
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.per_seed[i].intervened.mean_correct_prob, b.per_seed[i].intervened.mean_correct_prob);
    EXPECT_EQ(a.per_seed[i].baseline.mean_correct_prob, b.per_seed[i].baseline.mean_correct_prob);
  }
}

TEST(Composition, RequiresTwoLayers) {
  const auto cfg = make_config(1, 2);
  try {
    composition_ablate(cfg, init_params(cfg, 0), CompositionPath::Q, enumerate_dataset());
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_EQ(e.kind(), "wrong_architecture");
  }
}

TEST(Composition, DropIsBaselineMinusAblated) {
  const auto cfg = make_config(2, 1);
  const auto p = train(cfg, short_train(200)).params;
  const auto data = enumerate_dataset();
  for (auto path : {CompositionPath::Q, CompositionPath::K, CompositionPath::V}) {
    const auto rep = composition_ablate(cfg, p, path, data);
    ForwardOptions o;
    o.ablate_composition = path;
    EXPECT_DOUBLE_EQ(rep.aggregate.accuracy, accuracy(cfg, p, data, o));
    EXPECT_DOUBLE_EQ(rep.baseline_aggregate.accuracy, accuracy(cfg, p, data));
    EXPECT_DOUBLE_EQ(rep.stats.at("accuracy_drop"), rep.accuracy_drop());
    EXPECT_EQ(*rep.spec.composition_path, path);
  }
}

TEST(Composition, SilentFirstLayerMeansNoDrop) {
  const auto cfg = make_config(2, 1);
  auto p = train(cfg, short_train(100)).params;
  p.blocks[0][0].W_O.fill(0.0);
  for (auto path : {CompositionPath::Q, CompositionPath::K, CompositionPath::V})
    EXPECT_EQ(composition_ablate(cfg, p, path, enumerate_dataset()).accuracy_drop(), 0.0);
}

TEST(Diagnosis, StatisticsAreConsistent) {
  const auto cfg = make_config(1, 1);
  const auto p = train(cfg, short_train(300)).params;
  const auto rep = single_head_diagnosis(cfg, p, enumerate_dataset());
  const auto& s = rep.stats;
  EXPECT_NEAR(s.at("mean_prob_prompt_names"), s.at("mean_prob_name1") + s.at("mean_prob_name2"), 1e-12);
  EXPECT_LE(s.at("min_prob_prompt_name"), s.at("max_prob_prompt_name"));
  EXPECT_GE(s.at("ov_diagonal_dominant_rows"), 0.0);
  EXPECT_LE(s.at("ov_diagonal_dominant_rows"), 6.0);
  EXPECT_THROW(single_head_diagnosis(make_config(1, 2), init_params(make_config(1, 2), 0), enumerate_dataset()),
               DomainError);
}

TEST(Spec, PathOnlyForComposition) {
  InterventionSpec s;
  s.kind = InterventionKind::composition_ablate;
  EXPECT_THROW(s.validate(), DomainError);
  s.composition_path = CompositionPath::V;
  EXPECT_NO_THROW(s.validate());
  s.kind = InterventionKind::mean_name_embed;
  EXPECT_THROW(s.validate(), DomainError);
}

TEST(Evaluate, EmptyInputRejected) {
  const auto cfg = make_config(1, 2);
  EXPECT_THROW(evaluate(cfg, init_params(cfg, 0), {}), DomainError);
}
