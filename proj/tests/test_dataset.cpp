#include <gtest/gtest.h>

#include <map>
#include <set>

#include "ioi/dataset.hpp"

using namespace ioi;

TEST(Dataset, SixtyDistinctWellFormedPrompts) {
  const auto data = enumerate_dataset();
  ASSERT_EQ(data.size(), 60u);
  std::set<Prompt> prompts;
  for (const auto& ex : data) {
    EXPECT_TRUE(is_well_formed(ex));
    prompts.insert(ex.prompt);
  }
  EXPECT_EQ(prompts.size(), 60u);
}

TEST(Dataset, TemplatesSplitEvenly) {
  const auto [baab, baba] = split_by_template(enumerate_dataset());
  EXPECT_EQ(baab.size(), 30u);
  EXPECT_EQ(baba.size(), 30u);
  for (const auto& ex : baab) EXPECT_EQ(ex.prompt[3], ex.prompt[2]);
  for (const auto& ex : baba) EXPECT_EQ(ex.prompt[3], ex.prompt[1]);
}

TEST(Dataset, TargetIsTheNonRepeatedName) {
  for (const auto& ex : enumerate_dataset()) {
    EXPECT_EQ(ex.prompt[0], Vocab::kBos);
    EXPECT_EQ(ex.prompt[kMidPosition], Vocab::kMid);
    EXPECT_NE(ex.target, ex.prompt[kSubjectPosition]);
    EXPECT_TRUE(ex.target == ex.prompt[1] || ex.target == ex.prompt[2]);
    EXPECT_EQ(ex.incorrect(), ex.prompt[kSubjectPosition]);
  }
}

TEST(Dataset, EveryNameIsTheAnswerEqually) {
  std::map<TokenId, int> count;
  for (const auto& ex : enumerate_dataset()) ++count[ex.target];
  ASSERT_EQ(count.size(), 6u);
  for (const auto& [t, n] : count) EXPECT_EQ(n, 10) << Vocab::token_string(t);
}

TEST(Dataset, OrderIsTemplateThenNames) {
  const auto data = enumerate_dataset();
  EXPECT_EQ(data.front(), make_example(Template::BAAB, 0, 1));
  EXPECT_EQ(data[29], make_example(Template::BAAB, 5, 4));
  EXPECT_EQ(data[30], make_example(Template::BABA, 0, 1));
  EXPECT_EQ(data.back(), make_example(Template::BABA, 5, 4));
}

TEST(Dataset, MakeExampleRejectsBadNames) {
  EXPECT_THROW(make_example(Template::BAAB, 2, 2), DomainError);
  EXPECT_THROW(make_example(Template::BABA, 0, Vocab::kBos), DomainError);
  EXPECT_THROW(make_example(Template::BABA, -1, 3), DomainError);
}

TEST(Dataset, MalformedExamplesDetected) {
  auto ex = make_example(Template::BABA, 1, 2);
  EXPECT_TRUE(is_well_formed(ex));
  auto bad = ex;
  bad.target = 1;
  EXPECT_FALSE(is_well_formed(bad));
  bad = ex;
  bad.prompt[4] = 3;
  EXPECT_FALSE(is_well_formed(bad));
  bad = ex;
  bad.prompt[3] = 4;
  EXPECT_FALSE(is_well_formed(bad));
}

TEST(Dataset, CorpusLineFormat) {
  EXPECT_EQ(corpus_line(make_example(Template::BAAB, 0, 1)), "BAAB,6,0,1,1,7,0,<BOS> John Mary Mary <MID> John");
  EXPECT_EQ(corpus_line(make_example(Template::BABA, 3, 5)), "BABA,6,3,5,3,7,5,<BOS> Anna Lisa Anna <MID> Lisa");
}

TEST(Vocab, TokenStrings) {
  EXPECT_EQ(Vocab::token_string(Vocab::kBos), "<BOS>");
  EXPECT_EQ(Vocab::token_string(Vocab::kMid), "<MID>");
  EXPECT_THROW(Vocab::token_string(8), DomainError);
  EXPECT_EQ(template_from_string("BABA"), Template::BABA);
  EXPECT_THROW(template_from_string("ABAB"), DomainError);
}
