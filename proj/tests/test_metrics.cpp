#include <gtest/gtest.h>

#include <random>

#include "bangacmm/metrics.hpp"

using namespace bangacmm;

namespace {

struct Brute {
  std::vector<double> p, r, f;
  double acc = 0, macro_p = 0, macro_r = 0, macro_f = 0;
};

// Recomputes everything from the raw pairs without a confusion matrix.
Brute brute_force(const std::vector<int>& preds, const std::vector<int>& truths, int k) {
  Brute b;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == truths[i];
  b.acc = static_cast<double>(correct) / static_cast<double>(preds.size());
  for (int c = 0; c < k; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == c && truths[i] == c) ++tp;
      if (preds[i] == c && truths[i] != c) ++fp;
      if (preds[i] != c && truths[i] == c) ++fn;
    }
    const double p = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double r = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    b.p.push_back(p);
    b.r.push_back(r);
    b.f.push_back(f);
    b.macro_p += p;
    b.macro_r += r;
    b.macro_f += f;
  }
  b.macro_p /= k;
  b.macro_r /= k;
  b.macro_f /= k;
  return b;
}

EvalReport report(std::string id, std::string strategy, double acc, double f1) {
  EvalReport r;
  r.model_id = std::move(id);
  r.strategy = std::move(strategy);
  r.accuracy = acc;
  r.macro_f1 = f1;
  r.macro_precision = f1;
  r.macro_recall = f1;
  return r;
}

}  // namespace

TEST(Confusion, DiagonalAndSinglePair) {
  auto cm = confusion({0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5});
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t p = 0; p < 6; ++p) EXPECT_EQ(cm.counts[t][p], t == p ? 1u : 0u);
  auto one = confusion({5}, {2});
  EXPECT_EQ(one.counts[2][5], 1u);
  EXPECT_EQ(one.total(), 1u);
}

TEST(Confusion, TotalCountsEveryPair) {
  std::mt19937_64 rng(1);
  std::vector<int> p(1000), t(1000);
  for (auto& v : p) v = static_cast<int>(rng() % 6);
  for (auto& v : t) v = static_cast<int>(rng() % 6);
  EXPECT_EQ(confusion(p, t).total(), 1000u);
}

TEST(Confusion, RejectsBadInput) {
  EXPECT_THROW(confusion({1, 2}, {1}), ContractError);
  EXPECT_THROW(confusion({6}, {0}), ContractError);
  EXPECT_THROW(confusion({-1}, {0}), ContractError);
}

TEST(Metrics, TwoClassWorkedExample) {
  ConfusionMatrix cm(2);
  cm.counts = {{1, 1}, {0, 2}};
  auto r = metrics(cm);
  EXPECT_DOUBLE_EQ(r.per_class[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].recall, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class[1].recall, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].f1, 0.8);
  EXPECT_NEAR(r.macro_f1, 11.0 / 15.0, 1e-15);
}

TEST(Metrics, PerfectDiagonal) {
  auto r = metrics(confusion({0, 1, 2, 3, 4, 5, 0}, {0, 1, 2, 3, 4, 5, 0}));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
  EXPECT_EQ(r.macro_precision, 1.0);
  EXPECT_EQ(r.macro_recall, 1.0);
}

TEST(Metrics, AbsentClassCountsAsZero) {
  auto r = metrics(confusion({0, 1, 2, 3, 4}, {0, 1, 2, 3, 4}));
  EXPECT_EQ(r.per_class[5].f1, 0.0);
  EXPECT_NEAR(r.macro_f1, 5.0 / 6.0, 1e-15);
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(Metrics, EmptyMatrixIsContractError) { EXPECT_THROW(metrics(ConfusionMatrix{}), ContractError); }

TEST(Metrics, MatchesBruteForceOnRandomSets) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const int k = trial % 3 == 0 ? 6 : static_cast<int>(2 + rng() % 5);
    std::vector<int> p(n), t(n);
    for (auto& v : p) v = static_cast<int>(rng() % k);
    for (auto& v : t) v = static_cast<int>(rng() % k);
    auto r = metrics(confusion(p, t, k));
    auto b = brute_force(p, t, k);
    ASSERT_EQ(r.accuracy, b.acc);
    ASSERT_EQ(r.macro_precision, b.macro_p);
    ASSERT_EQ(r.macro_recall, b.macro_r);
    ASSERT_EQ(r.macro_f1, b.macro_f);
    for (int c = 0; c < k; ++c) {
      ASSERT_EQ(r.per_class[c].precision, b.p[c]);
      ASSERT_EQ(r.per_class[c].recall, b.r[c]);
      ASSERT_EQ(r.per_class[c].f1, b.f[c]);
    }
  }
}

TEST(Metrics, InvariantUnderSamplePermutation) {
  std::mt19937_64 rng(5);
  std::vector<int> p(80), t(80);
  for (auto& v : p) v = static_cast<int>(rng() % 6);
  for (auto& v : t) v = static_cast<int>(rng() % 6);
  auto a = metrics(confusion(p, t));
  std::vector<std::size_t> idx(80);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<int> p2, t2;
  for (auto i : idx) {
    p2.push_back(p[i]);
    t2.push_back(t[i]);
  }
  auto b = metrics(confusion(p2, t2));
  EXPECT_EQ(a.macro_f1, b.macro_f1);
  EXPECT_EQ(a.cm, b.cm);
}

TEST(Render, PercentFormatting) {
  auto text = render_comparison({report("mBERT+Swin", "intermediate", 0.8412, 0.8411)}, Layout::fusion);
  const auto acc = text.find("84.12"), f1 = text.find("84.11");
  ASSERT_NE(acc, std::string::npos) << text;
  ASSERT_NE(f1, std::string::npos) << text;
  EXPECT_LT(acc, f1);
  EXPECT_NE(text.find("0/0"), std::string::npos);
}

TEST(Render, EqualF1OrdersByModelId) {
  auto text = render_comparison({report("zeta", "late", 0.5, 0.5), report("alpha", "late", 0.5, 0.5)}, Layout::fusion);
  EXPECT_LT(text.find("alpha"), text.find("zeta"));
  auto ordered = order_reports({report("b", "late", 0.5, 0.4), report("a", "late", 0.5, 0.6)});
  EXPECT_EQ(ordered[0].model_id, "a");
}

TEST(Render, AblationEmitsFiveRowsInOrder) {
  std::vector<EvalReport> rs = {report("m5", "intermediate", 0.9, 0.9), report("m1", "text-only", 0.6, 0.6),
                                report("m4", "late", 0.85, 0.85), report("m2", "image-only", 0.5, 0.5),
                                report("m3", "early", 0.7, 0.7)};
  auto text = render_comparison(rs, Layout::ablation);
  std::vector<std::size_t> at;
  for (const char* label : {"Text-only", "Image-only", "Early fusion", "Late fusion", "Intermediate fusion"}) {
    at.push_back(text.find(label));
    ASSERT_NE(at.back(), std::string::npos) << label;
  }
  EXPECT_TRUE(std::is_sorted(at.begin(), at.end()));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
  EXPECT_NE(text.find("* Intermediate fusion"), std::string::npos) << text;
}

TEST(Render, AblationKeepsBestPerGroup) {
  auto text = render_comparison({report("weak", "late", 0.5, 0.5), report("strong", "late", 0.7, 0.7)}, Layout::ablation);
  EXPECT_NE(text.find("strong"), std::string::npos);
  EXPECT_EQ(text.find("weak"), std::string::npos);
  EXPECT_THROW(render_comparison({}, Layout::ablation), ContractError);
  EXPECT_THROW(parse_layout("grid"), ConfigError);
}

TEST(Report, KeyValuesAndConfusionTsv) {
  auto r = metrics(confusion({0, 1, 1}, {0, 1, 2}));
  auto kv = report_key_values(r);
  EXPECT_EQ(kv.at("samples"), "3");
  EXPECT_EQ(kv.at("class.Advocative.support"), "1");
  auto tsv = confusion_tsv(r.cm);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')),
            "truth\\pred\tInformative\tAdvocative\tPromotive\tExhibitionist\tExpressive\tControversial");
  EXPECT_NE(tsv.find("Promotive\t0\t1\t0\t0\t0\t0"), std::string::npos);
}
