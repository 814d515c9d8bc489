#include <gtest/gtest.h>

#include <set>

#include "denet/enet.hpp"
#include "denet/errors.hpp"
#include "denet/eval.hpp"
#include "denet/fusion.hpp"
#include "denet/synth.hpp"

using namespace denet;

namespace {

class ConstantEstimator : public DensityEstimator {
 public:
  explicit ConstantEstimator(double v) : v_(v) {}
  DensityGrid estimate(const Tensor& image) const override {
    DensityGrid g(image.dim(2), image.dim(1));
    std::fill(g.values.begin(), g.values.end(), v_);
    return g;
  }

 private:
  double v_;
};

ImageRecord rec(double c, std::size_t gt) { return {"x", gt, 0, c, c}; }

std::vector<EvalItem> corpus(std::size_t n, std::size_t size = 32) {
  SynthConfig sc;
  sc.width = sc.height = size;
  sc.min_dots = 3;
  sc.max_dots = 15;
  std::vector<EvalItem> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = synthesize_scene(sc, 100 + i, "img" + std::to_string(i));
    out.push_back({s.annotation.image_id, s.image, s.annotation});
  }
  return out;
}

std::map<std::string, DetectionSet> detect_all(const std::vector<EvalItem>& data, double recall) {
  std::map<std::string, DetectionSet> m;
  for (const auto& it : data) m[it.image_id] = mock_detect(it.annotation, recall, 6, 9);
  return m;
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back("id" + std::to_string(i));
  return v;
}

}  // namespace

TEST(MaeMse, Examples) {
  auto [mae, mse] = mae_mse({rec(5, 7)});
  EXPECT_EQ(mae, 2.0);
  EXPECT_EQ(mse, 4.0);
  std::tie(mae, mse) = mae_mse({rec(4, 3), rec(0, 3)});
  EXPECT_EQ(mae, 2.0);
  EXPECT_EQ(mse, 5.0);
  std::tie(mae, mse) = mae_mse({rec(3, 3), rec(9, 9)});
  EXPECT_EQ(mae, 0.0);
  EXPECT_EQ(mse, 0.0);
  EXPECT_THROW(mae_mse({}), ContractError);
}

TEST(MaeMse, SingletonIsAbsAndSquare) {
  const auto [mae, mse] = mae_mse({rec(2.5, 6)});
  EXPECT_EQ(mae, 3.5);
  EXPECT_EQ(mse, 12.25);
}

TEST(Evaluate, FullRecallWithZeroModelIsExact) {
  const auto data = corpus(6);
  const auto report = evaluate(ConstantEstimator(0.0), data, detect_all(data, 1.0), FusionConfig{});
  ASSERT_EQ(report.per_image.size(), 6u);
  for (const auto& r : report.per_image) {
    EXPECT_EQ(r.c, static_cast<double>(r.n_gt));
    EXPECT_EQ(r.n_d, r.n_gt);
  }
  EXPECT_EQ(report.mae, 0.0);
}

TEST(Evaluate, NoDetectionsZeroModelGivesMeanCount) {
  const auto data = corpus(5);
  double mean = 0.0;
  for (const auto& it : data) mean += static_cast<double>(it.annotation.points.size()) / 5.0;
  const auto report = evaluate(ConstantEstimator(0.0), data, detect_all(data, 0.0), FusionConfig{});
  EXPECT_NEAR(report.mae, mean, 1e-12);
}

TEST(Evaluate, RowsSatisfyFusedCount) {
  const auto data = corpus(4);
  const auto model = EnetModel::build(EnetConfig{}, 1);
  const auto report = evaluate(EnetEstimator(model), data, detect_all(data, 0.5), FusionConfig{});
  for (const auto& r : report.per_image) EXPECT_EQ(r.c, static_cast<double>(r.n_d) + r.n_e);
}

TEST(Evaluate, RepeatedRunsIdentical) {
  const auto data = corpus(3, 40);
  const auto model = EnetModel::build(EnetConfig{}, 2);
  const auto a = evaluate(EnetEstimator(model), data, detect_all(data, 0.3), FusionConfig{});
  const auto b = evaluate(EnetEstimator(model), data, detect_all(data, 0.3), FusionConfig{});
  EXPECT_EQ(report_to_json(a).dump(), report_to_json(b).dump());
}

TEST(Evaluate, MissingRecordNamesImage) {
  const auto data = corpus(3);
  auto dets = detect_all(data, 0.5);
  dets.erase("img1");
  try {
    evaluate(ConstantEstimator(0.0), data, dets, FusionConfig{});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("img1"), std::string::npos);
  }
}

TEST(Evaluate, EstimatorExtentMismatchRejected) {
  class Wrong : public DensityEstimator {
   public:
    DensityGrid estimate(const Tensor&) const override { return DensityGrid(3, 3); }
  };
  const auto data = corpus(1);
  EXPECT_THROW(evaluate(Wrong{}, data, detect_all(data, 0.0), FusionConfig{}), ValidationError);
}

TEST(EnetEstimator, ArbitraryExtents) {
  const auto model = EnetModel::build(EnetConfig{}, 3);
  const auto g = EnetEstimator(model).estimate(Tensor::full({3, 65, 70}, 0.5));
  EXPECT_EQ(g.height, 65u);
  EXPECT_EQ(g.width, 70u);
}

TEST(Folds, FiftyIntoFive) {
  const auto split = make_folds(ids(50), 5, 1);
  ASSERT_EQ(split.folds.size(), 5u);
  std::set<std::string> seen;
  for (const auto& f : split.folds) {
    EXPECT_EQ(f.size(), 10u);
    seen.insert(f.begin(), f.end());
  }
  EXPECT_EQ(seen.size(), 50u);
}

TEST(Folds, UnevenSizesDifferByAtMostOne) {
  const auto split = make_folds(ids(23), 5, 2);
  std::size_t lo = 100, hi = 0, total = 0;
  for (const auto& f : split.folds) lo = std::min(lo, f.size()), hi = std::max(hi, f.size()), total += f.size();
  EXPECT_LE(hi - lo, 1u);
  EXPECT_EQ(total, 23u);
}

TEST(Folds, LeaveOneOut) {
  const auto split = make_folds(ids(7), 7, 3);
  for (const auto& f : split.folds) EXPECT_EQ(f.size(), 1u);
}

TEST(Folds, Deterministic) {
  EXPECT_EQ(make_folds(ids(30), 5, 4).folds, make_folds(ids(30), 5, 4).folds);
  EXPECT_NE(make_folds(ids(30), 5, 4).folds, make_folds(ids(30), 5, 5).folds);
}

TEST(Folds, TooFewImages) { EXPECT_THROW(make_folds(ids(3), 5, 0), ContractError); }

TEST(CrossValidate, EveryImageOnceInDatasetOrder) {
  const auto data = corpus(7);
  std::vector<std::size_t> train_sizes;
  const TrainFn fn = [&](const std::vector<EvalItem>& train_set) {
    train_sizes.push_back(train_set.size());
    return std::make_shared<ConstantEstimator>(0.0);
  };
  const auto report = cross_validate(data, 3, 9, fn, detect_all(data, 0.0), FusionConfig{});
  ASSERT_EQ(report.per_image.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(report.per_image[i].image_id, data[i].image_id);
  std::size_t sum = 0;
  for (auto s : train_sizes) sum += s;
  EXPECT_EQ(train_sizes.size(), 3u);
  EXPECT_EQ(sum, 2u * 7u);  // each image is in k-1 training sets
}

TEST(Report, JsonAndCsv) {
  CountReport r;
  r.per_image = {{"a", 5, 1, 3.5, 4.5}, {"b", 2, 0, 2.0, 2.0}};
  std::tie(r.mae, r.mse) = mae_mse(r.per_image);
  const auto j = report_to_json(r);
  EXPECT_EQ(j["summary"]["mae"].get<double>(), 0.25);
  EXPECT_EQ(j["summary"]["mse"].get<double>(), 0.125);
  EXPECT_NEAR(j["summary"]["rmse"].get<double>(), std::sqrt(0.125), 1e-15);
  EXPECT_EQ(j["per_image"][0]["abs_err"].get<double>(), 0.5);
  const auto csv = report_to_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "image_id,n_gt,n_d,n_e,c,abs_err");
  EXPECT_NE(csv.find("a,5,1,3.5,4.5,0.5\n"), std::string::npos);
}
