#include "denet/eval.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>

#include "denet/errors.hpp"
#include "denet/losses.hpp"
#include "denet/rng.hpp"

namespace denet {

DensityGrid EnetEstimator::estimate(const Tensor& image) const {
  Tape no_tape(false);
  const auto padded = pad_to_multiple(image);
  return tensor_to_grid(crop_output(no_tape, model_.forward(no_tape, padded.image), padded.record));
}

std::pair<double, double> mae_mse(const std::vector<ImageRecord>& per_image) {
  if (per_image.empty()) throw ContractError("mae_mse: no images");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const auto& r : per_image) {
    const double e = r.abs_err();
    abs_sum += e;
    sq_sum += e * e;
  }
  const double n = static_cast<double>(per_image.size());
  return {abs_sum / n, sq_sum / n};
}

CountReport evaluate(const DensityEstimator& estimator, const std::vector<EvalItem>& dataset,
                     const std::map<std::string, DetectionSet>& detections, const FusionConfig& fusion) {
  fusion.validate();
  CountReport report;
  for (const auto& item : dataset) {
    const auto it = detections.find(item.image_id);
    if (it == detections.end())
      throw ValidationError("evaluate: no detection record for image '" + item.image_id + "'");
    const auto& ann = item.annotation;
    const auto retained = filter_detections(it->second, fusion, ann.width, ann.height);
    const auto scene = apply_masks(item.image, ann, retained, fusion);
    const DensityGrid pred = estimator.estimate(scene.masked_image);
    if (pred.width != ann.width || pred.height != ann.height)
      throw ValidationError("evaluate: estimator returned " + std::to_string(pred.height) + "x" +
                            std::to_string(pred.width) + " for '" + item.image_id + "'");
    const auto rec = fuse_count(scene.n_d, grid_to_tensor(pred));
    report.per_image.push_back({item.image_id, ann.points.size(), rec.n_d, rec.n_e, rec.c});
  }
  std::tie(report.mae, report.mse) = mae_mse(report.per_image);
  return report;
}

FoldSplit make_folds(const std::vector<std::string>& image_ids, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ContractError("make_folds: k must be >= 1");
  if (image_ids.size() < k)
    throw ContractError("make_folds: " + std::to_string(image_ids.size()) + " images cannot fill " +
                        std::to_string(k) + " folds");
  std::vector<std::string> ids = image_ids;
  Rng rng(seed);
  rng.shuffle(ids);
  FoldSplit split{k, std::vector<std::vector<std::string>>(k)};
  const std::size_t base = ids.size() / k, extra = ids.size() % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t n = base + (f < extra ? 1 : 0);
    split.folds[f].assign(ids.begin() + static_cast<std::ptrdiff_t>(pos),
                          ids.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
  }
  return split;
}

CountReport cross_validate(const std::vector<EvalItem>& dataset, std::size_t k, std::uint64_t seed,
                           const TrainFn& train_fn, const std::map<std::string, DetectionSet>& detections,
                           const FusionConfig& fusion) {
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!position.emplace(dataset[i].image_id, i).second)
      throw ValidationError("cross_validate: duplicate image_id '" + dataset[i].image_id + "'");
    ids.push_back(dataset[i].image_id);
  }
  const FoldSplit split = make_folds(ids, k, seed);

  std::vector<std::optional<ImageRecord>> rows(dataset.size());
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<EvalItem> train_set, test_set;
    std::vector<bool> held(dataset.size(), false);
    for (const auto& id : split.folds[f]) held[position.at(id)] = true;
    for (std::size_t i = 0; i < dataset.size(); ++i) (held[i] ? test_set : train_set).push_back(dataset[i]);
    const auto estimator = train_fn(train_set);
    if (!estimator) throw ContractError("cross_validate: train_fn returned no estimator");
    for (auto& r : evaluate(*estimator, test_set, detections, fusion).per_image) {
      rows[position.at(r.image_id)] = std::move(r);
    }
  }
  CountReport report;
  for (auto& r : rows) report.per_image.push_back(std::move(*r));
  std::tie(report.mae, report.mse) = mae_mse(report.per_image);
  return report;
}

Json report_to_json(const CountReport& report) {
  Json rows = Json::array();
  for (const auto& r : report.per_image)
    rows.push_back({{"image_id", r.image_id},
                    {"n_gt", r.n_gt},
                    {"n_d", r.n_d},
                    {"n_e", r.n_e},
                    {"c", r.c},
                    {"abs_err", r.abs_err()}});
  return {{"per_image", rows},
          {"summary",
           {{"images", report.per_image.size()},
            {"mae", report.mae},
            {"mse", report.mse},
            {"rmse", report.rmse()},
            {"mse_definition", "mean of squared count errors (no square root); rmse = sqrt(mse)"}}}};
}

std::string report_to_csv(const CountReport& report) {
  std::ostringstream os;
  os << "image_id,n_gt,n_d,n_e,c,abs_err\n" << std::setprecision(17);
  for (const auto& r : report.per_image)
    os << r.image_id << ',' << r.n_gt << ',' << r.n_d << ',' << r.n_e << ',' << r.c << ',' << r.abs_err() << '\n';
  return os.str();
}

}  // namespace denet
