#include "fsdiff/sweep.hpp"

#include <algorithm>
#include <stdexcept>

namespace fsdiff {

std::vector<SweepRow> run_lambda2_sweep(const DenoiserParams& source, const Tensor& target, const RunConfig& base,
                                        const SweepOptions& opts, const std::function<void(const SweepRow&)>& on_row) {
  if (opts.lambda2_values.empty()) throw std::invalid_argument("sweep: no lambda2 values");
  std::vector<double> values = opts.lambda2_values;
  std::sort(values.begin(), values.end());
  if (std::adjacent_find(values.begin(), values.end()) != values.end())
    throw std::invalid_argument("sweep: duplicate lambda2 values");
  const auto dist = make_distance(opts.distance);
  const std::vector<Tensor> training = unstack(target);

  std::vector<SweepRow> rows;
  for (double l2 : values) {
    RunConfig cfg = base;
    cfg.train.weights.lambda2 = l2;
    const TrainResult r = adapt(source, target, cfg);
    const Tensor samples = sample_images(r.params, cfg, opts.num_samples, opts.sample_seed);
    const std::vector<Tensor> gen = unstack(samples);
    rows.push_back({l2, intra_cluster_diversity(gen, training, *dist)});
    if (on_row) on_row(rows.back());
  }
  return rows;
}

Json sweep_table_json(const std::vector<SweepRow>& rows, const SweepOptions& opts) {
  Json table = Json::array();
  for (const auto& r : rows) {
    Json row{{"lambda2", r.lambda2},
             {"included_clusters", r.intra.included_clusters},
             {"member_counts", r.intra.member_counts}};
    row["intra_mean"] = r.intra.overall_mean ? Json(*r.intra.overall_mean) : Json(nullptr);
    row["intra_std"] = r.intra.std_dev ? Json(*r.intra.std_dev) : Json(nullptr);
    table.push_back(std::move(row));
  }
  return Json{{"metric", "intra_cluster_diversity"},
              {"distance", opts.distance},
              {"num_samples", opts.num_samples},
              {"rows", std::move(table)}};
}

}  // namespace fsdiff
