#pragma once

#include "fsdiff/dataio.hpp"
#include "fsdiff/metrics.hpp"
#include "fsdiff/trainer.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace fsdiff {

struct SweepOptions {
  std::vector<double> lambda2_values;
  std::size_t num_samples = 100;
  std::uint64_t sample_seed = 7;
  std::string distance = "haar-ms";
};

struct SweepRow {
  double lambda2 = 0.0;
  ClusterReport intra;
};

// Adapts `source` once per lambda2 (all other settings from `base`), samples
// num_samples images and scores them against the target set. Rows come back
// in ascending lambda2; duplicate values are rejected.
std::vector<SweepRow> run_lambda2_sweep(const DenoiserParams& source, const Tensor& target, const RunConfig& base,
                                        const SweepOptions& opts,
                                        const std::function<void(const SweepRow&)>& on_row = {});

// {"metric": "intra_cluster_diversity", "distance": ..., "rows": [{"lambda2", "intra_mean", "intra_std",
//  "included_clusters", "member_counts"}]}; undefined means are null.
Json sweep_table_json(const std::vector<SweepRow>& rows, const SweepOptions& opts);

}  // namespace fsdiff
