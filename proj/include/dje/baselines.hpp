#pragma once

#include <string>
#include <vector>

#include "dje/executor.hpp"
#include "dje/grid.hpp"
#include "dje/registry.hpp"
#include "dje/tiling.hpp"

namespace dje {

// One model covers the whole query window (frame placements as usual).
ExecutionResult run_single_model(const Registry& registry, const std::string& model_id,
                                 const Query& q);

// Every member covers the whole query; per-cell unweighted mean. Members
// whose backend fails are excluded from the mean and flag the report
// incomplete; all members failing is an error.
ExecutionResult run_traditional_ensemble(const Registry& registry,
                                         const std::vector<std::string>& model_ids,
                                         const Query& q);

// Traditional ensemble restricted to models whose estimated error at the
// query window (learning curve at the DTW distance between model centroid
// and the query input's medoid series) is within the threshold.
ExecutionResult run_dtw_filtered_ensemble(const Registry& registry,
                                          const std::vector<std::string>& model_ids,
                                          const Query& q, double threshold);

// Per query tile: filter members by the tile-level error estimate, then
// average the survivors over that tile only.
ExecutionResult run_tile_aware_ensemble(const Registry& registry, const Tiling& tiling,
                                        const std::vector<std::string>& model_ids, const Query& q,
                                        double threshold);

// Second-level linear blend y ~ b0 + sum_m b_m * pred_m, fit per-cell-pooled
// on a pre-query window by ridge-damped least squares.
struct StackingWeights {
    double intercept = 0.0;
    std::vector<std::pair<std::string, double>> coefficients;  // (model id, weight)
};

// history_q supplies the fit window: its input frames produce each member's
// predictions and history_truth holds the actual values for the same window
// (extent = history_q.region, time_count >= history_q.ptime).
StackingWeights fit_stacking(const Registry& registry, const std::vector<std::string>& model_ids,
                             const Query& history_q, const STGrid& history_truth);

ExecutionResult run_stacking(const Registry& registry, const StackingWeights& weights,
                             const Query& q);

}  // namespace dje
