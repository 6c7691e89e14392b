#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dje/grid.hpp"
#include "dje/registry.hpp"
#include "dje/tiling.hpp"

namespace dje {

// Costed candidate for one (tile, model) pairing.
struct CandidateCost {
    std::string model;
    int tile = 0;
    double est_error = 0.0;   // learning-curve estimate at the tile's distance
    int invocations = 1;      // frame placements needed to cover the tile
    double exec_est = 0.0;    // invocations * unitary cost, seconds
    double norm_error = 0.0;  // in [0,1] after dividing by the candidate-set max
    double norm_time = 0.0;
    double cost = 0.0;        // (1 - mu_e) * norm_error + mu_e * norm_time
};

struct Assignment {
    int tile = 0;
    Region region;
    CandidateCost chosen;
};

struct AllocationPlan {
    Region query_region;
    int ptime = 1;
    double mu_e = 0.0;
    std::vector<Assignment> assignments;  // one per query tile
    double total_cost = 0.0;
};

// A tile clipped to the query region, keeping its identity and centroid.
struct PlannedTile {
    int tile_id = 0;
    Region region;
    std::vector<float> centroid;
};

// Raw inputs to costing for one (tile, model) pair, before normalization.
struct RawCandidate {
    std::string model;
    double est_error = 0.0;
    int invocations = 1;
    double uc = 0.0;
};

// Intersects the query window with the tiling; the clipped pieces cover the
// window disjointly. Throws if the window leaves the tiled domain.
std::vector<PlannedTile> query_tiles(const Region& query_region, const Tiling& tiling);

// ceil(tile_h / frame_h) * ceil(tile_w / frame_w)
int invocation_count(const Region& tile_region, int frame_height, int frame_width);

// Tukey-fence pruning on (est_error, exec_est) pairs: a candidate is dropped
// when either value strictly exceeds Q3 + k*IQR of its column. Returns the
// indices of the survivors; if the fences would drop everyone, the
// minimum-error candidate is kept.
std::vector<size_t> drop_outlier_models(const std::vector<std::pair<double, double>>& candidates,
                                        double fence_multiplier = 1.5);

// Normalized cost of one candidate. The maxima must be positive (they come
// from the post-pruning candidate set).
CandidateCost cost(double est_error, int invocations, double uc, double mu_e, double max_error,
                   double max_time);

// Greedy per-tile argmin over pruned, normalized candidates. Ties break on
// lower est_error, then model id. Per-tile costs are independent, so this is
// globally optimal.
AllocationPlan allocate(const std::vector<PlannedTile>& tiles,
                        const std::vector<std::vector<RawCandidate>>& candidates, double mu_e,
                        bool global_normalization = false, double tukey_k = 1.5);

// Enumerates every assignment combination; test oracle for allocate().
AllocationPlan exhaustive_allocate(const std::vector<PlannedTile>& tiles,
                                   const std::vector<std::vector<RawCandidate>>& candidates,
                                   double mu_e, bool global_normalization = false,
                                   double tukey_k = 1.5);

struct PlanOptions {
    bool global_normalization = false;  // default scopes maxima per tile
    // When set, clipped-tile centroids are recomputed from this grid instead
    // of inheriting the stored tile medoid.
    const STGrid* recompute_centroids_from = nullptr;
    int dtw_band = -1;       // Sakoe-Chiba band for centroid distances; -1 = unconstrained
    double tukey_k = 1.5;    // outlier fence multiplier
};

// Full pipeline: clip tiles, estimate per-model errors from learning curves
// (DTW distance between model and tile centroids), prune, cost, assign.
AllocationPlan plan(const Query& q, const Tiling& tiling, const Registry& registry, double mu_e,
                    const PlanOptions& options = {});

// Unweighted mean, the cross-tile aggregation used for plan-level scores.
double aggregate_plan_rmse(const std::vector<double>& per_tile_rmse);

std::string plan_to_json(const AllocationPlan& plan);
AllocationPlan plan_from_json(const std::string& text);

}  // namespace dje
