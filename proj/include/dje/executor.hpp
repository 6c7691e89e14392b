#pragma once

#include <string>
#include <vector>

#include "dje/grid.hpp"
#include "dje/planner.hpp"
#include "dje/registry.hpp"

namespace dje {

// One model instance dropped onto the grid. The instance window is
// frame-sized and may stick out past the tile (and the domain); only the
// clip window is written back.
struct Placement {
    Region instance;
    Region clip;
};

// Model frames laid over a tile starting at its top-left corner, stepping by
// the frame size. Count equals invocation_count(tile, frame).
std::vector<Placement> placements(const Region& tile, int frame_height, int frame_width);

// Prediction over a query window plus a per-cell record of which model wrote
// each cell (index into `models`, -1 where no placement succeeded).
struct PredictionGrid {
    STGrid values;  // extent = query region, time_count = ptime
    std::vector<std::string> models;
    std::vector<int> provenance;  // height * width entries

    int provenance_at(int lat, int lon) const {
        return provenance[static_cast<size_t>(lat) * values.lon_count() + lon];
    }
};

struct TileExecution {
    int tile = 0;
    std::string model;
    int invocations = 0;  // predict calls, rollout rounds included
    double elapsed_s = 0.0;
    bool failed = false;
    std::string error;
    double rmse = 0.0;  // vs truth when supplied, else 0
    bool has_rmse = false;
};

struct ExecutionReport {
    std::string strategy = "djensemble";
    std::vector<TileExecution> per_tile;
    double total_elapsed_s = 0.0;
    long long total_invocations = 0;
    bool complete = true;  // false when any placement failed
};

struct ExecutionResult {
    PredictionGrid prediction;
    ExecutionReport report;
};

// Runs every assignment of the plan: builds replication-padded input frames
// per placement, invokes the model, rolls out autoregressively until ptime
// steps exist, and writes clipped outputs. The input grid must cover the
// query region spatially and hold at least each model's n trailing frames.
// Backend failures fail their tile and leave the report marked incomplete.
ExecutionResult execute_plan(const AllocationPlan& plan, const Registry& registry,
                             const STGrid& input, const STGrid* truth = nullptr);

// Root mean squared difference over all cells and steps; shapes must match.
double rmse(const STGrid& a, const STGrid& b);

std::string report_to_json(const ExecutionReport& report);

}  // namespace dje
