#include "dje/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "dje/curve.hpp"
#include "dje/distance.hpp"
#include "dje/linalg.hpp"
#include "dje/planner.hpp"

namespace dje {
namespace {

// A one-assignment plan that lays `model_id` over `region`.
AllocationPlan whole_region_plan(const Registry& registry, const std::string& model_id,
                                 const Region& region, int ptime) {
    const ModelRecord record = registry.get(model_id);
    AllocationPlan plan;
    plan.query_region = region;
    plan.ptime = ptime;
    Assignment a;
    a.tile = 0;
    a.region = region;
    a.chosen.model = model_id;
    a.chosen.invocations =
        invocation_count(region, record.manifest.frame_height, record.manifest.frame_width);
    plan.assignments.push_back(std::move(a));
    return plan;
}

// Estimated error of a model against an arbitrary reference series.
double estimate_against(const ModelRecord& record, std::span<const float> reference) {
    const double dist =
        dtw(std::span<const float>(record.training_centroid), reference).cost;
    return estimate_error(record.curve, dist);
}

ExecutionResult average_members(std::vector<ExecutionResult> members,
                                std::vector<std::string> member_ids, const Query& q,
                                const std::string& strategy) {
    ExecutionResult out;
    out.report.strategy = strategy;
    out.prediction.values = STGrid(q.region.height, q.region.width, q.ptime,
                                   q.input.origin_lat(), q.input.origin_lon(),
                                   q.input.cell_size());
    out.prediction.models = std::move(member_ids);
    out.prediction.provenance.assign(
        static_cast<size_t>(q.region.height) * q.region.width, -1);

    std::vector<const STGrid*> ok;
    for (size_t i = 0; i < members.size(); ++i) {
        for (TileExecution te : members[i].report.per_tile) {
            out.report.per_tile.push_back(std::move(te));
        }
        out.report.total_invocations += members[i].report.total_invocations;
        if (members[i].report.complete) {
            ok.push_back(&members[i].prediction.values);
        } else {
            out.report.complete = false;
        }
    }
    if (ok.empty()) throw std::runtime_error("ensemble: every member failed");

    auto& values = out.prediction.values.values();
    for (size_t i = 0; i < values.size(); ++i) {
        double sum = 0.0;
        for (const STGrid* g : ok) sum += g->values()[i];
        values[i] = static_cast<float>(sum / static_cast<double>(ok.size()));
    }
    return out;
}

}  // namespace

ExecutionResult run_single_model(const Registry& registry, const std::string& model_id,
                                 const Query& q) {
    const AllocationPlan plan = whole_region_plan(registry, model_id, q.region, q.ptime);
    ExecutionResult result = execute_plan(plan, registry, q.input);
    result.report.strategy = "single";
    return result;
}

ExecutionResult run_traditional_ensemble(const Registry& registry,
                                         const std::vector<std::string>& model_ids,
                                         const Query& q) {
    if (model_ids.empty()) throw std::invalid_argument("ensemble: no models");
    std::vector<ExecutionResult> members;
    for (const std::string& id : model_ids) members.push_back(run_single_model(registry, id, q));
    ExecutionResult out = average_members(std::move(members), model_ids, q, "ensemble");
    return out;
}

ExecutionResult run_dtw_filtered_ensemble(const Registry& registry,
                                          const std::vector<std::string>& model_ids,
                                          const Query& q, double threshold) {
    if (model_ids.empty()) throw std::invalid_argument("ensemble: no models");
    const auto [mlat, mlon] =
        medoid_point(q.input, q.input.full_region(), 0, q.input.time_count());
    const auto reference = q.input.series(mlat, mlon);

    std::vector<std::string> survivors;
    for (const std::string& id : model_ids) {
        if (estimate_against(registry.get(id), reference) <= threshold) survivors.push_back(id);
    }
    if (survivors.empty()) throw std::runtime_error("no models survive threshold");
    ExecutionResult out = run_traditional_ensemble(registry, survivors, q);
    out.report.strategy = "dtw-ensemble";
    return out;
}

ExecutionResult run_tile_aware_ensemble(const Registry& registry, const Tiling& tiling,
                                        const std::vector<std::string>& model_ids, const Query& q,
                                        double threshold) {
    if (model_ids.empty()) throw std::invalid_argument("ensemble: no models");
    const std::vector<PlannedTile> tiles = query_tiles(q.region, tiling);

    ExecutionResult out;
    out.report.strategy = "tile-ensemble";
    out.prediction.values = STGrid(q.region.height, q.region.width, q.ptime,
                                   q.input.origin_lat(), q.input.origin_lon(),
                                   q.input.cell_size());
    out.prediction.models = model_ids;
    out.prediction.provenance.assign(
        static_cast<size_t>(q.region.height) * q.region.width, -1);

    for (const PlannedTile& tile : tiles) {
        std::vector<std::string> survivors;
        for (const std::string& id : model_ids) {
            const ModelRecord record = registry.get(id);
            if (estimate_against(record, std::span<const float>(tile.centroid)) <= threshold) {
                survivors.push_back(id);
            }
        }
        if (survivors.empty()) {
            throw std::runtime_error("no models survive threshold on tile " +
                                     std::to_string(tile.tile_id));
        }
        // Build a tile-local query and average the survivors over it.
        Query tq;
        tq.region = tile.region;
        tq.ptime = q.ptime;
        const Region local{tile.region.start_lat - q.region.start_lat,
                           tile.region.start_lon - q.region.start_lon, tile.region.height,
                           tile.region.width};
        tq.input = slice(q.input, local, 0, q.input.time_count());

        ExecutionResult piece = run_traditional_ensemble(registry, survivors, tq);
        for (TileExecution te : piece.report.per_tile) {
            te.tile = tile.tile_id;
            out.report.per_tile.push_back(std::move(te));
        }
        out.report.total_invocations += piece.report.total_invocations;
        if (!piece.report.complete) out.report.complete = false;
        for (int t = 0; t < q.ptime; ++t)
            for (int lat = 0; lat < local.height; ++lat)
                for (int lon = 0; lon < local.width; ++lon)
                    out.prediction.values.at(local.start_lat + lat, local.start_lon + lon, t) =
                        piece.prediction.values.at(lat, lon, t);
    }
    return out;
}

StackingWeights fit_stacking(const Registry& registry, const std::vector<std::string>& model_ids,
                             const Query& history_q, const STGrid& history_truth) {
    if (model_ids.empty()) throw std::invalid_argument("stacking: no models");
    if (history_truth.lat_count() != history_q.region.height ||
        history_truth.lon_count() != history_q.region.width ||
        history_truth.time_count() < history_q.ptime) {
        throw std::invalid_argument("stacking: truth shape does not match history window");
    }

    std::vector<STGrid> preds;
    for (const std::string& id : model_ids) {
        ExecutionResult r = run_single_model(registry, id, history_q);
        if (!r.report.complete) throw std::runtime_error("stacking: member failed: " + id);
        preds.push_back(std::move(r.prediction.values));
    }

    // Normal equations over all (cell, step) rows: X = [1, pred_1..pred_m],
    // ridge-damped so collinear members stay solvable.
    const size_t terms = model_ids.size() + 1;
    std::vector<std::vector<double>> ata(terms, std::vector<double>(terms, 0.0));
    std::vector<double> aty(terms, 0.0);
    std::vector<double> row(terms, 1.0);
    for (int lat = 0; lat < history_q.region.height; ++lat) {
        for (int lon = 0; lon < history_q.region.width; ++lon) {
            for (int t = 0; t < history_q.ptime; ++t) {
                for (size_t m = 0; m < preds.size(); ++m) {
                    row[m + 1] = preds[m].at(lat, lon, t);
                }
                const double y = history_truth.at(lat, lon, t);
                for (size_t r = 0; r < terms; ++r) {
                    for (size_t c = 0; c < terms; ++c) ata[r][c] += row[r] * row[c];
                    aty[r] += row[r] * y;
                }
            }
        }
    }
    for (size_t i = 0; i < terms; ++i) ata[i][i] += 1e-6;

    const std::vector<double> beta = solve_dense(std::move(ata), std::move(aty));
    StackingWeights w;
    w.intercept = beta[0];
    for (size_t m = 0; m < model_ids.size(); ++m) {
        if (!std::isfinite(beta[m + 1])) throw std::runtime_error("stacking: non-finite weight");
        w.coefficients.emplace_back(model_ids[m], beta[m + 1]);
    }
    return w;
}

ExecutionResult run_stacking(const Registry& registry, const StackingWeights& weights,
                             const Query& q) {
    if (weights.coefficients.empty()) throw std::invalid_argument("stacking: unfitted weights");

    ExecutionResult out;
    out.report.strategy = "stacking";
    out.prediction.values = STGrid(q.region.height, q.region.width, q.ptime,
                                   q.input.origin_lat(), q.input.origin_lon(),
                                   q.input.cell_size());
    out.prediction.provenance.assign(
        static_cast<size_t>(q.region.height) * q.region.width, -1);
    auto& values = out.prediction.values.values();
    for (float& v : values) v = static_cast<float>(weights.intercept);

    for (const auto& [id, beta] : weights.coefficients) {
        out.prediction.models.push_back(id);
        ExecutionResult r = run_single_model(registry, id, q);
        if (!r.report.complete) throw std::runtime_error("stacking: member failed: " + id);
        for (TileExecution te : r.report.per_tile) out.report.per_tile.push_back(std::move(te));
        out.report.total_invocations += r.report.total_invocations;
        const auto& member = r.prediction.values.values();
        for (size_t i = 0; i < values.size(); ++i) {
            values[i] = static_cast<float>(values[i] + beta * member[i]);
        }
    }
    return out;
}

}  // namespace dje
