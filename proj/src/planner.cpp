#include "dje/planner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "dje/curve.hpp"
#include "dje/distance.hpp"

namespace dje {
namespace {

using nlohmann::json;

// Linear-interpolation quantile on sorted values (the convention most stats
// packages default to).
double quantile(const std::vector<double>& sorted, double p) {
    const size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = p * static_cast<double>(n - 1);
    const size_t lo = static_cast<size_t>(h);
    if (lo + 1 >= n) return sorted[n - 1];
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double tukey_fence(std::vector<double> values, double k) {
    std::sort(values.begin(), values.end());
    const double q1 = quantile(values, 0.25);
    const double q3 = quantile(values, 0.75);
    return q3 + k * (q3 - q1);
}

struct CostedTile {
    std::vector<CandidateCost> sorted;  // by (cost, est_error, model)
};

// Prunes, normalizes, and costs each tile's candidates. The sorted order
// makes greedy selection index 0 and gives the exhaustive oracle a canonical
// enumeration order.
std::vector<CostedTile> cost_tiles(const std::vector<PlannedTile>& tiles,
                                   const std::vector<std::vector<RawCandidate>>& candidates,
                                   double mu_e, bool global_normalization, double tukey_k) {
    if (tiles.size() != candidates.size()) {
        throw std::invalid_argument("allocate: candidate lists do not match tiles");
    }
    if (mu_e < 0.0 || mu_e > 1.0) throw std::invalid_argument("mu_e must be in [0,1]");

    std::vector<std::vector<size_t>> survivors(tiles.size());
    double global_max_error = 0.0, global_max_time = 0.0;
    for (size_t i = 0; i < tiles.size(); ++i) {
        const auto& cands = candidates[i];
        if (cands.empty()) throw std::invalid_argument("allocate: tile with no candidates");
        std::vector<std::pair<double, double>> pairs;
        for (const RawCandidate& c : cands) {
            if (c.invocations < 1) throw std::invalid_argument("allocate: invocations < 1");
            pairs.emplace_back(c.est_error, c.invocations * c.uc);
        }
        survivors[i] = drop_outlier_models(pairs, tukey_k);
        for (size_t idx : survivors[i]) {
            global_max_error = std::max(global_max_error, pairs[idx].first);
            global_max_time = std::max(global_max_time, pairs[idx].second);
        }
    }

    std::vector<CostedTile> out(tiles.size());
    for (size_t i = 0; i < tiles.size(); ++i) {
        double max_error = 0.0, max_time = 0.0;
        if (global_normalization) {
            max_error = global_max_error;
            max_time = global_max_time;
        } else {
            for (size_t idx : survivors[i]) {
                max_error = std::max(max_error, candidates[i][idx].est_error);
                max_time = std::max(max_time,
                                    candidates[i][idx].invocations * candidates[i][idx].uc);
            }
        }
        // An all-zero column normalizes to zero rather than failing.
        if (max_error <= 0.0) max_error = 1.0;
        if (max_time <= 0.0) max_time = 1.0;

        for (size_t idx : survivors[i]) {
            const RawCandidate& c = candidates[i][idx];
            CandidateCost cc = cost(c.est_error, c.invocations, c.uc, mu_e, max_error, max_time);
            cc.model = c.model;
            cc.tile = tiles[i].tile_id;
            out[i].sorted.push_back(std::move(cc));
        }
        std::sort(out[i].sorted.begin(), out[i].sorted.end(),
                  [](const CandidateCost& a, const CandidateCost& b) {
                      if (a.cost != b.cost) return a.cost < b.cost;
                      if (a.est_error != b.est_error) return a.est_error < b.est_error;
                      return a.model < b.model;
                  });
    }
    return out;
}

Region bounding_region(const std::vector<PlannedTile>& tiles) {
    if (tiles.empty()) return Region{};
    int lat0 = tiles[0].region.start_lat, lon0 = tiles[0].region.start_lon;
    int lat1 = tiles[0].region.end_lat(), lon1 = tiles[0].region.end_lon();
    for (const PlannedTile& t : tiles) {
        lat0 = std::min(lat0, t.region.start_lat);
        lon0 = std::min(lon0, t.region.start_lon);
        lat1 = std::max(lat1, t.region.end_lat());
        lon1 = std::max(lon1, t.region.end_lon());
    }
    return Region{lat0, lon0, lat1 - lat0, lon1 - lon0};
}

}  // namespace

std::vector<PlannedTile> query_tiles(const Region& query_region, const Tiling& tiling) {
    const Region domain{0, 0, tiling.lat_count, tiling.lon_count};
    if (query_region.height < 1 || query_region.width < 1 || !domain.contains(query_region)) {
        throw std::out_of_range("query region outside tiled domain");
    }
    std::vector<PlannedTile> out;
    for (const Tile& t : tiling.tiles) {
        const Region clip = intersect(t.region, query_region);
        if (clip.area() == 0) continue;
        out.push_back(PlannedTile{t.id, clip, t.centroid_series});
    }
    return out;
}

int invocation_count(const Region& tile_region, int frame_height, int frame_width) {
    if (frame_height < 1 || frame_width < 1 || tile_region.height < 1 || tile_region.width < 1) {
        throw std::invalid_argument("invocation_count: dims must be >= 1");
    }
    const int rows = (tile_region.height + frame_height - 1) / frame_height;
    const int cols = (tile_region.width + frame_width - 1) / frame_width;
    return rows * cols;
}

std::vector<size_t> drop_outlier_models(const std::vector<std::pair<double, double>>& candidates,
                                        double fence_multiplier) {
    if (candidates.empty()) throw std::invalid_argument("drop_outlier_models: empty set");
    if (!(fence_multiplier >= 0.0)) {
        throw std::invalid_argument("drop_outlier_models: fence multiplier must be >= 0");
    }
    std::vector<double> errors, times;
    for (const auto& [e, t] : candidates) {
        errors.push_back(e);
        times.push_back(t);
    }
    const double error_fence = tukey_fence(errors, fence_multiplier);
    const double time_fence = tukey_fence(times, fence_multiplier);
    std::vector<size_t> keep;
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].first <= error_fence && candidates[i].second <= time_fence) {
            keep.push_back(i);
        }
    }
    if (keep.empty()) {
        size_t best = 0;
        for (size_t i = 1; i < candidates.size(); ++i) {
            if (candidates[i].first < candidates[best].first) best = i;
        }
        keep.push_back(best);
    }
    return keep;
}

CandidateCost cost(double est_error, int invocations, double uc, double mu_e, double max_error,
                   double max_time) {
    if (!(max_error > 0.0) || !(max_time > 0.0)) {
        throw std::invalid_argument("cost: maxima must be positive");
    }
    if (invocations < 1) throw std::invalid_argument("cost: invocations must be >= 1");
    if (mu_e < 0.0 || mu_e > 1.0) throw std::invalid_argument("cost: mu_e must be in [0,1]");
    CandidateCost cc;
    cc.est_error = est_error;
    cc.invocations = invocations;
    cc.exec_est = invocations * uc;
    cc.norm_error = est_error / max_error;
    cc.norm_time = cc.exec_est / max_time;
    cc.cost = (1.0 - mu_e) * cc.norm_error + mu_e * cc.norm_time;
    return cc;
}

AllocationPlan allocate(const std::vector<PlannedTile>& tiles,
                        const std::vector<std::vector<RawCandidate>>& candidates, double mu_e,
                        bool global_normalization, double tukey_k) {
    if (tiles.empty()) throw std::invalid_argument("allocate: no tiles");
    const auto costed = cost_tiles(tiles, candidates, mu_e, global_normalization, tukey_k);
    AllocationPlan plan;
    plan.mu_e = mu_e;
    plan.query_region = bounding_region(tiles);
    plan.total_cost = 0.0;
    for (size_t i = 0; i < tiles.size(); ++i) {
        Assignment a;
        a.tile = tiles[i].tile_id;
        a.region = tiles[i].region;
        a.chosen = costed[i].sorted.front();
        plan.total_cost += a.chosen.cost;
        plan.assignments.push_back(std::move(a));
    }
    return plan;
}

AllocationPlan exhaustive_allocate(const std::vector<PlannedTile>& tiles,
                                   const std::vector<std::vector<RawCandidate>>& candidates,
                                   double mu_e, bool global_normalization, double tukey_k) {
    if (tiles.empty()) throw std::invalid_argument("allocate: no tiles");
    const auto costed = cost_tiles(tiles, candidates, mu_e, global_normalization, tukey_k);
    const size_t n = tiles.size();

    std::vector<size_t> combo(n, 0), best_combo(n, 0);
    auto total_of = [&](const std::vector<size_t>& idx) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) total += costed[i].sorted[idx[i]].cost;
        return total;
    };
    double best_total = total_of(best_combo);
    for (;;) {
        // advance the combination counter
        size_t pos = 0;
        while (pos < n) {
            if (++combo[pos] < costed[pos].sorted.size()) break;
            combo[pos] = 0;
            ++pos;
        }
        if (pos == n) break;
        const double total = total_of(combo);
        if (total < best_total) {
            best_total = total;
            best_combo = combo;
        }
    }

    AllocationPlan plan;
    plan.mu_e = mu_e;
    plan.query_region = bounding_region(tiles);
    plan.total_cost = best_total;
    for (size_t i = 0; i < n; ++i) {
        Assignment a;
        a.tile = tiles[i].tile_id;
        a.region = tiles[i].region;
        a.chosen = costed[i].sorted[best_combo[i]];
        plan.assignments.push_back(std::move(a));
    }
    return plan;
}

AllocationPlan plan(const Query& q, const Tiling& tiling, const Registry& registry, double mu_e,
                    const PlanOptions& options) {
    std::vector<PlannedTile> tiles = query_tiles(q.region, tiling);
    if (options.recompute_centroids_from) {
        const STGrid& grid = *options.recompute_centroids_from;
        for (PlannedTile& t : tiles) {
            const auto [mlat, mlon] = medoid_point(grid, t.region, 0, grid.time_count());
            const auto s = grid.series(mlat, mlon);
            t.centroid.assign(s.begin(), s.end());
        }
    }

    std::vector<ModelRecord> models;
    for (const std::string& id : registry.ids()) {
        ModelRecord rec = registry.get(id);
        if (rec.planner_eligible()) models.push_back(std::move(rec));
    }
    if (models.empty()) throw std::runtime_error("plan: no eligible models");

    // Candidate preparation per tile is independent; the DTW distances
    // dominate, so tiles are processed in parallel.
    std::vector<std::vector<RawCandidate>> candidates(tiles.size());
    std::vector<std::future<void>> futures;
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= tiles.size()) return;
            for (const ModelRecord& m : models) {
                RawCandidate c;
                c.model = m.manifest.id;
                DtwOptions dopts;
                dopts.band = options.dtw_band;
                const double dist =
                    dtw(std::span<const float>(m.training_centroid),
                        std::span<const float>(tiles[i].centroid), dopts)
                        .cost;
                c.est_error = estimate_error(m.curve, dist);
                c.invocations =
                    invocation_count(tiles[i].region, m.manifest.frame_height,
                                     m.manifest.frame_width);
                c.uc = m.unitary_cost;
                candidates[i].push_back(std::move(c));
            }
        }
    };
    const unsigned workers = std::max(1u, std::min(std::thread::hardware_concurrency(),
                                                   static_cast<unsigned>(tiles.size())));
    for (unsigned w = 0; w < workers; ++w) {
        futures.push_back(std::async(std::launch::async, worker));
    }
    for (auto& f : futures) f.get();

    AllocationPlan result =
        allocate(tiles, candidates, mu_e, options.global_normalization, options.tukey_k);
    result.query_region = q.region;
    result.ptime = q.ptime;
    return result;
}

double aggregate_plan_rmse(const std::vector<double>& per_tile_rmse) {
    if (per_tile_rmse.empty()) throw std::invalid_argument("aggregate_plan_rmse: empty");
    double sum = 0.0;
    for (double v : per_tile_rmse) sum += v;
    return sum / static_cast<double>(per_tile_rmse.size());
}

std::string plan_to_json(const AllocationPlan& plan) {
    json doc;
    doc["query"] = {{"region",
                     {plan.query_region.start_lat, plan.query_region.start_lon,
                      plan.query_region.height, plan.query_region.width}},
                    {"ptime", plan.ptime}};
    doc["mu_e"] = plan.mu_e;
    doc["total_cost"] = plan.total_cost;
    doc["assignments"] = json::array();
    for (const Assignment& a : plan.assignments) {
        json ja;
        ja["tile"] = a.tile;
        ja["region"] = {a.region.start_lat, a.region.start_lon, a.region.height, a.region.width};
        ja["model"] = a.chosen.model;
        ja["est_error"] = a.chosen.est_error;
        ja["invocations"] = a.chosen.invocations;
        ja["exec_est"] = a.chosen.exec_est;
        ja["cost"] = a.chosen.cost;
        doc["assignments"].push_back(std::move(ja));
    }
    return doc.dump(2);
}

AllocationPlan plan_from_json(const std::string& text) {
    const json doc = json::parse(text);
    AllocationPlan plan;
    const auto qr = doc.at("query").at("region").get<std::vector<int>>();
    if (qr.size() != 4) throw std::invalid_argument("plan json: region must be [lat,lon,h,w]");
    plan.query_region = Region{qr[0], qr[1], qr[2], qr[3]};
    plan.ptime = doc.at("query").at("ptime").get<int>();
    plan.mu_e = doc.at("mu_e").get<double>();
    plan.total_cost = doc.at("total_cost").get<double>();
    for (const json& ja : doc.at("assignments")) {
        Assignment a;
        a.tile = ja.at("tile").get<int>();
        const auto r = ja.at("region").get<std::vector<int>>();
        if (r.size() != 4) throw std::invalid_argument("plan json: region must be [lat,lon,h,w]");
        a.region = Region{r[0], r[1], r[2], r[3]};
        a.chosen.model = ja.at("model").get<std::string>();
        a.chosen.tile = a.tile;
        a.chosen.est_error = ja.at("est_error").get<double>();
        a.chosen.invocations = ja.at("invocations").get<int>();
        a.chosen.exec_est = ja.at("exec_est").get<double>();
        a.chosen.cost = ja.at("cost").get<double>();
        plan.assignments.push_back(std::move(a));
    }
    return plan;
}

}  // namespace dje
