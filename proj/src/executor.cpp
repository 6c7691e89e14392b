#include "dje/executor.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

namespace dje {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

int clamp_int(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Input frames for one instance window, replication-padded wherever the
// window leaves the input grid.
FrameBatch padded_batch(const STGrid& input, const Region& query, const Region& instance,
                        int n_frames) {
    FrameBatch batch;
    batch.height = instance.height;
    batch.width = instance.width;
    const int t_base = input.time_count() - n_frames;
    batch.frames.assign(static_cast<size_t>(n_frames),
                        std::vector<float>(static_cast<size_t>(instance.height) * instance.width));
    for (int f = 0; f < n_frames; ++f) {
        auto& frame = batch.frames[static_cast<size_t>(f)];
        for (int lat = 0; lat < instance.height; ++lat) {
            const int src_lat =
                clamp_int(instance.start_lat + lat - query.start_lat, 0, input.lat_count() - 1);
            for (int lon = 0; lon < instance.width; ++lon) {
                const int src_lon = clamp_int(instance.start_lon + lon - query.start_lon, 0,
                                              input.lon_count() - 1);
                frame[static_cast<size_t>(lat) * instance.width + lon] =
                    input.at(src_lat, src_lon, t_base + f);
            }
        }
    }
    return batch;
}

}  // namespace

std::vector<Placement> placements(const Region& tile, int frame_height, int frame_width) {
    if (frame_height < 1 || frame_width < 1 || tile.height < 1 || tile.width < 1) {
        throw std::invalid_argument("placements: dims must be >= 1");
    }
    std::vector<Placement> out;
    for (int lat = tile.start_lat; lat < tile.end_lat(); lat += frame_height) {
        for (int lon = tile.start_lon; lon < tile.end_lon(); lon += frame_width) {
            Placement p;
            p.instance = Region{lat, lon, frame_height, frame_width};
            p.clip = intersect(p.instance, tile);
            out.push_back(p);
        }
    }
    return out;
}

ExecutionResult execute_plan(const AllocationPlan& plan, const Registry& registry,
                             const STGrid& input, const STGrid* truth) {
    const Region& query = plan.query_region;
    if (plan.assignments.empty()) throw std::invalid_argument("execute_plan: empty plan");
    if (plan.ptime < 1) throw std::invalid_argument("execute_plan: ptime must be >= 1");
    if (input.lat_count() != query.height || input.lon_count() != query.width) {
        throw std::invalid_argument("execute_plan: input extent does not match query region");
    }
    if (truth && (truth->lat_count() != query.height || truth->lon_count() != query.width ||
                  truth->time_count() < plan.ptime)) {
        throw std::invalid_argument("execute_plan: truth shape does not match");
    }

    // The disjoint-coverage invariant is checked up front so the parallel
    // writers below never contend for a cell.
    {
        std::vector<int> cover(static_cast<size_t>(query.height) * query.width, 0);
        for (const Assignment& a : plan.assignments) {
            if (!query.contains(a.region)) {
                throw std::invalid_argument("execute_plan: assignment outside query region");
            }
            for (int lat = a.region.start_lat; lat < a.region.end_lat(); ++lat)
                for (int lon = a.region.start_lon; lon < a.region.end_lon(); ++lon)
                    cover[static_cast<size_t>(lat - query.start_lat) * query.width +
                          (lon - query.start_lon)]++;
        }
        for (int c : cover) {
            if (c == 0) throw std::invalid_argument("execute_plan: plan does not cover query");
            if (c > 1) throw std::invalid_argument("execute_plan: overlapping assignments");
        }
    }

    ExecutionResult result;
    result.prediction.values = STGrid(query.height, query.width, plan.ptime,
                                      input.origin_lat(), input.origin_lon(), input.cell_size());
    for (float& v : result.prediction.values.values()) {
        v = std::numeric_limits<float>::quiet_NaN();
    }
    result.prediction.provenance.assign(static_cast<size_t>(query.height) * query.width, -1);
    for (const Assignment& a : plan.assignments) {
        result.prediction.models.push_back(a.chosen.model);
    }
    result.report.per_tile.resize(plan.assignments.size());

    const auto wall0 = Clock::now();
    std::atomic<size_t> next{0};
    auto run_tile = [&](size_t i) {
        const Assignment& a = plan.assignments[i];
        TileExecution& te = result.report.per_tile[i];
        te.tile = a.tile;
        te.model = a.chosen.model;
        const auto t0 = Clock::now();
        try {
            const ModelRecord record = registry.get(a.chosen.model);
            const int n = record.manifest.input_frames;
            if (input.time_count() < n) {
                throw std::runtime_error("input holds fewer frames than the model needs");
            }
            for (const Placement& p :
                 placements(a.region, record.manifest.frame_height, record.manifest.frame_width)) {
                FrameBatch window = padded_batch(input, query, p.instance, n);
                std::vector<std::vector<float>> produced;
                while (static_cast<int>(produced.size()) < plan.ptime) {
                    FrameBatch pred = registry.predict(a.chosen.model, window);
                    ++te.invocations;
                    for (auto& frame : pred.frames) {
                        window.frames.push_back(frame);
                        produced.push_back(std::move(frame));
                    }
                    // keep the trailing n frames as the next rollout input
                    window.frames.erase(window.frames.begin(),
                                        window.frames.end() - static_cast<long>(n));
                }
                for (int t = 0; t < plan.ptime; ++t) {
                    const auto& frame = produced[static_cast<size_t>(t)];
                    for (int lat = p.clip.start_lat; lat < p.clip.end_lat(); ++lat) {
                        for (int lon = p.clip.start_lon; lon < p.clip.end_lon(); ++lon) {
                            const float v =
                                frame[static_cast<size_t>(lat - p.instance.start_lat) *
                                          p.instance.width +
                                      (lon - p.instance.start_lon)];
                            result.prediction.values.at(lat - query.start_lat,
                                                        lon - query.start_lon, t) = v;
                        }
                    }
                }
            }
            for (int lat = a.region.start_lat; lat < a.region.end_lat(); ++lat)
                for (int lon = a.region.start_lon; lon < a.region.end_lon(); ++lon)
                    result.prediction.provenance[static_cast<size_t>(lat - query.start_lat) *
                                                     query.width +
                                                 (lon - query.start_lon)] = static_cast<int>(i);
            if (truth) {
                double sq = 0.0;
                long long count = 0;
                for (int t = 0; t < plan.ptime; ++t) {
                    for (int lat = a.region.start_lat; lat < a.region.end_lat(); ++lat) {
                        for (int lon = a.region.start_lon; lon < a.region.end_lon(); ++lon) {
                            const double d =
                                static_cast<double>(result.prediction.values.at(
                                    lat - query.start_lat, lon - query.start_lon, t)) -
                                truth->at(lat - query.start_lat, lon - query.start_lon, t);
                            sq += d * d;
                            ++count;
                        }
                    }
                }
                te.rmse = std::sqrt(sq / static_cast<double>(count));
                te.has_rmse = true;
            }
        } catch (const std::exception& ex) {
            te.failed = true;
            te.error = ex.what();
        }
        te.elapsed_s = std::chrono::duration<double>(Clock::now() - t0).count();
    };

    const size_t tiles = plan.assignments.size();
    const unsigned workers = std::max(
        1u, std::min(std::thread::hardware_concurrency(), static_cast<unsigned>(tiles)));
    std::vector<std::future<void>> futures;
    for (unsigned w = 0; w < workers; ++w) {
        futures.push_back(std::async(std::launch::async, [&]() {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= tiles) return;
                run_tile(i);
            }
        }));
    }
    for (auto& f : futures) f.get();

    result.report.total_elapsed_s = std::chrono::duration<double>(Clock::now() - wall0).count();
    for (const TileExecution& te : result.report.per_tile) {
        result.report.total_invocations += te.invocations;
        if (te.failed) result.report.complete = false;
    }
    return result;
}

double rmse(const STGrid& a, const STGrid& b) {
    if (a.lat_count() != b.lat_count() || a.lon_count() != b.lon_count() ||
        a.time_count() != b.time_count()) {
        throw std::invalid_argument("rmse: shape mismatch");
    }
    double sq = 0.0;
    const auto& va = a.values();
    const auto& vb = b.values();
    for (size_t i = 0; i < va.size(); ++i) {
        const double d = static_cast<double>(va[i]) - vb[i];
        sq += d * d;
    }
    return std::sqrt(sq / static_cast<double>(va.size()));
}

std::string report_to_json(const ExecutionReport& report) {
    json doc;
    doc["strategy"] = report.strategy;
    doc["per_tile"] = json::array();
    for (const TileExecution& te : report.per_tile) {
        json jt;
        jt["tile"] = te.tile;
        jt["model"] = te.model;
        jt["invocations"] = te.invocations;
        jt["elapsed_s"] = te.elapsed_s;
        if (te.failed) jt["error"] = te.error;
        if (te.has_rmse) jt["rmse"] = te.rmse;
        doc["per_tile"].push_back(std::move(jt));
    }
    doc["total_elapsed_s"] = report.total_elapsed_s;
    doc["total_invocations"] = report.total_invocations;
    doc["complete"] = report.complete;
    return doc.dump(2);
}

}  // namespace dje
