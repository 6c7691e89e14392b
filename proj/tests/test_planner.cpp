#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dje/curve.hpp"
#include "dje/planner.hpp"
#include "dje/registry.hpp"
#include "dje/tiling.hpp"

using dje::allocate;
using dje::AllocationPlan;
using dje::aggregate_plan_rmse;
using dje::CandidateCost;
using dje::cost;
using dje::drop_outlier_models;
using dje::exhaustive_allocate;
using dje::invocation_count;
using dje::ModelManifest;
using dje::PlannedTile;
using dje::query_tiles;
using dje::RawCandidate;
using dje::Region;
using dje::Registry;
using dje::STGrid;
using dje::Tile;
using dje::Tiling;

namespace {

PlannedTile pt(int id, Region r) { return PlannedTile{id, r, {}}; }

RawCandidate raw(std::string model, double err, int inv, double uc) {
    return RawCandidate{std::move(model), err, inv, uc};
}

Tiling two_column_tiling(const std::vector<float>& left_centroid,
                         const std::vector<float>& right_centroid) {
    Tiling tiling;
    tiling.lat_count = 4;
    tiling.lon_count = 4;
    tiling.tiles.push_back(Tile{0, Region{0, 0, 4, 2}, 0, 0, 0, left_centroid});
    tiling.tiles.push_back(Tile{1, Region{0, 2, 4, 2}, 1, 0, 2, right_centroid});
    return tiling;
}

STGrid constant_grid(int lat, int lon, int t, float value) {
    STGrid g(lat, lon, t);
    for (float& v : g.values()) v = value;
    return g;
}

// Registers a persistence model trained on a constant grid (so its centroid
// is a constant series) and equips it with a distance->error curve and a
// unitary cost, making it eligible for planning.
void add_model(Registry& reg, const std::string& id, float level, double err_intercept,
               double err_slope, double uc) {
    ModelManifest m;
    m.id = id;
    m.training_region = Region{0, 0, 2, 2};
    m.t0 = 0;
    m.t_len = 6;
    m.frame_height = 2;
    m.frame_width = 2;
    m.input_frames = 1;
    m.output_frames = 1;
    m.backend = "builtin:persistence";
    reg.register_model(m, constant_grid(2, 2, 6, level));
    std::vector<std::pair<double, double>> points;
    for (int i = 0; i < 6; ++i) points.emplace_back(10.0 * i, err_intercept + err_slope * 10.0 * i);
    reg.set_curve(id, dje::fit_curve(points, err_intercept));
    reg.set_unitary_cost(id, uc);
}

struct RandomInstance {
    std::vector<PlannedTile> tiles;
    std::vector<std::vector<RawCandidate>> candidates;
    double mu_e = 0.0;
};

RandomInstance random_instance(std::mt19937& rng) {
    std::uniform_int_distribution<int> tile_count(1, 4), model_count(1, 5), dim(1, 8),
        invocations(1, 9);
    std::uniform_real_distribution<double> err(0.0, 10.0), uc(0.0, 0.5), mu(0.0, 1.0);
    RandomInstance inst;
    const int nt = tile_count(rng), nm = model_count(rng);
    for (int t = 0; t < nt; ++t) {
        inst.tiles.push_back(pt(t, Region{t * 10, 0, dim(rng), dim(rng)}));
        std::vector<RawCandidate> cands;
        for (int m = 0; m < nm; ++m) {
            cands.push_back(raw("m" + std::to_string(m), err(rng), invocations(rng), uc(rng)));
        }
        inst.candidates.push_back(std::move(cands));
    }
    inst.mu_e = mu(rng);
    return inst;
}

}  // namespace

TEST_CASE("invocation count is the ceiling grid of frames over the tile") {
    CHECK(invocation_count(Region{0, 0, 10, 40}, 10, 10) == 4);
    CHECK(invocation_count(Region{0, 0, 8, 30}, 10, 20) == 2);
    CHECK(invocation_count(Region{0, 0, 2, 30}, 10, 10) == 3);
    CHECK(invocation_count(Region{5, 7, 1, 1}, 5, 5) == 1);
    CHECK(invocation_count(Region{0, 0, 11, 11}, 10, 10) == 4);
    CHECK_THROWS_AS(invocation_count(Region{0, 0, 10, 10}, 0, 10), std::invalid_argument);
    CHECK_THROWS_AS(invocation_count(Region{0, 0, 0, 10}, 10, 10), std::invalid_argument);
}

TEST_CASE("whole-domain queries return every tile unchanged") {
    const Tiling tiling = two_column_tiling({1.0f, 2.0f}, {3.0f, 4.0f});
    const auto clipped = query_tiles(Region{0, 0, 4, 4}, tiling);
    REQUIRE(clipped.size() == 2);
    for (size_t i = 0; i < clipped.size(); ++i) {
        CHECK(clipped[i].tile_id == tiling.tiles[i].id);
        CHECK(clipped[i].region == tiling.tiles[i].region);
        CHECK(clipped[i].centroid == tiling.tiles[i].centroid_series);
    }
}

TEST_CASE("a query inside one tile yields exactly that clipped piece") {
    const Tiling tiling = two_column_tiling({1.0f}, {2.0f});
    const Region q{1, 0, 2, 1};
    const auto clipped = query_tiles(q, tiling);
    REQUIRE(clipped.size() == 1);
    CHECK(clipped[0].tile_id == 0);
    CHECK(clipped[0].region == q);
    CHECK(clipped[0].centroid == std::vector<float>{1.0f});
}

TEST_CASE("queries outside the tiled domain are rejected") {
    const Tiling tiling = two_column_tiling({}, {});
    CHECK_THROWS_AS(query_tiles(Region{0, 0, 5, 4}, tiling), std::out_of_range);
    CHECK_THROWS_AS(query_tiles(Region{-1, 0, 2, 2}, tiling), std::out_of_range);
    CHECK_THROWS_AS(query_tiles(Region{0, 0, 0, 2}, tiling), std::out_of_range);
}

TEST_CASE("random queries over random tilings clip to a disjoint cover") {
    std::mt19937 rng(404);
    std::uniform_int_distribution<int> dim(3, 12), cid(0, 3);
    for (int trial = 0; trial < 50; ++trial) {
        dje::ClusterMap map;
        map.lat_count = dim(rng);
        map.lon_count = dim(rng);
        map.k = 4;
        for (int i = 0; i < map.lat_count * map.lon_count; ++i) map.cid.push_back(cid(rng));
        STGrid grid(map.lat_count, map.lon_count, 4);
        std::uniform_real_distribution<float> val(-1.0f, 1.0f);
        for (float& v : grid.values()) v = val(rng);
        const Tiling tiling = dje::build_tiling(map, grid);

        std::uniform_int_distribution<int> lat0(0, map.lat_count - 1), lon0(0, map.lon_count - 1);
        const int qlat = lat0(rng), qlon = lon0(rng);
        std::uniform_int_distribution<int> qh(1, map.lat_count - qlat), qw(1, map.lon_count - qlon);
        const Region query{qlat, qlon, qh(rng), qw(rng)};

        const auto clipped = query_tiles(query, tiling);
        std::vector<int> cover(static_cast<size_t>(query.height) * query.width, 0);
        for (const PlannedTile& piece : clipped) {
            CHECK(query.contains(piece.region));
            const Tile& original = tiling.tiles[static_cast<size_t>(piece.tile_id)];
            CHECK(original.id == piece.tile_id);
            CHECK(piece.region == dje::intersect(original.region, query));
            for (int lat = piece.region.start_lat; lat < piece.region.end_lat(); ++lat)
                for (int lon = piece.region.start_lon; lon < piece.region.end_lon(); ++lon)
                    cover[static_cast<size_t>(lat - query.start_lat) * query.width +
                          (lon - query.start_lon)]++;
        }
        for (int c : cover) CHECK(c == 1);
    }
}

TEST_CASE("tukey fences only fire on minority outliers") {
    // half the column sitting near 80 drags Q3 into the large values, so the
    // fence keeps everything
    const std::vector<std::pair<double, double>> balanced = {
        {3.61, 1.0}, {80.0, 1.0}, {3.2, 1.0}, {81.0, 1.0}, {2.1, 1.0}, {79.0, 1.0}};
    CHECK(drop_outlier_models(balanced).size() == 6);

    // a single far value against a tight majority is dropped
    const std::vector<std::pair<double, double>> skewed = {
        {2.1, 1.0}, {2.3, 1.0}, {2.5, 1.0}, {2.8, 1.0}, {80.0, 1.0}};
    CHECK(drop_outlier_models(skewed) == std::vector<size_t>{0, 1, 2, 3});
}

TEST_CASE("outlier pruning handles degenerate candidate sets") {
    CHECK(drop_outlier_models({{5.0, 1.0}, {5.0, 1.0}, {5.0, 1.0}}) ==
          std::vector<size_t>{0, 1, 2});
    CHECK(drop_outlier_models({{7.0, 3.0}}) == std::vector<size_t>{0});
    CHECK_THROWS_AS(drop_outlier_models({}), std::invalid_argument);
    CHECK_THROWS_AS(drop_outlier_models({{1.0, 1.0}}, -1.0), std::invalid_argument);
}

TEST_CASE("error and time columns are fenced independently") {
    const std::vector<std::pair<double, double>> slow_one = {
        {1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}, {1.0, 50.0}};
    CHECK(drop_outlier_models(slow_one) == std::vector<size_t>{0, 1, 2, 3});

    // with a zero fence multiplier the two columns flag complementary halves;
    // the emptied set falls back to the minimum-error candidate
    CHECK(drop_outlier_models({{1.0, 2.0}, {2.0, 1.0}}, 0.0) == std::vector<size_t>{0});
}

TEST_CASE("candidate cost follows the normalized two-term form") {
    const CandidateCost cc = cost(2.0, 2, 0.5, 0.4, 4.0, 2.0);
    CHECK(cc.exec_est == 1.0);
    CHECK(cc.norm_error == 0.5);
    CHECK(cc.norm_time == 0.5);
    CHECK(cc.cost == doctest::Approx(0.5));

    CHECK(cost(3.0, 1, 0.25, 0.0, 6.0, 1.0).cost == doctest::Approx(0.5));   // pure error
    CHECK(cost(3.0, 4, 0.25, 1.0, 6.0, 2.0).cost == doctest::Approx(0.5));   // pure time

    CHECK_THROWS_AS(cost(1.0, 1, 0.1, 0.5, 0.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(cost(1.0, 1, 0.1, 0.5, 1.0, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(cost(1.0, 0, 0.1, 0.5, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(cost(1.0, 1, 0.1, 1.5, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("two tiles with mirrored costs get the cross assignment") {
    const std::vector<PlannedTile> tiles = {pt(0, Region{0, 0, 2, 2}), pt(1, Region{2, 0, 2, 2})};
    const std::vector<std::vector<RawCandidate>> cands = {
        {raw("m0", 1.0, 1, 0.1), raw("m1", 2.0, 1, 0.1)},
        {raw("m0", 2.0, 1, 0.1), raw("m1", 1.0, 1, 0.1)}};
    for (const AllocationPlan& plan :
         {allocate(tiles, cands, 0.0), exhaustive_allocate(tiles, cands, 0.0)}) {
        REQUIRE(plan.assignments.size() == 2);
        CHECK(plan.assignments[0].chosen.model == "m0");
        CHECK(plan.assignments[1].chosen.model == "m1");
        CHECK(plan.total_cost == doctest::Approx(1.0));  // two normalized halves
    }
}

TEST_CASE("a single candidate model is assigned to every tile") {
    const std::vector<PlannedTile> tiles = {pt(0, Region{0, 0, 2, 2}), pt(1, Region{2, 0, 2, 2}),
                                            pt(2, Region{4, 0, 2, 2})};
    const std::vector<std::vector<RawCandidate>> cands(3, {raw("only", 3.0, 2, 0.1)});
    const AllocationPlan plan = allocate(tiles, cands, 0.5);
    for (const auto& a : plan.assignments) {
        CHECK(a.chosen.model == "only");
        CHECK(a.chosen.invocations == 2);
        CHECK(a.chosen.exec_est == doctest::Approx(0.2));
    }
}

TEST_CASE("cost ties break on estimated error and then on model id") {
    const std::vector<PlannedTile> tiles = {pt(0, Region{0, 0, 2, 2})};
    // both candidates cost 0.75 at mu_e = 0.5; the lower-error one wins
    const std::vector<std::vector<RawCandidate>> mixed = {
        {raw("big-err", 2.0, 1, 1.0), raw("big-time", 1.0, 1, 2.0)}};
    CHECK(allocate(tiles, mixed, 0.5).assignments[0].chosen.model == "big-time");

    const std::vector<std::vector<RawCandidate>> identical = {
        {raw("b", 1.0, 1, 1.0), raw("a", 1.0, 1, 1.0)}};
    CHECK(allocate(tiles, identical, 0.5).assignments[0].chosen.model == "a");
}

TEST_CASE("allocation validates its inputs") {
    const std::vector<PlannedTile> tiles = {pt(0, Region{0, 0, 2, 2})};
    CHECK_THROWS_AS(allocate({}, {}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(allocate(tiles, {{}}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(allocate(tiles, {{raw("m", 1.0, 1, 0.1)}, {raw("m", 1.0, 1, 0.1)}}, 0.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(allocate(tiles, {{raw("m", 1.0, 0, 0.1)}}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(allocate(tiles, {{raw("m", 1.0, 1, 0.1)}}, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(allocate(tiles, {{raw("m", 1.0, 1, 0.1)}}, -0.1), std::invalid_argument);
}

TEST_CASE("greedy allocation matches the exhaustive oracle on random instances") {
    std::mt19937 rng(2024);
    std::bernoulli_distribution global_norm(0.25);
    for (int trial = 0; trial < 1000; ++trial) {
        const RandomInstance inst = random_instance(rng);
        const bool global = global_norm(rng);
        const AllocationPlan g = allocate(inst.tiles, inst.candidates, inst.mu_e, global);
        const AllocationPlan x =
            exhaustive_allocate(inst.tiles, inst.candidates, inst.mu_e, global);
        CHECK(g.total_cost == x.total_cost);
        REQUIRE(g.assignments.size() == x.assignments.size());
        for (size_t i = 0; i < g.assignments.size(); ++i) {
            CHECK(g.assignments[i].chosen.model == x.assignments[i].chosen.model);
        }
    }
}

TEST_CASE("scaling a tile's errors does not change the chosen model") {
    std::mt19937 rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const RandomInstance inst = random_instance(rng);
        const AllocationPlan before = allocate(inst.tiles, inst.candidates, inst.mu_e);
        for (double scale : {0.001, 7.0, 1000.0}) {
            auto scaled = inst.candidates;
            for (auto& tile_cands : scaled)
                for (RawCandidate& c : tile_cands) c.est_error *= scale;
            const AllocationPlan after = allocate(inst.tiles, scaled, inst.mu_e);
            for (size_t i = 0; i < before.assignments.size(); ++i) {
                CHECK(after.assignments[i].chosen.model == before.assignments[i].chosen.model);
            }
        }
    }
}

TEST_CASE("raising mu_e trades error for execution time monotonically") {
    const std::vector<PlannedTile> tiles = {pt(0, Region{0, 0, 4, 4})};
    const std::vector<std::vector<RawCandidate>> cands = {{raw("accurate", 1.0, 1, 10.0),
                                                           raw("balanced", 2.0, 1, 5.0),
                                                           raw("quick", 4.0, 1, 2.0),
                                                           raw("instant", 8.0, 1, 1.0)}};
    double prev_exec = std::numeric_limits<double>::infinity();
    double prev_err = -1.0;
    for (int step = 0; step <= 10; ++step) {
        const AllocationPlan plan = allocate(tiles, cands, step / 10.0);
        const CandidateCost& chosen = plan.assignments[0].chosen;
        CHECK(chosen.exec_est <= prev_exec);
        CHECK(chosen.est_error >= prev_err);
        prev_exec = chosen.exec_est;
        prev_err = chosen.est_error;
    }
}

TEST_CASE("plan estimates errors from curves and assigns per tile") {
    // both tiles carry the zero series, matching model "near" (trained on a
    // constant-0 grid) and sitting far from "far" (trained on constant 5)
    Registry reg;
    add_model(reg, "near", 0.0f, 0.5, 0.1, 0.01);
    add_model(reg, "far", 5.0f, 0.5, 0.1, 0.01);
    const Tiling tiling = two_column_tiling(std::vector<float>(6, 0.0f),
                                            std::vector<float>(6, 0.0f));
    dje::Query q;
    q.region = Region{0, 0, 4, 4};
    q.ptime = 3;

    const AllocationPlan plan = dje::plan(q, tiling, reg, 0.0);
    CHECK(plan.query_region == q.region);
    CHECK(plan.ptime == 3);
    CHECK(plan.mu_e == 0.0);
    REQUIRE(plan.assignments.size() == 2);
    for (const auto& a : plan.assignments) {
        CHECK(a.chosen.model == "near");
        CHECK(a.chosen.est_error == doctest::Approx(0.5));  // curve intercept at distance 0
        CHECK(a.chosen.invocations == 2);                   // 4x2 tile, 2x2 frame
    }
}

TEST_CASE("plan favors cheap models when mu_e weighs time only") {
    Registry reg;
    add_model(reg, "slow", 0.0f, 0.5, 0.1, 2.0);
    add_model(reg, "fast", 5.0f, 0.5, 0.1, 0.001);
    const Tiling tiling = two_column_tiling(std::vector<float>(6, 0.0f),
                                            std::vector<float>(6, 0.0f));
    dje::Query q;
    q.region = Region{0, 0, 4, 4};

    const AllocationPlan plan = dje::plan(q, tiling, reg, 1.0);
    for (const auto& a : plan.assignments) CHECK(a.chosen.model == "fast");
}

TEST_CASE("plan skips models without a curve or measured cost") {
    Registry reg;
    add_model(reg, "ready", 0.0f, 0.5, 0.1, 0.01);
    ModelManifest bare;
    bare.id = "unready";
    bare.training_region = Region{0, 0, 2, 2};
    bare.t0 = 0;
    bare.t_len = 6;
    bare.frame_height = 2;
    bare.frame_width = 2;
    bare.input_frames = 1;
    bare.output_frames = 1;
    bare.backend = "builtin:persistence";
    reg.register_model(bare, constant_grid(2, 2, 6, 0.0f));

    const Tiling tiling = two_column_tiling(std::vector<float>(6, 0.0f),
                                            std::vector<float>(6, 0.0f));
    dje::Query q;
    q.region = Region{0, 0, 4, 4};
    const AllocationPlan plan = dje::plan(q, tiling, reg, 0.0);
    for (const auto& a : plan.assignments) CHECK(a.chosen.model == "ready");

    Registry empty;
    reg.register_model([&] {
        ModelManifest m = bare;
        m.id = "still-unready";
        return m;
    }(), constant_grid(2, 2, 6, 0.0f));
    CHECK_THROWS_AS(dje::plan(q, tiling, empty, 0.0), std::runtime_error);
}

TEST_CASE("recomputed centroids override the stored tile medoids") {
    Registry reg;
    add_model(reg, "zeros", 0.0f, 0.1, 1.0, 0.01);
    add_model(reg, "fives", 5.0f, 0.1, 1.0, 0.01);

    // stored centroids claim the right column matches "zeros", but the query
    // grid actually holds fives there
    Tiling tiling = two_column_tiling(std::vector<float>(6, 0.0f), std::vector<float>(6, 0.0f));
    STGrid actual(4, 4, 6);
    for (int lat = 0; lat < 4; ++lat)
        for (int lon = 0; lon < 4; ++lon)
            for (int t = 0; t < 6; ++t) actual.at(lat, lon, t) = lon < 2 ? 0.0f : 5.0f;

    dje::Query q;
    q.region = Region{0, 0, 4, 4};
    const AllocationPlan stored = dje::plan(q, tiling, reg, 0.0);
    CHECK(stored.assignments[1].chosen.model == "zeros");

    dje::PlanOptions opts;
    opts.recompute_centroids_from = &actual;
    const AllocationPlan recomputed = dje::plan(q, tiling, reg, 0.0, opts);
    CHECK(recomputed.assignments[0].chosen.model == "zeros");
    CHECK(recomputed.assignments[1].chosen.model == "fives");
}

TEST_CASE("plan aggregation is the unweighted mean of per-tile scores") {
    CHECK(aggregate_plan_rmse({3.61, 1.69, 2.11, 2.21}) == doctest::Approx(2.405));
    CHECK(aggregate_plan_rmse({4.36, 2.14, 1.92, 2.56}) == doctest::Approx(2.745));
    const double gap = (aggregate_plan_rmse({4.36, 2.14, 1.92, 2.56}) -
                        aggregate_plan_rmse({3.61, 1.69, 2.11, 2.21})) /
                       aggregate_plan_rmse({3.61, 1.69, 2.11, 2.21});
    CHECK(gap == doctest::Approx(0.1414).epsilon(0.01));
    CHECK((2.35 - 2.24) / 2.24 == doctest::Approx(0.0491).epsilon(0.01));
    CHECK(aggregate_plan_rmse({2.35}) == 2.35);
    CHECK_THROWS_AS(aggregate_plan_rmse({}), std::invalid_argument);
}

TEST_CASE("plan json round-trip preserves the assignments") {
    const std::vector<PlannedTile> tiles = {pt(3, Region{0, 0, 3, 2}), pt(7, Region{0, 2, 3, 2})};
    const std::vector<std::vector<RawCandidate>> cands = {
        {raw("m0", 1.0, 2, 0.25), raw("m1", 2.0, 1, 0.5)},
        {raw("m0", 2.0, 2, 0.25), raw("m1", 1.0, 1, 0.5)}};
    AllocationPlan plan = allocate(tiles, cands, 0.3);
    plan.ptime = 4;

    const AllocationPlan back = dje::plan_from_json(dje::plan_to_json(plan));
    CHECK(back.query_region == plan.query_region);
    CHECK(back.ptime == plan.ptime);
    CHECK(back.mu_e == plan.mu_e);
    CHECK(back.total_cost == plan.total_cost);
    REQUIRE(back.assignments.size() == plan.assignments.size());
    for (size_t i = 0; i < back.assignments.size(); ++i) {
        const auto& a = back.assignments[i];
        const auto& b = plan.assignments[i];
        CHECK(a.tile == b.tile);
        CHECK(a.region == b.region);
        CHECK(a.chosen.model == b.chosen.model);
        CHECK(a.chosen.est_error == b.chosen.est_error);
        CHECK(a.chosen.invocations == b.chosen.invocations);
        CHECK(a.chosen.exec_est == b.chosen.exec_est);
        CHECK(a.chosen.cost == b.chosen.cost);
    }

    CHECK_THROWS_AS(dje::plan_from_json(R"({"query": {"region": [0, 0, 1], "ptime": 1},
                                            "mu_e": 0, "total_cost": 0, "assignments": []})"),
                    std::invalid_argument);
}
