// Acceptance runner: one line per criterion, nonzero exit when any fails.
// Each criterion carries a wall-clock budget that is part of the check.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dje/baselines.hpp"
#include "dje/curve.hpp"
#include "dje/distance.hpp"
#include "dje/executor.hpp"
#include "dje/gld.hpp"
#include "dje/grid.hpp"
#include "dje/planner.hpp"
#include "dje/registry.hpp"
#include "dje/rng.hpp"
#include "dje/tiling.hpp"

namespace {

using dje::Region;
using dje::STGrid;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

int g_failures = 0;

struct CheckFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw CheckFailure(what);
}

template <typename Body>
void criterion(int number, const char* name, double budget_s, Body&& body) {
    const auto t0 = Clock::now();
    std::string reason;
    try {
        body();
    } catch (const std::exception& ex) {
        reason = ex.what();
    }
    const double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
    if (reason.empty() && elapsed > budget_s) {
        std::ostringstream os;
        os << "exceeded time budget: " << elapsed << "s > " << budget_s << "s";
        reason = os.str();
    }
    if (reason.empty()) {
        std::printf("[PASS] %2d. %s (%.2fs)\n", number, name, elapsed);
    } else {
        ++g_failures;
        std::printf("[FAIL] %2d. %s (%.2fs)\n       %s\n", number, name, elapsed, reason.c_str());
    }
    std::fflush(stdout);
}

std::pair<int, std::string> run_command(const std::string& cmd) {
    FILE* pipe = popen((cmd + " 2>/dev/null").c_str(), "r");
    require(pipe != nullptr, "popen failed for: " + cmd);
    std::string out;
    char buf[4096];
    size_t n = 0;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
    const int rc = pclose(pipe);
    return {WIFEXITED(rc) ? WEXITSTATUS(rc) : -1, out};
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// ------------------------------------------------------------ criterion 1 ---

const char* kReferenceTable =
    "group,model,tile,error\n"
    "T,DA1,T1,20.23\nT,DA2,T1,81.09\nT,DA3,T1,3.61\nT,DA4,T1,5.17\nT,DA5,T1,81.3\nT,DA6,T1,20.1\n"
    "T,DA1,T2,23.57\nT,DA2,T2,80.73\nT,DA3,T2,1.69\nT,DA4,T2,2.79\nT,DA5,T2,81.1\nT,DA6,T2,23.49\n"
    "T,DA1,T3,24.68\nT,DA2,T3,80.7\nT,DA3,T3,2.43\nT,DA4,T3,2.11\nT,DA5,T3,81.05\nT,DA6,T3,24.53\n"
    "T,DA1,T4,23.79\nT,DA2,T4,80.74\nT,DA3,T4,2.21\nT,DA4,T4,2.91\nT,DA5,T4,81.11\nT,DA6,T4,23.75\n"
    "W,DA1,W1,19.33\nW,DA2,W1,81.07\nW,DA3,W1,4.36\nW,DA4,W1,6.38\nW,DA5,W1,81.35\nW,DA6,W1,19.08\n"
    "W,DA1,W2,22.21\nW,DA2,W2,80.84\nW,DA3,W2,2.14\nW,DA4,W2,3.79\nW,DA5,W2,81.17\nW,DA6,W2,21.98\n"
    "W,DA1,W3,24.02\nW,DA2,W3,80.72\nW,DA3,W3,1.92\nW,DA4,W3,2.46\nW,DA5,W3,81.1\nW,DA6,W3,23.88\n"
    "W,DA1,W4,24.54\nW,DA2,W4,80.71\nW,DA3,W4,2.58\nW,DA4,W4,2.56\nW,DA5,W4,81.09\nW,DA6,W4,24.51\n";

void check_group(const json& group, const char* name,
                 const std::vector<std::pair<std::string, std::string>>& expected) {
    require(group.at("group") == name, std::string("unexpected group order: ") + name);
    const json& assignments = group.at("assignments");
    require(assignments.size() == expected.size(), "wrong assignment count");
    for (size_t i = 0; i < expected.size(); ++i) {
        const std::string tile = assignments[i].at("tile");
        const std::string model = assignments[i].at("model");
        require(tile == expected[i].first && model == expected[i].second,
                "group " + std::string(name) + ": got (" + tile + "," + model + "), want (" +
                    expected[i].first + "," + expected[i].second + ")");
    }
}

void criterion_reference_table_plans() {
    const std::string path = temp_path("dje_acceptance_tables.csv");
    std::ofstream(path) << kReferenceTable;

    const auto [code, out] =
        run_command(std::string("\"") + DJE_CLI_PATH + "\" bench paper-tables --file \"" + path +
                    "\" --mu-e 0");
    require(code == 0, "bench paper-tables exited with code " + std::to_string(code));
    const json doc = json::parse(out);

    const json& groups = doc.at("groups");
    require(groups.size() == 2, "expected two groups");
    check_group(groups[0], "T",
                {{"T1", "DA3"}, {"T2", "DA3"}, {"T3", "DA4"}, {"T4", "DA3"}});
    check_group(groups[1], "W",
                {{"W1", "DA3"}, {"W2", "DA3"}, {"W3", "DA3"}, {"W4", "DA4"}});
    require(doc.at("better_group") == "T", "aligned tiling should win");

    const double gap = doc.at("gap_percent").get<double>();
    require(std::abs(gap - 14.1) <= 0.1,
            "aggregate gap " + std::to_string(gap) + "% not within 14.1% +- 0.1%");
}

// ------------------------------------------------------------ criterion 2 ---

void criterion_plan_gap_arithmetic() {
    // two plans sharing three tiles and differing on the fourth
    const double ours = dje::aggregate_plan_rmse({2.5, 2.0, 2.3, 2.6});
    const double best = dje::aggregate_plan_rmse({2.5, 2.0, 2.3, 2.16});
    require(std::abs(ours - 2.35) < 1e-12, "first aggregate should be 2.35");
    require(std::abs(best - 2.24) < 1e-12, "second aggregate should be 2.24");
    const double gap = (ours - best) / best * 100.0;
    require(std::abs(gap - 4.91) <= 0.05,
            "gap " + std::to_string(gap) + "% not within 4.91% +- 0.05%");
}

// ------------------------------------------------------------ criterion 3 ---

void criterion_greedy_matches_exhaustive() {
    std::mt19937_64 rng(20250816);
    std::uniform_int_distribution<int> tile_count(1, 4), model_count(1, 5), inv(1, 9);
    std::uniform_real_distribution<double> err(0.0, 10.0), uc(0.02, 0.5), mu(0.0, 1.0);
    std::bernoulli_distribution global(0.25);

    for (int instance = 0; instance < 1200; ++instance) {
        const int n_tiles = tile_count(rng);
        const int n_models = model_count(rng);
        std::vector<dje::PlannedTile> tiles;
        std::vector<std::vector<dje::RawCandidate>> candidates;
        for (int t = 0; t < n_tiles; ++t) {
            tiles.push_back(dje::PlannedTile{t, Region{0, t, 1, 1}, {}});
            std::vector<dje::RawCandidate> cands;
            for (int m = 0; m < n_models; ++m) {
                cands.push_back(dje::RawCandidate{"m" + std::to_string(m), err(rng), inv(rng),
                                                  uc(rng)});
            }
            candidates.push_back(std::move(cands));
        }
        const double mu_e = mu(rng);
        const bool g = global(rng);
        const dje::AllocationPlan fast = dje::allocate(tiles, candidates, mu_e, g);
        const dje::AllocationPlan full = dje::exhaustive_allocate(tiles, candidates, mu_e, g);
        require(fast.total_cost == full.total_cost,
                "instance " + std::to_string(instance) + ": total cost diverged");
        for (size_t t = 0; t < fast.assignments.size(); ++t) {
            require(fast.assignments[t].chosen.model == full.assignments[t].chosen.model,
                    "instance " + std::to_string(instance) + ": chosen model diverged");
        }
    }
}

// ------------------------------------------------------------ criterion 4 ---

double warp_enumeration(const std::vector<float>& a, const std::vector<float>& b, size_t i,
                        size_t j) {
    const double local = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[j]));
    if (i == 0 && j == 0) return local;
    double best = std::numeric_limits<double>::infinity();
    if (i > 0) best = std::min(best, warp_enumeration(a, b, i - 1, j));
    if (j > 0) best = std::min(best, warp_enumeration(a, b, i, j - 1));
    if (i > 0 && j > 0) best = std::min(best, warp_enumeration(a, b, i - 1, j - 1));
    return local + best;
}

void criterion_dtw_matches_enumeration() {
    std::mt19937 rng(404);
    std::uniform_int_distribution<int> len(1, 8);
    std::uniform_real_distribution<float> val(-5.0f, 5.0f);
    for (int pair = 0; pair < 600; ++pair) {
        std::vector<float> a(static_cast<size_t>(len(rng)));
        std::vector<float> b(static_cast<size_t>(len(rng)));
        for (float& v : a) v = val(rng);
        for (float& v : b) v = val(rng);
        const double got = dje::dtw(a, b).cost;
        const double want = warp_enumeration(a, b, a.size() - 1, b.size() - 1);
        require(got == want, "pair " + std::to_string(pair) + ": dtw " + std::to_string(got) +
                                 " != enumeration " + std::to_string(want));
    }
}

// ------------------------------------------------------------ criterion 5 ---

void criterion_distribution_fit_roundtrip() {
    // part 1: iid draws from the uniform member of the family
    const dje::GldParams uniform{0.5, 2.0, 1.0, 1.0};
    {
        dje::GaussianStream stream(11);
        std::vector<double> samples(10000);
        for (double& v : samples) v = dje::gld_quantile(uniform, stream.next_unit());
        const dje::GldFit fit = dje::fit_gld(std::span<const double>(samples));
        const double got[4] = {fit.params.lambda1, fit.params.lambda2, fit.params.lambda3,
                               fit.params.lambda4};
        const double want[4] = {0.5, 2.0, 1.0, 1.0};
        for (int k = 0; k < 4; ++k) {
            require(std::abs(got[k] - want[k]) <= 0.1,
                    "uniform refit: lambda" + std::to_string(k + 1) + " = " +
                        std::to_string(got[k]) + ", want " + std::to_string(want[k]) + " +- 0.1");
        }
    }

    // part 2: random valid parameter sets, sampled on a stratified grid
    const int n = 10000;
    for (int seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(900 + static_cast<unsigned>(seed));
        std::uniform_real_distribution<double> l1(0.5, 2.0), l2(0.5, 3.0), shape(0.25, 1.4);
        dje::GldParams p;
        do {
            p = dje::GldParams{l1(rng), l2(rng), shape(rng), shape(rng)};
        } while (!dje::gld_params_valid(p));

        std::vector<double> samples(n);
        for (int i = 0; i < n; ++i) {
            samples[static_cast<size_t>(i)] = dje::gld_quantile(p, (i + 0.5) / n);
        }
        const dje::GldFit fit = dje::fit_gld(std::span<const double>(samples));
        const double got[4] = {fit.params.lambda1, fit.params.lambda2, fit.params.lambda3,
                               fit.params.lambda4};
        const double want[4] = {p.lambda1, p.lambda2, p.lambda3, p.lambda4};
        for (int k = 0; k < 4; ++k) {
            require(std::abs(got[k] - want[k]) <= 0.05 * std::abs(want[k]),
                    "seed " + std::to_string(seed) + ": lambda" + std::to_string(k + 1) + " = " +
                        std::to_string(got[k]) + " vs " + std::to_string(want[k]) +
                        " off by more than 5%");
        }
    }
}

// ------------------------------------------------------------ criterion 6 ---

void criterion_tiling_disjoint_cover() {
    std::mt19937 rng(606);
    std::uniform_int_distribution<int> dim(1, 32), kk(1, 5);
    std::uniform_real_distribution<float> val(-1.0f, 1.0f);
    for (int trial = 0; trial < 200; ++trial) {
        dje::ClusterMap cm;
        cm.lat_count = dim(rng);
        cm.lon_count = dim(rng);
        cm.k = kk(rng);
        std::uniform_int_distribution<int> label(0, cm.k - 1);
        cm.cid.resize(static_cast<size_t>(cm.lat_count) * cm.lon_count);
        for (int& c : cm.cid) c = label(rng);

        STGrid grid(cm.lat_count, cm.lon_count, 3);
        for (float& v : grid.values()) v = val(rng);

        const dje::Tiling tiling = dje::build_tiling(cm, grid);
        dje::check_tiling(tiling);

        std::vector<int> cover(cm.cid.size(), 0);
        for (const dje::Tile& t : tiling.tiles) {
            for (int lat = t.region.start_lat; lat < t.region.end_lat(); ++lat) {
                for (int lon = t.region.start_lon; lon < t.region.end_lon(); ++lon) {
                    require(lat >= 0 && lat < cm.lat_count && lon >= 0 && lon < cm.lon_count,
                            "tile leaves the domain");
                    cover[static_cast<size_t>(lat) * cm.lon_count + lon]++;
                    require(cm.at(lat, lon) == t.cluster, "tile mixes cluster labels");
                }
            }
        }
        for (int c : cover) require(c == 1, "cover count != 1 on trial " + std::to_string(trial));
    }
}

// ------------------------------------------------------------ criterion 7 ---

void register_zero_model(dje::Registry& reg, const std::string& id, int t_len) {
    dje::ModelManifest m;
    m.id = id;
    m.training_region = Region{0, 0, 1, 1};
    m.t0 = 0;
    m.t_len = t_len;
    m.frame_height = 1;
    m.frame_width = 1;
    m.input_frames = 1;
    m.output_frames = 1;
    m.backend = "builtin:persistence";
    STGrid zeros(1, 1, t_len);
    std::fill(zeros.values().begin(), zeros.values().end(), 0.0f);
    reg.register_model(m, zeros);
}

// Constant-series evaluation pairs whose (distance, error) points land exactly
// on `law`: input level c gives distance t_len*c against the zero centroid,
// and truth c - law(dist) makes the prediction error exactly law(dist).
template <typename ErrorLaw>
std::vector<std::pair<STGrid, STGrid>> exact_law_pairs(int count, int t_len, ErrorLaw law) {
    std::vector<std::pair<STGrid, STGrid>> pairs;
    for (int r = 0; r < count; ++r) {
        const double c = 0.25 * r;
        const double dist = t_len * c;
        STGrid in(1, 1, t_len);
        std::fill(in.values().begin(), in.values().end(), static_cast<float>(c));
        STGrid truth(1, 1, 1);
        truth.at(0, 0, 0) = static_cast<float>(c - law(dist));
        pairs.emplace_back(std::move(in), std::move(truth));
    }
    return pairs;
}

void check_monotone_estimates(const dje::LearningCurve& curve) {
    double prev = dje::estimate_error(curve, 0.0);
    for (int i = 1; i <= 400; ++i) {
        const double d = curve.dist_max * i / 400.0;
        const double e = dje::estimate_error(curve, d);
        require(e >= prev - 1e-12, "estimate decreases at distance " + std::to_string(d));
        prev = e;
    }
}

void criterion_learning_curve_recovery() {
    {
        dje::Registry reg;
        register_zero_model(reg, "lin", 4);
        const auto pairs = exact_law_pairs(12, 4, [](double d) { return 0.5 + 0.125 * d; });
        const dje::LearningCurve curve =
            dje::build_learning_curve(reg, "lin", pairs, {0.0}, 31);
        require(curve.degree == 1, "linear law: degree " + std::to_string(curve.degree));
        require(std::abs(curve.coefficients[0] - 0.5) <= 1e-6,
                "linear law: intercept " + std::to_string(curve.coefficients[0]));
        require(std::abs(curve.coefficients[1] - 0.125) <= 1e-6,
                "linear law: slope " + std::to_string(curve.coefficients[1]));
        check_monotone_estimates(curve);
    }
    {
        dje::Registry reg;
        register_zero_model(reg, "quad", 4);
        const auto pairs = exact_law_pairs(
            12, 4, [](double d) { return 0.25 + 0.125 * d + 0.03125 * d * d; });
        const dje::LearningCurve curve =
            dje::build_learning_curve(reg, "quad", pairs, {0.0}, 31);
        require(curve.degree == 2,
                "quadratic law: degree " + std::to_string(curve.degree) + ", want 2");
        const double want[3] = {0.25, 0.125, 0.03125};
        for (int k = 0; k < 3; ++k) {
            require(std::abs(curve.coefficients[static_cast<size_t>(k)] - want[k]) <= 1e-5,
                    "quadratic law: coefficient " + std::to_string(k) + " = " +
                        std::to_string(curve.coefficients[static_cast<size_t>(k)]));
        }
        check_monotone_estimates(curve);
    }
}

// ------------------------------------------------------- criteria 8 and 9 ---

// Four known-noise regions plus a leftover strip, each at its own base level,
// with one specialist model per region and two heavily biased models.
struct SyntheticInstance {
    STGrid grid;
    dje::Tiling tiling;
    std::unique_ptr<dje::Registry> registry;
    std::array<Region, 4> regions;
    std::array<std::string, 4> specialists;
    std::vector<std::string> all_models;
    dje::Query query;
    STGrid truth;
};

void fill_region(STGrid& grid, const Region& r, float value) {
    for (int lat = r.start_lat; lat < r.end_lat(); ++lat)
        for (int lon = r.start_lon; lon < r.end_lon(); ++lon)
            for (int t = 0; t < grid.time_count(); ++t) grid.at(lat, lon, t) = value;
}

void add_oracle_model(dje::Registry& reg, const std::string& id, const std::string& backend,
                      const Region& region, const STGrid& grid) {
    dje::ModelManifest m;
    m.id = id;
    m.training_region = region;
    m.t0 = 0;
    m.t_len = 195;
    m.frame_height = region.height;
    m.frame_width = region.width;
    m.input_frames = 1;
    m.output_frames = 1;
    m.backend = backend;
    reg.register_model(m, grid);
}

SyntheticInstance& synthetic_instance() {
    static std::unique_ptr<SyntheticInstance> inst;
    if (inst) return *inst;
    inst = std::make_unique<SyntheticInstance>();

    inst->regions = {Region{0, 0, 10, 40}, Region{10, 0, 10, 30}, Region{20, 0, 8, 30},
                     Region{28, 0, 2, 30}};
    const Region leftover{10, 30, 20, 10};
    const float levels[4] = {10.0f, 20.0f, 30.0f, 40.0f};
    const double sigmas[4] = {0.1, 0.3, 0.5, 0.75};

    STGrid base(30, 40, 200);
    for (int i = 0; i < 4; ++i) fill_region(base, inst->regions[i], levels[i]);
    fill_region(base, leftover, 15.0f);

    std::vector<dje::NoiseTile> noise;
    for (int i = 0; i < 4; ++i) noise.push_back(dje::NoiseTile{inst->regions[i], sigmas[i]});
    noise.push_back(dje::NoiseTile{leftover, 0.45});
    inst->grid = dje::generate_synthetic(base, noise, 99);

    dje::ClusterMap cm;
    cm.lat_count = 30;
    cm.lon_count = 40;
    cm.k = 5;
    cm.cid.assign(30 * 40, 4);
    for (int i = 0; i < 4; ++i) {
        const Region& r = inst->regions[i];
        for (int lat = r.start_lat; lat < r.end_lat(); ++lat)
            for (int lon = r.start_lon; lon < r.end_lon(); ++lon)
                cm.cid[static_cast<size_t>(lat) * 40 + lon] = i;
    }
    inst->tiling = dje::build_tiling(cm, inst->grid);

    inst->registry = std::make_unique<dje::Registry>();
    inst->specialists = {"m1", "m2", "m3", "m4"};
    for (int i = 0; i < 4; ++i) {
        add_oracle_model(*inst->registry, inst->specialists[static_cast<size_t>(i)],
                         "builtin:oracle-noise", inst->regions[i], inst->grid);
    }
    add_oracle_model(*inst->registry, "p1", "builtin:oracle-noise:bias=8", inst->regions[1],
                     inst->grid);
    add_oracle_model(*inst->registry, "p2", "builtin:oracle-noise:bias=8", inst->regions[3],
                     inst->grid);
    inst->all_models = {"m1", "m2", "m3", "m4", "p1", "p2"};

    // equal unitary costs keep the trade-off axis on invocation counts alone
    for (const std::string& id : inst->all_models) {
        inst->registry->set_unitary_cost(id, 1e-3);
        const Region r = inst->registry->get(id).manifest.training_region;
        std::vector<std::pair<STGrid, STGrid>> pairs;
        for (int t0 : {0, 40, 80, 120}) {
            pairs.emplace_back(dje::slice(inst->grid, r, t0, 30),
                               dje::slice(inst->grid, r, t0 + 30, 1));
        }
        dje::build_learning_curve(*inst->registry, id, pairs, {0.5, 1.0, 2.0, 3.0}, 7);
    }

    inst->query.region = Region{0, 0, 30, 40};
    inst->query.ptime = 5;
    inst->query.input = dje::slice(inst->grid, inst->query.region, 194, 1);
    inst->truth = dje::slice(inst->grid, inst->query.region, 195, 5);
    return *inst;
}

void criterion_specialized_plan_beats_flat_ensemble() {
    SyntheticInstance& inst = synthetic_instance();

    const dje::AllocationPlan plan =
        dje::plan(inst.query, inst.tiling, *inst.registry, 0.0);
    for (int i = 0; i < 4; ++i) {
        const Region& r = inst.regions[static_cast<size_t>(i)];
        bool found = false;
        for (const dje::Assignment& a : plan.assignments) {
            if (a.region == r) {
                found = true;
                require(a.chosen.model == inst.specialists[static_cast<size_t>(i)],
                        "region " + std::to_string(i + 1) + " got " + a.chosen.model +
                            ", want " + inst.specialists[static_cast<size_t>(i)]);
            }
        }
        require(found, "no assignment for region " + std::to_string(i + 1));
    }

    const dje::ExecutionResult ours =
        dje::execute_plan(plan, *inst.registry, inst.query.input, &inst.truth);
    require(ours.report.complete, "plan execution incomplete");

    const dje::ExecutionResult flat =
        dje::run_traditional_ensemble(*inst.registry, inst.all_models, inst.query);
    const double rmse_ours = dje::rmse(ours.prediction.values, inst.truth);
    const double rmse_flat = dje::rmse(flat.prediction.values, inst.truth);
    require(rmse_ours < rmse_flat, "rmse " + std::to_string(rmse_ours) +
                                       " not below flat ensemble " + std::to_string(rmse_flat));
    require(ours.report.total_invocations < flat.report.total_invocations,
            "invocations " + std::to_string(ours.report.total_invocations) + " not below " +
                std::to_string(flat.report.total_invocations));
}

void criterion_cost_weight_monotone() {
    SyntheticInstance& inst = synthetic_instance();

    std::vector<std::vector<std::pair<double, double>>> per_tile;  // (est_error, exec_est)
    for (double mu : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
        const dje::AllocationPlan plan = dje::plan(inst.query, inst.tiling, *inst.registry, mu);
        if (per_tile.empty()) per_tile.resize(plan.assignments.size());
        require(plan.assignments.size() == per_tile.size(), "assignment count changed");
        for (size_t t = 0; t < plan.assignments.size(); ++t) {
            per_tile[t].emplace_back(plan.assignments[t].chosen.est_error,
                                     plan.assignments[t].chosen.exec_est);
        }
    }
    for (size_t t = 0; t < per_tile.size(); ++t) {
        for (size_t i = 1; i < per_tile[t].size(); ++i) {
            require(per_tile[t][i].second <= per_tile[t][i - 1].second + 1e-12,
                    "tile " + std::to_string(t) + ": exec estimate rose with the weight");
            require(per_tile[t][i].first >= per_tile[t][i - 1].first - 1e-12,
                    "tile " + std::to_string(t) + ": error estimate fell with the weight");
        }
    }
}

// ----------------------------------------------------------- criterion 10 ---

void criterion_distance_benchmark_direction() {
    const auto [code, out] = run_command(std::string("\"") + DJE_CLI_PATH +
                                         "\" bench distance --n 50,100,150 --len 100 --seed 3");
    require(code == 0, "bench distance exited with code " + std::to_string(code));
    const json doc = json::parse(out);
    const json& rows = doc.at("rows");
    require(rows.size() == 3, "expected three rows");

    std::vector<double> ns, ratios;
    for (const json& row : rows) {
        ns.push_back(row.at("n").get<double>());
        ratios.push_back(row.at("ratio").get<double>());
    }
    require(ratios[0] < ratios[1] && ratios[1] < ratios[2],
            "ratio not increasing: " + std::to_string(ratios[0]) + ", " +
                std::to_string(ratios[1]) + ", " + std::to_string(ratios[2]));

    // least-squares line through (n, ratio)
    const size_t n = ns.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        sx += ns[i];
        sy += ratios[i];
        sxx += ns[i] * ns[i];
        sxy += ns[i] * ratios[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double intercept = (sy - slope * sx) / n;
    double ss_res = 0, ss_tot = 0;
    for (size_t i = 0; i < n; ++i) {
        const double fit = intercept + slope * ns[i];
        ss_res += (ratios[i] - fit) * (ratios[i] - fit);
        ss_tot += (ratios[i] - sy / n) * (ratios[i] - sy / n);
    }
    const double r2 = 1.0 - ss_res / ss_tot;
    require(r2 > 0.9, "linear fit R^2 = " + std::to_string(r2));
}

// ----------------------------------------------------------- criterion 11 ---

dje::FrameBatch random_batch(int h, int w, int frames, unsigned seed) {
    dje::FrameBatch b;
    b.height = h;
    b.width = w;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> val(-3.0f, 3.0f);
    for (int f = 0; f < frames; ++f) {
        std::vector<float> frame(static_cast<size_t>(h) * w);
        for (float& v : frame) v = val(rng);
        b.frames.push_back(std::move(frame));
    }
    return b;
}

void criterion_subprocess_equivalence() {
    dje::Registry reg;
    STGrid train(3, 3, 4);
    std::fill(train.values().begin(), train.values().end(), 0.0f);

    auto manifest = [&](const std::string& id, const std::string& backend, double timeout) {
        dje::ModelManifest m;
        m.id = id;
        m.training_region = Region{0, 0, 3, 3};
        m.t0 = 0;
        m.t_len = 4;
        m.frame_height = 3;
        m.frame_width = 3;
        m.input_frames = 2;
        m.output_frames = 2;
        m.backend = backend;
        m.timeout_s = timeout;
        return m;
    };
    reg.register_model(manifest("ref", "builtin:persistence", 30.0), train);
    reg.register_model(
        manifest("sub", std::string("subprocess:") + ECHO_PREDICTOR_PATH + " --frames 2", 30.0),
        train);
    reg.register_model(
        manifest("slow", std::string("subprocess:") + ECHO_PREDICTOR_PATH + " --sleep-ms 2000",
                 0.15),
        train);
    reg.register_model(
        manifest("bad", std::string("subprocess:") + ECHO_PREDICTOR_PATH + " --mode bad-magic",
                 30.0),
        train);

    for (int trial = 0; trial < 120; ++trial) {
        const dje::FrameBatch batch = random_batch(3, 3, 2, 7000 + static_cast<unsigned>(trial));
        const dje::FrameBatch a = reg.predict("ref", batch);
        const dje::FrameBatch b = reg.predict("sub", batch);
        require(a.frames == b.frames, "trial " + std::to_string(trial) + ": replies diverged");
    }

    const dje::FrameBatch batch = random_batch(3, 3, 2, 1);
    bool timed_out = false;
    try {
        reg.predict("slow", batch);
    } catch (const std::exception& ex) {
        timed_out = std::string(ex.what()).find("timed out") != std::string::npos;
    }
    require(timed_out, "timeout path did not trigger");

    bool rejected = false;
    try {
        reg.predict("bad", batch);
    } catch (const std::exception& ex) {
        rejected = std::string(ex.what()).find("bad magic") != std::string::npos;
    }
    require(rejected, "malformed reply was not rejected");
}

}  // namespace

int main() {
    criterion(1, "table-driven planning reproduces the reference assignments", 1.0,
              criterion_reference_table_plans);
    criterion(2, "aggregate plan gap arithmetic", 1.0, criterion_plan_gap_arithmetic);
    criterion(3, "greedy allocation matches exhaustive search", 10.0,
              criterion_greedy_matches_exhaustive);
    criterion(4, "warp distance matches exhaustive path enumeration", 30.0,
              criterion_dtw_matches_enumeration);
    criterion(5, "lambda-distribution fits round-trip", 60.0,
              criterion_distribution_fit_roundtrip);
    criterion(6, "tilings are disjoint monochromatic covers", 10.0,
              criterion_tiling_disjoint_cover);
    criterion(7, "learning curves recover known error laws", 60.0,
              criterion_learning_curve_recovery);
    criterion(8, "tile-specialized planning beats the flat ensemble", 120.0,
              criterion_specialized_plan_beats_flat_ensemble);
    criterion(9, "cost weight trades error for time monotonically", 120.0,
              criterion_cost_weight_monotone);
    criterion(10, "pairwise distance cost outgrows feature extraction", 300.0,
              criterion_distance_benchmark_direction);
    criterion(11, "subprocess backend matches the builtin bit-exactly", 30.0,
              criterion_subprocess_equivalence);

    if (g_failures == 0) {
        std::printf("all 11 criteria passed\n");
        return 0;
    }
    std::printf("%d criteria failed\n", g_failures);
    return 1;
}
