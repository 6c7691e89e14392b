// dje: command-line front end for the disjoint-ensemble prediction pipeline.
//
// Machine-readable reports are JSON on stdout; human-readable summaries go to
// stderr. Exit codes: 0 on success, 1 on error, 2 when a query executed but
// some tile placements failed.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dje/baselines.hpp"
#include "dje/clustering.hpp"
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
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Optional config file: fills in defaults that explicit flags override.
struct CliConfig {
    std::optional<std::uint64_t> seed;
    std::optional<int> d_max;
    std::optional<int> dtw_band;
    std::optional<double> timeout_s;
    std::optional<double> tukey_k;
};

CliConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json doc = json::parse(in);
    CliConfig cfg;
    if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("d_max")) cfg.d_max = doc.at("d_max").get<int>();
    if (doc.contains("dtw_band")) cfg.dtw_band = doc.at("dtw_band").get<int>();
    if (doc.contains("timeout_s")) cfg.timeout_s = doc.at("timeout_s").get<double>();
    if (doc.contains("tukey_k")) cfg.tukey_k = doc.at("tukey_k").get<double>();
    return cfg;
}

// On-disk layout: datasets/<id>.stg1, features/<id>.csv, tilings/<id>.json,
// models.json. The root comes from --store or DJE_STORE.
struct Store {
    std::string root;

    std::string dataset_path(const std::string& id) const {
        return root + "/datasets/" + id + ".stg1";
    }
    std::string features_path(const std::string& id) const {
        return root + "/features/" + id + ".csv";
    }
    std::string tiling_path(const std::string& id) const {
        return root + "/tilings/" + id + ".json";
    }
    std::string models_path() const { return root + "/models.json"; }

    void ensure_layout() const {
        fs::create_directories(root + "/datasets");
        fs::create_directories(root + "/features");
        fs::create_directories(root + "/tilings");
    }

    STGrid load_dataset(const std::string& id) const {
        const std::string path = dataset_path(id);
        if (!fs::exists(path)) throw std::runtime_error("unknown dataset: " + id);
        return dje::load_grid(path, dje::GridFormat::Binary);
    }

    dje::Tiling load_tiling_for(const std::string& id) const {
        const std::string path = tiling_path(id);
        if (!fs::exists(path)) {
            throw std::runtime_error("dataset has no tiling (run preprocess): " + id);
        }
        return dje::load_tiling(path);
    }

    std::unique_ptr<dje::Registry> load_registry() const {
        const std::string path = models_path();
        if (!fs::exists(path)) return std::make_unique<dje::Registry>();
        std::ifstream in(path);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        return dje::Registry::from_json(text);
    }

    void save_registry(const dje::Registry& registry) const {
        std::ofstream out(models_path());
        if (!out) throw std::runtime_error("cannot write " + models_path());
        out << registry.to_json() << "\n";
    }
};

Store resolve_store(const std::string& flag_value) {
    if (!flag_value.empty()) return Store{flag_value};
    if (const char* env = std::getenv("DJE_STORE"); env && *env) return Store{env};
    throw std::runtime_error("no store given (use --store or set DJE_STORE)");
}

dje::GridFormat format_of_path(const std::string& path) {
    return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0
               ? dje::GridFormat::Csv
               : dje::GridFormat::Binary;
}

std::vector<double> parse_double_list(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    if (out.empty()) throw std::runtime_error(std::string(what) + ": empty list");
    return out;
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
    std::vector<int> out;
    for (double v : parse_double_list(text, what)) out.push_back(static_cast<int>(v));
    return out;
}

Region parse_region(const std::string& text) {
    const auto v = parse_int_list(text, "--region");
    if (v.size() != 4) throw std::runtime_error("--region must be lat0,lon0,height,width");
    return Region{v[0], v[1], v[2], v[3]};
}

std::pair<int, int> parse_k_range(const std::string& text) {
    const auto pos = text.find("..");
    if (pos == std::string::npos) throw std::runtime_error("--k-range must be a..b");
    return {std::stoi(text.substr(0, pos)), std::stoi(text.substr(pos + 2))};
}

// "lat,lon,h,w,sigma;lat,lon,h,w,sigma;..."
std::vector<dje::NoiseTile> parse_noise_tiles(const std::string& text) {
    std::vector<dje::NoiseTile> out;
    std::stringstream ss(text);
    std::string piece;
    while (std::getline(ss, piece, ';')) {
        if (piece.empty()) continue;
        const auto v = parse_double_list(piece, "--tiles");
        if (v.size() != 5) throw std::runtime_error("--tiles entries must be lat,lon,h,w,sigma");
        dje::NoiseTile t;
        t.region = Region{static_cast<int>(v[0]), static_cast<int>(v[1]),
                          static_cast<int>(v[2]), static_cast<int>(v[3])};
        t.sigma = v[4];
        out.push_back(t);
    }
    if (out.empty()) throw std::runtime_error("--tiles: empty spec");
    return out;
}

void emit(const json& doc) { std::cout << doc.dump(2) << "\n"; }

// ---------------------------------------------------------------- ingest ---

int cmd_ingest(const std::string& input, const std::string& format, const std::string& out_root,
               std::string name, const std::string& missing) {
    Store store{out_root};
    store.ensure_layout();
    if (name.empty()) name = fs::path(input).stem().string();
    const dje::GridFormat fmt =
        format == "csv" ? dje::GridFormat::Csv : dje::GridFormat::Binary;
    const dje::MissingPolicy policy = missing == "interpolate"
                                          ? dje::MissingPolicy::InterpolateTime
                                          : dje::MissingPolicy::Reject;
    const STGrid grid = dje::load_grid(input, fmt, policy);
    dje::write_grid(grid, store.dataset_path(name), dje::GridFormat::Binary);

    json doc;
    doc["dataset"] = name;
    doc["lat_count"] = grid.lat_count();
    doc["lon_count"] = grid.lon_count();
    doc["time_count"] = grid.time_count();
    doc["path"] = store.dataset_path(name);
    emit(doc);
    std::cerr << "ingested " << name << ": " << grid.lat_count() << "x" << grid.lon_count()
              << "x" << grid.time_count() << "\n";
    return 0;
}

// ------------------------------------------------------------ preprocess ---

int cmd_preprocess(const Store& store, const std::string& dataset, int seasonality,
                   const std::string& k_range, std::uint64_t seed) {
    const STGrid grid = store.load_dataset(dataset);
    const auto [k_min, k_max] = parse_k_range(k_range);

    auto t0 = Clock::now();
    const dje::FeatureMap features = dje::extract_features(grid, seasonality);
    const double t_features = seconds_since(t0);
    dje::write_features_csv(features, store.features_path(dataset));

    t0 = Clock::now();
    dje::KMeansOptions opts;
    opts.seed = seed;
    const dje::ClusterMap clusters =
        dje::cluster_features(features, grid.lat_count(), grid.lon_count(), k_min, k_max, opts);
    const double t_clustering = seconds_since(t0);

    t0 = Clock::now();
    const dje::Tiling tiling = dje::build_tiling(clusters, grid);
    const double t_tiling = seconds_since(t0);
    dje::save_tiling(tiling, store.tiling_path(dataset));

    json doc;
    doc["dataset"] = dataset;
    doc["seasonality"] = seasonality;
    doc["k"] = clusters.k;
    doc["silhouette"] = clusters.silhouette;
    doc["tiles"] = tiling.tiles.size();
    doc["timings_s"] = {{"features", t_features},
                        {"clustering", t_clustering},
                        {"tiling", t_tiling},
                        {"total", t_features + t_clustering + t_tiling}};
    emit(doc);
    std::cerr << "preprocess " << dataset << ": k=" << clusters.k << " tiles="
              << tiling.tiles.size() << " silhouette=" << clusters.silhouette << "\n";
    return 0;
}

// -------------------------------------------------------- register-model ---

// Frame-sized window anchored at the training region's corner, shifted back
// inside the grid when the frame overhangs the domain.
Region frame_window(const dje::ModelManifest& m, const STGrid& grid) {
    if (m.frame_height > grid.lat_count() || m.frame_width > grid.lon_count()) {
        throw std::runtime_error("model frame is larger than the dataset");
    }
    const int lat = std::min(m.training_region.start_lat, grid.lat_count() - m.frame_height);
    const int lon = std::min(m.training_region.start_lon, grid.lon_count() - m.frame_width);
    return Region{lat, lon, m.frame_height, m.frame_width};
}

int cmd_register_model(const Store& store, const std::string& manifest_path,
                       const std::string& training, const std::string& noise,
                       std::uint64_t seed, const CliConfig& cfg) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open manifest: " + manifest_path);
    const std::string manifest_text((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    dje::ModelManifest manifest = dje::manifest_from_json(manifest_text);
    if (cfg.timeout_s && !json::parse(manifest_text).contains("timeout_s")) {
        manifest.timeout_s = *cfg.timeout_s;
    }
    if (manifest.dataset_ref.empty()) manifest.dataset_ref = training;

    const STGrid grid = store.load_dataset(training);
    auto registry = store.load_registry();
    registry->register_model(manifest, grid);

    // Unitary cost is measured on a frame-sized batch drawn from the tail of
    // the training window.
    const Region fr = frame_window(manifest, grid);
    const int t_end = std::min(manifest.t0 + manifest.t_len, grid.time_count());
    const int t_in = t_end - manifest.input_frames;
    if (t_in < 0) throw std::runtime_error("training window shorter than the model's input");
    const double uc = registry->measure_unitary_cost(
        manifest.id, dje::batch_from_grid(dje::slice(grid, fr, t_in, manifest.input_frames), 0,
                                          manifest.input_frames));

    // One held-out evaluation pair: inputs end where the training window does
    // and the truth follows, so the truth frames stay outside the window
    // whenever the dataset extends past it.
    const int t_hold = std::min(t_end, grid.time_count() - manifest.output_frames);
    if (t_hold - manifest.input_frames < 0) {
        throw std::runtime_error("dataset too short to build an evaluation pair");
    }
    std::vector<std::pair<STGrid, STGrid>> pairs;
    pairs.emplace_back(dje::slice(grid, fr, t_hold - manifest.input_frames, manifest.input_frames),
                       dje::slice(grid, fr, t_hold, manifest.output_frames));

    const std::vector<double> sigmas = parse_double_list(noise, "--noise");
    dje::CurveBuildTimings timings;
    const dje::LearningCurve curve = dje::build_learning_curve(
        *registry, manifest.id, pairs, sigmas, seed, &timings, cfg.d_max.value_or(5));
    store.save_registry(*registry);

    json doc;
    doc["model"] = manifest.id;
    doc["unitary_cost"] = uc;
    doc["curve"] = json::parse(dje::curve_to_json(curve));
    doc["fit_points"] = curve.fit_points.size();
    doc["timings_s"] = {{"noise", timings.apply_noise_s},
                        {"model", timings.apply_model_s},
                        {"fit", timings.fit_s},
                        {"total", timings.apply_noise_s + timings.apply_model_s + timings.fit_s}};
    emit(doc);
    std::cerr << "registered " << manifest.id << ": uc=" << uc << "s degree=" << curve.degree
              << " points=" << curve.fit_points.size() << "\n";
    return 0;
}

// ----------------------------------------------------------------- query ---

struct QueryArgs {
    std::string dataset;
    std::string region;
    int ptime = 1;
    double mu_e = 0.0;
    std::string strategy = "djensemble";
    std::string model;
    std::string models;
    std::string truth_path;
    double threshold = 0.0;
    bool has_threshold = false;
    std::string mu_sweep;
    std::string sweep_out;
    bool global_norm = false;
};

std::vector<std::string> member_ids(const dje::Registry& registry, const std::string& models) {
    if (models.empty()) return registry.ids();
    std::vector<std::string> out;
    std::stringstream ss(models);
    std::string id;
    while (std::getline(ss, id, ',')) {
        if (id.empty()) continue;
        if (!registry.contains(id)) throw std::runtime_error("unknown model: " + id);
        out.push_back(id);
    }
    if (out.empty()) throw std::runtime_error("--models: empty list");
    return out;
}

STGrid load_truth(const std::string& path, const Region& region, const STGrid& domain_grid,
                  int ptime) {
    STGrid truth = dje::load_grid(path, format_of_path(path));
    if (truth.lat_count() == domain_grid.lat_count() &&
        truth.lon_count() == domain_grid.lon_count() &&
        (truth.lat_count() != region.height || truth.lon_count() != region.width)) {
        truth = dje::slice(truth, region, 0, truth.time_count());
    }
    if (truth.lat_count() != region.height || truth.lon_count() != region.width) {
        throw std::runtime_error("truth extent matches neither the query region nor the domain");
    }
    if (truth.time_count() < ptime) throw std::runtime_error("truth holds fewer steps than ptime");
    return dje::slice(truth, truth.full_region(), 0, ptime);
}

int cmd_query(const Store& store, const QueryArgs& args, const CliConfig& cfg) {
    const STGrid grid = store.load_dataset(args.dataset);
    const auto registry = store.load_registry();
    const Region region = parse_region(args.region);
    if (args.ptime < 1) throw std::runtime_error("--ptime must be >= 1");

    const std::vector<std::string> members = member_ids(*registry, args.models);
    int n_need = 1;
    for (const std::string& id : members) {
        n_need = std::max(n_need, registry->get(id).manifest.input_frames);
    }
    if (grid.time_count() < n_need) throw std::runtime_error("dataset shorter than model input");

    dje::Query q;
    q.region = region;
    q.ptime = args.ptime;
    q.mu_e = args.mu_e;
    q.input = dje::slice(grid, region, grid.time_count() - n_need, n_need);
    dje::validate_query(q, grid.full_region());

    std::optional<STGrid> truth;
    if (!args.truth_path.empty()) {
        truth = load_truth(args.truth_path, region, grid, args.ptime);
    }

    json doc;
    doc["dataset"] = args.dataset;
    doc["strategy"] = args.strategy;
    bool complete = true;

    auto finish = [&](const dje::ExecutionResult& result) {
        doc["report"] = json::parse(dje::report_to_json(result.report));
        if (truth) doc["rmse"] = dje::rmse(result.prediction.values, *truth);
        complete = result.report.complete;
    };

    if (args.strategy == "djensemble") {
        const dje::Tiling tiling = store.load_tiling_for(args.dataset);
        dje::PlanOptions opts;
        opts.global_normalization = args.global_norm;
        opts.dtw_band = cfg.dtw_band.value_or(-1);
        opts.tukey_k = cfg.tukey_k.value_or(1.5);

        int eligible = 0;
        for (const std::string& id : registry->ids()) {
            if (registry->get(id).planner_eligible()) ++eligible;
        }

        if (!args.mu_sweep.empty()) {
            json rows = json::array();
            std::ofstream csv;
            if (!args.sweep_out.empty()) {
                csv.open(args.sweep_out);
                if (!csv) throw std::runtime_error("cannot write " + args.sweep_out);
                csv << "mu_e,total_cost,total_invocations,rmse\n";
            }
            for (double mu : parse_double_list(args.mu_sweep, "--mu-sweep")) {
                const dje::AllocationPlan plan = dje::plan(q, tiling, *registry, mu, opts);
                const dje::ExecutionResult result =
                    dje::execute_plan(plan, *registry, q.input, truth ? &*truth : nullptr);
                complete = complete && result.report.complete;
                json row;
                row["mu_e"] = mu;
                row["total_cost"] = plan.total_cost;
                row["total_invocations"] = result.report.total_invocations;
                row["assignments"] = json::array();
                for (const dje::Assignment& a : plan.assignments) {
                    row["assignments"].push_back({{"tile", a.tile},
                                                  {"model", a.chosen.model},
                                                  {"est_error", a.chosen.est_error},
                                                  {"exec_est", a.chosen.exec_est}});
                }
                if (truth) row["rmse"] = dje::rmse(result.prediction.values, *truth);
                if (csv.is_open()) {
                    csv << mu << "," << plan.total_cost << ","
                        << result.report.total_invocations << ",";
                    if (truth) csv << row["rmse"].get<double>();
                    csv << "\n";
                }
                rows.push_back(std::move(row));
            }
            doc["sweep"] = std::move(rows);
            emit(doc);
            std::cerr << "query sweep over " << doc["sweep"].size() << " mu_e values\n";
            return complete ? 0 : 2;
        }

        const auto t0 = Clock::now();
        const dje::AllocationPlan plan = dje::plan(q, tiling, *registry, args.mu_e, opts);
        const double t_plan = seconds_since(t0);
        doc["plan"] = json::parse(dje::plan_to_json(plan));
        doc["planning"] = {{"elapsed_s", t_plan},
                           {"models", eligible},
                           {"tiles", plan.assignments.size()}};
        finish(dje::execute_plan(plan, *registry, q.input, truth ? &*truth : nullptr));
    } else if (args.strategy == "single") {
        std::string id = args.model;
        if (id.empty()) {
            const auto ids = registry->ids();
            if (ids.size() != 1) {
                throw std::runtime_error("--strategy single needs --model when several exist");
            }
            id = ids[0];
        }
        doc["model"] = id;
        finish(dje::run_single_model(*registry, id, q));
    } else if (args.strategy == "ensemble") {
        doc["members"] = members;
        finish(dje::run_traditional_ensemble(*registry, members, q));
    } else if (args.strategy == "dtw-ensemble") {
        if (!args.has_threshold) throw std::runtime_error("--strategy dtw-ensemble needs --threshold");
        doc["members"] = members;
        doc["threshold"] = args.threshold;
        finish(dje::run_dtw_filtered_ensemble(*registry, members, q, args.threshold));
    } else if (args.strategy == "tile-ensemble") {
        if (!args.has_threshold) throw std::runtime_error("--strategy tile-ensemble needs --threshold");
        const dje::Tiling tiling = store.load_tiling_for(args.dataset);
        doc["members"] = members;
        doc["threshold"] = args.threshold;
        finish(dje::run_tile_aware_ensemble(*registry, tiling, members, q, args.threshold));
    } else if (args.strategy == "stacking") {
        if (grid.time_count() < args.ptime + n_need) {
            throw std::runtime_error("dataset too short to fit stacking weights");
        }
        dje::Query history = q;
        history.input =
            dje::slice(grid, region, grid.time_count() - args.ptime - n_need, n_need);
        const STGrid history_truth =
            dje::slice(grid, region, grid.time_count() - args.ptime, args.ptime);
        const dje::StackingWeights weights =
            dje::fit_stacking(*registry, members, history, history_truth);
        doc["members"] = members;
        doc["weights"] = json::object();
        doc["weights"]["intercept"] = weights.intercept;
        for (const auto& [id, w] : weights.coefficients) doc["weights"][id] = w;
        finish(dje::run_stacking(*registry, weights, q));
    } else {
        throw std::runtime_error("unknown strategy: " + args.strategy);
    }

    emit(doc);
    std::cerr << "query " << args.dataset << " strategy=" << args.strategy
              << (complete ? "" : " (INCOMPLETE)") << "\n";
    return complete ? 0 : 2;
}

// ----------------------------------------------------------------- synth ---

int cmd_synth(const std::string& base_path, const std::string& const_spec,
              const std::string& tiles_spec, std::uint64_t seed, const std::string& out) {
    STGrid base;
    if (!const_spec.empty()) {
        const auto v = parse_double_list(const_spec, "--const");
        if (v.size() != 4) throw std::runtime_error("--const must be lat,lon,time,value");
        base = STGrid(static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]));
        std::fill(base.values().begin(), base.values().end(), static_cast<float>(v[3]));
    } else if (!base_path.empty()) {
        base = dje::load_grid(base_path, format_of_path(base_path));
    } else {
        throw std::runtime_error("synth needs --base or --const");
    }
    const std::vector<dje::NoiseTile> tiles = parse_noise_tiles(tiles_spec);
    const STGrid grid = dje::generate_synthetic(base, tiles, seed);
    dje::write_grid(grid, out, format_of_path(out));

    json doc;
    doc["out"] = out;
    doc["lat_count"] = grid.lat_count();
    doc["lon_count"] = grid.lon_count();
    doc["time_count"] = grid.time_count();
    doc["tiles"] = tiles.size();
    emit(doc);
    std::cerr << "synth -> " << out << "\n";
    return 0;
}

// -------------------------------------------------------- bench distance ---

int cmd_bench_distance(const std::string& n_list, int length, std::uint64_t seed, int runs,
                       const std::string& out_csv) {
    const std::vector<int> sizes = parse_int_list(n_list, "--n");
    json rows = json::array();
    std::ofstream csv;
    if (!out_csv.empty()) {
        csv.open(out_csv);
        if (!csv) throw std::runtime_error("cannot write " + out_csv);
        csv << "n,t_feature_ms,t_shape_ms,ratio\n";
    }
    for (size_t si = 0; si < sizes.size(); ++si) {
        const int n = sizes[si];
        std::vector<std::vector<float>> series(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            dje::GaussianStream g(dje::mix_seed(seed, si, static_cast<std::uint64_t>(i)));
            series[static_cast<size_t>(i)].resize(static_cast<size_t>(length));
            for (float& v : series[static_cast<size_t>(i)]) v = static_cast<float>(g.next());
        }
        const dje::DistanceBenchmarkRow row = dje::benchmark_distance_matrix(series, runs);
        rows.push_back({{"n", row.n},
                        {"t_feature_ms", row.t_feature_ms},
                        {"t_shape_ms", row.t_shape_ms},
                        {"ratio", row.ratio}});
        if (csv.is_open()) {
            csv << row.n << "," << row.t_feature_ms << "," << row.t_shape_ms << "," << row.ratio
                << "\n";
        }
        std::cerr << "n=" << row.n << " feature=" << row.t_feature_ms << "ms shape="
                  << row.t_shape_ms << "ms ratio=" << row.ratio << "\n";
    }
    json doc;
    doc["rows"] = std::move(rows);
    emit(doc);
    return 0;
}

// ----------------------------------------------------- bench paper-tables ---

// CSV input: header group,model,tile,error; one row per (model, tile) cell.
// Each group is planned independently (1x1 tile regions, unit invocations and
// unitary cost) and groups are compared on the aggregate error of the chosen
// plan.
int cmd_bench_tables(const std::string& file, double mu_e, const CliConfig& cfg) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty table file");
    if (line != "group,model,tile,error") {
        throw std::runtime_error("table file must start with: group,model,tile,error");
    }

    struct Group {
        std::vector<std::string> tiles;                      // first-appearance order
        std::map<std::string, std::map<std::string, double>> errors;  // tile -> model -> err
    };
    std::vector<std::string> group_order;
    std::map<std::string, Group> groups;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string group, model, tile, err;
        if (!std::getline(ss, group, ',') || !std::getline(ss, model, ',') ||
            !std::getline(ss, tile, ',') || !std::getline(ss, err)) {
            throw std::runtime_error("bad table row at line " + std::to_string(line_no));
        }
        if (!groups.count(group)) group_order.push_back(group);
        Group& g = groups[group];
        if (!g.errors.count(tile)) g.tiles.push_back(tile);
        g.errors[tile][model] = std::stod(err);
    }
    if (group_order.empty()) throw std::runtime_error("table file has no rows");

    json out_groups = json::array();
    std::vector<std::pair<std::string, double>> aggregates;
    for (const std::string& name : group_order) {
        const Group& g = groups.at(name);
        std::vector<dje::PlannedTile> tiles;
        std::vector<std::vector<dje::RawCandidate>> candidates;
        for (size_t i = 0; i < g.tiles.size(); ++i) {
            tiles.push_back(dje::PlannedTile{static_cast<int>(i),
                                             Region{0, static_cast<int>(i), 1, 1},
                                             {}});
            std::vector<dje::RawCandidate> cands;
            for (const auto& [model, err] : g.errors.at(g.tiles[i])) {
                cands.push_back(dje::RawCandidate{model, err, 1, 1.0});
            }
            candidates.push_back(std::move(cands));
        }
        const dje::AllocationPlan plan =
            dje::allocate(tiles, candidates, mu_e, false, cfg.tukey_k.value_or(1.5));

        json jg;
        jg["group"] = name;
        jg["assignments"] = json::array();
        std::vector<double> errors;
        for (size_t i = 0; i < plan.assignments.size(); ++i) {
            const dje::Assignment& a = plan.assignments[i];
            jg["assignments"].push_back({{"tile", g.tiles[i]},
                                         {"model", a.chosen.model},
                                         {"error", a.chosen.est_error}});
            errors.push_back(a.chosen.est_error);
        }
        const double agg = dje::aggregate_plan_rmse(errors);
        jg["aggregate_error"] = agg;
        aggregates.emplace_back(name, agg);
        out_groups.push_back(std::move(jg));

        std::cerr << name << ": aggregate=" << agg;
        for (size_t i = 0; i < plan.assignments.size(); ++i) {
            std::cerr << " (" << g.tiles[i] << "," << plan.assignments[i].chosen.model << ")";
        }
        std::cerr << "\n";
    }

    json doc;
    doc["mu_e"] = mu_e;
    doc["groups"] = std::move(out_groups);
    if (aggregates.size() >= 2) {
        auto best = aggregates[0];
        auto worst = aggregates[0];
        for (const auto& a : aggregates) {
            if (a.second < best.second) best = a;
            if (a.second > worst.second) worst = a;
        }
        doc["better_group"] = best.first;
        doc["gap_percent"] = (worst.second - best.second) / best.second * 100.0;
    }
    emit(doc);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"disjoint ensembles of spatio-temporal predictors"};
    app.require_subcommand(1);

    std::string store_flag;
    std::string config_path;
    app.add_option("--store", store_flag, "store directory (or env DJE_STORE)");
    app.add_option("--config", config_path, "JSON config with default parameters");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "load a grid file into the store");
    std::string in_input, in_format = "stg1", in_out, in_name, in_missing = "reject";
    ingest->add_option("--input", in_input)->required();
    ingest->add_option("--format", in_format)->check(CLI::IsMember({"stg1", "csv"}));
    ingest->add_option("--out", in_out, "store directory")->required();
    ingest->add_option("--name", in_name, "dataset id (default: input stem)");
    ingest->add_option("--missing", in_missing)->check(CLI::IsMember({"reject", "interpolate"}));

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "features, clustering, tiling");
    std::string pre_dataset, pre_krange = "2..8";
    int pre_seasonality = 1;
    std::uint64_t pre_seed = 0;
    pre->add_option("--dataset", pre_dataset)->required();
    pre->add_option("--seasonality", pre_seasonality);
    pre->add_option("--k-range", pre_krange, "candidate cluster counts, a..b");
    auto* pre_seed_opt = pre->add_option("--seed", pre_seed);

    // register-model
    auto* reg = app.add_subcommand("register-model", "register a model and build its curve");
    std::string reg_manifest, reg_training, reg_noise;
    std::uint64_t reg_seed = 0;
    reg->add_option("--manifest", reg_manifest, "manifest JSON path")->required();
    reg->add_option("--training", reg_training, "training dataset id")->required();
    reg->add_option("--noise", reg_noise, "sigma ladder, comma separated")->required();
    auto* reg_seed_opt = reg->add_option("--seed", reg_seed);

    // query
    auto* query = app.add_subcommand("query", "plan and execute a prediction");
    QueryArgs qa;
    query->add_option("--dataset", qa.dataset)->required();
    query->add_option("--region", qa.region, "lat0,lon0,height,width")->required();
    query->add_option("--ptime", qa.ptime, "future steps to predict")->required();
    query->add_option("--mu-e", qa.mu_e, "cost weight on execution time");
    query->add_option("--strategy", qa.strategy)
        ->check(CLI::IsMember(
            {"djensemble", "single", "ensemble", "dtw-ensemble", "tile-ensemble", "stacking"}));
    query->add_option("--model", qa.model, "model id for --strategy single");
    query->add_option("--models", qa.models, "member ids, comma separated (default: all)");
    query->add_option("--truth", qa.truth_path, "grid with the actual future values");
    auto* thr = query->add_option("--threshold", qa.threshold, "error cutoff for filtered ensembles");
    query->add_option("--mu-sweep", qa.mu_sweep, "comma list of mu_e values to sweep");
    query->add_option("--sweep-out", qa.sweep_out, "CSV path for sweep rows");
    query->add_flag("--global-norm", qa.global_norm, "normalize costs across all tiles");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a noisy synthetic dataset");
    std::string sy_base, sy_const, sy_tiles, sy_out;
    std::uint64_t sy_seed = 0;
    synth->add_option("--base", sy_base, "base grid path");
    synth->add_option("--const", sy_const, "constant base: lat,lon,time,value");
    synth->add_option("--tiles", sy_tiles, "lat,lon,h,w,sigma;...")->required();
    auto* sy_seed_opt = synth->add_option("--seed", sy_seed);
    synth->add_option("--out", sy_out)->required();

    // bench
    auto* bench = app.add_subcommand("bench", "benchmarks and table-driven planning");
    bench->require_subcommand(1);
    auto* bdist = bench->add_subcommand("distance", "feature vs shape clustering cost");
    std::string bd_n = "50,100,150", bd_out;
    int bd_len = 100, bd_runs = 5;
    std::uint64_t bd_seed = 0;
    bdist->add_option("--n", bd_n, "series counts, comma separated");
    bdist->add_option("--len", bd_len, "series length");
    auto* bd_seed_opt = bdist->add_option("--seed", bd_seed);
    bdist->add_option("--runs", bd_runs, "timing repetitions (median)");
    bdist->add_option("--out", bd_out, "CSV output path");

    auto* btab = bench->add_subcommand("paper-tables", "plan over an external error table");
    std::string bt_file;
    double bt_mu = 0.0;
    btab->add_option("--file", bt_file, "CSV: group,model,tile,error")->required();
    btab->add_option("--mu-e", bt_mu);

    CLI11_PARSE(app, argc, argv);

    try {
        CliConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        // Config seed applies wherever the flag was not given explicitly.
        if (cfg.seed) {
            if (!*pre_seed_opt) pre_seed = *cfg.seed;
            if (!*reg_seed_opt) reg_seed = *cfg.seed;
            if (!*sy_seed_opt) sy_seed = *cfg.seed;
            if (!*bd_seed_opt) bd_seed = *cfg.seed;
        }
        qa.has_threshold = thr->count() > 0;

        if (ingest->parsed()) {
            return cmd_ingest(in_input, in_format, in_out, in_name, in_missing);
        }
        if (pre->parsed()) {
            return cmd_preprocess(resolve_store(store_flag), pre_dataset, pre_seasonality,
                                  pre_krange, pre_seed);
        }
        if (reg->parsed()) {
            return cmd_register_model(resolve_store(store_flag), reg_manifest, reg_training,
                                      reg_noise, reg_seed, cfg);
        }
        if (query->parsed()) {
            return cmd_query(resolve_store(store_flag), qa, cfg);
        }
        if (synth->parsed()) {
            return cmd_synth(sy_base, sy_const, sy_tiles, sy_seed, sy_out);
        }
        if (bench->parsed()) {
            if (bdist->parsed()) {
                return cmd_bench_distance(bd_n, bd_len, bd_seed, bd_runs, bd_out);
            }
            return cmd_bench_tables(bt_file, bt_mu, cfg);
        }
    } catch (const std::exception& ex) {
        std::cerr << "dje: error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
