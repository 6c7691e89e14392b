#include "dje/curve.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dje/distance.hpp"
#include "dje/linalg.hpp"
#include "dje/registry.hpp"
#include "dje/rng.hpp"

namespace dje {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Least-squares polynomial of the given degree via normal equations.
// x values are expected pre-scaled to about [0, 1].
std::vector<double> poly_fit(const std::vector<double>& x, const std::vector<double>& y,
                             int degree) {
    const int terms = degree + 1;
    std::vector<std::vector<double>> ata(terms, std::vector<double>(terms, 0.0));
    std::vector<double> aty(terms, 0.0);
    std::vector<double> powers(2 * degree + 1);
    for (size_t i = 0; i < x.size(); ++i) {
        powers[0] = 1.0;
        for (int k = 1; k <= 2 * degree; ++k) powers[k] = powers[k - 1] * x[i];
        for (int r = 0; r < terms; ++r) {
            for (int c = 0; c < terms; ++c) ata[r][c] += powers[r + c];
            aty[r] += powers[r] * y[i];
        }
    }
    return solve_dense(std::move(ata), std::move(aty));
}

double poly_eval(const std::vector<double>& coef, double x) {
    double v = 0.0;
    for (size_t k = coef.size(); k-- > 0;) v = v * x + coef[k];
    return v;
}

// k-fold CV RMSE for one degree. Points must be sorted by x; folds are taken
// round-robin so every fold spans the distance range.
double cv_rmse(const std::vector<double>& x, const std::vector<double>& y, int degree, int folds) {
    const size_t n = x.size();
    double total_sq = 0.0;
    size_t total_n = 0;
    for (int f = 0; f < folds; ++f) {
        std::vector<double> tx, ty;
        std::vector<size_t> held;
        for (size_t i = 0; i < n; ++i) {
            if (static_cast<int>(i % folds) == f) {
                held.push_back(i);
            } else {
                tx.push_back(x[i]);
                ty.push_back(y[i]);
            }
        }
        if (held.empty()) continue;
        if (tx.size() < static_cast<size_t>(degree + 1)) {
            return std::numeric_limits<double>::infinity();
        }
        std::vector<double> coef;
        try {
            coef = poly_fit(tx, ty, degree);
        } catch (const std::runtime_error&) {
            return std::numeric_limits<double>::infinity();
        }
        for (size_t i : held) {
            const double r = poly_eval(coef, x[i]) - y[i];
            total_sq += r * r;
        }
        total_n += held.size();
    }
    if (total_n == 0) return std::numeric_limits<double>::infinity();
    return std::sqrt(total_sq / static_cast<double>(total_n));
}

}  // namespace

std::vector<STGrid> perturb_sequence(const STGrid& base, const std::vector<double>& sigmas,
                                     std::uint64_t seed) {
    if (sigmas.empty()) throw std::invalid_argument("perturb_sequence: no sigmas");
    for (size_t i = 0; i < sigmas.size(); ++i) {
        if (sigmas[i] < 0.0) throw std::invalid_argument("perturb_sequence: negative sigma");
        if (i > 0 && sigmas[i] < sigmas[i - 1]) {
            throw std::invalid_argument("perturb_sequence: sigmas must be ascending");
        }
    }
    std::vector<STGrid> out;
    out.reserve(sigmas.size());
    for (size_t i = 0; i < sigmas.size(); ++i) {
        STGrid g = i == 0 ? base : out.back();
        if (sigmas[i] > 0.0) {
            GaussianStream noise(mix_seed(seed, i));
            for (float& v : g.values()) v = static_cast<float>(v + sigmas[i] * noise.next());
        }
        out.push_back(std::move(g));
    }
    return out;
}

LearningCurve fit_curve(const std::vector<std::pair<double, double>>& points, double base_error,
                        int max_degree) {
    if (points.size() < 4) throw std::invalid_argument("fit_curve: need at least 4 points");
    if (max_degree < 1) throw std::invalid_argument("fit_curve: max_degree must be >= 1");
    for (const auto& [d, e] : points) {
        if (!(d >= 0.0) || !std::isfinite(d) || !std::isfinite(e)) {
            throw std::invalid_argument("fit_curve: bad point");
        }
    }

    LearningCurve curve;
    curve.fit_points = points;
    std::sort(curve.fit_points.begin(), curve.fit_points.end());
    curve.dist_max = curve.fit_points.back().first;
    curve.base_error = base_error;

    const size_t n = curve.fit_points.size();
    const double scale = curve.dist_max > 0.0 ? curve.dist_max : 1.0;
    std::vector<double> x(n), y(n);
    for (size_t i = 0; i < n; ++i) {
        x[i] = curve.fit_points[i].first / scale;
        y[i] = curve.fit_points[i].second;
    }

    // All distances equal: the slope is unidentifiable, keep it flat.
    if (curve.fit_points.back().first - curve.fit_points.front().first < 1e-12) {
        double mean = 0.0;
        for (double v : y) mean += v;
        curve.degree = 1;
        curve.coefficients = {mean / static_cast<double>(n), 0.0};
        return curve;
    }

    const int folds = static_cast<int>(std::min<size_t>(5, n));
    const int cap = std::min<int>(max_degree, static_cast<int>(n) - 2);

    // Walk the degree up while CV improves by at least 1%.
    int best_degree = 1;
    double best_cv = cv_rmse(x, y, 1, folds);
    for (int d = 2; d <= cap; ++d) {
        if (best_cv < 1e-12) break;  // already at numerical zero
        const double c = cv_rmse(x, y, d, folds);
        if ((best_cv - c) / best_cv >= 0.01) {
            best_degree = d;
            best_cv = c;
        } else {
            break;
        }
    }

    const std::vector<double> scaled = poly_fit(x, y, best_degree);
    curve.degree = best_degree;
    curve.coefficients.resize(scaled.size());
    double denom = 1.0;
    for (size_t k = 0; k < scaled.size(); ++k) {
        curve.coefficients[k] = scaled[k] / denom;
        denom *= scale;
    }
    return curve;
}

double estimate_error(const LearningCurve& curve, double dist) {
    if (!curve.fitted()) throw std::logic_error("estimate_error: unfitted curve");
    if (!(dist >= 0.0)) throw std::invalid_argument("estimate_error: negative distance");
    const double clamped = std::min(dist, curve.dist_max);
    return std::max(0.0, poly_eval(curve.coefficients, clamped));
}

LearningCurve build_learning_curve(Registry& registry, const std::string& model_id,
                                   const std::vector<std::pair<STGrid, STGrid>>& eval_pairs,
                                   const std::vector<double>& sigmas, std::uint64_t seed,
                                   CurveBuildTimings* timings, int max_degree) {
    const ModelRecord record = registry.get(model_id);
    const ModelManifest& m = record.manifest;
    if (eval_pairs.empty()) throw std::invalid_argument("build_learning_curve: no eval pairs");
    if (eval_pairs.size() * sigmas.size() < 10) {
        throw std::invalid_argument("build_learning_curve: fewer than 10 evaluation points");
    }
    for (const auto& [in, truth] : eval_pairs) {
        if (in.lat_count() != m.frame_height || in.lon_count() != m.frame_width ||
            truth.lat_count() != m.frame_height || truth.lon_count() != m.frame_width) {
            throw std::invalid_argument("build_learning_curve: eval pair dims != model frame");
        }
        if (in.time_count() < m.input_frames || truth.time_count() < m.output_frames) {
            throw std::invalid_argument("build_learning_curve: eval pair too short");
        }
    }

    CurveBuildTimings local;
    auto t0 = Clock::now();

    // Noise phase: a sigma ladder per pair, input and truth on separate
    // streams (noise is i.i.d. per cell-step, so separate streams are
    // distributionally the same as perturbing one joined grid).
    std::vector<std::vector<STGrid>> pert_in, pert_truth;
    for (size_t r = 0; r < eval_pairs.size(); ++r) {
        pert_in.push_back(perturb_sequence(eval_pairs[r].first, sigmas, mix_seed(seed, r, 0)));
        pert_truth.push_back(perturb_sequence(eval_pairs[r].second, sigmas, mix_seed(seed, r, 1)));
    }
    local.apply_noise_s = seconds_since(t0);

    t0 = Clock::now();
    auto batch_rmse = [&](const STGrid& in, const STGrid& truth) {
        const FrameBatch input =
            batch_from_grid(in, in.time_count() - m.input_frames, m.input_frames);
        const FrameBatch pred = registry.predict(model_id, input);
        const FrameBatch target = batch_from_grid(truth, 0, m.output_frames);
        double sq = 0.0;
        size_t count = 0;
        for (int f = 0; f < m.output_frames; ++f) {
            const auto& pf = pred.frames[static_cast<size_t>(f)];
            const auto& tf = target.frames[static_cast<size_t>(f)];
            for (size_t i = 0; i < pf.size(); ++i) {
                const double d = static_cast<double>(pf[i]) - tf[i];
                sq += d * d;
                ++count;
            }
        }
        return std::sqrt(sq / static_cast<double>(count));
    };

    std::vector<std::pair<double, double>> points;
    size_t failures = 0;
    for (size_t r = 0; r < eval_pairs.size(); ++r) {
        for (size_t i = 0; i < sigmas.size(); ++i) {
            const STGrid& in = pert_in[r][i];
            try {
                const double err = batch_rmse(in, pert_truth[r][i]);
                const auto [mlat, mlon] = medoid_point(in, in.full_region(), 0, in.time_count());
                const double dist =
                    dtw(std::span<const float>(record.training_centroid), in.series(mlat, mlon))
                        .cost;
                points.emplace_back(dist, err);
            } catch (const std::runtime_error&) {
                ++failures;  // backend failure: skip the point
            }
        }
    }
    if (points.empty()) throw std::runtime_error("build_learning_curve: all predictions failed");
    if (points.size() < 10) {
        throw std::runtime_error("build_learning_curve: fewer than 10 surviving points");
    }

    // Base error: the model on its clean held-out pairs.
    double base_sq = 0.0;
    size_t base_n = 0;
    for (const auto& [in, truth] : eval_pairs) {
        const double e = batch_rmse(in, truth);
        base_sq += e * e;
        ++base_n;
    }
    local.apply_model_s = seconds_since(t0);

    t0 = Clock::now();
    LearningCurve curve =
        fit_curve(points, std::sqrt(base_sq / static_cast<double>(base_n)), max_degree);
    local.fit_s = seconds_since(t0);

    registry.set_curve(model_id, curve);
    if (timings) *timings = local;
    return curve;
}

std::string curve_to_json(const LearningCurve& curve) {
    json doc;
    doc["degree"] = curve.degree;
    doc["coefficients"] = curve.coefficients;
    doc["base_error"] = curve.base_error;
    doc["dist_max"] = curve.dist_max;
    doc["fit_points"] = json::array();
    for (const auto& [d, e] : curve.fit_points) doc["fit_points"].push_back({d, e});
    return doc.dump(2);
}

LearningCurve curve_from_json(const std::string& text) {
    const json doc = json::parse(text);
    LearningCurve curve;
    curve.degree = doc.at("degree").get<int>();
    curve.coefficients = doc.at("coefficients").get<std::vector<double>>();
    curve.base_error = doc.at("base_error").get<double>();
    curve.dist_max = doc.at("dist_max").get<double>();
    for (const json& p : doc.at("fit_points")) {
        curve.fit_points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    }
    if (curve.degree >= 0 &&
        curve.coefficients.size() != static_cast<size_t>(curve.degree) + 1) {
        throw std::invalid_argument("curve json: coefficient count does not match degree");
    }
    return curve;
}

}  // namespace dje
