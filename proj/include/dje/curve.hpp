#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dje/grid.hpp"

namespace dje {

class Registry;

// Polynomial map from distribution distance to expected prediction error.
struct LearningCurve {
    std::vector<double> coefficients;  // c0 + c1*d + ... in raw distance units
    int degree = -1;                   // -1 until fitted
    double base_error = 0.0;           // error on the model's clean held-out split
    std::vector<std::pair<double, double>> fit_points;  // (dist, rmse)
    double dist_max = 0.0;

    bool fitted() const { return degree >= 0; }
};

// Cumulative Gaussian perturbation: out[0] = base + N(0, s[0]),
// out[i] = out[i-1] + N(0, s[i]). Sigmas must be non-descending; a zero sigma
// copies the previous level bit-exactly. Deterministic for a fixed seed.
std::vector<STGrid> perturb_sequence(const STGrid& base, const std::vector<double>& sigmas,
                                     std::uint64_t seed);

// Least-squares polynomial through (dist, rmse) points. The degree walks up
// from 1 and stops when 5-fold cross-validation RMSE improves by less than 1%
// or max_degree is hit.
LearningCurve fit_curve(const std::vector<std::pair<double, double>>& points, double base_error,
                        int max_degree = 5);

struct CurveBuildTimings {
    double apply_noise_s = 0.0;
    double apply_model_s = 0.0;
    double fit_s = 0.0;
};

// Full pipeline for one registered model: perturb each evaluation pair with
// the sigma ladder, measure (dtw distance to the model centroid, prediction
// rmse) per level, and fit the curve. Each evaluation pair is (input grid,
// truth grid) over the model's frame window; the input must hold at least
// n frames and the truth at least K. The result is also stored on the record.
LearningCurve build_learning_curve(Registry& registry, const std::string& model_id,
                                   const std::vector<std::pair<STGrid, STGrid>>& eval_pairs,
                                   const std::vector<double>& sigmas, std::uint64_t seed,
                                   CurveBuildTimings* timings = nullptr, int max_degree = 5);

// Polynomial value at min(dist, dist_max), floored at zero.
double estimate_error(const LearningCurve& curve, double dist);

std::string curve_to_json(const LearningCurve& curve);
LearningCurve curve_from_json(const std::string& text);

}  // namespace dje
