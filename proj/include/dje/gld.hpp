#pragma once

#include <span>
#include <string>
#include <vector>

#include "dje/grid.hpp"

namespace dje {

// Generalized Lambda Distribution in the RS parametrization:
//   Q(u) = lambda1 + (u^lambda3 - (1-u)^lambda4) / lambda2
struct GldParams {
    double lambda1 = 0.0;
    double lambda2 = 1.0;
    double lambda3 = 0.0;
    double lambda4 = 0.0;
};

struct GldFit {
    GldParams params;
    bool degraded = false;   // set when no moment-matching solution was reached
    double moment_gap = 0.0; // residual (skew, kurtosis) squared error
};

double gld_quantile(const GldParams& params, double u);

// Monotonicity of Q sampled on a grid of equispaced u values.
bool gld_params_valid(const GldParams& params, int sample_points = 1000, double tol = 1e-9);

// Method-of-moments fit: matches mean/variance in closed form and searches
// (lambda3, lambda4) for skewness/kurtosis. Requires >= 50 samples with
// nonzero variance.
GldFit fit_gld(std::span<const float> samples);
GldFit fit_gld(std::span<const double> samples);

// Population moments implied by a parameter set: {mean, variance, skewness,
// kurtosis}. Throws when the fourth moment does not exist.
struct GldMoments {
    double mean = 0.0;
    double variance = 0.0;
    double skewness = 0.0;
    double kurtosis = 0.0;
};
GldMoments gld_moments(const GldParams& params);

struct FeatureEntry {
    int lat = 0;
    int lon = 0;
    std::vector<double> lambdas;  // 4 per season, concatenated
};

struct FeatureMap {
    int seasons = 1;
    std::vector<FeatureEntry> entries;  // row-major point order

    size_t dim() const { return static_cast<size_t>(seasons) * 4; }
};

// One GLD fit per point per season; season s covers the s-th contiguous block
// of floor(time_count / seasonality) steps.
FeatureMap extract_features(const STGrid& grid, int seasonality = 1);

void write_features_csv(const FeatureMap& map, const std::string& path);
FeatureMap load_features_csv(const std::string& path);

}  // namespace dje
