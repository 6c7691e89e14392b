#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace dje {

struct DtwOptions {
    bool want_path = false;
    // Sakoe-Chiba band half-width; < 0 disables the band.
    int band = -1;
    // Local cost: |a-b| by default, (a-b)^2 when true.
    bool squared = false;
};

struct DtwResult {
    double cost = 0.0;
    std::vector<std::pair<int, int>> path;  // filled only when requested
};

// Classic dynamic-time-warping distance with steps {(1,0),(0,1),(1,1)}.
DtwResult dtw(std::span<const float> a, std::span<const float> b, const DtwOptions& opts = {});

double feature_distance(std::span<const double> fa, std::span<const double> fb);

struct DistanceBenchmarkRow {
    int n = 0;
    double t_feature_ms = 0.0;
    double t_shape_ms = 0.0;
    double ratio = 0.0;
};

// Wall-time comparison of the two clustering-distance paths over n series:
// GLD feature extraction + pairwise Euclidean vs pairwise DTW. Median of
// `runs` timings per path.
DistanceBenchmarkRow benchmark_distance_matrix(const std::vector<std::vector<float>>& series,
                                               int runs = 5);

}  // namespace dje
