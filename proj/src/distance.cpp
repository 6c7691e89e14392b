#include "dje/distance.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dje/gld.hpp"

namespace dje {
namespace {

double local_cost(float a, float b, bool squared) {
    const double d = static_cast<double>(a) - b;
    return squared ? d * d : std::abs(d);
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

// Standardized-moment feature vector for series too short for a GLD fit; the
// same statistics the fit consumes, at the same linear cost per series.
std::array<double, 4> moment_features(const std::vector<float>& xs) {
    const auto n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (float x : xs) mean += x;
    mean /= n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (float x : xs) {
        const double d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    std::array<double, 4> f = {mean, std::sqrt(m2), 0.0, 0.0};
    if (m2 > 0.0) {
        f[2] = m3 / std::pow(m2, 1.5);
        f[3] = m4 / (m2 * m2);
    }
    return f;
}

}  // namespace

DtwResult dtw(std::span<const float> a, std::span<const float> b, const DtwOptions& opts) {
    const int n = static_cast<int>(a.size());
    const int m = static_cast<int>(b.size());
    if (n == 0 || m == 0) throw std::invalid_argument("dtw: empty series");
    const double inf = std::numeric_limits<double>::infinity();

    // With a band, cells |i-j| > band are unreachable; the band must admit at
    // least the diagonal-ish path, so widen it to cover the size difference.
    int band = opts.band;
    if (band >= 0) band = std::max(band, std::abs(n - m));

    if (!opts.want_path) {
        std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
        prev[0] = 0.0;
        for (int i = 1; i <= n; ++i) {
            cur[0] = inf;
            const int j_lo = band >= 0 ? std::max(1, i - band) : 1;
            const int j_hi = band >= 0 ? std::min(m, i + band) : m;
            for (int j = 1; j < j_lo; ++j) cur[j] = inf;
            for (int j = j_lo; j <= j_hi; ++j) {
                const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
                cur[j] = local_cost(a[i - 1], b[j - 1], opts.squared) + best;
            }
            for (int j = j_hi + 1; j <= m; ++j) cur[j] = inf;
            std::swap(prev, cur);
        }
        return DtwResult{prev[m], {}};
    }

    std::vector<double> dp(static_cast<size_t>(n + 1) * (m + 1), inf);
    auto cell = [&](int i, int j) -> double& { return dp[static_cast<size_t>(i) * (m + 1) + j]; };
    cell(0, 0) = 0.0;
    for (int i = 1; i <= n; ++i) {
        const int j_lo = band >= 0 ? std::max(1, i - band) : 1;
        const int j_hi = band >= 0 ? std::min(m, i + band) : m;
        for (int j = j_lo; j <= j_hi; ++j) {
            const double best = std::min({cell(i - 1, j), cell(i, j - 1), cell(i - 1, j - 1)});
            cell(i, j) = local_cost(a[i - 1], b[j - 1], opts.squared) + best;
        }
    }
    DtwResult result;
    result.cost = cell(n, m);
    int i = n, j = m;
    while (i > 0 && j > 0) {
        result.path.emplace_back(i - 1, j - 1);
        const double diag = cell(i - 1, j - 1), up = cell(i - 1, j), left = cell(i, j - 1);
        if (diag <= up && diag <= left) {
            --i;
            --j;
        } else if (up <= left) {
            --i;
        } else {
            --j;
        }
    }
    std::reverse(result.path.begin(), result.path.end());
    return result;
}

double feature_distance(std::span<const double> fa, std::span<const double> fb) {
    if (fa.size() != fb.size()) throw std::invalid_argument("feature_distance: length mismatch");
    double sum = 0.0;
    for (size_t i = 0; i < fa.size(); ++i) {
        const double d = fa[i] - fb[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

DistanceBenchmarkRow benchmark_distance_matrix(const std::vector<std::vector<float>>& series,
                                               int runs) {
    const int n = static_cast<int>(series.size());
    if (n < 10) throw std::invalid_argument("benchmark needs at least 10 series");
    if (runs < 1) runs = 1;

    const bool gld_sized = series.front().size() >= 50;
    std::vector<double> feature_times, shape_times;
    volatile double sink = 0.0;
    for (int run = 0; run < runs; ++run) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<std::array<double, 4>> feats(n);
        for (int i = 0; i < n; ++i) {
            if (gld_sized) {
                const GldParams p = fit_gld(series[i]).params;
                feats[i] = {p.lambda1, p.lambda2, p.lambda3, p.lambda4};
            } else {
                feats[i] = moment_features(series[i]);
            }
        }
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                acc += feature_distance(feats[i], feats[j]);
            }
        }
        sink = sink + acc;
        feature_times.push_back(elapsed_ms(t0));

        t0 = std::chrono::steady_clock::now();
        acc = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                acc += dtw(series[i], series[j]).cost;
            }
        }
        sink = sink + acc;
        shape_times.push_back(elapsed_ms(t0));
    }
    auto median = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    DistanceBenchmarkRow row;
    row.n = n;
    row.t_feature_ms = median(feature_times);
    row.t_shape_ms = median(shape_times);
    row.ratio = row.t_shape_ms / std::max(row.t_feature_ms, 1e-9);
    return row;
}

}  // namespace dje
