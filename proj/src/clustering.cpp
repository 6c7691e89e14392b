#include "dje/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dje/rng.hpp"

namespace dje {
namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// Column-wise z-score. Constant columns are left centered at zero so they
// cannot dominate or produce NaNs.
std::vector<std::vector<double>> standardize_rows(const std::vector<std::vector<double>>& rows,
                                                  std::vector<double>* mean_out,
                                                  std::vector<double>* scale_out) {
    const size_t n = rows.size();
    const size_t d = rows[0].size();
    std::vector<double> mean(d, 0.0), scale(d, 1.0);
    for (const auto& r : rows)
        for (size_t j = 0; j < d; ++j) mean[j] += r[j];
    for (size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
    for (size_t j = 0; j < d; ++j) {
        double var = 0.0;
        for (const auto& r : rows) {
            const double x = r[j] - mean[j];
            var += x * x;
        }
        var /= static_cast<double>(n);
        scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    std::vector<std::vector<double>> out(n, std::vector<double>(d));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) out[i][j] = (rows[i][j] - mean[j]) / scale[j];
    if (mean_out) *mean_out = std::move(mean);
    if (scale_out) *scale_out = std::move(scale);
    return out;
}

std::vector<size_t> kmeanspp_seeds(const std::vector<std::vector<double>>& rows, int k,
                                   uint64_t seed) {
    const size_t n = rows.size();
    std::mt19937_64 engine(mix_seed(seed, 0x6b6d7070));
    std::vector<size_t> centers;
    centers.push_back(engine() % n);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist(rows[i], rows[centers.back()]));
            total += d2[i];
        }
        size_t pick = 0;
        if (total <= 0.0) {
            // All remaining points coincide with a center; any choice works.
            pick = engine() % n;
        } else {
            const double r = (static_cast<double>(engine() >> 11) * 0x1.0p-53) * total;
            double acc = 0.0;
            for (size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        }
        centers.push_back(pick);
    }
    return centers;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& rows, int k,
                    const KMeansOptions& opts) {
    const size_t n = rows.size();
    if (n == 0) throw std::invalid_argument("kmeans: no rows");
    if (k < 1 || static_cast<size_t>(k) > n) throw std::invalid_argument("kmeans: bad k");
    const size_t d = rows[0].size();
    for (const auto& r : rows)
        if (r.size() != d) throw std::invalid_argument("kmeans: ragged feature rows");

    std::vector<double> mean, scale;
    const std::vector<std::vector<double>> work =
        opts.standardize ? standardize_rows(rows, &mean, &scale) : rows;

    std::vector<std::vector<double>> centroids;
    for (size_t idx : kmeanspp_seeds(work, k, opts.seed)) centroids.push_back(work[idx]);

    std::vector<int> assignment(n, -1);
    int iter = 0;
    for (; iter < opts.max_iterations; ++iter) {
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (int c = 0; c < k; ++c) {
                const double dist = sq_dist(work[i], centroids[c]);
                if (dist < best) {
                    best = dist;
                    best_c = c;
                }
            }
            assignment[i] = best_c;
        }
        std::vector<std::vector<double>> next(k, std::vector<double>(d, 0.0));
        std::vector<int> counts(k, 0);
        for (size_t i = 0; i < n; ++i) {
            counts[assignment[i]]++;
            for (size_t j = 0; j < d; ++j) next[assignment[i]][j] += work[i][j];
        }
        bool reseeded = false;
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // Re-seed an empty cluster at the point farthest from its
                // centroid; the next assignment pass decides who it captures.
                size_t far = 0;
                double far_d = -1.0;
                for (size_t i = 0; i < n; ++i) {
                    const double dist = sq_dist(work[i], centroids[assignment[i]]);
                    if (dist > far_d) {
                        far_d = dist;
                        far = i;
                    }
                }
                next[c] = work[far];
                reseeded = true;
            } else {
                for (size_t j = 0; j < d; ++j) next[c][j] /= counts[c];
            }
        }
        double shift = 0.0;
        for (int c = 0; c < k; ++c) shift = std::max(shift, sq_dist(centroids[c], next[c]));
        centroids = std::move(next);
        // A re-seed is a centroid jump, so convergence cannot fire on the same
        // pass; the exit assignment must reflect the final centroids.
        if (!reseeded && std::sqrt(shift) < opts.tol) {
            ++iter;
            break;
        }
    }

    KMeansResult res;
    res.k = k;
    res.iterations = iter;
    res.assignment = std::move(assignment);
    res.inertia = 0.0;
    for (size_t i = 0; i < n; ++i) res.inertia += sq_dist(work[i], centroids[res.assignment[i]]);

    // Report centroids in the original feature space.
    res.centroids.assign(k, std::vector<double>(d, 0.0));
    if (opts.standardize) {
        for (int c = 0; c < k; ++c)
            for (size_t j = 0; j < d; ++j) res.centroids[c][j] = centroids[c][j] * scale[j] + mean[j];
    } else {
        res.centroids = std::move(centroids);
    }
    return res;
}

double silhouette(const std::vector<std::vector<double>>& rows, const std::vector<int>& assignment,
                  int k) {
    const size_t n = rows.size();
    if (assignment.size() != n) throw std::invalid_argument("silhouette: size mismatch");
    if (k < 2) return 0.0;
    std::vector<int> counts(k, 0);
    for (int a : assignment) {
        if (a < 0 || a >= k) throw std::invalid_argument("silhouette: label out of range");
        counts[a]++;
    }
    int non_empty = 0;
    for (int c : counts)
        if (c > 0) ++non_empty;
    if (non_empty < 2)
        throw std::invalid_argument("silhouette: need at least 2 non-empty clusters");
    double total = 0.0;
    std::vector<double> mean_d(k);
    for (size_t i = 0; i < n; ++i) {
        std::fill(mean_d.begin(), mean_d.end(), 0.0);
        for (size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            mean_d[assignment[j]] += std::sqrt(sq_dist(rows[i], rows[j]));
        }
        const int own = assignment[i];
        if (counts[own] <= 1) continue;  // singleton scores zero
        const double a = mean_d[own] / (counts[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c == own || counts[c] == 0) continue;
            b = std::min(b, mean_d[c] / counts[c]);
        }
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

KSelection choose_k(const std::vector<std::vector<double>>& rows, int k_min, int k_max,
                    const KMeansOptions& opts) {
    if (k_min < 2) throw std::invalid_argument("choose_k: k_min must be >= 2");
    if (k_max < k_min) throw std::invalid_argument("choose_k: empty k range");
    k_max = std::min<int>(k_max, static_cast<int>(rows.size()) - 1);
    if (k_max < k_min) k_max = k_min;

    KSelection sel;
    sel.silhouette = -2.0;
    for (int k = k_min; k <= k_max; ++k) {
        KMeansResult r = kmeans(rows, k, opts);
        const double s = silhouette(rows, r.assignment, k);
        sel.scores.emplace_back(k, s);
        if (s > sel.silhouette) {  // strict: ties keep the smaller k
            sel.silhouette = s;
            sel.k = k;
            sel.result = std::move(r);
        }
    }
    return sel;
}

ClusterMap cluster_features(const FeatureMap& features, int lat_count, int lon_count, int k_min,
                            int k_max, const KMeansOptions& opts) {
    if (static_cast<size_t>(lat_count) * lon_count != features.entries.size()) {
        throw std::invalid_argument("cluster_features: feature map does not cover the grid");
    }
    // Row-major order by (lat, lon) regardless of how the entries arrived.
    std::vector<const FeatureEntry*> ordered(features.entries.size(), nullptr);
    for (const FeatureEntry& e : features.entries) {
        const size_t idx = static_cast<size_t>(e.lat) * lon_count + e.lon;
        if (e.lat < 0 || e.lat >= lat_count || e.lon < 0 || e.lon >= lon_count || ordered[idx]) {
            throw std::invalid_argument("cluster_features: bad or duplicate feature entry");
        }
        ordered[idx] = &e;
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(ordered.size());
    for (const FeatureEntry* e : ordered) rows.push_back(e->lambdas);

    const KSelection sel = choose_k(rows, k_min, k_max, opts);
    ClusterMap map;
    map.lat_count = lat_count;
    map.lon_count = lon_count;
    map.k = sel.k;
    map.cid = sel.result.assignment;
    map.silhouette = sel.silhouette;
    return map;
}

}  // namespace dje
