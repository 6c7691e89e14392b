#pragma once

#include <vector>

#include "dje/gld.hpp"

namespace dje {

struct KMeansResult {
    int k = 0;
    std::vector<int> assignment;                 // one label per input row
    std::vector<std::vector<double>> centroids;  // k rows in the input feature space
    double inertia = 0.0;                        // sum of squared distances to centroids
    int iterations = 0;
};

struct KMeansOptions {
    int max_iterations = 300;
    double tol = 1e-6;      // centroid shift threshold, in standardized space
    uint64_t seed = 0;
    bool standardize = true;  // z-score each feature column before clustering
};

// Lloyd's algorithm with k-means++ seeding. Deterministic for a fixed seed.
KMeansResult kmeans(const std::vector<std::vector<double>>& rows, int k,
                    const KMeansOptions& opts = {});

// Mean silhouette coefficient over all rows; clusters of size one score zero.
double silhouette(const std::vector<std::vector<double>>& rows,
                  const std::vector<int>& assignment, int k);

// Runs kmeans for each k in [k_min, k_max] and returns the k with the best
// silhouette (ties go to the smaller k).
struct KSelection {
    int k = 0;
    double silhouette = 0.0;
    KMeansResult result;
    std::vector<std::pair<int, double>> scores;  // (k, silhouette) per candidate
};
KSelection choose_k(const std::vector<std::vector<double>>& rows, int k_min, int k_max,
                    const KMeansOptions& opts = {});

// Clusters a feature map and returns one cluster id per grid point, row-major
// by (lat, lon). Convenience wrapper used by the preprocessing pipeline.
struct ClusterMap {
    int lat_count = 0;
    int lon_count = 0;
    int k = 0;
    std::vector<int> cid;  // lat_count * lon_count entries
    double silhouette = 0.0;

    int at(int lat, int lon) const { return cid[static_cast<size_t>(lat) * lon_count + lon]; }
};

ClusterMap cluster_features(const FeatureMap& features, int lat_count, int lon_count, int k_min,
                            int k_max, const KMeansOptions& opts = {});

}  // namespace dje
