#pragma once

#include <string>
#include <vector>

#include "dje/clustering.hpp"
#include "dje/grid.hpp"

namespace dje {

struct Tile {
    int id = 0;
    Region region;
    int cluster = 0;                // cluster id shared by every cell in the tile
    int medoid_lat = 0;            // representative point for distance queries
    int medoid_lon = 0;
    std::vector<float> centroid_series;  // training series at the medoid
};

struct Tiling {
    int lat_count = 0;
    int lon_count = 0;
    std::vector<Tile> tiles;

    const Tile* tile_at(int lat, int lon) const;
};

// Covers the grid with disjoint rectangles, each contained in one cluster.
// Greedy maximal-rectangle scan: walk row-major, grow each untiled cell right
// while the cluster id matches, then down while the whole row matches. The
// result is deterministic and covers every cell exactly once.
Tiling build_tiling(const ClusterMap& clusters, const STGrid& training_grid);

// Validates the disjoint-and-covering invariant; throws on violation.
void check_tiling(const Tiling& tiling);

std::string tiling_to_json(const Tiling& tiling);
Tiling tiling_from_json(const std::string& text);

void save_tiling(const Tiling& tiling, const std::string& path);
Tiling load_tiling(const std::string& path);

}  // namespace dje
