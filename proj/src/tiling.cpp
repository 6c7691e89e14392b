#include "dje/tiling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dje {

using nlohmann::json;

const Tile* Tiling::tile_at(int lat, int lon) const {
    for (const Tile& t : tiles)
        if (t.region.contains(lat, lon)) return &t;
    return nullptr;
}

Tiling build_tiling(const ClusterMap& clusters, const STGrid& training_grid) {
    if (clusters.lat_count != training_grid.lat_count() ||
        clusters.lon_count != training_grid.lon_count()) {
        throw std::invalid_argument("build_tiling: cluster map does not match the grid");
    }
    const int H = clusters.lat_count;
    const int W = clusters.lon_count;
    std::vector<char> taken(static_cast<size_t>(H) * W, 0);
    auto is_free = [&](int lat, int lon, int cid) {
        return !taken[static_cast<size_t>(lat) * W + lon] && clusters.at(lat, lon) == cid;
    };

    Tiling tiling;
    tiling.lat_count = H;
    tiling.lon_count = W;
    int next_id = 0;
    for (int lat = 0; lat < H; ++lat) {
        for (int lon = 0; lon < W; ++lon) {
            if (taken[static_cast<size_t>(lat) * W + lon]) continue;
            const int cid = clusters.at(lat, lon);
            int width = 1;
            while (lon + width < W && is_free(lat, lon + width, cid)) ++width;
            int height = 1;
            while (lat + height < H) {
                bool row_ok = true;
                for (int c = lon; c < lon + width; ++c) {
                    if (!is_free(lat + height, c, cid)) {
                        row_ok = false;
                        break;
                    }
                }
                if (!row_ok) break;
                ++height;
            }
            Tile tile;
            tile.id = next_id++;
            tile.region = Region{lat, lon, height, width};
            tile.cluster = cid;
            for (int r = lat; r < lat + height; ++r)
                for (int c = lon; c < lon + width; ++c) taken[static_cast<size_t>(r) * W + c] = 1;
            auto [mlat, mlon] =
                medoid_point(training_grid, tile.region, 0, training_grid.time_count());
            tile.medoid_lat = mlat;
            tile.medoid_lon = mlon;
            const auto series = training_grid.series(mlat, mlon);
            tile.centroid_series.assign(series.begin(), series.end());
            tiling.tiles.push_back(std::move(tile));
        }
    }
    check_tiling(tiling);
    return tiling;
}

void check_tiling(const Tiling& tiling) {
    const int H = tiling.lat_count;
    const int W = tiling.lon_count;
    if (H <= 0 || W <= 0) throw std::invalid_argument("check_tiling: empty domain");
    std::vector<int> cover(static_cast<size_t>(H) * W, 0);
    for (const Tile& t : tiling.tiles) {
        if (t.region.start_lat < 0 || t.region.start_lon < 0 || t.region.end_lat() > H ||
            t.region.end_lon() > W || t.region.height <= 0 || t.region.width <= 0) {
            throw std::runtime_error("check_tiling: tile out of bounds");
        }
        if (!t.region.contains(t.medoid_lat, t.medoid_lon)) {
            throw std::runtime_error("check_tiling: medoid outside its tile");
        }
        for (int lat = t.region.start_lat; lat < t.region.end_lat(); ++lat)
            for (int lon = t.region.start_lon; lon < t.region.end_lon(); ++lon)
                cover[static_cast<size_t>(lat) * W + lon]++;
    }
    for (int c : cover) {
        if (c == 0) throw std::runtime_error("check_tiling: uncovered cell");
        if (c > 1) throw std::runtime_error("check_tiling: overlapping tiles");
    }
}

std::string tiling_to_json(const Tiling& tiling) {
    json doc;
    doc["lat_count"] = tiling.lat_count;
    doc["lon_count"] = tiling.lon_count;
    doc["tiles"] = json::array();
    for (const Tile& t : tiling.tiles) {
        json jt;
        jt["id"] = t.id;
        jt["region"] = {{"start_lat", t.region.start_lat},
                        {"start_lon", t.region.start_lon},
                        {"height", t.region.height},
                        {"width", t.region.width}};
        jt["cluster"] = t.cluster;
        jt["medoid"] = {{"lat", t.medoid_lat}, {"lon", t.medoid_lon}};
        jt["centroid_series"] = t.centroid_series;
        doc["tiles"].push_back(std::move(jt));
    }
    return doc.dump(2);
}

Tiling tiling_from_json(const std::string& text) {
    const json doc = json::parse(text);
    Tiling tiling;
    tiling.lat_count = doc.at("lat_count").get<int>();
    tiling.lon_count = doc.at("lon_count").get<int>();
    for (const json& jt : doc.at("tiles")) {
        Tile t;
        t.id = jt.at("id").get<int>();
        const json& r = jt.at("region");
        t.region = Region{r.at("start_lat").get<int>(), r.at("start_lon").get<int>(),
                          r.at("height").get<int>(), r.at("width").get<int>()};
        t.cluster = jt.at("cluster").get<int>();
        t.medoid_lat = jt.at("medoid").at("lat").get<int>();
        t.medoid_lon = jt.at("medoid").at("lon").get<int>();
        t.centroid_series = jt.at("centroid_series").get<std::vector<float>>();
        tiling.tiles.push_back(std::move(t));
    }
    check_tiling(tiling);
    return tiling;
}

void save_tiling(const Tiling& tiling, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << tiling_to_json(tiling);
    if (!out) throw std::runtime_error("write failed: " + path);
}

Tiling load_tiling(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return tiling_from_json(text);
}

}  // namespace dje
