#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dje {

// Rectangular spatial window in grid-index space.
struct Region {
    int start_lat = 0;
    int start_lon = 0;
    int height = 0;
    int width = 0;

    int end_lat() const { return start_lat + height; }
    int end_lon() const { return start_lon + width; }
    long long area() const { return static_cast<long long>(height) * width; }

    bool contains(int lat, int lon) const {
        return lat >= start_lat && lat < end_lat() && lon >= start_lon && lon < end_lon();
    }
    bool contains(const Region& other) const {
        return other.start_lat >= start_lat && other.start_lon >= start_lon &&
               other.end_lat() <= end_lat() && other.end_lon() <= end_lon();
    }
    bool operator==(const Region& other) const = default;
};

// Intersection of two windows; height/width are 0 when they do not overlap.
Region intersect(const Region& a, const Region& b);

// Dense (lat, lon, time) grid of one scalar variable. The time axis is the
// innermost dimension so a point's series is contiguous.
class STGrid {
  public:
    STGrid() = default;
    STGrid(int lat_count, int lon_count, int time_count, double origin_lat = 0.0,
           double origin_lon = 0.0, double cell_size = 1.0);

    int lat_count() const { return lat_count_; }
    int lon_count() const { return lon_count_; }
    int time_count() const { return time_count_; }
    double origin_lat() const { return origin_lat_; }
    double origin_lon() const { return origin_lon_; }
    double cell_size() const { return cell_size_; }

    Region full_region() const { return Region{0, 0, lat_count_, lon_count_}; }
    long long point_count() const { return static_cast<long long>(lat_count_) * lon_count_; }

    float& at(int lat, int lon, int t) { return values_[index(lat, lon, t)]; }
    float at(int lat, int lon, int t) const { return values_[index(lat, lon, t)]; }

    std::span<const float> series(int lat, int lon) const {
        return {values_.data() + index(lat, lon, 0), static_cast<size_t>(time_count_)};
    }
    std::span<float> series(int lat, int lon) {
        return {values_.data() + index(lat, lon, 0), static_cast<size_t>(time_count_)};
    }

    const std::vector<float>& values() const { return values_; }
    std::vector<float>& values() { return values_; }

    size_t index(int lat, int lon, int t) const {
        return (static_cast<size_t>(lat) * lon_count_ + lon) * time_count_ + t;
    }

  private:
    int lat_count_ = 0;
    int lon_count_ = 0;
    int time_count_ = 0;
    double origin_lat_ = 0.0;
    double origin_lon_ = 0.0;
    double cell_size_ = 1.0;
    std::vector<float> values_;
};

enum class GridFormat { Binary, Csv };

// What to do with NaN/Inf cells found at load time.
enum class MissingPolicy { Reject, InterpolateTime };

STGrid load_grid(const std::string& path, GridFormat format,
                 MissingPolicy policy = MissingPolicy::Reject);
void write_grid(const STGrid& grid, const std::string& path, GridFormat format);

// Copies a spatial window and time range into a new grid. The source is left
// untouched; origin coordinates shift with the window.
STGrid slice(const STGrid& grid, const Region& region, int t_start, int t_len);

struct NoiseTile {
    Region region;
    double sigma = 0.0;
};

// Adds i.i.d. per-cell-per-step Gaussian noise, one sigma per tile. The tiles
// must partition the base region exactly.
STGrid generate_synthetic(const STGrid& base, const std::vector<NoiseTile>& tiles,
                          std::uint64_t seed);

// Medoid of the point series inside `region`, restricted to the time window
// [t0, t0 + t_len): the member whose summed Euclidean distance to the other
// members is smallest. Ties take the smallest (lat, lon). Returns (lat, lon).
std::pair<int, int> medoid_point(const STGrid& grid, const Region& region, int t0, int t_len);

// A predictive query over a spatial window of the domain.
struct Query {
    Region region;
    int ptime = 1;
    std::string variable = "value";
    STGrid input;  // spatial extent equals `region`; holds the input frames
    std::string metric = "rmse";
    double mu_e = 0.0;
};

void validate_query(const Query& q, const Region& domain);

}  // namespace dje
