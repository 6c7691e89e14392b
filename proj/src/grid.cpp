#include "dje/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dje/rng.hpp"

namespace dje {
namespace {

constexpr char kMagic[4] = {'S', 'T', 'G', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

// Linear interpolation along the time axis for every non-finite cell.
// Leading/trailing gaps are filled with the nearest finite value.
void interpolate_series(std::span<float> s) {
    const int n = static_cast<int>(s.size());
    int t = 0;
    while (t < n) {
        if (std::isfinite(s[t])) {
            ++t;
            continue;
        }
        int gap_start = t;
        while (t < n && !std::isfinite(s[t])) ++t;
        const int gap_end = t;  // first finite index after the gap, or n
        const bool has_left = gap_start > 0;
        const bool has_right = gap_end < n;
        if (!has_left && !has_right) {
            throw std::runtime_error("cannot interpolate: series has no finite values");
        }
        if (!has_left) {
            std::fill(s.begin() + gap_start, s.begin() + gap_end, s[gap_end]);
        } else if (!has_right) {
            std::fill(s.begin() + gap_start, s.begin() + gap_end, s[gap_start - 1]);
        } else {
            const float left = s[gap_start - 1];
            const float right = s[gap_end];
            const int span = gap_end - (gap_start - 1);
            for (int i = gap_start; i < gap_end; ++i) {
                const double w = static_cast<double>(i - (gap_start - 1)) / span;
                s[i] = static_cast<float>(left + w * (right - left));
            }
        }
    }
}

void apply_missing_policy(STGrid& grid, MissingPolicy policy) {
    bool any_missing = false;
    for (float v : grid.values()) {
        if (!std::isfinite(v)) {
            any_missing = true;
            break;
        }
    }
    if (!any_missing) return;
    if (policy == MissingPolicy::Reject) {
        throw std::runtime_error("grid contains non-finite values");
    }
    for (int lat = 0; lat < grid.lat_count(); ++lat) {
        for (int lon = 0; lon < grid.lon_count(); ++lon) {
            interpolate_series(grid.series(lat, lon));
        }
    }
}

STGrid load_binary(const std::string& path, MissingPolicy policy) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open grid file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("malformed header: bad magic in " + path);
    }
    const std::uint32_t lat = read_u32(in);
    const std::uint32_t lon = read_u32(in);
    const std::uint32_t time = read_u32(in);
    const double origin_lat = read_f64(in);
    const double origin_lon = read_f64(in);
    const double cell = read_f64(in);
    if (!in) throw std::runtime_error("malformed header: truncated in " + path);
    if (lat == 0 || lon == 0 || time == 0) {
        throw std::runtime_error("malformed header: zero dimension in " + path);
    }
    STGrid grid(static_cast<int>(lat), static_cast<int>(lon), static_cast<int>(time), origin_lat,
                origin_lon, cell);
    const size_t count = grid.values().size();
    in.read(reinterpret_cast<char*>(grid.values().data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != count * sizeof(float)) {
        throw std::runtime_error("payload size mismatch in " + path);
    }
    in.peek();
    if (!in.eof()) throw std::runtime_error("payload size mismatch in " + path);
    if constexpr (std::endian::native == std::endian::big) {
        for (float& v : grid.values()) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            bits = __builtin_bswap32(bits);
            std::memcpy(&v, &bits, 4);
        }
    }
    apply_missing_policy(grid, policy);
    return grid;
}

STGrid load_csv(const std::string& path, MissingPolicy policy) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open grid file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("malformed header: empty file " + path);
    if (line.find("lat") == std::string::npos || line.find("value") == std::string::npos) {
        throw std::runtime_error("malformed header: expected lat,lon,t,value in " + path);
    }
    struct Row {
        int lat, lon, t;
        float value;
    };
    std::vector<Row> rows;
    int max_lat = -1, max_lon = -1, max_t = -1;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Row r;
        char c1, c2, c3;
        if (!(ls >> r.lat >> c1 >> r.lon >> c2 >> r.t >> c3 >> r.value) || c1 != ',' ||
            c2 != ',' || c3 != ',') {
            throw std::runtime_error("malformed row " + std::to_string(line_no) + " in " + path);
        }
        if (r.lat < 0 || r.lon < 0 || r.t < 0) {
            throw std::runtime_error("negative index at row " + std::to_string(line_no));
        }
        max_lat = std::max(max_lat, r.lat);
        max_lon = std::max(max_lon, r.lon);
        max_t = std::max(max_t, r.t);
        rows.push_back(r);
    }
    if (rows.empty()) throw std::runtime_error("payload size mismatch: no rows in " + path);
    STGrid grid(max_lat + 1, max_lon + 1, max_t + 1);
    const size_t expected = grid.values().size();
    if (rows.size() != expected) {
        throw std::runtime_error("payload size mismatch: " + std::to_string(rows.size()) +
                                 " rows for " + std::to_string(expected) + " cells in " + path);
    }
    std::vector<bool> seen(expected, false);
    for (const Row& r : rows) {
        const size_t idx = grid.index(r.lat, r.lon, r.t);
        if (seen[idx]) throw std::runtime_error("duplicate cell in " + path);
        seen[idx] = true;
        grid.at(r.lat, r.lon, r.t) = r.value;
    }
    apply_missing_policy(grid, policy);
    return grid;
}

}  // namespace

Region intersect(const Region& a, const Region& b) {
    const int lat0 = std::max(a.start_lat, b.start_lat);
    const int lon0 = std::max(a.start_lon, b.start_lon);
    const int lat1 = std::min(a.end_lat(), b.end_lat());
    const int lon1 = std::min(a.end_lon(), b.end_lon());
    if (lat1 <= lat0 || lon1 <= lon0) return Region{lat0, lon0, 0, 0};
    return Region{lat0, lon0, lat1 - lat0, lon1 - lon0};
}

STGrid::STGrid(int lat_count, int lon_count, int time_count, double origin_lat, double origin_lon,
               double cell_size)
    : lat_count_(lat_count),
      lon_count_(lon_count),
      time_count_(time_count),
      origin_lat_(origin_lat),
      origin_lon_(origin_lon),
      cell_size_(cell_size) {
    if (lat_count <= 0 || lon_count <= 0 || time_count <= 0) {
        throw std::invalid_argument("grid dimensions must be positive");
    }
    values_.assign(static_cast<size_t>(lat_count) * lon_count * time_count, 0.0f);
}

STGrid load_grid(const std::string& path, GridFormat format, MissingPolicy policy) {
    return format == GridFormat::Binary ? load_binary(path, policy) : load_csv(path, policy);
}

void write_grid(const STGrid& grid, const std::string& path, GridFormat format) {
    std::ofstream out(path, format == GridFormat::Binary ? std::ios::binary : std::ios::out);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    if (format == GridFormat::Binary) {
        out.write(kMagic, 4);
        write_u32(out, static_cast<std::uint32_t>(grid.lat_count()));
        write_u32(out, static_cast<std::uint32_t>(grid.lon_count()));
        write_u32(out, static_cast<std::uint32_t>(grid.time_count()));
        write_f64(out, grid.origin_lat());
        write_f64(out, grid.origin_lon());
        write_f64(out, grid.cell_size());
        if constexpr (std::endian::native == std::endian::little) {
            out.write(reinterpret_cast<const char*>(grid.values().data()),
                      static_cast<std::streamsize>(grid.values().size() * sizeof(float)));
        } else {
            for (float v : grid.values()) {
                std::uint32_t bits;
                std::memcpy(&bits, &v, 4);
                bits = __builtin_bswap32(bits);
                out.write(reinterpret_cast<const char*>(&bits), 4);
            }
        }
    } else {
        out << "lat,lon,t,value\n";
        for (int lat = 0; lat < grid.lat_count(); ++lat) {
            for (int lon = 0; lon < grid.lon_count(); ++lon) {
                for (int t = 0; t < grid.time_count(); ++t) {
                    out << lat << ',' << lon << ',' << t << ',' << grid.at(lat, lon, t) << '\n';
                }
            }
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

STGrid slice(const STGrid& grid, const Region& region, int t_start, int t_len) {
    if (region.height < 1 || region.width < 1) {
        throw std::invalid_argument("slice region must be non-empty");
    }
    if (!grid.full_region().contains(region)) {
        throw std::out_of_range("slice region outside grid bounds");
    }
    if (t_start < 0 || t_len < 1 || t_start + t_len > grid.time_count()) {
        throw std::out_of_range("slice time range outside grid bounds");
    }
    STGrid out(region.height, region.width, t_len,
               grid.origin_lat() + region.start_lat * grid.cell_size(),
               grid.origin_lon() + region.start_lon * grid.cell_size(), grid.cell_size());
    for (int lat = 0; lat < region.height; ++lat) {
        for (int lon = 0; lon < region.width; ++lon) {
            const auto src = grid.series(region.start_lat + lat, region.start_lon + lon);
            std::copy_n(src.begin() + t_start, t_len, out.series(lat, lon).begin());
        }
    }
    return out;
}

STGrid generate_synthetic(const STGrid& base, const std::vector<NoiseTile>& tiles,
                          std::uint64_t seed) {
    if (tiles.empty()) throw std::invalid_argument("tile list is empty");
    long long covered = 0;
    for (size_t i = 0; i < tiles.size(); ++i) {
        const Region& r = tiles[i].region;
        if (r.height < 1 || r.width < 1 || !base.full_region().contains(r)) {
            throw std::invalid_argument("noise tile outside base region");
        }
        covered += r.area();
        for (size_t j = i + 1; j < tiles.size(); ++j) {
            if (intersect(r, tiles[j].region).area() > 0) {
                throw std::invalid_argument("noise tiles overlap");
            }
        }
    }
    if (covered != base.point_count()) {
        throw std::invalid_argument("noise tiles do not cover the base region");
    }
    STGrid out = base;
    for (size_t i = 0; i < tiles.size(); ++i) {
        const Region& r = tiles[i].region;
        const double sigma = tiles[i].sigma;
        GaussianStream noise(mix_seed(seed, i));
        if (sigma == 0.0) continue;
        for (int lat = r.start_lat; lat < r.end_lat(); ++lat) {
            for (int lon = r.start_lon; lon < r.end_lon(); ++lon) {
                auto s = out.series(lat, lon);
                for (float& v : s) v = static_cast<float>(v + sigma * noise.next());
            }
        }
    }
    return out;
}

std::pair<int, int> medoid_point(const STGrid& grid, const Region& region, int t0, int t_len) {
    if (!grid.full_region().contains(region) || region.area() < 1) {
        throw std::out_of_range("medoid_point: region outside grid");
    }
    if (t0 < 0 || t_len < 1 || t0 + t_len > grid.time_count()) {
        throw std::out_of_range("medoid_point: time window outside grid");
    }
    const int n = static_cast<int>(region.area());
    std::vector<const float*> series(static_cast<size_t>(n));
    std::vector<std::pair<int, int>> points(static_cast<size_t>(n));
    int idx = 0;
    for (int lat = region.start_lat; lat < region.end_lat(); ++lat) {
        for (int lon = region.start_lon; lon < region.end_lon(); ++lon) {
            series[idx] = grid.series(lat, lon).data() + t0;
            points[idx] = {lat, lon};
            ++idx;
        }
    }
    if (n == 1) return points[0];
    std::vector<double> total(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (int t = 0; t < t_len; ++t) {
                const double d = static_cast<double>(series[i][t]) - series[j][t];
                s += d * d;
            }
            const double dist = std::sqrt(s);
            total[i] += dist;
            total[j] += dist;
        }
    }
    int best = 0;
    for (int i = 1; i < n; ++i) {
        if (total[i] < total[best]) best = i;  // strict keeps the first (lat, lon)
    }
    return points[best];
}

void validate_query(const Query& q, const Region& domain) {
    if (q.ptime < 1) throw std::invalid_argument("ptime must be >= 1");
    if (q.region.height < 1 || q.region.width < 1 || !domain.contains(q.region)) {
        throw std::out_of_range("query region outside domain");
    }
    if (q.input.lat_count() != q.region.height || q.input.lon_count() != q.region.width) {
        throw std::invalid_argument("query input extent does not match region");
    }
    if (q.mu_e < 0.0 || q.mu_e > 1.0) throw std::invalid_argument("mu_e must be in [0,1]");
}

}  // namespace dje
