#include "dje/gld.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace dje {
namespace {

double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// Raw moments of W = u^l3 - (1-u)^l4 for u ~ U(0,1), k = 1..4, via the
// binomial expansion of W^k in Beta integrals. Finite for l3, l4 > -1/4.
struct RawMoments {
    double v1, v2, v3, v4;
    bool ok;
};

RawMoments raw_moments(double l3, double l4) {
    RawMoments m{0, 0, 0, 0, false};
    if (l3 <= -0.25 || l4 <= -0.25) return m;
    auto term = [&](int k, int j) {
        // C(k,j) * (-1)^j * B(l3*(k-j) + 1, l4*j + 1)
        static const double binom[5][5] = {
            {1, 0, 0, 0, 0}, {1, 1, 0, 0, 0}, {1, 2, 1, 0, 0}, {1, 3, 3, 1, 0}, {1, 4, 6, 4, 1}};
        const double a = l3 * (k - j) + 1.0;
        const double b = l4 * j + 1.0;
        const double value = binom[k][j] * std::exp(log_beta(a, b));
        return (j % 2 == 0) ? value : -value;
    };
    double v[5] = {0, 0, 0, 0, 0};
    for (int k = 1; k <= 4; ++k) {
        double sum = 0.0;
        for (int j = 0; j <= k; ++j) sum += term(k, j);
        v[k] = sum;
        if (!std::isfinite(sum)) return m;
    }
    m.v1 = v[1];
    m.v2 = v[2];
    m.v3 = v[3];
    m.v4 = v[4];
    m.ok = true;
    return m;
}

struct ShapeMoments {
    double alpha3_raw = 0.0;  // skewness for lambda2 > 0; flips sign with lambda2
    double alpha4 = 0.0;
    double mu2 = 0.0;  // variance of W
    double v1 = 0.0;
    bool ok = false;
};

ShapeMoments shape_moments(double l3, double l4) {
    ShapeMoments s;
    const RawMoments m = raw_moments(l3, l4);
    if (!m.ok) return s;
    const double mu2 = m.v2 - m.v1 * m.v1;
    if (!(mu2 > 1e-14)) return s;
    const double mu3 = m.v3 - 3.0 * m.v1 * m.v2 + 2.0 * m.v1 * m.v1 * m.v1;
    const double mu4 = m.v4 - 4.0 * m.v1 * m.v3 + 6.0 * m.v1 * m.v1 * m.v2 -
                       3.0 * m.v1 * m.v1 * m.v1 * m.v1;
    s.alpha3_raw = mu3 / std::pow(mu2, 1.5);
    s.alpha4 = mu4 / (mu2 * mu2);
    s.mu2 = mu2;
    s.v1 = m.v1;
    s.ok = std::isfinite(s.alpha3_raw) && std::isfinite(s.alpha4);
    return s;
}

// Sign of dQ/du over a coarse u grid, up to tolerance. The numerator of the
// derivative is l3*u^(l3-1) + l4*(1-u)^(l4-1); lambda2's sign must match it.
bool derivative_one_signed(double l3, double l4, int sign) {
    static constexpr int kPoints = 33;
    for (int i = 0; i < kPoints; ++i) {
        const double u = (i + 0.5) / kPoints;
        const double g = l3 * std::pow(u, l3 - 1.0) + l4 * std::pow(1.0 - u, l4 - 1.0);
        if (sign * g < -1e-12) return false;
    }
    // Edge behavior dominates for negative shape parameters.
    for (double u : {1e-5, 1.0 - 1e-5}) {
        const double g = l3 * std::pow(u, l3 - 1.0) + l4 * std::pow(1.0 - u, l4 - 1.0);
        if (sign * g < -1e-12) return false;
    }
    return true;
}

struct Objective {
    double g1 = 0.0;  // sample skewness
    double g2 = 0.0;  // sample kurtosis

    // Returns the squared moment residual plus a tiny shrinkage that resolves
    // exact moment ties (the GLD moment map is not injective) toward the
    // smaller-shape representative. `sign` is the admissible lambda2 sign.
    double eval(double l3, double l4, int* sign_out) const {
        const ShapeMoments s = shape_moments(l3, l4);
        if (!s.ok) return 1e12;
        double best = 1e12;
        int best_sign = 0;
        for (int sign : {+1, -1}) {
            if (!derivative_one_signed(l3, l4, sign)) continue;
            const double a3 = sign * s.alpha3_raw;
            const double d3 = a3 - g1;
            const double d4 = s.alpha4 - g2;
            const double value = d3 * d3 + d4 * d4;
            if (value < best) {
                best = value;
                best_sign = sign;
            }
        }
        if (sign_out) *sign_out = best_sign;
        if (best_sign == 0) return 1e12;
        return best + 1e-9 * (l3 * l3 + l4 * l4);
    }
};

struct SearchPoint {
    double l3 = 0.0, l4 = 0.0;
    double value = 1e12;
};

// Nelder-Mead on (lambda3, lambda4).
SearchPoint nelder_mead(const Objective& obj, double l3, double l4) {
    struct Vertex {
        double x, y, f;
    };
    auto feval = [&](double x, double y) { return obj.eval(x, y, nullptr); };
    const double h = 0.05;
    std::array<Vertex, 3> s = {Vertex{l3, l4, feval(l3, l4)},
                               Vertex{l3 + h, l4, feval(l3 + h, l4)},
                               Vertex{l3, l4 + h, feval(l3, l4 + h)}};
    for (int iter = 0; iter < 400; ++iter) {
        std::sort(s.begin(), s.end(), [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
        if (s[2].f - s[0].f < 1e-15) break;
        const double cx = (s[0].x + s[1].x) / 2.0;
        const double cy = (s[0].y + s[1].y) / 2.0;
        const double rx = cx + (cx - s[2].x);
        const double ry = cy + (cy - s[2].y);
        const double fr = feval(rx, ry);
        if (fr < s[0].f) {
            const double ex = cx + 2.0 * (cx - s[2].x);
            const double ey = cy + 2.0 * (cy - s[2].y);
            const double fe = feval(ex, ey);
            s[2] = fe < fr ? Vertex{ex, ey, fe} : Vertex{rx, ry, fr};
        } else if (fr < s[1].f) {
            s[2] = Vertex{rx, ry, fr};
        } else {
            const double kx = cx + 0.5 * (s[2].x - cx);
            const double ky = cy + 0.5 * (s[2].y - cy);
            const double fk = feval(kx, ky);
            if (fk < s[2].f) {
                s[2] = Vertex{kx, ky, fk};
            } else {
                for (int i = 1; i < 3; ++i) {
                    s[i].x = s[0].x + 0.5 * (s[i].x - s[0].x);
                    s[i].y = s[0].y + 0.5 * (s[i].y - s[0].y);
                    s[i].f = feval(s[i].x, s[i].y);
                }
            }
        }
    }
    std::sort(s.begin(), s.end(), [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
    return SearchPoint{s[0].x, s[0].y, s[0].f};
}

// Sum of squared gaps between the candidate quantile function and the sample
// order statistics. The extreme 1% on each side is excluded so heavy-tail
// order-statistic noise cannot drown the mid-sample comparison.
double quantile_discrepancy(const GldParams& p, const std::vector<double>& sorted) {
    const size_t n = sorted.size();
    const size_t trim = n / 100;
    double score = 0.0;
    for (size_t i = trim; i < n - trim; ++i) {
        const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        const double d = gld_quantile(p, u) - sorted[i];
        score += d * d;
    }
    return score;
}

// The moment map (lambda3, lambda4) -> (skewness, kurtosis) folds: distinct
// shape pairs can reproduce the same four moments exactly. Moment residual is
// the primary criterion; near-tied candidates are ranked by how well their
// quantile function tracks the sample when one is available.
GldFit fit_from_moments(double mean, double variance, double g1, double g2,
                        const std::vector<double>& sorted_sample) {
    const Objective obj{g1, g2};

    static const double grid[] = {-0.2, -0.15, -0.1, -0.06, -0.03, 0.03, 0.06, 0.1,
                                  0.15, 0.2,   0.3,  0.45,  0.65,  0.9,  1.2,  1.6,
                                  2.1,  2.8,   3.6,  4.5};
    std::vector<SearchPoint> seeds;
    for (double a : grid) {
        for (double b : grid) {
            const double f = obj.eval(a, b, nullptr);
            if (f < 1e11) seeds.push_back(SearchPoint{a, b, f});
        }
    }
    if (seeds.empty()) throw std::runtime_error("gld fit: no admissible shape region");
    std::sort(seeds.begin(), seeds.end(),
              [](const SearchPoint& a, const SearchPoint& b) { return a.value < b.value; });

    // Refine from well-separated seeds so each fold branch gets its own
    // descent rather than all collapsing into one basin. Fold partners can sit
    // ~0.2 apart in shape space, so the dedup radius must stay below that.
    std::vector<SearchPoint> finals;
    int runs = 0;
    for (const SearchPoint& seed : seeds) {
        bool near = false;
        for (const SearchPoint& f : finals) {
            if (std::abs(f.l3 - seed.l3) < 0.12 && std::abs(f.l4 - seed.l4) < 0.12) near = true;
        }
        if (near) continue;
        const SearchPoint refined = nelder_mead(obj, seed.l3, seed.l4);
        ++runs;
        bool dup = false;
        for (const SearchPoint& f : finals) {
            if (std::abs(f.l3 - refined.l3) < 0.02 && std::abs(f.l4 - refined.l4) < 0.02) dup = true;
        }
        if (!dup) finals.push_back(refined);
        if (finals.size() == 10 || runs == 24) break;
    }
    std::sort(finals.begin(), finals.end(), [](const SearchPoint& a, const SearchPoint& b) {
        if (std::abs(a.value - b.value) > 1e-9) return a.value < b.value;
        return a.l3 * a.l3 + a.l4 * a.l4 < b.l3 * b.l3 + b.l4 * b.l4;
    });

    struct Candidate {
        GldFit fit;
        double residual = 1e12;
    };
    std::vector<Candidate> valid;
    for (const SearchPoint& cand : finals) {
        int sign = 0;
        const double residual = obj.eval(cand.l3, cand.l4, &sign);
        if (sign == 0) continue;
        const ShapeMoments s = shape_moments(cand.l3, cand.l4);
        if (!s.ok) continue;
        GldParams p;
        p.lambda3 = cand.l3;
        p.lambda4 = cand.l4;
        p.lambda2 = sign * std::sqrt(s.mu2 / variance);
        p.lambda1 = mean - s.v1 / p.lambda2;
        if (!gld_params_valid(p)) continue;
        Candidate c;
        c.fit.params = p;
        c.fit.moment_gap =
            std::max(0.0, residual - 1e-9 * (cand.l3 * cand.l3 + cand.l4 * cand.l4));
        c.fit.degraded = c.fit.moment_gap > 1e-8;
        c.residual = c.fit.moment_gap;
        valid.push_back(c);
    }
    if (valid.empty()) throw std::runtime_error("gld fit: no candidate passed the monotonicity check");

    size_t pick = 0;
    if (sorted_sample.size() >= 2 && valid.size() > 1) {
        // Moment residuals within one plausible sampling-noise band count as
        // tied; the data decides between them. Some distributions have several
        // exact parametrizations (the uniform is both (1,1) and (2,2)), and on
        // i.i.d. samples a more flexible tail shape can shave a few percent
        // off the discrepancy by chasing noise, so scores within a generous
        // relative band count as equivalent and the smallest shape norm wins
        // as the canonical representative. Genuinely different fold branches
        // separate by orders of magnitude, far outside the band.
        const double cutoff = valid.front().residual + 1e-3;
        std::vector<double> scores(valid.size(), std::numeric_limits<double>::infinity());
        double best_score = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < valid.size(); ++i) {
            if (valid[i].residual > cutoff) continue;
            scores[i] = quantile_discrepancy(valid[i].fit.params, sorted_sample);
            best_score = std::min(best_score, scores[i]);
        }
        // Canonical preference among equivalent fits: interior shapes beat
        // near-boundary ones (a shape lambda near 0 is the degenerate tail
        // limit and can mimic many distributions), then smaller shape norm.
        // Data that truly needs a near-boundary tail still gets it, because
        // only fits inside the equivalence band are reordered.
        const double score_band = best_score * 1.35 + 1e-12;
        bool best_interior = false;
        double best_norm = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < valid.size(); ++i) {
            if (scores[i] > score_band) continue;
            const GldParams& p = valid[i].fit.params;
            const bool interior = std::min(std::abs(p.lambda3), std::abs(p.lambda4)) >= 0.05;
            const double norm = p.lambda3 * p.lambda3 + p.lambda4 * p.lambda4;
            if (interior != best_interior ? interior : norm < best_norm) {
                best_interior = interior;
                best_norm = norm;
                pick = i;
            }
        }
    }
    return valid[pick].fit;
}

template <typename T>
GldFit fit_gld_impl(std::span<const T> samples) {
    const size_t n = samples.size();
    if (n < 50) throw std::invalid_argument("gld fit: need at least 50 samples");
    double mean = 0.0;
    for (T x : samples) mean += static_cast<double>(x);
    mean /= static_cast<double>(n);
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (T x : samples) {
        const double d = static_cast<double>(x) - mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if (!(m2 > 0.0)) throw std::invalid_argument("gld fit: zero variance");
    const double g1 = m3 / std::pow(m2, 1.5);
    const double g2 = m4 / (m2 * m2);
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    return fit_from_moments(mean, m2, g1, g2, sorted);
}

}  // namespace

double gld_quantile(const GldParams& params, double u) {
    if (!(u > 0.0 && u < 1.0)) throw std::out_of_range("gld quantile: u must be in (0,1)");
    return params.lambda1 +
           (std::pow(u, params.lambda3) - std::pow(1.0 - u, params.lambda4)) / params.lambda2;
}

bool gld_params_valid(const GldParams& params, int sample_points, double tol) {
    if (params.lambda2 == 0.0) return false;
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 1; i <= sample_points; ++i) {
        const double u = static_cast<double>(i) / (sample_points + 1);
        const double q = gld_quantile(params, u);
        if (!std::isfinite(q)) return false;
        if (q < prev - tol) return false;
        prev = q;
    }
    return true;
}

GldFit fit_gld(std::span<const float> samples) { return fit_gld_impl(samples); }
GldFit fit_gld(std::span<const double> samples) { return fit_gld_impl(samples); }

GldMoments gld_moments(const GldParams& params) {
    const ShapeMoments s = shape_moments(params.lambda3, params.lambda4);
    if (!s.ok) throw std::domain_error("gld moments: fourth moment does not exist");
    GldMoments m;
    m.mean = params.lambda1 + s.v1 / params.lambda2;
    m.variance = s.mu2 / (params.lambda2 * params.lambda2);
    m.skewness = (params.lambda2 > 0 ? 1.0 : -1.0) * s.alpha3_raw;
    m.kurtosis = s.alpha4;
    return m;
}

FeatureMap extract_features(const STGrid& grid, int seasonality) {
    if (seasonality < 1) throw std::invalid_argument("seasonality must be >= 1");
    const int season_len = grid.time_count() / seasonality;
    if (season_len < 50) {
        throw std::invalid_argument("season too short for fitting (needs >= 50 steps)");
    }
    FeatureMap map;
    map.seasons = seasonality;
    map.entries.resize(static_cast<size_t>(grid.point_count()));

    const int points = static_cast<int>(grid.point_count());
    const unsigned workers =
        std::max(1u, std::min(std::thread::hardware_concurrency(), 16u));
    std::vector<std::future<void>> futures;
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int p = next.fetch_add(1);
            if (p >= points) return;
            const int lat = p / grid.lon_count();
            const int lon = p % grid.lon_count();
            FeatureEntry entry;
            entry.lat = lat;
            entry.lon = lon;
            entry.lambdas.reserve(map.dim());
            const auto series = grid.series(lat, lon);
            for (int s = 0; s < seasonality; ++s) {
                const auto block = series.subspan(static_cast<size_t>(s) * season_len,
                                                  static_cast<size_t>(season_len));
                const GldFit fit = fit_gld(block);
                entry.lambdas.push_back(fit.params.lambda1);
                entry.lambdas.push_back(fit.params.lambda2);
                entry.lambdas.push_back(fit.params.lambda3);
                entry.lambdas.push_back(fit.params.lambda4);
            }
            map.entries[static_cast<size_t>(p)] = std::move(entry);
        }
    };
    for (unsigned w = 0; w < workers; ++w) futures.push_back(std::async(std::launch::async, worker));
    for (auto& f : futures) f.get();
    return map;
}

void write_features_csv(const FeatureMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "lat,lon,season,l1,l2,l3,l4\n";
    out.precision(17);
    for (const FeatureEntry& e : map.entries) {
        for (int s = 0; s < map.seasons; ++s) {
            out << e.lat << ',' << e.lon << ',' << s;
            for (int k = 0; k < 4; ++k) out << ',' << e.lambdas[static_cast<size_t>(s) * 4 + k];
            out << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

FeatureMap load_features_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("lat,lon,season", 0) != 0) {
        throw std::runtime_error("malformed feature csv header in " + path);
    }
    struct Key {
        int lat, lon;
        bool operator<(const Key& o) const {
            return lat != o.lat ? lat < o.lat : lon < o.lon;
        }
    };
    std::vector<std::pair<Key, std::vector<std::pair<int, std::array<double, 4>>>>> rows;
    auto find_or_add = [&](Key k) -> std::vector<std::pair<int, std::array<double, 4>>>& {
        for (auto& r : rows) {
            if (r.first.lat == k.lat && r.first.lon == k.lon) return r.second;
        }
        rows.emplace_back(k, std::vector<std::pair<int, std::array<double, 4>>>{});
        return rows.back().second;
    };
    int max_season = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        int lat, lon, season;
        char c;
        std::array<double, 4> l{};
        if (!(ls >> lat >> c >> lon >> c >> season >> c >> l[0] >> c >> l[1] >> c >> l[2] >> c >>
              l[3])) {
            throw std::runtime_error("malformed feature csv row in " + path);
        }
        find_or_add(Key{lat, lon}).emplace_back(season, l);
        max_season = std::max(max_season, season);
    }
    FeatureMap map;
    map.seasons = max_season + 1;
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [key, seasons] : rows) {
        std::sort(seasons.begin(), seasons.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        if (static_cast<int>(seasons.size()) != map.seasons) {
            throw std::runtime_error("feature csv missing seasons for a point");
        }
        FeatureEntry e;
        e.lat = key.lat;
        e.lon = key.lon;
        for (auto& [s, l] : seasons) e.lambdas.insert(e.lambdas.end(), l.begin(), l.end());
        map.entries.push_back(std::move(e));
    }
    return map;
}

}  // namespace dje
