#include "dje/registry.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <mutex>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dje {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'T', 'P', 'B'};

constexpr uint32_t bswap32(uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

void store_u32(std::vector<uint8_t>& buf, uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) v = bswap32(v);
    const size_t off = buf.size();
    buf.resize(off + 4);
    std::memcpy(buf.data() + off, &v, 4);
}

void store_f32(std::vector<uint8_t>& buf, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    store_u32(buf, v);
}

uint32_t load_u32(const uint8_t* p) {
    uint32_t v;
    std::memcpy(&v, p, 4);
    if constexpr (std::endian::native == std::endian::big) v = bswap32(v);
    return v;
}

float load_f32(const uint8_t* p) {
    const uint32_t v = load_u32(p);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

std::vector<std::string> split_command(const std::string& command) {
    std::vector<std::string> argv;
    std::istringstream in(command);
    std::string tok;
    while (in >> tok) argv.push_back(tok);
    return argv;
}

bool executable_exists(const std::string& name) {
    if (name.find('/') != std::string::npos) return ::access(name.c_str(), X_OK) == 0;
    const char* path = ::getenv("PATH");
    if (!path) return false;
    std::istringstream in(path);
    std::string dir;
    while (std::getline(in, dir, ':')) {
        if (dir.empty()) continue;
        if (::access((dir + '/' + name).c_str(), X_OK) == 0) return true;
    }
    return false;
}

enum class BuiltinKind { None, Persistence, WindowMean, Ar1, OracleNoise };

struct BackendSpec {
    bool is_subprocess = false;
    BuiltinKind kind = BuiltinKind::None;
    double bias = 0.0;
    std::string command;
};

BackendSpec parse_backend(const std::string& backend) {
    BackendSpec spec;
    if (backend.rfind("subprocess:", 0) == 0) {
        spec.is_subprocess = true;
        spec.command = backend.substr(11);
        const auto argv = split_command(spec.command);
        if (argv.empty() || !executable_exists(argv[0])) {
            throw std::invalid_argument("backend unresolvable: " + backend);
        }
        return spec;
    }
    if (backend.rfind("builtin:", 0) != 0) {
        throw std::invalid_argument("backend unresolvable: " + backend);
    }
    std::string kind = backend.substr(8);
    const size_t colon = kind.find(':');
    std::string opts;
    if (colon != std::string::npos) {
        opts = kind.substr(colon + 1);
        kind = kind.substr(0, colon);
    }
    if (kind == "persistence") {
        spec.kind = BuiltinKind::Persistence;
    } else if (kind == "window-mean") {
        spec.kind = BuiltinKind::WindowMean;
    } else if (kind == "ar1") {
        spec.kind = BuiltinKind::Ar1;
    } else if (kind == "oracle-noise") {
        spec.kind = BuiltinKind::OracleNoise;
    } else {
        throw std::invalid_argument("backend unresolvable: " + backend);
    }
    if (!opts.empty()) {
        if (spec.kind != BuiltinKind::OracleNoise || opts.rfind("bias=", 0) != 0) {
            throw std::invalid_argument("backend unresolvable: " + backend);
        }
        spec.bias = std::stod(opts.substr(5));
    }
    return spec;
}

void ignore_sigpipe_once() {
    static std::once_flag flag;
    std::call_once(flag, [] { ::signal(SIGPIPE, SIG_IGN); });
}

using Clock = std::chrono::steady_clock;

int remaining_ms(Clock::time_point deadline) {
    const auto left =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 60 * 60 * 1000));
}

// One external worker process speaking the binary frame protocol on stdio.
// A handle serves one request at a time; the registry pools them per model.
class SubprocessHandle {
  public:
    explicit SubprocessHandle(const std::string& command) {
        ignore_sigpipe_once();
        const auto argv = split_command(command);
        if (argv.empty()) throw std::invalid_argument("empty subprocess command");

        int to_child[2], from_child[2];
        if (::pipe(to_child) != 0) throw std::runtime_error("pipe failed");
        if (::pipe(from_child) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            throw std::runtime_error("pipe failed");
        }
        pid_ = ::fork();
        if (pid_ < 0) throw std::runtime_error("fork failed");
        if (pid_ == 0) {
            ::dup2(to_child[0], 0);
            ::dup2(from_child[1], 1);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            std::vector<char*> cargv;
            for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
            cargv.push_back(nullptr);
            ::execvp(cargv[0], cargv.data());
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        in_fd_ = to_child[1];
        out_fd_ = from_child[0];
        ::fcntl(in_fd_, F_SETFL, O_NONBLOCK);
        ::fcntl(out_fd_, F_SETFL, O_NONBLOCK);
    }

    ~SubprocessHandle() {
        if (in_fd_ >= 0) ::close(in_fd_);
        if (out_fd_ >= 0) ::close(out_fd_);
        if (pid_ > 0) {
            // Give the worker a moment to exit on EOF, then force it.
            for (int i = 0; i < 20; ++i) {
                if (::waitpid(pid_, nullptr, WNOHANG) != 0) return;
                ::usleep(10 * 1000);
            }
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, nullptr, 0);
        }
    }

    SubprocessHandle(const SubprocessHandle&) = delete;
    SubprocessHandle& operator=(const SubprocessHandle&) = delete;

    FrameBatch call(const FrameBatch& input, int expect_frames, double timeout_s) {
        const auto deadline =
            Clock::now() + std::chrono::microseconds(static_cast<long long>(timeout_s * 1e6));

        std::vector<uint8_t> req;
        req.reserve(16 + input.frames.size() * input.frames[0].size() * 4);
        req.insert(req.end(), kMagic, kMagic + 4);
        store_u32(req, static_cast<uint32_t>(input.count()));
        store_u32(req, static_cast<uint32_t>(input.height));
        store_u32(req, static_cast<uint32_t>(input.width));
        for (const auto& frame : input.frames)
            for (float v : frame) store_f32(req, v);
        write_all(req.data(), req.size(), deadline);

        uint8_t header[16];
        read_all(header, sizeof header, deadline);
        if (std::memcmp(header, kMagic, 4) != 0) {
            throw std::runtime_error("subprocess protocol violation: bad magic");
        }
        const uint32_t k = load_u32(header + 4);
        const uint32_t h = load_u32(header + 8);
        const uint32_t w = load_u32(header + 12);
        if (static_cast<int>(h) != input.height || static_cast<int>(w) != input.width) {
            throw std::runtime_error("subprocess protocol violation: frame dims changed");
        }
        if (static_cast<int>(k) != expect_frames) {
            throw std::runtime_error("subprocess protocol violation: unexpected frame count");
        }
        std::vector<uint8_t> payload(static_cast<size_t>(k) * h * w * 4);
        read_all(payload.data(), payload.size(), deadline);

        FrameBatch out;
        out.height = input.height;
        out.width = input.width;
        out.frames.assign(k, std::vector<float>(static_cast<size_t>(h) * w));
        const uint8_t* p = payload.data();
        for (auto& frame : out.frames)
            for (float& v : frame) {
                v = load_f32(p);
                p += 4;
            }
        return out;
    }

  private:
    void write_all(const uint8_t* data, size_t len, Clock::time_point deadline) {
        while (len > 0) {
            const ssize_t n = ::write(in_fd_, data, len);
            if (n > 0) {
                data += n;
                len -= static_cast<size_t>(n);
                continue;
            }
            if (n < 0 && errno == EINTR) continue;
            if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
                wait_io(POLLOUT, deadline);
                continue;
            }
            throw std::runtime_error("subprocess write failed (worker gone)");
        }
    }

    void read_all(uint8_t* data, size_t len, Clock::time_point deadline) {
        while (len > 0) {
            const ssize_t n = ::read(out_fd_, data, len);
            if (n > 0) {
                data += n;
                len -= static_cast<size_t>(n);
                continue;
            }
            if (n == 0) throw std::runtime_error("subprocess protocol violation: truncated reply");
            if (errno == EINTR) continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK) {
                wait_io(POLLIN, deadline);
                continue;
            }
            throw std::runtime_error("subprocess read failed");
        }
    }

    void wait_io(short events, Clock::time_point deadline) {
        struct pollfd pfd;
        pfd.fd = events == POLLIN ? out_fd_ : in_fd_;
        pfd.events = events;
        const int ms = remaining_ms(deadline);
        if (ms == 0) throw std::runtime_error("subprocess call timed out");
        const int rc = ::poll(&pfd, 1, ms);
        if (rc == 0) throw std::runtime_error("subprocess call timed out");
        if (rc < 0 && errno != EINTR) throw std::runtime_error("poll failed");
        if (pfd.revents & (POLLERR | POLLNVAL)) {
            throw std::runtime_error("subprocess pipe error");
        }
    }

    pid_t pid_ = -1;
    int in_fd_ = -1;
    int out_fd_ = -1;
};

}  // namespace

FrameBatch batch_from_grid(const STGrid& grid, int t_start, int count) {
    if (t_start < 0 || count < 1 || t_start + count > grid.time_count()) {
        throw std::out_of_range("batch_from_grid: time range outside grid");
    }
    FrameBatch batch;
    batch.height = grid.lat_count();
    batch.width = grid.lon_count();
    batch.frames.assign(static_cast<size_t>(count),
                        std::vector<float>(static_cast<size_t>(batch.height) * batch.width));
    for (int t = 0; t < count; ++t) {
        auto& frame = batch.frames[static_cast<size_t>(t)];
        for (int lat = 0; lat < batch.height; ++lat)
            for (int lon = 0; lon < batch.width; ++lon)
                frame[static_cast<size_t>(lat) * batch.width + lon] =
                    grid.at(lat, lon, t_start + t);
    }
    return batch;
}

void FrameBatch::validate() const {
    if (height < 1 || width < 1) throw std::invalid_argument("frame batch: empty dims");
    if (frames.empty()) throw std::invalid_argument("frame batch: no frames");
    const size_t cells = static_cast<size_t>(height) * width;
    for (const auto& frame : frames) {
        if (frame.size() != cells) throw std::invalid_argument("frame batch: ragged frames");
        for (float v : frame) {
            if (!std::isfinite(v)) throw std::invalid_argument("frame batch: non-finite value");
        }
    }
}

ModelManifest manifest_from_json(const std::string& text) {
    const json doc = json::parse(text);
    ModelManifest m;
    m.id = doc.at("id").get<std::string>();
    m.dataset_ref = doc.value("dataset_ref", std::string{});
    const json& tr = doc.at("training_region");
    const auto start = tr.at("start").get<std::vector<int>>();
    if (start.size() != 2) throw std::invalid_argument("manifest: start must be [lat, lon]");
    m.training_region = Region{start[0], start[1], tr.at("height").get<int>(),
                               tr.at("width").get<int>()};
    m.t0 = tr.at("t0").get<int>();
    m.t_len = tr.at("t_len").get<int>();
    const auto frame = doc.at("frame").get<std::vector<int>>();
    if (frame.size() != 2) throw std::invalid_argument("manifest: frame must be [h, w]");
    m.frame_height = frame[0];
    m.frame_width = frame[1];
    m.input_frames = doc.at("input_frames").get<int>();
    m.output_frames = doc.at("output_frames").get<int>();
    m.backend = doc.at("backend").get<std::string>();
    m.timeout_s = doc.value("timeout_s", 30.0);
    return m;
}

std::string manifest_to_json(const ModelManifest& m) {
    json doc;
    doc["id"] = m.id;
    doc["dataset_ref"] = m.dataset_ref;
    doc["training_region"] = {{"start", {m.training_region.start_lat, m.training_region.start_lon}},
                              {"height", m.training_region.height},
                              {"width", m.training_region.width},
                              {"t0", m.t0},
                              {"t_len", m.t_len}};
    doc["frame"] = {m.frame_height, m.frame_width};
    doc["input_frames"] = m.input_frames;
    doc["output_frames"] = m.output_frames;
    doc["backend"] = m.backend;
    doc["timeout_s"] = m.timeout_s;
    return doc.dump(2);
}

struct Registry::Entry {
    ModelRecord record;
    BackendSpec backend;
    std::vector<double> ar_a, ar_b;     // per cell, row-major over the frame
    std::vector<float> climatology;     // per cell mean over the training window
    mutable std::mutex pool_mutex;
    mutable std::vector<std::unique_ptr<SubprocessHandle>> pool;
};

Registry::Registry() = default;
Registry::~Registry() = default;

Registry::Entry& Registry::entry(const std::string& id) const {
    std::shared_lock lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw std::out_of_range("unknown model id: " + id);
    return *it->second;
}

ModelRecord Registry::register_model(const ModelManifest& manifest, const STGrid& training_grid) {
    if (manifest.id.empty()) throw std::invalid_argument("model id must be non-empty");
    if (manifest.frame_height < 1 || manifest.frame_width < 1) {
        throw std::invalid_argument("frame dims must be >= 1");
    }
    if (manifest.input_frames < 1 || manifest.output_frames < 1) {
        throw std::invalid_argument("frame counts must be >= 1");
    }
    if (manifest.timeout_s <= 0) throw std::invalid_argument("timeout must be positive");
    BackendSpec backend = parse_backend(manifest.backend);  // throws if unresolvable
    if (!training_grid.full_region().contains(manifest.training_region) ||
        manifest.training_region.area() < 1) {
        throw std::invalid_argument("training region not covered by grid");
    }
    if (manifest.t0 < 0 || manifest.t_len < 1 ||
        manifest.t0 + manifest.t_len > training_grid.time_count()) {
        throw std::invalid_argument("training time window not covered by grid");
    }

    auto e = std::make_unique<Entry>();
    e->record.manifest = manifest;
    e->backend = std::move(backend);

    if (e->backend.kind == BuiltinKind::Ar1 || e->backend.kind == BuiltinKind::OracleNoise) {
        // These map frame cells 1:1 onto training-region cells.
        if (manifest.frame_height != manifest.training_region.height ||
            manifest.frame_width != manifest.training_region.width) {
            throw std::invalid_argument("frame dims must equal training region dims for " +
                                        manifest.backend);
        }
    }
    const Region& tr = manifest.training_region;
    if (e->backend.kind == BuiltinKind::Ar1) {
        if (manifest.t_len < 2) throw std::invalid_argument("ar1 needs >= 2 training steps");
        for (int lat = tr.start_lat; lat < tr.end_lat(); ++lat) {
            for (int lon = tr.start_lon; lon < tr.end_lon(); ++lon) {
                const auto s = training_grid.series(lat, lon);
                double mx = 0, my = 0;
                const int pairs = manifest.t_len - 1;
                for (int t = 0; t < pairs; ++t) {
                    mx += s[manifest.t0 + t];
                    my += s[manifest.t0 + t + 1];
                }
                mx /= pairs;
                my /= pairs;
                double sxx = 0, sxy = 0;
                for (int t = 0; t < pairs; ++t) {
                    const double dx = s[manifest.t0 + t] - mx;
                    sxx += dx * dx;
                    sxy += dx * (s[manifest.t0 + t + 1] - my);
                }
                double a = 0.0, b = 0.0;
                if (sxx > 1e-12) {
                    a = sxy / sxx;
                    b = my - a * mx;
                } else {
                    b = my;  // constant series: predict its level
                }
                e->ar_a.push_back(a);
                e->ar_b.push_back(b);
            }
        }
    }
    if (e->backend.kind == BuiltinKind::OracleNoise) {
        for (int lat = tr.start_lat; lat < tr.end_lat(); ++lat) {
            for (int lon = tr.start_lon; lon < tr.end_lon(); ++lon) {
                const auto s = training_grid.series(lat, lon);
                double mean = 0.0;
                for (int t = 0; t < manifest.t_len; ++t) mean += s[manifest.t0 + t];
                e->climatology.push_back(static_cast<float>(mean / manifest.t_len));
            }
        }
    }

    const auto [mlat, mlon] = medoid_point(training_grid, tr, manifest.t0, manifest.t_len);
    const auto series = training_grid.series(mlat, mlon);
    e->record.training_centroid.assign(series.begin() + manifest.t0,
                                       series.begin() + manifest.t0 + manifest.t_len);

    ModelRecord copy = e->record;
    std::unique_lock lock(mutex_);
    if (entries_.count(manifest.id)) throw std::invalid_argument("duplicate id: " + manifest.id);
    entries_.emplace(manifest.id, std::move(e));
    return copy;
}

bool Registry::contains(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return entries_.count(id) > 0;
}

ModelRecord Registry::get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw std::out_of_range("unknown model id: " + id);
    return it->second->record;
}

std::vector<std::string> Registry::ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, e] : entries_) out.push_back(id);
    return out;
}

FrameBatch Registry::predict(const std::string& id, const FrameBatch& input) const {
    Entry& e = entry(id);
    const ModelManifest& m = e.record.manifest;
    input.validate();
    if (input.height != m.frame_height || input.width != m.frame_width) {
        throw std::invalid_argument("predict: input dims do not match model frame");
    }
    if (input.count() != m.input_frames) {
        throw std::invalid_argument("predict: input count does not match model");
    }

    FrameBatch out;
    out.height = m.frame_height;
    out.width = m.frame_width;
    const size_t cells = static_cast<size_t>(out.height) * out.width;
    const std::vector<float>& last = input.frames.back();

    switch (e.backend.kind) {
        case BuiltinKind::Persistence:
            out.frames.assign(static_cast<size_t>(m.output_frames), last);
            break;
        case BuiltinKind::WindowMean: {
            std::vector<float> mean(cells, 0.0f);
            for (const auto& frame : input.frames)
                for (size_t i = 0; i < cells; ++i) mean[i] += frame[i];
            for (float& v : mean) v /= static_cast<float>(input.count());
            out.frames.assign(static_cast<size_t>(m.output_frames), mean);
            break;
        }
        case BuiltinKind::Ar1: {
            std::vector<float> prev = last;
            for (int k = 0; k < m.output_frames; ++k) {
                std::vector<float> next(cells);
                for (size_t i = 0; i < cells; ++i) {
                    next[i] = static_cast<float>(e.ar_a[i] * prev[i] + e.ar_b[i]);
                }
                out.frames.push_back(next);
                prev = std::move(next);
            }
            break;
        }
        case BuiltinKind::OracleNoise: {
            std::vector<float> frame(cells);
            for (size_t i = 0; i < cells; ++i) {
                frame[i] = static_cast<float>(e.climatology[i] + e.backend.bias);
            }
            out.frames.assign(static_cast<size_t>(m.output_frames), frame);
            break;
        }
        case BuiltinKind::None: {
            // Subprocess backend: borrow a pooled worker, one request in flight
            // per worker. Failed workers are discarded, not returned.
            std::unique_ptr<SubprocessHandle> handle;
            {
                std::lock_guard pool_lock(e.pool_mutex);
                if (!e.pool.empty()) {
                    handle = std::move(e.pool.back());
                    e.pool.pop_back();
                }
            }
            if (!handle) handle = std::make_unique<SubprocessHandle>(e.backend.command);
            out = handle->call(input, m.output_frames, m.timeout_s);
            std::lock_guard pool_lock(e.pool_mutex);
            e.pool.push_back(std::move(handle));
            break;
        }
    }
    out.validate();
    return out;
}

double Registry::measure_unitary_cost(const std::string& id, const FrameBatch& sample) {
    for (int i = 0; i < 2; ++i) predict(id, sample);
    double total = 0.0;
    for (int i = 0; i < 10; ++i) {
        const auto t0 = Clock::now();
        predict(id, sample);
        total += std::chrono::duration<double>(Clock::now() - t0).count();
    }
    const double uc = total / 10.0;
    set_unitary_cost(id, uc);
    return uc;
}

void Registry::set_curve(const std::string& id, const LearningCurve& curve) {
    std::unique_lock lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw std::out_of_range("unknown model id: " + id);
    it->second->record.curve = curve;
}

void Registry::set_unitary_cost(const std::string& id, double seconds) {
    if (!(seconds > 0.0)) throw std::invalid_argument("unitary cost must be positive");
    std::unique_lock lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw std::out_of_range("unknown model id: " + id);
    it->second->record.unitary_cost = seconds;
}

std::string Registry::to_json() const {
    std::shared_lock lock(mutex_);
    json doc;
    doc["models"] = json::array();
    for (const auto& [id, e] : entries_) {
        json jm;
        jm["manifest"] = json::parse(manifest_to_json(e->record.manifest));
        jm["centroid"] = e->record.training_centroid;
        jm["unitary_cost"] = e->record.unitary_cost;
        jm["curve"] =
            e->record.curve.fitted() ? json::parse(curve_to_json(e->record.curve)) : json();
        jm["state"] = {{"ar_a", e->ar_a}, {"ar_b", e->ar_b}, {"climatology", e->climatology}};
        doc["models"].push_back(std::move(jm));
    }
    return doc.dump(2);
}

std::unique_ptr<Registry> Registry::from_json(const std::string& text) {
    const json doc = json::parse(text);
    auto reg = std::make_unique<Registry>();
    for (const json& jm : doc.at("models")) {
        auto e = std::make_unique<Entry>();
        e->record.manifest = manifest_from_json(jm.at("manifest").dump());
        e->backend = parse_backend(e->record.manifest.backend);
        e->record.training_centroid = jm.at("centroid").get<std::vector<float>>();
        e->record.unitary_cost = jm.at("unitary_cost").get<double>();
        if (!jm.at("curve").is_null()) e->record.curve = curve_from_json(jm.at("curve").dump());
        const json& state = jm.at("state");
        e->ar_a = state.at("ar_a").get<std::vector<double>>();
        e->ar_b = state.at("ar_b").get<std::vector<double>>();
        e->climatology = state.at("climatology").get<std::vector<float>>();
        const std::string id = e->record.manifest.id;
        if (reg->entries_.count(id)) throw std::invalid_argument("duplicate id: " + id);
        reg->entries_.emplace(id, std::move(e));
    }
    return reg;
}

}  // namespace dje
