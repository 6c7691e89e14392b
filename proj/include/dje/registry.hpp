#pragma once

#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include "dje/curve.hpp"
#include "dje/grid.hpp"

namespace dje {

// A batch of equally sized frames, each row-major height x width.
struct FrameBatch {
    int height = 0;
    int width = 0;
    std::vector<std::vector<float>> frames;

    int count() const { return static_cast<int>(frames.size()); }
    float at(int f, int lat, int lon) const {
        return frames[static_cast<size_t>(f)][static_cast<size_t>(lat) * width + lon];
    }
    void validate() const;  // uniform dims, finite values
};

// Everything a model declares up front. Backends:
//   builtin:persistence           copy the last input frame
//   builtin:window-mean           mean of the input frames
//   builtin:ar1                   per-cell AR(1), coefficients fit at registration
//   builtin:oracle-noise[:bias=x] per-cell training mean plus a constant bias
//   subprocess:<command>          external worker speaking the stdio frame protocol
struct ModelManifest {
    std::string id;
    std::string dataset_ref;
    Region training_region;
    int t0 = 0;     // training time window start
    int t_len = 0;  // training time window length
    int frame_height = 1;
    int frame_width = 1;
    int input_frames = 1;   // n
    int output_frames = 1;  // K
    std::string backend;
    double timeout_s = 30.0;  // per predict call, subprocess backends
};

ModelManifest manifest_from_json(const std::string& text);
std::string manifest_to_json(const ModelManifest& manifest);

// Copies `count` consecutive timesteps starting at t_start into frames.
FrameBatch batch_from_grid(const STGrid& grid, int t_start, int count);

struct ModelRecord {
    ModelManifest manifest;
    std::vector<float> training_centroid;  // medoid series over the training window
    LearningCurve curve;
    double unitary_cost = 0.0;  // seconds per invocation; 0 until measured

    bool planner_eligible() const { return curve.fitted() && unitary_cost > 0.0; }
};

class Registry {
  public:
    Registry();  // defined out of line: Entry is private and incomplete here
    Registry(const Registry&) = delete;
    Registry& operator=(const Registry&) = delete;
    ~Registry();

    // Validates the manifest, resolves the backend, fits any builtin state
    // from the training grid, and computes the training centroid.
    ModelRecord register_model(const ModelManifest& manifest, const STGrid& training_grid);

    bool contains(const std::string& id) const;
    ModelRecord get(const std::string& id) const;
    std::vector<std::string> ids() const;

    // Runs the model on one input batch. Pure per call; thread-safe across
    // models and across concurrent calls to the same subprocess model (each
    // in-flight call owns one pooled worker).
    FrameBatch predict(const std::string& id, const FrameBatch& input) const;

    // Mean wall time of 10 predict calls after 2 warm-ups; stored on the record.
    double measure_unitary_cost(const std::string& id, const FrameBatch& sample);

    void set_curve(const std::string& id, const LearningCurve& curve);
    void set_unitary_cost(const std::string& id, double seconds);

    // Store round-trip: full records including builtin state, so models can
    // be reloaded without the original training grid.
    std::string to_json() const;
    static std::unique_ptr<Registry> from_json(const std::string& text);

  private:
    struct Entry;
    Entry& entry(const std::string& id) const;

    mutable std::shared_mutex mutex_;
    std::map<std::string, std::unique_ptr<Entry>> entries_;
};

}  // namespace dje
