#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "caplab/corpus.hpp"
#include "caplab/model.hpp"

namespace caplab {

class DivergenceDetected : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct OptimConfig {
    double lr = 1e-3;
    double wd = 0.02;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t batch = 4;
    std::uint64_t steps = 0;
    std::uint64_t warmup = 1000;
    double final_lr_fraction = 0.1;
    bool deterministic = true;

    void validate() const;
    bool operator==(const OptimConfig&) const = default;
};

/// Linear warmup over `warmup` steps, then cosine decay to final_lr_fraction * lr
/// at step `steps`.
double learning_rate(const OptimConfig& o, std::uint64_t step);

struct QuantInfo {
    int bits = 8;
    std::string granularity = "per_channel";
    bool operator==(const QuantInfo&) const = default;
};

struct Checkpoint {
    ModelConfig config;
    OptimConfig optim;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    Eigen::VectorXf params;
    Eigen::VectorXf m;
    Eigen::VectorXf v;
    std::optional<QuantInfo> quant;

    void save(std::ostream& out) const;
    static Checkpoint load(std::istream& in);
    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

Checkpoint init_model(const ModelConfig& config, std::uint64_t seed);

/// Copies checkpoint weights into a model of the matching configuration.
template <class Scalar>
Transformer<Scalar> make_model(const Checkpoint& ck) {
    Transformer<Scalar> model(ck.config);
    model.params() = ck.params.cast<Scalar>();
    return model;
}

/// Windows -> teacher-forced batch: every non-PAD successor is a target.
Batch make_batch(const std::vector<Window>& windows);

struct StepLog {
    std::uint64_t step = 0;
    double loss = 0.0;  // mean NLL per target token over the logging interval
    double lr = 0.0;
    double seconds = 0.0;
};

struct TrainHooks {
    std::function<void(const StepLog&)> on_log;
    /// Called every `checkpoint_every` steps with the current state.
    std::function<void(const Checkpoint&)> on_checkpoint;
    std::uint64_t log_every = 100;
    std::uint64_t checkpoint_every = 0;
};

/// AdamW on mean per-token NLL. Decoupled weight decay on matrix tensors only
/// (embedding included, LayerNorm gains and biases excluded). The stream must
/// already be positioned at window `start.step * batch`.
Checkpoint train(Checkpoint start, const OptimConfig& optim, const WindowSource& windows,
                 const TrainHooks& hooks = {});

/// Teacher-forced NLL of one window: total and per position (index t holds the
/// NLL of token t+1).
struct WindowNll {
    double total = 0.0;
    std::vector<double> per_token;
};
WindowNll forward_nll(const Checkpoint& ck, const Window& window);

}  // namespace caplab
