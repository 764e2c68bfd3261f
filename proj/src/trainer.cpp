#include "caplab/trainer.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "json.hpp"

namespace caplab {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'L', 'A', 'B', 'C', '1'};

using nlohmann::json;

json config_json(const ModelConfig& c) {
    return {{"layers", c.layers},         {"heads", c.heads},
            {"head_dim", c.head_dim},     {"mlp", mlp_kind_name(c.mlp)},
            {"activation", activation_name(c.activation)},
            {"tie_weights", c.tie_weights}, {"vocab_size", c.vocab_size},
            {"window_len", c.window_len}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.layers = j.at("layers");
    c.heads = j.at("heads");
    c.head_dim = j.at("head_dim");
    c.mlp = parse_mlp_kind(j.at("mlp").get<std::string>());
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.tie_weights = j.at("tie_weights");
    c.vocab_size = j.at("vocab_size");
    c.window_len = j.at("window_len");
    return c;
}

json optim_json(const OptimConfig& o) {
    return {{"lr", o.lr},       {"wd", o.wd},         {"beta1", o.beta1},
            {"beta2", o.beta2}, {"eps", o.eps},       {"batch", o.batch},
            {"steps", o.steps}, {"warmup", o.warmup}, {"final_lr_fraction", o.final_lr_fraction},
            {"deterministic", o.deterministic}};
}

OptimConfig optim_from_json(const json& j) {
    OptimConfig o;
    o.lr = j.at("lr");
    o.wd = j.at("wd");
    o.beta1 = j.at("beta1");
    o.beta2 = j.at("beta2");
    o.eps = j.at("eps");
    o.batch = j.at("batch");
    o.steps = j.at("steps");
    o.warmup = j.at("warmup");
    o.final_lr_fraction = j.at("final_lr_fraction");
    o.deterministic = j.at("deterministic");
    return o;
}

void write_floats(std::ostream& out, const Eigen::VectorXf& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void read_floats(std::istream& in, Eigen::VectorXf& v, std::size_t n) {
    v.resize(static_cast<Eigen::Index>(n));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) {
        throw std::runtime_error("checkpoint truncated");
    }
}

}  // namespace

void OptimConfig::validate() const {
    if (!(lr >= 0) || !(wd >= 0) || batch < 1) {
        throw ConfigInvalid("optimizer needs lr >= 0, wd >= 0, batch >= 1");
    }
    if (steps > 0 && warmup > steps) {
        throw ConfigInvalid("warmup exceeds total steps");
    }
}

double learning_rate(const OptimConfig& o, std::uint64_t step) {
    if (o.warmup > 0 && step < o.warmup) {
        return o.lr * static_cast<double>(step + 1) / static_cast<double>(o.warmup);
    }
    const double span = static_cast<double>(o.steps > o.warmup ? o.steps - o.warmup : 1);
    const double progress = std::min(1.0, static_cast<double>(step - o.warmup) / span);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return o.lr * (o.final_lr_fraction + (1.0 - o.final_lr_fraction) * cosine);
}

void Checkpoint::save(std::ostream& out) const {
    json h;
    h["format_version"] = 1;
    h["config"] = config_json(config);
    h["optim"] = optim_json(optim);
    h["seed"] = seed;
    h["step"] = step;
    h["params"] = params.size();
    h["has_moments"] = m.size() == params.size() && v.size() == params.size();
    if (quant) {
        h["quant"] = {{"bits", quant->bits}, {"granularity", quant->granularity}, {"method", "rtn"}};
    }
    const std::string text = h.dump();
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    write_floats(out, params);
    if (h["has_moments"].get<bool>()) {
        write_floats(out, m);
        write_floats(out, v);
    }
    if (!out) {
        throw std::runtime_error("failed to write checkpoint");
    }
}

Checkpoint Checkpoint::load(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw std::runtime_error("not a caplab checkpoint");
    }
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const json h = json::parse(text);
    Checkpoint ck;
    ck.config = config_from_json(h.at("config"));
    ck.optim = optim_from_json(h.at("optim"));
    ck.seed = h.at("seed");
    ck.step = h.at("step");
    const std::size_t n = h.at("params");
    if (n != param_count(ck.config)) {
        throw std::runtime_error("checkpoint size does not match its configuration");
    }
    read_floats(in, ck.params, n);
    if (h.at("has_moments").get<bool>()) {
        read_floats(in, ck.m, n);
        read_floats(in, ck.v, n);
    }
    if (h.contains("quant")) {
        ck.quant = QuantInfo{h["quant"].at("bits"), h["quant"].at("granularity")};
    }
    return ck;
}

void Checkpoint::save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw std::runtime_error("cannot open " + tmp);
        }
        save(out);
    }
    std::rename(tmp.c_str(), path.c_str());
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    return load(in);
}

Checkpoint init_model(const ModelConfig& config, std::uint64_t seed) {
    Transformer<float> model(config);
    model.init(seed);
    Checkpoint ck;
    ck.config = config;
    ck.seed = seed;
    ck.params = model.params();
    return ck;
}

Batch make_batch(const std::vector<Window>& windows) {
    Batch b;
    b.B = windows.size();
    b.T = windows.empty() ? 0 : windows.front().tokens.size();
    b.tokens.reserve(b.B * b.T);
    b.mask.reserve(b.B * b.T);
    for (const auto& w : windows) {
        if (w.tokens.size() != b.T) {
            throw std::invalid_argument("windows of a batch must share a length");
        }
        b.tokens.insert(b.tokens.end(), w.tokens.begin(), w.tokens.end());
        for (std::size_t t = 0; t < b.T; ++t) {
            b.mask.push_back(t + 1 < w.used ? 1 : 0);
        }
    }
    return b;
}

Checkpoint train(Checkpoint start, const OptimConfig& optim, const WindowSource& windows,
                 const TrainHooks& hooks) {
    optim.validate();
    Transformer<float> model(start.config);
    if (start.params.size() != model.params().size()) {
        throw std::invalid_argument("checkpoint does not match the model configuration");
    }
    model.params() = start.params;
    const Eigen::Index n = model.params().size();
    if (start.m.size() != n || start.v.size() != n) {
        start.m = Eigen::VectorXf::Zero(n);
        start.v = Eigen::VectorXf::Zero(n);
    }
    Eigen::VectorXf decay_mask = Eigen::VectorXf::Zero(n);
    for (const auto& t : model.layout()) {
        if (t.decay) {
            decay_mask.segment(static_cast<Eigen::Index>(t.offset), static_cast<Eigen::Index>(t.size())).setOnes();
        }
    }

    Eigen::VectorXf grad(n);
    auto t0 = std::chrono::steady_clock::now();
    double interval_loss = 0.0;
    double interval_tokens = 0.0;
    std::vector<Window> ws;
    ws.reserve(optim.batch);
    std::uint64_t step = start.step;
    for (; step < optim.steps; ++step) {
        ws.clear();
        while (ws.size() < optim.batch) {
            auto w = windows();
            if (!w) {
                break;
            }
            ws.push_back(std::move(*w));
        }
        if (ws.empty()) {
            break;
        }
        const Batch batch = make_batch(ws);
        std::size_t targets = 0;
        for (auto m : batch.mask) {
            targets += m;
        }
        if (targets == 0) {
            continue;
        }
        const double sum = model.loss(batch, &grad, 1.0 / static_cast<double>(targets));
        if (!std::isfinite(sum)) {
            throw DivergenceDetected("loss became non-finite at step " + std::to_string(step) +
                                     " (lr " + std::to_string(learning_rate(optim, step)) + ")");
        }
        interval_loss += sum;
        interval_tokens += static_cast<double>(targets);

        const float lr = static_cast<float>(learning_rate(optim, step));
        const double t = static_cast<double>(step + 1);
        const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(optim.beta1, t)));
        const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(optim.beta2, t)));
        const float b1 = static_cast<float>(optim.beta1);
        const float b2 = static_cast<float>(optim.beta2);
        const float eps = static_cast<float>(optim.eps);
        auto p = model.params().array();
        start.m.array() = b1 * start.m.array() + (1 - b1) * grad.array();
        start.v.array() = b2 * start.v.array() + (1 - b2) * grad.array().square();
        p *= 1.0f - lr * static_cast<float>(optim.wd) * decay_mask.array();
        p -= lr * (start.m.array() * c1) / ((start.v.array() * c2).sqrt() + eps);

        const bool log_now = hooks.log_every > 0 && (step + 1) % hooks.log_every == 0;
        if (log_now && hooks.on_log) {
            const auto now = std::chrono::steady_clock::now();
            hooks.on_log({step + 1, interval_loss / interval_tokens, lr,
                          std::chrono::duration<double>(now - t0).count()});
            interval_loss = 0.0;
            interval_tokens = 0.0;
        }
        if (hooks.checkpoint_every > 0 && (step + 1) % hooks.checkpoint_every == 0 && hooks.on_checkpoint) {
            Checkpoint mid = start;
            mid.params = model.params();
            mid.step = step + 1;
            mid.optim = optim;
            hooks.on_checkpoint(mid);
        }
    }
    start.params = model.params();
    start.step = step;
    start.optim = optim;
    return start;
}

WindowNll forward_nll(const Checkpoint& ck, const Window& window) {
    WindowNll out;
    if (window.tokens.empty()) {
        return out;
    }
    auto model = make_model<float>(ck);
    const Batch b = make_batch({window});
    out.per_token = model.token_nll(b);
    for (double x : out.per_token) {
        out.total += x;
    }
    return out;
}

}  // namespace caplab
