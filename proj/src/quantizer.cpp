#include "caplab/quantizer.hpp"

#include <algorithm>
#include <cmath>

namespace caplab {

std::string_view granularity_name(Granularity g) {
    return g == Granularity::per_tensor ? "per_tensor" : "per_channel";
}

Granularity parse_granularity(std::string_view s) {
    if (s == "per_tensor") {
        return Granularity::per_tensor;
    }
    if (s == "per_channel") {
        return Granularity::per_channel;
    }
    throw std::invalid_argument("unknown quantization granularity: " + std::string(s));
}

void QuantConfig::validate() const {
    if (bits != 8 && bits != 4) {
        throw std::invalid_argument("quantization supports 8 or 4 bits");
    }
}

float rtn_scale(float max_abs, int bits) {
    if (!(max_abs > 0.0f)) {
        return 1.0f;
    }
    const double qmax = static_cast<double>((1 << (bits - 1)) - 1);
    int exp = 0;
    const double frac = std::frexp(static_cast<double>(max_abs) / qmax, &exp);
    return static_cast<float>(std::ldexp(std::nearbyint(std::ldexp(frac, 16)), exp - 16));
}

namespace {

// Quantizes `count` weights starting at `w`, `stride` apart.
void quantize_group(float* w, std::size_t count, std::size_t stride, int bits) {
    float max_abs = 0.0f;
    for (std::size_t i = 0; i < count; ++i) {
        max_abs = std::max(max_abs, std::abs(w[i * stride]));
    }
    const float scale = rtn_scale(max_abs, bits);
    const float qmax = static_cast<float>((1 << (bits - 1)) - 1);
    for (std::size_t i = 0; i < count; ++i) {
        float& x = w[i * stride];
        const float q = std::clamp(std::nearbyint(x / scale), -qmax, qmax);
        x = q * scale;
    }
}

bool rows_are_channels(const std::string& name) { return name == "wte" || name == "lm_head"; }

}  // namespace

Checkpoint quantize_rtn(const Checkpoint& ck, const QuantConfig& qc) {
    qc.validate();
    Checkpoint out;
    out.config = ck.config;
    out.optim = ck.optim;
    out.seed = ck.seed;
    out.step = ck.step;
    out.params = ck.params;
    out.quant = QuantInfo{qc.bits, std::string(granularity_name(qc.granularity))};
    for (const auto& t : tensor_layout(ck.config)) {
        if (!t.decay) {
            continue;
        }
        float* base = out.params.data() + t.offset;
        if (qc.granularity == Granularity::per_tensor) {
            quantize_group(base, t.size(), 1, qc.bits);
        } else if (rows_are_channels(t.name)) {
            for (std::size_t r = 0; r < t.rows; ++r) {
                quantize_group(base + r * t.cols, t.cols, 1, qc.bits);
            }
        } else {
            for (std::size_t c = 0; c < t.cols; ++c) {
                quantize_group(base + c, t.rows, t.cols, qc.bits);
            }
        }
    }
    return out;
}

QuantDelta quant_capacity_delta(const Renderer& renderer, const Checkpoint& ck, const QuantConfig& qc,
                                std::uint64_t exposures, const EvalOptions& options) {
    const std::uint64_t P = param_count(ck.config);
    QuantDelta d;
    d.losses_before = eval_losses(TransformerModel(ck), renderer, options);
    d.losses_after = eval_losses(TransformerModel(quantize_rtn(ck, qc)), renderer, options);
    d.before = capacity_report(renderer.kb(), d.losses_before.stats, P, exposures);
    d.after = capacity_report(renderer.kb(), d.losses_after.stats, P, exposures);
    return d;
}

}  // namespace caplab
