#pragma once

#include <string_view>

#include "caplab/bitmath.hpp"
#include "caplab/evaluator.hpp"
#include "caplab/trainer.hpp"

namespace caplab {

enum class Granularity { per_tensor, per_channel };

std::string_view granularity_name(Granularity g);
Granularity parse_granularity(std::string_view s);

struct QuantConfig {
    int bits = 8;  // 8 or 4
    Granularity granularity = Granularity::per_channel;

    void validate() const;
};

/// Symmetric scale of one group: max|w| / (2^(bits-1) - 1), rounded to a 16-bit
/// mantissa so every dequantized weight is an exact float and requantizing is
/// the identity. An all-zero group gets scale 1.
float rtn_scale(float max_abs, int bits);

/// Round-to-nearest on every matrix tensor (embedding included); LayerNorm
/// gains and biases stay full precision. Per-channel groups are output
/// channels: columns of the x*W projections, rows of the embedding / head.
/// The result drops optimizer moments and carries the quant header flag.
Checkpoint quantize_rtn(const Checkpoint& ck, const QuantConfig& qc);

struct QuantDelta {
    CapacityReport before;
    CapacityReport after;
    LossReport losses_before;
    LossReport losses_after;
};

/// Evaluates a checkpoint before and after quantization.
QuantDelta quant_capacity_delta(const Renderer& renderer, const Checkpoint& ck, const QuantConfig& qc,
                                std::uint64_t exposures, const EvalOptions& options = {});

}  // namespace caplab
