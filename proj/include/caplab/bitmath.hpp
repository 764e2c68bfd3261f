#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "caplab/knowledge.hpp"

namespace caplab {

/// Summed (not averaged) cross-entropy statistics, in nats.
///   p1  expected NLL of the name span,
///   p2m expected NLL of a full value per (name, attribute),
///   p3m expected NLL of the first value chunk per (name, attribute),
///   p2s expected per-person value NLL summed over attributes (bioS).
struct LossStats {
    double p1 = 0.0;
    double p2m = 0.0;
    double p3m = 0.0;
    double p2s = 0.0;
};

/// Knowledge bits split into the name, value and diversity components.
struct BitComponents {
    double name = 0.0;
    double value = 0.0;
    double diversity = 0.0;

    double total() const { return name + value + diversity; }
};

/// Arbitrary-precision unsigned integer, just enough for exact binomials.
class BigUint {
public:
    BigUint() = default;
    explicit BigUint(std::uint64_t v);

    BigUint& operator*=(std::uint64_t factor);
    /// Divides in place and returns the remainder.
    std::uint64_t divide(std::uint64_t divisor);

    bool is_zero() const { return limbs_.empty(); }
    std::size_t bit_length() const;
    /// log2 of the value, relative error near machine epsilon.
    double log2() const;
    std::string to_string() const;

private:
    std::vector<std::uint64_t> limbs_;  // little-endian
};

/// Exact C(n, k) as a big integer.
BigUint binomial(std::uint64_t n, std::uint64_t k);

/// log2 C(n, k). Exact big-integer evaluation for min(k, n-k) up to
/// `exact_limit`, log-gamma in extended precision beyond that (where the
/// result is large enough that lgammal's absolute error is negligible).
double log2_binomial(std::uint64_t n, std::uint64_t k, std::uint64_t exact_limit = 4096);

/// Bits needed to describe a bioD knowledge set:
/// log2 C(N0, N) + K log2 C(T^L, D) + N K C log2 D.
double upper_bound_bits(const BioDSpec& spec);
BitComponents upper_bound_components(const BioDSpec& spec);
/// bioS analogue: log2 C(N0, N) + N log2 S0.
double upper_bound_bits(const BioSSpec& spec);

double log2_s0();

/// Three-component lower bound on the bits a model with the given losses has
/// learned about a bioD set. Each component is clipped at zero.
BitComponents lower_bound_bits(const BioDSpec& spec, const LossStats& losses);
/// Same components before clipping (may be negative).
BitComponents lower_bound_bits_unclipped(const BioDSpec& spec, const LossStats& losses);

/// Losses of a model that knows the data set perfectly: p1 = ln N, values exact.
LossStats perfect_losses(const BioDSpec& spec);
LossStats perfect_losses(const BioSSpec& spec);

/// (R, Rmax) for a bioD model with P parameters.
std::pair<double, double> capacity_ratio_biod(const BitComponents& learned, const BioDSpec& spec,
                                              std::uint64_t P);

/// Name and value bits for bioS (diversity term omitted).
BitComponents bios_bits(std::uint64_t N, double p1, double p2s);
double capacity_ratio_bios(std::uint64_t N, double p1, double p2s, std::uint64_t P);

/// One row of results: the CSV/JSON unit of the experiment runner.
struct CapacityReport {
    Family family = Family::bioS;
    std::uint64_t N = 0;
    std::uint64_t K = 0;
    std::uint64_t C = 0;
    std::uint64_t D = 0;
    std::uint64_t L = 0;
    std::uint64_t T = 0;
    std::uint64_t P = 0;
    std::uint64_t exposures = 0;
    double p1 = 0.0;
    double p2 = 0.0;
    double p3 = 0.0;
    double bits_name = 0.0;
    double bits_value = 0.0;
    double bits_div = 0.0;
    double bits_total = 0.0;
    double R = 0.0;
    double Rmax = 0.0;

    /// Component fractions of bits_total; all zero when bits_total is zero.
    double fraction_name() const;
    double fraction_value() const;
    double fraction_div() const;
};

CapacityReport capacity_report(const BioDSpec& spec, const LossStats& losses, std::uint64_t P,
                               std::uint64_t exposures);
CapacityReport capacity_report(const BioSSpec& spec, const LossStats& losses, std::uint64_t P,
                               std::uint64_t exposures);

std::string csv_header();
/// Fixed formatting (%.9g for reals) so identical inputs give identical bytes.
std::string csv_row(const CapacityReport& r);
CapacityReport parse_csv_row(const std::string& line);
std::string to_json(const CapacityReport& r);

}  // namespace caplab
