#include "caplab/bitmath.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "json.hpp"

namespace caplab {

namespace {

constexpr double kLn2 = 0.693147180559945309417232121458176568;

using u128 = unsigned __int128;

double nats_to_bits(double nats) { return nats / kLn2; }

}  // namespace

BigUint::BigUint(std::uint64_t v) {
    if (v != 0) {
        limbs_.push_back(v);
    }
}

BigUint& BigUint::operator*=(std::uint64_t factor) {
    if (factor == 0) {
        limbs_.clear();
        return *this;
    }
    std::uint64_t carry = 0;
    for (auto& limb : limbs_) {
        const u128 t = static_cast<u128>(limb) * factor + carry;
        limb = static_cast<std::uint64_t>(t);
        carry = static_cast<std::uint64_t>(t >> 64);
    }
    if (carry != 0) {
        limbs_.push_back(carry);
    }
    return *this;
}

std::uint64_t BigUint::divide(std::uint64_t divisor) {
    if (divisor == 0) {
        throw std::domain_error("BigUint: division by zero");
    }
    u128 rem = 0;
    for (std::size_t i = limbs_.size(); i-- > 0;) {
        const u128 cur = (rem << 64) | limbs_[i];
        limbs_[i] = static_cast<std::uint64_t>(cur / divisor);
        rem = cur % divisor;
    }
    while (!limbs_.empty() && limbs_.back() == 0) {
        limbs_.pop_back();
    }
    return static_cast<std::uint64_t>(rem);
}

std::size_t BigUint::bit_length() const {
    if (limbs_.empty()) {
        return 0;
    }
    return 64 * (limbs_.size() - 1) + (64 - static_cast<std::size_t>(__builtin_clzll(limbs_.back())));
}

double BigUint::log2() const {
    if (limbs_.empty()) {
        return -INFINITY;
    }
    // Top 128 bits carry far more precision than a double needs.
    const std::size_t n = limbs_.size();
    long double top = static_cast<long double>(limbs_[n - 1]);
    int shift = 0;
    if (n >= 2) {
        top = top * 18446744073709551616.0L + static_cast<long double>(limbs_[n - 2]);
        shift = 64 * static_cast<int>(n - 2);
    }
    return static_cast<double>(std::log2l(top) + shift);
}

std::string BigUint::to_string() const {
    if (limbs_.empty()) {
        return "0";
    }
    BigUint tmp = *this;
    std::string digits;
    constexpr std::uint64_t chunk = 10000000000000000000ULL;  // 10^19
    while (!tmp.is_zero()) {
        std::uint64_t r = tmp.divide(chunk);
        for (int i = 0; i < 19; ++i) {
            digits.push_back(static_cast<char>('0' + r % 10));
            r /= 10;
            if (tmp.is_zero() && r == 0) {
                break;
            }
        }
    }
    while (digits.size() > 1 && digits.back() == '0') {
        digits.pop_back();
    }
    std::reverse(digits.begin(), digits.end());
    return digits;
}

BigUint binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) {
        return BigUint(0);
    }
    k = std::min(k, n - k);
    BigUint r(1);
    // After step i the value is C(n-k+i, i), always an integer.
    for (std::uint64_t i = 1; i <= k; ++i) {
        r *= n - k + i;
        r.divide(i);
    }
    return r;
}

double log2_binomial(std::uint64_t n, std::uint64_t k, std::uint64_t exact_limit) {
    if (k > n) {
        return -INFINITY;
    }
    const std::uint64_t m = std::min(k, n - k);
    if (m == 0) {
        return 0.0;
    }
    if (m <= exact_limit) {
        return binomial(n, m).log2();
    }
    const long double ln = std::lgammal(static_cast<long double>(n) + 1) -
                           std::lgammal(static_cast<long double>(m) + 1) -
                           std::lgammal(static_cast<long double>(n - m) + 1);
    return static_cast<double>(ln / std::log(2.0L));
}

double log2_s0() { return static_cast<double>(std::log2l(BioSSpec::S0)); }

BitComponents upper_bound_components(const BioDSpec& spec) {
    spec.validate();
    BitComponents b;
    b.name = log2_binomial(spec.N0, spec.N);
    b.diversity = static_cast<double>(spec.K) * log2_binomial(spec.chunk_space(), spec.D);
    b.value = static_cast<double>(spec.N * spec.K * spec.C) * std::log2(static_cast<double>(spec.D));
    return b;
}

double upper_bound_bits(const BioDSpec& spec) { return upper_bound_components(spec).total(); }

double upper_bound_bits(const BioSSpec& spec) {
    spec.validate();
    return log2_binomial(BioSSpec::N0, spec.N) + static_cast<double>(spec.N) * log2_s0();
}

BitComponents lower_bound_bits_unclipped(const BioDSpec& spec, const LossStats& losses) {
    spec.validate();
    const double N = static_cast<double>(spec.N);
    const double K = static_cast<double>(spec.K);
    const double C = static_cast<double>(spec.C);
    const double D = static_cast<double>(spec.D);
    const double space = static_cast<double>(spec.chunk_space());
    BitComponents b;
    b.name = nats_to_bits(N * (std::log(static_cast<double>(spec.N0 - spec.N)) - losses.p1));
    b.value = nats_to_bits(N * K * (C * std::log(D) - losses.p2m));
    b.diversity = nats_to_bits(K * D * (std::log((space - D) / D) - losses.p3m));
    return b;
}

BitComponents lower_bound_bits(const BioDSpec& spec, const LossStats& losses) {
    BitComponents b = lower_bound_bits_unclipped(spec, losses);
    b.name = std::max(0.0, b.name);
    b.value = std::max(0.0, b.value);
    b.diversity = std::max(0.0, b.diversity);
    return b;
}

LossStats perfect_losses(const BioDSpec& spec) {
    LossStats l;
    l.p1 = std::log(static_cast<double>(spec.N));
    return l;
}

LossStats perfect_losses(const BioSSpec& spec) {
    LossStats l;
    l.p1 = std::log(static_cast<double>(spec.N));
    return l;
}

std::pair<double, double> capacity_ratio_biod(const BitComponents& learned, const BioDSpec& spec,
                                              std::uint64_t P) {
    if (P == 0) {
        throw std::invalid_argument("parameter count must be positive");
    }
    const double best = lower_bound_bits(spec, perfect_losses(spec)).total();
    return {learned.total() / static_cast<double>(P), best / static_cast<double>(P)};
}

BitComponents bios_bits(std::uint64_t N, double p1, double p2s) {
    const double n = static_cast<double>(N);
    BitComponents b;
    b.name = std::max(0.0, nats_to_bits(n * (std::log(static_cast<double>(BioSSpec::N0)) - p1)));
    b.value = std::max(0.0, nats_to_bits(n * (static_cast<double>(std::log(BioSSpec::S0)) - p2s)));
    return b;
}

double capacity_ratio_bios(std::uint64_t N, double p1, double p2s, std::uint64_t P) {
    if (P == 0) {
        throw std::invalid_argument("parameter count must be positive");
    }
    return bios_bits(N, p1, p2s).total() / static_cast<double>(P);
}

namespace {

double fraction(double part, double total) { return total > 0.0 ? part / total : 0.0; }

void fill_bits(CapacityReport& r, const BitComponents& b) {
    r.bits_name = b.name;
    r.bits_value = b.value;
    r.bits_div = b.diversity;
    r.bits_total = b.total();
}

}  // namespace

double CapacityReport::fraction_name() const { return fraction(bits_name, bits_total); }
double CapacityReport::fraction_value() const { return fraction(bits_value, bits_total); }
double CapacityReport::fraction_div() const { return fraction(bits_div, bits_total); }

CapacityReport capacity_report(const BioDSpec& spec, const LossStats& losses, std::uint64_t P,
                               std::uint64_t exposures) {
    CapacityReport r;
    r.family = Family::bioD;
    r.N = spec.N;
    r.K = spec.K;
    r.C = spec.C;
    r.D = spec.D;
    r.L = spec.L;
    r.T = spec.T;
    r.P = P;
    r.exposures = exposures;
    r.p1 = losses.p1;
    r.p2 = losses.p2m;
    r.p3 = losses.p3m;
    fill_bits(r, lower_bound_bits(spec, losses));
    std::tie(r.R, r.Rmax) = capacity_ratio_biod(lower_bound_bits(spec, losses), spec, P);
    return r;
}

CapacityReport capacity_report(const BioSSpec& spec, const LossStats& losses, std::uint64_t P,
                               std::uint64_t exposures) {
    CapacityReport r;
    r.family = Family::bioS;
    r.N = spec.N;
    r.K = bios_attribute_count;
    r.C = 1;
    r.P = P;
    r.exposures = exposures;
    r.p1 = losses.p1;
    r.p2 = losses.p2s;
    r.p3 = losses.p3m;
    fill_bits(r, bios_bits(spec.N, losses.p1, losses.p2s));
    r.R = capacity_ratio_bios(spec.N, losses.p1, losses.p2s, P);
    const LossStats best = perfect_losses(spec);
    r.Rmax = capacity_ratio_bios(spec.N, best.p1, best.p2s, P);
    return r;
}

std::string csv_header() {
    return "family,N,K,C,D,L,T,P,exposures,p1,p2,p3,bits_name,bits_value,bits_div,bits_total,R,Rmax";
}

std::string csv_row(const CapacityReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "%s,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                  std::string(family_name(r.family)).c_str(), static_cast<unsigned long long>(r.N),
                  static_cast<unsigned long long>(r.K), static_cast<unsigned long long>(r.C),
                  static_cast<unsigned long long>(r.D), static_cast<unsigned long long>(r.L),
                  static_cast<unsigned long long>(r.T), static_cast<unsigned long long>(r.P),
                  static_cast<unsigned long long>(r.exposures), r.p1, r.p2, r.p3, r.bits_name,
                  r.bits_value, r.bits_div, r.bits_total, r.R, r.Rmax);
    return buf;
}

CapacityReport parse_csv_row(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cells.push_back(cell);
    }
    if (cells.size() != 18) {
        throw std::invalid_argument("capacity CSV row must have 18 columns");
    }
    CapacityReport r;
    r.family = parse_family(cells[0]);
    std::uint64_t* ints[] = {&r.N, &r.K, &r.C, &r.D, &r.L, &r.T, &r.P, &r.exposures};
    for (int i = 0; i < 8; ++i) {
        *ints[i] = std::stoull(cells[1 + i]);
    }
    double* reals[] = {&r.p1, &r.p2, &r.p3, &r.bits_name, &r.bits_value,
                       &r.bits_div, &r.bits_total, &r.R, &r.Rmax};
    for (int i = 0; i < 9; ++i) {
        *reals[i] = std::stod(cells[9 + i]);
    }
    return r;
}

std::string to_json(const CapacityReport& r) {
    nlohmann::ordered_json j;
    j["family"] = family_name(r.family);
    j["N"] = r.N;
    j["K"] = r.K;
    j["C"] = r.C;
    j["D"] = r.D;
    j["L"] = r.L;
    j["T"] = r.T;
    j["P"] = r.P;
    j["exposures"] = r.exposures;
    j["p1"] = r.p1;
    j["p2"] = r.p2;
    j["p3"] = r.p3;
    j["bits_name"] = r.bits_name;
    j["bits_value"] = r.bits_value;
    j["bits_div"] = r.bits_div;
    j["bits_total"] = r.bits_total;
    j["R"] = r.R;
    j["Rmax"] = r.Rmax;
    j["fractions"] = {{"name", r.fraction_name()}, {"value", r.fraction_value()}, {"div", r.fraction_div()}};
    return j.dump();
}

}  // namespace caplab
