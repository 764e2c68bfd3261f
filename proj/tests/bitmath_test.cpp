#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "caplab/bitmath.hpp"
#include "caplab/rng.hpp"
#include "gmp_oracle.hpp"

using namespace caplab;
using test::gmp_log2_binomial;

namespace {

double gmp_upper_bound(const BioDSpec& s) {
    const auto TL = static_cast<std::uint64_t>(std::llround(std::pow(s.T, s.L)));
    return gmp_log2_binomial(s.N0, s.N) + static_cast<double>(s.K) * gmp_log2_binomial(TL, s.D) +
           static_cast<double>(s.N * s.K * s.C) * std::log2(static_cast<double>(s.D));
}

BioDSpec random_spec(CounterRng& rng) {
    BioDSpec s;
    s.T = 2 + rng.uniform(30);
    s.L = 1 + rng.uniform(4);
    while (std::pow(s.T, s.L) > 1e6) {
        --s.L;
    }
    const auto TL = static_cast<std::uint64_t>(std::llround(std::pow(s.T, s.L)));
    s.D = 1 + rng.uniform(TL - 1);
    s.N = 1 + rng.uniform(1000);
    s.N0 = s.N + rng.uniform(100000);
    s.K = 1 + rng.uniform(8);
    s.C = 1 + rng.uniform(4);
    return s;
}

constexpr double ln2 = std::numbers::ln2;

}  // namespace

TEST_CASE("big integer binomials agree with GMP") {
    CHECK(binomial(4, 2).to_string() == "6");
    CHECK(binomial(10, 0).to_string() == "1");
    CHECK(binomial(100, 50).to_string() == "100891344545564193334812497256");
    for (std::uint64_t n : {1ull, 7ull, 64ull, 1000ull, 123457ull}) {
        for (std::uint64_t k : {0ull, 1ull, 3ull, 17ull, 500ull}) {
            if (k > n) {
                continue;
            }
            const double expect = gmp_log2_binomial(n, k);
            CHECK(binomial(n, k).log2() == doctest::Approx(expect).epsilon(1e-12));
            CHECK(log2_binomial(n, k) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("log-gamma branch of log2_binomial stays within 1e-12 relative") {
    for (auto [n, k] : {std::pair<std::uint64_t, std::uint64_t>{1000000, 5000}, {1000000, 499999}, {200000, 90000}}) {
        const double exact = gmp_log2_binomial(n, k);
        CHECK(log2_binomial(n, k) == doctest::Approx(exact).epsilon(1e-12));
        CHECK(log2_binomial(n, k, 1u << 20) == doctest::Approx(exact).epsilon(1e-12));
    }
}

TEST_CASE("upper bound examples") {
    const BioDSpec tiny{.N = 2, .K = 1, .C = 1, .D = 2, .L = 1, .T = 4, .N0 = 4};
    CHECK(upper_bound_bits(tiny) == doctest::Approx(std::log2(6.0) * 2 + 2).epsilon(1e-12));
    CHECK(upper_bound_bits(tiny) == doctest::Approx(7.170).epsilon(1e-4));

    const BioDSpec flat{.N = 30, .K = 5, .C = 3, .D = 1, .L = 2, .T = 4, .N0 = 100};
    CHECK(upper_bound_components(flat).value == 0.0);

    const BioDSpec ex{.N = 10, .K = 2, .C = 2, .D = 3, .L = 2, .T = 4, .N0 = 1000};
    CHECK(upper_bound_components(ex).value == doctest::Approx(63.398).epsilon(1e-5));
    CHECK(upper_bound_bits(ex) == doctest::Approx(gmp_upper_bound(ex)).epsilon(1e-12));
}

TEST_CASE("upper bound matches the GMP oracle on 100 random specs") {
    CounterRng rng(2024, 1);
    for (int i = 0; i < 100; ++i) {
        const auto s = random_spec(rng);
        const double exact = gmp_upper_bound(s);
        CHECK(std::abs(upper_bound_bits(s) - exact) <= 1e-9 * exact);
    }
}

TEST_CASE("lower bound examples") {
    const BioDSpec s{.N = 512, .K = 4, .C = 2, .D = 16, .L = 4, .T = 32, .N0 = 1ull << 24};
    const auto perfect = lower_bound_bits(s, perfect_losses(s));
    const double ub = upper_bound_bits(s);
    CHECK(perfect.total() <= ub * 1.05);
    CHECK(perfect.total() >= ub * 0.95);
    const double TL = std::pow(32.0, 4.0);
    const double expect = 512 * std::log2((s.N0 - 512.0) / 512) + 512 * 4 * 2 * 4.0 + 4 * 16 * std::log2((TL - 16) / 16);
    CHECK(perfect.total() == doctest::Approx(expect).epsilon(1e-12));

    // A model that spreads names over the pool knows nothing about which names exist.
    LossStats pool = perfect_losses(s);
    pool.p1 = std::log(static_cast<double>(s.N0 - s.N));
    CHECK(lower_bound_bits(s, pool).name == 0.0);

    BioDSpec bad = s;
    bad.D = static_cast<std::uint64_t>(TL);
    CHECK_THROWS_AS(lower_bound_bits(bad, perfect_losses(s)), SpecInvalid);
}

TEST_CASE("lower bound is non-increasing in each loss and clipped at zero") {
    const BioDSpec s{.N = 100, .K = 3, .C = 2, .D = 8, .L = 2, .T = 10, .N0 = 100000};
    const LossStats base = perfect_losses(s);
    double prev_n = 1e300, prev_v = 1e300, prev_d = 1e300;
    for (double x = 0; x < 20; x += 0.25) {
        LossStats a = base, b = base, c = base;
        a.p1 = base.p1 + x;
        b.p2m = x;
        c.p3m = x;
        const auto n = lower_bound_bits(s, a).name;
        const auto v = lower_bound_bits(s, b).value;
        const auto d = lower_bound_bits(s, c).diversity;
        CHECK(n <= prev_n);
        CHECK(v <= prev_v);
        CHECK(d <= prev_d);
        if (prev_n > 0 && n > 0) {
            CHECK(n < prev_n);
        }
        CHECK(n >= 0.0);
        CHECK(v >= 0.0);
        CHECK(d >= 0.0);
        prev_n = n;
        prev_v = v;
        prev_d = d;
    }
    const LossStats hopeless{.p1 = 50, .p2m = 50, .p3m = 50};
    const auto raw = lower_bound_bits_unclipped(s, hopeless);
    CHECK(raw.name < 0);
    CHECK(raw.value < 0);
    CHECK(raw.diversity < 0);
    CHECK(lower_bound_bits(s, hopeless).total() == 0.0);
}

TEST_CASE("lower bound never exceeds the upper bound plus its binomial slack") {
    CounterRng rng(7, 2);
    for (int i = 0; i < 200; ++i) {
        const auto s = random_spec(rng);
        LossStats l = perfect_losses(s);
        l.p1 += rng.uniform01() * 2;
        l.p2m = rng.uniform01() * 3;
        l.p3m = l.p2m * rng.uniform01();
        const double slack = static_cast<double>(s.K * s.D + s.N) * std::numbers::log2e;
        CHECK(lower_bound_bits(s, l).total() <= upper_bound_bits(s) + slack);
        CHECK(lower_bound_bits(s, perfect_losses(s)).total() <= upper_bound_bits(s) + slack);
    }
}

TEST_CASE("perfect losses fall short of the upper bound only by the binomial slack") {
    CounterRng rng(8, 3);
    for (int i = 0; i < 100; ++i) {
        auto s = random_spec(rng);
        s.N0 = std::max(s.N0, 100 * s.N);
        // log2 C(n, k) <= k log2(e n / k), so each of the k items loses at most
        // log2(e n / (n - k)) against k log2((n - k) / k).
        const double TL = std::pow(static_cast<double>(s.T), static_cast<double>(s.L));
        const double N = static_cast<double>(s.N), N0 = static_cast<double>(s.N0), D = static_cast<double>(s.D);
        const double slack = N * std::log2(std::numbers::e * N0 / (N0 - N)) +
                             static_cast<double>(s.K) * D * std::log2(std::numbers::e * TL / (TL - D));
        const double lower = lower_bound_bits(s, perfect_losses(s)).total();
        CHECK(lower >= upper_bound_bits(s) - slack - 1e-6 * upper_bound_bits(s));
    }
}

TEST_CASE("perfect losses recover 90% of the upper bound once pools are large") {
    // The per-item slack is log2 e against log2(N0 / N) and log2(T^L / D), so
    // ratios of 10^4 leave at most 1.44 / 14.7 of the bound uncovered.
    CounterRng rng(9, 4);
    for (int i = 0; i < 100; ++i) {
        BioDSpec s;
        s.N = 1 + rng.uniform(1000);
        s.N0 = s.N * (10000 + rng.uniform(100000));
        s.T = 16 + rng.uniform(16);
        s.L = 4;
        const double TL = std::pow(static_cast<double>(s.T), 4.0);
        s.D = 1 + rng.uniform(static_cast<std::uint64_t>(TL / 10000));
        s.K = 1 + rng.uniform(8);
        s.C = 1 + rng.uniform(4);
        CHECK(lower_bound_bits(s, perfect_losses(s)).total() >= 0.9 * upper_bound_bits(s));
    }
}

TEST_CASE("capacity ratios") {
    const BioDSpec s{.N = 512, .K = 4, .C = 2, .D = 16, .L = 4, .T = 32, .N0 = 1ull << 24};
    const auto bits = lower_bound_bits(s, perfect_losses(s));
    const auto P = static_cast<std::uint64_t>(bits.total() / 2);
    const BitComponents two{.name = 2.0 * P, .value = 0, .diversity = 0};
    CHECK(capacity_ratio_biod(two, s, P).first == doctest::Approx(2.0));
    const auto [R, Rmax] = capacity_ratio_biod(bits, s, P);
    CHECK(R == Rmax);
    CHECK(capacity_ratio_biod(BitComponents{}, s, P).first == 0.0);

    // bioS perfect model at N = 10^4, P = 10^6.
    const double perfect = capacity_ratio_bios(10000, std::log(10000.0), 0.0, 1000000);
    CHECK(perfect == doctest::Approx(10000 * (std::log2(1.6e8 / 1e4) + log2_s0()) / 1e6).epsilon(1e-12));
    CHECK(perfect == doctest::Approx(0.617).epsilon(0.002));
    const double n0 = std::log(static_cast<double>(BioSSpec::N0));
    const double s0 = static_cast<double>(std::log(BioSSpec::S0));
    CHECK(capacity_ratio_bios(10000, n0, s0, 1000000) == 0.0);
}

TEST_CASE("S0 carries about 47.6 bits per person") {
    CHECK(log2_s0() >= 47.5);
    CHECK(log2_s0() <= 47.7);
    CHECK(log2_s0() == doctest::Approx(std::log2(2.0 * 67200 * 200 * 300 * 100 * 263)).epsilon(1e-12));
}

TEST_CASE("capacity report rows") {
    const BioDSpec s{.N = 64, .K = 2, .C = 2, .D = 8, .L = 2, .T = 16, .N0 = 100000};
    LossStats l{.p1 = 5.0, .p2m = 1.0, .p3m = 0.4};
    const auto r = capacity_report(s, l, 5000, 1000);
    CHECK(r.bits_total == doctest::Approx(r.bits_name + r.bits_value + r.bits_div));
    CHECK(r.fraction_name() + r.fraction_value() + r.fraction_div() == doctest::Approx(1.0));
    CHECK(r.R <= r.Rmax);
    CHECK(r.bits_name == doctest::Approx(64 * (std::log(100000.0 - 64) - 5.0) / ln2));

    const auto back = parse_csv_row(csv_row(r));
    CHECK(csv_row(back) == csv_row(r));
    CHECK(csv_header() == "family,N,K,C,D,L,T,P,exposures,p1,p2,p3,bits_name,bits_value,bits_div,bits_total,R,Rmax");

    const auto zero = capacity_report(s, LossStats{.p1 = 100, .p2m = 100, .p3m = 100}, 5000, 1000);
    CHECK(zero.bits_total == 0.0);
    CHECK(zero.fraction_name() + zero.fraction_value() + zero.fraction_div() == 0.0);

    const BioSSpec bs{.N = 1000};
    const auto sr = capacity_report(bs, perfect_losses(bs), 100000, 1000);
    CHECK(sr.R == doctest::Approx(sr.Rmax));
    CHECK(sr.bits_div == 0.0);
}
