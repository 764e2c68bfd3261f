#pragma once

#include <gmp.h>

#include <cmath>
#include <cstdint>

namespace caplab::test {

// log2 C(n, k) from an exact GMP binomial.
inline double gmp_log2_binomial(std::uint64_t n, std::uint64_t k) {
    mpz_t c;
    mpz_init(c);
    mpz_bin_uiui(c, n, k);
    long exp = 0;
    const double mant = mpz_get_d_2exp(&exp, c);
    mpz_clear(c);
    return static_cast<double>(exp) + std::log2(mant);
}

}  // namespace caplab::test
