#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace caplab::test {

// Critical values of chi-square at p = 0.001 (scipy.stats.chi2.ppf(0.999, dof)).
inline double chi2_critical_999(std::size_t dof) {
    static const std::map<std::size_t, double> table = {
        {1, 10.827566}, {11, 31.264134}, {15, 37.697298}, {27, 55.476020}, {99, 148.230359},
        {199, 266.385895}, {262, 338.470758}, {299, 380.299028}};
    return table.at(dof);
}

template <class Key>
double chi2_uniform(const std::map<Key, std::size_t>& counts, std::size_t categories, std::size_t total) {
    const double expected = static_cast<double>(total) / static_cast<double>(categories);
    double stat = 0.0;
    std::size_t seen = 0;
    for (const auto& [k, c] : counts) {
        const double diff = static_cast<double>(c) - expected;
        stat += diff * diff / expected;
        ++seen;
    }
    // Categories never drawn contribute expected each.
    stat += static_cast<double>(categories - seen) * expected;
    return stat;
}

}  // namespace caplab::test

#include <filesystem>

namespace caplab::test {

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::path(CAPLAB_TEST_TMP) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace caplab::test
