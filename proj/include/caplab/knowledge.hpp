#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

namespace caplab {

class SpecInvalid : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Family { bioD, bioS };

std::string_view family_name(Family f);
Family parse_family(std::string_view s);

/// Hyperparameters of a bioD(N, K, C, D, L, T) knowledge set over a candidate
/// name pool of size N0.
struct BioDSpec {
    std::uint64_t N = 1;
    std::uint64_t K = 1;
    std::uint64_t C = 1;
    std::uint64_t D = 1;
    std::uint64_t L = 1;
    std::uint64_t T = 2;
    std::uint64_t N0 = 400ULL * 400 * 1000;
    std::uint64_t seed = 0;

    /// T^L. Throws SpecInvalid when it exceeds 2^62.
    std::uint64_t chunk_space() const;
    void validate() const;
    bool operator==(const BioDSpec&) const = default;
};

/// bioS(N): six attributes over fixed domains plus a pronoun.
struct BioSSpec {
    static constexpr std::uint64_t first_names = 400;
    static constexpr std::uint64_t middle_names = 400;
    static constexpr std::uint64_t last_names = 1000;
    static constexpr std::uint64_t N0 = first_names * middle_names * last_names;

    static constexpr std::uint64_t months = 12;
    static constexpr std::uint64_t days = 28;
    static constexpr std::uint64_t years = 200;
    static constexpr std::uint64_t first_year = 1900;
    static constexpr std::uint64_t dates = months * days * years;
    static constexpr std::uint64_t cities = 200;
    static constexpr std::uint64_t universities = 300;
    static constexpr std::uint64_t majors = 100;
    static constexpr std::uint64_t employers = 263;
    static constexpr std::uint64_t pronouns = 2;

    /// Product of the independent attribute domains (working city excluded,
    /// pronoun included).
    static constexpr long double S0 = static_cast<long double>(pronouns) * dates * cities *
                                      universities * majors * employers;

    std::uint64_t N = 1;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const BioSSpec&) const = default;
};

/// bioS attribute order. Working city is a function of the employer.
enum BioSAttr : std::uint32_t {
    birth_date = 0,
    birth_city = 1,
    university = 2,
    major = 3,
    employer = 4,
    working_city = 5,
};
inline constexpr std::uint32_t bios_attribute_count = 6;

/// One person. For bioD `values[a * C + c]` indexes into the diversity set of
/// attribute a; for bioS `values[a]` indexes into the domain of attribute a.
struct Person {
    std::uint64_t name_index = 0;
    std::vector<std::uint32_t> values;
    std::uint8_t pronoun = 0;

    bool operator==(const Person&) const = default;
};

class KnowledgeBase {
public:
    KnowledgeBase() = default;
    KnowledgeBase(BioDSpec spec, std::vector<Person> persons,
                  std::vector<std::vector<std::uint64_t>> diversity_sets);
    KnowledgeBase(BioSSpec spec, std::vector<Person> persons);

    Family family() const { return std::holds_alternative<BioDSpec>(spec_) ? Family::bioD : Family::bioS; }
    const BioDSpec& biod() const { return std::get<BioDSpec>(spec_); }
    const BioSSpec& bios() const { return std::get<BioSSpec>(spec_); }
    std::uint64_t seed() const;

    std::size_t size() const { return persons_.size(); }
    const Person& person(std::size_t i) const;
    const std::vector<Person>& persons() const { return persons_; }

    std::size_t attribute_count() const;
    std::string attribute_name(std::size_t attr) const;

    /// Word tokens of the person's name (bioD: one token, bioS: three).
    std::vector<std::string> name_tokens(std::size_t person) const;
    std::string full_name(std::size_t person) const;
    /// Word tokens of v*(n, a). bioD: C chunk tokens; bioS: one token except
    /// birth dates (day, month, year).
    std::vector<std::string> value_tokens(std::size_t person, std::size_t attr) const;

    /// Diversity set of attribute a as chunk codes in [0, T^L). bioD only.
    const std::vector<std::uint64_t>& diversity_set(std::size_t attr) const;

    bool operator==(const KnowledgeBase&) const = default;

private:
    std::variant<BioDSpec, BioSSpec> spec_;
    std::vector<Person> persons_;
    std::vector<std::vector<std::uint64_t>> diversity_sets_;
};

KnowledgeBase gen_biod(const BioDSpec& spec);
KnowledgeBase gen_bios(const BioSSpec& spec);

/// N distinct integers from [0, pool) in draw order; a partial Fisher-Yates
/// shuffle over a sparse swap table keyed by (seed, stream).
std::vector<std::uint64_t> sample_without_replacement(std::uint64_t pool, std::uint64_t count,
                                                      std::uint64_t seed, std::uint64_t stream_id);

/// Token string of bioD chunk `code` in [0, T^L): L base-T digits.
std::string chunk_token(std::uint64_t code, std::uint64_t T, std::uint64_t L);
std::string biod_name(std::uint64_t name_index);
std::string biod_attribute(std::size_t attr);

// bioS tables.
std::vector<std::string> bios_name_tokens(std::uint64_t name_index);
std::vector<std::string> bios_value_tokens(BioSAttr attr, std::uint32_t value);
std::uint32_t bios_domain_size(BioSAttr attr);
std::string_view bios_attribute_name(BioSAttr attr);
/// Working-city index of an employer's headquarters.
std::uint32_t employer_city(std::uint32_t employer);
std::string_view pronoun_token(std::uint8_t pronoun);
/// Every distinct token a bioS knowledge set can produce (names, values, pronouns).
std::vector<std::string> bios_all_tokens();

/// Draws the six attributes and pronoun of bioS person `index` under `seed`.
Person bios_person(std::uint64_t seed, std::uint64_t index, std::uint64_t name_index);

struct KbStats {
    Family family = Family::bioS;
    std::uint64_t N = 0;
    std::uint64_t K = 0;
    std::vector<std::uint64_t> domain_sizes;
    double upper_bound_bits = 0.0;
    double name_bits = 0.0;
    double value_bits = 0.0;
    double diversity_bits = 0.0;
    /// Knowledge per person excluding the name (bioS: log2 S0).
    double per_person_bits = 0.0;
};

KbStats kb_stats(const KnowledgeBase& kb);

void write_kb_jsonl(const KnowledgeBase& kb, std::ostream& out);
KnowledgeBase read_kb_jsonl(std::istream& in);

}  // namespace caplab
