#include "caplab/knowledge.hpp"

#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <unordered_map>

#include "json.hpp"

#include "caplab/bitmath.hpp"
#include "caplab/rng.hpp"

namespace caplab {

namespace tables {
#include "bios_tables.inc"
}  // namespace tables

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

constexpr std::array<std::string_view, 12> kMonths = {
    "January", "February", "March",     "April",   "May",      "June",
    "July",    "August",   "September", "October", "November", "December"};

constexpr std::array<std::string_view, 6> kBioSAttrNames = {
    "birth_date", "birth_city", "university", "major", "employer", "working_city"};

std::uint64_t checked_pow(std::uint64_t base, std::uint64_t exp) {
    constexpr std::uint64_t limit = 1ULL << 62;
    std::uint64_t r = 1;
    for (std::uint64_t i = 0; i < exp; ++i) {
        if (base != 0 && r > limit / base) {
            throw SpecInvalid("T^L exceeds 2^62");
        }
        r *= base;
    }
    if (r > limit) {
        throw SpecInvalid("T^L exceeds 2^62");
    }
    return r;
}

const std::vector<std::uint32_t>& employer_city_table() {
    static const std::vector<std::uint32_t> table = [] {
        std::vector<std::uint32_t> t(BioSSpec::employers);
        CounterRng rng(0x5eedc17eULL, stream::tables);
        for (auto& c : t) {
            c = static_cast<std::uint32_t>(rng.uniform(BioSSpec::cities));
        }
        return t;
    }();
    return table;
}

}  // namespace

std::string_view family_name(Family f) { return f == Family::bioD ? "bioD" : "bioS"; }

Family parse_family(std::string_view s) {
    if (s == "bioD") {
        return Family::bioD;
    }
    if (s == "bioS") {
        return Family::bioS;
    }
    throw SpecInvalid("unknown family: " + std::string(s));
}

std::uint64_t BioDSpec::chunk_space() const { return checked_pow(T, L); }

void BioDSpec::validate() const {
    if (N < 1) {
        throw SpecInvalid("bioD: N must be >= 1");
    }
    if (K < 1 || C < 1 || L < 1 || T < 1) {
        throw SpecInvalid("bioD: K, C, L, T must be >= 1");
    }
    if (N > N0) {
        throw SpecInvalid("bioD: N exceeds the candidate pool N0");
    }
    const std::uint64_t space = chunk_space();
    if (D < 1 || D >= space) {
        throw SpecInvalid("bioD: need 1 <= D < T^L");
    }
    if (D > std::numeric_limits<std::uint32_t>::max()) {
        throw SpecInvalid("bioD: D too large");
    }
}

void BioSSpec::validate() const {
    if (N < 1 || N > N0) {
        throw SpecInvalid("bioS: need 1 <= N <= 400*400*1000");
    }
}

KnowledgeBase::KnowledgeBase(BioDSpec spec, std::vector<Person> persons,
                             std::vector<std::vector<std::uint64_t>> diversity_sets)
    : spec_(spec), persons_(std::move(persons)), diversity_sets_(std::move(diversity_sets)) {}

KnowledgeBase::KnowledgeBase(BioSSpec spec, std::vector<Person> persons)
    : spec_(spec), persons_(std::move(persons)) {}

std::uint64_t KnowledgeBase::seed() const {
    return family() == Family::bioD ? biod().seed : bios().seed;
}

const Person& KnowledgeBase::person(std::size_t i) const {
    if (i >= persons_.size()) {
        throw std::out_of_range("unknown person " + std::to_string(i));
    }
    return persons_[i];
}

std::size_t KnowledgeBase::attribute_count() const {
    return family() == Family::bioD ? static_cast<std::size_t>(biod().K) : bios_attribute_count;
}

std::string KnowledgeBase::attribute_name(std::size_t attr) const {
    if (family() == Family::bioD) {
        return biod_attribute(attr);
    }
    return std::string(bios_attribute_name(static_cast<BioSAttr>(attr)));
}

std::vector<std::string> KnowledgeBase::name_tokens(std::size_t p) const {
    const Person& who = person(p);
    if (family() == Family::bioD) {
        return {biod_name(who.name_index)};
    }
    return bios_name_tokens(who.name_index);
}

std::string KnowledgeBase::full_name(std::size_t p) const {
    std::string out;
    for (const auto& t : name_tokens(p)) {
        if (!out.empty()) {
            out += ' ';
        }
        out += t;
    }
    return out;
}

std::vector<std::string> KnowledgeBase::value_tokens(std::size_t p, std::size_t attr) const {
    const Person& who = person(p);
    if (family() == Family::bioD) {
        const auto& s = biod();
        std::vector<std::string> out;
        out.reserve(s.C);
        for (std::uint64_t c = 0; c < s.C; ++c) {
            const auto chunk = who.values.at(attr * s.C + c);
            out.push_back(chunk_token(diversity_sets_.at(attr).at(chunk), s.T, s.L));
        }
        return out;
    }
    return bios_value_tokens(static_cast<BioSAttr>(attr), who.values.at(attr));
}

const std::vector<std::uint64_t>& KnowledgeBase::diversity_set(std::size_t attr) const {
    return diversity_sets_.at(attr);
}

std::vector<std::uint64_t> sample_without_replacement(std::uint64_t pool, std::uint64_t count,
                                                      std::uint64_t seed, std::uint64_t stream_id) {
    if (count > pool) {
        throw SpecInvalid("cannot draw more items than the pool holds");
    }
    CounterRng rng(seed, stream_id);
    std::unordered_map<std::uint64_t, std::uint64_t> swapped;
    swapped.reserve(2 * count);
    auto at = [&](std::uint64_t i) {
        auto it = swapped.find(i);
        return it == swapped.end() ? i : it->second;
    };
    std::vector<std::uint64_t> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t j = i + rng.uniform(pool - i);
        const std::uint64_t vi = at(i);
        const std::uint64_t vj = at(j);
        swapped[j] = vi;
        swapped[i] = vj;
        out.push_back(vj);
    }
    return out;
}

std::string chunk_token(std::uint64_t code, std::uint64_t T, std::uint64_t L) {
    std::vector<std::uint64_t> digits(L);
    for (std::uint64_t i = 0; i < L; ++i) {
        digits[L - 1 - i] = code % T;
        code /= T;
    }
    std::string out = "c";
    for (std::uint64_t i = 0; i < L; ++i) {
        if (i > 0) {
            out += '_';
        }
        out += std::to_string(digits[i]);
    }
    return out;
}

std::string biod_name(std::uint64_t name_index) { return "Name_" + std::to_string(name_index); }

std::string biod_attribute(std::size_t attr) { return "ID " + std::to_string(attr + 1); }

std::vector<std::string> bios_name_tokens(std::uint64_t name_index) {
    const auto last = name_index % BioSSpec::last_names;
    const auto middle = (name_index / BioSSpec::last_names) % BioSSpec::middle_names;
    const auto first = name_index / (BioSSpec::last_names * BioSSpec::middle_names);
    return {std::string(tables::first_names.at(first)), std::string(tables::middle_names.at(middle)),
            std::string(tables::last_names.at(last))};
}

std::vector<std::string> bios_value_tokens(BioSAttr attr, std::uint32_t value) {
    switch (attr) {
        case birth_date: {
            const auto year = value % BioSSpec::years;
            const auto day = (value / BioSSpec::years) % BioSSpec::days;
            const auto month = value / (BioSSpec::years * BioSSpec::days);
            return {std::to_string(day + 1), std::string(kMonths.at(month)),
                    std::to_string(BioSSpec::first_year + year)};
        }
        case birth_city:
        case working_city:
            return {std::string(tables::cities.at(value))};
        case university:
            return {std::string(tables::universities.at(value))};
        case major:
            return {std::string(tables::majors.at(value))};
        case employer:
            return {std::string(tables::employers.at(value))};
    }
    throw std::out_of_range("bad bioS attribute");
}

std::uint32_t bios_domain_size(BioSAttr attr) {
    switch (attr) {
        case birth_date: return BioSSpec::dates;
        case birth_city: return BioSSpec::cities;
        case university: return BioSSpec::universities;
        case major: return BioSSpec::majors;
        case employer: return BioSSpec::employers;
        case working_city: return BioSSpec::cities;
    }
    throw std::out_of_range("bad bioS attribute");
}

std::string_view bios_attribute_name(BioSAttr attr) { return kBioSAttrNames.at(attr); }

std::uint32_t employer_city(std::uint32_t employer) { return employer_city_table().at(employer); }

std::string_view pronoun_token(std::uint8_t pronoun) { return pronoun == 0 ? "He" : "She"; }

std::vector<std::string> bios_all_tokens() {
    std::vector<std::string> out;
    auto add = [&](const auto& table) {
        for (auto w : table) {
            out.emplace_back(w);
        }
    };
    add(tables::first_names);
    add(tables::middle_names);
    add(tables::last_names);
    for (std::uint64_t d = 1; d <= BioSSpec::days; ++d) {
        out.push_back(std::to_string(d));
    }
    add(kMonths);
    for (std::uint64_t y = 0; y < BioSSpec::years; ++y) {
        out.push_back(std::to_string(BioSSpec::first_year + y));
    }
    add(tables::cities);
    add(tables::universities);
    add(tables::majors);
    add(tables::employers);
    out.emplace_back(pronoun_token(0));
    out.emplace_back(pronoun_token(1));
    return out;
}

Person bios_person(std::uint64_t seed, std::uint64_t index, std::uint64_t name_index) {
    CounterRng rng(hash_combine(seed, index), stream::attributes);
    Person p;
    p.name_index = name_index;
    p.values.resize(bios_attribute_count);
    p.values[birth_date] = static_cast<std::uint32_t>(rng.uniform(BioSSpec::dates));
    p.values[birth_city] = static_cast<std::uint32_t>(rng.uniform(BioSSpec::cities));
    p.values[university] = static_cast<std::uint32_t>(rng.uniform(BioSSpec::universities));
    p.values[major] = static_cast<std::uint32_t>(rng.uniform(BioSSpec::majors));
    p.values[employer] = static_cast<std::uint32_t>(rng.uniform(BioSSpec::employers));
    p.values[working_city] = employer_city(p.values[employer]);
    p.pronoun = static_cast<std::uint8_t>(rng.uniform(BioSSpec::pronouns));
    return p;
}

KnowledgeBase gen_biod(const BioDSpec& spec) {
    spec.validate();
    const std::uint64_t space = spec.chunk_space();
    const auto names = sample_without_replacement(spec.N0, spec.N, spec.seed, stream::names);

    std::vector<std::vector<std::uint64_t>> diversity(spec.K);
    for (std::uint64_t a = 0; a < spec.K; ++a) {
        diversity[a] = sample_without_replacement(space, spec.D, hash_combine(spec.seed, a), stream::diversity);
    }

    std::vector<Person> persons(spec.N);
    for (std::uint64_t n = 0; n < spec.N; ++n) {
        CounterRng rng(hash_combine(spec.seed, n), stream::values);
        persons[n].name_index = names[n];
        persons[n].values.resize(spec.K * spec.C);
        for (auto& v : persons[n].values) {
            v = static_cast<std::uint32_t>(rng.uniform(spec.D));
        }
    }
    return KnowledgeBase(spec, std::move(persons), std::move(diversity));
}

KnowledgeBase gen_bios(const BioSSpec& spec) {
    spec.validate();
    const auto names = sample_without_replacement(BioSSpec::N0, spec.N, spec.seed, stream::names);
    std::vector<Person> persons;
    persons.reserve(spec.N);
    for (std::uint64_t n = 0; n < spec.N; ++n) {
        persons.push_back(bios_person(spec.seed, n, names[n]));
    }
    return KnowledgeBase(spec, std::move(persons));
}

KbStats kb_stats(const KnowledgeBase& kb) {
    KbStats s;
    s.family = kb.family();
    s.N = kb.size();
    s.K = kb.attribute_count();
    if (kb.family() == Family::bioD) {
        const auto& spec = kb.biod();
        s.domain_sizes.assign(spec.K, spec.D);
        const auto ub = upper_bound_components(spec);
        s.name_bits = ub.name;
        s.value_bits = ub.value;
        s.diversity_bits = ub.diversity;
        s.upper_bound_bits = ub.total();
        s.per_person_bits = static_cast<double>(spec.K * spec.C) * std::log2(static_cast<double>(spec.D));
    } else {
        for (std::uint32_t a = 0; a < bios_attribute_count; ++a) {
            s.domain_sizes.push_back(bios_domain_size(static_cast<BioSAttr>(a)));
        }
        s.name_bits = log2_binomial(BioSSpec::N0, kb.size());
        s.per_person_bits = log2_s0();
        s.value_bits = static_cast<double>(kb.size()) * s.per_person_bits;
        s.upper_bound_bits = s.name_bits + s.value_bits;
    }
    return s;
}

void write_kb_jsonl(const KnowledgeBase& kb, std::ostream& out) {
    json header;
    header["family"] = family_name(kb.family());
    header["format_version"] = kFormatVersion;
    header["seed"] = kb.seed();
    if (kb.family() == Family::bioD) {
        const auto& s = kb.biod();
        header["spec"] = {{"N", s.N}, {"K", s.K}, {"C", s.C}, {"D", s.D},
                          {"L", s.L}, {"T", s.T}, {"N0", s.N0}};
    } else {
        header["spec"] = {{"N", kb.bios().N}};
    }
    out << header.dump() << '\n';

    for (std::size_t p = 0; p < kb.size(); ++p) {
        const Person& who = kb.person(p);
        json rec;
        rec["name"] = kb.full_name(p);
        rec["name_index"] = who.name_index;
        json attrs = json::object();
        for (std::size_t a = 0; a < kb.attribute_count(); ++a) {
            std::string v;
            for (const auto& t : kb.value_tokens(p, a)) {
                if (!v.empty()) {
                    v += ' ';
                }
                v += t;
            }
            attrs[kb.attribute_name(a)] = v;
        }
        rec["attrs"] = attrs;
        rec["values"] = who.values;
        if (kb.family() == Family::bioS) {
            rec["pronoun"] = who.pronoun;
        }
        out << rec.dump() << '\n';
    }

    if (kb.family() == Family::bioD) {
        const auto& s = kb.biod();
        json sets = json::object();
        json codes = json::array();
        for (std::size_t a = 0; a < s.K; ++a) {
            std::vector<std::string> chunks;
            for (auto c : kb.diversity_set(a)) {
                chunks.push_back(chunk_token(c, s.T, s.L));
            }
            sets[kb.attribute_name(a)] = chunks;
            codes.push_back(kb.diversity_set(a));
        }
        out << json{{"diversity_sets", sets}, {"diversity_codes", codes}}.dump() << '\n';
    }
}

KnowledgeBase read_kb_jsonl(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw SpecInvalid("empty knowledge-base file");
    }
    const json header = json::parse(line);
    if (header.at("format_version").get<int>() != kFormatVersion) {
        throw SpecInvalid("unsupported knowledge-base format version");
    }
    const Family family = parse_family(header.at("family").get<std::string>());
    const auto seed = header.at("seed").get<std::uint64_t>();
    const json& spec = header.at("spec");

    std::vector<Person> persons;
    std::vector<std::vector<std::uint64_t>> diversity;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const json rec = json::parse(line);
        if (rec.contains("diversity_codes")) {
            diversity = rec.at("diversity_codes").get<std::vector<std::vector<std::uint64_t>>>();
            continue;
        }
        Person p;
        p.name_index = rec.at("name_index").get<std::uint64_t>();
        p.values = rec.at("values").get<std::vector<std::uint32_t>>();
        p.pronoun = rec.value("pronoun", std::uint8_t{0});
        persons.push_back(std::move(p));
    }

    if (family == Family::bioD) {
        BioDSpec s;
        s.N = spec.at("N");
        s.K = spec.at("K");
        s.C = spec.at("C");
        s.D = spec.at("D");
        s.L = spec.at("L");
        s.T = spec.at("T");
        s.N0 = spec.at("N0");
        s.seed = seed;
        s.validate();
        if (persons.size() != s.N || diversity.size() != s.K) {
            throw SpecInvalid("knowledge-base file does not match its header");
        }
        return KnowledgeBase(s, std::move(persons), std::move(diversity));
    }
    BioSSpec s;
    s.N = spec.at("N");
    s.seed = seed;
    s.validate();
    if (persons.size() != s.N) {
        throw SpecInvalid("knowledge-base file does not match its header");
    }
    return KnowledgeBase(s, std::move(persons));
}

}  // namespace caplab
