#include "caplab/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace caplab {

std::string_view oracle_kind_name(OracleKind k) {
    switch (k) {
        case OracleKind::perfect: return "perfect";
        case OracleKind::uniform: return "uniform";
        case OracleKind::q_noisy: return "q_noisy";
        case OracleKind::name_uniform_over_pool: return "name_uniform_over_pool";
    }
    return "?";
}

OracleKind parse_oracle_kind(std::string_view s) {
    for (auto k : {OracleKind::perfect, OracleKind::uniform, OracleKind::q_noisy,
                   OracleKind::name_uniform_over_pool}) {
        if (oracle_kind_name(k) == s) {
            return k;
        }
    }
    throw std::invalid_argument("unknown oracle kind: " + std::string(s));
}

void OracleSpec::validate() const {
    if (!(q >= 0.0 && q <= 1.0)) {
        throw std::invalid_argument("oracle q must lie in [0, 1]");
    }
}

namespace {

std::uint64_t prefix_hash(const std::uint32_t* tokens, std::size_t len) {
    std::uint64_t h = mix64(len);
    for (std::size_t i = 0; i < len; ++i) {
        h = hash_combine(h, tokens[i]);
    }
    return h;
}

std::vector<std::uint32_t> present_ids(const Vocab& vocab, const std::vector<std::string>& words) {
    std::vector<std::uint32_t> ids;
    for (const auto& w : words) {
        if (auto id = vocab.find(w)) {
            ids.push_back(*id);
        }
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

bool contains(const std::vector<std::uint32_t>& sorted, std::uint32_t id) {
    return std::binary_search(sorted.begin(), sorted.end(), id);
}

void uniform_row(Eigen::Ref<Eigen::RowVectorXd> p) { p.setConstant(1.0 / static_cast<double>(p.size())); }

void one_hot(Eigen::Ref<Eigen::RowVectorXd> p, std::uint32_t id) {
    p.setZero();
    p(id) = 1.0;
}

}  // namespace

OracleModel::OracleModel(const OracleSpec& spec, const Renderer& renderer)
    : spec_(spec), renderer_(renderer), V_(renderer.vocab().size()), rng_(spec.seed, stream::sample) {
    spec_.validate();
    const KnowledgeBase& kb = renderer.kb();
    const Vocab& vocab = renderer.vocab();
    const bool bios = kb.family() == Family::bioS;

    // Value alphabets, keyed so identical domains are stored once.
    std::map<std::pair<std::int32_t, std::size_t>, std::size_t> alphabet_key;
    auto alphabet = [&](std::int32_t attr, std::size_t pos) -> std::size_t {
        const auto key = std::make_pair(attr, pos);
        if (auto it = alphabet_key.find(key); it != alphabet_key.end()) {
            return it->second;
        }
        std::vector<std::string> words;
        double size = 0.0;
        if (!bios) {
            const auto& spec_d = kb.biod();
            for (auto code : kb.diversity_set(static_cast<std::size_t>(attr))) {
                words.push_back(chunk_token(code, spec_d.T, spec_d.L));
            }
            size = static_cast<double>(spec_d.D);
        } else if (attr == pronoun_attribute) {
            words = {std::string(pronoun_token(0)), std::string(pronoun_token(1))};
            size = static_cast<double>(BioSSpec::pronouns);
        } else if (attr == static_cast<std::int32_t>(birth_date)) {
            // Date value v = (month * days + day) * years + year.
            const std::uint64_t sizes[3] = {BioSSpec::days, BioSSpec::months, BioSSpec::years};
            const std::uint64_t stride[3] = {BioSSpec::years, BioSSpec::years * BioSSpec::days, 1};
            for (std::uint64_t i = 0; i < sizes[pos]; ++i) {
                words.push_back(bios_value_tokens(birth_date, static_cast<std::uint32_t>(i * stride[pos]))[pos]);
            }
            size = static_cast<double>(sizes[pos]);
        } else {
            const auto a = static_cast<BioSAttr>(attr);
            for (std::uint32_t v = 0; v < bios_domain_size(a); ++v) {
                words.push_back(bios_value_tokens(a, v)[0]);
            }
            size = static_cast<double>(bios_domain_size(a));
        }
        alphabets_.push_back({present_ids(vocab, words), size});
        alphabet_key.emplace(key, alphabets_.size() - 1);
        return alphabets_.size() - 1;
    };

    canon_.reserve(kb.size());
    for (std::size_t n = 0; n < kb.size(); ++n) {
        const RenderedParagraph par = renderer.render_canonical(n);
        Canon c;
        c.tokens = par.tokens;
        c.group_of.assign(c.tokens.size(), -1);
        std::int32_t last_attr = std::numeric_limits<std::int32_t>::min();
        for (const Span& s : par.spans) {
            if (s.kind == SpanKind::name) {
                name_len_ = s.length;
                for (std::uint32_t i = 0; i < s.length; ++i) {
                    name_next_[prefix_hash(c.tokens.data() + s.start, i)][c.tokens[s.start + i]] += 1;
                }
                person_by_name_[prefix_hash(c.tokens.data() + s.start, s.length)] = n;
                continue;
            }
            if (s.kind != SpanKind::value) {
                continue;
            }
            if (s.attribute != last_attr) {
                c.groups.push_back({s.start, {}});
                last_attr = s.attribute;
            }
            Group& g = c.groups.back();
            for (std::uint32_t i = 0; i < s.length; ++i) {
                c.group_of[s.start + i] = static_cast<std::int32_t>(c.groups.size() - 1);
                g.alphabets.push_back(alphabet(s.attribute, g.alphabets.size()));
            }
        }
        canon_.push_back(std::move(c));
    }

    if (bios) {
        std::vector<std::string> parts[3];
        for (std::uint64_t i = 0; i < BioSSpec::first_names; ++i) {
            parts[0].push_back(bios_name_tokens(i * BioSSpec::middle_names * BioSSpec::last_names)[0]);
        }
        for (std::uint64_t i = 0; i < BioSSpec::middle_names; ++i) {
            parts[1].push_back(bios_name_tokens(i * BioSSpec::last_names)[1]);
        }
        for (std::uint64_t i = 0; i < BioSSpec::last_names; ++i) {
            parts[2].push_back(bios_name_tokens(i)[2]);
        }
        for (const auto& part : parts) {
            pool_alphabets_.push_back(present_ids(vocab, part));
        }
        pool_sizes_ = {static_cast<double>(BioSSpec::first_names), static_cast<double>(BioSSpec::middle_names),
                       static_cast<double>(BioSSpec::last_names)};
    } else {
        std::vector<std::string> names;
        for (std::size_t n = 0; n < kb.size(); ++n) {
            names.push_back(biod_name(kb.person(n).name_index));
        }
        pool_alphabets_.push_back(present_ids(vocab, names));
        pool_sizes_ = {static_cast<double>(kb.biod().N0)};
    }
}

OracleModel::Position OracleModel::locate(const std::vector<std::uint32_t>& tokens, std::size_t row) const {
    Position pos;
    pos.context = spec_.special_token ? 2 : 1;
    pos.offset = static_cast<std::int64_t>(row + 1) - static_cast<std::int64_t>(pos.context);
    if (pos.offset >= static_cast<std::int64_t>(name_len_) && tokens.size() >= pos.context + name_len_) {
        auto it = person_by_name_.find(prefix_hash(tokens.data() + pos.context, name_len_));
        if (it != person_by_name_.end()) {
            pos.person = static_cast<std::int64_t>(it->second);
        }
    }
    return pos;
}

void OracleModel::name_row(const std::vector<std::uint32_t>& tokens, std::size_t begin, std::size_t len,
                           Eigen::Ref<Eigen::RowVectorXd> p) const {
    if (spec_.kind == OracleKind::name_uniform_over_pool) {
        p.setZero();
        const auto& ids = pool_alphabets_.at(len);
        const double each = 1.0 / pool_sizes_.at(len);
        for (auto id : ids) {
            p(id) = each;
        }
        p(Vocab::pad) += 1.0 - each * static_cast<double>(ids.size());
        return;
    }
    auto it = name_next_.find(prefix_hash(tokens.data() + begin, len));
    if (it == name_next_.end()) {
        uniform_row(p);
        return;
    }
    double total = 0.0;
    for (const auto& [id, count] : it->second) {
        total += count;
    }
    p.setZero();
    for (const auto& [id, count] : it->second) {
        p(id) = count / total;
    }
}

void OracleModel::value_row(const Canon& c, const Group& g, std::size_t k, const std::uint32_t* query,
                            Eigen::Ref<Eigen::RowVectorXd> p) const {
    // Mixture q * [correct value] + (1 - q) * uniform over the domain, conditioned
    // on the k value tokens already present.
    bool correct = true;
    double uniform_mass = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
        const Alphabet& a = alphabets_[g.alphabets[i]];
        correct = correct && query[i] == c.tokens[g.start + i];
        uniform_mass *= contains(a.ids, query[i]) ? 1.0 / a.size : 0.0;
    }
    const double q = spec_.q;
    const double hit = correct ? q : 0.0;
    const double spread = (1.0 - q) * uniform_mass;
    const double denom = hit + spread;
    if (!(denom > 0.0)) {
        uniform_row(p);
        return;
    }
    const Alphabet& a = alphabets_[g.alphabets[k]];
    p.setZero();
    const double each = spread / a.size / denom;
    for (auto id : a.ids) {
        p(id) = each;
    }
    p(c.tokens[g.start + k]) += hit / denom;
    p(Vocab::pad) += spread * (1.0 - static_cast<double>(a.ids.size()) / a.size) / denom;
}

void OracleModel::fill_row(const std::vector<std::uint32_t>& tokens, std::size_t row,
                           Eigen::Ref<Eigen::RowVectorXd> p) const {
    if (spec_.kind == OracleKind::uniform) {
        uniform_row(p);
        return;
    }
    const Position pos = locate(tokens, row);
    if (pos.offset < 0) {
        uniform_row(p);
        return;
    }
    const auto o = static_cast<std::size_t>(pos.offset);
    if (o < name_len_) {
        name_row(tokens, pos.context, o, p);
        return;
    }
    if (pos.person < 0) {
        uniform_row(p);
        return;
    }
    const Canon& c = canon_[static_cast<std::size_t>(pos.person)];
    if (o > c.tokens.size()) {
        uniform_row(p);
        return;
    }
    if (o == c.tokens.size()) {
        one_hot(p, Vocab::eos);
        return;
    }
    const std::int32_t gi = c.group_of[o];
    if (gi >= 0 && spec_.kind == OracleKind::q_noisy) {
        const Group& g = c.groups[static_cast<std::size_t>(gi)];
        value_row(c, g, o - g.start, tokens.data() + pos.context + g.start, p);
        return;
    }
    one_hot(p, c.tokens[o]);
}

Eigen::MatrixXd OracleModel::log_probs(const std::vector<std::uint32_t>& tokens) const {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(
        static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(V_));
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        fill_row(tokens, t, out.row(static_cast<Eigen::Index>(t)));
    }
    return out.array().log().matrix();
}

std::vector<std::uint32_t> OracleModel::generate(const std::vector<std::uint32_t>& prefix, std::size_t n) const {
    std::vector<std::uint32_t> seq = prefix;
    while (seq.size() < prefix.size() + n) {
        if (spec_.kind == OracleKind::uniform) {
            seq.push_back(static_cast<std::uint32_t>(rng_.uniform(V_)));
            continue;
        }
        if (spec_.kind == OracleKind::q_noisy && !seq.empty()) {
            const Position pos = locate(seq, seq.size() - 1);
            if (pos.person >= 0 && pos.offset >= 0) {
                const Canon& c = canon_[static_cast<std::size_t>(pos.person)];
                const auto o = static_cast<std::size_t>(pos.offset);
                const std::int32_t gi = o < c.tokens.size() ? c.group_of[o] : -1;
                if (gi >= 0 && c.groups[static_cast<std::size_t>(gi)].start == o) {
                    const Group& g = c.groups[static_cast<std::size_t>(gi)];
                    const bool hit = rng_.uniform01() < spec_.q;
                    for (std::size_t k = 0; k < g.alphabets.size() && seq.size() < prefix.size() + n; ++k) {
                        if (hit) {
                            seq.push_back(c.tokens[g.start + k]);
                            continue;
                        }
                        const Alphabet& a = alphabets_[g.alphabets[k]];
                        const auto r = rng_.uniform(static_cast<std::uint64_t>(a.size));
                        seq.push_back(r < a.ids.size() ? a.ids[r] : Vocab::pad);
                    }
                    continue;
                }
            }
        }
        const Eigen::MatrixXd lp = log_probs(seq);
        Eigen::Index best = 0;
        lp.row(lp.rows() - 1).maxCoeff(&best);
        seq.push_back(static_cast<std::uint32_t>(best));
    }
    return {seq.begin() + static_cast<std::ptrdiff_t>(prefix.size()), seq.end()};
}

std::unique_ptr<LanguageModel> make_oracle(const OracleSpec& spec, const Renderer& renderer) {
    return std::make_unique<OracleModel>(spec, renderer);
}

OracleAnalytic analytic_bits(const OracleSpec& spec, const Renderer& renderer) {
    spec.validate();
    const KnowledgeBase& kb = renderer.kb();
    const double V = static_cast<double>(renderer.vocab().size());
    const double N = static_cast<double>(kb.size());
    const double q = spec.q;
    auto mix = [q](double domain) { return -std::log(q + (1.0 - q) / domain); };
    OracleAnalytic out;
    LossStats& s = out.losses;

    if (kb.family() == Family::bioD) {
        const auto& d = kb.biod();
        const double C = static_cast<double>(d.C);
        const double K = static_cast<double>(d.K);
        switch (spec.kind) {
            case OracleKind::perfect:
                s = {std::log(N), 0.0, 0.0, 0.0};
                break;
            case OracleKind::uniform:
                s = {std::log(V), C * std::log(V), std::log(V), K * C * std::log(V)};
                break;
            case OracleKind::q_noisy:
                s.p1 = std::log(N);
                s.p2m = mix(std::pow(static_cast<double>(d.D), C));
                s.p3m = mix(static_cast<double>(d.D));
                s.p2s = K * s.p2m;
                break;
            case OracleKind::name_uniform_over_pool:
                s = {std::log(static_cast<double>(d.N0)), 0.0, 0.0, 0.0};
                break;
        }
        out.report = capacity_report(d, s, 1, 0);
    } else {
        const double K = bios_attribute_count;
        const double value_tokens = 3.0 + (K - 1.0);  // birth date spans three tokens
        switch (spec.kind) {
            case OracleKind::perfect:
                s = {std::log(N), 0.0, 0.0, 0.0};
                break;
            case OracleKind::uniform:
                s.p1 = 3.0 * std::log(V);
                s.p2m = value_tokens / K * std::log(V);
                s.p3m = s.p2m;
                s.p2s = (value_tokens + 1.0) * std::log(V);
                break;
            case OracleKind::q_noisy: {
                double sum = 0.0;
                for (std::uint32_t a = 0; a < bios_attribute_count; ++a) {
                    sum += mix(bios_domain_size(static_cast<BioSAttr>(a)));
                }
                s.p1 = std::log(N);
                s.p2m = sum / K;
                s.p3m = s.p2m;
                s.p2s = sum + mix(static_cast<double>(BioSSpec::pronouns));
                break;
            }
            case OracleKind::name_uniform_over_pool:
                s = {std::log(static_cast<double>(BioSSpec::N0)), 0.0, 0.0, 0.0};
                break;
        }
        out.report = capacity_report(kb.bios(), s, 1, 0);
    }
    out.bits = {out.report.bits_name, out.report.bits_value, out.report.bits_div};
    return out;
}

}  // namespace caplab
