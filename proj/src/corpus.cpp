#include "caplab/corpus.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "caplab/rng.hpp"
#include "json.hpp"

namespace caplab {

namespace templates {
#include "bios_templates.inc"
}  // namespace templates

namespace {

constexpr std::string_view kPunct = ".,;:!?()\"";
constexpr std::uint32_t kSubjectSlot = 0xffffffffu;
constexpr std::uint32_t kValueSlot = 0xfffffffeu;

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::vector<std::string> to_strings(const auto& arr) {
    return std::vector<std::string>(arr.begin(), arr.end());
}

std::uint64_t draw_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return hash_combine(hash_combine(seed, a), b);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    };
    for (char c : text) {
        if (is_space(c)) {
            flush();
        } else if (kPunct.find(c) != std::string_view::npos) {
            flush();
            out.emplace_back(1, c);
        } else {
            cur.push_back(c);
        }
    }
    flush();
    return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) {
            out += ' ';
        }
        out += t;
    }
    return out;
}

Vocab::Vocab() {
    for (const char* t : {"<pad>", "<eos>", "<useful>"}) {
        add(t);
    }
}

std::uint32_t Vocab::add(std::string_view token) {
    auto it = ids_.find(std::string(token));
    if (it != ids_.end()) {
        return it->second;
    }
    const auto id = static_cast<std::uint32_t>(tokens_.size());
    tokens_.emplace_back(token);
    ids_.emplace(tokens_.back(), id);
    return id;
}

std::optional<std::uint32_t> Vocab::find(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::uint32_t Vocab::id(std::string_view token) const {
    if (auto id = find(token)) {
        return *id;
    }
    throw UnknownToken("token not in vocabulary: " + std::string(token));
}

std::vector<std::uint32_t> Vocab::encode(std::string_view text) const {
    std::vector<std::uint32_t> out;
    for (const auto& t : tokenize(text)) {
        out.push_back(id(t));
    }
    return out;
}

std::string Vocab::decode(const std::vector<std::uint32_t>& ids) const {
    std::vector<std::string> words;
    words.reserve(ids.size());
    for (auto i : ids) {
        words.push_back(token(i));
    }
    return detokenize(words);
}

void Vocab::write_json(std::ostream& out) const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::uint32_t i = 0; i < tokens_.size(); ++i) {
        j[tokens_[i]] = i;
    }
    out << j.dump() << '\n';
}

Vocab Vocab::read_json(std::istream& in) {
    const auto j = nlohmann::json::parse(in);
    std::vector<std::string> by_id(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto id = it.value().get<std::size_t>();
        if (id >= by_id.size() || !by_id[id].empty()) {
            throw std::invalid_argument("vocab file ids are not a permutation");
        }
        by_id[id] = it.key();
    }
    Vocab v;
    for (std::size_t i = 0; i < by_id.size(); ++i) {
        if (v.add(by_id[i]) != i) {
            throw std::invalid_argument("vocab file does not start with the reserved tokens");
        }
    }
    return v;
}

const std::vector<std::string>& bios_templates(BioSAttr attr) {
    static const std::array<std::vector<std::string>, bios_attribute_count> all = {
        to_strings(templates::birth_date_templates), to_strings(templates::birth_city_templates),
        to_strings(templates::university_templates), to_strings(templates::major_templates),
        to_strings(templates::employer_templates),   to_strings(templates::working_city_templates)};
    return all.at(attr);
}

std::vector<std::string> family_templates(const KnowledgeBase& kb) {
    std::vector<std::string> out;
    if (kb.family() == Family::bioD) {
        for (std::size_t a = 0; a < kb.attribute_count(); ++a) {
            out.push_back(biod_attribute(a) + " is {V} .");
        }
        return out;
    }
    for (std::uint32_t a = 0; a < bios_attribute_count; ++a) {
        const auto& t = bios_templates(static_cast<BioSAttr>(a));
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

Vocab build_vocab(const std::vector<std::string>& templates, const KnowledgeBase* kb) {
    Vocab v;
    for (const auto& t : templates) {
        for (const auto& w : tokenize(t)) {
            if (w != "{S}" && w != "{V}") {
                v.add(w);
            }
        }
    }
    if (kb == nullptr) {
        return v;
    }
    for (std::size_t p = 0; p < kb->size(); ++p) {
        for (const auto& w : kb->name_tokens(p)) {
            v.add(w);
        }
        if (kb->family() == Family::bioS) {
            v.add(pronoun_token(kb->person(p).pronoun));
        }
        for (std::size_t a = 0; a < kb->attribute_count(); ++a) {
            for (const auto& w : kb->value_tokens(p, a)) {
                v.add(w);
            }
        }
    }
    return v;
}

Vocab build_vocab(const KnowledgeBase& kb) { return build_vocab(family_templates(kb), &kb); }

void extend_with_bios_domain(Vocab& vocab) {
    for (const auto& w : bios_all_tokens()) {
        vocab.add(w);
    }
}

std::string_view template_mode_name(TemplateMode m) {
    switch (m) {
        case TemplateMode::multi_permute: return "multi_permute";
        case TemplateMode::single_fixed: return "single_fixed";
        case TemplateMode::fixed_template: return "fixed_template";
    }
    return "?";
}

TemplateMode parse_template_mode(std::string_view s) {
    for (auto m : {TemplateMode::multi_permute, TemplateMode::single_fixed, TemplateMode::fixed_template}) {
        if (template_mode_name(m) == s) {
            return m;
        }
    }
    throw std::invalid_argument("unknown template mode: " + std::string(s));
}

Renderer::Renderer(const KnowledgeBase& kb, const Vocab& vocab) : kb_(kb), vocab_(vocab) {
    auto compile = [&](const std::string& text) {
        Template t;
        bool seen_value = false;
        for (const auto& w : tokenize(text)) {
            if (w == "{S}") {
                continue;
            }
            if (w == "{V}") {
                seen_value = true;
                continue;
            }
            (seen_value ? t.tail : t.middle).push_back(vocab_.id(w));
        }
        return t;
    };
    if (kb.family() == Family::bioD) {
        for (const auto& text : family_templates(kb)) {
            templates_.push_back({compile(text)});
        }
    } else {
        for (std::uint32_t a = 0; a < bios_attribute_count; ++a) {
            std::vector<Template> list;
            for (const auto& text : bios_templates(static_cast<BioSAttr>(a))) {
                list.push_back(compile(text));
            }
            templates_.push_back(std::move(list));
        }
    }
}

std::vector<std::uint32_t> Renderer::name_ids(const Person& who) const {
    std::vector<std::uint32_t> out;
    if (kb_.family() == Family::bioD) {
        out.push_back(vocab_.id(biod_name(who.name_index)));
    } else {
        for (const auto& w : bios_name_tokens(who.name_index)) {
            out.push_back(vocab_.id(w));
        }
    }
    return out;
}

std::vector<std::uint32_t> Renderer::value_ids(const Person& who, std::size_t attr) const {
    std::vector<std::uint32_t> out;
    if (kb_.family() == Family::bioD) {
        const auto& s = kb_.biod();
        for (std::uint64_t c = 0; c < s.C; ++c) {
            const auto code = kb_.diversity_set(attr).at(who.values.at(attr * s.C + c));
            out.push_back(vocab_.id(chunk_token(code, s.T, s.L)));
        }
    } else {
        for (const auto& w : bios_value_tokens(static_cast<BioSAttr>(attr), who.values.at(attr))) {
            out.push_back(vocab_.id(w));
        }
    }
    return out;
}

RenderedParagraph Renderer::assemble(const Person& who, std::uint64_t person_id,
                                     const std::vector<std::uint32_t>& order,
                                     const std::vector<std::uint32_t>& choice) const {
    RenderedParagraph p;
    p.person = person_id;
    auto& tok = p.tokens;
    auto emit_span = [&](SpanKind kind, std::int32_t attr, std::int32_t chunk,
                         const std::vector<std::uint32_t>& ids) {
        p.spans.push_back({kind, attr, chunk, static_cast<std::uint32_t>(tok.size()),
                           static_cast<std::uint32_t>(ids.size())});
        tok.insert(tok.end(), ids.begin(), ids.end());
    };
    const auto name = name_ids(who);

    if (kb_.family() == Family::bioD) {
        const auto C = kb_.biod().C;
        emit_span(SpanKind::name, -1, -1, name);
        for (auto a : order) {
            const Template& t = templates_[a][0];
            tok.insert(tok.end(), t.middle.begin(), t.middle.end());
            const auto v = value_ids(who, a);
            for (std::uint64_t c = 0; c < C; ++c) {
                emit_span(SpanKind::value, static_cast<std::int32_t>(a), static_cast<std::int32_t>(c),
                          {v[c]});
            }
            tok.insert(tok.end(), t.tail.begin(), t.tail.end());
        }
        return p;
    }

    const std::uint32_t pronoun = vocab_.id(pronoun_token(who.pronoun));
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto a = order[i];
        const Template& t = templates_[a][choice[a]];
        if (i == 0) {
            emit_span(SpanKind::name, -1, -1, name);
        } else if (i == 1) {
            emit_span(SpanKind::value, pronoun_attribute, 0, {pronoun});
        } else {
            tok.push_back(pronoun);
        }
        tok.insert(tok.end(), t.middle.begin(), t.middle.end());
        emit_span(SpanKind::value, static_cast<std::int32_t>(a), 0, value_ids(who, a));
        tok.insert(tok.end(), t.tail.begin(), t.tail.end());
    }
    return p;
}

RenderedParagraph Renderer::render_person(const Person& who, std::uint64_t person_id, TemplateMode mode,
                                          std::uint64_t draw_seed) const {
    const bool biod = kb_.family() == Family::bioD;
    if (biod != (mode == TemplateMode::fixed_template)) {
        throw ModeMismatch(std::string("template mode ") + std::string(template_mode_name(mode)) +
                           " does not fit " + std::string(family_name(kb_.family())));
    }
    const std::size_t K = templates_.size();
    std::vector<std::uint32_t> order(K);
    std::iota(order.begin(), order.end(), 0u);
    std::vector<std::uint32_t> choice(K, 0);

    std::uint64_t key = draw_seed;
    if (mode == TemplateMode::single_fixed) {
        key = hash_combine(kb_.seed(), person_id);
    }
    CounterRng rng(key, stream::render);
    for (std::size_t i = K; i > 1; --i) {
        std::swap(order[i - 1], order[rng.uniform(i)]);
    }
    if (!biod) {
        for (std::size_t a = 0; a < K; ++a) {
            choice[a] = static_cast<std::uint32_t>(rng.uniform(templates_[a].size()));
        }
    }
    return assemble(who, person_id, order, choice);
}

RenderedParagraph Renderer::render(std::size_t person, TemplateMode mode, std::uint64_t draw_seed) const {
    return render_person(kb_.person(person), person, mode, draw_seed);
}

RenderedParagraph Renderer::render_canonical(std::size_t person) const {
    const std::size_t K = templates_.size();
    std::vector<std::uint32_t> order(K);
    std::iota(order.begin(), order.end(), 0u);
    return assemble(kb_.person(person), person, order, std::vector<std::uint32_t>(K, 0));
}

ExposureSchedule::ExposureSchedule(const Renderer& renderer, ExposurePlan plan)
    : renderer_(renderer), plan_(plan), order_(renderer.kb().size()) {
    shuffle_pass();
}

void ExposureSchedule::shuffle_pass() {
    std::iota(order_.begin(), order_.end(), 0u);
    CounterRng rng(hash_combine(plan_.seed, pass_), stream::schedule);
    for (std::size_t i = order_.size(); i > 1; --i) {
        std::swap(order_[i - 1], order_[rng.uniform(i)]);
    }
}

std::uint64_t ExposureSchedule::total() const { return plan_.exposures * order_.size(); }

std::optional<RenderedParagraph> ExposureSchedule::next() {
    if (pos_ == order_.size()) {
        ++pass_;
        pos_ = 0;
        if (pass_ < plan_.exposures) {
            shuffle_pass();
        }
    }
    if (pass_ >= plan_.exposures || order_.empty()) {
        return std::nullopt;
    }
    const auto person = order_[pos_++];
    auto p = renderer_.render(person, plan_.mode, draw_key(plan_.seed, pass_, person));
    if (plan_.special_token) {
        p.tokens.insert(p.tokens.begin(), Vocab::special_useful);
        for (auto& s : p.spans) {
            ++s.start;
        }
    }
    return p;
}

std::vector<RenderedParagraph> schedule_exposures(const Renderer& renderer, const ExposurePlan& plan) {
    ExposureSchedule sched(renderer, plan);
    std::vector<RenderedParagraph> out;
    out.reserve(sched.total());
    while (auto p = sched.next()) {
        out.push_back(std::move(*p));
    }
    return out;
}

KeyedPermutation::KeyedPermutation(std::uint64_t n, std::uint64_t key) : n_(n), key_(key) {
    if (n == 0) {
        throw std::invalid_argument("empty permutation domain");
    }
    const unsigned bits = std::max(2u, static_cast<unsigned>(std::bit_width(n - 1)));
    half_bits_ = (bits + 1) / 2;
}

std::uint64_t KeyedPermutation::operator()(std::uint64_t x) const {
    if (x >= n_) {
        throw std::out_of_range("permutation input out of range");
    }
    const std::uint64_t mask = (1ULL << half_bits_) - 1;
    do {
        std::uint64_t l = x >> half_bits_;
        std::uint64_t r = x & mask;
        for (std::uint64_t round = 0; round < 4; ++round) {
            const std::uint64_t f = mix64(hash_combine(key_, hash_combine(round, r))) & mask;
            const std::uint64_t nl = r;
            r = l ^ f;
            l = nl;
        }
        x = (l << half_bits_) | r;
    } while (x >= n_);  // cycle walking stays inside [0, n)
    return x;
}

JunkStream::JunkStream(const Renderer& renderer, std::uint64_t n_prime, std::uint64_t seed)
    : renderer_(renderer),
      n_prime_(n_prime),
      seed_(seed),
      names_(BioSSpec::N0, hash_combine(seed, stream::junk)) {
    if (renderer.kb().family() != Family::bioS) {
        throw ModeMismatch("junk data is bioS; the useful knowledge base must be bioS too");
    }
    if (n_prime == 0 || n_prime + renderer.kb().size() > BioSSpec::N0) {
        throw SpecInvalid("junk population must fit next to the useful persons in N0");
    }
    for (std::size_t p = 0; p < renderer.kb().size(); ++p) {
        useful_names_.emplace(renderer.kb().person(p).name_index, p);
    }
}

Person JunkStream::person(std::uint64_t j) const {
    std::uint64_t name = names_(j);
    // A clash with useful person u moves to slot N' + u, which no other junk
    // person uses; chains terminate because each step visits a fresh slot.
    for (auto it = useful_names_.find(name); it != useful_names_.end(); it = useful_names_.find(name)) {
        name = names_(n_prime_ + it->second);
    }
    return bios_person(hash_combine(seed_, stream::junk), j, name);
}

RenderedParagraph JunkStream::next() {
    CounterRng rng(hash_combine(seed_, drawn_), stream::mixing);
    const std::uint64_t j = rng.uniform(n_prime_);
    auto p = renderer_.render_person(person(j), j, TemplateMode::multi_permute,
                                     draw_key(seed_, drawn_, j));
    p.source = Source::junk;
    ++drawn_;
    return p;
}

WindowPacker::WindowPacker(ParagraphSource source, std::size_t window_len)
    : source_(std::move(source)), window_len_(window_len) {
    if (window_len == 0) {
        throw std::invalid_argument("window length must be positive");
    }
}

bool WindowPacker::refill() {
    auto p = source_();
    if (!p) {
        return false;
    }
    if (p->tokens.size() > window_len_) {
        throw ParagraphLongerThanWindow("paragraph of " + std::to_string(p->tokens.size()) +
                                        " tokens exceeds the window length " +
                                        std::to_string(window_len_));
    }
    current_ = std::move(*p);
    offset_ = 0;
    have_current_ = true;
    return true;
}

std::optional<Window> WindowPacker::next() {
    if (done_) {
        return std::nullopt;
    }
    Window w;
    w.tokens.reserve(window_len_);
    bool have_source = false;
    while (w.tokens.size() < window_len_) {
        if (!have_current_ && !refill()) {
            done_ = true;
            break;
        }
        if (!have_source) {
            w.source = current_.source;
            have_source = true;
        }
        const std::size_t len = current_.tokens.size();
        const std::size_t take = std::min(window_len_ - w.tokens.size(), len + 1 - offset_);
        const std::size_t base = w.tokens.size();
        const std::size_t lo = offset_;
        const std::size_t hi = offset_ + take;
        for (const auto& s : current_.spans) {
            const std::size_t a = std::max<std::size_t>(s.start, lo);
            const std::size_t b = std::min<std::size_t>(s.start + s.length, hi);
            if (a < b) {
                Span c = s;
                c.start = static_cast<std::uint32_t>(base + a - lo);
                c.length = static_cast<std::uint32_t>(b - a);
                w.spans.push_back(c);
            }
        }
        const std::size_t end = std::min(hi, len);
        w.tokens.insert(w.tokens.end(), current_.tokens.begin() + lo, current_.tokens.begin() + end);
        if (hi == len + 1) {
            w.tokens.push_back(Vocab::eos);
            have_current_ = false;
        }
        if (w.persons.empty() || w.persons.back() != current_.person) {
            w.persons.push_back(current_.person);
        }
        offset_ = hi;
    }
    if (w.tokens.empty()) {
        return std::nullopt;
    }
    w.used = static_cast<std::uint32_t>(w.tokens.size());
    w.tokens.resize(window_len_, Vocab::pad);
    return w;
}

std::vector<Window> pack_windows(const std::vector<RenderedParagraph>& paragraphs, std::size_t window_len) {
    std::size_t i = 0;
    WindowPacker packer(
        [&]() -> std::optional<RenderedParagraph> {
            if (i == paragraphs.size()) {
                return std::nullopt;
            }
            return paragraphs[i++];
        },
        window_len);
    std::vector<Window> out;
    while (auto w = packer.next()) {
        out.push_back(std::move(*w));
    }
    return out;
}

std::vector<std::uint32_t> unpack_windows(const std::vector<Window>& windows) {
    std::vector<std::uint32_t> out;
    for (const auto& w : windows) {
        out.insert(out.end(), w.tokens.begin(), w.tokens.begin() + w.used);
    }
    return out;
}

Mixer::Mixer(WindowSource useful, WindowSource junk, std::uint64_t useful_num, std::uint64_t useful_den)
    : useful_(std::move(useful)), junk_(std::move(junk)), num_(useful_num), den_(useful_den) {
    if (num_ == 0 || den_ == 0 || num_ > den_) {
        throw std::invalid_argument("useful fraction must lie in (0, 1]");
    }
}

std::optional<Window> Mixer::next() {
    const std::uint64_t i = index_++;
    const bool useful = ((i + 1) * num_) / den_ > (i * num_) / den_;
    if (useful) {
        return useful_();
    }
    auto w = junk_ ? junk_() : std::nullopt;
    if (!w) {
        throw std::runtime_error("junk stream exhausted");
    }
    return w;
}

std::size_t used_size(const std::vector<Window>& windows) {
    std::unordered_set<std::uint32_t> seen;
    for (const auto& w : windows) {
        for (std::uint32_t i = 0; i < w.used; ++i) {
            seen.insert(w.tokens[i]);
        }
    }
    seen.erase(Vocab::pad);
    return seen.size();
}

void write_paragraph_jsonl(const RenderedParagraph& p, std::ostream& out) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : p.spans) {
        spans.push_back({{"kind", s.kind == SpanKind::name ? "name" : "value"},
                         {"attribute", s.attribute},
                         {"chunk", s.chunk},
                         {"start", s.start},
                         {"length", s.length}});
    }
    nlohmann::json j = {{"tokens", p.tokens},
                        {"spans", spans},
                        {"person", p.person},
                        {"source", p.source == Source::useful ? "useful" : "junk"}};
    out << j.dump() << '\n';
}

}  // namespace caplab
