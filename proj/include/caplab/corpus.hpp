#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "caplab/knowledge.hpp"

namespace caplab {

class ParagraphLongerThanWindow : public std::length_error {
public:
    using std::length_error::length_error;
};

class ModeMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class UnknownToken : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Splits on whitespace; punctuation characters become separate tokens.
std::vector<std::string> tokenize(std::string_view text);
/// Joins with single spaces (the inverse of tokenize up to whitespace).
std::string detokenize(const std::vector<std::string>& tokens);

class Vocab {
public:
    static constexpr std::uint32_t pad = 0;
    static constexpr std::uint32_t eos = 1;
    static constexpr std::uint32_t special_useful = 2;
    static constexpr std::uint32_t reserved = 3;

    Vocab();

    /// Returns the id of `token`, assigning the next free id if new.
    std::uint32_t add(std::string_view token);
    std::uint32_t id(std::string_view token) const;
    std::optional<std::uint32_t> find(std::string_view token) const;
    const std::string& token(std::uint32_t id) const { return tokens_.at(id); }
    std::size_t size() const { return tokens_.size(); }

    std::vector<std::uint32_t> encode(std::string_view text) const;
    std::string decode(const std::vector<std::uint32_t>& ids) const;

    bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

    void write_json(std::ostream& out) const;
    static Vocab read_json(std::istream& in);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> ids_;
};

/// bioS sentence templates of one attribute ("{S}" subject, "{V}" value).
const std::vector<std::string>& bios_templates(BioSAttr attr);
/// Every template text of a family (for bioD the single "ID k is {V} ." form).
std::vector<std::string> family_templates(const KnowledgeBase& kb);

/// Template words, then knowledge-base tokens, in first-occurrence order.
/// With an empty template list and no kb the result holds only the reserved ids.
Vocab build_vocab(const std::vector<std::string>& templates, const KnowledgeBase* kb);
Vocab build_vocab(const KnowledgeBase& kb);
/// Adds every token a bioS knowledge set of any size can emit (junk mixtures).
void extend_with_bios_domain(Vocab& vocab);

enum class SpanKind : std::uint8_t { name, value, filler };
enum class Source : std::uint8_t { useful, junk };
enum class TemplateMode { multi_permute, single_fixed, fixed_template };

std::string_view template_mode_name(TemplateMode m);
TemplateMode parse_template_mode(std::string_view s);

/// Attribute id used for the first pronoun of a bioS paragraph.
inline constexpr std::int32_t pronoun_attribute = 6;

struct Span {
    SpanKind kind = SpanKind::filler;
    std::int32_t attribute = -1;
    std::int32_t chunk = -1;  // value spans only; bioS values are a single chunk
    std::uint32_t start = 0;
    std::uint32_t length = 0;

    bool operator==(const Span&) const = default;
};

struct RenderedParagraph {
    std::vector<std::uint32_t> tokens;
    std::vector<Span> spans;  // name and value spans; everything else is filler
    std::uint64_t person = 0;
    Source source = Source::useful;
};

/// Renders paragraphs of one knowledge base as token ids.
class Renderer {
public:
    Renderer(const KnowledgeBase& kb, const Vocab& vocab);

    /// Sentence order and template choice come from `draw_seed` (multi_permute,
    /// fixed_template) or from the person alone (single_fixed).
    RenderedParagraph render(std::size_t person, TemplateMode mode, std::uint64_t draw_seed) const;
    /// Template 0 of every attribute in attribute order; used for evaluation.
    RenderedParagraph render_canonical(std::size_t person) const;
    /// Renders an arbitrary bioS person (junk data) without a knowledge base entry.
    RenderedParagraph render_person(const Person& who, std::uint64_t person_id, TemplateMode mode,
                                    std::uint64_t draw_seed) const;

    const KnowledgeBase& kb() const { return kb_; }
    const Vocab& vocab() const { return vocab_; }

private:
    struct Template {
        std::vector<std::uint32_t> middle;  // between subject and value
        std::vector<std::uint32_t> tail;    // after value
    };

    RenderedParagraph assemble(const Person& who, std::uint64_t person_id,
                               const std::vector<std::uint32_t>& order,
                               const std::vector<std::uint32_t>& choice) const;
    std::vector<std::uint32_t> value_ids(const Person& who, std::size_t attr) const;
    std::vector<std::uint32_t> name_ids(const Person& who) const;

    const KnowledgeBase& kb_;
    const Vocab& vocab_;
    std::vector<std::vector<Template>> templates_;  // [attribute][choice]
};

struct ExposurePlan {
    std::uint64_t exposures = 1;
    TemplateMode mode = TemplateMode::multi_permute;
    std::uint64_t seed = 0;
    bool special_token = false;  // prepend SPECIAL_USEFUL to every paragraph
};

/// Lazily emits N * exposures paragraphs; every pass visits each person once
/// in a fresh seeded order.
class ExposureSchedule {
public:
    ExposureSchedule(const Renderer& renderer, ExposurePlan plan);
    std::optional<RenderedParagraph> next();
    std::uint64_t total() const;

private:
    void shuffle_pass();

    const Renderer& renderer_;
    ExposurePlan plan_;
    std::uint64_t pass_ = 0;
    std::size_t pos_ = 0;
    std::vector<std::uint32_t> order_;
};

std::vector<RenderedParagraph> schedule_exposures(const Renderer& renderer, const ExposurePlan& plan);

/// Keyed permutation of [0, n) (balanced Feistel network with cycle walking).
class KeyedPermutation {
public:
    KeyedPermutation(std::uint64_t n, std::uint64_t key);
    std::uint64_t operator()(std::uint64_t x) const;

private:
    std::uint64_t n_;
    std::uint64_t key_;
    unsigned half_bits_;
};

/// Unbounded stream of bioS(N') paragraphs drawn i.i.d. over N' junk persons,
/// none sharing a name with the useful knowledge base.
class JunkStream {
public:
    JunkStream(const Renderer& renderer, std::uint64_t n_prime, std::uint64_t seed);
    RenderedParagraph next();
    Person person(std::uint64_t j) const;

private:
    const Renderer& renderer_;
    std::uint64_t n_prime_;
    std::uint64_t seed_;
    std::uint64_t drawn_ = 0;
    KeyedPermutation names_;
    std::unordered_map<std::uint64_t, std::uint64_t> useful_names_;  // name -> person
};

struct Window {
    std::vector<std::uint32_t> tokens;  // always window_len long, PAD padded
    std::uint32_t used = 0;             // tokens before the PAD tail
    std::vector<Span> spans;            // window-relative, clipped to the window
    std::vector<std::uint64_t> persons;
    Source source = Source::useful;
};

using ParagraphSource = std::function<std::optional<RenderedParagraph>()>;

/// Concatenates paragraphs (each followed by EOS) and cuts the token stream
/// into fixed windows; the final partial window is PAD padded.
class WindowPacker {
public:
    WindowPacker(ParagraphSource source, std::size_t window_len);
    std::optional<Window> next();

private:
    bool refill();

    ParagraphSource source_;
    std::size_t window_len_;
    RenderedParagraph current_;
    std::size_t offset_ = 0;  // next unread token of current_ (EOS at tokens.size())
    bool have_current_ = false;
    bool done_ = false;
};

std::vector<Window> pack_windows(const std::vector<RenderedParagraph>& paragraphs,
                                 std::size_t window_len = 512);
/// Reassembles the token stream (paragraphs with EOS separators) from windows.
std::vector<std::uint32_t> unpack_windows(const std::vector<Window>& windows);

struct MixturePlan {
    std::uint64_t useful_num = 1;  // useful_fraction = useful_num / useful_den
    std::uint64_t useful_den = 8;
    std::uint64_t junk_n = 100'000'000;
    std::uint64_t junk_seed = 0;
    bool special_token_on_useful = false;
};

using WindowSource = std::function<std::optional<Window>()>;

/// Interleaves pure useful and junk windows so that window i is useful exactly
/// when floor((i+1) f) > floor(i f). Ends when the useful source is exhausted.
class Mixer {
public:
    Mixer(WindowSource useful, WindowSource junk, std::uint64_t useful_num, std::uint64_t useful_den);
    std::optional<Window> next();

private:
    WindowSource useful_;
    WindowSource junk_;
    std::uint64_t num_;
    std::uint64_t den_;
    std::uint64_t index_ = 0;
};

/// Number of distinct token ids occurring in `windows`, PAD excluded.
std::size_t used_size(const std::vector<Window>& windows);

void write_paragraph_jsonl(const RenderedParagraph& p, std::ostream& out);

}  // namespace caplab
