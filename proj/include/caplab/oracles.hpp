#pragma once

#include <cstdint>
#include <memory>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "caplab/bitmath.hpp"
#include "caplab/evaluator.hpp"
#include "caplab/rng.hpp"

namespace caplab {

enum class OracleKind { perfect, uniform, q_noisy, name_uniform_over_pool };

std::string_view oracle_kind_name(OracleKind k);
OracleKind parse_oracle_kind(std::string_view s);

struct OracleSpec {
    OracleKind kind = OracleKind::perfect;
    double q = 1.0;             // q_noisy only
    std::uint64_t seed = 0;     // sampling during generation
    bool special_token = false; // context carries SPECIAL_USEFUL after EOS

    void validate() const;
};

/// Analytic model of one knowledge base. Names are predicted from the context
/// onward, values per the oracle kind, and every filler token of the canonical
/// paragraph with probability 1. Probability assigned to domain tokens missing
/// from the vocabulary is parked on PAD so rows stay normalized.
///
/// q_noisy mixes at the whole-value level: with probability q the correct value,
/// otherwise a uniform draw from the value's legal domain (bioD: D^C chunk
/// tuples; bioS: the attribute domain, birth dates as day x month x year).
/// Generation samples for the stochastic kinds (uniform, q_noisy) and is greedy
/// otherwise. Not safe for concurrent generation (the sampler advances).
class OracleModel : public LanguageModel {
public:
    OracleModel(const OracleSpec& spec, const Renderer& renderer);

    std::size_t vocab_size() const override { return V_; }
    Eigen::MatrixXd log_probs(const std::vector<std::uint32_t>& tokens) const override;
    std::vector<std::uint32_t> generate(const std::vector<std::uint32_t>& prefix, std::size_t n) const override;

private:
    struct Group {
        std::uint32_t start = 0;  // paragraph offset of the first value token
        std::vector<std::size_t> alphabets;  // indices into alphabets_, one per token
    };
    struct Canon {
        std::vector<std::uint32_t> tokens;
        std::vector<std::int32_t> group_of;  // per paragraph offset, -1 for filler
        std::vector<Group> groups;
    };
    struct Position {
        std::int64_t person = -1;  // -1: name not complete or unknown
        std::int64_t offset = 0;   // paragraph offset of the predicted token
        std::size_t context = 0;   // index of the first paragraph token
    };

    Position locate(const std::vector<std::uint32_t>& tokens, std::size_t row) const;
    void fill_row(const std::vector<std::uint32_t>& tokens, std::size_t row, Eigen::Ref<Eigen::RowVectorXd> p) const;
    void name_row(const std::vector<std::uint32_t>& tokens, std::size_t begin, std::size_t len,
                  Eigen::Ref<Eigen::RowVectorXd> p) const;
    void value_row(const Canon& c, const Group& g, std::size_t k, const std::uint32_t* query,
                   Eigen::Ref<Eigen::RowVectorXd> p) const;

    OracleSpec spec_;
    const Renderer& renderer_;
    std::size_t V_ = 0;
    std::size_t name_len_ = 0;
    std::vector<Canon> canon_;
    std::unordered_map<std::uint64_t, std::size_t> person_by_name_;
    // Perfect-name conditionals: hash of a name prefix -> counts of the next token.
    std::unordered_map<std::uint64_t, std::unordered_map<std::uint32_t, std::uint32_t>> name_next_;
    // Name pool alphabets per name position (vocabulary ids that exist) and the pool size per position.
    std::vector<std::vector<std::uint32_t>> pool_alphabets_;
    std::vector<double> pool_sizes_;
    // Value alphabets: sorted vocabulary ids present, and the legal domain size.
    struct Alphabet {
        std::vector<std::uint32_t> ids;
        double size = 0.0;
    };
    std::vector<Alphabet> alphabets_;
    mutable CounterRng rng_;
};

std::unique_ptr<LanguageModel> make_oracle(const OracleSpec& spec, const Renderer& renderer);

struct OracleAnalytic {
    LossStats losses;
    BitComponents bits;
    CapacityReport report;  // P = 1 placeholder; callers compare bits, not R
};

/// Closed-form losses and bits of an oracle on the renderer's knowledge base.
OracleAnalytic analytic_bits(const OracleSpec& spec, const Renderer& renderer);

}  // namespace caplab
