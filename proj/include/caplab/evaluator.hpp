#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "caplab/bitmath.hpp"
#include "caplab/corpus.hpp"
#include "caplab/trainer.hpp"

namespace caplab {

class VocabMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonNormalizedModel : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Anything that scores next tokens: trained transformers and analytic oracles.
class LanguageModel {
public:
    virtual ~LanguageModel() = default;
    virtual std::size_t vocab_size() const = 0;
    /// Row t: log-distribution of the token following tokens[0..t].
    virtual Eigen::MatrixXd log_probs(const std::vector<std::uint32_t>& tokens) const = 0;
    /// Continues `prefix` by `n` tokens. Greedy unless a model says otherwise.
    virtual std::vector<std::uint32_t> generate(const std::vector<std::uint32_t>& prefix, std::size_t n) const;
};

class TransformerModel : public LanguageModel {
public:
    explicit TransformerModel(const Checkpoint& ck);
    std::size_t vocab_size() const override { return model_.config().vocab_size; }
    Eigen::MatrixXd log_probs(const std::vector<std::uint32_t>& tokens) const override;

private:
    mutable Transformer<float> model_;  // forward pass reuses its workspace
};

struct EvalOptions {
    std::size_t sample_size = 4096;
    std::uint64_t seed = 0;
    /// Context is [EOS, SPECIAL_USEFUL] for models trained with the useful marker.
    bool special_token = false;
    double normalization_tolerance = 1e-4;
};

struct LossReport {
    LossStats stats;
    std::size_t sample_size = 0;
    std::uint64_t seed = 0;
    /// Mean full-value NLL per attribute (bioS: index 6 is the pronoun).
    std::vector<double> per_attribute;

    std::string to_json() const;
};

/// Evaluation context: [EOS] or [EOS, SPECIAL_USEFUL].
std::vector<std::uint32_t> eval_context(bool special_token);

/// Persons evaluated under `options`: everybody when N <= sample_size, otherwise
/// a seeded uniform sample without replacement.
std::vector<std::size_t> eval_persons(std::size_t N, const EvalOptions& options);

/// Summed NLL per span of a teacher-forced pass over `tokens`, where span
/// offsets are relative to `offset` (the context length). PAD targets are skipped.
std::vector<double> nll_spans(const LanguageModel& model, const std::vector<std::uint32_t>& tokens,
                              const std::vector<Span>& spans, std::size_t offset = 0);

LossReport eval_losses(const LanguageModel& model, const Renderer& renderer, const EvalOptions& options = {});

/// Sum over persons of the per-person mean exact-match rate over the five
/// independent bioS attributes (working city excluded). Perfect model -> N.
double memorization_accuracy(const LanguageModel& model, const Renderer& renderer,
                             const EvalOptions& options = {});

/// Loss statistics from external traces, one JSON object per line:
/// {"name_nll": x, "values": [{"attribute": a, "nll": y, "first_chunk_nll": z}, ...]}.
/// A value with attribute 6 is a bioS pronoun and only enters p2s.
LossStats ingest_traces(std::istream& in);

/// Capacity row for either family from measured losses.
CapacityReport capacity_report(const KnowledgeBase& kb, const LossStats& losses, std::uint64_t P,
                               std::uint64_t exposures);

}  // namespace caplab
