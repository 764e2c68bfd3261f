#include "caplab/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <istream>

#include "caplab/rng.hpp"
#include "json.hpp"

namespace caplab {

std::vector<std::uint32_t> LanguageModel::generate(const std::vector<std::uint32_t>& prefix,
                                                   std::size_t n) const {
    std::vector<std::uint32_t> seq = prefix;
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::MatrixXd lp = log_probs(seq);
        Eigen::Index best = 0;
        lp.row(lp.rows() - 1).maxCoeff(&best);
        seq.push_back(static_cast<std::uint32_t>(best));
    }
    return {seq.begin() + static_cast<std::ptrdiff_t>(prefix.size()), seq.end()};
}

TransformerModel::TransformerModel(const Checkpoint& ck) : model_(make_model<float>(ck)) {}

Eigen::MatrixXd TransformerModel::log_probs(const std::vector<std::uint32_t>& tokens) const {
    return model_.log_probs(tokens);
}

std::string LossReport::to_json() const {
    nlohmann::ordered_json j;
    j["p1"] = stats.p1;
    j["p2m"] = stats.p2m;
    j["p3m"] = stats.p3m;
    j["p2s"] = stats.p2s;
    j["sample_size"] = sample_size;
    j["seed"] = seed;
    j["per_attribute"] = per_attribute;
    return j.dump();
}

std::vector<std::uint32_t> eval_context(bool special_token) {
    if (special_token) {
        return {Vocab::eos, Vocab::special_useful};
    }
    return {Vocab::eos};
}

std::vector<std::size_t> eval_persons(std::size_t N, const EvalOptions& options) {
    std::vector<std::size_t> out;
    if (N <= options.sample_size) {
        out.resize(N);
        for (std::size_t i = 0; i < N; ++i) {
            out[i] = i;
        }
        return out;
    }
    for (auto i : sample_without_replacement(N, options.sample_size, options.seed, stream::sample)) {
        out.push_back(static_cast<std::size_t>(i));
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

void check_vocab(const LanguageModel& model, const Renderer& renderer) {
    if (model.vocab_size() != renderer.vocab().size()) {
        throw VocabMismatch("model vocabulary has " + std::to_string(model.vocab_size()) +
                            " entries, corpus vocabulary " + std::to_string(renderer.vocab().size()));
    }
}

void check_normalized(const Eigen::MatrixXd& lp, double tol) {
    for (Eigen::Index r = 0; r < lp.rows(); ++r) {
        const double m = lp.row(r).maxCoeff();
        const double lse = m + std::log((lp.row(r).array() - m).exp().sum());
        if (!(std::abs(lse) <= tol)) {
            throw NonNormalizedModel("row " + std::to_string(r) + " has logsumexp " + std::to_string(lse));
        }
    }
}

std::vector<double> span_sums(const Eigen::MatrixXd& lp, const std::vector<std::uint32_t>& tokens,
                              const std::vector<Span>& spans, std::size_t offset) {
    std::vector<double> out(spans.size(), 0.0);
    for (std::size_t s = 0; s < spans.size(); ++s) {
        for (std::uint32_t j = 0; j < spans[s].length; ++j) {
            const std::size_t pos = offset + spans[s].start + j;
            if (pos == 0 || pos >= tokens.size()) {
                throw std::out_of_range("span outside the scored tokens");
            }
            if (tokens[pos] == Vocab::pad) {
                continue;
            }
            out[s] -= lp(static_cast<Eigen::Index>(pos - 1), tokens[pos]);
        }
    }
    return out;
}

}  // namespace

std::vector<double> nll_spans(const LanguageModel& model, const std::vector<std::uint32_t>& tokens,
                              const std::vector<Span>& spans, std::size_t offset) {
    return span_sums(model.log_probs(tokens), tokens, spans, offset);
}

LossReport eval_losses(const LanguageModel& model, const Renderer& renderer, const EvalOptions& options) {
    check_vocab(model, renderer);
    const KnowledgeBase& kb = renderer.kb();
    const bool bios = kb.family() == Family::bioS;
    const std::size_t K = kb.attribute_count();
    const auto persons = eval_persons(kb.size(), options);
    const auto ctx = eval_context(options.special_token);

    LossReport report;
    report.sample_size = persons.size();
    report.seed = options.seed;
    report.per_attribute.assign(bios ? K + 1 : K, 0.0);
    double p1 = 0.0, p2 = 0.0, p3 = 0.0, p2s = 0.0;
    for (auto n : persons) {
        const RenderedParagraph par = renderer.render_canonical(n);
        std::vector<std::uint32_t> tokens = ctx;
        tokens.insert(tokens.end(), par.tokens.begin(), par.tokens.end());
        const Eigen::MatrixXd lp = model.log_probs(tokens);
        check_normalized(lp, options.normalization_tolerance);
        const auto sums = span_sums(lp, tokens, par.spans, ctx.size());
        for (std::size_t s = 0; s < par.spans.size(); ++s) {
            const Span& sp = par.spans[s];
            if (sp.kind == SpanKind::name) {
                p1 += sums[s];
                continue;
            }
            if (sp.kind != SpanKind::value) {
                continue;
            }
            p2s += sums[s];
            report.per_attribute[static_cast<std::size_t>(sp.attribute)] += sums[s];
            if (sp.attribute == pronoun_attribute && bios) {
                continue;
            }
            p2 += sums[s];
            if (sp.chunk == 0) {
                p3 += sums[s];
            }
        }
    }
    const double count = static_cast<double>(persons.size());
    if (count > 0) {
        report.stats.p1 = p1 / count;
        report.stats.p2m = p2 / (count * static_cast<double>(K));
        report.stats.p3m = p3 / (count * static_cast<double>(K));
        report.stats.p2s = p2s / count;
        for (auto& x : report.per_attribute) {
            x /= count;
        }
    }
    return report;
}

double memorization_accuracy(const LanguageModel& model, const Renderer& renderer, const EvalOptions& options) {
    check_vocab(model, renderer);
    const KnowledgeBase& kb = renderer.kb();
    if (kb.family() != Family::bioS) {
        throw std::invalid_argument("memorization accuracy is defined for bioS knowledge bases");
    }
    const auto persons = eval_persons(kb.size(), options);
    const auto ctx = eval_context(options.special_token);
    double total = 0.0;
    for (auto n : persons) {
        const RenderedParagraph par = renderer.render_canonical(n);
        int correct = 0;
        int asked = 0;
        for (const Span& sp : par.spans) {
            if (sp.kind != SpanKind::value || sp.attribute == pronoun_attribute ||
                sp.attribute == static_cast<std::int32_t>(working_city)) {
                continue;
            }
            std::vector<std::uint32_t> prefix = ctx;
            prefix.insert(prefix.end(), par.tokens.begin(), par.tokens.begin() + sp.start);
            const auto out = model.generate(prefix, sp.length);
            correct += std::equal(out.begin(), out.end(), par.tokens.begin() + sp.start) ? 1 : 0;
            ++asked;
        }
        total += asked > 0 ? static_cast<double>(correct) / asked : 0.0;
    }
    if (persons.size() != kb.size() && !persons.empty()) {
        total *= static_cast<double>(kb.size()) / static_cast<double>(persons.size());
    }
    return total;
}

LossStats ingest_traces(std::istream& in) {
    LossStats s;
    double p1 = 0.0, p2 = 0.0, p3 = 0.0, p2s = 0.0;
    std::size_t persons = 0, values = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const auto j = nlohmann::json::parse(line);
        ++persons;
        p1 += j.at("name_nll").get<double>();
        for (const auto& v : j.value("values", nlohmann::json::array())) {
            const double nll = v.at("nll").get<double>();
            p2s += nll;
            if (v.value("attribute", 0) == pronoun_attribute) {
                continue;
            }
            p2 += nll;
            p3 += v.value("first_chunk_nll", nll);
            ++values;
        }
    }
    if (persons > 0) {
        s.p1 = p1 / static_cast<double>(persons);
        s.p2s = p2s / static_cast<double>(persons);
    }
    if (values > 0) {
        s.p2m = p2 / static_cast<double>(values);
        s.p3m = p3 / static_cast<double>(values);
    }
    return s;
}

CapacityReport capacity_report(const KnowledgeBase& kb, const LossStats& losses, std::uint64_t P,
                               std::uint64_t exposures) {
    if (kb.family() == Family::bioD) {
        return capacity_report(kb.biod(), losses, P, exposures);
    }
    return capacity_report(kb.bios(), losses, P, exposures);
}

}  // namespace caplab
