// caplab: knowledge-capacity experiments on synthetic biographies.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "caplab/bitmath.hpp"
#include "caplab/corpus.hpp"
#include "caplab/evaluator.hpp"
#include "caplab/experiment.hpp"
#include "caplab/knowledge.hpp"
#include "caplab/oracles.hpp"
#include "caplab/quantizer.hpp"
#include "caplab/rng.hpp"
#include "caplab/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace caplab;
using nlohmann::json;

namespace {

KnowledgeBase load_kb(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    return read_kb_jsonl(in);
}

Vocab load_vocab(const std::string& path, const KnowledgeBase& kb) {
    if (path.empty()) {
        return build_vocab(kb);
    }
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    return Vocab::read_json(in);
}

json stats_json(const KbStats& s) {
    return {{"family", family_name(s.family)},   {"N", s.N},
            {"K", s.K},                          {"domain_sizes", s.domain_sizes},
            {"upper_bound_bits", s.upper_bound_bits}, {"name_bits", s.name_bits},
            {"value_bits", s.value_bits},        {"diversity_bits", s.diversity_bits},
            {"per_person_bits", s.per_person_bits}};
}

struct DataArgs {
    std::string family = "bioS";
    BioDSpec biod;
    std::uint64_t N = 1000;
    std::uint64_t seed = 0;

    void add(CLI::App* app) {
        app->add_option("--family", family, "bioS or bioD")->check(CLI::IsMember({"bioS", "bioD"}));
        app->add_option("--N", N, "number of persons");
        app->add_option("--K", biod.K, "bioD attributes");
        app->add_option("--C", biod.C, "bioD chunks per value");
        app->add_option("--D", biod.D, "bioD diversity set size");
        app->add_option("--L", biod.L, "bioD chunk length");
        app->add_option("--T", biod.T, "bioD chunk alphabet");
        app->add_option("--N0", biod.N0, "bioD name pool size");
        app->add_option("--seed", seed, "data seed");
    }

    KnowledgeBase generate() const {
        if (family == "bioD") {
            BioDSpec s = biod;
            s.N = N;
            s.seed = seed;
            return gen_biod(s);
        }
        return gen_bios(BioSSpec{N, seed});
    }
};

int cmd_gen(const DataArgs& d, const std::string& out, std::uint64_t exposures, const std::string& mode,
            std::uint64_t window_len) {
    const fs::path dir = output_root(out, "");
    fs::create_directories(dir);
    const KnowledgeBase kb = d.generate();
    const Vocab vocab = build_vocab(kb);
    {
        std::ofstream f(dir / "kb.jsonl");
        write_kb_jsonl(kb, f);
    }
    {
        std::ofstream f(dir / "vocab.json");
        vocab.write_json(f);
    }
    {
        std::ofstream f(dir / "stats.json");
        f << stats_json(kb_stats(kb)).dump(2) << "\n";
    }
    if (exposures > 0) {
        const Renderer renderer(kb, vocab);
        ExposurePlan plan;
        plan.exposures = exposures;
        plan.mode = mode.empty() ? (kb.family() == Family::bioD ? TemplateMode::fixed_template
                                                                 : TemplateMode::multi_permute)
                                 : parse_template_mode(mode);
        plan.seed = hash_combine(d.seed, stream::schedule);
        ExposureSchedule schedule(renderer, plan);
        std::ofstream f(dir / "corpus.jsonl");
        std::uint64_t count = 0;
        std::uint64_t tokens = 0;
        while (auto p = schedule.next()) {
            if (p->tokens.size() > window_len) {
                throw ParagraphLongerThanWindow("paragraph exceeds --window-len");
            }
            write_paragraph_jsonl(*p, f);
            ++count;
            tokens += p->tokens.size();
        }
        std::printf("corpus: %llu paragraphs, %llu tokens\n", static_cast<unsigned long long>(count),
                    static_cast<unsigned long long>(tokens));
    }
    std::printf("wrote %s (N=%zu, vocab %zu)\n", dir.string().c_str(), kb.size(), vocab.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"caplab: knowledge capacity of language models on synthetic biographies"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a knowledge base, vocabulary and optional corpus");
    DataArgs gen_data;
    gen_data.add(gen);
    std::string gen_out;
    std::uint64_t gen_exposures = 0;
    std::string gen_mode;
    std::uint64_t gen_window = 512;
    gen->add_option("--out", gen_out, "output directory (default $CAPLAB_OUT)");
    gen->add_option("--exposures", gen_exposures, "also write the training corpus with this many exposures");
    gen->add_option("--template-mode", gen_mode, "multi_permute, single_fixed or fixed_template");
    gen->add_option("--window-len", gen_window, "window length");

    // train
    auto* tr = app.add_subcommand("train", "train a model on a knowledge base");
    std::string tr_kb, tr_vocab, tr_out = "model.ckpt", tr_mode, tr_resume;
    std::uint64_t tr_exposures = 100;
    ModelConfig mc;
    OptimConfig oc;
    std::string mlp = "standard", act = "gelu";
    std::uint64_t tr_seed = 0;
    tr->add_option("--kb", tr_kb, "knowledge base JSONL")->required();
    tr->add_option("--vocab", tr_vocab, "vocabulary JSON (default: rebuilt from the kb)");
    tr->add_option("--exposures", tr_exposures, "exposures per person");
    tr->add_option("--template-mode", tr_mode, "multi_permute, single_fixed or fixed_template");
    tr->add_option("--layers", mc.layers);
    tr->add_option("--heads", mc.heads);
    tr->add_option("--head-dim", mc.head_dim);
    tr->add_option("--mlp", mlp)->check(CLI::IsMember({"standard", "gated", "quarter", "none"}));
    tr->add_flag("--tie,!--no-tie", mc.tie_weights, "tie embedding and output head");
    tr->add_option("--activation", act)->check(CLI::IsMember({"gelu", "silu"}));
    tr->add_option("--window-len", mc.window_len);
    tr->add_option("--lr", oc.lr);
    tr->add_option("--wd", oc.wd);
    tr->add_option("--batch", oc.batch);
    tr->add_option("--steps", oc.steps, "0 = one pass over the corpus");
    tr->add_option("--warmup", oc.warmup);
    tr->add_option("--seed", tr_seed);
    tr->add_flag("--deterministic,!--fast", oc.deterministic);
    tr->add_option("--out", tr_out, "checkpoint path");
    tr->add_option("--resume", tr_resume, "resume from this checkpoint");

    // eval
    auto* ev = app.add_subcommand("eval", "loss statistics and memorization accuracy");
    std::string ev_kb, ev_vocab, ev_ckpt, ev_oracle, ev_traces;
    double ev_q = 1.0;
    EvalOptions eo;
    ev->add_option("--kb", ev_kb, "knowledge base JSONL");
    ev->add_option("--vocab", ev_vocab);
    ev->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate");
    ev->add_option("--oracle", ev_oracle, "evaluate an analytic oracle instead")
        ->check(CLI::IsMember({"perfect", "uniform", "q_noisy", "name_uniform_over_pool"}));
    ev->add_option("--q", ev_q, "q of the q_noisy oracle");
    ev->add_option("--traces", ev_traces, "ingest external per-person span NLL traces (JSONL)");
    ev->add_option("--sample-size", eo.sample_size);
    ev->add_option("--seed", eo.seed);
    ev->add_flag("--special-token", eo.special_token, "context carries the useful-data marker");

    // capacity
    auto* cap = app.add_subcommand("capacity", "capacity report (CSV row) or upper bound");
    std::string cap_kb, cap_vocab, cap_ckpt, cap_losses, cap_traces;
    std::uint64_t cap_exposures = 0;
    EvalOptions co;
    DataArgs cap_data;
    cap_data.add(cap);
    cap->add_option("--kb", cap_kb, "knowledge base JSONL (default: generate from the data flags)");
    cap->add_option("--vocab", cap_vocab);
    cap->add_option("--ckpt", cap_ckpt, "trained checkpoint");
    cap->add_option("--losses", cap_losses, "LossReport JSON file with p1, p2m, p3m, p2s");
    cap->add_option("--traces", cap_traces, "external traces JSONL");
    cap->add_option("--exposures", cap_exposures);
    cap->add_option("--sample-size", co.sample_size);
    cap->add_flag("--special-token", co.special_token);

    // quantize
    auto* qz = app.add_subcommand("quantize", "round-to-nearest post-training quantization");
    std::string qz_ckpt, qz_out, qz_kb, qz_vocab, qz_gran = "per_channel";
    int qz_bits = 8;
    std::uint64_t qz_exposures = 0;
    qz->add_option("--ckpt", qz_ckpt)->required();
    qz->add_option("--bits", qz_bits)->check(CLI::IsMember({8, 4}));
    qz->add_option("--granularity", qz_gran)->check(CLI::IsMember({"per_channel", "per_tensor"}));
    qz->add_option("--out", qz_out, "quantized checkpoint path");
    qz->add_option("--kb", qz_kb, "also report capacity before and after");
    qz->add_option("--vocab", qz_vocab);
    qz->add_option("--exposures", qz_exposures);

    // run
    auto* run = app.add_subcommand("run", "run an experiment config (resumable, fail-soft)");
    std::string run_config, run_out;
    std::size_t run_workers = 0;
    run->add_option("config", run_config, "experiment JSON")->required();
    run->add_option("--out", run_out, "output root (default $CAPLAB_OUT, then the config's)");
    run->add_option("--workers", run_workers, "parallel grid points");

    // report
    auto* rep = app.add_subcommand("report", "tables and plot from a results directory");
    std::string rep_dir;
    rep->add_option("dir", rep_dir, "directory holding results.csv")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            return cmd_gen(gen_data, gen_out, gen_exposures, gen_mode, gen_window);
        }
        if (*tr) {
            const KnowledgeBase kb = load_kb(tr_kb);
            const Vocab vocab = load_vocab(tr_vocab, kb);
            const Renderer renderer(kb, vocab);
            mc.mlp = parse_mlp_kind(mlp);
            mc.activation = parse_activation(act);
            mc.vocab_size = vocab.size();
            mc.validate();
            ExposurePlan plan;
            plan.exposures = tr_exposures;
            plan.mode = tr_mode.empty() ? (kb.family() == Family::bioD ? TemplateMode::fixed_template
                                                                        : TemplateMode::multi_permute)
                                        : parse_template_mode(tr_mode);
            plan.seed = hash_combine(tr_seed, stream::schedule);
            if (oc.steps == 0) {
                oc.steps = (count_windows(renderer, plan, mc.window_len, std::nullopt) + oc.batch - 1) / oc.batch;
            }
            oc.warmup = std::min(oc.warmup, oc.steps);
            Checkpoint start = tr_resume.empty() ? init_model(mc, hash_combine(tr_seed, stream::init))
                                                 : Checkpoint::load(tr_resume);
            TrainingStream stream(renderer, plan, mc.window_len, std::nullopt);
            stream.skip(start.step * oc.batch);
            TrainHooks hooks;
            hooks.on_log = [&](const StepLog& s) {
                std::printf("step %llu/%llu loss %.4f lr %.3e %.0fs\n", static_cast<unsigned long long>(s.step),
                            static_cast<unsigned long long>(oc.steps), s.loss, s.lr, s.seconds);
                std::fflush(stdout);
            };
            hooks.checkpoint_every = 2000;
            hooks.on_checkpoint = [&](const Checkpoint& c) { c.save(tr_out); };
            const Checkpoint ck = train(std::move(start), oc, [&] { return stream.next(); }, hooks);
            ck.save(tr_out);
            std::printf("saved %s (P=%llu, %llu steps)\n", tr_out.c_str(),
                        static_cast<unsigned long long>(param_count(mc)), static_cast<unsigned long long>(ck.step));
            return 0;
        }
        if (*ev) {
            if (!ev_traces.empty()) {
                std::ifstream in(ev_traces);
                const LossStats s = ingest_traces(in);
                std::printf("%s\n", json{{"p1", s.p1}, {"p2m", s.p2m}, {"p3m", s.p3m}, {"p2s", s.p2s}}.dump().c_str());
                return 0;
            }
            if (ev_kb.empty()) {
                throw std::invalid_argument("eval needs --kb (or --traces)");
            }
            const KnowledgeBase kb = load_kb(ev_kb);
            const Vocab vocab = load_vocab(ev_vocab, kb);
            const Renderer renderer(kb, vocab);
            std::unique_ptr<LanguageModel> model;
            if (!ev_oracle.empty()) {
                model = make_oracle({parse_oracle_kind(ev_oracle), ev_q, eo.seed, eo.special_token}, renderer);
            } else if (!ev_ckpt.empty()) {
                model = std::make_unique<TransformerModel>(Checkpoint::load(ev_ckpt));
            } else {
                throw std::invalid_argument("eval needs --ckpt or --oracle");
            }
            const LossReport r = eval_losses(*model, renderer, eo);
            json j = json::parse(r.to_json());
            if (kb.family() == Family::bioS) {
                j["memorization_accuracy"] = memorization_accuracy(*model, renderer, eo);
            }
            std::printf("%s\n", j.dump().c_str());
            return 0;
        }
        if (*cap) {
            const KnowledgeBase kb = cap_kb.empty() ? cap_data.generate() : load_kb(cap_kb);
            std::optional<LossStats> losses;
            std::uint64_t P = 0;
            if (!cap_ckpt.empty()) {
                const Vocab vocab = load_vocab(cap_vocab, kb);
                const Renderer renderer(kb, vocab);
                const Checkpoint ck = Checkpoint::load(cap_ckpt);
                losses = eval_losses(TransformerModel(ck), renderer, co).stats;
                P = param_count(ck.config);
            } else if (!cap_losses.empty()) {
                std::ifstream in(cap_losses);
                const json j = json::parse(in);
                losses = LossStats{j.at("p1"), j.at("p2m"), j.at("p3m"), j.value("p2s", 0.0)};
                P = j.value("P", std::uint64_t{0});
            } else if (!cap_traces.empty()) {
                std::ifstream in(cap_traces);
                losses = ingest_traces(in);
            }
            if (!losses) {
                std::printf("%s\n", stats_json(kb_stats(kb)).dump(2).c_str());
                return 0;
            }
            std::printf("%s\n%s\n", csv_header().c_str(),
                        csv_row(capacity_report(kb, *losses, P, cap_exposures)).c_str());
            return 0;
        }
        if (*qz) {
            const Checkpoint ck = Checkpoint::load(qz_ckpt);
            const QuantConfig qc{qz_bits, parse_granularity(qz_gran)};
            const Checkpoint q = quantize_rtn(ck, qc);
            if (!qz_out.empty()) {
                q.save(qz_out);
            }
            if (!qz_kb.empty()) {
                const KnowledgeBase kb = load_kb(qz_kb);
                const Vocab vocab = load_vocab(qz_vocab, kb);
                const Renderer renderer(kb, vocab);
                const QuantDelta d = quant_capacity_delta(renderer, ck, qc, qz_exposures);
                std::printf("method,bits,granularity,%s\n", csv_header().c_str());
                std::printf("none,32,-,%s\n", csv_row(d.before).c_str());
                std::printf("rtn,%d,%s,%s\n", qz_bits, qz_gran.c_str(), csv_row(d.after).c_str());
            }
            return 0;
        }
        if (*run) {
            ExperimentConfig config = ExperimentConfig::load(run_config);
            if (run_workers > 0) {
                config.workers = run_workers;
            }
            const fs::path root = output_root(run_out, config.out_dir);
            const auto results = run_experiment(config, root);
            std::size_t failed = 0;
            for (const auto& r : results) {
                if (!r.ok) {
                    ++failed;
                    std::fprintf(stderr, "run %s failed: %s\n", r.hash.c_str(), r.error.c_str());
                }
            }
            std::printf("%zu runs, %zu failed; results in %s\n", results.size(), failed,
                        (root / config.name).string().c_str());
            return failed == 0 ? 0 : 2;
        }
        if (*rep) {
            for (const auto& p : write_report(rep_dir)) {
                std::printf("%s\n", p.string().c_str());
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
