// Acceptance run: one PASS/FAIL line per criterion.
//
// Criteria 5 to 8 read trained runs from the output root. A missing run is a
// failure unless --train is given, in which case it is trained in place (hours).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "caplab/bitmath.hpp"
#include "caplab/evaluator.hpp"
#include "caplab/experiment.hpp"
#include "caplab/model.hpp"
#include "caplab/oracles.hpp"
#include "caplab/rng.hpp"
#include "gmp_oracle.hpp"

namespace fs = std::filesystem;
using namespace caplab;

namespace {

// Tolerances and budgets.
constexpr double kUpperRelTol = 1e-9;
constexpr double kUpperSeconds = 10.0;
constexpr double kOracleNatTol = 1e-6;
constexpr double kPerfectUpperFrac = 0.05;
constexpr double kOracleSeconds = 120.0;
constexpr double kS0Lo = 47.5;
constexpr double kS0Hi = 47.7;
constexpr double kGradTol = 1e-4;
constexpr std::size_t kGradSamples = 200;
constexpr double kGradSeconds = 300.0;
constexpr double kSmokeR = 0.5;
constexpr double kSmokeStretchR = 1.5;
constexpr double kSmokeMemFrac = 0.9;
constexpr double kSmokeSeconds = 4 * 3600.0;
constexpr double kExposureBudget = 1.1;
constexpr double kRepetitiveBand = 0.15;
constexpr double kJunkBudget = 8.0;
constexpr double kInt8Keep = 0.7;
constexpr double kQuantSeconds = 600.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Outcome& o) {
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
}

void info(const std::string& line) {
    std::printf("     %s\n", line.c_str());
    std::fflush(stdout);
}

// Each of criteria 1 to 4 returns its outcome and a canonical text of the
// numbers it computed, so a rerun can be compared byte for byte.
struct Computed {
    Outcome outcome;
    std::string rows;
};

std::string row(const std::vector<double>& xs) {
    std::string s;
    for (double x : xs) {
        s += (s.empty() ? "" : ",") + fmt("%.17g", x);
    }
    return s + "\n";
}

BioDSpec random_spec(CounterRng& rng) {
    BioDSpec s;
    s.T = 2 + rng.uniform(30);
    s.L = 1 + rng.uniform(4);
    while (std::pow(s.T, s.L) > 1e6) {
        --s.L;
    }
    const auto TL = static_cast<std::uint64_t>(std::llround(std::pow(s.T, s.L)));
    s.D = 1 + rng.uniform(TL - 1);
    s.N = 1 + rng.uniform(1000);
    s.N0 = s.N + rng.uniform(100000);
    s.K = 1 + rng.uniform(8);
    s.C = 1 + rng.uniform(4);
    return s;
}

Computed upper_bound_exactness() {
    const auto t0 = Clock::now();
    CounterRng rng(2024, 7);
    double worst = 0.0;
    std::string rows;
    for (int i = 0; i < 100; ++i) {
        const auto s = random_spec(rng);
        const auto TL = static_cast<std::uint64_t>(std::llround(std::pow(s.T, s.L)));
        const double exact = test::gmp_log2_binomial(s.N0, s.N) +
                             static_cast<double>(s.K) * test::gmp_log2_binomial(TL, s.D) +
                             static_cast<double>(s.N * s.K * s.C) * std::log2(static_cast<double>(s.D));
        const double got = upper_bound_bits(s);
        worst = std::max(worst, std::abs(got - exact) / exact);
        rows += row({got, exact});
    }
    const double secs = seconds_since(t0);
    return {{worst <= kUpperRelTol && secs < kUpperSeconds,
             "max rel err " + fmt("%.2e", worst) + " (tol " + fmt("%.0e", kUpperRelTol) + "), " + fmt("%.2f", secs) +
                 " s (budget " + fmt("%.0f", kUpperSeconds) + " s)"},
            rows};
}

Computed oracle_equivalence() {
    const auto t0 = Clock::now();
    const BioDSpec spec{.N = 512, .K = 4, .C = 2, .D = 16, .L = 4, .T = 32, .N0 = 1ull << 24, .seed = 1};
    const auto kb = gen_biod(spec);
    const auto vocab = build_vocab(kb);
    const Renderer renderer(kb, vocab);
    EvalOptions eo;
    eo.sample_size = spec.N;

    std::vector<OracleSpec> oracles = {{.kind = OracleKind::perfect}, {.kind = OracleKind::uniform}};
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        oracles.push_back({.kind = OracleKind::q_noisy, .q = q});
    }
    double worst = 0.0;
    std::string rows;
    for (const auto& o : oracles) {
        const auto model = make_oracle(o, renderer);
        const auto m = eval_losses(*model, renderer, eo).stats;
        const auto a = analytic_bits(o, renderer).losses;
        worst = std::max({worst, std::abs(m.p1 - a.p1), std::abs(m.p2m - a.p2m), std::abs(m.p3m - a.p3m)});
        rows += row({m.p1, m.p2m, m.p3m});
    }
    const auto perfect = make_oracle({.kind = OracleKind::perfect}, renderer);
    const auto stats = eval_losses(*perfect, renderer, eo).stats;
    const double bits = lower_bound_bits(spec, stats).total();
    const double ub = upper_bound_bits(spec);
    const double gap = std::abs(bits - ub) / ub;
    rows += row({bits, ub});
    const double secs = seconds_since(t0);
    return {{worst <= kOracleNatTol && gap <= kPerfectUpperFrac && secs < kOracleSeconds,
             "max |measured - closed form| " + fmt("%.2e", worst) + " nats over 7 oracles (tol " +
                 fmt("%.0e", kOracleNatTol) + "), perfect bits " + fmt("%.1f", bits) + " vs upper bound " +
                 fmt("%.1f", ub) + " (gap " + fmt("%.2f", 100 * gap) + "%, tol " +
                 fmt("%.0f", 100 * kPerfectUpperFrac) + "%), " + fmt("%.1f", secs) + " s"},
            rows};
}

Computed s0_constant() {
    const double v = log2_s0();
    return {{v >= kS0Lo && v <= kS0Hi, "log2 S0 = " + fmt("%.4f", v) + " (range [47.5, 47.7])"}, row({v})};
}

Computed gradient_fidelity() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string where;
    std::string rows;
    bool enough = true;
    for (auto mlp : {MlpKind::standard, MlpKind::gated, MlpKind::quarter, MlpKind::none}) {
        for (auto act : {Activation::gelu, Activation::silu}) {
            ModelConfig c;
            c.layers = 2;
            c.heads = 2;
            c.head_dim = 8;
            c.mlp = mlp;
            c.activation = act;
            c.vocab_size = 13;
            c.window_len = 16;
            const auto r = grad_check(c, 11, kGradSamples);
            enough = enough && r.checked >= kGradSamples;
            if (r.max_rel_error >= worst) {
                worst = r.max_rel_error;
                where = std::string(mlp_kind_name(mlp)) + "/" + std::string(activation_name(act)) + " " +
                        r.worst_tensor;
            }
            rows += row({r.max_rel_error, static_cast<double>(r.checked)});
        }
    }
    const double secs = seconds_since(t0);
    return {{enough && worst < kGradTol && secs < kGradSeconds,
             "max rel err " + fmt("%.2e", worst) + " at " + where + " over 8 configs (tol " + fmt("%.0e", kGradTol) +
                 "), " + fmt("%.1f", secs) + " s"},
            rows};
}

struct Runs {
    fs::path root;
    fs::path configs;
    bool train = false;

    std::vector<RunSpec> specs(const std::string& name) const {
        return ExperimentConfig::load(configs / (name + ".json")).runs;
    }

    std::optional<RunResult> get(const RunSpec& spec) const {
        if (auto r = cached_result(spec, root)) {
            return r;
        }
        if (!train) {
            return std::nullopt;
        }
        auto r = run_one(spec, root);
        if (!r.ok) {
            info("run " + spec.hash() + " failed: " + r.error);
            return std::nullopt;
        }
        return r;
    }

    std::string missing(const std::string& name) const {
        return "no completed run of configs/" + name + ".json under " + root.string() +
               " (run `caplab run` on it, or pass --train)";
    }
};

std::string csv_rows(const RunResult& r) {
    std::string s = csv_row(r.report) + "\n";
    for (const auto& q : r.quant) {
        s += std::to_string(q.bits) + "," + q.granularity + "," + csv_row(q.report) + "\n";
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"caplab acceptance checks"};
    Runs runs;
    std::string root;
    std::string configs = CAPLAB_CONFIG_DIR;
    app.add_option("--root", root, "output root holding trained runs (default: $CAPLAB_OUT, else " CAPLAB_DEFAULT_OUT ")");
    app.add_option("--configs", configs, "directory of the experiment configs");
    app.add_flag("--train", runs.train, "train runs that are not cached");
    CLI11_PARSE(app, argc, argv);
    runs.root = output_root(root, CAPLAB_DEFAULT_OUT);
    runs.configs = configs;

    const auto c1 = upper_bound_exactness();
    report(1, "upper-bound exactness", c1.outcome);
    const auto c2 = oracle_equivalence();
    report(2, "estimator/oracle equivalence", c2.outcome);
    const auto c3 = s0_constant();
    report(3, "S0 constant", c3.outcome);
    const auto c4 = gradient_fidelity();
    report(4, "gradient fidelity", c4.outcome);

    // 5: desk-scale capacity smoke.
    const auto smoke_spec = runs.specs("capacity_smoke").at(0);
    const auto smoke = runs.get(smoke_spec);
    if (!smoke) {
        report(5, "capacity smoke", {false, runs.missing("capacity_smoke")});
    } else {
        const double N = static_cast<double>(smoke_spec.data.N());
        const bool ok = smoke->report.R >= kSmokeR && smoke->memorization >= kSmokeMemFrac * N &&
                        smoke->train_seconds <= kSmokeSeconds;
        report(5, "capacity smoke",
               {ok, "R " + fmt("%.4f", smoke->report.R) + " (need >= " + fmt("%.1f", kSmokeR) + ", Rmax " +
                        fmt("%.4f", smoke->report.Rmax) + "), memorization " + fmt("%.0f", smoke->memorization) +
                        "/" + fmt("%.0f", N) + " (need >= " + fmt("%.0f", kSmokeMemFrac * N) + "), training " +
                        fmt("%.2f", smoke->train_seconds / 3600) + " h (budget " +
                        fmt("%.0f", kSmokeSeconds / 3600) + " h)"});
        info("stretch: R " + fmt("%.4f", smoke->report.R) + " vs " + fmt("%.1f", kSmokeStretchR) +
             (smoke->report.R >= kSmokeStretchR ? " (met)" : " (not met)") + "; bits " +
             fmt("%.1f", smoke->report.bits_total) + " of P " + std::to_string(smoke->report.P));
    }

    // 6: fewer exposures, lower capacity ratio, pointwise over the grid.
    const auto low_specs = runs.specs("exposure100");
    const auto high_specs = runs.specs("capacity_smoke");
    std::optional<RunResult> baseline;
    {
        Outcome o{true, ""};
        double low_seconds = 0.0;
        if (low_specs.size() != high_specs.size()) {
            o = {false, "exposure100 and capacity_smoke grids differ in size"};
        }
        for (std::size_t i = 0; o.pass && i < low_specs.size(); ++i) {
            const auto lo = runs.get(low_specs[i]);
            const auto hi = i == 0 ? smoke : runs.get(high_specs[i]);
            if (i == 0) {
                baseline = lo;
            }
            if (!lo || !hi) {
                o = {false, runs.missing(lo ? "capacity_smoke" : "exposure100")};
                break;
            }
            low_seconds += lo->train_seconds;
            o.pass = lo->report.R < hi->report.R;
            o.detail += (o.detail.empty() ? "" : "; ") + std::string("point ") + std::to_string(i) + ": R " +
                        fmt("%.4f", lo->report.R) + " at 100 vs " + fmt("%.4f", hi->report.R) + " at 1000";
        }
        if (o.pass) {
            o.pass = low_seconds <= kExposureBudget * kSmokeSeconds;
            o.detail += ", training " + fmt("%.2f", low_seconds / 3600) + " h (budget " +
                        fmt("%.1f", kExposureBudget * kSmokeSeconds / 3600) + " h)";
        }
        report(6, "exposure ordinal", o);
    }

    // 7: junk dilutes, the useful marker recovers, repetitive junk is harmless.
    {
        const auto specs = runs.specs("junk");
        std::vector<std::optional<RunResult>> r;
        for (const auto& s : specs) {
            r.push_back(runs.get(s));
        }
        const auto find = [&](std::uint64_t junk_n, bool special) -> std::optional<RunResult> {
            for (std::size_t i = 0; i < specs.size(); ++i) {
                const auto& m = specs[i].mixture;
                if (m && m->junk_n == junk_n && m->special_token_on_useful == special) {
                    return r[i];
                }
            }
            return std::nullopt;
        };
        const auto junk = find(100000000, false);
        const auto marked = find(100000000, true);
        const auto repetitive = find(1000, false);
        if (!junk || !marked || !repetitive || !baseline) {
            report(7, "junk ordinal", {false, runs.missing(baseline ? "junk" : "exposure100")});
        } else {
            const double base = baseline->report.bits_total;
            const double rel = std::abs(repetitive->report.bits_total - base) / base;
            const double secs = junk->train_seconds + marked->train_seconds + repetitive->train_seconds;
            const bool a = junk->report.bits_total < base;
            const bool b = marked->report.bits_total > junk->report.bits_total;
            const bool c = rel <= kRepetitiveBand;
            const bool d = secs <= kJunkBudget * kSmokeSeconds;
            report(7, "junk ordinal",
                   {a && b && c && d,
                    "useful bits: no junk " + fmt("%.1f", base) + ", junk " + fmt("%.1f", junk->report.bits_total) +
                        (a ? " (lower)" : " (NOT lower)") + ", junk with marker " +
                        fmt("%.1f", marked->report.bits_total) + (b ? " (higher)" : " (NOT higher)") +
                        ", repetitive junk " + fmt("%.1f", repetitive->report.bits_total) + " (" +
                        fmt("%.1f", 100 * rel) + "% off, band " + fmt("%.0f", 100 * kRepetitiveBand) +
                        "%), training " + fmt("%.2f", secs / 3600) + " h (budget " +
                        fmt("%.0f", kJunkBudget * kSmokeSeconds / 3600) + " h)"});
        }
    }

    // 8: quantization of the smoke run's final checkpoint, recomputed here.
    if (!smoke) {
        report(8, "quantization ordinal", {false, runs.missing("capacity_smoke")});
    } else {
        const auto t0 = Clock::now();
        const RunData data(smoke_spec);
        const auto ck = Checkpoint::load((run_dir(smoke_spec, runs.root) / "final.ckpt").string());
        const auto q8 = quant_capacity_delta(*data.renderer, ck, {8, Granularity::per_channel}, smoke_spec.exposures,
                                             smoke_spec.eval);
        const auto q4 = quant_capacity_delta(*data.renderer, ck, {4, Granularity::per_channel}, smoke_spec.exposures,
                                             smoke_spec.eval);
        const double secs = seconds_since(t0);

        const fs::path dir = runs.root / "capacity_smoke";
        ExperimentConfig cfg = ExperimentConfig::load(runs.configs / "capacity_smoke.json");
        RunOptions quiet;
        quiet.verbose = false;
        run_experiment(cfg, runs.root, quiet);
        write_report(dir);
        std::ifstream in(dir / "quant.md");
        std::stringstream md;
        md << in.rdbuf();
        const bool flagged = md.str().find("RTN") != std::string::npos && md.str().find("not GPTQ") != std::string::npos;

        const double full = q8.before.bits_total;
        const double b8 = q8.after.bits_total;
        const double b4 = q4.after.bits_total;
        const bool ok = b8 >= kInt8Keep * full && b4 <= b8 && flagged && secs < kQuantSeconds;
        report(8, "quantization ordinal",
               {ok, "bits full " + fmt("%.1f", full) + ", int8 " + fmt("%.1f", b8) + " (need >= " +
                        fmt("%.1f", kInt8Keep * full) + "), int4 " + fmt("%.1f", b4) + (b4 <= b8 ? " (<= int8)" : " (> int8)") +
                        ", report " + (flagged ? "flags RTN, not GPTQ" : "does NOT flag the method") + ", " +
                        fmt("%.0f", secs) + " s (budget " + fmt("%.0f", kQuantSeconds) + " s)"});
    }

    // 9: identical reruns. Criteria 1 to 4 again in process; criterion 5 as an
    // independent training replica.
    {
        std::vector<std::string> diffs;
        if (upper_bound_exactness().rows != c1.rows) {
            diffs.push_back("1");
        }
        if (oracle_equivalence().rows != c2.rows) {
            diffs.push_back("2");
        }
        if (s0_constant().rows != c3.rows) {
            diffs.push_back("3");
        }
        if (gradient_fidelity().rows != c4.rows) {
            diffs.push_back("4");
        }
        const auto rerun_spec = runs.specs("capacity_rerun").at(0);
        const auto rerun = smoke ? runs.get(rerun_spec) : std::nullopt;
        std::string detail;
        if (!rerun) {
            detail = runs.missing(smoke ? "capacity_rerun" : "capacity_smoke");
            diffs.push_back("5");
        } else {
            const bool same = csv_rows(*rerun) == csv_rows(*smoke) && rerun->memorization == smoke->memorization;
            if (!same) {
                diffs.push_back("5");
            }
            detail = "replica training hash " + run_dir(rerun_spec, runs.root).filename().string() + " vs " +
                     run_dir(smoke_spec, runs.root).filename().string() + ", " +
                     std::to_string(1 + rerun->quant.size()) + " CSV rows " + (same ? "identical" : "DIFFER");
        }
        std::string which;
        for (const auto& d : diffs) {
            which += (which.empty() ? "" : ",") + d;
        }
        report(9, "determinism",
               {diffs.empty(), (diffs.empty() ? std::string("criteria 1-5 rows byte-identical on rerun")
                                               : "rerun differs or is missing for criteria " + which) +
                                   "; " + detail});
    }

    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
