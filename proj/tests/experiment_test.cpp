#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "caplab/experiment.hpp"
#include "caplab/rng.hpp"
#include "support.hpp"

using namespace caplab;
namespace fs = std::filesystem;

namespace {

const char* micro_config = R"({
  "name": "micro",
  "seed": 3,
  "data": {"family": "bioD", "N": [20, 200], "K": 2, "C": 1, "D": 4, "L": 1, "T": 8, "N0": 100},
  "exposures": 5,
  "window_len": 64,
  "models": [{"layers": 1, "heads": 1, "head_dim": 16}],
  "optim": {"lr": 3e-3, "batch": 2, "warmup": 5},
  "quantize": [{"bits": 8}, {"bits": 4}]
})";

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t lines(const fs::path& p) {
    const auto s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::vector<double> numbers(const std::string& text, const std::string& attr) {
    std::vector<double> out;
    const std::regex re(attr + "=\"([-0-9.e+]+)\"");
    for (std::sregex_iterator it(text.begin(), text.end(), re), end; it != end; ++it) {
        out.push_back(std::stod((*it)[1]));
    }
    return out;
}

CapacityReport row(std::uint64_t N, std::uint64_t P, double bits) {
    CapacityReport r;
    r.family = Family::bioS;
    r.N = N;
    r.P = P;
    r.exposures = 1000;
    r.bits_name = bits / 4;
    r.bits_value = bits - bits / 4;
    r.bits_total = bits;
    r.R = bits / static_cast<double>(P);
    return r;
}

}  // namespace

TEST_CASE("config grid expansion and provenance hashes") {
    const auto c = ExperimentConfig::parse(R"({
      "name": "grid", "seed": 4,
      "data": {"family": "bioS", "N": [10, 20]},
      "exposures": [100, 1000],
      "models": [{"layers": 1, "heads": 1}, {"layers": 2, "heads": 2, "mlp": "gated", "activation": "silu", "tie_weights": false}],
      "optim": {"lr": 1e-3, "batch": 4},
      "mixture": [null, {"useful_fraction": [1, 8], "special_token": true}]
    })");
    REQUIRE(c.runs.size() == 2 * 2 * 2 * 2);
    CHECK(c.runs[0].data.N() == 10);
    CHECK(c.runs.back().data.N() == 20);
    CHECK(c.runs[0].exposures == 100);
    CHECK_FALSE(c.runs[0].mixture.has_value());
    CHECK(c.runs[2].mixture.has_value());
    CHECK(c.runs[1].model.mlp == MlpKind::gated);
    CHECK(c.runs[1].model.activation == Activation::silu);
    CHECK_FALSE(c.runs[1].model.tie_weights);
    const auto& mix = *c.runs[2].mixture;
    CHECK(mix.useful_num == 1);
    CHECK(mix.useful_den == 8);
    CHECK(mix.special_token_on_useful);
    CHECK(mix.junk_seed == hash_combine(4, stream::junk));
    CHECK(c.runs[2].eval.special_token);
    CHECK(c.runs[0].mode == TemplateMode::multi_permute);

    std::set<std::string> hashes;
    for (const auto& r : c.runs) {
        hashes.insert(r.hash());
        CHECK(RunSpec::from_json(r.to_json()).to_json() == r.to_json());
    }
    CHECK(hashes.size() == c.runs.size());
    CHECK(ExperimentConfig::parse(micro_config).runs[0].hash() == ExperimentConfig::parse(micro_config).runs[0].hash());
}

TEST_CASE("output root precedence") {
    ::unsetenv("CAPLAB_OUT");
    CHECK(output_root("", "") == fs::path("caplab_out"));
    CHECK(output_root("", "cfg") == fs::path("cfg"));
    ::setenv("CAPLAB_OUT", "/tmp/env_out", 1);
    CHECK(output_root("", "cfg") == fs::path("/tmp/env_out"));
    CHECK(output_root("cli", "cfg") == fs::path("cli"));
    ::unsetenv("CAPLAB_OUT");
}

TEST_CASE("run: fail-soft accounting, caching, reproducible rows and reports") {
    const auto config = ExperimentConfig::parse(micro_config);
    REQUIRE(config.runs.size() == 2);
    RunOptions quiet;
    quiet.verbose = false;

    const auto root_a = test::scratch("run_a");
    const auto results = run_experiment(config, root_a, quiet);
    CHECK(results[0].ok);
    CHECK_FALSE(results[1].ok);  // N = 200 exceeds the name pool of 100
    const auto dir = root_a / "micro";
    const std::size_t rows = lines(dir / "results.csv") - 1;
    const std::size_t failures = lines(dir / "failures.jsonl");
    CHECK(rows == 1);
    CHECK(failures == 1);
    CHECK(rows + failures == config.runs.size());
    CHECK(slurp(dir / "failures.jsonl").find("candidate pool") != std::string::npos);
    CHECK(lines(dir / "quant.csv") == 3);

    // A completed grid point is served from its cached result.
    const auto again = run_one(config.runs[0], root_a, quiet);
    CHECK(csv_row(again.report) == csv_row(results[0].report));
    CHECK(again.train_seconds == results[0].train_seconds);
    REQUIRE(again.quant.size() == 2);
    CHECK(csv_row(again.quant[1].report) == csv_row(results[0].quant[1].report));

    // Identical config in a fresh root: byte-identical rows.
    const auto root_b = test::scratch("run_b");
    run_experiment(config, root_b, quiet);
    CHECK(slurp(root_b / "micro" / "results.csv") == slurp(dir / "results.csv"));
    CHECK(slurp(root_b / "micro" / "quant.csv") == slurp(dir / "quant.csv"));

    const auto written = write_report(dir);
    CHECK(written.size() == 4);
    CHECK(slurp(dir / "quant.md").find("not GPTQ") != std::string::npos);
    CHECK(lines(dir / "capacity.md") == 3);  // header, rule, one row
    CHECK(numbers(slurp(dir / "capacity.svg"), "data-n").size() == 1);
}

TEST_CASE("training stream skips to any window for resumption") {
    const auto config = ExperimentConfig::parse(R"({
      "name": "skip", "seed": 2, "data": {"family": "bioS", "N": 30}, "exposures": 20,
      "mixture": {"useful_fraction": [1, 4], "junk_n": 1000}
    })");
    const auto& spec = config.runs[0];
    RunData data(spec);
    const auto plan = exposure_plan(spec);
    TrainingStream full(*data.renderer, plan, 512, spec.mixture);
    std::vector<Window> all;
    while (auto w = full.next()) {
        all.push_back(std::move(*w));
    }
    CHECK(all.size() == count_windows(*data.renderer, plan, 512, spec.mixture));
    for (std::uint64_t k : {0ull, 1ull, 7ull, 40ull}) {
        TrainingStream s(*data.renderer, plan, 512, spec.mixture);
        s.skip(k);
        const auto w = s.next();
        REQUIRE(w.has_value());
        CHECK(w->tokens == all[k].tokens);
        CHECK(w->source == all[k].source);
    }
}

TEST_CASE("report: fractions sum to one, guide geometry, empty input") {
    const auto dir = test::scratch("report");
    {
        std::ofstream out(dir / "results.csv");
        out << csv_header() << "\n";
    }
    CHECK_THROWS_AS(write_report(dir), EmptyResults);

    std::vector<CapacityReport> rows = {row(1000, 100000, 200000), row(1000, 400000, 800000), row(2000, 30000, 60000),
                                        row(2000, 2000000, 4000000)};
    {
        std::ofstream out(dir / "results.csv");
        out << csv_header() << "\n";
        for (const auto& r : rows) {
            out << csv_row(r) << "\n";
        }
    }
    write_report(dir);
    std::istringstream comp(slurp(dir / "components.md"));
    std::string line;
    int data_rows = 0;
    while (std::getline(comp, line)) {
        if (line.rfind("| ", 0) != 0 || line.find("---") != std::string::npos || line.find("name") != std::string::npos) {
            continue;
        }
        std::vector<double> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, '|');) {
            if (cell.find_first_not_of(' ') != std::string::npos) {
                cells.push_back(std::stod(cell));
            }
        }
        REQUIRE(cells.size() == 6);
        CHECK(cells[2] + cells[3] + cells[4] == doctest::Approx(1.0).epsilon(2e-4));
        ++data_rows;
    }
    CHECK(data_rows == 4);

    // Every point with bits = 2P sits on the dashed guide.
    const auto svg = capacity_svg(rows);
    const std::regex guide_re(
        R"re(<line id="guide" x1="([-0-9.e+]+)" y1="([-0-9.e+]+)" x2="([-0-9.e+]+)" y2="([-0-9.e+]+)")re");
    std::smatch g;
    REQUIRE(std::regex_search(svg, g, guide_re));
    const double x1 = std::stod(g[1]), y1 = std::stod(g[2]), x2 = std::stod(g[3]), y2 = std::stod(g[4]);
    std::string points;
    const std::regex point_re(R"re(<circle class="point"[^>]*>)re");
    for (std::sregex_iterator it(svg.begin(), svg.end(), point_re), end; it != end; ++it) {
        points += it->str();
    }
    const auto cx = numbers(points, "cx"), cy = numbers(points, "cy");
    REQUIRE(cx.size() == 4);
    for (std::size_t i = 0; i < cx.size(); ++i) {
        const double on_line = y1 + (cx[i] - x1) * (y2 - y1) / (x2 - x1);
        CHECK(std::abs(cy[i] - on_line) < 0.01);
    }
    CHECK(numbers(points, "data-n") == std::vector<double>{1000, 1000, 2000, 2000});

    const auto one = capacity_svg({row(1000, 50000, 20000)});
    CHECK(numbers(one, "data-n").size() == 1);
}
