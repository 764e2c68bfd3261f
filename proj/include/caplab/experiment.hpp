#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "caplab/bitmath.hpp"
#include "caplab/corpus.hpp"
#include "caplab/evaluator.hpp"
#include "caplab/knowledge.hpp"
#include "caplab/quantizer.hpp"
#include "caplab/trainer.hpp"

namespace caplab {

class EmptyResults : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataSpec {
    Family family = Family::bioS;
    BioDSpec biod;
    BioSSpec bios;

    std::uint64_t N() const { return family == Family::bioD ? biod.N : bios.N; }
    KnowledgeBase generate() const;
};

/// One grid point: everything needed to reproduce a trained model and its row.
struct RunSpec {
    DataSpec data;
    std::uint64_t exposures = 1000;
    TemplateMode mode = TemplateMode::multi_permute;
    ModelConfig model;  // vocab_size is filled from the corpus
    OptimConfig optim;  // steps 0 = one pass over the scheduled windows
    std::optional<MixturePlan> mixture;
    std::vector<QuantConfig> quantize;
    EvalOptions eval;
    std::uint64_t seed = 0;
    std::string replica;  // distinguishes deliberate reruns of an identical setup

    std::string to_json() const;  // canonical (sorted keys), the hash input
    static RunSpec from_json(const std::string& text);
    std::string hash() const;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::vector<RunSpec> runs;  // grid expanded in file order
    std::size_t workers = 1;
    std::string out_dir;

    static ExperimentConfig parse(const std::string& json_text);
    static ExperimentConfig load(const std::filesystem::path& path);
};

/// Corpus pieces of a run: knowledge base, vocabulary and renderer.
struct RunData {
    KnowledgeBase kb;
    Vocab vocab;
    std::unique_ptr<Renderer> renderer;

    explicit RunData(const RunSpec& spec);
    RunData(KnowledgeBase kb, Vocab vocab);
};

/// Exposure plan of a run (seeded from the run seed).
ExposurePlan exposure_plan(const RunSpec& spec);

/// The window stream a run trains on: packed useful windows, optionally mixed
/// with junk windows. Deterministic in the run spec.
class TrainingStream {
public:
    TrainingStream(const Renderer& renderer, const ExposurePlan& plan, std::size_t window_len,
                   const std::optional<MixturePlan>& mixture);
    TrainingStream(const TrainingStream&) = delete;
    TrainingStream& operator=(const TrainingStream&) = delete;
    std::optional<Window> next();
    void skip(std::uint64_t windows);

private:
    std::unique_ptr<ExposureSchedule> schedule_;
    std::unique_ptr<JunkStream> junk_;
    std::unique_ptr<WindowPacker> useful_;
    std::unique_ptr<WindowPacker> junk_packer_;
    std::unique_ptr<Mixer> mixer_;
};

/// Windows in one pass of the stream, computed from paragraph lengths.
std::uint64_t count_windows(const Renderer& renderer, const ExposurePlan& plan, std::size_t window_len,
                            const std::optional<MixturePlan>& mixture);

/// Mixed stream length given `useful` windows: the mixer stops at the first
/// useful slot it cannot fill.
std::uint64_t mixed_window_count(std::uint64_t useful, std::uint64_t num, std::uint64_t den);

struct QuantRow {
    int bits = 8;
    std::string granularity;
    CapacityReport report;
    LossStats losses;
};

struct RunResult {
    std::string hash;
    bool ok = false;
    std::string error;
    CapacityReport report;
    LossReport losses;
    double memorization = -1.0;  // bioS only
    std::vector<QuantRow> quant;
    std::uint64_t steps = 0;
    double train_seconds = 0.0;

    std::string to_json() const;
    static RunResult from_json(const std::string& text);
};

struct RunOptions {
    std::uint64_t checkpoint_every = 2000;
    std::uint64_t log_every = 100;
    bool verbose = true;
};

/// Directory of a run's training state and results: `root/runs/<training hash>`.
/// Runs that differ only in evaluation or quantization share it.
std::filesystem::path run_dir(const RunSpec& spec, const std::filesystem::path& root);

/// Result of a completed run, if one is stored under `root`.
std::optional<RunResult> cached_result(const RunSpec& spec, const std::filesystem::path& root);

/// Trains (or resumes) and evaluates one grid point under `run_dir`.
/// A completed run is served from its cached result.
RunResult run_one(const RunSpec& spec, const std::filesystem::path& root, const RunOptions& options = {});

/// Runs every grid point (fail-soft), then writes `root/<name>/results.csv`
/// (grid order, bitmath schema), `runs.jsonl` and `failures.jsonl`.
std::vector<RunResult> run_experiment(const ExperimentConfig& config, const std::filesystem::path& root,
                                      const RunOptions& options = {});

/// Output root: explicit argument, else $CAPLAB_OUT, else the config's, else "caplab_out".
std::filesystem::path output_root(const std::string& explicit_dir, const std::string& config_dir);

/// Reads `results.csv` in `dir` and writes capacity.md, components.md and
/// capacity.svg (learned bits against parameters, one series per N, with the
/// 2 bits/param guide line). Returns the files written.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir);

/// Static SVG scatter of (P, bits_total) per N on log axes.
std::string capacity_svg(const std::vector<CapacityReport>& rows);

}  // namespace caplab
