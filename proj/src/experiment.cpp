#include "caplab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "caplab/rng.hpp"
#include "json.hpp"

namespace caplab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + p.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        out << text;
    }
    fs::rename(tmp, p);
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h = (h ^ c) * 0x100000001b3ULL;
    }
    return h;
}

json data_json(const DataSpec& d) {
    if (d.family == Family::bioD) {
        const auto& s = d.biod;
        return {{"family", "bioD"}, {"N", s.N}, {"K", s.K}, {"C", s.C}, {"D", s.D},
                {"L", s.L}, {"T", s.T}, {"N0", s.N0}, {"seed", s.seed}};
    }
    return {{"family", "bioS"}, {"N", d.bios.N}, {"seed", d.bios.seed}};
}

DataSpec data_from_json(const json& j, std::uint64_t N, std::uint64_t default_seed) {
    DataSpec d;
    d.family = parse_family(j.at("family").get<std::string>());
    const std::uint64_t seed = j.value("seed", default_seed);
    if (d.family == Family::bioD) {
        d.biod.N = N;
        d.biod.K = j.at("K");
        d.biod.C = j.at("C");
        d.biod.D = j.at("D");
        d.biod.L = j.at("L");
        d.biod.T = j.at("T");
        d.biod.N0 = j.value("N0", d.biod.N0);
        d.biod.seed = seed;
    } else {
        d.bios.N = N;
        d.bios.seed = seed;
    }
    return d;
}

json model_json(const ModelConfig& c) {
    return {{"layers", c.layers}, {"heads", c.heads}, {"head_dim", c.head_dim},
            {"mlp", mlp_kind_name(c.mlp)}, {"activation", activation_name(c.activation)},
            {"tie_weights", c.tie_weights}, {"window_len", c.window_len}};
}

ModelConfig model_from_json(const json& j, std::uint64_t window_len) {
    ModelConfig c;
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.head_dim = j.value("head_dim", c.head_dim);
    c.mlp = parse_mlp_kind(j.value("mlp", std::string("standard")));
    c.activation = parse_activation(j.value("activation", std::string("gelu")));
    c.tie_weights = j.value("tie_weights", c.tie_weights);
    c.window_len = j.value("window_len", window_len);
    return c;
}

json optim_json(const OptimConfig& o) {
    return {{"lr", o.lr},       {"wd", o.wd},         {"beta1", o.beta1},
            {"beta2", o.beta2}, {"eps", o.eps},       {"batch", o.batch},
            {"steps", o.steps}, {"warmup", o.warmup}, {"final_lr_fraction", o.final_lr_fraction},
            {"deterministic", o.deterministic}};
}

OptimConfig optim_from_json(const json& j) {
    OptimConfig o;
    o.lr = j.value("lr", o.lr);
    o.wd = j.value("wd", o.wd);
    o.beta1 = j.value("beta1", o.beta1);
    o.beta2 = j.value("beta2", o.beta2);
    o.eps = j.value("eps", o.eps);
    o.batch = j.value("batch", o.batch);
    o.steps = j.value("steps", o.steps);
    o.warmup = j.value("warmup", o.warmup);
    o.final_lr_fraction = j.value("final_lr_fraction", o.final_lr_fraction);
    o.deterministic = j.value("deterministic", o.deterministic);
    return o;
}

json mixture_json(const std::optional<MixturePlan>& m) {
    if (!m) {
        return nullptr;
    }
    return {{"useful_num", m->useful_num}, {"useful_den", m->useful_den}, {"junk_n", m->junk_n},
            {"junk_seed", m->junk_seed}, {"special_token", m->special_token_on_useful}};
}

std::optional<MixturePlan> mixture_from_json(const json& j, std::uint64_t seed) {
    if (j.is_null()) {
        return std::nullopt;
    }
    MixturePlan m;
    if (j.contains("useful_fraction")) {
        m.useful_num = j["useful_fraction"].at(0);
        m.useful_den = j["useful_fraction"].at(1);
    } else {
        m.useful_num = j.value("useful_num", m.useful_num);
        m.useful_den = j.value("useful_den", m.useful_den);
    }
    if (m.useful_num == 0 || m.useful_num > m.useful_den) {
        throw std::invalid_argument("useful fraction must lie in (0, 1]");
    }
    m.junk_n = j.value("junk_n", m.junk_n);
    m.junk_seed = j.value("junk_seed", hash_combine(seed, stream::junk));
    m.special_token_on_useful = j.value("special_token", false);
    return m;
}

json quant_json(const std::vector<QuantConfig>& qs) {
    json a = json::array();
    for (const auto& q : qs) {
        a.push_back({{"bits", q.bits}, {"granularity", granularity_name(q.granularity)}});
    }
    return a;
}

json training_json(const RunSpec& s) {
    return {{"data", data_json(s.data)},
            {"exposures", s.exposures},
            {"template_mode", template_mode_name(s.mode)},
            {"model", model_json(s.model)},
            {"optim", optim_json(s.optim)},
            {"mixture", mixture_json(s.mixture)},
            {"seed", s.seed},
            {"replica", s.replica}};
}

json spec_json(const RunSpec& s) {
    json j = training_json(s);
    j["quantize"] = quant_json(s.quantize);
    j["eval"] = {{"sample_size", s.eval.sample_size}, {"seed", s.eval.seed}};
    return j;
}

std::string train_hash(const RunSpec& s) { return hex64(fnv1a(training_json(s).dump())); }

std::vector<json> as_list(const json& j) {
    if (j.is_array()) {
        return {j.begin(), j.end()};
    }
    return {j};
}

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace

KnowledgeBase DataSpec::generate() const { return family == Family::bioD ? gen_biod(biod) : gen_bios(bios); }

std::string RunSpec::to_json() const { return spec_json(*this).dump(); }

RunSpec RunSpec::from_json(const std::string& text) {
    const json j = json::parse(text);
    RunSpec s;
    s.seed = j.at("seed");
    s.replica = j.value("replica", std::string());
    s.data = data_from_json(j.at("data"), j.at("data").at("N"), s.seed);
    s.exposures = j.at("exposures");
    s.mode = parse_template_mode(j.at("template_mode").get<std::string>());
    s.model = model_from_json(j.at("model"), 512);
    s.optim = optim_from_json(j.at("optim"));
    s.mixture = mixture_from_json(j.at("mixture"), s.seed);
    for (const auto& q : j.value("quantize", json::array())) {
        s.quantize.push_back({q.at("bits"), parse_granularity(q.value("granularity", std::string("per_channel")))});
    }
    if (j.contains("eval")) {
        s.eval.sample_size = j["eval"].value("sample_size", s.eval.sample_size);
        s.eval.seed = j["eval"].value("seed", s.eval.seed);
    }
    s.eval.special_token = s.mixture && s.mixture->special_token_on_useful;
    return s;
}

std::string RunSpec::hash() const { return hex64(fnv1a(to_json())); }

ExperimentConfig ExperimentConfig::parse(const std::string& json_text) {
    const json j = json::parse(json_text);
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    c.workers = std::max<std::size_t>(1, j.value("workers", std::size_t{1}));
    c.out_dir = j.value("out", std::string());
    const std::uint64_t seed = j.value("seed", std::uint64_t{0});
    const json& data = j.at("data");
    const Family family = parse_family(data.at("family").get<std::string>());
    const std::uint64_t window_len = j.value("window_len", std::uint64_t{512});
    const TemplateMode mode = parse_template_mode(j.value(
        "template_mode", std::string(family == Family::bioD ? "fixed_template" : "multi_permute")));

    std::vector<QuantConfig> quant;
    for (const auto& q : j.value("quantize", json::array())) {
        QuantConfig qc{q.at("bits"), parse_granularity(q.value("granularity", std::string("per_channel")))};
        qc.validate();
        quant.push_back(qc);
    }
    EvalOptions eval;
    if (j.contains("eval")) {
        eval.sample_size = j["eval"].value("sample_size", eval.sample_size);
        eval.seed = j["eval"].value("seed", eval.seed);
    }
    const json models = j.contains("models") ? j["models"] : j.value("model", json::object());
    const json optims = j.contains("optim") ? j["optim"] : json::object();
    const json mixtures = j.contains("mixture") ? j["mixture"] : json(nullptr);

    for (const auto& n : as_list(data.at("N"))) {
        for (const auto& e : as_list(j.value("exposures", json(1000)))) {
            for (const auto& mx : as_list(mixtures)) {
                for (const auto& m : as_list(models)) {
                    for (const auto& o : as_list(optims)) {
                        RunSpec s;
                        s.seed = seed;
                        s.replica = j.value("replica", std::string());
                        s.data = data_from_json(data, n.get<std::uint64_t>(), seed);
                        s.exposures = e.get<std::uint64_t>();
                        s.mode = mode;
                        s.model = model_from_json(m, window_len);
                        s.optim = optim_from_json(o);
                        s.mixture = mixture_from_json(mx, seed);
                        s.quantize = quant;
                        s.eval = eval;
                        s.eval.special_token = s.mixture && s.mixture->special_token_on_useful;
                        c.runs.push_back(std::move(s));
                    }
                }
            }
        }
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) { return parse(read_file(path)); }

RunData::RunData(const RunSpec& spec) : kb(spec.data.generate()), vocab(build_vocab(kb)) {
    if (spec.mixture) {
        extend_with_bios_domain(vocab);
    }
    renderer = std::make_unique<Renderer>(kb, vocab);
}

RunData::RunData(KnowledgeBase k, Vocab v) : kb(std::move(k)), vocab(std::move(v)) {
    renderer = std::make_unique<Renderer>(kb, vocab);
}

ExposurePlan exposure_plan(const RunSpec& spec) {
    ExposurePlan p;
    p.exposures = spec.exposures;
    p.mode = spec.mode;
    p.seed = hash_combine(spec.seed, stream::schedule);
    p.special_token = spec.mixture && spec.mixture->special_token_on_useful;
    return p;
}

TrainingStream::TrainingStream(const Renderer& renderer, const ExposurePlan& plan, std::size_t window_len,
                               const std::optional<MixturePlan>& mixture)
    : schedule_(std::make_unique<ExposureSchedule>(renderer, plan)) {
    useful_ = std::make_unique<WindowPacker>([this] { return schedule_->next(); }, window_len);
    if (!mixture) {
        return;
    }
    junk_ = std::make_unique<JunkStream>(renderer, mixture->junk_n, mixture->junk_seed);
    junk_packer_ = std::make_unique<WindowPacker>(
        [this]() -> std::optional<RenderedParagraph> { return junk_->next(); }, window_len);
    mixer_ = std::make_unique<Mixer>([this] { return useful_->next(); }, [this] { return junk_packer_->next(); },
                                     mixture->useful_num, mixture->useful_den);
}

std::optional<Window> TrainingStream::next() { return mixer_ ? mixer_->next() : useful_->next(); }

void TrainingStream::skip(std::uint64_t windows) {
    for (std::uint64_t i = 0; i < windows; ++i) {
        if (!next()) {
            return;
        }
    }
}

std::uint64_t mixed_window_count(std::uint64_t useful, std::uint64_t num, std::uint64_t den) {
    // Useful slot k (1-based) sits at index ceil(k den / num) - 1.
    return ceil_div((useful + 1) * den, num) - 1;
}

std::uint64_t count_windows(const Renderer& renderer, const ExposurePlan& plan, std::size_t window_len,
                            const std::optional<MixturePlan>& mixture) {
    ExposureSchedule schedule(renderer, plan);
    std::uint64_t tokens = 0;
    while (auto p = schedule.next()) {
        tokens += p->tokens.size() + 1;
    }
    const std::uint64_t useful = ceil_div(tokens, window_len);
    return mixture ? mixed_window_count(useful, mixture->useful_num, mixture->useful_den) : useful;
}

std::string RunResult::to_json() const {
    nlohmann::ordered_json j;
    j["hash"] = hash;
    j["ok"] = ok;
    if (!ok) {
        j["error"] = error;
        return j.dump();
    }
    j["csv_row"] = csv_row(report);
    j["report"] = json::parse(caplab::to_json(report));
    j["losses"] = json::parse(losses.to_json());
    j["memorization_accuracy"] = memorization;
    j["steps"] = steps;
    j["train_seconds"] = train_seconds;
    json q = json::array();
    for (const auto& r : quant) {
        q.push_back({{"method", "rtn"},
                     {"bits", r.bits},
                     {"granularity", r.granularity},
                     {"csv_row", csv_row(r.report)},
                     {"losses", {{"p1", r.losses.p1}, {"p2m", r.losses.p2m}, {"p3m", r.losses.p3m}, {"p2s", r.losses.p2s}}}});
    }
    j["quant"] = q;
    return j.dump();
}

RunResult RunResult::from_json(const std::string& text) {
    const json j = json::parse(text);
    RunResult r;
    r.hash = j.at("hash");
    r.ok = j.at("ok");
    if (!r.ok) {
        r.error = j.value("error", std::string());
        return r;
    }
    r.report = parse_csv_row(j.at("csv_row"));
    const auto& l = j.at("losses");
    r.losses.stats = {l.at("p1"), l.at("p2m"), l.at("p3m"), l.at("p2s")};
    r.losses.sample_size = l.at("sample_size");
    r.losses.seed = l.at("seed");
    r.losses.per_attribute = l.value("per_attribute", std::vector<double>{});
    r.memorization = j.value("memorization_accuracy", -1.0);
    r.steps = j.value("steps", std::uint64_t{0});
    r.train_seconds = j.value("train_seconds", 0.0);
    for (const auto& q : j.value("quant", json::array())) {
        QuantRow row;
        row.bits = q.at("bits");
        row.granularity = q.at("granularity");
        row.report = parse_csv_row(q.at("csv_row"));
        const auto& ql = q.at("losses");
        row.losses = {ql.at("p1"), ql.at("p2m"), ql.at("p3m"), ql.at("p2s")};
        r.quant.push_back(row);
    }
    return r;
}

fs::path run_dir(const RunSpec& spec, const fs::path& root) { return root / "runs" / train_hash(spec); }

std::optional<RunResult> cached_result(const RunSpec& spec, const fs::path& root) {
    const fs::path path = run_dir(spec, root) / ("result-" + spec.hash() + ".json");
    if (!fs::exists(path)) {
        return std::nullopt;
    }
    return RunResult::from_json(read_file(path));
}

RunResult run_one(const RunSpec& spec, const fs::path& root, const RunOptions& options) {
    RunResult result;
    result.hash = spec.hash();
    const fs::path dir = run_dir(spec, root);
    const fs::path result_path = dir / ("result-" + result.hash + ".json");
    try {
        fs::create_directories(dir);
        if (fs::exists(result_path)) {
            return RunResult::from_json(read_file(result_path));
        }
        write_file(dir / "train_spec.json", training_json(spec).dump(2) + "\n");
        write_file(dir / ("spec-" + result.hash + ".json"), spec_json(spec).dump(2) + "\n");

        RunData data(spec);
        ModelConfig cfg = spec.model;
        cfg.vocab_size = data.vocab.size();
        cfg.validate();
        const ExposurePlan plan = exposure_plan(spec);
        OptimConfig optim = spec.optim;
        if (optim.steps == 0) {
            optim.steps = ceil_div(count_windows(*data.renderer, plan, cfg.window_len, spec.mixture), optim.batch);
        }
        optim.warmup = std::min(optim.warmup, optim.steps);

        const fs::path final_path = dir / "final.ckpt";
        const fs::path partial_path = dir / "partial.ckpt";
        Checkpoint ck;
        if (fs::exists(final_path)) {
            ck = Checkpoint::load(final_path.string());
        } else {
            Checkpoint start = fs::exists(partial_path) ? Checkpoint::load(partial_path.string())
                                                        : init_model(cfg, hash_combine(spec.seed, stream::init));
            TrainingStream stream(*data.renderer, plan, cfg.window_len, spec.mixture);
            stream.skip(start.step * optim.batch);
            std::ofstream log(dir / "train_log.csv", start.step == 0 ? std::ios::trunc : std::ios::app);
            if (start.step == 0) {
                log << "step,loss,lr,seconds\n";
            }
            TrainHooks hooks;
            hooks.log_every = options.log_every;
            hooks.checkpoint_every = options.checkpoint_every;
            const std::string tag = train_hash(spec).substr(0, 8);
            hooks.on_log = [&](const StepLog& s) {
                char line[160];
                std::snprintf(line, sizeof line, "%llu,%.6f,%.6g,%.1f", static_cast<unsigned long long>(s.step),
                              s.loss, s.lr, s.seconds);
                log << line << '\n' << std::flush;
                if (options.verbose) {
                    std::fprintf(stderr, "[%s] step %llu/%llu loss %.4f lr %.2e %.0fs\n", tag.c_str(),
                                 static_cast<unsigned long long>(s.step),
                                 static_cast<unsigned long long>(optim.steps), s.loss, s.lr, s.seconds);
                }
            };
            hooks.on_checkpoint = [&](const Checkpoint& mid) { mid.save(partial_path.string()); };
            const auto t0 = std::chrono::steady_clock::now();
            ck = train(std::move(start), optim, [&] { return stream.next(); }, hooks);
            result.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            ck.save(final_path.string());
            fs::remove(partial_path);
        }
        result.steps = ck.step;

        const std::uint64_t P = param_count(cfg);
        const TransformerModel model(ck);
        result.losses = eval_losses(model, *data.renderer, spec.eval);
        result.report = capacity_report(data.kb, result.losses.stats, P, spec.exposures);
        if (data.kb.family() == Family::bioS) {
            result.memorization = memorization_accuracy(model, *data.renderer, spec.eval);
        }
        for (const auto& qc : spec.quantize) {
            const TransformerModel qm(quantize_rtn(ck, qc));
            QuantRow row;
            row.bits = qc.bits;
            row.granularity = std::string(granularity_name(qc.granularity));
            row.losses = eval_losses(qm, *data.renderer, spec.eval).stats;
            row.report = capacity_report(data.kb, row.losses, P, spec.exposures);
            result.quant.push_back(row);
        }
        result.ok = true;
        write_file(result_path, result.to_json() + "\n");
    } catch (const std::exception& e) {
        result.ok = false;
        result.error = e.what();
    }
    return result;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& config, const fs::path& root,
                                      const RunOptions& options) {
    std::vector<RunResult> results(config.runs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < config.runs.size(); i = next++) {
            results[i] = run_one(config.runs[i], root, options);
        }
    };
    const std::size_t width = std::min(config.workers, std::max<std::size_t>(1, config.runs.size()));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < width; ++w) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }

    const fs::path dir = root / config.name;
    fs::create_directories(dir);
    std::string csv = csv_header() + "\n";
    std::string quant = "method,bits,granularity," + csv_header() + "\n";
    std::string runs;
    std::string failures;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        if (!r.ok) {
            failures += json{{"hash", r.hash}, {"spec", json::parse(config.runs[i].to_json())}, {"error", r.error}}.dump() + "\n";
            continue;
        }
        csv += csv_row(r.report) + "\n";
        for (const auto& q : r.quant) {
            quant += "rtn," + std::to_string(q.bits) + "," + q.granularity + "," + csv_row(q.report) + "\n";
        }
        json line = json::parse(r.to_json());
        line["spec"] = json::parse(config.runs[i].to_json());
        runs += line.dump() + "\n";
    }
    write_file(dir / "results.csv", csv);
    write_file(dir / "runs.jsonl", runs);
    write_file(dir / "failures.jsonl", failures);
    if (quant.find('\n') + 1 < quant.size()) {
        write_file(dir / "quant.csv", quant);
    }
    return results;
}

fs::path output_root(const std::string& explicit_dir, const std::string& config_dir) {
    if (!explicit_dir.empty()) {
        return explicit_dir;
    }
    if (const char* env = std::getenv("CAPLAB_OUT"); env != nullptr && *env != '\0') {
        return env;
    }
    if (!config_dir.empty()) {
        return config_dir;
    }
    return "caplab_out";
}

namespace {

std::vector<CapacityReport> read_rows(const fs::path& csv_path) {
    std::vector<CapacityReport> rows;
    std::ifstream in(csv_path);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (!line.empty()) {
            rows.push_back(parse_csv_row(line));
        }
    }
    return rows;
}

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

}  // namespace

std::string capacity_svg(const std::vector<CapacityReport>& rows) {
    constexpr double W = 640, H = 440, left = 70, right = 20, top = 20, bottom = 50;
    double pmin = 1e300, pmax = 0, bmin = 1e300, bmax = 0;
    for (const auto& r : rows) {
        const double P = static_cast<double>(r.P);
        pmin = std::min(pmin, P);
        pmax = std::max(pmax, P);
        bmax = std::max({bmax, r.bits_total, 2.0 * P});
        if (r.bits_total > 0) {
            bmin = std::min(bmin, r.bits_total);
        }
        bmin = std::min(bmin, 2.0 * P);
    }
    const double x0 = std::floor(std::log10(pmin)), x1 = std::max(x0 + 1, std::ceil(std::log10(pmax)));
    const double y0 = std::floor(std::log10(bmin)), y1 = std::max(y0 + 1, std::ceil(std::log10(bmax)));
    auto sx = [&](double P) { return left + (std::log10(P) - x0) / (x1 - x0) * (W - left - right); };
    auto sy = [&](double b) {
        const double v = b > 0 ? std::log10(b) : y0;
        return H - bottom - (std::max(v, y0) - y0) / (y1 - y0) * (H - top - bottom);
    };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<g stroke=\"#888\" stroke-width=\"1\">\n";
    s << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom << "\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom << "\"/>\n";
    s << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
    for (double e = x0; e <= x1; ++e) {
        s << "<text x=\"" << sx(std::pow(10, e)) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">1e"
          << e << "</text>\n";
    }
    for (double e = y0; e <= y1; ++e) {
        s << "<text x=\"" << left - 6 << "\" y=\"" << sy(std::pow(10, e)) + 4 << "\" text-anchor=\"end\">1e" << e
          << "</text>\n";
    }
    s << "<text x=\"" << (W + left) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">parameters P</text>\n";
    s << "<text x=\"16\" y=\"" << (H - bottom + top) / 2 << "\" transform=\"rotate(-90 16 "
      << (H - bottom + top) / 2 << ")\" text-anchor=\"middle\">learned bits</text>\n";
    s << "</g>\n";
    // Guide: 2 bits per parameter.
    const double ga = std::pow(10, x0), gb = std::pow(10, x1);
    s << "<line id=\"guide\" x1=\"" << sx(ga) << "\" y1=\"" << sy(2 * ga) << "\" x2=\"" << sx(gb) << "\" y2=\""
      << sy(2 * gb) << "\" stroke=\"#999\" stroke-dasharray=\"5,4\"/>\n";

    std::map<std::uint64_t, std::size_t> series;
    for (const auto& r : rows) {
        series.emplace(r.N, series.size());
    }
    for (const auto& r : rows) {
        const char* c = colors[series[r.N] % 6];
        s << "<circle class=\"point\" data-n=\"" << r.N << "\" cx=\"" << sx(static_cast<double>(r.P)) << "\" cy=\""
          << sy(r.bits_total) << "\" r=\"4\" fill=\"" << (r.bits_total > 0 ? c : "none") << "\" stroke=\"" << c
          << "\"/>\n";
    }
    double ly = top + 10;
    for (const auto& [N, idx] : series) {
        s << "<circle cx=\"" << left + 16 << "\" cy=\"" << ly << "\" r=\"4\" fill=\"" << colors[idx % 6] << "\"/>"
          << "<text x=\"" << left + 26 << "\" y=\"" << ly + 4
          << "\" font-family=\"sans-serif\" font-size=\"11\">N=" << N << "</text>\n";
        ly += 16;
    }
    s << "<text x=\"" << left + 16 << "\" y=\"" << ly + 4
      << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#777\">dashed: 2 bits/param</text>\n";
    s << "</svg>\n";
    return s.str();
}

std::vector<fs::path> write_report(const fs::path& dir) {
    const auto rows = read_rows(dir / "results.csv");
    if (rows.empty()) {
        throw EmptyResults("no result rows in " + (dir / "results.csv").string());
    }
    std::vector<fs::path> written;

    std::string cap = "| N | P | exposures | bits_total | R | Rmax |\n|---:|---:|---:|---:|---:|---:|\n";
    std::string comp = "| N | P | name | value | diversity | sum |\n|---:|---:|---:|---:|---:|---:|\n";
    for (const auto& r : rows) {
        cap += "| " + std::to_string(r.N) + " | " + std::to_string(r.P) + " | " + std::to_string(r.exposures) +
               " | " + fmt("%.1f", r.bits_total) + " | " + fmt("%.4f", r.R) + " | " + fmt("%.4f", r.Rmax) + " |\n";
        const double a = r.fraction_name(), b = r.fraction_value(), c = r.fraction_div();
        comp += "| " + std::to_string(r.N) + " | " + std::to_string(r.P) + " | " + fmt("%.4f", a) + " | " +
                fmt("%.4f", b) + " | " + fmt("%.4f", c) + " | " + fmt("%.4f", a + b + c) + " |\n";
    }
    write_file(dir / "capacity.md", cap);
    write_file(dir / "components.md", comp);
    write_file(dir / "capacity.svg", capacity_svg(rows));
    written = {dir / "capacity.md", dir / "components.md", dir / "capacity.svg"};

    if (fs::exists(dir / "quant.csv")) {
        std::ifstream in(dir / "quant.csv");
        std::string line;
        std::getline(in, line);
        std::string q =
            "Post-training quantization by round-to-nearest (RTN), not GPTQ.\n\n"
            "| method | bits | granularity | N | P | bits_total | R |\n|---|---:|---|---:|---:|---:|---:|\n";
        while (std::getline(in, line)) {
            if (line.empty()) {
                continue;
            }
            std::vector<std::string> f;
            std::stringstream ss(line);
            for (std::string cell; std::getline(ss, cell, ',');) {
                f.push_back(cell);
            }
            const auto r = parse_csv_row(line.substr(f[0].size() + f[1].size() + f[2].size() + 3));
            q += "| " + f[0] + " | " + f[1] + " | " + f[2] + " | " + std::to_string(r.N) + " | " +
                 std::to_string(r.P) + " | " + fmt("%.1f", r.bits_total) + " | " + fmt("%.4f", r.R) + " |\n";
        }
        write_file(dir / "quant.md", q);
        written.push_back(dir / "quant.md");
    }
    return written;
}

}  // namespace caplab
