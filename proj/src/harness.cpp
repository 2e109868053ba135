#include "trove/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <omp.h>

#include "trove/dataset_io.hpp"
#include "trove/tensor_io.hpp"

namespace trove {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double num_from(const json& j, const char* key, double fallback = std::numeric_limits<double>::quiet_NaN()) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    return it->get<double>();
}

std::string fixed(double v, int digits = 6) {
    if (!std::isfinite(v)) return "nan";
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw Error("cannot write " + file.string());
    os << text;
}

void write_atomic(const fs::path& file, const std::string& text) {
    auto tmp = file;
    tmp += ".tmp";
    write_text(tmp, text);
    fs::rename(tmp, file);
}

std::string label_or_none(int y) { return y < 0 ? "none" : std::string(label_name(label_from_index(y))); }

}  // namespace

// ---------------------------------------------------------------- grid

int span_for(double fraction, int n) { return std::max(1, static_cast<int>(std::lround(fraction * n))); }

std::string config_id(const SweepCell& c) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s-n%02d-v%03d-s%02d-seed%llu", std::string(feature_kind_name(c.kind)).c_str(),
                  c.seq_len, static_cast<int>(std::lround(c.cramers_v * 100)), c.feature_span,
                  static_cast<unsigned long long>(c.seed));
    return buf;
}

json to_json(const RunOptions& o) {
    json prompts = {{"epochs", o.prompts.epochs},
                    {"learning_rate", o.prompts.learning_rate},
                    {"momentum", o.prompts.momentum},
                    {"batch_size", o.prompts.batch_size},
                    {"min_members", o.prompts.min_members},
                    {"class_balanced", o.prompts.class_balanced}};
    return {{"train_count", o.train_count}, {"val_count", o.val_count},   {"test_count", o.test_count},
            {"q_south", o.q_south},         {"train", to_json(o.train)},  {"k_range", o.k_range},
            {"prompts", prompts},           {"mitigation_top_k", o.mitigation_top_k},
            {"write_tensors", o.write_tensors}};
}

RunOptions run_options_from_json(const json& j) {
    RunOptions o;
    o.train_count = j.value("train_count", o.train_count);
    o.val_count = j.value("val_count", o.val_count);
    o.test_count = j.value("test_count", o.test_count);
    o.q_south = j.value("q_south", o.q_south);
    if (j.contains("train")) o.train = train_config_from_json(j.at("train"));
    if (j.contains("k_range")) o.k_range = j.at("k_range").get<std::vector<int>>();
    if (j.contains("prompts")) {
        const auto& p = j.at("prompts");
        o.prompts.epochs = p.value("epochs", o.prompts.epochs);
        o.prompts.learning_rate = p.value("learning_rate", o.prompts.learning_rate);
        o.prompts.momentum = p.value("momentum", o.prompts.momentum);
        o.prompts.batch_size = p.value("batch_size", o.prompts.batch_size);
        o.prompts.min_members = p.value("min_members", o.prompts.min_members);
        o.prompts.class_balanced = p.value("class_balanced", o.prompts.class_balanced);
    }
    o.mitigation_top_k = j.value("mitigation_top_k", o.mitigation_top_k);
    o.write_tensors = j.value("write_tensors", o.write_tensors);
    return o;
}

SweepGrid SweepGrid::default_grid() {
    SweepGrid g;
    g.kinds = {FeatureKind::Background, FeatureKind::Object, FeatureKind::Attribute};
    g.seq_lens = {2, 3, 5, 10};
    g.cramers_v = {0.8, 0.9, 0.95};
    g.span_fractions = {0.4, 1.0};
    g.seeds = {0};
    return g;
}

std::vector<SweepCell> SweepGrid::cells() const {
    std::vector<SweepCell> out;
    std::set<std::string> seen;
    for (auto kind : kinds)
        for (int n : seq_lens)
            for (double v : cramers_v)
                for (double f : span_fractions)
                    for (auto seed : seeds) {
                        SweepCell c{kind, n, v, span_for(f, n), f, seed};
                        if (seen.insert(config_id(c)).second) out.push_back(c);
                    }
    return out;
}

json to_json(const SweepGrid& g) {
    json kinds = json::array();
    for (auto k : g.kinds) kinds.push_back(feature_kind_name(k));
    return {{"kinds", kinds},
            {"seq_lens", g.seq_lens},
            {"cramers_v", g.cramers_v},
            {"span_fractions", g.span_fractions},
            {"seeds", g.seeds},
            {"options", to_json(g.options)}};
}

SweepGrid sweep_grid_from_json(const json& j) {
    SweepGrid g = SweepGrid::default_grid();
    if (j.contains("kinds")) {
        g.kinds.clear();
        for (const auto& k : j.at("kinds")) {
            const auto kind = parse_feature_kind(k.get<std::string>());
            if (!kind || *kind == FeatureKind::None) throw Error("grid: unknown feature kind " + k.dump());
            g.kinds.push_back(*kind);
        }
    }
    if (j.contains("seq_lens")) g.seq_lens = j.at("seq_lens").get<std::vector<int>>();
    if (j.contains("cramers_v")) g.cramers_v = j.at("cramers_v").get<std::vector<double>>();
    if (j.contains("span_fractions")) g.span_fractions = j.at("span_fractions").get<std::vector<double>>();
    if (j.contains("seeds")) g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("options")) g.options = run_options_from_json(j.at("options"));
    return g;
}

SweepGrid load_grid(const std::string& spec) {
    if (spec == "default") return SweepGrid::default_grid();
    std::ifstream is(spec);
    if (!is) throw Error("grid file not found: " + spec);
    return sweep_grid_from_json(json::parse(is));
}

DatasetConfig dataset_config(const SweepCell& cell, const RunOptions& opt) {
    DatasetConfig c;
    c.feature.kind = cell.kind;
    c.seq_len = cell.seq_len;
    c.target_cramers_v = cell.cramers_v;
    c.feature_span = cell.feature_span;
    c.train_count = opt.train_count;
    c.val_count = opt.val_count;
    c.test_count = opt.test_count;
    c.q_south = opt.q_south;
    c.seed = cell.seed;
    return c;
}

// ---------------------------------------------------------------- records

namespace {

json cell_json(const SweepCell& c) {
    return {{"kind", feature_kind_name(c.kind)}, {"seq_len", c.seq_len},          {"cramers_v", c.cramers_v},
            {"feature_span", c.feature_span},   {"span_fraction", c.span_fraction}, {"seed", c.seed}};
}

SweepCell cell_from_json(const json& j) {
    SweepCell c;
    c.kind = parse_feature_kind(j.at("kind").get<std::string>()).value();
    c.seq_len = j.at("seq_len");
    c.cramers_v = j.at("cramers_v");
    c.feature_span = j.at("feature_span");
    c.span_fraction = j.at("span_fraction");
    c.seed = j.at("seed");
    return c;
}

json subset_json(const SubsetAccuracy& s) { return {{"count", s.count}, {"base", s.base}, {"mitigated", s.mitigated}}; }

SubsetAccuracy subset_from_json(const json& j) { return {j.at("count"), j.at("base"), j.at("mitigated")}; }

}  // namespace

json to_json(const RunRecord& r) {
    json metrics = json::array();
    for (const auto& m : r.metrics)
        metrics.push_back({{"method", m.method},
                           {"p10", m.p10},
                           {"p25", m.p25},
                           {"p100", m.p100},
                           {"r_precision", m.r_precision},
                           {"list_length", m.list_length},
                           {"truncated", m.truncated}});
    json per_class = json::array();
    for (int y = 0; y < kNumClasses; ++y) {
        const auto& c = r.model_gate.per_class[static_cast<std::size_t>(y)];
        per_class.push_back({{"label", label_name(label_from_index(y))},
                             {"image_gap", num(c.image_gap)},
                             {"sequence_gap", num(c.sequence_gap)},
                             {"flagged_sequences", c.flagged_sequences},
                             {"clean_sequences", c.clean_sequences}});
    }
    json j = {{"config_id", r.config_id},
              {"cell", cell_json(r.cell)},
              {"status", r.status},
              {"failed_stage", r.failed_stage},
              {"error", r.error},
              {"task_gate",
               {{"temporal_accuracy", r.task_gate.temporal_accuracy},
                {"control_accuracy", r.task_gate.control_accuracy},
                {"gap", r.task_gate.gap},
                {"pass", r.task_gate.pass}}},
              {"model_gate",
               {{"task_gap", r.model_gate.task_gap},
                {"image_gap", num(r.model_gate.image_gap)},
                {"sequence_gap", num(r.model_gate.sequence_gap)},
                {"affected_class", label_or_none(r.model_gate.affected_class)},
                {"pass", r.model_gate.pass},
                {"per_class", per_class}}},
              {"realized_cramers_v", r.realized_cramers_v},
              {"val_accuracy", r.val_accuracy},
              {"test_accuracy", r.test_accuracy},
              {"metrics", metrics},
              {"discovered_k", r.discovered_k},
              {"temperature", r.temperature},
              {"artifacts", r.artifacts},
              {"hashes", r.hashes},
              {"wall_seconds", r.wall_seconds}};
    if (r.mitigation) {
        const auto& t = *r.mitigation;
        j["mitigation"] = {{"affected_class", label_or_none(t.affected_class)},
                           {"prompts", t.prompts},
                           {"overall", subset_json(t.overall)},
                           {"label", subset_json(t.label)},
                           {"label_with_feature", subset_json(t.label_with_feature)},
                           {"all", subset_json(t.all)}};
    }
    return j;
}

RunRecord run_record_from_json(const json& j) {
    RunRecord r;
    r.config_id = j.at("config_id");
    r.cell = cell_from_json(j.at("cell"));
    r.status = j.at("status");
    r.failed_stage = j.value("failed_stage", "");
    r.error = j.value("error", "");
    const auto& tg = j.at("task_gate");
    r.task_gate = {tg.at("temporal_accuracy"), tg.at("control_accuracy"), tg.at("gap"), tg.at("pass")};
    const auto& mg = j.at("model_gate");
    r.model_gate.task_gap = mg.at("task_gap");
    r.model_gate.image_gap = num_from(mg, "image_gap");
    r.model_gate.sequence_gap = num_from(mg, "sequence_gap");
    const auto affected = parse_label(mg.at("affected_class").get<std::string>());
    r.model_gate.affected_class = affected ? index_of(*affected) : -1;
    r.model_gate.pass = mg.at("pass");
    for (const auto& c : mg.value("per_class", json::array())) {
        const auto y = parse_label(c.at("label").get<std::string>());
        if (!y) continue;
        auto& out = r.model_gate.per_class[static_cast<std::size_t>(index_of(*y))];
        out.image_gap = num_from(c, "image_gap");
        out.sequence_gap = num_from(c, "sequence_gap");
        out.flagged_sequences = c.value("flagged_sequences", 0);
        out.clean_sequences = c.value("clean_sequences", 0);
    }
    r.realized_cramers_v = j.value("realized_cramers_v", 0.0);
    r.val_accuracy = j.value("val_accuracy", 0.0);
    r.test_accuracy = j.value("test_accuracy", 0.0);
    for (const auto& m : j.value("metrics", json::array()))
        r.metrics.push_back({m.at("method"), m.at("p10"), m.at("p25"), m.at("p100"), m.at("r_precision"),
                             m.at("list_length"), m.at("truncated").get<std::vector<std::string>>()});
    if (j.contains("mitigation")) {
        const auto& t = j.at("mitigation");
        MitigationTable m;
        const auto y = parse_label(t.at("affected_class").get<std::string>());
        m.affected_class = y ? index_of(*y) : -1;
        m.prompts = t.at("prompts");
        m.overall = subset_from_json(t.at("overall"));
        m.label = subset_from_json(t.at("label"));
        m.label_with_feature = subset_from_json(t.at("label_with_feature"));
        m.all = subset_from_json(t.at("all"));
        r.mitigation = m;
    }
    r.discovered_k = j.value("discovered_k", 0);
    r.temperature = j.value("temperature", 1.0);
    r.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
    r.hashes = j.value("hashes", std::map<std::string, std::string>{});
    r.wall_seconds = j.value("wall_seconds", 0.0);
    return r;
}

std::string metrics_csv(const RunRecord& r) {
    std::ostringstream os;
    os << "config_id,method,P@10,P@25,P@100,R-Prec,list_length,truncated\n";
    for (const auto& m : r.metrics) {
        std::string trunc;
        for (const auto& t : m.truncated) trunc += (trunc.empty() ? "" : ";") + t;
        os << r.config_id << ',' << m.method << ',' << fixed(m.p10) << ',' << fixed(m.p25) << ',' << fixed(m.p100)
           << ',' << fixed(m.r_precision) << ',' << m.list_length << ',' << (trunc.empty() ? "-" : trunc) << '\n';
    }
    return os.str();
}

namespace {

std::string gate_text(const RunRecord& r) {
    std::ostringstream os;
    const auto& g = r.model_gate;
    os << "config_id: " << r.config_id << '\n'
       << "task_gate: gap=" << fixed(r.task_gate.gap, 3) << " temporal=" << fixed(r.task_gate.temporal_accuracy, 4)
       << " control=" << fixed(r.task_gate.control_accuracy, 4) << " pass=" << (r.task_gate.pass ? "yes" : "no") << '\n'
       << "model_gate: affected=" << label_or_none(g.affected_class) << " image_gap=" << fixed(g.image_gap, 3)
       << " sequence_gap=" << fixed(g.sequence_gap, 3) << '\n';
    for (int y = 0; y < kNumClasses; ++y) {
        const auto& c = g.per_class[static_cast<std::size_t>(y)];
        os << "  class " << label_name(label_from_index(y)) << ": image_gap=" << fixed(c.image_gap, 3)
           << " sequence_gap=" << fixed(c.sequence_gap, 3) << " flagged=" << c.flagged_sequences
           << " clean=" << c.clean_sequences << '\n';
    }
    os << "pass: " << (g.pass ? "yes" : "no") << '\n';
    return os.str();
}

std::string mitigation_csv(const RunRecord& r) {
    std::ostringstream os;
    os << "config_id,subset,count,base,mitigated,gain_points\n";
    if (!r.mitigation) return os.str();
    const auto& t = *r.mitigation;
    const std::pair<const char*, const SubsetAccuracy*> rows[] = {
        {"overall", &t.overall}, {"label", &t.label}, {"label_with_feature", &t.label_with_feature}, {"all", &t.all}};
    for (const auto& [name, s] : rows)
        os << r.config_id << ',' << name << ',' << s->count << ',' << fixed(s->base) << ',' << fixed(s->mitigated) << ','
           << fixed(100.0 * (s->mitigated - s->base), 3) << '\n';
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------- task gate cache

struct TaskGateCache::Impl {
    fs::path dir;
    std::mutex mu;
    std::map<std::string, std::shared_future<TaskGate>> pending;
};

TaskGateCache::TaskGateCache(fs::path dir) : impl_(new Impl{std::move(dir), {}, {}}) {}
TaskGateCache::~TaskGateCache() { delete impl_; }

std::string TaskGateCache::key(const DatasetConfig& cfg, const TrainConfig& train) {
    DatasetConfig clean = cfg;
    clean.feature = FeatureSpec{FeatureKind::None};
    clean.target_cramers_v = 0.0;
    clean.feature_span = 1;
    clean.q_south = DatasetConfig{}.q_south;
    return hex64(fnv1a(json{{"data", to_json(clean)}, {"train", to_json(train)}}.dump()));
}

TaskGate TaskGateCache::get(const DatasetConfig& cfg, const TrainConfig& train) {
    const std::string k = key(cfg, train);
    const fs::path file = impl_->dir / (k + ".json");
    std::promise<TaskGate> promise;
    std::shared_future<TaskGate> future;
    bool owner = false;
    {
        std::lock_guard lock(impl_->mu);
        auto it = impl_->pending.find(k);
        if (it != impl_->pending.end()) {
            future = it->second;
        } else {
            future = promise.get_future().share();
            impl_->pending.emplace(k, future);
            owner = true;
        }
    }
    if (!owner) return future.get();
    try {
        TaskGate g;
        if (std::ifstream is(file); is) {
            const json j = json::parse(is);
            g = {j.at("temporal_accuracy"), j.at("control_accuracy"), j.at("gap"), j.at("pass")};
        } else {
            g = gate_task(cfg, train);
            fs::create_directories(impl_->dir);
            write_atomic(file, json{{"temporal_accuracy", g.temporal_accuracy},
                                    {"control_accuracy", g.control_accuracy},
                                    {"gap", g.gap},
                                    {"pass", g.pass},
                                    {"seq_len", cfg.seq_len},
                                    {"seed", cfg.seed}}
                                   .dump(2) + "\n");
        }
        promise.set_value(g);
    } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard lock(impl_->mu);
        impl_->pending.erase(k);
    }
    return future.get();
}

// ---------------------------------------------------------------- run_config

MethodMetrics score_list(const RankedList& list, std::span<const std::uint8_t> truth) {
    list.validate();
    MethodMetrics m;
    m.method = list.method;
    m.list_length = static_cast<int>(list.ids.size());
    const std::pair<int, double*> cuts[] = {{10, &m.p10}, {25, &m.p25}, {100, &m.p100}};
    for (const auto& [k, dst] : cuts) {
        const auto r = precision_at_k(list, truth, k);
        *dst = r.value;
        if (r.truncated) m.truncated.push_back("P@" + std::to_string(k));
    }
    const auto rp = r_precision(list, truth);
    m.r_precision = rp.value;
    if (rp.truncated) m.truncated.push_back("R-Prec");
    return m;
}

RunRecord run_config(const SweepCell& cell, const RunOptions& opt, const fs::path& root, TaskGateCache& gates) {
    const auto start = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.config_id = config_id(cell);
    rec.cell = cell;
    const fs::path dir = root / rec.config_id;
    fs::create_directories(dir);
    write_text(dir / "INCOMPLETE", "run in progress or interrupted\n");
    std::string stage = "generate";
    try {
        const DatasetConfig dcfg = dataset_config(cell, opt);
        const Dataset ds = generate_dataset(dcfg);
        rec.realized_cramers_v = ds.realized_cramers_v;
        save_dataset(ds, dir / "dataset", opt.write_tensors);
        rec.artifacts["dataset"] = "dataset";
        rec.hashes["dataset_config"] = config_hash(dcfg);

        TrainConfig tcfg = opt.train;
        tcfg.seed = cell.seed;

        stage = "gate_task";
        rec.task_gate = gates.get(dcfg, tcfg);

        stage = "train";
        const ModelConfig mcfg = default_model_config(dcfg, true, derive_seed(tcfg.seed, 11));
        const TemporalModel probe(mcfg);
        const auto train_bank = build_feature_bank(probe.featurizer(), ds, ds.train);
        const auto val_bank = build_feature_bank(probe.featurizer(), ds, ds.val);
        const auto test_bank = build_feature_bank(probe.featurizer(), ds, ds.test);
        TrainLog log;
        const TemporalModel model = train_on_features(mcfg, train_bank, val_bank, tcfg, &log);
        model.save(dir / "model.bin");
        rec.artifacts["model"] = "model.bin";
        rec.hashes["model"] = file_hash(dir / "model.bin");
        rec.val_accuracy = log.best_val_accuracy;

        stage = "gate_model";
        const SplitAnalysis test = analyze_split(model, test_bank);
        rec.test_accuracy = accuracy(model, test_bank);
        rec.model_gate = gate_model(test, ds.test, rec.task_gate.gap);
        rec.status = rec.model_gate.pass ? "complete" : "excluded";
        write_text(dir / "gate.txt", gate_text(rec));
        rec.artifacts["gate"] = "gate.txt";

        if (rec.model_gate.pass) {
            stage = "discover";
            const SplitAnalysis val = analyze_split(model, val_bank);
            DiscoverOptions dopt;
            dopt.k_range = opt.k_range;
            dopt.seed = cell.seed;
            BiasReport report = discover_from_analysis(val, val.static_embeddings.cast<double>(), dopt);
            report.provenance["config_hash"] = rec.hashes["dataset_config"];
            report.provenance["model_hash"] = rec.hashes["model"];
            report.provenance["model_path"] = "../model.bin";  // relative to the report directory
            report.provenance["dataset_path"] = "../dataset";
            save_report(report, val, dir / "report");
            const BiasReport ablation = with_ranking(report, RankingMode::SbsOnly);
            write_text(dir / "report" / "report_sbs_only.json", to_json(ablation).dump(2) + "\n");
            rec.artifacts["report"] = "report";
            rec.discovered_k = report.clusters.k;
            rec.temperature = report.temperature.value;

            stage = "metrics";
            const int y = rec.model_gate.affected_class;
            const auto truth = image_truth(ds.val);
            rec.metrics.push_back(score_list({rank_images(report, y), "trove"}, truth));
            rec.metrics.push_back(score_list({rank_images(ablation, y), "sbs-only"}, truth));
            rec.metrics.push_back(score_list(baseline_confidence(val), truth));
            rec.metrics.push_back(score_list(baseline_random(val.images(), derive_seed(cell.seed, 0x7a9d0)), truth));
            write_text(dir / "metrics.csv", metrics_csv(rec));
            rec.artifacts["metrics"] = "metrics.csv";

            stage = "mitigation";
            PromptOptions popt = opt.prompts;
            popt.seed = cell.seed;
            const PromptSet prompts = learn_prompts(model, val, report, opt.mitigation_top_k, popt);
            save_prompts(prompts, prompts_path_for(dir / "model.bin"));
            rec.mitigation = evaluate_mitigation(model, prompts, report.clusters, test, ds.test, y);
            write_text(dir / "mitigation.csv", mitigation_csv(rec));
            rec.artifacts["prompts"] = prompts_path_for(fs::path("model.bin")).string();
            rec.artifacts["mitigation"] = "mitigation.csv";
        }
    } catch (const std::exception& e) {
        rec.status = "failed";
        rec.failed_stage = stage;
        rec.error = e.what();
    }
    rec.hashes["code_version"] = TROVE_VERSION;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_atomic(dir / "record.json", to_json(rec).dump(2) + "\n");
    fs::remove(dir / "INCOMPLETE");
    return rec;
}

// ---------------------------------------------------------------- sweep

int sweep_workers() {
    if (const char* env = std::getenv("TROVE_WORKERS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<RunRecord> load_records(const fs::path& root) {
    std::vector<RunRecord> out;
    if (!fs::exists(root)) return out;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "record.json")) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
        std::ifstream is(d / "record.json");
        out.push_back(run_record_from_json(json::parse(is)));
    }
    return out;
}

namespace {

struct Mean {
    int n = 0;
    double p10 = 0, p25 = 0, p100 = 0, rp = 0;
};

std::string summary_csv(const std::vector<RunRecord>& records) {
    // (group, value, method) -> running sums, in a deterministic order.
    std::map<std::tuple<std::string, std::string, std::string>, Mean> table;
    auto fmt_fraction = [](double f) { return fixed(f, 2); };
    for (const auto& r : records) {
        if (r.status != "complete") continue;
        const std::pair<std::string, std::string> groups[] = {
            {"all", "all"},
            {"kind", std::string(feature_kind_name(r.cell.kind))},
            {"seq_len", std::to_string(r.cell.seq_len)},
            {"span_fraction", fmt_fraction(r.cell.span_fraction)},
            {"cramers_v", fixed(r.cell.cramers_v, 2)}};
        for (const auto& m : r.metrics)
            for (const auto& [g, v] : groups) {
                auto& acc = table[{g, v, m.method}];
                ++acc.n;
                acc.p10 += m.p10;
                acc.p25 += m.p25;
                acc.p100 += m.p100;
                acc.rp += m.r_precision;
            }
    }
    std::ostringstream os;
    os << "group,value,method,configs,P@10,P@25,P@100,R-Prec\n";
    for (const auto& [key, m] : table) {
        const auto& [g, v, method] = key;
        os << g << ',' << v << ',' << method << ',' << m.n << ',' << fixed(m.p10 / m.n) << ',' << fixed(m.p25 / m.n)
           << ',' << fixed(m.p100 / m.n) << ',' << fixed(m.rp / m.n) << '\n';
    }
    return os.str();
}

std::string mitigation_summary_csv(const std::vector<RunRecord>& records) {
    std::ostringstream os;
    os << "config_id,prompts,overall_count,overall_base,overall_mitigated,label_count,label_base,label_mitigated,"
          "feature_count,feature_base,feature_mitigated,feature_gain_points,overall_change_points\n";
    for (const auto& r : records) {
        if (r.status != "complete" || !r.mitigation) continue;
        const auto& t = *r.mitigation;
        os << r.config_id << ',' << t.prompts << ',' << t.overall.count << ',' << fixed(t.overall.base) << ','
           << fixed(t.overall.mitigated) << ',' << t.label.count << ',' << fixed(t.label.base) << ','
           << fixed(t.label.mitigated) << ',' << t.label_with_feature.count << ',' << fixed(t.label_with_feature.base)
           << ',' << fixed(t.label_with_feature.mitigated) << ','
           << fixed(100.0 * (t.label_with_feature.mitigated - t.label_with_feature.base), 3) << ','
           << fixed(100.0 * (t.overall.mitigated - t.overall.base), 3) << '\n';
    }
    return os.str();
}

std::string gate_log(const std::vector<RunRecord>& records) {
    std::ostringstream os;
    for (const auto& r : records) {
        os << r.config_id << " status=" << r.status << " task_gap=" << fixed(r.task_gate.gap, 3)
           << " affected=" << label_or_none(r.model_gate.affected_class)
           << " image_gap=" << fixed(r.model_gate.image_gap, 3) << " sequence_gap=" << fixed(r.model_gate.sequence_gap, 3)
           << " pass=" << (r.model_gate.pass ? "yes" : "no");
        if (r.status == "failed") os << " stage=" << r.failed_stage << " error=\"" << r.error << '"';
        os << '\n';
    }
    return os.str();
}

}  // namespace

std::vector<RunRecord> aggregate(const fs::path& root) {
    auto records = load_records(root);
    fs::create_directories(root);
    write_atomic(root / "summary.csv", summary_csv(records));
    write_atomic(root / "mitigation_summary.csv", mitigation_summary_csv(records));
    write_atomic(root / "gates.txt", gate_log(records));
    return records;
}

SweepSummary sweep(const SweepGrid& grid, const fs::path& root, int workers) {
    fs::create_directories(root);
    write_atomic(root / "grid.json", to_json(grid).dump(2) + "\n");
    const auto cells = grid.cells();
    SweepSummary summary;
    summary.cells = static_cast<int>(cells.size());

    std::vector<SweepCell> todo;
    for (const auto& c : cells) {
        const fs::path rec = root / config_id(c) / "record.json";
        bool done = false;
        if (std::ifstream is(rec); is) done = json::parse(is).value("status", "") != "failed";
        if (done)
            ++summary.resumed;
        else
            todo.push_back(c);
    }

    if (workers <= 0) workers = sweep_workers();
    workers = std::max(1, std::min<int>(workers, static_cast<int>(todo.size())));
    TaskGateCache gates(root / "_gate_task");
    std::atomic<std::size_t> next{0};
    std::mutex log_mu;
    auto worker = [&] {
        if (workers > 1) omp_set_num_threads(1);
        for (std::size_t i = next++; i < todo.size(); i = next++) {
            const auto rec = run_config(todo[i], grid.options, root, gates);
            std::lock_guard lock(log_mu);
            std::cerr << "[" << rec.config_id << "] " << rec.status
                      << (rec.status == "failed" ? " at " + rec.failed_stage + ": " + rec.error : std::string())
                      << " (" << fixed(rec.wall_seconds, 1) << " s)\n";
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    if (!todo.empty()) worker();
    for (auto& t : pool) t.join();

    for (const auto& r : aggregate(root)) {
        if (r.status == "complete") ++summary.complete;
        else if (r.status == "excluded") ++summary.excluded;
        else if (r.status == "failed") ++summary.failed;
    }
    return summary;
}

}  // namespace trove
