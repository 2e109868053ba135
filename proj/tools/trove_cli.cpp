#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "trove/dataset_io.hpp"
#include "trove/evalkit.hpp"
#include "trove/harness.hpp"
#include "trove/mitigation.hpp"
#include "trove/model.hpp"
#include "trove/tensor_io.hpp"
#include "trove/trove.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trove;

namespace {

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw Error(what + " not found: " + p.string());
}

void require_dir(const fs::path& p, const std::string& what) {
    if (!fs::is_directory(p)) throw Error(what + " not found: " + p.string());
}

json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw Error("cannot read " + p.string());
    return json::parse(is);
}

// Runs `body` writing into `out`; a failure after the directory exists leaves an INCOMPLETE marker.
int guarded(const fs::path& out, const std::function<void()>& body) {
    try {
        body();
        if (!out.empty() && fs::exists(out / "INCOMPLETE")) fs::remove(out / "INCOMPLETE");
        return 0;
    } catch (const std::exception& e) {
        if (!out.empty() && fs::is_directory(out)) std::ofstream(out / "INCOMPLETE") << e.what() << '\n';
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

FeatureBank bank_for(const TemporalModel& m, const Dataset& ds, const Split& split) {
    if (m.config().seq_len != ds.config.seq_len)
        throw Error("model expects sequences of " + std::to_string(m.config().seq_len) + " frames, dataset has " +
                    std::to_string(ds.config.seq_len));
    return build_feature_bank(m.featurizer(), ds, split);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Static feature bias discovery for temporal sequence classifiers"};
    app.require_subcommand(1);
    int rc = 0;

    // generate
    auto* gen = app.add_subcommand("generate", "Generate a synthetic moving-circle dataset");
    std::string g_kind = "background", g_config, g_out;
    int g_len = 5, g_span = 2, g_train = 2000, g_val = 1000, g_test = 1000;
    double g_v = 0.95, g_q = 0.98;
    std::uint64_t g_seed = 0;
    bool g_no_tensors = false;
    gen->add_option("--config", g_config, "JSON dataset config; flags given explicitly override it");
    gen->add_option("--kind", g_kind, "none | background | object | attribute");
    gen->add_option("--seq-len", g_len, "Frames per sequence");
    gen->add_option("--cramers-v", g_v, "Target Cramer's V between the feature and the bias class");
    gen->add_option("--span", g_span, "Consecutive frames carrying the feature");
    gen->add_option("--q-south", g_q, "Feature prevalence in the bias class");
    gen->add_option("--train", g_train);
    gen->add_option("--val", g_val);
    gen->add_option("--test", g_test);
    gen->add_option("--seed", g_seed);
    gen->add_flag("--no-tensors", g_no_tensors, "Store layouts only; pixels are regenerated on load");
    gen->add_option("--out", g_out, "Output directory")->required();
    gen->callback([&] {
        rc = guarded(g_out, [&] {
            DatasetConfig c;
            if (!g_config.empty()) c = dataset_config_from_json(read_json(g_config));
            auto set = [&](const char* flag, auto& dst, auto v) {
                if (g_config.empty() || gen->count(flag)) dst = v;
            };
            const auto kind = parse_feature_kind(g_kind);
            if (!kind) throw Error("unknown feature kind " + g_kind);
            set("--kind", c.feature.kind, *kind);
            set("--seq-len", c.seq_len, g_len);
            set("--cramers-v", c.target_cramers_v, g_v);
            set("--span", c.feature_span, g_span);
            set("--q-south", c.q_south, g_q);
            set("--train", c.train_count, g_train);
            set("--val", c.val_count, g_val);
            set("--test", c.test_count, g_test);
            set("--seed", c.seed, g_seed);
            const Dataset ds = generate_dataset(c);
            fs::create_directories(g_out);
            save_dataset(ds, g_out, !g_no_tensors);
            std::cout << "generated " << ds.train.size() << "/" << ds.val.size() << "/" << ds.test.size()
                      << " sequences, realized Cramer's V " << ds.realized_cramers_v << " -> " << g_out << '\n';
        });
    });

    // train
    auto* tr = app.add_subcommand("train", "Train a temporal (or single-frame control) model");
    std::string t_dataset, t_out, t_config;
    bool t_control = false;
    TrainConfig t_cfg;
    tr->add_option("--dataset", t_dataset)->required();
    tr->add_option("--out", t_out, "Model checkpoint file")->required();
    tr->add_option("--config", t_config, "JSON training config");
    tr->add_option("--epochs", t_cfg.max_epochs);
    tr->add_option("--lr", t_cfg.learning_rate);
    tr->add_option("--batch-size", t_cfg.batch_size);
    tr->add_option("--patience", t_cfg.patience);
    tr->add_option("--min-epochs", t_cfg.min_epochs, "Epochs before early stopping may trigger");
    tr->add_option("--seed", t_cfg.seed);
    tr->add_flag("--control", t_control, "Single middle-frame model");
    tr->callback([&] {
        rc = guarded({}, [&] {
            require_dir(t_dataset, "dataset");
            TrainConfig cfg = t_cfg;
            if (!t_config.empty()) {
                const TrainConfig file = train_config_from_json(read_json(t_config));
                if (!tr->count("--epochs")) cfg.max_epochs = file.max_epochs;
                if (!tr->count("--lr")) cfg.learning_rate = file.learning_rate;
                if (!tr->count("--batch-size")) cfg.batch_size = file.batch_size;
                if (!tr->count("--patience")) cfg.patience = file.patience;
                if (!tr->count("--min-epochs")) cfg.min_epochs = file.min_epochs;
                if (!tr->count("--seed")) cfg.seed = file.seed;
                cfg.momentum = file.momentum;
            }
            cfg.validate();
            const Dataset ds = load_dataset(t_dataset);
            TrainLog log;
            const TemporalModel m = train(ds, cfg, !t_control, &log);
            if (fs::path(t_out).has_parent_path()) fs::create_directories(fs::path(t_out).parent_path());
            m.save(t_out);
            auto log_file = fs::path(t_out);
            log_file.replace_extension(".log.json");
            std::ofstream(log_file) << json{{"train", to_json(cfg)},
                                            {"train_loss", log.train_loss},
                                            {"val_accuracy", log.val_accuracy},
                                            {"best_epoch", log.best_epoch},
                                            {"best_val_accuracy", log.best_val_accuracy}}
                                           .dump(2)
                                    << '\n';
            std::cout << "best validation accuracy " << log.best_val_accuracy << " at epoch " << log.best_epoch << " -> "
                      << t_out << '\n';
        });
    });

    // discover
    auto* disc = app.add_subcommand("discover", "Discover static feature biases on the validation split");
    std::string d_dataset, d_model, d_out, d_ablation;
    std::uint64_t d_seed = 0;
    std::vector<int> d_k;
    int d_restarts = DiscoverOptions{}.kmeans_restarts;
    disc->add_option("--dataset", d_dataset)->required();
    disc->add_option("--model", d_model)->required();
    disc->add_option("--out", d_out)->required();
    disc->add_option("--ablation", d_ablation, "sbs-only ranks by the static bias score alone")
        ->check(CLI::IsMember({"sbs-only"}));
    disc->add_option("--seed", d_seed);
    disc->add_option("--k", d_k, "Candidate cluster counts");
    disc->add_option("--restarts", d_restarts, "k-means++ seedings per k")->check(CLI::PositiveNumber);
    disc->callback([&] {
        // Inputs are validated before anything is written.
        try {
            require_dir(d_dataset, "dataset");
            require_file(d_model, "model");
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            rc = 1;
            return;
        }
        rc = guarded(d_out, [&] {
            const TemporalModel model = TemporalModel::load(d_model);
            const Dataset ds = load_dataset(d_dataset);
            const SplitAnalysis val = analyze_split(model, bank_for(model, ds, ds.val));
            DiscoverOptions opt;
            opt.seed = d_seed;
            if (!d_k.empty()) opt.k_range = d_k;
            opt.kmeans_restarts = d_restarts;
            opt.mode = d_ablation == "sbs-only" ? RankingMode::SbsOnly : RankingMode::Full;
            BiasReport report = discover_from_analysis(val, val.static_embeddings.cast<double>(), opt);
            report.provenance["config_hash"] = config_hash(ds.config);
            report.provenance["model_hash"] = file_hash(d_model);
            report.provenance["model_path"] = fs::absolute(d_model).string();
            report.provenance["dataset_path"] = fs::absolute(d_dataset).string();
            fs::create_directories(d_out);
            std::ofstream(fs::path(d_out) / "INCOMPLETE") << "discovery in progress\n";
            save_report(report, val, d_out);
            std::size_t kept = 0;
            for (const auto& l : report.per_class) kept += l.size();
            std::cout << "k=" << report.clusters.k << " T=" << report.temperature.value << " candidates=" << kept
                      << " (" << ranking_mode_name(report.mode) << ") -> " << d_out << '\n';
        });
    });

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Gates, Precision@K metrics and optional mitigation table");
    std::string e_dataset, e_model, e_report, e_out, e_class, e_prompts;
    bool e_mitigation = false, e_task_gate = false;
    std::uint64_t e_seed = 0;
    ev->add_option("--dataset", e_dataset)->required();
    ev->add_option("--model", e_model)->required();
    ev->add_option("--report", e_report)->required();
    ev->add_option("--out", e_out)->required();
    ev->add_option("--class", e_class, "Affected class; defaults to the one chosen by the model gate");
    ev->add_option("--seed", e_seed, "Seed of the random baseline and the task gate");
    ev->add_flag("--task-gate", e_task_gate, "Also train the feature-free temporal/control pair");
    ev->add_flag("--with-mitigation", e_mitigation, "Evaluate prompts stored beside the model");
    ev->add_option("--prompts", e_prompts, "Prompt file (default: beside the model)");
    ev->callback([&] {
        try {
            require_dir(e_dataset, "dataset");
            require_file(e_model, "model");
            require_file(fs::path(e_report) / "report.json", "report");
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            rc = 1;
            return;
        }
        rc = guarded(e_out, [&] {
            const TemporalModel model = TemporalModel::load(e_model);
            const Dataset ds = load_dataset(e_dataset);
            const BiasReport report = load_report(e_report);
            const SplitAnalysis val = analyze_split(model, bank_for(model, ds, ds.val));
            const SplitAnalysis test = analyze_split(model, bank_for(model, ds, ds.test));
            RunRecord rec;
            rec.config_id = fs::path(e_dataset).filename().string();
            rec.cell.kind = ds.config.feature.kind;
            rec.cell.seq_len = ds.config.seq_len;
            rec.cell.cramers_v = ds.config.target_cramers_v;
            rec.cell.feature_span = ds.config.feature_span;
            rec.cell.seed = ds.config.seed;
            if (e_task_gate) {
                TrainConfig tc;
                tc.seed = e_seed;
                rec.task_gate = gate_task(ds.config, tc);
            } else {
                rec.task_gate.gap = std::numeric_limits<double>::quiet_NaN();
            }
            rec.model_gate = gate_model(test, ds.test, rec.task_gate.gap);
            int y = rec.model_gate.affected_class;
            if (!e_class.empty()) {
                const auto l = parse_label(e_class);
                if (!l) throw Error("unknown class " + e_class);
                y = index_of(*l);
            }
            if (y < 0) throw Error("no affected class; pass --class");
            fs::create_directories(e_out);
            const auto truth = image_truth(ds.val);
            if (std::none_of(truth.begin(), truth.end(), [](auto f) { return f != 0; }))
                throw Error("the validation split has no feature-bearing images");
            const BiasReport full = with_ranking(report, RankingMode::Full);
            const BiasReport ablation = with_ranking(report, RankingMode::SbsOnly);
            rec.metrics.push_back(score_list({rank_images(full, y), "trove"}, truth));
            rec.metrics.push_back(score_list({rank_images(ablation, y), "sbs-only"}, truth));
            rec.metrics.push_back(score_list(baseline_confidence(val), truth));
            rec.metrics.push_back(score_list(baseline_random(val.images(), derive_seed(e_seed, 0x7a9d0)), truth));
            std::ofstream(fs::path(e_out) / "metrics.csv") << metrics_csv(rec);
            std::cout << metrics_csv(rec);
            std::cout << "gate: affected=" << (rec.model_gate.affected_class < 0 ? "none" : std::string(label_name(label_from_index(rec.model_gate.affected_class))))
                      << " image_gap=" << rec.model_gate.image_gap << " sequence_gap=" << rec.model_gate.sequence_gap
                      << " task_gap=" << rec.task_gate.gap << " pass=" << (rec.model_gate.pass ? "yes" : "no") << '\n';
            if (e_mitigation) {
                const fs::path pfile = e_prompts.empty() ? prompts_path_for(e_model) : fs::path(e_prompts);
                require_file(pfile, "prompts");
                const PromptSet prompts = load_prompts(pfile);
                const auto t = evaluate_mitigation(model, prompts, report.clusters, test, ds.test, y);
                std::ofstream os(fs::path(e_out) / "mitigation.csv");
                os << "subset,count,base,mitigated\n";
                for (auto [name, s] : {std::pair{"overall", &t.overall}, std::pair{"label", &t.label},
                                       std::pair{"label_with_feature", &t.label_with_feature}, std::pair{"all", &t.all}}) {
                    os << name << ',' << s->count << ',' << s->base << ',' << s->mitigated << '\n';
                    std::cout << "mitigation " << name << ": " << s->count << " sequences, " << s->base << " -> "
                              << s->mitigated << '\n';
                }
            }
        });
    });

    // mitigate
    auto* mit = app.add_subcommand("mitigate", "Learn per-cluster prompts for the top-ranked clusters");
    std::string m_report, m_dataset, m_model, m_out;
    int m_top_k = 3;
    PromptOptions m_opt;
    mit->add_option("--report", m_report)->required();
    mit->add_option("--top-k", m_top_k)->check(CLI::PositiveNumber);
    mit->add_option("--dataset", m_dataset, "Defaults to the dataset recorded in the report");
    mit->add_option("--model", m_model, "Defaults to the model recorded in the report");
    mit->add_option("--out", m_out, "Prompt file (default: beside the model)");
    mit->add_option("--epochs", m_opt.epochs);
    mit->add_option("--lr", m_opt.learning_rate);
    mit->add_option("--seed", m_opt.seed);
    mit->callback([&] {
        rc = guarded({}, [&] {
            require_file(fs::path(m_report) / "report.json", "report");
            const json meta = read_json(fs::path(m_report) / "report.json");
            const auto& prov = meta.at("provenance");
            const auto recorded = [&](const char* key) {
                const fs::path p = prov.value(key, "");
                return p.empty() || p.is_absolute() ? p.string() : (fs::path(m_report) / p).lexically_normal().string();
            };
            if (m_model.empty()) m_model = recorded("model_path");
            if (m_dataset.empty()) m_dataset = recorded("dataset_path");
            require_file(m_model, "model");
            require_dir(m_dataset, "dataset");
            const std::string before = file_hash(m_model);
            const TemporalModel model = TemporalModel::load(m_model);
            const Dataset ds = load_dataset(m_dataset);
            const SplitAnalysis val = analyze_split(model, bank_for(model, ds, ds.val));
            const BiasReport report = load_report(m_report);
            const PromptSet prompts = learn_prompts(model, val, report, m_top_k, m_opt);
            const fs::path out = m_out.empty() ? prompts_path_for(m_model) : fs::path(m_out);
            save_prompts(prompts, out);
            if (file_hash(m_model) != before) throw Error("base model changed during mitigation");
            for (const auto& p : prompts.prompts)
                std::cout << "cluster " << p.cluster << ": " << p.member_sequences << " members, accuracy "
                          << p.base_accuracy << " -> " << p.fit_accuracy << '\n';
            for (const auto& [c, why] : prompts.skipped) std::cout << "cluster " << c << " skipped: " << why << '\n';
            std::cout << "prompts -> " << out.string() << '\n';
        });
    });

    // sweep
    auto* sw = app.add_subcommand("sweep", "Run the configuration grid");
    std::string s_grid = "default", s_out;
    int s_workers = 0;
    sw->add_option("--grid", s_grid, "'default' or a JSON grid file");
    sw->add_option("--out", s_out)->required();
    sw->add_option("--workers", s_workers, "Overrides TROVE_WORKERS");
    sw->callback([&] {
        rc = guarded({}, [&] {
            const SweepGrid grid = load_grid(s_grid);
            const auto s = sweep(grid, s_out, s_workers);
            std::cout << s.cells << " cells: " << s.complete << " complete, " << s.excluded << " excluded by gates, "
                      << s.failed << " failed, " << s.resumed << " resumed -> " << s_out << '\n';
        });
    });

    // report
    auto* rep = app.add_subcommand("report", "Aggregate a runs directory");
    std::string r_dir;
    rep->add_option("runs", r_dir)->required();
    rep->callback([&] {
        rc = guarded({}, [&] {
            require_dir(r_dir, "runs directory");
            const auto records = aggregate(r_dir);
            std::ifstream is(fs::path(r_dir) / "summary.csv");
            std::cout << is.rdbuf();
            std::cout << records.size() << " records -> " << (fs::path(r_dir) / "summary.csv").string() << '\n';
        });
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    return rc;
}
