#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sys/wait.h>
#include <sstream>

#include "trove/harness.hpp"

using namespace trove;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("trove_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

RunOptions tiny_options() {
    RunOptions o;
    o.train_count = 2000;
    o.val_count = 300;
    o.test_count = 300;
    o.train.max_epochs = 40;
    o.k_range = {4, 6};
    o.prompts.epochs = 3;
    return o;
}

SweepCell tiny_cell() {
    SweepCell c;
    c.kind = FeatureKind::Background;
    c.seq_len = 2;
    c.cramers_v = 0.95;
    c.feature_span = 1;
    c.span_fraction = 0.4;
    return c;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(TROVE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("config ids and spans") {
    CHECK(config_id(SweepCell{FeatureKind::Object, 5, 0.95, 2, 0.4, 0}) == "object-n05-v095-s02-seed0");
    CHECK(config_id(SweepCell{FeatureKind::Attribute, 10, 0.8, 10, 1.0, 3}) == "attribute-n10-v080-s10-seed3");
    CHECK(span_for(0.4, 2) == 1);
    CHECK(span_for(0.4, 3) == 1);
    CHECK(span_for(0.4, 5) == 2);
    CHECK(span_for(0.4, 10) == 4);
    CHECK(span_for(0.01, 5) == 1);
    CHECK(span_for(1.0, 10) == 10);
}

TEST_CASE("the default grid has 72 distinct cells") {
    const auto cells = SweepGrid::default_grid().cells();
    CHECK(cells.size() == 72);
    std::set<std::string> ids;
    for (const auto& c : cells) ids.insert(config_id(c));
    CHECK(ids.size() == 72);
}

TEST_CASE("coinciding spans are emitted once") {
    SweepGrid g = SweepGrid::default_grid();
    g.kinds = {FeatureKind::Background};
    g.seq_lens = {2};
    g.cramers_v = {0.9};
    g.span_fractions = {0.2, 0.4, 1.0};
    CHECK(g.cells().size() == 2);
}

TEST_CASE("grids and options round-trip through JSON") {
    SweepGrid g = SweepGrid::default_grid();
    g.seeds = {0, 1, 2};
    g.options = tiny_options();
    const auto back = sweep_grid_from_json(to_json(g));
    CHECK(to_json(back) == to_json(g));
    CHECK(back.cells().size() == 216);
    const auto partial = sweep_grid_from_json(nlohmann::json{{"kinds", {"object"}}, {"seq_lens", {3}}});
    CHECK(partial.cells().size() == 6);
    CHECK_THROWS_AS(sweep_grid_from_json(nlohmann::json{{"kinds", {"texture"}}}), Error);
    CHECK_THROWS_AS(load_grid("/nonexistent/grid.json"), Error);
}

TEST_CASE("run records round-trip with undefined gaps") {
    RunRecord r;
    r.config_id = "x";
    r.status = "excluded";
    r.model_gate.per_class[3].sequence_gap = std::numeric_limits<double>::quiet_NaN();
    r.metrics.push_back({"trove", 1.0, 0.8, 0.5, 0.9, 40, {"P@100"}});
    const auto back = run_record_from_json(to_json(r));
    CHECK(std::isnan(back.model_gate.per_class[3].sequence_gap));
    CHECK(back.metrics[0].truncated == std::vector<std::string>{"P@100"});
    CHECK(to_json(back).dump() == to_json(r).dump());
    CHECK(metrics_csv(back).rfind("config_id,method,P@10,P@25,P@100,R-Prec,list_length,truncated\n", 0) == 0);
}

TEST_CASE("run_config is deterministic and a sweep resumes finished cells") {
    const auto root = fresh_dir("harness_runs");
    const auto opt = tiny_options();
    TaskGateCache gates(root / "_gate_task");
    const auto rec = run_config(tiny_cell(), opt, root, gates);
    CHECK(rec.status != "failed");
    const auto dir = root / rec.config_id;
    CHECK(fs::exists(dir / "record.json"));
    CHECK_FALSE(fs::exists(dir / "INCOMPLETE"));
    CHECK(fs::exists(dir / "gate.txt"));
    CHECK(rec.task_gate.pass);
    const std::string metrics = slurp(dir / "metrics.csv");

    const auto root2 = fresh_dir("harness_runs2");
    TaskGateCache gates2(root2 / "_gate_task");
    run_config(tiny_cell(), opt, root2, gates2);
    if (rec.status == "complete") {
        CHECK_FALSE(metrics.empty());
        CHECK(slurp(root2 / rec.config_id / "metrics.csv") == metrics);
        // The report locates its model and dataset relative to itself.
        CHECK(run_cli("mitigate --report " + (dir / "report").string() + " --top-k 1 --epochs 1 --out " +
                      (root / "cli_prompts.bin").string()) == 0);
        CHECK(fs::exists(root / "cli_prompts.bin"));
    }

    SweepGrid g;
    g.kinds = {FeatureKind::Background};
    g.seq_lens = {2};
    g.cramers_v = {0.95};
    g.span_fractions = {0.4};
    g.seeds = {0};
    g.options = opt;
    const auto summary = sweep(g, root, 1);
    CHECK(summary.cells == 1);
    CHECK(summary.resumed == 1);
    CHECK(fs::exists(root / "summary.csv"));
    CHECK(fs::exists(root / "gates.txt"));
    CHECK(load_records(root).size() == 1);

    fs::remove_all(root);
    fs::remove_all(root2);
}

TEST_CASE("an empty grid produces empty summaries") {
    const auto root = fresh_dir("harness_empty");
    SweepGrid g = SweepGrid::default_grid();
    g.seeds.clear();
    const auto s = sweep(g, root, 1);
    CHECK(s.cells == 0);
    CHECK(fs::exists(root / "summary.csv"));
    CHECK(aggregate(root).empty());
    fs::remove_all(root);
}

TEST_CASE("cli: discover with a missing model fails without writing a report") {
    const auto root = fresh_dir("cli");
    REQUIRE(run_cli("generate --kind background --seq-len 2 --span 1 --train 40 --val 20 --test 20 --no-tensors --out " +
                    (root / "ds").string()) == 0);
    CHECK(fs::exists(root / "ds" / "metadata.json"));
    CHECK(run_cli("discover --dataset " + (root / "ds").string() + " --model " + (root / "nope.bin").string() +
                  " --out " + (root / "report").string()) != 0);
    CHECK_FALSE(fs::exists(root / "report"));
    CHECK(run_cli("generate --kind texture --out " + (root / "bad").string()) != 0);
    fs::remove_all(root);
}
