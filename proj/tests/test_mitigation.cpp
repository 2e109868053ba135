#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "trove/mitigation.hpp"
#include "trove/syndata.hpp"

using namespace trove;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    Dataset ds;
    TemporalModel model;
    SplitAnalysis analysis;
    ClusterModel clusters;

    Fixture() {
        DatasetConfig dc;
        dc.seq_len = 2;
        dc.feature_span = 1;
        dc.train_count = 200;
        dc.val_count = 120;
        dc.test_count = 40;
        dc.target_cramers_v = 0.8;
        ds = generate_dataset(dc);
        ModelConfig mc;
        mc.seq_len = 2;
        mc.d_enc = 32;
        mc.head_hidden = 16;
        mc.head_out = 8;
        mc.seq_hidden1 = 16;
        mc.seq_hidden2 = 12;
        mc.embed_dim = 8;
        mc.init_seed = 3;
        model = TemporalModel(mc);
        analysis = analyze_split(model, build_feature_bank(model.featurizer(), ds, ds.val));
        clusters = spherical_kmeans(analysis.static_embeddings.cast<double>(), 3, 1);
    }

    int largest_cluster() const {
        std::vector<int> n(clusters.k, 0);
        for (int c : clusters.assignment) ++n[c];
        return static_cast<int>(std::max_element(n.begin(), n.end()) - n.begin());
    }
};

std::string file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("zero context leaves class embeddings unchanged and unit norm") {
    Eigen::MatrixXf ce(3, kNumClasses);
    ce << 1, 0, 0, 0.6, 0, 1, 0, 0.8, 0, 0, 1, 0;
    const auto same = prompted_class_embeddings(ce, Eigen::MatrixXf::Zero(3, kNumClasses));
    CHECK((same - ce).norm() < 1e-6f);
    Eigen::MatrixXf ctx = Eigen::MatrixXf::Constant(3, kNumClasses, 0.7f);
    const auto adj = prompted_class_embeddings(ce, ctx);
    for (int c = 0; c < kNumClasses; ++c) CHECK(adj.col(c).norm() == doctest::Approx(1.0f));
}

TEST_CASE("member sequences are those with any frame in the cluster") {
    const std::vector<int> ic = {0, 1, 1, 1, 2, 0};
    CHECK(member_sequences(ic, 2, 3, 0) == std::vector<std::size_t>{0, 2});
    CHECK(member_sequences(ic, 2, 3, 1) == std::vector<std::size_t>{0, 1});
    CHECK(member_sequences(ic, 2, 3, 5).empty());
}

TEST_CASE("prompt gradient matches finite differences") {
    Fixture f;
    const Eigen::MatrixXf emb = f.analysis.sequence_embeddings.leftCols(12);
    std::vector<int> labels(f.analysis.labels.begin(), f.analysis.labels.begin() + 12);
    std::vector<double> weights(12);
    for (int i = 0; i < 12; ++i) weights[i] = 0.5 + 0.1 * i;
    Rng rng(2);
    std::normal_distribution<float> g(0.f, 0.2f);
    Eigen::MatrixXf ctx(f.model.config().embed_dim, kNumClasses);
    for (Eigen::Index i = 0; i < ctx.size(); ++i) ctx.data()[i] = g(rng);
    Eigen::MatrixXf grad;
    prompt_loss_and_gradient(f.model, emb, labels, weights, ctx, &grad);
    for (Eigen::Index i = 0; i < ctx.size(); ++i) {
        Eigen::MatrixXf up = ctx, down = ctx;
        up.data()[i] += 1e-2f;
        down.data()[i] -= 1e-2f;
        const double fd = (prompt_loss_and_gradient(f.model, emb, labels, weights, up, nullptr) -
                           prompt_loss_and_gradient(f.model, emb, labels, weights, down, nullptr)) /
                          2e-2;
        CHECK(grad.data()[i] == doctest::Approx(fd).epsilon(0.05).scale(1e-2));
    }
}

TEST_CASE("prompt fitting never ends below the zero-context accuracy and leaves the model untouched") {
    Fixture f;
    const auto before = fs::temp_directory_path() / "trove_test_frozen_a.bin";
    const auto after = fs::temp_directory_path() / "trove_test_frozen_b.bin";
    f.model.save(before);
    const int c = f.largest_cluster();
    const auto fit = learn_cluster_prompt(f.model, f.analysis, f.clusters.assignment, c, 0.9, PromptOptions{});
    REQUIRE(fit.prompt);
    CHECK(fit.prompt->fit_accuracy >= fit.prompt->base_accuracy);
    CHECK(fit.prompt->member_sequences >= 10);
    CHECK(fit.prompt->context.rows() == f.model.config().embed_dim);
    f.model.save(after);
    CHECK(file_bytes(before) == file_bytes(after));
    fs::remove(before);
    fs::remove(after);
    fs::remove(fs::path(before).replace_extension(".json"));
    fs::remove(fs::path(after).replace_extension(".json"));
}

TEST_CASE("clusters with too few member sequences are skipped with a reason") {
    Fixture f;
    PromptOptions opt;
    opt.min_members = 100000;
    const auto fit = learn_cluster_prompt(f.model, f.analysis, f.clusters.assignment, 0, 1.0, opt);
    CHECK_FALSE(fit.prompt);
    CHECK(fit.skip_reason.find("fewer than 100000") != std::string::npos);
}

TEST_CASE("routing keeps base logits bit-identical outside prompted clusters") {
    Fixture f;
    const auto empty = route_predict(f.model, PromptSet{}, f.clusters, f.analysis);
    CHECK(empty.logits == f.analysis.dynamic_logits);

    PromptSet ps;
    ClusterPrompt p;
    p.cluster = f.largest_cluster();
    p.trove_score = 0.5;
    p.context = Eigen::MatrixXf::Zero(f.model.config().embed_dim, kNumClasses);
    ps.prompts.push_back(p);
    const auto routed = route_predict(f.model, ps, f.clusters, f.analysis);
    int prompted = 0;
    for (std::size_t i = 0; i < f.analysis.sequences(); ++i) {
        const auto col = static_cast<Eigen::Index>(i);
        if (routed.prompt[i] < 0) {
            CHECK(routed.logits.col(col) == f.analysis.dynamic_logits.col(col));
        } else {
            ++prompted;
            CHECK((routed.logits.col(col) - f.analysis.dynamic_logits.col(col)).norm() < 1e-4f);
        }
    }
    CHECK(prompted > 0);
}

TEST_CASE("the highest-scoring prompt wins a contested sequence") {
    Fixture f;
    PromptSet ps;
    for (int c = 0; c < f.clusters.k; ++c) {
        ClusterPrompt p;
        p.cluster = c;
        p.trove_score = c == 1 ? 2.0 : 1.0;
        p.context = Eigen::MatrixXf::Zero(f.model.config().embed_dim, kNumClasses);
        ps.prompts.push_back(p);
    }
    const auto routed = route_predict(f.model, ps, f.clusters, f.analysis);
    const auto ic = f.clusters.assign(f.analysis.static_embeddings.cast<double>());
    for (std::size_t i = 0; i < f.analysis.sequences(); ++i) {
        const bool has1 = ic[2 * i] == 1 || ic[2 * i + 1] == 1;
        if (has1) CHECK(routed.prompt[i] == 1);
        else CHECK(routed.prompt[i] == std::min(ic[2 * i], ic[2 * i + 1]));
    }
}

TEST_CASE("mitigation table and prompt files") {
    Fixture f;
    PromptSet ps;
    ClusterPrompt p;
    p.cluster = f.largest_cluster();
    p.trove_score = 0.7;
    p.context = Eigen::MatrixXf::Constant(f.model.config().embed_dim, kNumClasses, 0.01f);
    ps.prompts.push_back(p);
    ps.skipped.emplace_back(2, "too small");
    const auto t = evaluate_mitigation(f.model, ps, f.clusters, f.analysis, f.ds.val, 0);
    CHECK(t.all.count == static_cast<int>(f.ds.val.size()));
    CHECK(t.overall.count > 0);
    CHECK(t.label.count <= t.overall.count);
    CHECK(t.label_with_feature.count <= t.label.count);
    CHECK(t.prompts == 1);

    const auto file = fs::temp_directory_path() / "trove_test_prompts.bin";
    save_prompts(ps, file);
    const auto back = load_prompts(file);
    REQUIRE(back.prompts.size() == 1);
    CHECK(back.prompts[0].context == p.context);
    CHECK(back.prompts[0].cluster == p.cluster);
    CHECK(back.skipped == ps.skipped);
    CHECK(prompts_path_for("a/model.bin") == fs::path("a/model.prompts.bin"));
    fs::remove(file);
    fs::remove(fs::path(file).replace_extension(".json"));
}
