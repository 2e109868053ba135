#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "trove/model.hpp"
#include "trove/syndata.hpp"

using namespace trove;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(int n, bool temporal = true) {
    ModelConfig c;
    c.seq_len = n;
    c.temporal = temporal;
    c.d_enc = 24;
    c.head_hidden = 12;
    c.head_out = 8;
    c.seq_hidden1 = 12;
    c.seq_hidden2 = 10;
    c.embed_dim = 6;
    c.init_seed = 5;
    return c;
}

std::vector<ImageGrid> moving_frames(int n, int start_col) {
    std::vector<ImageGrid> frames;
    FrameGeometry g;
    Rng rng(0);
    for (int t = 0; t < n; ++t) frames.push_back(render_frame({30, start_col + 4 * t}, std::nullopt, g, rng));
    return frames;
}

}  // namespace

TEST_CASE("featurizer is linear without bias and deterministic") {
    const Featurizer f(60, 4, 32, 1, 5.0f);
    const ImageGrid black(60, 60);
    CHECK(f(black).isZero(0));
    ImageGrid a(60, 60);
    a.set(10, 10, kRed);
    ImageGrid b = a;
    CHECK(f(a) == f(b));
    b.set(10, 11, kBlue);
    CHECK(f(a) != f(b));
    CHECK_THROWS_AS(f(ImageGrid(30, 30)), Error);
}

TEST_CASE("logits are bounded by the logit scale and argmax breaks ties low") {
    TemporalModel m(tiny_config(3));
    const auto [emb, logits] = m.forward(moving_frames(3, 10));
    const float scale = m.params().logit_scale(0, 0);
    for (float l : logits) CHECK(std::abs(l) <= scale + 1e-4f);
    CHECK(argmax_label({2, 1, 0, 0}) == MotionLabel::North);
    CHECK(argmax_label({1, 1, 1, 1}) == MotionLabel::North);
    CHECK(argmax_label({0, 1, 3, 3}) == MotionLabel::West);
    CHECK_THROWS_AS(m.forward(moving_frames(2, 10)), Error);
}

TEST_CASE("embed_static equals forward on the replicated image") {
    TemporalModel m(tiny_config(4));
    const auto frames = moving_frames(4, 10);
    const std::vector<ImageGrid> rep(4, frames[1]);
    CHECK(m.embed_static(frames[1]) == m.forward(rep).first);
    CHECK(m.embed_static(frames[0]) != m.embed_static(frames[3]));
    CHECK(predict_static(m, frames[1]).second == m.forward(rep).second);
}

TEST_CASE("frame order matters to the temporal model") {
    TemporalModel m(tiny_config(3));
    auto frames = moving_frames(3, 10);
    const auto a = m.forward(frames).first;
    std::swap(frames[0], frames[2]);
    CHECK(a != m.forward(frames).first);
}

TEST_CASE("analytic gradient matches finite differences") {
    const auto cfg = tiny_config(2);
    TemporalModel m(cfg);
    Rng rng(3);
    std::normal_distribution<float> g;
    std::vector<Eigen::MatrixXf> inputs(2, Eigen::MatrixXf(cfg.d_enc, 5));
    for (auto& x : inputs)
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    const std::vector<int> labels = {0, 1, 2, 3, 1};
    HeadParams grad = m.params().zeros_like();
    loss_and_gradient(m, inputs, labels, &grad);

    std::vector<std::pair<std::string, Eigen::MatrixXf*>> analytic;
    grad.visit([&](const std::string& name, Eigen::MatrixXf& t) { analytic.emplace_back(name, &t); });
    std::size_t idx = 0;
    int checked = 0;
    m.params().visit([&](const std::string& name, Eigen::MatrixXf& t) {
        REQUIRE(analytic[idx].first == name);
        const Eigen::MatrixXf& ga = *analytic[idx++].second;
        for (Eigen::Index i = 0; i < t.size(); i += std::max<Eigen::Index>(1, t.size() / 7)) {
            const float orig = t.data()[i];
            const float h = 1e-3f;
            t.data()[i] = orig + h;
            const double up = loss_and_gradient(m, inputs, labels, nullptr);
            t.data()[i] = orig - h;
            const double down = loss_and_gradient(m, inputs, labels, nullptr);
            t.data()[i] = orig;
            const double fd = (up - down) / (2 * h);
            INFO(name, "[", i, "]");
            CHECK(ga.data()[i] == doctest::Approx(fd).epsilon(0.05).scale(1e-2));
            ++checked;
        }
    });
    CHECK(checked > 50);
}

TEST_CASE("checkpoints round-trip bit-identically") {
    TemporalModel m(tiny_config(3, false));
    const auto file = fs::temp_directory_path() / "trove_test_model.bin";
    m.save(file);
    const auto back = TemporalModel::load(file);
    CHECK(back.config().temporal == false);
    CHECK(back.featurizer().projection() == m.featurizer().projection());
    const auto frames = moving_frames(3, 10);
    CHECK(back.embed_static(frames[0]) == m.embed_static(frames[0]));
    fs::remove(file);
}

TEST_CASE("training learns motion direction and the single-frame control does not") {
    DatasetConfig dc;
    dc.feature.kind = FeatureKind::None;
    dc.seq_len = 2;
    dc.feature_span = 1;
    dc.train_count = 2000;
    dc.val_count = 400;
    dc.test_count = 4;
    dc.seed = 3;
    const auto ds = generate_dataset(dc);
    TrainConfig tc;
    tc.seed = 1;
    TrainLog log;
    const auto model = train(ds, tc, true, &log);
    CHECK(log.best_val_accuracy >= 0.95);
    for (double l : log.train_loss) CHECK(std::isfinite(l));
    CHECK(log.best_val_accuracy == *std::max_element(log.val_accuracy.begin(), log.val_accuracy.end()));

    const auto bank = build_feature_bank(model.featurizer(), ds, ds.val);
    CHECK(accuracy(model, bank) == doctest::Approx(log.best_val_accuracy));

    TrainLog control_log;
    train(ds, tc, false, &control_log);
    CHECK(control_log.best_val_accuracy < 0.45);

    const auto again = train(ds, tc, true);
    bool same = true;
    std::vector<Eigen::MatrixXf> a, b;
    model.params().visit([&](const std::string&, const Eigen::MatrixXf& t) { a.push_back(t); });
    again.params().visit([&](const std::string&, const Eigen::MatrixXf& t) { b.push_back(t); });
    for (std::size_t i = 0; i < a.size(); ++i) same &= a[i] == b[i];
    CHECK(same);
}

TEST_CASE("invalid training configs are rejected") {
    TrainConfig tc;
    tc.batch_size = 0;
    CHECK_THROWS_AS(tc.validate(), Error);
}
