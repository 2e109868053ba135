#include "trove/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "trove/dataset_io.hpp"
#include "trove/kernels.hpp"
#include "trove/tensor_io.hpp"

namespace trove {

using nlohmann::json;

int ModelConfig::input_dim() const {
    const int side = frame_size / downsample;
    return side * side * ImageGrid::kChannels;
}

json to_json(const ModelConfig& c) {
    return {{"frame_size", c.frame_size},
            {"downsample", c.downsample},
            {"d_enc", c.d_enc},
            {"head_hidden", c.head_hidden},
            {"head_out", c.head_out},
            {"seq_hidden1", c.seq_hidden1},
            {"seq_hidden2", c.seq_hidden2},
            {"embed_dim", c.embed_dim},
            {"seq_len", c.seq_len},
            {"temporal", c.temporal},
            {"featurizer_gain", c.featurizer_gain},
            {"featurizer_seed", c.featurizer_seed},
            {"init_seed", c.init_seed},
            {"logit_scale_init", c.logit_scale_init},
            {"logit_scale_min", c.logit_scale_min},
            {"logit_scale_max", c.logit_scale_max}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.frame_size = j.value("frame_size", c.frame_size);
    c.downsample = j.value("downsample", c.downsample);
    c.d_enc = j.value("d_enc", c.d_enc);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.head_out = j.value("head_out", c.head_out);
    c.seq_hidden1 = j.value("seq_hidden1", c.seq_hidden1);
    c.seq_hidden2 = j.value("seq_hidden2", c.seq_hidden2);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.temporal = j.value("temporal", c.temporal);
    c.featurizer_gain = j.value("featurizer_gain", c.featurizer_gain);
    c.featurizer_seed = j.value("featurizer_seed", c.featurizer_seed);
    c.init_seed = j.value("init_seed", c.init_seed);
    c.logit_scale_init = j.value("logit_scale_init", c.logit_scale_init);
    c.logit_scale_min = j.value("logit_scale_min", c.logit_scale_min);
    c.logit_scale_max = j.value("logit_scale_max", c.logit_scale_max);
    return c;
}

// ---------------------------------------------------------------- featurizer

Featurizer::Featurizer(int frame_size, int downsample, int d_enc, std::uint64_t seed, float gain)
    : frame_size_(frame_size), downsample_(downsample) {
    if (frame_size % downsample != 0) throw Error("featurizer: frame size must be a multiple of the downsample factor");
    const int side = frame_size / downsample;
    const int in = side * side * ImageGrid::kChannels;
    Rng rng(seed);
    std::normal_distribution<float> normal(0.f, gain / std::sqrt(static_cast<float>(in)));
    projection_.resize(d_enc, in);
    for (Eigen::Index c = 0; c < projection_.cols(); ++c)
        for (Eigen::Index r = 0; r < projection_.rows(); ++r) projection_(r, c) = normal(rng);
}

Eigen::VectorXf Featurizer::operator()(const ImageGrid& img) const {
    Eigen::MatrixXf out(projection_.rows(), 1);
    featurize(std::span(&img, 1), out);
    return out.col(0);
}

void Featurizer::featurize(std::span<const ImageGrid> images, Eigen::Ref<Eigen::MatrixXf> out) const {
    for (const auto& img : images)
        if (img.height() != frame_size_ || img.width() != frame_size_)
            throw Error("featurizer: expected " + std::to_string(frame_size_) + "x" + std::to_string(frame_size_) +
                        " image, got " + std::to_string(img.height()) + "x" + std::to_string(img.width()));
    kernels::project_images(projection_, downsample_, images, out);
}

FeatureBank build_feature_bank(const Featurizer& f, const Dataset& ds, const Split& split) {
    const int n = ds.config.seq_len;
    const auto count = static_cast<Eigen::Index>(split.size());
    FeatureBank bank;
    bank.by_position.assign(n, Eigen::MatrixXf(f.dim(), count));
    bank.labels.reserve(split.size());
    for (const auto& s : split.sequences) bank.labels.push_back(index_of(s.label));

    constexpr std::size_t kChunk = 512;
    std::vector<ImageGrid> chunk;
    std::vector<std::pair<std::size_t, int>> where;
    Eigen::MatrixXf out(f.dim(), static_cast<Eigen::Index>(kChunk));
    auto flush = [&] {
        if (chunk.empty()) return;
        auto block = out.leftCols(static_cast<Eigen::Index>(chunk.size()));
        f.featurize(chunk, block);
        for (std::size_t k = 0; k < chunk.size(); ++k)
            bank.by_position[where[k].second].col(static_cast<Eigen::Index>(where[k].first)) =
                block.col(static_cast<Eigen::Index>(k));
        chunk.clear();
        where.clear();
    };
    for_each_frame(ds, split, [&](std::size_t i, int t, const ImageGrid& img) {
        chunk.push_back(img);
        where.emplace_back(i, t);
        if (chunk.size() == kChunk) flush();
    });
    flush();
    return bank;
}

// ---------------------------------------------------------------- params

namespace {

Linear make_linear(int in, int out, Rng& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in));
    std::uniform_real_distribution<float> u(-bound, bound);
    Linear l{Eigen::MatrixXf(out, in), Eigen::MatrixXf(out, 1)};
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = u(rng);
    for (Eigen::Index r = 0; r < l.bias.rows(); ++r) l.bias(r, 0) = u(rng);
    return l;
}

Linear zero_linear(const Linear& l) {
    return {Eigen::MatrixXf::Zero(l.weight.rows(), l.weight.cols()), Eigen::MatrixXf::Zero(l.bias.rows(), 1)};
}

void normalize_columns(Eigen::MatrixXf& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const float norm = m.col(c).norm();
        if (norm > 0.f) m.col(c) /= norm;
    }
}

std::vector<Eigen::MatrixXf*> param_list(HeadParams& p) {
    std::vector<Eigen::MatrixXf*> out;
    p.visit([&](const std::string&, Eigen::MatrixXf& m) { out.push_back(&m); });
    return out;
}

}  // namespace

HeadParams HeadParams::zeros_like() const {
    HeadParams z;
    for (const auto& l : position_in) z.position_in.push_back(zero_linear(l));
    for (const auto& l : position_out) z.position_out.push_back(zero_linear(l));
    z.seq1 = zero_linear(seq1);
    z.seq2 = zero_linear(seq2);
    z.seq3 = zero_linear(seq3);
    z.class_embeddings = Eigen::MatrixXf::Zero(class_embeddings.rows(), class_embeddings.cols());
    z.logit_scale = Eigen::MatrixXf::Zero(1, 1);
    return z;
}

void HeadParams::visit(const std::function<void(const std::string&, Eigen::MatrixXf&)>& fn) {
    for (std::size_t p = 0; p < position_in.size(); ++p) {
        const std::string base = "position." + std::to_string(p);
        fn(base + ".in.weight", position_in[p].weight);
        fn(base + ".in.bias", position_in[p].bias);
        fn(base + ".out.weight", position_out[p].weight);
        fn(base + ".out.bias", position_out[p].bias);
    }
    fn("sequence.0.weight", seq1.weight);
    fn("sequence.0.bias", seq1.bias);
    fn("sequence.1.weight", seq2.weight);
    fn("sequence.1.bias", seq2.bias);
    fn("sequence.2.weight", seq3.weight);
    fn("sequence.2.bias", seq3.bias);
    fn("class_embeddings", class_embeddings);
    fn("logit_scale", logit_scale);
}

void HeadParams::visit(const std::function<void(const std::string&, const Eigen::MatrixXf&)>& fn) const {
    const_cast<HeadParams*>(this)->visit(
        [&](const std::string& name, Eigen::MatrixXf& m) { fn(name, static_cast<const Eigen::MatrixXf&>(m)); });
}

// ---------------------------------------------------------------- model

TemporalModel::TemporalModel(const ModelConfig& cfg)
    : cfg_(cfg), featurizer_(cfg.frame_size, cfg.downsample, cfg.d_enc, cfg.featurizer_seed, cfg.featurizer_gain) {
    if (cfg.seq_len < 1) throw Error("model: seq_len must be >= 1");
    Rng rng(cfg.init_seed);
    const int positions = cfg.positions();
    for (int p = 0; p < positions; ++p) {
        params_.position_in.push_back(make_linear(cfg.d_enc, cfg.head_hidden, rng));
        params_.position_out.push_back(make_linear(cfg.head_hidden, cfg.head_out, rng));
    }
    params_.seq1 = make_linear(cfg.head_out * positions, cfg.seq_hidden1, rng);
    params_.seq2 = make_linear(cfg.seq_hidden1, cfg.seq_hidden2, rng);
    params_.seq3 = make_linear(cfg.seq_hidden2, cfg.embed_dim, rng);
    std::normal_distribution<float> normal(0.f, 1.f);
    params_.class_embeddings.resize(cfg.embed_dim, kNumClasses);
    for (Eigen::Index c = 0; c < kNumClasses; ++c)
        for (Eigen::Index r = 0; r < cfg.embed_dim; ++r) params_.class_embeddings(r, c) = normal(rng);
    normalize_columns(params_.class_embeddings);
    params_.logit_scale = Eigen::MatrixXf::Constant(1, 1, cfg.logit_scale_init);
}

namespace {

struct ForwardCache {
    std::vector<Eigen::MatrixXf> pre1, hidden1;  // per position
    Eigen::MatrixXf concat;
    Eigen::MatrixXf pre2, hidden2, pre3, hidden3;
    Eigen::MatrixXf embeddings;
    Eigen::VectorXf norms;
    Eigen::MatrixXf unit;     // normalized embeddings
    Eigen::MatrixXf cosines;  // kNumClasses x B
    Eigen::MatrixXf logits;
};

Eigen::MatrixXf affine(const Linear& l, const Eigen::MatrixXf& x) {
    Eigen::MatrixXf y = l.weight * x;
    y.colwise() += l.bias.col(0);
    return y;
}

Eigen::MatrixXf unit_columns(const Eigen::MatrixXf& m, Eigen::VectorXf* norms = nullptr) {
    Eigen::MatrixXf u(m.rows(), m.cols());
    if (norms) norms->resize(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const float n = std::max(m.col(c).norm(), 1e-12f);
        u.col(c) = m.col(c) / n;
        if (norms) (*norms)[c] = n;
    }
    return u;
}

void run_forward(const HeadParams& p, std::span<const Eigen::MatrixXf> inputs, int head_out, ForwardCache& c) {
    const auto positions = p.position_in.size();
    if (inputs.size() != positions)
        throw Error("model: expected " + std::to_string(positions) + " input positions, got " +
                    std::to_string(inputs.size()));
    const Eigen::Index batch = inputs.front().cols();
    c.pre1.resize(positions);
    c.hidden1.resize(positions);
    c.concat.resize(head_out * static_cast<Eigen::Index>(positions), batch);
    for (std::size_t t = 0; t < positions; ++t) {
        if (inputs[t].cols() != batch) throw Error("model: ragged batch");
        c.pre1[t] = affine(p.position_in[t], inputs[t]);
        c.hidden1[t] = c.pre1[t].cwiseMax(0.f);
        c.concat.middleRows(static_cast<Eigen::Index>(t) * head_out, head_out) = affine(p.position_out[t], c.hidden1[t]);
    }
    c.pre2 = affine(p.seq1, c.concat);
    c.hidden2 = c.pre2.cwiseMax(0.f);
    c.pre3 = affine(p.seq2, c.hidden2);
    c.hidden3 = c.pre3.cwiseMax(0.f);
    c.embeddings = affine(p.seq3, c.hidden3);
    c.unit = unit_columns(c.embeddings, &c.norms);
    c.cosines = unit_columns(p.class_embeddings).transpose() * c.unit;
    c.logits = p.logit_scale(0, 0) * c.cosines;
}

}  // namespace

BatchOutput TemporalModel::forward_features(std::span<const Eigen::MatrixXf> per_position) const {
    ForwardCache c;
    run_forward(params_, per_position, cfg_.head_out, c);
    return {std::move(c.embeddings), std::move(c.logits)};
}

std::vector<Eigen::MatrixXf> TemporalModel::select_inputs(const FeatureBank& bank) const {
    if (bank.seq_len() != cfg_.seq_len)
        throw Error("model expects sequences of length " + std::to_string(cfg_.seq_len) + ", data has " +
                    std::to_string(bank.seq_len()));
    if (cfg_.temporal) return bank.by_position;
    return {bank.by_position[cfg_.seq_len / 2]};
}

std::pair<Eigen::VectorXf, Logits> TemporalModel::forward(std::span<const ImageGrid> frames) const {
    if (static_cast<int>(frames.size()) != cfg_.seq_len)
        throw Error("forward: expected " + std::to_string(cfg_.seq_len) + " frames, got " +
                    std::to_string(frames.size()));
    std::vector<Eigen::MatrixXf> inputs;
    if (cfg_.temporal) {
        for (const auto& f : frames) inputs.emplace_back(featurizer_(f));
    } else {
        inputs.emplace_back(featurizer_(frames[cfg_.seq_len / 2]));
    }
    auto out = forward_features(inputs);
    return {out.embeddings.col(0), column_logits(out.logits, 0)};
}

Eigen::VectorXf TemporalModel::embed_static(const ImageGrid& image) const {
    const std::vector<ImageGrid> replicated(cfg_.seq_len, image);
    return forward(replicated).first;
}

BatchOutput TemporalModel::static_features(const Eigen::MatrixXf& image_features) const {
    const std::vector<Eigen::MatrixXf> inputs(static_cast<std::size_t>(cfg_.positions()), image_features);
    return forward_features(inputs);
}

Eigen::MatrixXf TemporalModel::score(const Eigen::MatrixXf& embeddings, const Eigen::MatrixXf& class_embeddings) const {
    return params_.logit_scale(0, 0) * (unit_columns(class_embeddings).transpose() * unit_columns(embeddings));
}

void TemporalModel::save(const std::filesystem::path& file) const {
    std::vector<NamedTensor> tensors;
    tensors.push_back({"featurizer.projection", featurizer_.projection().cast<double>(), false});
    params_.visit([&](const std::string& name, const Eigen::MatrixXf& m) {
        tensors.push_back({name, m.cast<double>(), false});
    });
    write_tensors(file, tensors);
    auto sidecar = file;
    sidecar.replace_extension(".json");
    std::ofstream(sidecar) << json{{"format", "trove-model"}, {"version", 1}, {"config", to_json(cfg_)}}.dump(2)
                           << '\n';
}

TemporalModel TemporalModel::load(const std::filesystem::path& file) {
    auto sidecar = file;
    sidecar.replace_extension(".json");
    std::ifstream is(sidecar);
    if (!is) throw Error("missing model config sidecar " + sidecar.string());
    const json meta = json::parse(is);
    TemporalModel m(model_config_from_json(meta.at("config")));
    const auto tensors = read_tensors(file);
    auto assign = [&](const std::string& name, Eigen::MatrixXf& dst) {
        const auto& t = find_tensor(tensors, name);
        if (t.values.rows() != dst.rows() || t.values.cols() != dst.cols())
            throw Error("checkpoint tensor '" + name + "' has the wrong shape");
        dst = t.values.cast<float>();
    };
    Eigen::MatrixXf proj = m.featurizer_.projection();
    assign("featurizer.projection", proj);
    m.featurizer_.set_projection(std::move(proj));
    m.params_.visit(assign);
    return m;
}

// ---------------------------------------------------------------- prediction

MotionLabel argmax_label(const Logits& logits) {
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
        if (logits[c] > logits[best]) best = c;
    return label_from_index(best);
}

int argmax_column(const Eigen::Ref<const Eigen::MatrixXf>& logits, Eigen::Index col) {
    int best = 0;
    for (int c = 1; c < logits.rows(); ++c)
        if (logits(c, col) > logits(best, col)) best = c;
    return best;
}

Logits column_logits(const Eigen::MatrixXf& logits, Eigen::Index col) {
    Logits out{};
    for (int c = 0; c < kNumClasses; ++c) out[c] = logits(c, col);
    return out;
}

std::pair<MotionLabel, Logits> predict(const TemporalModel& m, std::span<const ImageGrid> frames) {
    auto [emb, logits] = m.forward(frames);
    return {argmax_label(logits), logits};
}

std::pair<MotionLabel, Logits> predict_static(const TemporalModel& m, const ImageGrid& image) {
    const std::vector<ImageGrid> replicated(m.config().seq_len, image);
    return predict(m, replicated);
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
    if (batch_size < 1 || learning_rate <= 0.0 || max_epochs < 1 || patience < 1 || min_epochs < 0 || momentum < 0.0 || momentum >= 1.0)
        throw Error("invalid train config");
}

json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
            {"max_epochs", c.max_epochs}, {"patience", c.patience}, {"min_epochs", c.min_epochs}, {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.min_epochs = j.value("min_epochs", c.min_epochs);
    c.seed = j.value("seed", c.seed);
    return c;
}

double loss_and_gradient(const TemporalModel& m, std::span<const Eigen::MatrixXf> inputs,
                         std::span<const int> labels, HeadParams* grad) {
    const HeadParams& p = m.params();
    ForwardCache c;
    run_forward(p, inputs, m.config().head_out, c);
    const Eigen::Index batch = c.logits.cols();
    if (static_cast<Eigen::Index>(labels.size()) != batch) throw Error("loss: label count mismatch");

    Eigen::MatrixXf g(kNumClasses, batch);  // dL/dlogits
    double loss = 0.0;
    for (Eigen::Index b = 0; b < batch; ++b) {
        const float mx = c.logits.col(b).maxCoeff();
        Eigen::VectorXf e = (c.logits.col(b).array() - mx).exp();
        const float z = e.sum();
        loss += std::log(z) + mx - c.logits(labels[b], b);
        g.col(b) = e / z;
        g(labels[b], b) -= 1.f;
    }
    g /= static_cast<float>(batch);
    loss /= static_cast<double>(batch);
    if (!grad) return loss;

    *grad = p.zeros_like();
    const float scale = p.logit_scale(0, 0);
    grad->logit_scale(0, 0) = g.cwiseProduct(c.cosines).sum();

    Eigen::VectorXf class_norms;
    const Eigen::MatrixXf unit_classes = unit_columns(p.class_embeddings, &class_norms);
    const Eigen::MatrixXf d_unit_classes = scale * c.unit * g.transpose();
    grad->class_embeddings.resize(d_unit_classes.rows(), d_unit_classes.cols());
    for (Eigen::Index k = 0; k < d_unit_classes.cols(); ++k) {
        const float proj = unit_classes.col(k).dot(d_unit_classes.col(k));
        grad->class_embeddings.col(k) = (d_unit_classes.col(k) - proj * unit_classes.col(k)) / class_norms[k];
    }
    const Eigen::MatrixXf d_unit = scale * unit_classes * g;
    Eigen::MatrixXf d_emb(d_unit.rows(), batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        const float proj = c.unit.col(b).dot(d_unit.col(b));
        d_emb.col(b) = (d_unit.col(b) - proj * c.unit.col(b)) / c.norms[b];
    }

    auto backward_linear = [](const Linear& l, const Eigen::MatrixXf& input, const Eigen::MatrixXf& d_out,
                              Linear& dl) -> Eigen::MatrixXf {
        dl.weight.noalias() = d_out * input.transpose();
        dl.bias = d_out.rowwise().sum();
        return l.weight.transpose() * d_out;
    };
    auto relu_mask = [](Eigen::MatrixXf d, const Eigen::MatrixXf& pre) {
        return Eigen::MatrixXf((pre.array() > 0.f).select(d, 0.f));
    };

    Eigen::MatrixXf d = backward_linear(p.seq3, c.hidden3, d_emb, grad->seq3);
    d = backward_linear(p.seq2, c.hidden2, relu_mask(std::move(d), c.pre3), grad->seq2);
    const Eigen::MatrixXf d_concat = backward_linear(p.seq1, c.concat, relu_mask(std::move(d), c.pre2), grad->seq1);
    const int ho = m.config().head_out;
    for (std::size_t t = 0; t < p.position_in.size(); ++t) {
        const Eigen::MatrixXf d_out = d_concat.middleRows(static_cast<Eigen::Index>(t) * ho, ho);
        Eigen::MatrixXf d_hidden = backward_linear(p.position_out[t], c.hidden1[t], d_out, grad->position_out[t]);
        backward_linear(p.position_in[t], inputs[t], relu_mask(std::move(d_hidden), c.pre1[t]), grad->position_in[t]);
    }
    return loss;
}

double accuracy(const TemporalModel& m, const FeatureBank& bank) {
    if (bank.count() == 0) return 0.0;
    const auto out = m.forward_features(m.select_inputs(bank));
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < out.logits.cols(); ++i)
        if (argmax_column(out.logits, i) == bank.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(out.logits.cols());
}

TemporalModel train_on_features(const ModelConfig& mcfg, const FeatureBank& train, const FeatureBank& val,
                                const TrainConfig& cfg, TrainLog* log) {
    cfg.validate();
    if (train.count() == 0 || val.count() == 0) throw Error("train: empty split");
    TemporalModel model(mcfg);
    const auto full_inputs = model.select_inputs(train);
    const int positions = mcfg.positions();

    HeadParams velocity = model.params().zeros_like();
    HeadParams grad;
    auto params = param_list(model.params());
    auto vel = param_list(velocity);

    Rng rng(cfg.seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(train.count()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    TemporalModel best = model;
    double best_acc = -1.0;
    int since_best = 0;
    TrainLog local;
    TrainLog& out = log ? *log : local;
    out = TrainLog{};

    std::vector<Eigen::MatrixXf> batch_inputs(positions);
    std::vector<int> batch_labels;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const auto b = static_cast<Eigen::Index>(end - start);
            batch_labels.resize(end - start);
            for (int t = 0; t < positions; ++t) batch_inputs[t].resize(full_inputs[t].rows(), b);
            for (std::size_t k = start; k < end; ++k) {
                const auto col = static_cast<Eigen::Index>(k - start);
                for (int t = 0; t < positions; ++t) batch_inputs[t].col(col) = full_inputs[t].col(order[k]);
                batch_labels[k - start] = train.labels[static_cast<std::size_t>(order[k])];
            }
            const double loss = loss_and_gradient(model, batch_inputs, batch_labels, &grad);
            if (!std::isfinite(loss)) {
                std::ostringstream os;
                os << "train: non-finite loss at epoch " << epoch << ", batch " << batches
                   << " (logit scale " << model.params().logit_scale(0, 0) << ")";
                throw Error(os.str());
            }
            loss_sum += loss;
            ++batches;
            auto g = param_list(grad);
            for (std::size_t k = 0; k < params.size(); ++k) {
                *vel[k] = static_cast<float>(cfg.momentum) * *vel[k] + *g[k];
                *params[k] -= static_cast<float>(cfg.learning_rate) * *vel[k];
            }
            normalize_columns(model.params().class_embeddings);
            auto& s = model.params().logit_scale(0, 0);
            s = std::clamp(s, mcfg.logit_scale_min, mcfg.logit_scale_max);
        }
        const double val_acc = accuracy(model, val);
        out.train_loss.push_back(loss_sum / static_cast<double>(batches));
        out.val_accuracy.push_back(val_acc);
        if (val_acc > best_acc) {
            best_acc = val_acc;
            best = model;
            out.best_epoch = epoch;
            out.best_val_accuracy = val_acc;
            since_best = 0;
        } else if (++since_best >= cfg.patience && epoch + 1 >= cfg.min_epochs) {
            break;
        }
    }
    return best;
}

ModelConfig default_model_config(const DatasetConfig& data, bool temporal, std::uint64_t init_seed) {
    ModelConfig m;
    m.frame_size = data.geometry.frame_size;
    m.seq_len = data.seq_len;
    m.temporal = temporal;
    m.init_seed = init_seed;
    return m;
}

TemporalModel train(const Dataset& ds, const TrainConfig& cfg, bool temporal, TrainLog* log) {
    const ModelConfig mcfg = default_model_config(ds.config, temporal, derive_seed(cfg.seed, temporal ? 11 : 13));
    const TemporalModel probe(mcfg);
    const auto train_bank = build_feature_bank(probe.featurizer(), ds, ds.train);
    const auto val_bank = build_feature_bank(probe.featurizer(), ds, ds.val);
    return train_on_features(mcfg, train_bank, val_bank, cfg, log);
}

}  // namespace trove
