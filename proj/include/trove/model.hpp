#pragma once

// Stand-in temporal classifier: a frozen random linear featurizer over
// downsampled pixels, one trainable two-layer head per sequence position,
// a three-layer sequence head over the concatenated position outputs, and
// cosine-similarity logits against unit-norm class embeddings.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "trove/common.hpp"
#include "trove/image.hpp"
#include "trove/syndata.hpp"

namespace trove {

using Logits = std::array<float, kNumClasses>;

struct ModelConfig {
    int frame_size = 60;
    int downsample = 4;
    int d_enc = 256;
    int head_hidden = 256;
    int head_out = 128;
    int seq_hidden1 = 256;
    int seq_hidden2 = 128;
    int embed_dim = 64;
    int seq_len = 5;        // n_i of the data the model consumes
    bool temporal = true;   // false: single middle-frame control
    float featurizer_gain = 5.0f;
    std::uint64_t featurizer_seed = 0x7f4a7c15u;
    std::uint64_t init_seed = 0;
    float logit_scale_init = 10.0f;
    float logit_scale_min = 1.0f;
    float logit_scale_max = 100.0f;

    int positions() const { return temporal ? seq_len : 1; }
    int input_dim() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Fixed linear map from 4x-downsampled pixels to d_enc features. No bias,
/// so the all-black image maps to zero.
class Featurizer {
public:
    Featurizer() = default;
    Featurizer(int frame_size, int downsample, int d_enc, std::uint64_t seed, float gain);

    Eigen::VectorXf operator()(const ImageGrid& img) const;
    void featurize(std::span<const ImageGrid> images, Eigen::Ref<Eigen::MatrixXf> out) const;

    const Eigen::MatrixXf& projection() const { return projection_; }
    void set_projection(Eigen::MatrixXf p) { projection_ = std::move(p); }
    int frame_size() const { return frame_size_; }
    int downsample() const { return downsample_; }
    int dim() const { return static_cast<int>(projection_.rows()); }

private:
    int frame_size_ = 0;
    int downsample_ = 1;
    Eigen::MatrixXf projection_;
};

/// Per-frame featurizer outputs of a split: by_position[t].col(i) is frame t
/// of sequence i.
struct FeatureBank {
    std::vector<Eigen::MatrixXf> by_position;
    std::vector<int> labels;

    int seq_len() const { return static_cast<int>(by_position.size()); }
    Eigen::Index count() const { return by_position.empty() ? 0 : by_position.front().cols(); }
};

FeatureBank build_feature_bank(const Featurizer& f, const Dataset& ds, const Split& split);

struct Linear {
    Eigen::MatrixXf weight;
    Eigen::MatrixXf bias;  // out x 1
};

struct HeadParams {
    std::vector<Linear> position_in;
    std::vector<Linear> position_out;
    Linear seq1, seq2, seq3;
    Eigen::MatrixXf class_embeddings;  // embed_dim x kNumClasses, unit columns
    Eigen::MatrixXf logit_scale;       // 1 x 1

    HeadParams zeros_like() const;
    void visit(const std::function<void(const std::string&, Eigen::MatrixXf&)>& fn);
    void visit(const std::function<void(const std::string&, const Eigen::MatrixXf&)>& fn) const;
};

struct BatchOutput {
    Eigen::MatrixXf embeddings;  // embed_dim x B, unnormalized
    Eigen::MatrixXf logits;      // kNumClasses x B
};

class TemporalModel {
public:
    TemporalModel() = default;
    explicit TemporalModel(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    const Featurizer& featurizer() const { return featurizer_; }
    HeadParams& params() { return params_; }
    const HeadParams& params() const { return params_; }

    /// Forward pass over featurized inputs, one d_enc x B matrix per model position.
    BatchOutput forward_features(std::span<const Eigen::MatrixXf> per_position) const;

    /// Selects model inputs from a bank: all positions, or the middle frame for the control.
    std::vector<Eigen::MatrixXf> select_inputs(const FeatureBank& bank) const;

    /// Full-sequence forward over raw frames (length must equal seq_len).
    std::pair<Eigen::VectorXf, Logits> forward(std::span<const ImageGrid> frames) const;

    /// Embedding of the static sequence formed by replicating `image` seq_len times.
    Eigen::VectorXf embed_static(const ImageGrid& image) const;

    /// Static-sequence outputs for featurized images (one column per image).
    BatchOutput static_features(const Eigen::MatrixXf& image_features) const;

    /// logit_scale * cos(embedding, class_embeddings[:, c]) for each column.
    Eigen::MatrixXf score(const Eigen::MatrixXf& embeddings, const Eigen::MatrixXf& class_embeddings) const;

    void save(const std::filesystem::path& file) const;
    static TemporalModel load(const std::filesystem::path& file);

private:
    ModelConfig cfg_;
    Featurizer featurizer_;
    HeadParams params_;
};

/// argmax with ties broken toward the lowest class index.
MotionLabel argmax_label(const Logits& logits);
int argmax_column(const Eigen::Ref<const Eigen::MatrixXf>& logits, Eigen::Index col);
Logits column_logits(const Eigen::MatrixXf& logits, Eigen::Index col);

std::pair<MotionLabel, Logits> predict(const TemporalModel& m, std::span<const ImageGrid> frames);
std::pair<MotionLabel, Logits> predict_static(const TemporalModel& m, const ImageGrid& image);

struct TrainConfig {
    int batch_size = 64;
    double learning_rate = 0.02;
    double momentum = 0.9;
    int max_epochs = 100;
    int patience = 10;
    int min_epochs = 20;  // early stopping cannot trigger before this epoch
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainLog {
    std::vector<double> train_loss;
    std::vector<double> val_accuracy;
    int best_epoch = -1;
    double best_val_accuracy = 0.0;
};

/// Mean cross-entropy loss and gradient for one batch; used by the trainer and tests.
double loss_and_gradient(const TemporalModel& m, std::span<const Eigen::MatrixXf> inputs,
                         std::span<const int> labels, HeadParams* grad);

double accuracy(const TemporalModel& m, const FeatureBank& bank);

/// Momentum SGD with early stopping on validation accuracy; returns the best checkpoint.
TemporalModel train_on_features(const ModelConfig& mcfg, const FeatureBank& train, const FeatureBank& val,
                                const TrainConfig& cfg, TrainLog* log = nullptr);

TemporalModel train(const Dataset& ds, const TrainConfig& cfg, bool temporal, TrainLog* log = nullptr);

ModelConfig default_model_config(const DatasetConfig& data, bool temporal, std::uint64_t init_seed);

}  // namespace trove
