#pragma once

// Synthetic moving-circle sequences with an injected static feature whose
// prevalence is tied to the "moving south" class.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trove/common.hpp"
#include "trove/image.hpp"

namespace trove {

enum class FeatureKind : std::uint8_t { None = 0, Background, Object, Attribute };

std::string_view feature_kind_name(FeatureKind k);
std::optional<FeatureKind> parse_feature_kind(std::string_view s);

struct FeatureSpec {
    FeatureKind kind = FeatureKind::Background;
    Rgb color = kRed;
    int object_size = 15;
};

struct FrameGeometry {
    int frame_size = 60;
    int circle_diameter = 10;
    int step_size = 4;
};

/// Circle center in pixel-corner coordinates: the disk covers pixels whose
/// centers lie within diameter/2 of (row, col).
struct Point {
    int row = 0;
    int col = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

struct Rect {
    int row = 0;
    int col = 0;
    int size = 0;
    bool contains(int r, int c) const {
        return r >= row && r < row + size && c >= col && c < col + size;
    }
    friend bool operator==(const Rect&, const Rect&) = default;
};

/// Everything needed to re-render one frame bit-exactly.
struct FrameLayout {
    Point center;
    bool has_feature = false;
    std::optional<Rect> object;
};

struct DatasetConfig {
    FeatureSpec feature;
    FrameGeometry geometry;
    int seq_len = 5;
    double target_cramers_v = 0.95;
    int feature_span = 2;
    int train_count = 2000;
    int val_count = 1000;
    int test_count = 1000;
    double q_south = 0.98;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SequenceSample {
    std::uint32_t id = 0;
    MotionLabel label = MotionLabel::North;
    std::vector<std::uint8_t> feature_flags;
    std::string caption;
    std::vector<FrameLayout> frames;  // empty when pixels come from a tensor file

    int length() const { return static_cast<int>(feature_flags.size()); }
    bool has_feature() const;
};

struct Split {
    std::string name;
    std::vector<SequenceSample> sequences;
    std::filesystem::path tensor_path;  // set when loaded from disk with pixel data

    std::size_t size() const { return sequences.size(); }
};

struct Dataset {
    DatasetConfig config;
    Split train, val, test;
    double r_other = 0.0;
    double realized_cramers_v = 0.0;
};

/// Circle centers for one sequence. The middle frame is drawn uniformly from
/// the positions that keep the whole trajectory inside the frame for every
/// direction, so a single middle frame carries no label information.
std::vector<Point> sample_trajectory(MotionLabel label, int n, const FrameGeometry& g, Rng& rng);

bool in_disk(const FrameGeometry& g, Point center, int row, int col);

/// Random non-overlapping placement for an object feature; fails after 64 tries.
Rect place_object(std::span<const Point> centers, const FrameGeometry& g, int size, Rng& rng);

ImageGrid render_layout(const FrameLayout& layout, const FeatureSpec& feature, const FrameGeometry& g);

/// Renders one frame; an Object feature is placed with `rng`.
ImageGrid render_frame(Point center, const std::optional<FeatureSpec>& feature,
                       const FrameGeometry& g, Rng& rng);

/// phi coefficient of the (is-South x has-feature) table implied by prevalences.
double phi_from_prevalence(double q_south, double r_other, double p_class = 0.25);

/// Thrown when no r in [0, q_south) attains the requested association.
class InfeasibleTarget : public Error {
public:
    InfeasibleTarget(double target, double max_achievable);
    double max_achievable() const { return max_; }

private:
    double max_;
};

/// Inverts Cramer's V to the off-class prevalence r_other.
double solve_prevalence(double target_v, double q_south, double p_class = 0.25);

Dataset generate_dataset(const DatasetConfig& config);

/// V = sqrt(chi^2 / N) of a 2x2 table; 0 when a marginal is empty.
double cramers_v_2x2(double a, double b, double c, double d);
double cramers_v(const Split& split);

/// Calls fn(sequence index, frame index, image) for every frame of the split,
/// rendering layouts or streaming pixels from the split's tensor file.
using FrameVisitor = std::function<void(std::size_t, int, const ImageGrid&)>;
void for_each_frame(const Dataset& ds, const Split& split, const FrameVisitor& fn);

std::vector<ImageGrid> render_sequence(const Dataset& ds, const SequenceSample& s);

}  // namespace trove
