#include "trove/syndata.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace trove {

std::string_view feature_kind_name(FeatureKind k) {
    switch (k) {
        case FeatureKind::None: return "none";
        case FeatureKind::Background: return "background";
        case FeatureKind::Object: return "object";
        case FeatureKind::Attribute: return "attribute";
    }
    return "?";
}

std::optional<FeatureKind> parse_feature_kind(std::string_view s) {
    for (auto k : {FeatureKind::None, FeatureKind::Background, FeatureKind::Object,
                   FeatureKind::Attribute})
        if (feature_kind_name(k) == s) return k;
    return std::nullopt;
}

namespace {

int half_extent(const FrameGeometry& g) { return (g.circle_diameter + 1) / 2; }

// Range [lo, hi] of middle-frame coordinates that is feasible for all four
// directions.
std::pair<int, int> middle_range(int n, const FrameGeometry& g) {
    const int mid = n / 2;
    const int reach = g.step_size * std::max(mid, n - 1 - mid);
    const int lo = half_extent(g) + reach;
    const int hi = g.frame_size - half_extent(g) - reach;
    return {lo, hi};
}

Point offset_along(MotionLabel label, Point mid, int delta) {
    switch (label) {
        case MotionLabel::North: return {mid.row - delta, mid.col};
        case MotionLabel::South: return {mid.row + delta, mid.col};
        case MotionLabel::West: return {mid.row, mid.col - delta};
        case MotionLabel::East: return {mid.row, mid.col + delta};
    }
    return mid;
}

}  // namespace

void DatasetConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error("invalid dataset config: " + what); };
    if (seq_len < 1) fail("seq_len must be >= 1");
    if (geometry.frame_size < 1 || geometry.circle_diameter < 1 || geometry.step_size < 1)
        fail("geometry values must be positive");
    if (feature.kind != FeatureKind::None) {
        if (feature_span < 1 || feature_span > seq_len) fail("feature_span must lie in [1, seq_len]");
        if (!(target_cramers_v >= 0.0 && target_cramers_v <= 1.0)) fail("target_cramers_v must lie in [0, 1]");
        if (!(q_south > 0.0 && q_south <= 1.0)) fail("q_south must lie in (0, 1]");
    }
    if (feature.kind == FeatureKind::Object &&
        (feature.object_size < 1 || feature.object_size > geometry.frame_size))
        fail("object does not fit in the frame");
    if (train_count < 0 || val_count < 0 || test_count < 0) fail("split counts must be >= 0");
    const auto [lo, hi] = middle_range(seq_len, geometry);
    if (lo > hi) fail("trajectory of " + std::to_string(seq_len) + " frames does not fit in the frame");
}

bool SequenceSample::has_feature() const {
    return std::any_of(feature_flags.begin(), feature_flags.end(), [](auto f) { return f != 0; });
}

std::vector<Point> sample_trajectory(MotionLabel label, int n, const FrameGeometry& g, Rng& rng) {
    if (n < 1) throw Error("sample_trajectory: n must be >= 1");
    const auto [lo, hi] = middle_range(n, g);
    if (lo > hi) throw Error("sample_trajectory: no valid start position for n=" + std::to_string(n));
    std::uniform_int_distribution<int> pos(lo, hi);
    const Point mid{pos(rng), pos(rng)};
    std::vector<Point> centers(n);
    for (int t = 0; t < n; ++t) centers[t] = offset_along(label, mid, g.step_size * (t - n / 2));
    return centers;
}

bool in_disk(const FrameGeometry& g, Point center, int row, int col) {
    const double dy = row + 0.5 - center.row;
    const double dx = col + 0.5 - center.col;
    const double radius = g.circle_diameter / 2.0;
    return dy * dy + dx * dx <= radius * radius;
}

Rect place_object(std::span<const Point> centers, const FrameGeometry& g, int size, Rng& rng) {
    constexpr int kMaxTries = 64;
    std::uniform_int_distribution<int> pos(0, g.frame_size - size);
    const int reach = half_extent(g);
    for (int attempt = 0; attempt < kMaxTries; ++attempt) {
        const Rect box{pos(rng), pos(rng), size};
        bool overlaps = false;
        for (const Point& c : centers) {
            for (int r = std::max(box.row, c.row - reach); r < std::min(box.row + size, c.row + reach) && !overlaps; ++r)
                for (int col = std::max(box.col, c.col - reach); col < std::min(box.col + size, c.col + reach); ++col)
                    if (in_disk(g, c, r, col)) {
                        overlaps = true;
                        break;
                    }
            if (overlaps) break;
        }
        if (!overlaps) return box;
    }
    throw Error("place_object: no non-overlapping placement after 64 attempts");
}

ImageGrid render_layout(const FrameLayout& layout, const FeatureSpec& feature, const FrameGeometry& g) {
    const bool feat = layout.has_feature && feature.kind != FeatureKind::None;
    const Rgb background = (feat && feature.kind == FeatureKind::Background) ? feature.color : kBlack;
    const Rgb circle = (feat && feature.kind == FeatureKind::Attribute) ? feature.color : kBlue;
    ImageGrid img(g.frame_size, g.frame_size, background);
    if (feat && feature.kind == FeatureKind::Object) {
        if (!layout.object) throw Error("render_layout: object feature without placement");
        const Rect& box = *layout.object;
        for (int r = box.row; r < box.row + box.size; ++r)
            for (int c = box.col; c < box.col + box.size; ++c) img.set(r, c, feature.color);
    }
    for (int r = 0; r < g.frame_size; ++r)
        for (int c = 0; c < g.frame_size; ++c)
            if (in_disk(g, layout.center, r, c)) img.set(r, c, circle);
    return img;
}

ImageGrid render_frame(Point center, const std::optional<FeatureSpec>& feature,
                       const FrameGeometry& g, Rng& rng) {
    const int reach = half_extent(g);
    if (center.row < reach || center.col < reach || center.row > g.frame_size - reach ||
        center.col > g.frame_size - reach)
        throw Error("render_frame: circle does not fit inside the frame");
    FrameLayout layout{center, feature.has_value() && feature->kind != FeatureKind::None, std::nullopt};
    if (layout.has_feature && feature->kind == FeatureKind::Object)
        layout.object = place_object(std::span(&center, 1), g, feature->object_size, rng);
    return render_layout(layout, feature.value_or(FeatureSpec{FeatureKind::None}), g);
}

double phi_from_prevalence(double q, double r, double p) {
    const double pf = p * q + (1.0 - p) * r;
    const double denom = p * (1.0 - p) * pf * (1.0 - pf);
    if (denom <= 0.0) return 0.0;
    return p * (1.0 - p) * (q - r) / std::sqrt(denom);
}

InfeasibleTarget::InfeasibleTarget(double target, double max_achievable)
    : Error([&] {
          std::ostringstream os;
          os << "Cramer's V target " << target << " is infeasible; maximum achievable is "
             << max_achievable;
          return os.str();
      }()),
      max_(max_achievable) {}

double solve_prevalence(double target_v, double q_south, double p_class) {
    if (!(target_v >= 0.0 && target_v <= 1.0)) throw Error("solve_prevalence: target_v outside [0, 1]");
    if (!(q_south > 0.0 && q_south <= 1.0)) throw Error("solve_prevalence: q_south outside (0, 1]");
    const double vmax = phi_from_prevalence(q_south, 0.0, p_class);
    if (target_v > vmax + 1e-12) throw InfeasibleTarget(target_v, vmax);
    if (target_v >= vmax) return 0.0;
    if (target_v <= 0.0) return q_south;
    // phi decreases monotonically from vmax at r=0 to 0 at r=q_south.
    double lo = 0.0, hi = q_south;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (phi_from_prevalence(q_south, mid, p_class) > target_v)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

double cramers_v_2x2(double a, double b, double c, double d) {
    const double denom = (a + b) * (c + d) * (a + c) * (b + d);
    if (denom <= 0.0) return 0.0;
    return std::min(1.0, std::abs(a * d - b * c) / std::sqrt(denom));
}

double cramers_v(const Split& split) {
    if (split.sequences.empty()) throw Error("cramers_v: empty split");
    double a = 0, b = 0, c = 0, d = 0;
    for (const auto& s : split.sequences) {
        const bool south = s.label == kBiasClass;
        const bool feat = s.has_feature();
        (south ? (feat ? a : b) : (feat ? c : d)) += 1.0;
    }
    return cramers_v_2x2(a, b, c, d);
}

namespace {

Split generate_split(const DatasetConfig& cfg, double r_other, std::string name, int count,
                     std::uint64_t tag) {
    Split split;
    split.name = std::move(name);
    split.sequences.resize(count);
    const std::uint64_t split_seed = derive_seed(cfg.seed, tag);
    const int n = cfg.seq_len;

#pragma omp parallel for schedule(static)
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(split_seed, static_cast<std::uint64_t>(i)));
        SequenceSample& s = split.sequences[i];
        s.id = static_cast<std::uint32_t>(i);
        s.label = label_from_index(i % kNumClasses);
        s.caption = caption_for(s.label);
        const auto centers = sample_trajectory(s.label, n, cfg.geometry, rng);
        s.feature_flags.assign(n, 0);
        s.frames.resize(n);
        for (int t = 0; t < n; ++t) s.frames[t].center = centers[t];

        if (cfg.feature.kind == FeatureKind::None) continue;
        const double prevalence = s.label == kBiasClass ? cfg.q_south : r_other;
        if (!std::bernoulli_distribution(prevalence)(rng)) continue;
        const int start = std::uniform_int_distribution<int>(0, n - cfg.feature_span)(rng);
        std::optional<Rect> object;
        if (cfg.feature.kind == FeatureKind::Object)
            object = place_object(std::span(centers).subspan(start, cfg.feature_span), cfg.geometry,
                                  cfg.feature.object_size, rng);
        for (int t = start; t < start + cfg.feature_span; ++t) {
            s.feature_flags[t] = 1;
            s.frames[t].has_feature = true;
            s.frames[t].object = object;
        }
    }
    return split;
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& config) {
    config.validate();
    Dataset ds;
    ds.config = config;
    ds.r_other = config.feature.kind == FeatureKind::None
                     ? 0.0
                     : solve_prevalence(config.target_cramers_v, config.q_south);
    ds.train = generate_split(config, ds.r_other, "train", config.train_count, 1);
    ds.val = generate_split(config, ds.r_other, "val", config.val_count, 2);
    ds.test = generate_split(config, ds.r_other, "test", config.test_count, 3);
    ds.realized_cramers_v = ds.train.size() ? cramers_v(ds.train) : 0.0;
    return ds;
}

std::vector<ImageGrid> render_sequence(const Dataset& ds, const SequenceSample& s) {
    std::vector<ImageGrid> frames;
    frames.reserve(s.frames.size());
    for (const auto& layout : s.frames)
        frames.push_back(render_layout(layout, ds.config.feature, ds.config.geometry));
    return frames;
}

}  // namespace trove
