#include "trove/trove.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace trove {

using nlohmann::json;

int SplitAnalysis::predicted(std::size_t seq) const {
    return argmax_column(dynamic_logits, static_cast<Eigen::Index>(seq));
}

SplitAnalysis analyze_split(const TemporalModel& model, const FeatureBank& bank) {
    SplitAnalysis a;
    a.seq_len = bank.seq_len();
    a.labels = bank.labels;
    a.sequence_ids.resize(a.labels.size());
    std::iota(a.sequence_ids.begin(), a.sequence_ids.end(), 0u);

    const auto dyn = model.forward_features(model.select_inputs(bank));
    a.dynamic_logits = dyn.logits;
    a.sequence_embeddings = dyn.embeddings;

    const Eigen::Index n = bank.count();
    const Eigen::Index images = n * a.seq_len;
    const int d_enc = static_cast<int>(bank.by_position.front().rows());
    a.static_embeddings.resize(model.config().embed_dim, images);
    a.static_logits.resize(kNumClasses, images);
    constexpr Eigen::Index kChunk = 2048;
    Eigen::MatrixXf chunk;
    for (Eigen::Index start = 0; start < images; start += kChunk) {
        const Eigen::Index len = std::min(kChunk, images - start);
        chunk.resize(d_enc, len);
        for (Eigen::Index j = 0; j < len; ++j) {
            const Eigen::Index id = start + j;
            chunk.col(j) = bank.by_position[static_cast<std::size_t>(id % a.seq_len)].col(id / a.seq_len);
        }
        const auto out = model.static_features(chunk);
        a.static_embeddings.middleCols(start, len) = out.embeddings;
        a.static_logits.middleCols(start, len) = out.logits;
    }
    return a;
}

ImageEmbeddings extract_image_embeddings(const TemporalModel& model, const FeatureBank& bank) {
    const SplitAnalysis a = analyze_split(model, bank);
    ImageEmbeddings out;
    out.embeddings = a.static_embeddings.cast<double>();
    out.index.reserve(a.images());
    for (std::size_t i = 0; i < a.sequences(); ++i)
        for (int t = 0; t < a.seq_len; ++t) out.index.push_back({static_cast<std::uint32_t>(i), t});
    return out;
}

// ---------------------------------------------------------------- calibration

std::array<double, kNumClasses> softmax(const Eigen::Ref<const Eigen::VectorXd>& logits, double temperature) {
    std::array<double, kNumClasses> p{};
    const double mx = logits.maxCoeff() / temperature;
    double z = 0.0;
    for (int c = 0; c < kNumClasses; ++c) z += p[c] = std::exp(logits[c] / temperature - mx);
    for (auto& v : p) v /= z;
    return p;
}

double mean_nll(const Eigen::MatrixXd& logits, std::span<const int> labels, double t) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.cols(); ++i) {
        const auto col = logits.col(i) / t;
        const double mx = col.maxCoeff();
        total += mx + std::log((col.array() - mx).exp().sum()) - col[labels[static_cast<std::size_t>(i)]];
    }
    return total / static_cast<double>(logits.cols());
}

Temperature fit_temperature(const Eigen::MatrixXd& logits, std::span<const int> labels) {
    constexpr double kLo = 0.05, kHi = 20.0, kTol = 1e-3;
    if (logits.cols() == 0) throw Error("fit_temperature: empty validation logits");
    if (static_cast<Eigen::Index>(labels.size()) != logits.cols()) throw Error("fit_temperature: label count mismatch");
    if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) == labels.end())
        throw Error("fit_temperature: validation labels contain a single class");
    bool flat = true;
    for (Eigen::Index i = 0; i < logits.cols() && flat; ++i)
        flat = logits.col(i).maxCoeff() == logits.col(i).minCoeff();
    if (flat) return {kLo};

    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = kLo, b = kHi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = mean_nll(logits, labels, c), fd = mean_nll(logits, labels, d);
    while (b - a > kTol) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = mean_nll(logits, labels, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = mean_nll(logits, labels, d);
        }
    }
    return {0.5 * (a + b)};
}

std::vector<PredictionRecord> build_records(const SplitAnalysis& a, Temperature t) {
    std::vector<PredictionRecord> records(a.sequences());
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto& r = records[i];
        r.sequence_id = a.sequence_ids[i];
        r.label = a.labels[i];
        r.predicted = a.predicted(i);
        r.dynamic_logits = column_logits(a.dynamic_logits, static_cast<Eigen::Index>(i));
        for (int f = 0; f < a.seq_len; ++f) {
            const auto id = static_cast<Eigen::Index>(i) * a.seq_len + f;
            r.image_ids.push_back(static_cast<int>(id));
            r.static_logits.push_back(column_logits(a.static_logits, id));
            r.static_probs.push_back(softmax(a.static_logits.col(id).cast<double>(), t.value));
        }
    }
    return records;
}

// ---------------------------------------------------------------- scores

namespace {

bool touches(const PredictionRecord& r, std::span<const int> image_cluster, int cluster) {
    return std::any_of(r.image_ids.begin(), r.image_ids.end(),
                       [&](int id) { return image_cluster[static_cast<std::size_t>(id)] == cluster; });
}

}  // namespace

ScoreOutcome compute_ecs(std::span<const PredictionRecord> records, std::span<const int> image_cluster, int cluster,
                         int y) {
    ScoreOutcome out;
    int correct_with = 0, correct_without = 0;
    for (const auto& r : records) {
        if (r.label != y) continue;
        if (touches(r, image_cluster, cluster)) {
            ++out.with_count;
            correct_with += r.predicted == y;
        } else {
            ++out.without_count;
            correct_without += r.predicted == y;
        }
    }
    if (out.with_count == 0 || out.without_count == 0) {
        out.skip_reason = out.with_count == 0 ? "no label-y sequence touches the cluster"
                                              : "every label-y sequence touches the cluster";
        return out;
    }
    out.value = static_cast<double>(correct_without) / out.without_count -
                static_cast<double>(correct_with) / out.with_count;
    return out;
}

ScoreOutcome compute_sbs(std::span<const PredictionRecord> records, std::span<const int> image_cluster, int cluster,
                         int y, Temperature t) {
    ScoreOutcome out;
    double total = 0.0;
    for (const auto& r : records) {
        if (r.label != y || r.predicted == y) continue;
        for (std::size_t f = 0; f < r.image_ids.size(); ++f) {
            if (image_cluster[static_cast<std::size_t>(r.image_ids[f])] != cluster) continue;
            Eigen::VectorXd z(kNumClasses);
            for (int c = 0; c < kNumClasses; ++c) z[c] = r.static_logits[f][c];
            total += softmax(z, t.value)[static_cast<std::size_t>(r.predicted)];
            ++out.with_count;
        }
    }
    if (out.with_count == 0) {
        out.skip_reason = "no mispredicted label-y images in the cluster";
        return out;
    }
    out.value = total / out.with_count;
    return out;
}

std::string_view ranking_mode_name(RankingMode m) { return m == RankingMode::Full ? "ecs+sbs" : "sbs-only"; }

namespace {

void rank_candidates(BiasReport& report) {
    for (auto& list : report.per_class) list.clear();
    for (const auto& c : report.scored) {
        const bool keep = report.mode == RankingMode::Full
                              ? (c.ecs >= report.ecs_threshold && c.sbs > report.sbs_threshold)
                              : c.sbs > report.sbs_threshold;
        if (keep) report.per_class[static_cast<std::size_t>(c.label)].push_back(c);
    }
    const auto key = [&](const BiasCandidate& c) { return report.mode == RankingMode::Full ? c.trove_score : c.sbs; };
    for (auto& list : report.per_class)
        std::stable_sort(list.begin(), list.end(), [&](const BiasCandidate& a, const BiasCandidate& b) {
            if (key(a) != key(b)) return key(a) > key(b);
            return a.cluster < b.cluster;
        });
}

}  // namespace

BiasReport discover_from_analysis(const SplitAnalysis& a, const Eigen::MatrixXd& image_embeddings,
                                  const DiscoverOptions& opt) {
    if (a.sequences() == 0) throw Error("discover: empty split");
    if (image_embeddings.cols() != static_cast<Eigen::Index>(a.images()))
        throw Error("discover: embedding count does not match the number of images");
    BiasReport report;
    report.mode = opt.mode;
    report.ecs_threshold = opt.ecs_threshold;
    report.sbs_threshold = opt.sbs_threshold;
    report.temperature = fit_temperature(a.dynamic_logits.cast<double>(), a.labels);
    const auto records = build_records(a, report.temperature);

    std::vector<int> ks;
    for (int k : opt.k_range)
        if (k <= image_embeddings.cols()) ks.push_back(k);
    if (ks.empty()) throw Error("discover: no feasible k in the configured range");
    auto selection = select_k(image_embeddings, ks, opt.seed, opt.max_silhouette_points, opt.kmeans_restarts);
    report.clusters = std::move(selection.model);
    report.silhouette = selection.best_silhouette;
    report.k_scores = std::move(selection.scores);
    report.silhouette_subsampled = selection.subsampled;
    report.silhouette_points = selection.silhouette_points;
    const auto& assignment = report.clusters.assignment;

    // Members per cluster, nearest to the centroid first.
    std::vector<std::vector<int>> members(static_cast<std::size_t>(report.clusters.k));
    for (std::size_t i = 0; i < assignment.size(); ++i) members[static_cast<std::size_t>(assignment[i])].push_back(static_cast<int>(i));
    for (auto& m : members)
        std::stable_sort(m.begin(), m.end(), [&](int x, int y) {
            return report.clusters.similarity[static_cast<std::size_t>(x)] > report.clusters.similarity[static_cast<std::size_t>(y)];
        });

    for (int c = 0; c < report.clusters.k; ++c) {
        std::array<bool, kNumClasses> present{};
        for (const auto& r : records)
            if (touches(r, assignment, c)) present[static_cast<std::size_t>(r.label)] = true;
        for (int y = 0; y < kNumClasses; ++y) {
            if (!present[static_cast<std::size_t>(y)]) continue;
            const auto ecs = compute_ecs(records, assignment, c, y);
            if (!ecs.value) {
                report.skipped.push_back({c, y, "ECS undefined: " + ecs.skip_reason});
                continue;
            }
            const auto sbs = compute_sbs(records, assignment, c, y, report.temperature);
            if (!sbs.value) {
                report.skipped.push_back({c, y, "SBS undefined: " + sbs.skip_reason});
                continue;
            }
            BiasCandidate cand;
            cand.cluster = c;
            cand.label = y;
            cand.ecs = *ecs.value;
            cand.sbs = *sbs.value;
            cand.trove_score = cand.ecs + cand.sbs;
            cand.cluster_images = static_cast<int>(members[static_cast<std::size_t>(c)].size());
            cand.wrong_images = sbs.with_count;
            cand.sequences_with = ecs.with_count;
            cand.sequences_without = ecs.without_count;
            cand.members = members[static_cast<std::size_t>(c)];
            report.scored.push_back(std::move(cand));
        }
    }
    rank_candidates(report);
    report.provenance["k"] = report.clusters.k;
    report.provenance["temperature"] = report.temperature.value;
    report.provenance["temperature_fit_split"] = "validation (same split as discovery)";
    report.provenance["ranked_images"] = "all cluster members, any parent label";
    report.provenance["silhouette_subsampled"] = report.silhouette_subsampled;
    report.provenance["silhouette_points"] = report.silhouette_points;
    report.provenance["cluster_seed"] = opt.seed;
    report.provenance["kmeans_restarts"] = opt.kmeans_restarts;
    return report;
}

BiasReport discover(const TemporalModel& model, const FeatureBank& validation, const DiscoverOptions& opt) {
    const SplitAnalysis a = analyze_split(model, validation);
    return discover_from_analysis(a, a.static_embeddings.cast<double>(), opt);
}

BiasReport with_ranking(const BiasReport& report, RankingMode mode) {
    BiasReport out = report;
    out.mode = mode;
    rank_candidates(out);
    return out;
}

std::vector<int> rank_images(const BiasReport& report, int y) {
    std::vector<int> out;
    for (const auto& c : report.per_class.at(static_cast<std::size_t>(y)))
        out.insert(out.end(), c.members.begin(), c.members.end());
    return out;
}

std::vector<std::pair<int, double>> top_clusters(const BiasReport& report, int top_k) {
    std::vector<std::pair<int, double>> best;
    for (const auto& list : report.per_class)
        for (const auto& c : list) {
            const double key = report.mode == RankingMode::Full ? c.trove_score : c.sbs;
            auto it = std::find_if(best.begin(), best.end(), [&](const auto& p) { return p.first == c.cluster; });
            if (it == best.end())
                best.emplace_back(c.cluster, key);
            else
                it->second = std::max(it->second, key);
        }
    std::stable_sort(best.begin(), best.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (static_cast<int>(best.size()) > top_k) best.resize(static_cast<std::size_t>(std::max(top_k, 0)));
    return best;
}

// ---------------------------------------------------------------- persistence

namespace {

json candidate_json(const BiasCandidate& c) {
    return {{"cluster", c.cluster},
            {"label", label_name(label_from_index(c.label))},
            {"ecs", c.ecs},
            {"sbs", c.sbs},
            {"trove_score", c.trove_score},
            {"cluster_images", c.cluster_images},
            {"wrong_images", c.wrong_images},
            {"sequences_with", c.sequences_with},
            {"sequences_without", c.sequences_without},
            {"members", c.members}};
}

BiasCandidate candidate_from_json(const json& j) {
    BiasCandidate c;
    c.cluster = j.at("cluster");
    c.label = index_of(parse_label(j.at("label").get<std::string>()).value());
    c.ecs = j.at("ecs");
    c.sbs = j.at("sbs");
    c.trove_score = j.at("trove_score");
    c.cluster_images = j.value("cluster_images", 0);
    c.wrong_images = j.value("wrong_images", 0);
    c.sequences_with = j.value("sequences_with", 0);
    c.sequences_without = j.value("sequences_without", 0);
    c.members = j.at("members").get<std::vector<int>>();
    return c;
}

}  // namespace

json to_json(const BiasReport& r) {
    json classes = json::array();
    for (int y = 0; y < kNumClasses; ++y) {
        json cands = json::array();
        for (const auto& c : r.per_class[static_cast<std::size_t>(y)]) cands.push_back(candidate_json(c));
        classes.push_back({{"label", label_name(label_from_index(y))}, {"candidates", cands}});
    }
    json scored = json::array();
    for (const auto& c : r.scored) {
        auto j = candidate_json(c);
        j.erase("members");
        scored.push_back(std::move(j));
    }
    json skipped = json::array();
    for (const auto& s : r.skipped)
        skipped.push_back({{"cluster", s.cluster}, {"label", label_name(label_from_index(s.label))}, {"reason", s.reason}});
    json kscores = json::array();
    for (const auto& [k, s] : r.k_scores) kscores.push_back({{"k", k}, {"silhouette", std::isfinite(s) ? json(s) : json(nullptr)}});
    return {{"format", "trove-report"},
            {"version", 1},
            {"ranking", ranking_mode_name(r.mode)},
            {"temperature", r.temperature.value},
            {"k", r.clusters.k},
            {"silhouette", r.silhouette},
            {"k_scores", kscores},
            {"ecs_threshold", r.ecs_threshold},
            {"sbs_threshold", r.sbs_threshold},
            {"provenance", r.provenance},
            {"classes", classes},
            {"scored", scored},
            {"skipped", skipped}};
}

void save_report(const BiasReport& report, const SplitAnalysis& a, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "report.json") << to_json(report).dump(2) << '\n';
    for (int y = 0; y < kNumClasses; ++y) {
        std::ofstream csv(dir / ("ranking_" + std::string(label_name(label_from_index(y))) + ".csv"));
        csv << "rank,image_id,sequence_id,frame,cluster,similarity\n";
        csv.precision(10);
        int rank = 0;
        for (const auto& c : report.per_class[static_cast<std::size_t>(y)])
            for (int id : c.members)
                csv << rank++ << ',' << id << ',' << a.sequence_ids[static_cast<std::size_t>(id / a.seq_len)] << ','
                    << id % a.seq_len << ',' << c.cluster << ',' << report.clusters.similarity[static_cast<std::size_t>(id)]
                    << '\n';
    }
    save_cluster_model(report.clusters, dir / "clusters");
}

BiasReport load_report(const std::filesystem::path& dir) {
    std::ifstream is(dir / "report.json");
    if (!is) throw Error("missing report.json in " + dir.string());
    const json j = json::parse(is);
    BiasReport r;
    r.mode = j.at("ranking").get<std::string>() == "sbs-only" ? RankingMode::SbsOnly : RankingMode::Full;
    r.temperature.value = j.at("temperature");
    r.silhouette = j.value("silhouette", 0.0);
    r.ecs_threshold = j.value("ecs_threshold", 0.1);
    r.sbs_threshold = j.value("sbs_threshold", 0.25);
    r.provenance = j.value("provenance", json::object());
    for (const auto& cls : j.at("classes")) {
        const int y = index_of(parse_label(cls.at("label").get<std::string>()).value());
        for (const auto& c : cls.at("candidates")) r.per_class[static_cast<std::size_t>(y)].push_back(candidate_from_json(c));
    }
    for (const auto& s : j.value("skipped", json::array()))
        r.skipped.push_back({s.at("cluster"), index_of(parse_label(s.at("label").get<std::string>()).value()), s.at("reason")});
    for (const auto& k : j.value("k_scores", json::array()))
        r.k_scores.emplace_back(k.at("k").get<int>(), k.at("silhouette").is_null() ? -std::numeric_limits<double>::infinity()
                                                                                  : k.at("silhouette").get<double>());
    r.silhouette_subsampled = r.provenance.value("silhouette_subsampled", false);
    r.silhouette_points = r.provenance.value("silhouette_points", 0);
    r.clusters = load_cluster_model(dir / "clusters");

    // Scored pairs are stored without members; rebuild them from the cluster model.
    std::vector<std::vector<int>> members(static_cast<std::size_t>(r.clusters.k));
    for (std::size_t i = 0; i < r.clusters.assignment.size(); ++i)
        members[static_cast<std::size_t>(r.clusters.assignment[i])].push_back(static_cast<int>(i));
    for (auto& m : members)
        std::stable_sort(m.begin(), m.end(), [&](int x, int y) {
            return r.clusters.similarity[static_cast<std::size_t>(x)] > r.clusters.similarity[static_cast<std::size_t>(y)];
        });
    for (auto c : j.value("scored", json::array())) {
        c["members"] = json::array();
        auto cand = candidate_from_json(c);
        cand.members = members.at(static_cast<std::size_t>(cand.cluster));
        r.scored.push_back(std::move(cand));
    }
    return r;
}

}  // namespace trove
