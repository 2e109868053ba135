#include "trove/mitigation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "trove/tensor_io.hpp"

namespace trove {

using nlohmann::json;

Eigen::MatrixXf prompted_class_embeddings(const Eigen::MatrixXf& class_embeddings, const Eigen::MatrixXf& context) {
    Eigen::MatrixXf v = class_embeddings + context;
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
        const float n = v.col(c).norm();
        if (!(n > 0.0f)) throw Error("prompted class embedding collapsed to zero");
        v.col(c) /= n;
    }
    return v;
}

std::vector<std::size_t> member_sequences(std::span<const int> image_cluster, int seq_len, std::size_t sequences,
                                          int cluster) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < sequences; ++i)
        for (int f = 0; f < seq_len; ++f)
            if (image_cluster[i * static_cast<std::size_t>(seq_len) + static_cast<std::size_t>(f)] == cluster) {
                out.push_back(i);
                break;
            }
    return out;
}

double prompt_loss_and_gradient(const TemporalModel& model, const Eigen::MatrixXf& embeddings,
                                std::span<const int> labels, std::span<const double> weights,
                                const Eigen::MatrixXf& context, Eigen::MatrixXf* grad) {
    const auto& base = model.params().class_embeddings;
    const double scale = model.params().logit_scale(0, 0);
    const Eigen::MatrixXd v = (base + context).cast<double>();
    Eigen::VectorXd norms = v.colwise().norm().transpose();
    const Eigen::MatrixXd u = v * norms.cwiseInverse().asDiagonal();

    Eigen::MatrixXd e = embeddings.cast<double>();
    for (Eigen::Index i = 0; i < e.cols(); ++i) e.col(i) /= e.col(i).norm();
    const Eigen::MatrixXd cosines = u.transpose() * e;  // classes x B

    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    double loss = 0.0;
    Eigen::MatrixXd dlogits(kNumClasses, e.cols());
    for (Eigen::Index i = 0; i < e.cols(); ++i) {
        const Eigen::VectorXd z = scale * cosines.col(i);
        const double mx = z.maxCoeff();
        const Eigen::VectorXd p = (z.array() - mx).exp();
        const double sum = p.sum();
        const int y = labels[static_cast<std::size_t>(i)];
        const double w = weights[static_cast<std::size_t>(i)] / wsum;
        loss += w * (mx + std::log(sum) - z[y]);
        dlogits.col(i) = w * p / sum;
        dlogits(y, i) -= w;
    }
    if (grad) {
        // d cos(e, u_c) / d v_c = (e - cos * u_c) / |v_c|
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(v.rows(), v.cols());
        for (int c = 0; c < kNumClasses; ++c) {
            const Eigen::VectorXd de = e * dlogits.row(c).transpose();
            const double dc = cosines.row(c).dot(dlogits.row(c));
            g.col(c) = scale * (de - dc * u.col(c)) / norms[c];
        }
        *grad = g.cast<float>();
    }
    return loss;
}

namespace {

double member_accuracy(const TemporalModel& model, const Eigen::MatrixXf& embeddings, std::span<const int> labels,
                       const Eigen::MatrixXf& context) {
    const Eigen::MatrixXf logits =
        model.score(embeddings, prompted_class_embeddings(model.params().class_embeddings, context));
    int hits = 0;
    for (Eigen::Index i = 0; i < logits.cols(); ++i) hits += argmax_column(logits, i) == labels[static_cast<std::size_t>(i)];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace

PromptFit learn_cluster_prompt(const TemporalModel& model, const SplitAnalysis& a, std::span<const int> image_cluster,
                               int cluster, double trove_score, const PromptOptions& opt) {
    PromptFit fit;
    const auto members = member_sequences(image_cluster, a.seq_len, a.sequences(), cluster);
    if (static_cast<int>(members.size()) < opt.min_members) {
        fit.skip_reason = std::to_string(members.size()) + " member sequences, fewer than " +
                          std::to_string(opt.min_members);
        return fit;
    }

    const auto m = static_cast<Eigen::Index>(members.size());
    Eigen::MatrixXf emb(a.sequence_embeddings.rows(), m);
    std::vector<int> labels(members.size());
    for (Eigen::Index j = 0; j < m; ++j) {
        emb.col(j) = a.sequence_embeddings.col(static_cast<Eigen::Index>(members[static_cast<std::size_t>(j)]));
        labels[static_cast<std::size_t>(j)] = a.labels[members[static_cast<std::size_t>(j)]];
    }
    std::vector<double> weights(members.size(), 1.0);
    if (opt.class_balanced) {
        std::array<int, kNumClasses> counts{};
        for (int y : labels) ++counts[static_cast<std::size_t>(y)];
        for (std::size_t j = 0; j < labels.size(); ++j) weights[j] = 1.0 / counts[static_cast<std::size_t>(labels[j])];
    }

    ClusterPrompt p;
    p.cluster = cluster;
    p.trove_score = trove_score;
    p.member_sequences = static_cast<int>(m);
    const Eigen::Index dim = model.params().class_embeddings.rows();
    Eigen::MatrixXf context = Eigen::MatrixXf::Zero(dim, kNumClasses);
    Eigen::MatrixXf velocity = Eigen::MatrixXf::Zero(dim, kNumClasses);
    p.context = context;
    p.base_accuracy = p.fit_accuracy = member_accuracy(model, emb, labels, context);

    Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(cluster)));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    Eigen::MatrixXf grad;
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index start = 0; start < m; start += opt.batch_size) {
            const Eigen::Index len = std::min<Eigen::Index>(opt.batch_size, m - start);
            Eigen::MatrixXf be(dim, len);
            std::vector<int> bl(static_cast<std::size_t>(len));
            std::vector<double> bw(static_cast<std::size_t>(len));
            for (Eigen::Index j = 0; j < len; ++j) {
                const auto src = order[static_cast<std::size_t>(start + j)];
                be.col(j) = emb.col(src);
                bl[static_cast<std::size_t>(j)] = labels[static_cast<std::size_t>(src)];
                bw[static_cast<std::size_t>(j)] = weights[static_cast<std::size_t>(src)];
            }
            const double loss = prompt_loss_and_gradient(model, be, bl, bw, context, &grad);
            if (!std::isfinite(loss)) throw Error("prompt fit for cluster " + std::to_string(cluster) + ": non-finite loss");
            velocity = static_cast<float>(opt.momentum) * velocity + grad;
            context -= static_cast<float>(opt.learning_rate) * velocity;
        }
        const double acc = member_accuracy(model, emb, labels, context);
        if (acc > p.fit_accuracy) {
            p.fit_accuracy = acc;
            p.best_epoch = epoch;
            p.context = context;
        }
    }
    fit.prompt = std::move(p);
    return fit;
}

PromptSet learn_prompts(const TemporalModel& model, const SplitAnalysis& discovery, const BiasReport& report,
                        int top_k, const PromptOptions& opt) {
    if (report.clusters.assignment.size() != discovery.images())
        throw Error("learn_prompts: report clusters do not cover the discovery split");
    const auto top = top_clusters(report, top_k);
    std::vector<PromptFit> fits(top.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < top.size(); ++i)
        fits[i] = learn_cluster_prompt(model, discovery, report.clusters.assignment, top[i].first, top[i].second, opt);
    PromptSet set;
    for (std::size_t i = 0; i < top.size(); ++i) {
        if (fits[i].prompt)
            set.prompts.push_back(std::move(*fits[i].prompt));
        else
            set.skipped.emplace_back(top[i].first, fits[i].skip_reason);
    }
    return set;
}

RoutedPrediction route_predict(const TemporalModel& model, const PromptSet& prompts, const ClusterModel& clusters,
                               const SplitAnalysis& a) {
    RoutedPrediction out;
    out.logits = a.dynamic_logits;
    out.prompt.assign(a.sequences(), -1);
    if (prompts.prompts.empty()) return out;

    const auto image_cluster = clusters.assign(a.static_embeddings.cast<double>());
    std::vector<int> prompt_of_cluster(static_cast<std::size_t>(clusters.k), -1);
    for (std::size_t p = 0; p < prompts.prompts.size(); ++p) {
        const int c = prompts.prompts[p].cluster;
        if (c < 0 || c >= clusters.k) throw Error("prompt refers to unknown cluster " + std::to_string(c));
        auto& slot = prompt_of_cluster[static_cast<std::size_t>(c)];
        if (slot < 0 || prompts.prompts[p].trove_score > prompts.prompts[static_cast<std::size_t>(slot)].trove_score)
            slot = static_cast<int>(p);
    }

    std::vector<Eigen::MatrixXf> adjusted;
    for (const auto& p : prompts.prompts)
        adjusted.push_back(prompted_class_embeddings(model.params().class_embeddings, p.context));

    for (std::size_t i = 0; i < a.sequences(); ++i) {
        int chosen = -1;
        for (int f = 0; f < a.seq_len; ++f) {
            const int p = prompt_of_cluster[static_cast<std::size_t>(image_cluster[i * static_cast<std::size_t>(a.seq_len) + static_cast<std::size_t>(f)])];
            if (p < 0) continue;
            const auto better = [&](int q, int r) {
                const double sq = prompts.prompts[static_cast<std::size_t>(q)].trove_score;
                const double sr = prompts.prompts[static_cast<std::size_t>(r)].trove_score;
                return sq > sr || (sq == sr && q < r);
            };
            if (chosen < 0 || better(p, chosen)) chosen = p;
        }
        if (chosen < 0) continue;
        out.prompt[i] = chosen;
        out.logits.col(static_cast<Eigen::Index>(i)) =
            model.score(a.sequence_embeddings.col(static_cast<Eigen::Index>(i)), adjusted[static_cast<std::size_t>(chosen)]);
    }
    return out;
}

MitigationTable evaluate_mitigation(const TemporalModel& model, const PromptSet& prompts, const ClusterModel& clusters,
                                    const SplitAnalysis& a, const Split& split, int affected_class) {
    if (split.size() != a.sequences()) throw Error("evaluate_mitigation: split does not match the analysis");
    const auto routed = route_predict(model, prompts, clusters, a);
    const auto image_cluster = clusters.assign(a.static_embeddings.cast<double>());
    std::vector<char> prompted(static_cast<std::size_t>(clusters.k), 0);
    for (const auto& p : prompts.prompts) prompted[static_cast<std::size_t>(p.cluster)] = 1;

    MitigationTable t;
    t.affected_class = affected_class;
    t.prompts = static_cast<int>(prompts.prompts.size());
    auto add = [](SubsetAccuracy& s, bool base_hit, bool mit_hit) {
        ++s.count;
        s.base += base_hit;
        s.mitigated += mit_hit;
    };
    for (std::size_t i = 0; i < a.sequences(); ++i) {
        const int y = a.labels[i];
        const bool base_hit = a.predicted(i) == y;
        const bool mit_hit = argmax_column(routed.logits, static_cast<Eigen::Index>(i)) == y;
        add(t.all, base_hit, mit_hit);
        bool touches = false;
        for (int f = 0; f < a.seq_len && !touches; ++f)
            touches = prompted[static_cast<std::size_t>(image_cluster[i * static_cast<std::size_t>(a.seq_len) + static_cast<std::size_t>(f)])];
        if (!touches) continue;
        add(t.overall, base_hit, mit_hit);
        if (y != affected_class) continue;
        add(t.label, base_hit, mit_hit);
        if (split.sequences[i].has_feature()) add(t.label_with_feature, base_hit, mit_hit);
    }
    for (auto* s : {&t.all, &t.overall, &t.label, &t.label_with_feature})
        if (s->count > 0) {
            s->base /= s->count;
            s->mitigated /= s->count;
        }
    return t;
}

std::filesystem::path prompts_path_for(const std::filesystem::path& model_file) {
    auto p = model_file;
    p.replace_extension(".prompts.bin");
    return p;
}

void save_prompts(const PromptSet& prompts, const std::filesystem::path& file) {
    std::vector<NamedTensor> tensors;
    json meta = {{"format", "trove-prompts"}, {"version", 1}, {"prompts", json::array()}, {"skipped", json::array()}};
    for (const auto& p : prompts.prompts) {
        tensors.push_back({"prompt." + std::to_string(p.cluster) + ".context", p.context.cast<double>(), false});
        meta["prompts"].push_back({{"cluster", p.cluster},
                                   {"trove_score", p.trove_score},
                                   {"member_sequences", p.member_sequences},
                                   {"base_accuracy", p.base_accuracy},
                                   {"fit_accuracy", p.fit_accuracy},
                                   {"best_epoch", p.best_epoch}});
    }
    for (const auto& [c, reason] : prompts.skipped) meta["skipped"].push_back({{"cluster", c}, {"reason", reason}});
    write_tensors(file, tensors);
    auto sidecar = file;
    sidecar.replace_extension(".json");
    std::ofstream(sidecar) << meta.dump(2) << '\n';
}

PromptSet load_prompts(const std::filesystem::path& file) {
    auto sidecar = file;
    sidecar.replace_extension(".json");
    std::ifstream is(sidecar);
    if (!is) throw Error("missing prompt sidecar " + sidecar.string());
    const json meta = json::parse(is);
    const auto tensors = read_tensors(file);
    PromptSet set;
    for (const auto& j : meta.at("prompts")) {
        ClusterPrompt p;
        p.cluster = j.at("cluster");
        p.trove_score = j.at("trove_score");
        p.member_sequences = j.value("member_sequences", 0);
        p.base_accuracy = j.value("base_accuracy", 0.0);
        p.fit_accuracy = j.value("fit_accuracy", 0.0);
        p.best_epoch = j.value("best_epoch", 0);
        p.context = find_tensor(tensors, "prompt." + std::to_string(p.cluster) + ".context").values.cast<float>();
        set.prompts.push_back(std::move(p));
    }
    for (const auto& j : meta.value("skipped", json::array())) set.skipped.emplace_back(j.at("cluster"), j.at("reason"));
    return set;
}

}  // namespace trove
