#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vtforge/attack.hpp"
#include "vtforge/clustering.hpp"
#include "vtforge/encoder.hpp"
#include "vtforge/error.hpp"
#include "vtforge/rng.hpp"
#include "vtforge/tensor.hpp"

namespace vtforge {

// 100 x cosine similarity of two embeddings
inline double embedding_score(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.size() != b.size() || a.size() == 0)
        fail(ErrKind::kShape, "embedding_score: size mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += double(a.data[i]) * double(b.data[i]);
        na += double(a.data[i]) * double(a.data[i]);
        nb += double(b.data[i]) * double(b.data[i]);
    }
    return 100.0 * dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
}

// image/caption alignment through the shared projection space
inline double clip_score_proxy(const Weights<float>& image_w, const ViTConfig& icfg, const Weights<float>& text_w,
                               const TextConfig& tcfg, const Tensor<float>& image, const std::string& caption) {
    auto img = encode_image(image_w, icfg, image);
    auto txt = encode_text(text_w, tcfg, caption);
    return embedding_score(img.cls, txt);
}

struct DisplacementStats {
    double mean_l2 = 0.0;
    double mean_cos = 0.0;
};

// per-token displacement between two encodings of the same image slot
inline DisplacementStats token_displacement_stats(const EncoderOutput<float>& clean,
                                                  const EncoderOutput<float>& adv) {
    if (!clean.tokens.same_shape(adv.tokens))
        fail(ErrKind::kShape, "token_displacement_stats: token shape mismatch " + shape_str(clean.tokens.shape) +
                                  " vs " + shape_str(adv.tokens.shape));
    int l = clean.tokens.rows(), d = clean.tokens.cols();
    DisplacementStats st;
    for (int i = 0; i < l; ++i) {
        double dist = 0.0, dot = 0.0, na = 0.0, nb = 0.0;
        for (int j = 0; j < d; ++j) {
            double a = clean.tokens(i, j), b = adv.tokens(i, j);
            dist += (a - b) * (a - b);
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        st.mean_l2 += std::sqrt(dist);
        st.mean_cos += dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
    }
    st.mean_l2 /= l;
    st.mean_cos /= l;
    return st;
}

// fraction of tokens whose nearest clean center is no longer the one they
// were assigned to
inline double cluster_escape_rate(const Tensor<float>& adv_tokens, const ClusterModel<float>& cluster) {
    if (adv_tokens.rank() != 2 || static_cast<int>(cluster.labels.size()) != adv_tokens.rows())
        fail(ErrKind::kShape, "cluster_escape_rate: token/label mismatch");
    int l = adv_tokens.rows(), d = adv_tokens.cols();
    if (cluster.centers.cols() != d) fail(ErrKind::kShape, "cluster_escape_rate: center dimension mismatch");
    int escaped = 0;
    for (int i = 0; i < l; ++i) {
        int best = 0;
        double best_d = 1e300;
        for (int c = 0; c < cluster.k; ++c) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) {
                double diff = double(adv_tokens(i, j)) - double(cluster.centers(c, j));
                acc += diff * diff;
            }
            if (acc < best_d) {
                best_d = acc;
                best = c;
            }
        }
        escaped += best != cluster.labels[i];
    }
    return double(escaped) / l;
}

// joint/term losses of an image variant against fixed clean references
inline LossBreakdown losses_at(const Weights<float>& image_w, const ViTConfig& icfg, const Tensor<float>& variant,
                               const EncoderOutput<float>& clean_out, const ClusterModel<float>* cluster,
                               const Tensor<float>* text_cls, const AttackConfig& cfg) {
    Graph<float> g;
    auto xid = g.input("x", variant);
    auto enc = encode_image_into(g, image_w, icfg, xid);
    auto terms = detail::build_joint_loss(g, enc, clean_out, cluster, text_cls, cfg);
    return detail::read_terms(g, terms);
}

struct MetricsReport {
    double clip_score_proxy_clean = 0.0;
    double clip_score_proxy_adv = 0.0;
    DisplacementStats displacement;
    double cluster_escape = 0.0;
    LossBreakdown final_losses;
    bool has_proxy = false;
    bool has_escape = false;
};

inline MetricsReport compute_metrics(const Weights<float>& image_w, const ViTConfig& icfg,
                                     const Weights<float>* text_w, const TextConfig* tcfg,
                                     const Tensor<float>& clean_image, const Tensor<float>& adv_image,
                                     const AttackConfig& cfg) {
    MetricsReport rep;
    auto clean_out = encode_image(image_w, icfg, clean_image);
    auto adv_out = encode_image(image_w, icfg, adv_image);
    rep.displacement = token_displacement_stats(clean_out, adv_out);

    ClusterModel<float> cluster;
    if (cfg.relation.enabled) {
        auto sel = select_k(clean_out.tokens, cfg.k_min, std::min(cfg.k_max, icfg.tokens() - 1), cfg.seed);
        cluster = kmeans(clean_out.tokens, sel.k, cfg.seed);
        rep.cluster_escape = cluster_escape_rate(adv_out.tokens, cluster);
        rep.has_escape = true;
    }

    Tensor<float> text_cls;
    if (!cfg.caption.empty() && text_w && tcfg) {
        text_cls = encode_text(*text_w, *tcfg, cfg.caption);
        rep.clip_score_proxy_clean = embedding_score(clean_out.cls, text_cls);
        rep.clip_score_proxy_adv = embedding_score(adv_out.cls, text_cls);
        rep.has_proxy = true;
    }

    rep.final_losses = losses_at(image_w, icfg, adv_image, clean_out, rep.has_escape ? &cluster : nullptr,
                                 rep.has_proxy && cfg.semantics.enabled ? &text_cls : nullptr, cfg);
    return rep;
}

// one row per (experiment, seed, parameter, metric, value)
struct SweepRow {
    std::string experiment;
    uint64_t seed = 0;
    double parameter = 0.0;
    std::string metric;
    double value = 0.0;
};

// Adds clipped Gaussian pixel noise of each size to the adversarial image
// and reports how the proxy score and joint loss respond.
inline std::vector<SweepRow> noise_defense_sweep(const Weights<float>& image_w, const ViTConfig& icfg,
                                                 const Weights<float>* text_w, const TextConfig* tcfg,
                                                 const Tensor<float>& adv, const Tensor<float>& clean,
                                                 const AttackConfig& cfg, const std::vector<double>& sizes,
                                                 const std::vector<uint64_t>& seeds) {
    if (!adv.same_shape(clean)) fail(ErrKind::kShape, "noise_defense_sweep: image shapes differ");
    double max_dev = 0.0;
    for (size_t i = 0; i < adv.data.size(); ++i)
        max_dev = std::max(max_dev, std::abs(double(adv.data[i]) - double(clean.data[i])));
    if (max_dev > cfg.epsilon + 1e-6)
        fail(ErrKind::kConfig, "noise_defense_sweep: adversarial image leaves the epsilon ball");

    auto clean_out = encode_image(image_w, icfg, clean);
    ClusterModel<float> cluster;
    if (cfg.relation.enabled) {
        auto sel = select_k(clean_out.tokens, cfg.k_min, std::min(cfg.k_max, icfg.tokens() - 1), cfg.seed);
        cluster = kmeans(clean_out.tokens, sel.k, cfg.seed);
    }
    Tensor<float> text_cls;
    if (cfg.semantics.enabled) text_cls = encode_text(*text_w, *tcfg, cfg.caption);

    std::vector<SweepRow> rows;
    for (uint64_t seed : seeds) {
        for (double size : sizes) {
            if (size < 0.0) fail(ErrKind::kConfig, "noise_defense_sweep: negative noise size");
            Tensor<float> noised = adv;
            if (size > 0.0) {
                CounterRng rng(seed, fnv1a64("noise_defense") ^ fnv1a64(&size, sizeof(size)));
                for (size_t i = 0; i < noised.data.size(); ++i) {
                    double noise = std::clamp(size * rng.normal_at(i), -size, size);
                    noised.data[i] = float(std::clamp(double(noised.data[i]) + noise, 0.0, 1.0));
                }
            }
            auto lb = losses_at(image_w, icfg, noised, clean_out, cfg.relation.enabled ? &cluster : nullptr,
                                cfg.semantics.enabled ? &text_cls : nullptr, cfg);
            rows.push_back({"noise_defense", seed, size, "joint_loss", lb.total});
            if (text_w && tcfg && !cfg.caption.empty()) {
                auto enc = encode_image(image_w, icfg, noised);
                rows.push_back({"noise_defense", seed, size, "clip_score_proxy",
                                embedding_score(enc.cls, text_cls)});
            }
        }
    }
    return rows;
}

// One full attack per budget; reports the proxy score and final losses.
inline std::vector<SweepRow> epsilon_sweep(const Weights<float>& image_w, const ViTConfig& icfg,
                                           const Weights<float>* text_w, const TextConfig* tcfg,
                                           const Tensor<float>& image, const AttackConfig& base,
                                           const std::vector<double>& budgets) {
    if (budgets.empty()) fail(ErrKind::kConfig, "epsilon_sweep: no budgets given");
    std::vector<SweepRow> rows;
    for (double eps : budgets) {
        AttackConfig cfg = base;
        cfg.epsilon = eps;
        cfg.validate();  // rejects eps <= 0
        auto res = run_attack(image_w, icfg, text_w, tcfg, image, cfg);
        rows.push_back({"epsilon_sweep", cfg.seed, eps, "joint_loss", res.final_losses.total});
        rows.push_back({"epsilon_sweep", cfg.seed, eps, "feature_loss", res.final_losses.feature});
        rows.push_back({"epsilon_sweep", cfg.seed, eps, "relation_loss", res.final_losses.relation});
        rows.push_back({"epsilon_sweep", cfg.seed, eps, "semantics_loss", res.final_losses.semantics});
        if (text_w && tcfg && !cfg.caption.empty())
            rows.push_back({"epsilon_sweep", cfg.seed, eps, "clip_score_proxy",
                            clip_score_proxy(image_w, icfg, *text_w, *tcfg, res.adversarial, cfg.caption)});
    }
    return rows;
}

// Metrics at requested iteration checkpoints within a single run.
// Checkpoint 0 is the initialization.
inline std::vector<SweepRow> iteration_curve(const Weights<float>& image_w, const ViTConfig& icfg,
                                             const Weights<float>* text_w, const TextConfig* tcfg,
                                             const Tensor<float>& image, const AttackConfig& cfg,
                                             const std::vector<int>& checkpoints) {
    if (checkpoints.empty()) fail(ErrKind::kConfig, "iteration_curve: no checkpoints given");
    for (size_t i = 0; i < checkpoints.size(); ++i) {
        if (checkpoints[i] < 0 || checkpoints[i] > cfg.steps)
            fail(ErrKind::kConfig, "iteration_curve: checkpoint " + std::to_string(checkpoints[i]) +
                                       " outside [0, " + std::to_string(cfg.steps) + "]");
        for (size_t j = i + 1; j < checkpoints.size(); ++j)
            if (checkpoints[i] == checkpoints[j])
                fail(ErrKind::kConfig,
                     "iteration_curve: duplicate checkpoint " + std::to_string(checkpoints[i]));
    }

    std::map<int, Tensor<float>> snapshots;
    auto res = run_attack(image_w, icfg, text_w, tcfg, image, cfg, [&](int step, const Tensor<float>& x) {
        if (std::find(checkpoints.begin(), checkpoints.end(), step) != checkpoints.end())
            snapshots.emplace(step, x);
    });

    Tensor<float> text_cls;
    if (cfg.semantics.enabled) text_cls = encode_text(*text_w, *tcfg, cfg.caption);

    std::vector<SweepRow> rows;
    for (int cp : checkpoints) {
        const Tensor<float>& x = snapshots.at(cp);
        auto lb = losses_at(image_w, icfg, x, res.clean_out, cfg.relation.enabled ? &res.cluster : nullptr,
                            cfg.semantics.enabled ? &text_cls : nullptr, cfg);
        rows.push_back({"iteration_curve", cfg.seed, double(cp), "joint_loss", lb.total});
        rows.push_back({"iteration_curve", cfg.seed, double(cp), "feature_loss", lb.feature});
        rows.push_back({"iteration_curve", cfg.seed, double(cp), "relation_loss", lb.relation});
        rows.push_back({"iteration_curve", cfg.seed, double(cp), "semantics_loss", lb.semantics});
        auto enc = encode_image(image_w, icfg, x);
        auto st = token_displacement_stats(res.clean_out, enc);
        rows.push_back({"iteration_curve", cfg.seed, double(cp), "token_l2", st.mean_l2});
        if (text_w && tcfg && !cfg.caption.empty())
            rows.push_back({"iteration_curve", cfg.seed, double(cp), "clip_score_proxy",
                            embedding_score(enc.cls, text_cls)});
    }
    return rows;
}

}  // namespace vtforge
