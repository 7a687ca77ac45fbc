#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vtforge/clustering.hpp"
#include "vtforge/encoder.hpp"
#include "vtforge/error.hpp"
#include "vtforge/graph.hpp"
#include "vtforge/rng.hpp"
#include "vtforge/tensor.hpp"

namespace vtforge {

enum class Divergence { kMse, kKl };

inline const char* divergence_name(Divergence d) { return d == Divergence::kMse ? "mse" : "kl"; }

struct AttackTerm {
    bool enabled = true;
    double weight = 1.0;
};

struct AttackConfig {
    double epsilon = 8.0 / 255.0;  // L-inf budget in [0,1] pixel units
    double alpha = 1.0 / 255.0;    // step size
    int steps = 1000;
    Divergence divergence = Divergence::kMse;
    AttackTerm feature;
    AttackTerm relation;
    AttackTerm semantics;
    int k_min = 2;
    int k_max = 10;
    double init_noise_std = -1.0;  // negative -> epsilon / 2
    uint64_t seed = 0;
    std::string caption;  // required when the semantics term is enabled

    double noise_std() const { return init_noise_std < 0.0 ? epsilon * 0.5 : init_noise_std; }

    void validate() const {
        if (!(epsilon > 0.0)) fail(ErrKind::kConfig, "attack config: epsilon must be > 0");
        if (!(alpha > 0.0)) fail(ErrKind::kConfig, "attack config: alpha must be > 0");
        if (steps < 1) fail(ErrKind::kConfig, "attack config: steps must be >= 1");
        if (feature.weight < 0.0 || relation.weight < 0.0 || semantics.weight < 0.0)
            fail(ErrKind::kConfig, "attack config: term weights must be >= 0");
        if (!feature.enabled && !relation.enabled && !semantics.enabled)
            fail(ErrKind::kConfig, "attack config: at least one loss term must be enabled");
        if (semantics.enabled && caption.empty())
            fail(ErrKind::kConfig, "attack config: semantics term enabled but no caption given");
        if (relation.enabled && (k_min < 2 || k_min > k_max))
            fail(ErrKind::kConfig, "attack config: invalid k interval [" + std::to_string(k_min) + "," +
                                       std::to_string(k_max) + "]");
    }
};

struct LossBreakdown {
    double feature = 0.0;
    double relation = 0.0;
    double semantics = 0.0;
    double total = 0.0;

    bool finite() const {
        return std::isfinite(feature) && std::isfinite(relation) && std::isfinite(semantics) && std::isfinite(total);
    }
};

struct AttackResult {
    Tensor<float> adversarial;
    std::vector<LossBreakdown> trace;  // loss at iterates 0 .. K-1
    LossBreakdown final_losses;        // at the returned adversarial image
    EncoderOutput<float> clean_out;
    EncoderOutput<float> adv_out;
    ClusterModel<float> cluster;  // populated iff the relation term ran
    int iterations = 0;
    uint64_t image_weights_fp = 0;
    uint64_t text_weights_fp = 0;
    AttackConfig config;
};

// called with (completed_steps, iterate); 0 is the initialization
using StepObserver = std::function<void(int, const Tensor<float>&)>;

// ---- loss terms (graph builders, usable at float and double) ----

constexpr double kSemanticsGuard = 1e-6;

// sum over tokens of the per-token divergence between adv and clean rows;
// MSE averages over the feature axis
template <typename T>
typename Graph<T>::Id feature_loss_into(Graph<T>& g, typename Graph<T>::Id adv_tokens,
                                        const Tensor<T>& clean_tokens, Divergence div) {
    const auto& shape = g.value(adv_tokens).shape;
    if (shape != clean_tokens.shape)
        fail(ErrKind::kShape, "feature_loss: shape mismatch " + shape_str(shape) + " vs " +
                                  shape_str(clean_tokens.shape));
    auto clean = g.constant(clean_tokens);
    if (div == Divergence::kKl) return g.kl_softmax_rows(clean, adv_tokens);
    auto diff = g.sub(adv_tokens, clean);
    return g.scalar_mul(g.sum(g.mul(diff, diff)), T(1.0 / clean_tokens.cols()));
}

// same divergence, measured against each token's clean cluster center
template <typename T>
typename Graph<T>::Id relation_loss_into(Graph<T>& g, typename Graph<T>::Id adv_tokens,
                                         const ClusterModel<T>& cluster, Divergence div) {
    const auto& shape = g.value(adv_tokens).shape;
    if (static_cast<int>(cluster.labels.size()) != shape[0])
        fail(ErrKind::kShape, "relation_loss: " + std::to_string(cluster.labels.size()) + " labels for " +
                                  std::to_string(shape[0]) + " tokens");
    for (int l : cluster.labels)
        if (l < 0 || l >= cluster.k)
            fail(ErrKind::kConfig, "relation_loss: label " + std::to_string(l) + " out of range [0," +
                                       std::to_string(cluster.k) + ")");
    auto centers = g.embedding_lookup(g.constant(cluster.centers), cluster.labels);
    if (div == Divergence::kKl) return g.kl_softmax_rows(centers, adv_tokens);
    auto diff = g.sub(adv_tokens, centers);
    return g.scalar_mul(g.sum(g.mul(diff, diff)), T(1.0 / cluster.centers.cols()));
}

// 1 / (1 + cos + 1e-6); maximizing drives the embeddings antiparallel
template <typename T>
typename Graph<T>::Id semantics_loss_into(Graph<T>& g, typename Graph<T>::Id adv_cls,
                                          const Tensor<T>& text_cls) {
    double norm = 0.0;
    for (T v : text_cls.data) norm += double(v) * double(v);
    if (norm == 0.0) fail(ErrKind::kNumeric, "semantics_loss: zero-norm text embedding");
    auto cos = g.cosine_similarity(adv_cls, g.constant(text_cls));
    return g.reciprocal(g.scalar_add(cos, T(1.0 + kSemanticsGuard)));
}

// ---- value-level forms of the loss terms ----

template <typename T>
double feature_loss(const Tensor<T>& adv_tokens, const Tensor<T>& clean_tokens, Divergence div) {
    Graph<T> g;
    auto id = feature_loss_into(g, g.constant(adv_tokens), clean_tokens, div);
    return double(g.value(id).data[0]);
}

template <typename T>
double relation_loss(const Tensor<T>& adv_tokens, const ClusterModel<T>& cluster, Divergence div) {
    Graph<T> g;
    auto id = relation_loss_into(g, g.constant(adv_tokens), cluster, div);
    return double(g.value(id).data[0]);
}

template <typename T>
double semantics_loss(const Tensor<T>& adv_cls, const Tensor<T>& text_cls) {
    double norm = 0.0;
    for (T v : adv_cls.data) norm += double(v) * double(v);
    if (norm == 0.0) fail(ErrKind::kNumeric, "semantics_loss: zero-norm image embedding");
    Graph<T> g;
    auto id = semantics_loss_into(g, g.constant(adv_cls), text_cls);
    return double(g.value(id).data[0]);
}

// ---- PGD machinery ----

// x + clip(N(0, noise_std^2), -eps, eps), then clipped into [0,1]
inline Tensor<float> init_adversarial(const Tensor<float>& x, double eps, double noise_std, uint64_t seed) {
    CounterRng rng(seed, fnv1a64("init_adversarial"));
    Tensor<float> out = x;
    for (size_t i = 0; i < out.data.size(); ++i) {
        double noise = noise_std > 0.0 ? noise_std * rng.normal_at(i) : 0.0;
        noise = std::clamp(noise, -eps, eps);
        out.data[i] = float(std::clamp(double(x.data[i]) + noise, 0.0, 1.0));
    }
    out.requires_grad = false;
    out.grad.clear();
    return out;
}

// one sign-gradient ascent step followed by the epsilon-ball and [0,1]
// projections; sign(0) = 0
inline Tensor<float> pgd_step(const Tensor<float>& x_adv, const std::vector<float>& grad, double alpha,
                              const Tensor<float>& x_clean, double eps) {
    if (grad.size() != x_adv.data.size() || !x_adv.same_shape(x_clean))
        fail(ErrKind::kShape, "pgd_step: operand sizes disagree");
    Tensor<float> out = x_adv;
    for (size_t i = 0; i < out.data.size(); ++i) {
        double gv = double(grad[i]);
        double sign = gv > 0.0 ? 1.0 : (gv < 0.0 ? -1.0 : 0.0);
        double v = double(x_adv.data[i]) + alpha * sign;
        double lo = double(x_clean.data[i]) - eps;
        double hi = double(x_clean.data[i]) + eps;
        v = std::clamp(v, lo, hi);
        out.data[i] = float(std::clamp(v, 0.0, 1.0));
    }
    out.grad.clear();
    return out;
}

namespace detail {

struct TermIds {
    std::optional<Graph<float>::Id> feature, relation, semantics;
    Graph<float>::Id total = -1;
};

inline TermIds build_joint_loss(Graph<float>& g, const EncodedImageIds<float>& enc,
                                const EncoderOutput<float>& clean_out, const ClusterModel<float>* cluster,
                                const Tensor<float>* text_cls, const AttackConfig& cfg) {
    if (cfg.relation.enabled && !cluster)
        fail(ErrKind::kConfig, "joint loss: relation term enabled but no cluster model given");
    if (cfg.semantics.enabled && !text_cls)
        fail(ErrKind::kConfig, "joint loss: semantics term enabled but no text embedding given");
    TermIds ids;
    std::optional<Graph<float>::Id> acc;
    auto contribute = [&](Graph<float>::Id term, double w) {
        auto weighted = g.scalar_mul(term, float(w));
        acc = acc ? g.add(*acc, weighted) : weighted;
    };
    if (cfg.feature.enabled) {
        ids.feature = feature_loss_into(g, enc.tokens, clean_out.tokens, cfg.divergence);
        contribute(*ids.feature, cfg.feature.weight);
    }
    if (cfg.relation.enabled) {
        ids.relation = relation_loss_into(g, enc.tokens, *cluster, cfg.divergence);
        contribute(*ids.relation, cfg.relation.weight);
    }
    if (cfg.semantics.enabled) {
        ids.semantics = semantics_loss_into(g, enc.cls, *text_cls);
        contribute(*ids.semantics, cfg.semantics.weight);
    }
    ids.total = *acc;
    return ids;
}

inline LossBreakdown read_terms(const Graph<float>& g, const TermIds& ids) {
    LossBreakdown lb;
    if (ids.feature) lb.feature = double(g.value(*ids.feature).data[0]);
    if (ids.relation) lb.relation = double(g.value(*ids.relation).data[0]);
    if (ids.semantics) lb.semantics = double(g.value(*ids.semantics).data[0]);
    lb.total = double(g.value(ids.total).data[0]);
    return lb;
}

}  // namespace detail

// Full projected sign-gradient ascent against the encoder's visual tokens.
// The clean image is encoded once, clusters are fit once on the clean
// tokens, and the loss graph is built once and re-evaluated per step.
inline AttackResult run_attack(const Weights<float>& image_w, const ViTConfig& icfg,
                               const Weights<float>* text_w, const TextConfig* tcfg,
                               const Tensor<float>& image, const AttackConfig& cfg,
                               const StepObserver& observer = {}) {
    cfg.validate();
    icfg.validate();

    AttackResult res;
    res.config = cfg;
    res.image_weights_fp = image_w.fingerprint();
    res.clean_out = encode_image(image_w, icfg, image);

    if (cfg.relation.enabled) {
        int k_max = cfg.k_max;
        if (k_max > icfg.tokens() - 1)
            fail(ErrKind::kConfig, "attack config: k_max " + std::to_string(k_max) + " exceeds token count - 1 (" +
                                       std::to_string(icfg.tokens() - 1) + ")");
        auto sel = select_k(res.clean_out.tokens, cfg.k_min, k_max, cfg.seed);
        res.cluster = kmeans(res.clean_out.tokens, sel.k, cfg.seed);
    }

    Tensor<float> text_cls;
    if (cfg.semantics.enabled) {
        if (!text_w || !tcfg) fail(ErrKind::kConfig, "run_attack: semantics term requires the text tower");
        res.text_weights_fp = text_w->fingerprint();
        text_cls = encode_text(*text_w, *tcfg, cfg.caption);
    }

    Tensor<float> x_adv = init_adversarial(image, cfg.epsilon, cfg.noise_std(), cfg.seed);
    if (observer) observer(0, x_adv);

    Graph<float> g;
    auto xid = g.input("x_adv", x_adv, /*requires_grad=*/true);
    auto enc = encode_image_into(g, image_w, icfg, xid);
    auto terms = detail::build_joint_loss(g, enc, res.clean_out,
                                          cfg.relation.enabled ? &res.cluster : nullptr,
                                          cfg.semantics.enabled ? &text_cls : nullptr, cfg);

    for (int step = 0; step < cfg.steps; ++step) {
        if (step > 0) {
            g.rebind("x_adv", x_adv);
            g.recompute();
        }
        LossBreakdown lb = detail::read_terms(g, terms);
        if (!lb.finite())
            fail(ErrKind::kNumeric, "run_attack: non-finite loss at iteration " + std::to_string(step) +
                                        " (feature=" + std::to_string(lb.feature) +
                                        ", relation=" + std::to_string(lb.relation) +
                                        ", semantics=" + std::to_string(lb.semantics) + ")");
        res.trace.push_back(lb);
        g.backward(terms.total);
        x_adv = pgd_step(x_adv, g.grad(xid), cfg.alpha, image, cfg.epsilon);
        if (observer) observer(step + 1, x_adv);
    }

    g.rebind("x_adv", x_adv);
    g.recompute();
    res.final_losses = detail::read_terms(g, terms);
    if (!res.final_losses.finite())
        fail(ErrKind::kNumeric, "run_attack: non-finite loss at final evaluation");
    res.adversarial = x_adv;
    res.adv_out = EncoderOutput<float>{g.value(enc.cls), g.value(enc.tokens)};
    res.adv_out.cls.grad.clear();
    res.adv_out.tokens.grad.clear();
    res.iterations = cfg.steps;
    return res;
}

}  // namespace vtforge
