#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vtforge/error.hpp"
#include "vtforge/rng.hpp"
#include "vtforge/tensor.hpp"

namespace vtforge {

template <typename T>
struct ClusterModel {
    int k = 0;
    std::vector<int> labels;  // length L, each in [0, k)
    Tensor<T> centers;        // k x D
    double sse = 0.0;         // within-cluster sum of squared distances
    double silhouette = 0.0;  // mean silhouette coefficient
};

struct KmeansOptions {
    int max_iter = 100;
    double tol = 1e-6;
    int restarts = 20;
    std::vector<double>* sse_trace = nullptr;  // per-iteration SSE of the winning restart
};

namespace detail {

template <typename T>
double sq_dist(const T* a, const T* b, int d) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
        double diff = double(a[j]) - double(b[j]);
        acc += diff * diff;
    }
    return acc;
}

// nearest center, ties to the lowest index
template <typename T>
int nearest_center(const T* point, const std::vector<double>& centers, int k, int d) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < k; ++c) {
        double acc = 0.0;
        const double* cp = centers.data() + static_cast<size_t>(c) * d;
        for (int j = 0; j < d; ++j) {
            double diff = double(point[j]) - cp[j];
            acc += diff * diff;
        }
        if (acc < best_d) {
            best_d = acc;
            best = c;
        }
    }
    return best;
}

}  // namespace detail

template <typename T>
double silhouette(const Tensor<T>& points, const std::vector<int>& labels);

// Lloyd's algorithm with k-means++ seeding, best of `restarts` by SSE.
// Deterministic in (points, k, seed). Empty clusters are reseeded at the
// point farthest from its nearest center.
template <typename T>
ClusterModel<T> kmeans(const Tensor<T>& points, int k, uint64_t seed, const KmeansOptions& opt = {}) {
    if (points.rank() != 2) fail(ErrKind::kShape, "kmeans: points must be rank-2, got " + shape_str(points.shape));
    int n = points.rows(), d = points.cols();
    if (n < 2) fail(ErrKind::kConfig, "kmeans: need at least 2 points, got " + std::to_string(n));
    if (k < 2 || k > n)
        fail(ErrKind::kConfig, "kmeans: k=" + std::to_string(k) + " outside [2, " + std::to_string(n) + "]");
    if (!points.all_finite()) fail(ErrKind::kNumeric, "kmeans: non-finite input");

    const T* pd = points.data.data();
    auto point = [&](int i) { return pd + static_cast<size_t>(i) * d; };

    std::vector<double> best_centers;
    std::vector<int> best_labels;
    double best_sse = 1e300;
    std::vector<double> best_trace;

    for (int restart = 0; restart < opt.restarts; ++restart) {
        CounterRng rng(seed, fnv1a64("kmeans") ^ static_cast<uint64_t>(restart));

        // k-means++ seeding
        std::vector<double> centers(static_cast<size_t>(k) * d);
        std::vector<double> min_d(n, 1e300);
        int first = static_cast<int>(rng.uniform() * n) % n;
        for (int j = 0; j < d; ++j) centers[j] = double(point(first)[j]);
        for (int c = 1; c < k; ++c) {
            double total = 0.0;
            for (int i = 0; i < n; ++i) {
                double dist = 1e300;
                for (int cc = 0; cc < c; ++cc) {
                    double acc = 0.0;
                    for (int j = 0; j < d; ++j) {
                        double diff = double(point(i)[j]) - centers[static_cast<size_t>(cc) * d + j];
                        acc += diff * diff;
                    }
                    dist = std::min(dist, acc);
                }
                min_d[i] = dist;
                total += dist;
            }
            int chosen;
            if (total <= 0.0) {
                chosen = static_cast<int>(rng.uniform() * n) % n;
            } else {
                double target = rng.uniform() * total;
                double run = 0.0;
                chosen = n - 1;
                for (int i = 0; i < n; ++i) {
                    run += min_d[i];
                    if (run >= target) {
                        chosen = i;
                        break;
                    }
                }
            }
            for (int j = 0; j < d; ++j) centers[static_cast<size_t>(c) * d + j] = double(point(chosen)[j]);
        }

        std::vector<int> labels(n);
        for (int i = 0; i < n; ++i) labels[i] = detail::nearest_center(point(i), centers, k, d);

        std::vector<double> trace;
        std::vector<double> next(static_cast<size_t>(k) * d);
        std::vector<int> counts(k);
        for (int iter = 0; iter < opt.max_iter; ++iter) {
            // update step: centers become the means of their assignments
            std::fill(next.begin(), next.end(), 0.0);
            std::fill(counts.begin(), counts.end(), 0);
            for (int i = 0; i < n; ++i) {
                double* row = next.data() + static_cast<size_t>(labels[i]) * d;
                for (int j = 0; j < d; ++j) row[j] += double(point(i)[j]);
                counts[labels[i]]++;
            }
            for (int c = 0; c < k; ++c)
                if (counts[c] > 0)
                    for (int j = 0; j < d; ++j) next[static_cast<size_t>(c) * d + j] /= counts[c];
            // empty cluster: reseed at the point farthest from its nearest center
            for (int c = 0; c < k; ++c) {
                if (counts[c] > 0) continue;
                int far = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    int nc = detail::nearest_center(point(i), next, k, d);
                    double dist = 0.0;
                    for (int j = 0; j < d; ++j) {
                        double diff = double(point(i)[j]) - next[static_cast<size_t>(nc) * d + j];
                        dist += diff * diff;
                    }
                    if (dist > far_d) {
                        far_d = dist;
                        far = i;
                    }
                }
                for (int j = 0; j < d; ++j) next[static_cast<size_t>(c) * d + j] = double(point(far)[j]);
            }
            double shift = 0.0;
            for (size_t j = 0; j < next.size(); ++j) shift = std::max(shift, std::abs(next[j] - centers[j]));
            centers = next;

            std::vector<int> relabeled(n);
            double sse = 0.0;
            for (int i = 0; i < n; ++i) {
                relabeled[i] = detail::nearest_center(point(i), centers, k, d);
                const double* cp = centers.data() + static_cast<size_t>(relabeled[i]) * d;
                for (int j = 0; j < d; ++j) {
                    double diff = double(point(i)[j]) - cp[j];
                    sse += diff * diff;
                }
            }
            trace.push_back(sse);
            bool stable = relabeled == labels;
            labels = std::move(relabeled);
            if (stable || shift <= opt.tol) break;
        }

        double sse = 0.0;
        for (int i = 0; i < n; ++i) {
            const double* cp = centers.data() + static_cast<size_t>(labels[i]) * d;
            for (int j = 0; j < d; ++j) {
                double diff = double(point(i)[j]) - cp[j];
                sse += diff * diff;
            }
        }
        if (sse < best_sse) {
            best_sse = sse;
            best_centers = centers;
            best_labels = labels;
            best_trace = trace;
        }
    }

    ClusterModel<T> model;
    model.k = k;
    model.labels = std::move(best_labels);
    model.centers = Tensor<T>(Shape{k, d});
    for (size_t i = 0; i < best_centers.size(); ++i) model.centers.data[i] = T(best_centers[i]);
    model.sse = best_sse;
    int nonempty = 0;
    {
        std::vector<int> counts(k, 0);
        for (int l : model.labels) counts[l]++;
        for (int c : counts) nonempty += c > 0;
    }
    model.silhouette = nonempty >= 2 ? silhouette(points, model.labels) : 0.0;
    if (opt.sse_trace) *opt.sse_trace = std::move(best_trace);
    return model;
}

// Mean over points of (b - a) / max(a, b) with Euclidean distances;
// singleton-cluster points contribute 0.
template <typename T>
double silhouette(const Tensor<T>& points, const std::vector<int>& labels) {
    if (points.rank() != 2) fail(ErrKind::kShape, "silhouette: points must be rank-2");
    int n = points.rows(), d = points.cols();
    if (static_cast<int>(labels.size()) != n)
        fail(ErrKind::kShape, "silhouette: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                                  " points");
    int k = 0;
    for (int l : labels) {
        if (l < 0) fail(ErrKind::kConfig, "silhouette: negative label");
        k = std::max(k, l + 1);
    }
    std::vector<int> counts(k, 0);
    for (int l : labels) counts[l]++;
    int nonempty = 0;
    for (int c : counts) nonempty += c > 0;
    if (nonempty < 2) fail(ErrKind::kConfig, "silhouette: need at least 2 nonempty clusters");

    const T* pd = points.data.data();
    auto point = [&](int i) { return pd + static_cast<size_t>(i) * d; };

    double total = 0.0;
    std::vector<double> mean_dist(k);
    for (int i = 0; i < n; ++i) {
        if (counts[labels[i]] == 1) continue;  // contributes 0
        std::fill(mean_dist.begin(), mean_dist.end(), 0.0);
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            mean_dist[labels[j]] += std::sqrt(detail::sq_dist(point(i), point(j), d));
        }
        double a = mean_dist[labels[i]] / (counts[labels[i]] - 1);
        double b = 1e300;
        for (int c = 0; c < k; ++c) {
            if (c == labels[i] || counts[c] == 0) continue;
            b = std::min(b, mean_dist[c] / counts[c]);
        }
        double m = std::max(a, b);
        total += m > 0.0 ? (b - a) / m : 0.0;
    }
    return total / n;
}

struct KSelection {
    int k = 0;
    std::vector<std::pair<int, double>> silhouettes;  // (k, mean silhouette)
};

// Runs kmeans for each k in [k_min, k_max] and picks the silhouette argmax,
// ties to the smaller k.
template <typename T>
KSelection select_k(const Tensor<T>& points, int k_min, int k_max, uint64_t seed,
                    const KmeansOptions& opt = {}) {
    int n = points.rank() == 2 ? points.rows() : 0;
    if (k_min < 2 || k_min > k_max || k_max > n - 1)
        fail(ErrKind::kConfig, "select_k: interval [" + std::to_string(k_min) + "," + std::to_string(k_max) +
                                   "] invalid for " + std::to_string(n) + " points");
    KSelection sel;
    double best = -2.0;
    for (int k = k_min; k <= k_max; ++k) {
        auto model = kmeans(points, k, seed, opt);
        sel.silhouettes.emplace_back(k, model.silhouette);
        if (model.silhouette > best) {
            best = model.silhouette;
            sel.k = k;
        }
    }
    return sel;
}

}  // namespace vtforge
