#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "vtforge/clustering.hpp"
#include "vtforge/rng.hpp"
#include "vtforge/tensor.hpp"

using namespace vtforge;

namespace {

Tensor<float> four_blobs() {
    return Tensor<float>(Shape{4, 2}, {0, 0, 0, 1, 10, 10, 10, 11});
}

// exhaustive-partition oracle: global minimum SSE over every labeling
double exhaustive_min_sse(const Tensor<float>& pts, int k) {
    int n = pts.rows(), d = pts.cols();
    double best = 1e300;
    std::vector<int> labels(n, 0);
    long long total = 1;
    for (int i = 0; i < n; ++i) total *= k;
    for (long long code = 0; code < total; ++code) {
        long long c = code;
        for (int i = 0; i < n; ++i) {
            labels[i] = int(c % k);
            c /= k;
        }
        std::vector<double> mean(size_t(k) * d, 0.0);
        std::vector<int> cnt(k, 0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) mean[size_t(labels[i]) * d + j] += pts(i, j);
            cnt[labels[i]]++;
        }
        for (int cc = 0; cc < k; ++cc)
            if (cnt[cc])
                for (int j = 0; j < d; ++j) mean[size_t(cc) * d + j] /= cnt[cc];
        double sse = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                double diff = pts(i, j) - mean[size_t(labels[i]) * d + j];
                sse += diff * diff;
            }
        best = std::min(best, sse);
    }
    return best;
}

bool nearest_center_invariant(const Tensor<float>& pts, const ClusterModel<float>& m) {
    for (int i = 0; i < pts.rows(); ++i) {
        int best = 0;
        double best_d = 1e300;
        for (int c = 0; c < m.k; ++c) {
            double acc = 0;
            for (int j = 0; j < pts.cols(); ++j) {
                double diff = double(pts(i, j)) - double(m.centers(c, j));
                acc += diff * diff;
            }
            if (acc < best_d) {
                best_d = acc;
                best = c;
            }
        }
        if (best != m.labels[i]) return false;
    }
    return true;
}

}  // namespace

TEST(Kmeans, TwoBlobsFindTheObviousCenters) {
    auto pts = four_blobs();
    auto m = kmeans(pts, 2, 42);
    EXPECT_DOUBLE_EQ(m.sse, 1.0);
    EXPECT_DOUBLE_EQ(exhaustive_min_sse(pts, 2), 1.0);  // oracle agrees this is the global minimum
    // centers are {(0,0.5),(10,10.5)} in some order
    int low = m.labels[0];
    EXPECT_EQ(m.labels[1], low);
    EXPECT_NE(m.labels[2], low);
    EXPECT_EQ(m.labels[3], m.labels[2]);
    EXPECT_FLOAT_EQ(m.centers(low, 0), 0.0f);
    EXPECT_FLOAT_EQ(m.centers(low, 1), 0.5f);
    EXPECT_FLOAT_EQ(m.centers(1 - low, 0), 10.0f);
    EXPECT_FLOAT_EQ(m.centers(1 - low, 1), 10.5f);
    EXPECT_TRUE(nearest_center_invariant(pts, m));
}

TEST(Kmeans, IdenticalPointsDegenerate) {
    Tensor<float> pts(Shape{5, 3});
    for (auto& v : pts.data) v = 2.5f;
    auto m = kmeans(pts, 2, 7);
    EXPECT_DOUBLE_EQ(m.sse, 0.0);
    for (int l : m.labels) {
        EXPECT_GE(l, 0);
        EXPECT_LT(l, 2);
    }
    EXPECT_TRUE(nearest_center_invariant(pts, m));
}

TEST(Kmeans, DeterministicGivenSeed) {
    CounterRng rng(15, 1);
    Tensor<float> pts(Shape{20, 4});
    for (auto& v : pts.data) v = float(rng.uniform() * 4 - 2);
    auto a = kmeans(pts, 4, 99);
    auto b = kmeans(pts, 4, 99);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.centers.data, b.centers.data);
    EXPECT_EQ(a.sse, b.sse);
    EXPECT_EQ(a.silhouette, b.silhouette);
}

TEST(Kmeans, ValidatesArguments) {
    auto pts = four_blobs();
    EXPECT_THROW(kmeans(pts, 1, 0), Error);
    EXPECT_THROW(kmeans(pts, 5, 0), Error);
    Tensor<float> one(Shape{1, 2});
    EXPECT_THROW(kmeans(one, 2, 0), Error);
}

TEST(Kmeans, SseNonIncreasingWithinRestart) {
    CounterRng rng(31, 2);
    Tensor<float> pts(Shape{40, 3});
    for (auto& v : pts.data) v = float(rng.uniform() * 6 - 3);
    std::vector<double> trace;
    KmeansOptions opt;
    opt.sse_trace = &trace;
    kmeans(pts, 5, 13, opt);
    ASSERT_GE(trace.size(), 1u);
    for (size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-9);
}

// best-of-20 restarts reaches the exhaustive global optimum on >= 95/100
// small instances; the nearest-center invariant holds on all of them
TEST(Kmeans, NearGlobalOnSmallInstances) {
    int optimal = 0;
    for (int inst = 0; inst < 100; ++inst) {
        CounterRng rng(500 + inst, 3);
        int n = 4 + int(rng.uniform() * 5);    // 4..8
        int k = 2 + int(rng.uniform() * 2);    // 2..3
        Tensor<float> pts(Shape{n, 2});
        for (auto& v : pts.data) v = float(rng.uniform() * 10 - 5);
        auto m = kmeans(pts, k, 1000 + inst);
        ASSERT_TRUE(nearest_center_invariant(pts, m)) << "instance " << inst;
        double oracle = exhaustive_min_sse(pts, k);
        if (m.sse <= oracle + 1e-6) optimal++;
    }
    EXPECT_GE(optimal, 95);
}

TEST(Silhouette, FourPointWorkedExample) {
    auto pts = four_blobs();
    std::vector<int> labels = {0, 0, 1, 1};
    // hand evaluation of the definition: a = 1 for every point;
    // b(p) is the mean distance to the two points of the other blob
    double b_corner = (std::sqrt(200.0) + std::sqrt(221.0)) / 2.0;  // (0,0) and (10,11)
    double b_inner = (std::sqrt(181.0) + std::sqrt(200.0)) / 2.0;   // (0,1) and (10,10)
    double expected = ((1.0 - 1.0 / b_corner) + (1.0 - 1.0 / b_inner)) / 2.0;
    EXPECT_NEAR(silhouette(pts, labels), expected, 1e-9);
    EXPECT_NEAR(expected, 0.9293, 2e-4);  // sanity on the hand arithmetic
}

TEST(Silhouette, SeparatedDuplicatePairsApproachOne) {
    Tensor<float> pts(Shape{4, 2}, {0, 0, 0, 0, 50, 50, 50, 50});
    EXPECT_DOUBLE_EQ(silhouette(pts, {0, 0, 1, 1}), 1.0);  // a = 0 exactly
}

TEST(Silhouette, SingletonsContributeZero) {
    // point 0 is a singleton cluster: s(0) = 0 by convention
    Tensor<float> pts(Shape{3, 2}, {0, 0, 4, 0, 5, 0});
    double s = silhouette(pts, {0, 1, 1});
    double s1 = (4.0 - 1.0) / 4.0;  // point (4,0): a = 1, b = dist to the singleton = 4
    double s2 = (5.0 - 1.0) / 5.0;  // point (5,0): a = 1, b = 5
    EXPECT_NEAR(s, (0.0 + s1 + s2) / 3.0, 1e-12);
}

TEST(Silhouette, AllSingletonsIsZero) {
    Tensor<float> pts(Shape{4, 2}, {0, 0, 1, 0, 2, 0, 3, 0});
    EXPECT_DOUBLE_EQ(silhouette(pts, {0, 1, 2, 3}), 0.0);
}

TEST(Silhouette, NeedsTwoNonemptyClusters) {
    Tensor<float> pts(Shape{3, 2}, {0, 0, 1, 0, 2, 0});
    EXPECT_THROW(silhouette(pts, {0, 0, 0}), Error);
}

TEST(Silhouette, BoundedOnRandomInstances) {
    for (int inst = 0; inst < 200; ++inst) {
        CounterRng rng(9000 + inst, 4);
        int n = 5 + int(rng.uniform() * 10);
        int k = 2 + int(rng.uniform() * 3);
        Tensor<float> pts(Shape{n, 3});
        for (auto& v : pts.data) v = float(rng.uniform() * 8 - 4);
        auto m = kmeans(pts, std::min(k, n - 1), inst);
        EXPECT_GE(m.silhouette, -1.0);
        EXPECT_LE(m.silhouette, 1.0);
    }
}

TEST(SelectK, TwoBlobsPickTwo) {
    auto sel = select_k(four_blobs(), 2, 3, 11);
    EXPECT_EQ(sel.k, 2);
    ASSERT_EQ(sel.silhouettes.size(), 2u);
    EXPECT_GT(sel.silhouettes[0].second, sel.silhouettes[1].second);
}

TEST(SelectK, DegenerateIntervalIsTrivial) {
    auto sel = select_k(four_blobs(), 2, 2, 11);
    EXPECT_EQ(sel.k, 2);
}

TEST(SelectK, InvalidIntervalRejected) {
    EXPECT_THROW(select_k(four_blobs(), 2, 4, 0), Error);  // k_max > n-1
    EXPECT_THROW(select_k(four_blobs(), 1, 2, 0), Error);
    EXPECT_THROW(select_k(four_blobs(), 3, 2, 0), Error);
}

TEST(SelectK, ThreeGaussiansRecoverThree) {
    int hits = 0;
    for (int seed = 0; seed < 100; ++seed) {
        CounterRng rng(seed, 5);
        Tensor<float> pts(Shape{30, 2});
        const double cx[3] = {0, 10, 0}, cy[3] = {0, 0, 10};
        for (int i = 0; i < 30; ++i) {
            int c = i % 3;
            pts(i, 0) = float(cx[c] + 0.5 * rng.normal());
            pts(i, 1) = float(cy[c] + 0.5 * rng.normal());
        }
        auto sel = select_k(pts, 2, 6, seed);
        if (sel.k == 3) hits++;
    }
    EXPECT_GE(hits, 95);
}
