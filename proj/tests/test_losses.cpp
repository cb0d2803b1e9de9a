#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "support/testutil.hpp"
#include "tilesemi/losses.hpp"

using namespace tilesemi;
using namespace tilesemi::testutil;

namespace {

// ---------------------------------------------------------------------------
// Independent oracles: literal, slow re-statements of the formulas, kept free
// of any code shared with the implementation under test.
// ---------------------------------------------------------------------------

double oracle_l1(const Tensor<double>& x, const Tensor<double>& xh) {
    double s = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) s += std::abs(x[i] - xh[i]);
    return s / static_cast<double>(x.numel());
}

double oracle_l2(const Tensor<double>& x, const Tensor<double>& xh) {
    double s = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) s += (x[i] - xh[i]) * (x[i] - xh[i]);
    return s / static_cast<double>(x.numel());
}

// weighted per-cluster means by an explicit loop, one-hot exactness check uses eps=0
std::vector<double> oracle_centers(const Tensor<double>& x, const Tensor<double>& y,
                                   double eps = 1e-8) {
    const std::int64_t c = x.dim(1), k = y.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(k * c));
    for (std::int64_t kk = 0; kk < k; ++kk) {
        double den = eps;
        for (std::int64_t i = 0; i < hw; ++i) den += y[kk * hw + i];
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double num = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) num += x[ch * hw + i] * y[kk * hw + i];
            out[static_cast<std::size_t>(kk * c + ch)] = num / den;
        }
    }
    return out;
}

Tensor<double> oracle_quantized(const std::vector<double>& centers, const Tensor<double>& y,
                                std::int64_t c) {
    const std::int64_t k = y.dim(1), h = y.dim(2), w = y.dim(3);
    Tensor<double> out({1, c, h, w});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < h * w; ++i)
            for (std::int64_t kk = 0; kk < k; ++kk)
                out[ch * h * w + i] += centers[static_cast<std::size_t>(kk * c + ch)] * y[kk * h * w + i];
    return out;
}

double oracle_relaxed_kmeans(const Tensor<double>& x, const Tensor<double>& y,
                             const LossSpec& spec) {
    const std::int64_t c = x.dim(1), hw = x.dim(2) * x.dim(3), k = y.dim(1);
    const auto centers = oracle_centers(x, y);
    const auto xc = oracle_quantized(centers, y, c);
    double rec = 0.0;
    for (std::int64_t i = 0; i < c * hw; ++i) rec += std::abs(x[i] - xc[i]);
    rec /= static_cast<double>(c * hw);
    double reg = 0.0;
    for (std::int64_t i = 0; i < k * hw; ++i) reg += y[i] * (1.0 - y[i]);
    if (spec.normalize_regularizer) reg /= static_cast<double>(hw);
    return spec.alpha_rec * rec + spec.alpha_reg * reg;
}

double oracle_mumford_shah(const Tensor<double>& x, const Tensor<double>& y,
                           const LossSpec& spec) {
    const std::int64_t c = x.dim(1), h = x.dim(2), w = x.dim(3), hw = h * w, k = y.dim(1);
    const auto centers = oracle_centers(x, y);
    double data = 0.0;
    for (std::int64_t kk = 0; kk < k; ++kk)
        for (std::int64_t i = 0; i < hw; ++i) {
            double d2 = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double d = x[ch * hw + i] - centers[static_cast<std::size_t>(kk * c + ch)];
                d2 += d * d;
            }
            data += d2 * y[kk * hw + i];
        }
    double tv = 0.0;
    for (std::int64_t kk = 0; kk < k; ++kk)
        for (std::int64_t r = 0; r < h; ++r)
            for (std::int64_t cc = 0; cc < w; ++cc) {
                if (r + 1 < h) tv += std::abs(y[kk * hw + (r + 1) * w + cc] - y[kk * hw + r * w + cc]);
                if (cc + 1 < w) tv += std::abs(y[kk * hw + r * w + cc + 1] - y[kk * hw + r * w + cc]);
            }
    return data + spec.alpha_reg * tv;
}

Tensor<double> image_1xc(std::vector<double> vals) {  // single row, single channel
    Tensor<double> t({1, 1, 1, static_cast<std::int64_t>(vals.size())});
    for (std::size_t i = 0; i < vals.size(); ++i) t[static_cast<std::int64_t>(i)] = vals[i];
    return t;
}

}  // namespace

TEST_CASE("cross entropy: peaked, uniform and two-pixel fixtures") {
    // strongly peaked on the correct class -> tiny loss
    Tensor<double> logits({1, 4, 2, 2});
    Tensor<std::int32_t> labels({1, 2, 2});
    for (std::int64_t i = 0; i < 4; ++i) {
        labels[i] = static_cast<std::int32_t>(i % 4);
        logits[(i % 4) * 4 + i] = 50.0;
    }
    CHECK(cross_entropy(logits, labels, {}).value < 1e-3);

    // uniform logits, C=15 -> ln 15
    Tensor<double> uni({1, 15, 3, 3});
    Tensor<std::int32_t> ulab({1, 3, 3});
    for (std::int64_t i = 0; i < 9; ++i) ulab[i] = static_cast<std::int32_t>(i % 15);
    CHECK(cross_entropy(uni, ulab, {}).value == doctest::Approx(std::log(15.0)).epsilon(1e-12));

    // 2x1 image, logits [[2,0]] and [[0,2]], labels [0,1] -> -ln(e^2/(e^2+1))
    Tensor<double> two({1, 2, 1, 2});
    two.at(0, 0, 0, 0) = 2.0;
    two.at(0, 1, 0, 0) = 0.0;
    two.at(0, 0, 0, 1) = 0.0;
    two.at(0, 1, 0, 1) = 2.0;
    Tensor<std::int32_t> tlab({1, 1, 2});
    tlab[0] = 0;
    tlab[1] = 1;
    const double expected = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));  // 0.126928...
    CHECK(cross_entropy(two, tlab, {}).value == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.1269280110429726).epsilon(1e-12));
}

TEST_CASE("cross entropy: void handling and label range errors") {
    Tensor<double> logits({1, 3, 2, 2});
    Tensor<std::int32_t> labels({1, 2, 2});
    labels.fill(14);  // nomenclature void id, outside C=3
    const auto r = cross_entropy(logits, labels, {14});
    CHECK(r.value == 0.0);
    CHECK(r.void_only());

    labels[0] = 7;  // out of range and not void
    CHECK_THROWS_AS(cross_entropy(logits, labels, {14}), std::invalid_argument);

    // mixed: void pixels are excluded from the mean
    Tensor<double> l2({1, 2, 1, 2});
    l2.at(0, 0, 0, 0) = 1.0;
    Tensor<std::int32_t> mix({1, 1, 2});
    mix[0] = 0;
    mix[1] = 14;
    const auto m = cross_entropy(l2, mix, {14});
    CHECK(m.counted_pixels == 1);
    CHECK(m.value == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))));
}

TEST_CASE("l1/l2 reconstruction fixtures and identities") {
    const auto x01 = image_1xc({0.0, 1.0});
    const auto x10 = image_1xc({1.0, 0.0});
    const auto xh = image_1xc({0.5, 0.5});
    const auto x05 = image_1xc({0.0, 0.5});

    CHECK(l1_reconstruction(x01, x01) == 0.0);
    CHECK(l2_reconstruction(x01, x01) == 0.0);
    CHECK(l1_reconstruction(x01, x10) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(l2_reconstruction(x01, x10) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(l1_reconstruction(x05, xh) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(l2_reconstruction(x05, xh) == doctest::Approx(0.125).epsilon(1e-12));

    Tensor<double> other({1, 1, 2, 2});
    CHECK_THROWS_AS(l1_reconstruction(x01, other), std::invalid_argument);

    // random inputs agree with the brute-force oracle
    Rng rng(7);
    const auto a = Tensor<double>::rand_uniform({2, 3, 5, 4}, rng, 0.0, 1.0);
    const auto b = Tensor<double>::rand_uniform({2, 3, 5, 4}, rng, 0.0, 1.0);
    CHECK(l1_reconstruction(a, b) == doctest::Approx(oracle_l1(a, b)).epsilon(1e-12));
    CHECK(l2_reconstruction(a, b) == doctest::Approx(oracle_l2(a, b)).epsilon(1e-12));
}

TEST_CASE("cluster centers: one-hot, uniform and weighted-mean oracle") {
    // x=[0,1], one-hot memberships -> c=[0,1]
    const auto x = image_1xc({0.0, 1.0});
    Tensor<double> onehot({1, 2, 1, 2});
    onehot.at(0, 0, 0, 0) = 1.0;
    onehot.at(0, 1, 0, 1) = 1.0;
    auto c = cluster_centers(x, onehot);
    CHECK(c[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(c[1] == doctest::Approx(1.0).epsilon(1e-7));

    // uniform memberships -> both centers at the mean
    Tensor<double> uniform = Tensor<double>::full({1, 2, 1, 2}, 0.5);
    c = cluster_centers(x, uniform);
    CHECK(c[0] == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(c[1] == doctest::Approx(0.5).epsilon(1e-7));

    // x=[0,1,1], y0=[1,0.5,0], y1=[0,0.5,1] -> c0=1/3, c1=1
    const auto x3 = image_1xc({0.0, 1.0, 1.0});
    Tensor<double> y({1, 2, 1, 3});
    y.at(0, 0, 0, 0) = 1.0;
    y.at(0, 0, 0, 1) = 0.5;
    y.at(0, 1, 0, 1) = 0.5;
    y.at(0, 1, 0, 2) = 1.0;
    c = cluster_centers(x3, y);
    const auto ref = oracle_centers(x3, y);
    CHECK(c[0] == doctest::Approx(ref[0]).epsilon(1e-12));
    CHECK(c[1] == doctest::Approx(ref[1]).epsilon(1e-12));
    CHECK(c[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
    CHECK(c[1] == doctest::Approx(1.0).epsilon(1e-7));

    // one-hot memberships equal brute-force per-cluster means on random data
    Rng rng(21);
    Tensor<double> xr = Tensor<double>::rand_uniform({1, 3, 6, 6}, rng, 0.0, 1.0);
    Tensor<double> yh({1, 4, 6, 6});
    for (std::int64_t i = 0; i < 36; ++i)
        yh[static_cast<std::int64_t>(rng.uniform_index(4)) * 36 + i] = 1.0;
    const auto got = cluster_centers(xr, yh);
    const auto want = oracle_centers(xr, yh);
    for (std::int64_t i = 0; i < got.numel(); ++i)
        CHECK(got[i] == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("quantized image: identity, constant and hand-combined fixtures") {
    const auto x = image_1xc({0.0, 1.0});
    Tensor<double> onehot({1, 2, 1, 2});
    onehot.at(0, 0, 0, 0) = 1.0;
    onehot.at(0, 1, 0, 1) = 1.0;
    auto xc = quantized_image(cluster_centers(x, onehot), onehot);
    CHECK(xc[0] == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(xc[1] == doctest::Approx(1.0).epsilon(1e-7));

    // uniform memberships -> constant image at the mean of centers
    Tensor<double> uniform = Tensor<double>::full({1, 2, 1, 2}, 0.5);
    Tensor<double> centers({1, 2, 1});
    centers[0] = 0.2;
    centers[1] = 0.8;
    xc = quantized_image(centers, uniform);
    CHECK(xc[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(xc[1] == doctest::Approx(0.5).epsilon(1e-12));

    // the cluster_centers third example -> x_c = [1/3, 2/3, 1]
    const auto x3 = image_1xc({0.0, 1.0, 1.0});
    Tensor<double> y({1, 2, 1, 3});
    y.at(0, 0, 0, 0) = 1.0;
    y.at(0, 0, 0, 1) = 0.5;
    y.at(0, 1, 0, 1) = 0.5;
    y.at(0, 1, 0, 2) = 1.0;
    xc = quantized_image(cluster_centers(x3, y), y);
    CHECK(xc[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
    CHECK(xc[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-7));
    CHECK(xc[2] == doctest::Approx(1.0).epsilon(1e-7));

    // convex hull property: outputs lie within [min center, max center] per channel
    Rng rng(5);
    const auto xr = Tensor<double>::rand_uniform({1, 3, 8, 8}, rng, 0.0, 1.0);
    const auto yr = random_membership<double>({1, 5, 8, 8}, rng);
    const auto cr = cluster_centers(xr, yr);
    const auto qr = quantized_image(cr, yr);
    for (std::int64_t ch = 0; ch < 3; ++ch) {
        double lo = 1e300, hi = -1e300;
        for (std::int64_t kk = 0; kk < 5; ++kk) {
            lo = std::min(lo, cr[kk * 3 + ch]);
            hi = std::max(hi, cr[kk * 3 + ch]);
        }
        for (std::int64_t i = 0; i < 64; ++i) {
            CHECK(qr[ch * 64 + i] >= lo - 1e-9);
            CHECK(qr[ch * 64 + i] <= hi + 1e-9);
        }
    }
}

TEST_CASE("relaxed k-means: closed forms") {
    LossSpec spec;
    spec.kind = LossKind::relaxed_kmeans;
    spec.K = 2;

    // one-hot memberships matching a 2-color image -> 0
    Tensor<double> x({1, 1, 2, 2});
    x.at(0, 0, 0, 0) = 0.25;
    x.at(0, 0, 0, 1) = 0.25;
    x.at(0, 0, 1, 0) = 0.75;
    x.at(0, 0, 1, 1) = 0.75;
    Tensor<double> y({1, 2, 2, 2});
    y.at(0, 0, 0, 0) = 1.0;
    y.at(0, 0, 0, 1) = 1.0;
    y.at(0, 1, 1, 0) = 1.0;
    y.at(0, 1, 1, 1) = 1.0;
    CHECK(relaxed_kmeans_loss(x, y, spec) == doctest::Approx(0.0).epsilon(1e-7));

    // constant image, uniform memberships, N pixels, K clusters -> N (1 - 1/K)
    for (const int K : {2, 3, 5}) {
        const std::int64_t h = 4, w = 3, N = h * w;
        Tensor<double> xc = Tensor<double>::full({1, 1, h, w}, 0.4);
        Tensor<double> yu = Tensor<double>::full({1, K, h, w}, 1.0 / K);
        LossSpec s = spec;
        s.K = K;
        const double expected = static_cast<double>(N) * (1.0 - 1.0 / K);
        CHECK(relaxed_kmeans_loss(xc, yu, s) == doctest::Approx(expected).epsilon(1e-9));
        CHECK(oracle_relaxed_kmeans(xc, yu, s) == doctest::Approx(expected).epsilon(1e-9));
    }

    // any x with one-hot y_hat -> regularizer exactly 0 (set alpha_rec=0 to isolate it)
    Rng rng(3);
    Tensor<double> xr = Tensor<double>::rand_uniform({1, 3, 4, 4}, rng, 0.0, 1.0);
    Tensor<double> yh({1, 3, 4, 4});
    for (std::int64_t i = 0; i < 16; ++i)
        yh[static_cast<std::int64_t>(rng.uniform_index(3)) * 16 + i] = 1.0;
    LossSpec reg_only = spec;
    reg_only.K = 3;
    reg_only.alpha_rec = 0.0;
    CHECK(relaxed_kmeans_loss(xr, yh, reg_only) == 0.0);
}

TEST_CASE("relaxed k-means: oracle agreement, regularizer bound, permutation equivariance") {
    Rng rng(11);
    LossSpec spec;
    spec.kind = LossKind::relaxed_kmeans;
    spec.K = 4;
    for (int trial = 0; trial < 5; ++trial) {
        const auto x = Tensor<double>::rand_uniform({1, 3, 6, 5}, rng, 0.0, 1.0);
        const auto y = random_membership<double>({1, 4, 6, 5}, rng);
        const double got = relaxed_kmeans_loss(x, y, spec);
        CHECK(got == doctest::Approx(oracle_relaxed_kmeans(x, y, spec)).epsilon(1e-10));
        CHECK(got >= 0.0);

        // 0 <= reg <= N*K/4
        LossSpec ro = spec;
        ro.alpha_rec = 0.0;
        const double reg = relaxed_kmeans_loss(x, y, ro);
        CHECK(reg >= 0.0);
        CHECK(reg <= 6.0 * 5.0 * 4.0 / 4.0);

        // permuting membership channels leaves the value unchanged
        Tensor<double> perm(y.shape());
        const int order[4] = {2, 0, 3, 1};
        for (std::int64_t k = 0; k < 4; ++k)
            for (std::int64_t i = 0; i < 30; ++i) perm[k * 30 + i] = y[order[k] * 30 + i];
        CHECK(relaxed_kmeans_loss(x, perm, spec) == doctest::Approx(got).epsilon(1e-10));
    }
}

TEST_CASE("mumford-shah: closed forms") {
    LossSpec spec;
    spec.kind = LossKind::mumford_shah;
    spec.K = 2;

    // K=1, y==1, x=[0,1] single channel -> c=0.5, loss = 0.25 + 0.25 = 0.5
    const auto x = image_1xc({0.0, 1.0});
    Tensor<double> ones = Tensor<double>::full({1, 1, 1, 2}, 1.0);
    CHECK(mumford_shah_loss(x, ones, spec) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(oracle_mumford_shah(x, ones, spec) == doctest::Approx(0.5).epsilon(1e-9));

    // x=[0,1], K=2, one-hot per-pixel memberships -> data 0, regularizer 2*alpha
    for (const double alpha : {1.0, 0.7}) {
        Tensor<double> onehot({1, 2, 1, 2});
        onehot.at(0, 0, 0, 0) = 1.0;
        onehot.at(0, 1, 0, 1) = 1.0;
        LossSpec s = spec;
        s.alpha_reg = alpha;
        CHECK(mumford_shah_loss(x, onehot, s) == doctest::Approx(2.0 * alpha).epsilon(1e-7));
    }

    // constant image, spatially constant one-hot membership -> 0
    Tensor<double> xc = Tensor<double>::full({1, 3, 4, 4}, 0.3);
    Tensor<double> yc({1, 2, 4, 4});
    for (std::int64_t i = 0; i < 16; ++i) yc[i] = 1.0;  // all pixels in cluster 0
    CHECK(mumford_shah_loss(xc, yc, spec) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("mumford-shah: oracle agreement and permutation equivariance") {
    Rng rng(13);
    LossSpec spec;
    spec.kind = LossKind::mumford_shah;
    spec.K = 3;
    spec.alpha_reg = 0.5;
    for (int trial = 0; trial < 5; ++trial) {
        const auto x = Tensor<double>::rand_uniform({1, 3, 5, 6}, rng, 0.0, 1.0);
        const auto y = random_membership<double>({1, 3, 5, 6}, rng);
        const double got = mumford_shah_loss(x, y, spec);
        CHECK(got == doctest::Approx(oracle_mumford_shah(x, y, spec)).epsilon(1e-10));
        CHECK(got >= 0.0);

        Tensor<double> perm(y.shape());
        const int order[3] = {1, 2, 0};
        for (std::int64_t k = 0; k < 3; ++k)
            for (std::int64_t i = 0; i < 30; ++i) perm[k * 30 + i] = y[order[k] * 30 + i];
        CHECK(mumford_shah_loss(x, perm, spec) == doctest::Approx(got).epsilon(1e-10));
    }
}

TEST_CASE("combined loss arithmetic") {
    LossSpec spec;
    spec.kind = LossKind::l1;
    spec.lambda = 2.0;
    CHECK(combined_loss(1.0, 0.5, spec) == doctest::Approx(2.0));
    spec.lambda = 5.0;
    CHECK(combined_loss(std::nullopt, 0.4, spec) == doctest::Approx(2.0));
    spec.lambda = 0.0;
    CHECK(combined_loss(0.75, 123.0, spec) == doctest::Approx(0.75));
    // defaults by kind
    LossSpec dflt;
    dflt.kind = LossKind::l1;
    CHECK(dflt.effective_lambda() == doctest::Approx(2.0));
    dflt.kind = LossKind::relaxed_kmeans;
    CHECK(dflt.effective_lambda() == doctest::Approx(5.0));
}

TEST_CASE("gradients match central finite differences") {
    Rng rng(42);
    const std::set<int> void_ids = {14};

    SUBCASE("cross entropy wrt logits") {
        for (int trial = 0; trial < 3; ++trial) {
            auto logits = Tensor<double>::randn({1, 5, 4, 4}, rng);
            Tensor<std::int32_t> labels({1, 4, 4});
            for (std::int64_t i = 0; i < 16; ++i)
                labels[i] = static_cast<std::int32_t>(rng.uniform_index(6));  // id 5 remapped to void
            for (std::int64_t i = 0; i < 16; ++i)
                if (labels[i] == 5) labels[i] = 14;
            Tensor<double> analytic;
            cross_entropy(logits, labels, void_ids, &analytic);
            Tensor<double> numeric;
            finite_difference_gradient(
                [&](const Tensor<double>& l) { return cross_entropy(l, labels, void_ids).value; },
                logits, numeric);
            CHECK(max_relative_gradient_error(analytic, numeric) < 1e-4);
        }
    }

    SUBCASE("l1/l2 wrt x_hat") {
        const auto x = Tensor<double>::rand_uniform({1, 3, 4, 4}, rng, 0.0, 1.0);
        const auto xh = Tensor<double>::rand_uniform({1, 3, 4, 4}, rng, 0.0, 1.0);
        Tensor<double> analytic, numeric;
        l1_reconstruction(x, xh, &analytic);
        finite_difference_gradient([&](const Tensor<double>& v) { return l1_reconstruction(x, v); },
                                   xh, numeric);
        CHECK(max_relative_gradient_error(analytic, numeric) < 1e-4);
        l2_reconstruction(x, xh, &analytic);
        finite_difference_gradient([&](const Tensor<double>& v) { return l2_reconstruction(x, v); },
                                   xh, numeric);
        CHECK(max_relative_gradient_error(analytic, numeric) < 1e-4);
    }

    SUBCASE("relaxed k-means wrt memberships, full differentiation") {
        LossSpec spec;
        spec.kind = LossKind::relaxed_kmeans;
        spec.K = 3;
        for (int trial = 0; trial < 3; ++trial) {
            const auto x = Tensor<double>::rand_uniform({1, 3, 4, 4}, rng, 0.0, 1.0);
            const auto y = random_membership<double>({1, 3, 4, 4}, rng);
            Tensor<double> analytic, numeric;
            relaxed_kmeans_loss(x, y, spec, &analytic);
            finite_difference_gradient(
                [&](const Tensor<double>& v) { return relaxed_kmeans_loss(x, v, spec); }, y, numeric);
            CHECK(max_relative_gradient_error(analytic, numeric) < 1e-4);
        }
    }

    SUBCASE("relaxed k-means wrt memberships, detached centers") {
        LossSpec spec;
        spec.kind = LossKind::relaxed_kmeans;
        spec.K = 3;
        spec.detach_centers = true;
        const auto x = Tensor<double>::rand_uniform({1, 2, 4, 4}, rng, 0.0, 1.0);
        const auto y = random_membership<double>({1, 3, 4, 4}, rng);
        // oracle holds the centers fixed at their current value
        const auto frozen = cluster_centers(x, y);
        const auto detached_value = [&](const Tensor<double>& v) {
            const auto xc = quantized_image(frozen, v);
            double rec = 0.0;
            for (std::int64_t i = 0; i < x.numel(); ++i) rec += std::abs(x[i] - xc[i]);
            rec /= static_cast<double>(x.numel());
            double reg = 0.0;
            for (std::int64_t i = 0; i < v.numel(); ++i) reg += v[i] * (1.0 - v[i]);
            return spec.alpha_rec * rec + spec.alpha_reg * reg;
        };
        Tensor<double> analytic, numeric;
        relaxed_kmeans_loss(x, y, spec, &analytic);
        finite_difference_gradient(detached_value, y, numeric);
        CHECK(max_relative_gradient_error(analytic, numeric) < 1e-4);
    }

    SUBCASE("mumford-shah wrt memberships") {
        LossSpec spec;
        spec.kind = LossKind::mumford_shah;
        spec.K = 3;
        spec.alpha_reg = 0.5;
        for (int trial = 0; trial < 3; ++trial) {
            const auto x = Tensor<double>::rand_uniform({1, 3, 4, 4}, rng, 0.0, 1.0);
            const auto y = random_membership<double>({1, 3, 4, 4}, rng);
            Tensor<double> analytic, numeric;
            mumford_shah_loss(x, y, spec, &analytic);
            finite_difference_gradient(
                [&](const Tensor<double>& v) { return mumford_shah_loss(x, v, spec); }, y, numeric);
            CHECK(max_relative_gradient_error(analytic, numeric) < 1e-4);
        }
    }
}

TEST_CASE("membership validation rejects invalid maps") {
    Tensor<double> bad({1, 2, 1, 2});
    bad.fill(0.7);  // rows sum to 1.4
    CHECK_THROWS_AS(validate_membership(bad), std::invalid_argument);
    Tensor<double> neg({1, 2, 1, 1});
    neg[0] = -0.2;
    neg[1] = 1.2;
    CHECK_THROWS_AS(validate_membership(neg), std::invalid_argument);
    LossSpec spec;
    spec.kind = LossKind::relaxed_kmeans;
    spec.K = 1;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
