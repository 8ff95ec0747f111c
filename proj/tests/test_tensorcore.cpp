#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "t5lab/graph.hpp"
#include "t5lab/rng.hpp"
#include "t5lab/tensor.hpp"
#include "testutil.hpp"

using namespace t5lab;
using testutil::fd_max_rel_err;
using testutil::random_tensor;

TEST_CASE("matmul identity and hand arithmetic") {
    Graph<double> g;
    int eye = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
    int m = g.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    int out = g.matmul(eye, m);
    CHECK(g.value(out).data == std::vector<double>{1, 2, 3, 4});

    int a = g.constant(Tensor<double>({1, 2}, {1, 2}));
    int b = g.constant(Tensor<double>({2, 1}, {3, 4}));
    CHECK(g.value(g.matmul(a, b)).data == std::vector<double>{11});

    int bad = g.constant(Tensor<double>({3, 1}, {1, 2, 3}));
    CHECK_THROWS_AS(g.matmul(a, bad), ShapeError);
}

TEST_CASE("matmul gradient vs central finite differences") {
    Rng rng(7);
    std::vector<Tensor<double>> params = {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};

    auto eval = [](const std::vector<Tensor<double>>& p) {
        Graph<double> g;
        int a = g.leaf(p[0], true);
        int b = g.leaf(p[1], true);
        return g.value(g.sum_all(g.matmul(a, b))).data[0];
    };

    Graph<double> g;
    std::vector<Tensor<double>> work = params;
    int a = g.param(&work[0]);
    int b = g.param(&work[1]);
    g.backward(g.sum_all(g.matmul(a, b)));
    std::vector<std::vector<double>> grads = {work[0].grad, work[1].grad};

    CHECK(fd_max_rel_err(eval, params, grads) < 1e-6);
}

TEST_CASE("softmax basics") {
    Graph<double> g;
    // a single key gets probability exactly 1 (the length-1 identity case)
    int one = g.softmax_lastdim(g.constant(Tensor<double>({1, 1}, {5.0})));
    CHECK(g.value(one).data[0] == 1.0);

    int thirds = g.softmax_lastdim(g.constant(Tensor<double>({1, 3}, {0, 0, 0})));
    for (double v : g.value(thirds).data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // last position masked: softmax of [1,2] padded with an exact 0
    auto mask = std::make_shared<const std::vector<double>>(
        std::vector<double>{0.0, 0.0, mask_value<double>()});
    int masked = g.softmax_lastdim(g.constant(Tensor<double>({1, 3}, {1, 2, 3})), mask);
    double e1 = std::exp(1.0), e2 = std::exp(2.0);
    CHECK(g.value(masked).data[0] == doctest::Approx(e1 / (e1 + e2)).epsilon(1e-12));
    CHECK(g.value(masked).data[1] == doctest::Approx(e2 / (e1 + e2)).epsilon(1e-12));
    CHECK(g.value(masked).data[2] == 0.0);
}

TEST_CASE("softmax rows sum to one; fully masked rows are zero; single key is exact") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        int64_t n = 2 + static_cast<int64_t>(rng.below(6));
        Tensor<double> x = random_tensor({4, n}, rng);
        std::vector<double> mask(static_cast<size_t>(4 * n), 0.0);
        // row 0 unmasked, row 1 fully masked, row 2 single unmasked key, row 3 random
        for (int64_t j = 0; j < n; ++j) mask[static_cast<size_t>(n + j)] = mask_value<double>();
        for (int64_t j = 0; j < n - 1; ++j) mask[static_cast<size_t>(2 * n + j)] = mask_value<double>();
        for (int64_t j = 0; j < n; ++j) {
            if (rng.uniform() < 0.4) mask[static_cast<size_t>(3 * n + j)] = mask_value<double>();
        }
        Graph<double> g;
        int probs = g.softmax_lastdim(g.constant(x), std::make_shared<const std::vector<double>>(mask));
        const auto& p = g.value(probs);
        double row0 = 0;
        for (int64_t j = 0; j < n; ++j) row0 += p.data[static_cast<size_t>(j)];
        CHECK(std::abs(row0 - 1.0) <= 1e-12);
        for (int64_t j = 0; j < n; ++j) CHECK(p.data[static_cast<size_t>(n + j)] == 0.0);
        CHECK(p.data[static_cast<size_t>(2 * n + n - 1)] == 1.0);
    }
}

TEST_CASE("rms_norm values") {
    Graph<double> g;
    int ones = g.constant(Tensor<double>({1, 4}, {1, 1, 1, 1}));
    int scale = g.constant(Tensor<double>({4}, {1, 1, 1, 1}));
    const auto& out = g.value(g.rms_norm(ones, scale, 1e-15));
    for (double v : out.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    int twos = g.constant(Tensor<double>({1, 2}, {2, 2}));
    int s2 = g.constant(Tensor<double>({2}, {1, 1}));
    const auto& out2 = g.value(g.rms_norm(twos, s2, 1e-15));
    for (double v : out2.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS_AS(g.rms_norm(twos, s2, 0.0), ShapeError);
}

TEST_CASE("gelu basics") {
    Graph<double> g;
    int x = g.constant(Tensor<double>({3}, {0.0, 1.0, -1.0}));
    const auto& y = g.value(g.gelu(x));
    CHECK(y.data[0] == 0.0);
    CHECK(y.data[1] == doctest::Approx(0.841192).epsilon(1e-5));
    CHECK(y.data[2] == doctest::Approx(-0.158808).epsilon(1e-4));
}

TEST_CASE("cross entropy with uniform logits is ln(C)") {
    for (int64_t c : {2, 5, 17}) {
        Graph<double> g;
        int logits = g.constant(Tensor<double>::zeros({3, c}));
        int loss = g.cross_entropy_masked(logits, {0, 1, 0}, {1, 1, 1});
        CHECK(g.value(loss).data[0] ==
              doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-12));
    }
}

TEST_CASE("empty loss support raises") {
    Graph<double> g;
    int logits = g.constant(Tensor<double>::zeros({2, 3}));
    CHECK_THROWS_WITH_AS(g.cross_entropy_masked(logits, {0, 1}, {0, 0}), "empty loss support", Error);
    int pred = g.constant(Tensor<double>::zeros({2}));
    CHECK_THROWS_WITH_AS(g.mse_masked(pred, {0, 0}, {0, 0}), "empty loss support", Error);
}

TEST_CASE("masking a duplicated row leaves loss and gradients bit-identical") {
    Rng rng(23);
    Tensor<double> w = random_tensor({3, 4}, rng);
    Tensor<double> x3 = random_tensor({3, 3}, rng);

    // batch of 3 rows
    Tensor<double> wa = w;
    Graph<double> ga;
    int logits_a = ga.matmul(ga.constant(x3), ga.param(&wa));
    int loss_a = ga.cross_entropy_masked(logits_a, {0, 1, 2}, {1, 1, 1});
    ga.backward(loss_a);

    // same rows plus a duplicate of row 1, masked out
    Tensor<double> x4 = Tensor<double>::zeros({4, 3});
    std::copy_n(x3.data.data(), 9, x4.data.data());
    std::copy_n(x3.data.data() + 3, 3, x4.data.data() + 9);
    Tensor<double> wb = w;
    Graph<double> gb;
    int logits_b = gb.matmul(gb.constant(x4), gb.param(&wb));
    int loss_b = gb.cross_entropy_masked(logits_b, {0, 1, 2, 1}, {1, 1, 1, 0});
    gb.backward(loss_b);

    CHECK(std::memcmp(&ga.value(loss_a).data[0], &gb.value(loss_b).data[0], sizeof(double)) == 0);
    CHECK(std::memcmp(wa.grad.data(), wb.grad.data(), wa.grad.size() * sizeof(double)) == 0);
}

TEST_CASE("zeroing-out vs masking-out a position gives identical gradients") {
    Rng rng(29);
    Tensor<double> w = random_tensor({3, 4}, rng);
    Tensor<double> x = random_tensor({4, 3}, rng);

    // mask out row 2 of 4
    Tensor<double> wa = w;
    Graph<double> ga;
    int la = ga.cross_entropy_masked(ga.matmul(ga.constant(x), ga.param(&wa)), {0, 1, 3, 2},
                                     {1, 1, 0, 1});
    ga.backward(la);

    // drop row 2 entirely
    Tensor<double> x3 = Tensor<double>::zeros({3, 3});
    std::copy_n(x.data.data(), 6, x3.data.data());
    std::copy_n(x.data.data() + 9, 3, x3.data.data() + 6);
    Tensor<double> wb = w;
    Graph<double> gb;
    int lb = gb.cross_entropy_masked(gb.matmul(gb.constant(x3), gb.param(&wb)), {0, 1, 2}, {1, 1, 1});
    gb.backward(lb);

    CHECK(ga.value(la).data[0] == gb.value(lb).data[0]);
    CHECK(std::memcmp(wa.grad.data(), wb.grad.data(), wa.grad.size() * sizeof(double)) == 0);
}

TEST_CASE("finite difference gradients for every differentiable op") {
    Rng rng(101);
    auto check_fd = [&](const char* what,
                        const std::function<int(Graph<double>&, const std::vector<int>&)>& build,
                        std::vector<Shape> shapes, double tol) {
        std::vector<Tensor<double>> params;
        for (auto& s : shapes) params.push_back(random_tensor(s, rng));

        auto eval = [&](const std::vector<Tensor<double>>& p) {
            Graph<double> g;
            std::vector<int> ids;
            for (const auto& t : p) ids.push_back(g.leaf(t, true));
            return g.value(build(g, ids)).data[0];
        };

        std::vector<Tensor<double>> work = params;
        Graph<double> g;
        std::vector<int> ids;
        for (auto& t : work) ids.push_back(g.param(&t));
        g.backward(build(g, ids));
        std::vector<std::vector<double>> grads;
        for (auto& t : work) grads.push_back(t.grad);

        double err = fd_max_rel_err(eval, params, grads);
        INFO(what, " max rel err ", err);
        CHECK(err < tol);
    };

    // weighted sums make softmax/norm outputs non-degenerate scalars
    Rng wrng(5);
    auto weighted = [&wrng](Graph<double>& g, int node) {
        Tensor<double> w = Tensor<double>::zeros(g.value(node).shape);
        Rng local = wrng;  // fixed weights per call site
        for (auto& v : w.data) v = local.uniform(-1.0, 1.0);
        return g.sum_all(g.mul(node, g.constant(w)));
    };

    check_fd("add", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.add(p[0], p[1]));
    }, {{3, 4}, {3, 4}}, 1e-6);
    check_fd("add_bias", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.add_bias(p[0], p[1]));
    }, {{3, 4}, {4}}, 1e-6);
    check_fd("mul", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.mul(p[0], p[1]));
    }, {{3, 4}, {3, 4}}, 1e-4);
    check_fd("scale", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.scale(p[0], -1.7));
    }, {{3, 4}}, 1e-6);
    check_fd("matmul", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.matmul(p[0], p[1]));
    }, {{3, 4}, {4, 2}}, 1e-6);
    check_fd("matmul_nt", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.matmul_nt(p[0], p[1]));
    }, {{3, 4}, {5, 4}}, 1e-4);
    check_fd("gelu", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.gelu(p[0]));
    }, {{3, 4}}, 1e-4);
    check_fd("rms_norm", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.rms_norm(p[0], p[1], 1e-6));
    }, {{3, 4}, {4}}, 1e-6);
    check_fd("softmax", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.softmax_lastdim(p[0]));
    }, {{3, 5}}, 1e-4);
    check_fd("softmax masked", [&](Graph<double>& g, const std::vector<int>& p) {
        auto mask = std::make_shared<const std::vector<double>>(std::vector<double>{
            0, 0, mask_value<double>(), 0, 0,
            mask_value<double>(), mask_value<double>(), mask_value<double>(), mask_value<double>(),
            mask_value<double>(),
            0, 0, 0, 0, mask_value<double>()});
        return weighted(g, g.softmax_lastdim(p[0], mask));
    }, {{3, 5}}, 1e-4);
    check_fd("gather_rows", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.gather_rows(p[0], {2, 0, 2, 1}));
    }, {{3, 4}}, 1e-4);
    check_fd("take", [&](Graph<double>& g, const std::vector<int>& p) {
        auto idx = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{0, 2, 4, 2});
        return weighted(g, g.take(p[0], idx, 1, {2, 2}));
    }, {{3, 2}}, 1e-4);
    check_fd("broadcast_row", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.broadcast_row(p[0], 3));
    }, {{4}}, 1e-4);
    check_fd("slice+concat", [&](Graph<double>& g, const std::vector<int>& p) {
        int a = g.slice_rows(p[0], 0, 2);
        int b = g.slice_rows(p[0], 2, 3);
        int c = g.concat_rows({a, b});
        int d = g.slice_cols(c, 1, 3);
        int e = g.slice_cols(c, 0, 1);
        return weighted(g, g.concat_cols({d, e}));
    }, {{3, 4}}, 1e-4);
    check_fd("reshape", [&](Graph<double>& g, const std::vector<int>& p) {
        return weighted(g, g.reshape(p[0], {2, 6}));
    }, {{3, 4}}, 1e-6);
    check_fd("cross_entropy_masked", [&](Graph<double>& g, const std::vector<int>& p) {
        return g.cross_entropy_masked(p[0], {1, 0, 2}, {1, 0, 1});
    }, {{3, 4}}, 1e-4);
    check_fd("mse_masked", [&](Graph<double>& g, const std::vector<int>& p) {
        return g.mse_masked(p[0], {0.3, -0.2, 1.1, 0.0}, {1, 1, 0, 1});
    }, {{4}}, 1e-4);
}

TEST_CASE("determinism: identical graphs give bitwise identical outputs and gradients") {
    auto run = [](std::vector<double>* grads_out) {
        Rng rng(42);
        Tensor<double> w = random_tensor({4, 4}, rng);
        Tensor<double> x = random_tensor({5, 4}, rng);
        Graph<double> g;
        int h = g.matmul(g.constant(x), g.param(&w));
        int probs = g.softmax_lastdim(h);
        int loss = g.cross_entropy_masked(probs, {0, 1, 2, 3, 0}, {1, 1, 1, 1, 1});
        g.backward(loss);
        *grads_out = w.grad;
        return g.value(loss).data[0];
    };
    std::vector<double> g1, g2;
    double l1 = run(&g1);
    double l2 = run(&g2);
    CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("checked mode rejects non-finite values") {
    Graph<double> g;
    Tensor<double> bad({2}, {1.0, 0.0});
    bad.data[1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(g.leaf(bad, false), NonFiniteError);
    CHECK_THROWS_AS(g.backward(g.constant(Tensor<double>::zeros({2, 2}))), ShapeError);
}

TEST_CASE("rng: identical seeds give identical sequences; different names differ") {
    Rng a(123), b(123), c(124);
    bool all_same = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t va = a.next_u64(), vb = b.next_u64();
        all_same = all_same && va == vb;
        any_diff = any_diff || va != c.next_u64();
    }
    CHECK(all_same);
    CHECK(any_diff);

    Rng n1 = rng_for(7, "alpha");
    Rng n2 = rng_for(7, "beta");
    CHECK(n1.next_u64() != n2.next_u64());

    // normals have roughly unit variance
    Rng nr(9);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double v = nr.normal();
        sum += v;
        sq += v * v;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}
