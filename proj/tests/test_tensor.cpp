#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gradcheck.hpp"
#include "usfmae/rng.hpp"
#include "usfmae/tensor.hpp"

using namespace usfmae;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = rng.uniform(-1.0, 1.0);
    return Tensor<double>::from_data(std::move(shape), std::move(d), requires_grad);
}

}  // namespace

TEST_CASE("matmul basics") {
    auto I = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    auto B = Tensor<double>::from_data({2, 2}, {3, 4, 5, 6});
    auto C = matmul(I, B);
    CHECK(C.data() == B.data());

    auto s = matmul(Tensor<double>::from_data({1, 1}, {2}), Tensor<double>::from_data({1, 1}, {3}));
    CHECK(s.item() == 6.0);

    CHECK_THROWS_AS(matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 3})), ConfigError);
    try {
        matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 3}));
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);  // names both shapes
    }
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(11);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto res = gradcheck::check<double>([&] { return sum(matmul(a, b)); }, {a, b});
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("softmax values and stability") {
    auto u = softmax_rows(Tensor<double>::from_data({1, 3}, {0, 0, 0}));
    for (double v : u.data()) CHECK(v == Catch::Approx(1.0 / 3.0));

    auto big = softmax_rows(Tensor<double>::from_data({1, 3}, {1000, 0, -1000}));
    CHECK(big.data()[0] == Catch::Approx(1.0));
    CHECK(std::isfinite(big.data()[0]));

    // reference scalar evaluation
    auto y = softmax_rows(Tensor<double>::from_data({1, 3}, {1, 2, 3}));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int j = 0; j < 3; ++j) CHECK(y.data()[j] == Catch::Approx(std::exp(1.0 + j) / z).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to 1 for any finite input") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = random_tensor({4, 7}, rng, false);
        for (auto& v : x.data()) v *= 100.0;
        auto y = softmax_rows(x);
        for (int i = 0; i < 4; ++i) {
            double s = 0;
            for (int j = 0; j < 7; ++j) s += y.at(i, j);
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("layernorm definitional cases") {
    auto gain = Tensor<double>::filled({3}, 1.0);
    auto bias = Tensor<double>::zeros({3});
    auto c = layernorm_rows(Tensor<double>::from_data({1, 3}, {5, 5, 5}), gain, bias);
    for (double v : c.data()) CHECK(v == Catch::Approx(0.0).margin(1e-9));

    auto y = layernorm_rows(Tensor<double>::from_data({1, 3}, {1, 2, 3}), gain, bias, 0.0);
    double mean = 0, var = 0;
    for (double v : y.data()) mean += v / 3;
    for (double v : y.data()) var += v * v / 3;
    CHECK(mean == Catch::Approx(0.0).margin(1e-6));
    CHECK(var == Catch::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("cross entropy analytic cases") {
    auto hot = Tensor<double>::from_data({1, 5}, {0, 0, 1e6, 0, 0});
    CHECK(cross_entropy_logits(hot, {2}).item() == Catch::Approx(0.0).margin(1e-9));

    auto uni = Tensor<double>::zeros({2, 5});
    CHECK(cross_entropy_logits(uni, {0, 3}).item() == Catch::Approx(std::log(5.0)).epsilon(1e-9));

    CHECK_THROWS_AS(cross_entropy_logits(uni, {0, 5}), ConfigError);

    // independent scalar evaluation on a random batch
    Rng rng(3);
    auto logits = random_tensor({4, 5}, rng, false);
    std::vector<int> labels = {1, 0, 4, 2};
    double ref = 0;
    for (int i = 0; i < 4; ++i) {
        double z = 0;
        for (int j = 0; j < 5; ++j) z += std::exp(logits.at(i, j));
        ref += -std::log(std::exp(logits.at(i, labels[i])) / z);
    }
    ref /= 4;
    CHECK(cross_entropy_logits(logits, labels).item() == Catch::Approx(ref).epsilon(1e-6));
}

TEST_CASE("every differentiable primitive matches finite differences over random seeds") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const int m = 2 + rng.uniform_int(3);
        const int n = 2 + rng.uniform_int(3);
        const int k = 2 + rng.uniform_int(3);
        auto a = random_tensor({m, n}, rng);
        auto b = random_tensor({m, n}, rng);
        auto w = random_tensor({n, k}, rng);
        auto bias = random_tensor({n}, rng);
        auto gain = random_tensor({n}, rng);
        std::vector<int> idx;
        for (int i = 0; i < m + 1; ++i) idx.push_back(rng.uniform_int(m));
        std::vector<int> labels;
        for (int i = 0; i < m; ++i) labels.push_back(rng.uniform_int(n));

        auto check = [&](auto fwd, std::vector<Tensor<double>> params) {
            auto res = gradcheck::check<double>(fwd, params);
            INFO("seed " << seed);
            CHECK(res.max_rel_err < 1e-3);
        };
        check([&] { return sum(matmul(a, w)); }, {a, w});
        check([&] { return sum(mul(add(a, b), b)); }, {a, b});
        check([&] { return sum(scale(a, 1.7)); }, {a});
        check([&] { return sum(transpose(a)); }, {a});
        check([&] { return sum(mul(reshape(a, {n, m}), reshape(b, {n, m}))); }, {a, b});
        check([&] { return sum(mul(concat_rows<double>({a, b}), concat_rows<double>({b, a}))); }, {a, b});
        check([&] { return sum(mul(concat_cols<double>({a, b}), concat_cols<double>({b, a}))); }, {a, b});
        check([&] { return sum(mul(index_select_rows(a, idx), index_select_rows(b, idx))); }, {a, b});
        check([&] { return sum(mul(slice_rows(a, 1, m - 1), slice_rows(b, 0, m - 1))); }, {a, b});
        check([&] { return sum(mul(slice_cols(a, 1, n - 1), slice_cols(b, 0, n - 1))); }, {a, b});
        check([&] { return mean(mul(a, a)); }, {a});
        check([&] { return sum(mul(mean_rows(a), mean_rows(b))); }, {a, b});
        check([&] { return sum(mul(softmax_rows(a), b)); }, {a, b});
        check([&] { return sum(mul(layernorm_rows(a, gain, bias), b)); }, {a, gain, bias});
        check([&] { return sum(gelu(a)); }, {a});
        check([&] { return sum(mul(add_rowvec(a, bias), b)); }, {a, bias});
        check([&] { return cross_entropy_logits(a, labels); }, {a});
    }
}

TEST_CASE("gradient accumulation is linear over paths") {
    Rng rng(42);
    auto a = random_tensor({3, 3}, rng);

    auto path1 = [&] { return sum(mul(a, a)); };
    auto path2 = [&] { return sum(scale(a, 2.0)); };

    a.zero_grad();
    path1().backward();
    auto g1 = a.grad();
    a.zero_grad();
    path2().backward();
    auto g2 = a.grad();
    a.zero_grad();
    add(path1(), path2()).backward();
    for (size_t i = 0; i < g1.size(); ++i) CHECK(a.grad()[i] == Catch::Approx(g1[i] + g2[i]).margin(1e-12));
}

TEST_CASE("backward populates grads exactly once per call") {
    auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
    auto loss = [&] { return sum(a); };
    a.zero_grad();
    loss().backward();
    for (double g : a.grad()) CHECK(g == 1.0);
    loss().backward();  // second pass accumulates
    for (double g : a.grad()) CHECK(g == 2.0);
}

TEST_CASE("reshape and transpose round-trip bit-exactly") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = random_tensor({3, 5}, rng, false);
        CHECK(reshape(reshape(a, {5, 3}), {3, 5}).data() == a.data());
        CHECK(transpose(transpose(a)).data() == a.data());
    }
}
