#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "dnr/error.hpp"
#include "dnr/nn/checkpoint.hpp"
#include "dnr/nn/gradcheck.hpp"
#include "dnr/nn/kernels.hpp"
#include "dnr/nn/masked_softmax.hpp"
#include "dnr/nn/mlp.hpp"
#include "dnr/nn/optim.hpp"

using namespace dnr;
using nn::Matrix;
using nn::Mlp;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (auto& x : m.data) x = n(rng);
    return m;
}

}  // namespace

TEST_CASE("xavier initialisation") {
    nn::Rng rng(1);
    const auto net = Mlp::xavier({4, 3}, rng);
    const double bound = std::sqrt(6.0 / 7.0);
    for (double w : net.layers[0].w.data) CHECK(std::abs(w) <= bound);
    for (double b : net.layers[0].b) CHECK(b == 0.0);
    nn::Rng rng2(1);
    CHECK(Mlp::xavier({4, 3}, rng2) == net);

    // Variance of U(-a, a) is a^2 / 3 = 2 / (fan_in + fan_out).
    nn::Rng rng3(2);
    const auto big = Mlp::xavier({400, 250}, rng3);
    double sum = 0.0, sq = 0.0;
    for (double w : big.layers[0].w.data) {
        sum += w;
        sq += w * w;
    }
    const double n = static_cast<double>(big.layers[0].w.data.size());
    const double var = sq / n - std::pow(sum / n, 2);
    CHECK(var == doctest::Approx(2.0 / 650.0).epsilon(0.05));
}

TEST_CASE("mlp shapes") {
    const auto w = Mlp::widths_for(10, 32, 2, 5);
    CHECK(w == std::vector<std::size_t>{10, 32, 32, 5});
    nn::Rng rng(3);
    const auto net = Mlp::xavier(w, rng);
    CHECK(net.parameter_count() == 10 * 32 + 32 + 32 * 32 + 32 + 32 * 5 + 5);
    CHECK(net.input_dim() == 10);
    CHECK(net.output_dim() == 5);
}

TEST_CASE("dense kernels: serial, parallel and a naive product agree") {
    std::mt19937_64 rng(4);
    const auto x = random_matrix(17, 23, rng), w = random_matrix(23, 11, rng), dy = random_matrix(17, 11, rng);
    std::vector<double> b(11);
    for (auto& v : b) v = std::normal_distribution<double>()(rng);
    Matrix ys(17, 11), yp(17, 11);
    nn::kernels::serial::dense_forward(x, w, b, ys);
    nn::kernels::dense_forward(x, w, b, yp, Exec::Parallel);
    CHECK(ys == yp);
    for (std::size_t i = 0; i < 17; ++i)
        for (std::size_t j = 0; j < 11; ++j) {
            double acc = b[j];
            for (std::size_t k = 0; k < 23; ++k) acc += x(i, k) * w(k, j);
            CHECK(ys(i, j) == doctest::Approx(acc).epsilon(1e-12));
        }

    Matrix dws(23, 11), dwp(23, 11);
    std::vector<double> dbs(11, 0.0), dbp(11, 0.0);
    nn::kernels::serial::dense_backward_params(x, dy, dws, dbs);
    nn::kernels::dense_backward_params(x, dy, dwp, dbp, Exec::Parallel);
    CHECK(dws == dwp);
    CHECK(dbs == dbp);
    Matrix dxs(17, 23), dxp(17, 23);
    nn::kernels::serial::dense_backward_input(dy, w, dxs);
    nn::kernels::dense_backward_input(dy, w, dxp, Exec::Parallel);
    CHECK(dxs == dxp);
}

TEST_CASE("masked softmax") {
    std::vector<double> out(4);
    const std::vector<std::uint8_t> three{1, 1, 0, 1};
    nn::masked_softmax(std::vector<double>{0.3, 0.3, 9.0, 0.3}, three, out);
    CHECK(out[0] == doctest::Approx(1.0 / 3.0));
    CHECK(out[2] == 0.0);

    const std::vector<std::uint8_t> two{1, 0, 1, 0};
    nn::masked_softmax(std::vector<double>{1.0, 5.0, 0.0, -2.0}, two, out);
    CHECK(out[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)));
    CHECK(out[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(out[2] == doctest::Approx(0.2689).epsilon(1e-4));
    CHECK(out[1] == 0.0);
    CHECK(out[3] == 0.0);

    std::vector<double> shifted(4);
    nn::masked_softmax(std::vector<double>{1001.0, 1005.0, 1000.0, 998.0}, two, shifted);
    CHECK(shifted == out);
    CHECK(nn::masked_log_prob(std::vector<double>{1.0, 5.0, 0.0, -2.0}, two, 0) == doctest::Approx(std::log(out[0])));
    CHECK_THROWS_AS(nn::masked_softmax(std::vector<double>{1, 2, 3, 4}, std::vector<std::uint8_t>(4, 0), out),
                    ContractViolation);
}

TEST_CASE("adam") {
    nn::Rng rng(5);
    auto net = Mlp::xavier({3, 2}, rng);
    const auto before = net;
    Mlp g({3, 2});
    nn::AdamState st(net, 1e-3);
    nn::adam_step(net, g, st);
    CHECK(net == before);

    for (auto block : g.parameter_blocks())
        for (auto& x : block) x = -0.7;
    st = nn::AdamState(net, 1e-3);
    nn::adam_step(net, g, st);
    for (std::size_t k = 0; k < net.layers[0].w.data.size(); ++k)
        CHECK(net.layers[0].w.data[k] - before.layers[0].w.data[k] == doctest::Approx(1e-3).epsilon(1e-4));

    auto bad = g;
    bad.layers[0].b[0] = std::numeric_limits<double>::quiet_NaN();
    const auto snapshot = net;
    const auto st_snapshot = st.step;
    CHECK_THROWS_AS(nn::adam_step(net, bad, st), NumericalError);
    CHECK(net == snapshot);
    CHECK(st.step == st_snapshot);
}

TEST_CASE("polyak averaging") {
    Mlp target({2, 1}), source({2, 1});
    for (auto block : target.parameter_blocks())
        for (auto& x : block) x = 1.0;
    nn::polyak_update(target, source, 0.5);
    for (auto block : target.parameter_blocks())
        for (double x : block) CHECK(x == 0.5);
    auto same = target;
    nn::polyak_update(same, target, 0.995);
    CHECK(same == target);
}

TEST_CASE("finite differences on a quadratic") {
    nn::Rng rng(6);
    auto net = Mlp::xavier({3, 2}, rng);
    // loss = 0.5 * sum of squared parameters; gradient = parameters.
    auto loss = [&] {
        double s = 0.0;
        for (auto block : std::as_const(net).parameter_blocks())
            for (double x : block) s += 0.5 * x * x;
        return s;
    };
    const auto grad = net;
    nn::GradCheckOptions opt;
    opt.samples = 0;
    CHECK(nn::finite_diff_check(loss, net, grad, opt) <= 1e-7);
}

TEST_CASE("finite differences on a masked-softmax likelihood and a regression loss") {
    nn::Rng rng(7);
    std::mt19937_64 data_rng(8);
    auto net = Mlp::xavier(Mlp::widths_for(6, 16, 2, 9), rng);
    const auto x = random_matrix(5, 6, data_rng);
    std::vector<std::vector<std::uint8_t>> masks(5, std::vector<std::uint8_t>(9, 0));
    std::vector<std::size_t> actions(5);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t c = 0; c < 9; ++c) masks[i][c] = (c + i) % 3 != 0;
        actions[i] = (i + 1) % 3 == 0 ? 1 : 0;
        if (!masks[i][actions[i]]) actions[i] = 2;
        REQUIRE(masks[i][actions[i]]);
    }

    auto nll = [&] {
        const auto out = nn::forward(net, x);
        double s = 0.0;
        for (std::size_t i = 0; i < 5; ++i) s -= nn::masked_log_prob(out.row(i), masks[i], actions[i]);
        return s / 5.0;
    };
    nn::MlpTape tape;
    const auto out = nn::forward(net, x, &tape);
    Matrix dy(5, 9);
    for (std::size_t i = 0; i < 5; ++i) {
        std::vector<double> p(9), g(9);
        nn::masked_softmax(out.row(i), masks[i], p);
        nn::masked_log_prob_grad(p, masks[i], actions[i], g);
        for (std::size_t c = 0; c < 9; ++c) dy(i, c) = -g[c] / 5.0;
    }
    Mlp grads(net.widths());
    nn::backward(net, tape, dy, grads);
    CHECK(nn::finite_diff_check(nll, net, grads) <= 1e-4);

    const std::vector<double> targets{0.5, -1.0, 2.0, 0.0, 1.5};
    auto mse = [&] {
        const auto q = nn::forward(net, x);
        double s = 0.0;
        for (std::size_t i = 0; i < 5; ++i) s += 0.5 * std::pow(q(i, actions[i]) - targets[i], 2);
        return s / 5.0;
    };
    nn::MlpTape tape2;
    const auto q = nn::forward(net, x, &tape2);
    Matrix dq(5, 9);
    for (std::size_t i = 0; i < 5; ++i) dq(i, actions[i]) = (q(i, actions[i]) - targets[i]) / 5.0;
    Mlp g2(net.widths());
    nn::backward(net, tape2, dq, g2);
    CHECK(nn::finite_diff_check(mse, net, g2) <= 1e-4);
}

TEST_CASE("checkpoint round trip") {
    nn::Rng rng(9);
    nn::Checkpoint c;
    c.meta = {{"kind", "test"}, {"step", 3}};
    c.put("a", Mlp::xavier({3, 4, 2}, rng));
    c.put("b", Mlp::xavier({2, 1}, rng));
    const auto bytes = nn::serialize_checkpoint(c);
    const auto back = nn::deserialize_checkpoint(bytes);
    CHECK(back.meta == c.meta);
    CHECK(back.net("a") == c.net("a"));
    CHECK(back.net("b") == c.net("b"));
    CHECK(nn::serialize_checkpoint(back) == bytes);
    CHECK_THROWS_AS(nn::deserialize_checkpoint(bytes.substr(0, bytes.size() - 5)), ParseError);
    CHECK_THROWS_AS(nn::deserialize_checkpoint("garbage"), ParseError);

    const auto path = std::filesystem::temp_directory_path() / "dnr_test.ckpt";
    nn::write_checkpoint(path, c);
    CHECK(nn::read_checkpoint(path).net("a") == c.net("a"));
    std::filesystem::remove(path);
}
