#include <cmath>

#include <gtest/gtest.h>

#include "mtdrl/neural.hpp"

using namespace mtdrl;
using namespace mtdrl::nn;

namespace {

// 2-2-1: W1 = [[1,-1],[0.5,2]], b1 = [0,0.5], W2 = [[1,-2]], b2 = [0.25]
Mlp hand_net() {
    Parameters p;
    p.emplace_back(2, 2);
    p[0].weights = {1.0, -1.0, 0.5, 2.0};
    p[0].biases = {0.0, 0.5};
    p.emplace_back(2, 1);
    p[1].weights = {1.0, -2.0};
    p[1].biases = {0.25};
    return Mlp::from_parameters(p);
}

double central_difference(Mlp& net, std::size_t layer, bool bias, std::size_t idx, std::span<const double> x,
                          std::span<const double> t, double h = 1e-6) {
    auto& v = bias ? net.mutable_parameters()[layer].biases[idx] : net.mutable_parameters()[layer].weights[idx];
    const double orig = v;
    v = orig + h;
    const double up = mse_loss(net.predict(x), t);
    v = orig - h;
    const double down = mse_loss(net.predict(x), t);
    v = orig;
    return (up - down) / (2 * h);
}

}  // namespace

TEST(Gelu, ExactErfForm) {
    EXPECT_EQ(gelu(0.0), 0.0);
    EXPECT_NEAR(gelu(1.0), 0.8413447460685429, 1e-15);
    EXPECT_NEAR(gelu(-1.0), -0.15865525393145707, 1e-15);
    EXPECT_NEAR(gelu(0.5), 0.5 * 0.6914624612740131, 1e-15);
    EXPECT_NEAR(gelu_derivative(0.5), 0.8674951246561629, 1e-14);
    EXPECT_NEAR(gelu_derivative(2.0), 1.0852318010781969, 1e-14);
    EXPECT_NEAR(gelu_derivative(0.0), 0.5, 1e-15);
    for (double x = -6; x <= 6; x += 0.37)
        EXPECT_NEAR(gelu_derivative(x), (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6, 1e-8);
}

TEST(Mlp, HandForward) {
    auto net = hand_net();
    ForwardCache c;
    const std::vector<double> x{1.0, 0.5};
    net.forward(x, c);
    EXPECT_DOUBLE_EQ(c.pre[0][0], 0.5);
    EXPECT_DOUBLE_EQ(c.pre[0][1], 2.0);
    EXPECT_NEAR(c.post[1][0], 0.3457312306370066, 1e-15);
    EXPECT_NEAR(c.post[1][1], 1.9544997361036416, 1e-15);
    EXPECT_NEAR(c.output()[0], 0.3457312306370066 - 2 * 1.9544997361036416 + 0.25, 1e-14);
    EXPECT_NEAR(c.output()[0], -3.3132682414, 1e-9);
}

TEST(Mlp, HandBackward) {
    auto net = hand_net();
    ForwardCache c;
    const std::vector<double> x{1.0, 0.5};
    net.forward(x, c);
    const std::vector<double> one{1.0};
    auto g = net.backward(c, one);
    const double d0 = 0.8674951246561629, d1 = -2.1704636021563938;
    EXPECT_NEAR(g[0].w(0, 0), d0 * 1.0, 1e-13);
    EXPECT_NEAR(g[0].w(0, 1), d0 * 0.5, 1e-13);
    EXPECT_NEAR(g[0].w(1, 0), d1 * 1.0, 1e-13);
    EXPECT_NEAR(g[0].w(1, 1), d1 * 0.5, 1e-13);
    EXPECT_NEAR(g[0].biases[0], d0, 1e-13);
    EXPECT_NEAR(g[0].biases[1], d1, 1e-13);
    EXPECT_NEAR(g[1].weights[0], 0.3457312306370066, 1e-14);
    EXPECT_NEAR(g[1].weights[1], 1.9544997361036416, 1e-14);
    EXPECT_DOUBLE_EQ(g[1].biases[0], 1.0);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        Mlp net({5, 7, 3, 4}, rng);
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<double> x(5), t(4);
        for (auto& v : x) v = g(rng);
        for (auto& v : t) v = g(rng);
        for (auto& l : net.mutable_parameters())
            for (auto& b : l.biases) b = 0.3 * g(rng);
        ForwardCache c;
        net.forward(x, c);
        auto grads = net.backward(c, mse_gradient(c.output(), t));
        for (std::size_t k = 0; k < grads.size(); ++k) {
            for (std::size_t i = 0; i < grads[k].weights.size(); ++i)
                EXPECT_NEAR(grads[k].weights[i], central_difference(net, k, false, i, x, t), 1e-6);
            for (std::size_t i = 0; i < grads[k].biases.size(); ++i)
                EXPECT_NEAR(grads[k].biases[i], central_difference(net, k, true, i, x, t), 1e-6);
        }
    }
}

TEST(Mlp, StaleCacheIsRejected) {
    auto net = hand_net();
    ForwardCache c;
    const std::vector<double> x{1.0, 0.5};
    net.forward(x, c);
    net.mutable_parameters()[0].weights[0] = 3.0;
    const std::vector<double> one{1.0};
    EXPECT_THROW(net.backward(c, one), DataError);
    EXPECT_THROW(net.predict(std::vector<double>{1.0}), DataError);
}

TEST(Mlp, GlorotInitIsSeededAndBounded) {
    Rng a(11), b(11);
    Mlp n1({46, 15, 7}, a), n2({46, 15, 7}, b);
    EXPECT_EQ(n1.parameters(), n2.parameters());
    const double limit = std::sqrt(6.0 / 61.0);
    for (double w : n1.parameters()[0].weights) EXPECT_LE(std::abs(w), limit);
    EXPECT_EQ(n1.parameter_count(), 46u * 15 + 15 + 15 * 7 + 7);
    EXPECT_THROW(Mlp({3}), UsageError);
    EXPECT_THROW(Mlp({3, 0, 2}), UsageError);
}

TEST(Loss, MseAndGradient) {
    const std::vector<double> p{1.0, 2.0, 4.0}, t{1.0, 0.0, 1.0};
    EXPECT_DOUBLE_EQ(mse_loss(p, t), (0.0 + 4.0 + 9.0) / 3.0);
    auto g = mse_gradient(p, t);
    EXPECT_DOUBLE_EQ(g[1], 2.0 * 2.0 / 3.0);
    EXPECT_THROW(mse_loss(p, std::vector<double>{1.0}), DataError);
}

TEST(SgdMomentum, TwoHandSteps) {
    Parameters w(1, LayerParams(1, 1));
    w[0].weights[0] = 1.0;
    auto g = zeros_like(w);
    g[0].weights[0] = 0.5;
    SgdMomentum opt(0.1, 0.9);
    opt.step(w, g);
    EXPECT_DOUBLE_EQ(w[0].weights[0], 0.95);
    opt.step(w, g);
    EXPECT_DOUBLE_EQ(w[0].weights[0], 0.95 - 0.1 * 0.95);
    EXPECT_DOUBLE_EQ(w[0].biases[0], 0.0);
    EXPECT_THROW(SgdMomentum(0.1, 1.0), UsageError);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
    Parameters w(1, LayerParams(2, 1));
    auto g = zeros_like(w);
    g[0].weights = {3.0, -0.01};
    Adam opt(Adam::Settings{0.001});
    opt.step(w, g);
    EXPECT_NEAR(w[0].weights[0], -0.001, 1e-11);
    EXPECT_NEAR(w[0].weights[1], 0.001, 1e-8);
    EXPECT_EQ(w[0].biases[0], 0.0);
    EXPECT_EQ(opt.step_count(), 1);
}

TEST(Adam, MinimisesQuadratic) {
    Parameters w(1, LayerParams(1, 1));
    w[0].weights[0] = 5.0;
    Adam opt(Adam::Settings{0.05});
    for (int i = 0; i < 2000; ++i) {
        auto g = zeros_like(w);
        g[0].weights[0] = 2.0 * (w[0].weights[0] - 1.5);
        opt.step(w, g);
    }
    EXPECT_NEAR(w[0].weights[0], 1.5, 1e-3);
}

TEST(Json, RoundTripIsBitExact) {
    Rng rng(3);
    Mlp net({4, 6, 2}, rng);
    for (auto& b : net.mutable_parameters()[0].biases) b = std::uniform_real_distribution<double>(-1, 1)(rng);
    auto back = mlp_from_json(nlohmann::json::parse(to_json(net).dump()));
    EXPECT_EQ(back.parameters(), net.parameters());
    EXPECT_EQ(back.layer_sizes(), net.layer_sizes());
    const std::vector<double> x{0.1, -0.2, 0.3, 0.4};
    EXPECT_EQ(back.predict(x), net.predict(x));
}

TEST(Json, RejectsBadDocuments) {
    auto j = to_json(hand_net());
    auto wrong_version = j;
    wrong_version["format_version"] = 2;
    EXPECT_THROW(mlp_from_json(wrong_version), DataError);
    auto wrong_shape = j;
    wrong_shape["layer_sizes"] = {2, 3, 1};
    EXPECT_THROW(mlp_from_json(wrong_shape), DataError);
    auto bad_act = j;
    bad_act["activation"] = "relu";
    EXPECT_THROW(mlp_from_json(bad_act), DataError);
}
