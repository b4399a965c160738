#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtdrl/error.hpp"
#include "mtdrl/fingerprint.hpp"
#include "mtdrl/random.hpp"

namespace mtdrl::nn {

// Exact form x * Phi(x) with Phi the standard normal CDF.
inline double gelu(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

inline double gelu_derivative(double x) {
    const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

enum class Activation { Gelu, Identity };

inline double activate(Activation a, double x) { return a == Activation::Gelu ? gelu(x) : x; }
inline double activate_derivative(Activation a, double x) { return a == Activation::Gelu ? gelu_derivative(x) : 1.0; }

inline std::string to_string(Activation a) { return a == Activation::Gelu ? "gelu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
    if (s == "gelu") return Activation::Gelu;
    if (s == "identity") return Activation::Identity;
    throw DataError("unknown activation '" + s + "'");
}

// Dense layer parameters, weights row-major (out x in).
struct LayerParams {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weights;
    std::vector<double> biases;

    LayerParams() = default;
    LayerParams(std::size_t in_, std::size_t out_) : in(in_), out(out_), weights(in_ * out_, 0.0), biases(out_, 0.0) {}

    double& w(std::size_t o, std::size_t i) { return weights[o * in + i]; }
    double w(std::size_t o, std::size_t i) const { return weights[o * in + i]; }

    bool same_shape(const LayerParams& other) const { return in == other.in && out == other.out; }
    bool operator==(const LayerParams&) const = default;
};

using Parameters = std::vector<LayerParams>;

inline Parameters zeros_like(const Parameters& p) {
    Parameters z;
    z.reserve(p.size());
    for (const auto& l : p) z.emplace_back(l.in, l.out);
    return z;
}

inline void check_same_shape(const Parameters& a, const Parameters& b, const char* what) {
    bool ok = a.size() == b.size();
    for (std::size_t i = 0; ok && i < a.size(); ++i) ok = a[i].same_shape(b[i]);
    if (!ok) throw DataError(std::string(what) + ": parameter shape mismatch");
}

inline std::vector<double> flatten(const Parameters& p) {
    std::vector<double> out;
    for (const auto& l : p) {
        out.insert(out.end(), l.weights.begin(), l.weights.end());
        out.insert(out.end(), l.biases.begin(), l.biases.end());
    }
    return out;
}

// Activations recorded by a forward pass; consumed by backward.
struct ForwardCache {
    std::vector<std::vector<double>> pre;   // affine outputs per layer
    std::vector<std::vector<double>> post;  // post[0] = input, post[k+1] = activation of layer k
    std::uint64_t generation = 0;

    const std::vector<double>& output() const { return post.back(); }
};

class Mlp {
public:
    Mlp() = default;

    // Zero-initialised network.
    explicit Mlp(std::vector<std::size_t> layer_sizes, Activation hidden = Activation::Gelu,
                 Activation output = Activation::Identity)
        : sizes_(std::move(layer_sizes)), hidden_(hidden), output_(output) {
        if (sizes_.size() < 2) throw UsageError("an MLP needs at least an input and an output layer");
        for (auto s : sizes_)
            if (s == 0) throw UsageError("layer sizes must be positive");
        for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) params_.emplace_back(sizes_[k], sizes_[k + 1]);
        touch();
    }

    // Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    Mlp(std::vector<std::size_t> layer_sizes, Rng& rng, Activation hidden = Activation::Gelu,
        Activation output = Activation::Identity)
        : Mlp(std::move(layer_sizes), hidden, output) {
        for (auto& l : params_) {
            const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
            std::uniform_real_distribution<double> dist(-limit, limit);
            for (auto& w : l.weights) w = dist(rng);
        }
    }

    static Mlp from_parameters(Parameters params, Activation hidden = Activation::Gelu,
                               Activation output = Activation::Identity) {
        if (params.empty()) throw DataError("network has no layers");
        std::vector<std::size_t> sizes{params.front().in};
        for (std::size_t k = 0; k < params.size(); ++k) {
            const auto& l = params[k];
            if (l.in != sizes.back() || l.weights.size() != l.in * l.out || l.biases.size() != l.out)
                throw DataError("layer " + std::to_string(k) + " has inconsistent dimensions");
            for (double w : l.weights)
                if (!std::isfinite(w)) throw DataError("non-finite weight in layer " + std::to_string(k));
            for (double b : l.biases)
                if (!std::isfinite(b)) throw DataError("non-finite bias in layer " + std::to_string(k));
            sizes.push_back(l.out);
        }
        Mlp net(sizes, hidden, output);
        net.params_ = std::move(params);
        return net;
    }

    const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
    std::size_t input_size() const { return sizes_.front(); }
    std::size_t output_size() const { return sizes_.back(); }
    Activation hidden_activation() const { return hidden_; }
    Activation output_activation() const { return output_; }

    const Parameters& parameters() const { return params_; }
    // Any mutable access invalidates outstanding forward caches.
    Parameters& mutable_parameters() {
        touch();
        return params_;
    }
    std::uint64_t generation() const { return generation_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : params_) n += l.weights.size() + l.biases.size();
        return n;
    }

    void forward(std::span<const double> input, ForwardCache& cache) const {
        if (input.size() != input_size())
            throw DataError("network input has " + std::to_string(input.size()) + " values, expected " +
                            std::to_string(input_size()));
        const auto layers = params_.size();
        cache.pre.resize(layers);
        cache.post.resize(layers + 1);
        cache.post[0].assign(input.begin(), input.end());
        for (std::size_t k = 0; k < layers; ++k) {
            const auto& l = params_[k];
            const auto act = k + 1 == layers ? output_ : hidden_;
            auto& z = cache.pre[k];
            auto& a = cache.post[k + 1];
            const auto& x = cache.post[k];
            z.resize(l.out);
            a.resize(l.out);
            for (std::size_t o = 0; o < l.out; ++o) {
                double s = l.biases[o];
                const double* row = &l.weights[o * l.in];
                for (std::size_t i = 0; i < l.in; ++i) s += row[i] * x[i];
                z[o] = s;
                a[o] = activate(act, s);
            }
        }
        cache.generation = generation_;
    }

    std::vector<double> predict(std::span<const double> input) const {
        ForwardCache cache;
        forward(input, cache);
        return cache.post.back();
    }

    // Adds d(loss)/d(parameters) for one sample into `grads`.
    void backward_accumulate(const ForwardCache& cache, std::span<const double> loss_grad, Parameters& grads) const {
        if (cache.generation != generation_ || cache.pre.size() != params_.size())
            throw DataError("forward cache is stale or belongs to another network");
        if (loss_grad.size() != output_size()) throw DataError("loss gradient has the wrong length");
        check_same_shape(params_, grads, "backward");
        std::vector<double> delta(loss_grad.begin(), loss_grad.end());
        std::vector<double> next;
        for (std::size_t k = params_.size(); k-- > 0;) {
            const auto& l = params_[k];
            const auto act = k + 1 == params_.size() ? output_ : hidden_;
            for (std::size_t o = 0; o < l.out; ++o) delta[o] *= activate_derivative(act, cache.pre[k][o]);
            auto& g = grads[k];
            const auto& x = cache.post[k];
            for (std::size_t o = 0; o < l.out; ++o) {
                const double d = delta[o];
                g.biases[o] += d;
                if (d == 0.0) continue;
                double* grow = &g.weights[o * l.in];
                for (std::size_t i = 0; i < l.in; ++i) grow[i] += d * x[i];
            }
            if (k == 0) break;
            next.assign(l.in, 0.0);
            for (std::size_t o = 0; o < l.out; ++o) {
                const double d = delta[o];
                if (d == 0.0) continue;
                const double* row = &l.weights[o * l.in];
                for (std::size_t i = 0; i < l.in; ++i) next[i] += row[i] * d;
            }
            delta.swap(next);
        }
    }

    Parameters backward(const ForwardCache& cache, std::span<const double> loss_grad) const {
        auto grads = zeros_like(params_);
        backward_accumulate(cache, loss_grad, grads);
        return grads;
    }

private:
    void touch() {
        static std::atomic<std::uint64_t> counter{0};
        generation_ = ++counter;
    }

    std::vector<std::size_t> sizes_;
    Activation hidden_ = Activation::Gelu;
    Activation output_ = Activation::Identity;
    Parameters params_;
    std::uint64_t generation_ = 0;
};

inline double mse_loss(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size() || pred.empty()) throw DataError("mse_loss: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.size());
}

inline std::vector<double> mse_gradient(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size() || pred.empty()) throw DataError("mse_gradient: length mismatch");
    std::vector<double> g(pred.size());
    const double scale = 2.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) g[i] = scale * (pred[i] - target[i]);
    return g;
}

// v <- mu * v + g;  w <- w - lr * v
class SgdMomentum {
public:
    SgdMomentum(double learning_rate = 1e-4, double momentum = 0.9) : lr_(learning_rate), mu_(momentum) {
        if (!(lr_ > 0.0)) throw UsageError("learning rate must be positive");
        if (!(mu_ >= 0.0 && mu_ < 1.0)) throw UsageError("momentum must lie in [0, 1)");
    }

    void step(Parameters& params, const Parameters& grads) {
        check_same_shape(params, grads, "sgd_momentum_step");
        if (velocity_.empty()) velocity_ = zeros_like(params);
        check_same_shape(params, velocity_, "sgd_momentum_step");
        for (std::size_t k = 0; k < params.size(); ++k) {
            update(params[k].weights, grads[k].weights, velocity_[k].weights);
            update(params[k].biases, grads[k].biases, velocity_[k].biases);
        }
    }
    void step(Mlp& net, const Parameters& grads) { step(net.mutable_parameters(), grads); }

    double learning_rate() const { return lr_; }
    double momentum() const { return mu_; }
    const Parameters& velocity() const { return velocity_; }

private:
    void update(std::vector<double>& w, const std::vector<double>& g, std::vector<double>& v) const {
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mu_ * v[i] + g[i];
            w[i] -= lr_ * v[i];
        }
    }

    double lr_;
    double mu_;
    Parameters velocity_;
};

// Adam with bias-corrected moments.
class Adam {
public:
    struct Settings {
        double learning_rate = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
    };

    Adam() : Adam(Settings{}) {}
    explicit Adam(Settings s) : s_(s) {
        if (!(s_.learning_rate > 0.0)) throw UsageError("learning rate must be positive");
        if (!(s_.beta1 >= 0.0 && s_.beta1 < 1.0) || !(s_.beta2 >= 0.0 && s_.beta2 < 1.0))
            throw UsageError("Adam betas must lie in [0, 1)");
        if (!(s_.epsilon > 0.0)) throw UsageError("Adam epsilon must be positive");
    }

    void step(Parameters& params, const Parameters& grads) {
        check_same_shape(params, grads, "adam_step");
        if (m_.empty()) {
            m_ = zeros_like(params);
            v_ = zeros_like(params);
        }
        check_same_shape(params, m_, "adam_step");
        ++t_;
        const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            update(params[k].weights, grads[k].weights, m_[k].weights, v_[k].weights, c1, c2);
            update(params[k].biases, grads[k].biases, m_[k].biases, v_[k].biases, c1, c2);
        }
    }
    void step(Mlp& net, const Parameters& grads) { step(net.mutable_parameters(), grads); }

    const Settings& settings() const { return s_; }
    std::int64_t step_count() const { return t_; }
    const Parameters& first_moment() const { return m_; }
    const Parameters& second_moment() const { return v_; }

    void restore(std::int64_t t, Parameters m, Parameters v) {
        check_same_shape(m, v, "adam restore");
        t_ = t;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    void update(std::vector<double>& w, const std::vector<double>& g, std::vector<double>& m, std::vector<double>& v,
                double c1, double c2) const {
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = s_.beta1 * m[i] + (1.0 - s_.beta1) * g[i];
            v[i] = s_.beta2 * v[i] + (1.0 - s_.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= s_.learning_rate * mhat / (std::sqrt(vhat) + s_.epsilon);
        }
    }

    Settings s_;
    Parameters m_;
    Parameters v_;
    std::int64_t t_ = 0;
};

// JSON ------------------------------------------------------------------------

inline nlohmann::json parameters_to_json(const Parameters& params) {
    nlohmann::json weights = nlohmann::json::array();
    nlohmann::json biases = nlohmann::json::array();
    for (const auto& l : params) {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t o = 0; o < l.out; ++o)
            rows.push_back(std::vector<double>(l.weights.begin() + o * l.in, l.weights.begin() + (o + 1) * l.in));
        weights.push_back(std::move(rows));
        biases.push_back(l.biases);
    }
    return {{"weights", weights}, {"biases", biases}};
}

inline Parameters parameters_from_json(const nlohmann::json& j) {
    Parameters params;
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (weights.size() != biases.size()) throw DataError("model: weights/biases layer count mismatch");
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const auto& rows = weights[k];
        LayerParams l;
        l.out = rows.size();
        l.in = l.out ? rows[0].size() : 0;
        for (const auto& row : rows) {
            auto r = row.get<std::vector<double>>();
            if (r.size() != l.in) throw DataError("model: ragged weight matrix in layer " + std::to_string(k));
            l.weights.insert(l.weights.end(), r.begin(), r.end());
        }
        l.biases = biases[k].get<std::vector<double>>();
        params.push_back(std::move(l));
    }
    return params;
}

inline nlohmann::json to_json(const Mlp& net) {
    auto j = parameters_to_json(net.parameters());
    j["format_version"] = kFormatVersion;
    j["layer_sizes"] = net.layer_sizes();
    j["activation"] = to_string(net.hidden_activation());
    j["output_activation"] = to_string(net.output_activation());
    return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
    try {
        check_format_version(j, "model");
        const auto hidden = parse_activation(j.at("activation").get<std::string>());
        const auto output = parse_activation(j.value("output_activation", std::string("identity")));
        auto net = Mlp::from_parameters(parameters_from_json(j), hidden, output);
        if (net.layer_sizes() != j.at("layer_sizes").get<std::vector<std::size_t>>())
            throw DataError("model: layer_sizes disagree with weight shapes");
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model: ") + e.what());
    }
}

}  // namespace mtdrl::nn
