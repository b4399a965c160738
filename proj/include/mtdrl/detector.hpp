#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtdrl/error.hpp"
#include "mtdrl/fingerprint.hpp"
#include "mtdrl/neural.hpp"
#include "mtdrl/random.hpp"

namespace mtdrl {

struct AutoencoderConfig {
    std::vector<std::size_t> hidden_layers{15, 7, 15};
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double learning_rate = 1e-4;
    double momentum = 0.9;
    double train_fraction = 0.8;
    double z_max = 3.0;
    double threshold_sigmas = 2.5;
    std::uint64_t seed = 0;
};

enum class Label { Normal, Abnormal };

inline std::string to_string(Label l) { return l == Label::Normal ? "normal" : "abnormal"; }

struct Verdict {
    double reconstruction_mse = 0.0;
    Label label = Label::Normal;
};

// +1 when the device looks normal, -1 otherwise.
inline int reward_of(const Verdict& v) { return v.label == Label::Normal ? +1 : -1; }

// mean + sigmas * sample_std over reconstruction errors.
inline double threshold_from_errors(std::span<const double> errors, double sigmas = 2.5) {
    if (errors.size() < 2) throw DataError("threshold calibration needs at least 2 held-out rows");
    const double n = static_cast<double>(errors.size());
    const double mean = std::accumulate(errors.begin(), errors.end(), 0.0) / n;
    double ss = 0.0;
    for (double e : errors) ss += (e - mean) * (e - mean);
    return mean + sigmas * std::sqrt(ss / (n - 1.0));
}

class AutoencoderModel;
inline double calibrate_threshold(AutoencoderModel& model, std::span<const Fingerprint> heldout, double sigmas = 2.5);
inline AutoencoderModel autoencoder_from_json(const nlohmann::json& j);

class AutoencoderModel {
public:
    AutoencoderModel() = default;
    AutoencoderModel(FeatureSchema schema, nn::Mlp net, NormStats stats)
        : schema_(std::move(schema)), net_(std::move(net)), stats_(std::move(stats)) {
        if (net_.input_size() != schema_.size() || net_.output_size() != schema_.size() ||
            stats_.size() != schema_.size())
            throw DataError("autoencoder dimensions disagree with the schema");
    }

    const FeatureSchema& schema() const { return schema_; }
    const nn::Mlp& net() const { return net_; }
    nn::Mlp& mutable_net() { return net_; }
    const NormStats& norm_stats() const { return stats_; }
    std::optional<double> threshold() const { return tau_; }
    bool calibrated() const { return tau_.has_value(); }

    Fingerprint normalize(const Fingerprint& raw) const { return mtdrl::normalize(raw, stats_); }

    double reconstruction_error(const Fingerprint& raw) const {
        const auto x = normalize(raw);
        return nn::mse_loss(net_.predict(x), x);
    }

    // Abnormal iff the reconstruction error strictly exceeds the threshold.
    Verdict classify(const Fingerprint& raw) const {
        if (!tau_) throw Error("classify called on an uncalibrated detector");
        const double e = reconstruction_error(raw);
        return {e, e > *tau_ ? Label::Abnormal : Label::Normal};
    }

private:
    friend double calibrate_threshold(AutoencoderModel&, std::span<const Fingerprint>, double);
    friend AutoencoderModel autoencoder_from_json(const nlohmann::json&);

    FeatureSchema schema_;
    nn::Mlp net_;
    NormStats stats_;
    std::optional<double> tau_;
};

inline double calibrate_threshold(AutoencoderModel& model, std::span<const Fingerprint> heldout, double sigmas) {
    if (heldout.size() < 2) throw DataError("threshold calibration needs at least 2 held-out rows");
    std::vector<double> errors;
    errors.reserve(heldout.size());
    for (const auto& row : heldout) errors.push_back(model.reconstruction_error(row));
    model.tau_ = threshold_from_errors(errors, sigmas);
    return *model.tau_;
}

struct AutoencoderTraining {
    AutoencoderModel model;              // uncalibrated
    std::vector<Fingerprint> heldout;    // raw rows reserved for calibration
    std::vector<double> loss_trace;      // mean training MSE per epoch
    double initial_loss = 0.0;           // training MSE before the first update
    OutlierReport outliers;              // indices into the training split
};

namespace detail {

inline double mean_reconstruction(const nn::Mlp& net, std::span<const Fingerprint> rows) {
    if (rows.empty()) return 0.0;
    nn::ForwardCache cache;
    double total = 0.0;
    for (const auto& x : rows) {
        net.forward(x, cache);
        total += nn::mse_loss(cache.output(), x);
    }
    return total / static_cast<double>(rows.size());
}

}  // namespace detail

// split -> fit statistics on the training split -> normalize -> drop outliers
// -> mini-batch SGD with momentum on reconstruction MSE.
inline AutoencoderTraining train_autoencoder(const Dataset& normal, const AutoencoderConfig& cfg = {}) {
    normal.validate();
    if (cfg.batch_size == 0) throw UsageError("batch size must be positive");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) throw UsageError("train fraction must lie in (0, 1)");
    if (normal.rows.size() < cfg.batch_size)
        throw DataError("autoencoder training needs at least " + std::to_string(cfg.batch_size) + " rows, got " +
                        std::to_string(normal.rows.size()));

    std::vector<std::size_t> order(normal.rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto split_rng = substream(cfg.seed, "ad-split");
    std::shuffle(order.begin(), order.end(), split_rng);
    const auto n_train = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(order.size())));
    if (n_train == 0 || order.size() - n_train < 2) throw DataError("too few rows for an 80/20 train/held-out split");

    std::vector<Fingerprint> train_raw;
    AutoencoderTraining out;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_train ? train_raw : out.heldout).push_back(normal.rows[order[i]]);

    auto stats = fit_norm_stats(train_raw);
    auto filtered = remove_outliers(normalize_all(train_raw, stats), cfg.z_max);
    out.outliers = std::move(filtered.report);
    const auto& train = filtered.rows;

    std::vector<std::size_t> sizes{normal.schema.size()};
    sizes.insert(sizes.end(), cfg.hidden_layers.begin(), cfg.hidden_layers.end());
    sizes.push_back(normal.schema.size());
    auto init_rng = substream(cfg.seed, "ad-init");
    nn::Mlp net(sizes, init_rng);
    nn::SgdMomentum opt(cfg.learning_rate, cfg.momentum);

    out.initial_loss = detail::mean_reconstruction(net, train);
    auto shuffle_rng = substream(cfg.seed, "ad-shuffle");
    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    nn::ForwardCache cache;
    auto grads = nn::zeros_like(net.parameters());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size, ++batch_no) {
            const auto end = std::min(idx.size(), start + cfg.batch_size);
            const double inv = 1.0 / static_cast<double>(end - start);
            for (auto& l : grads) {
                std::fill(l.weights.begin(), l.weights.end(), 0.0);
                std::fill(l.biases.begin(), l.biases.end(), 0.0);
            }
            double batch_loss = 0.0;
            for (auto b = start; b < end; ++b) {
                const auto& x = train[idx[b]];
                net.forward(x, cache);
                batch_loss += nn::mse_loss(cache.output(), x);
                auto g = nn::mse_gradient(cache.output(), x);
                for (auto& v : g) v *= inv;
                net.backward_accumulate(cache, g, grads);
            }
            if (!std::isfinite(batch_loss))
                throw DataError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch_no));
            epoch_loss += batch_loss;
            opt.step(net, grads);
        }
        out.loss_trace.push_back(epoch_loss / static_cast<double>(train.size()));
    }
    out.model = AutoencoderModel(normal.schema, std::move(net), std::move(stats));
    return out;
}

inline nlohmann::json to_json(const AutoencoderConfig& c) {
    return {
        {"hidden_layers", c.hidden_layers}, {"epochs", c.epochs},
        {"batch_size", c.batch_size},       {"learning_rate", c.learning_rate},
        {"momentum", c.momentum},           {"train_fraction", c.train_fraction},
        {"z_max", c.z_max},                 {"threshold_sigmas", c.threshold_sigmas},
    };
}

// Missing keys keep their defaults. The seed is supplied by the caller.
inline AutoencoderConfig autoencoder_config_from_json(const nlohmann::json& j, AutoencoderConfig c = {}) {
    try {
        c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.momentum = j.value("momentum", c.momentum);
        c.train_fraction = j.value("train_fraction", c.train_fraction);
        c.z_max = j.value("z_max", c.z_max);
        c.threshold_sigmas = j.value("threshold_sigmas", c.threshold_sigmas);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("detector config: ") + e.what());
    }
    if (c.hidden_layers.empty()) throw UsageError("detector needs at least one hidden layer");
    if (c.epochs == 0 || c.batch_size == 0) throw UsageError("detector epochs and batch size must be positive");
    if (!(c.threshold_sigmas >= 0.0)) throw UsageError("threshold multiplier must be non-negative");
    return c;
}

inline nlohmann::json to_json(const AutoencoderModel& m) {
    nlohmann::json j = {
        {"format_version", kFormatVersion},
        {"model", nn::to_json(m.net())},
        {"norm_stats", to_json(m.norm_stats())},
        {"schema", to_json(m.schema())},
    };
    j["tau"] = m.threshold() ? nlohmann::json(*m.threshold()) : nlohmann::json(nullptr);
    return j;
}

inline AutoencoderModel autoencoder_from_json(const nlohmann::json& j) {
    try {
        check_format_version(j, "detector");
        AutoencoderModel m(schema_from_json(j.at("schema")), nn::mlp_from_json(j.at("model")),
                           norm_stats_from_json(j.at("norm_stats")));
        if (!j.at("tau").is_null()) {
            const double tau = j.at("tau").get<double>();
            if (!(tau >= 0.0)) throw DataError("detector: threshold must be non-negative");
            m.tau_ = tau;
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("detector: ") + e.what());
    }
}

}  // namespace mtdrl
