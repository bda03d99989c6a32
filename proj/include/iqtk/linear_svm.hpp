#pragma once

// Linear max-margin baseline for the classical-feature experiments. Trained
// by deterministic full-batch subgradient descent on the L2-regularized
// hinge loss over standardized inputs; predicts hard labels only.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "iqtk/error.hpp"

namespace iqtk::svm {

using json = nlohmann::json;

struct SvmConfig {
    double lambda = 0.01;  // L2 strength
    int steps = 800;
};

struct LinearModel {
    Eigen::VectorXd mean, scale;  // input standardization
    Eigen::VectorXd w;
    double b = 0.0;

    double margin(const Eigen::VectorXd& x) const {
        if (x.size() != w.size()) {
            throw DimensionError("svm predict: feature dim " + std::to_string(x.size()) +
                                 " != model dim " + std::to_string(w.size()));
        }
        const Eigen::VectorXd z = (x - mean).cwiseQuotient(scale);
        return w.dot(z) + b;
    }

    bool predict(const Eigen::VectorXd& x) const { return margin(x) >= 0.0; }

    bool predict(const std::vector<double>& x) const {
        return predict(Eigen::Map<const Eigen::VectorXd>(x.data(),
                                                         static_cast<Eigen::Index>(x.size())));
    }
};

inline LinearModel train_linear_classifier(const std::vector<std::vector<double>>& xs,
                                           const std::vector<bool>& ys,
                                           const SvmConfig& cfg = {}) {
    if (xs.size() != ys.size()) throw DimensionError("svm train: xs/ys size mismatch");
    if (xs.empty()) throw DegenerateTrainingError("svm train: empty training set");
    bool any_pos = false, any_neg = false;
    for (bool y : ys) (y ? any_pos : any_neg) = true;
    if (!any_pos || !any_neg) {
        throw DegenerateTrainingError("svm train: training set has a single class");
    }
    const auto n = static_cast<Eigen::Index>(xs.size());
    const auto d = static_cast<Eigen::Index>(xs[0].size());
    if (d == 0) throw DimensionError("svm train: zero-dimensional features");
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(xs[static_cast<std::size_t>(i)].size()) != d) {
            throw DimensionError("svm train: ragged feature rows");
        }
        for (Eigen::Index j = 0; j < d; ++j) {
            x(i, j) = xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }

    LinearModel m;
    m.mean = x.colwise().mean();
    m.scale.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double var = (x.col(j).array() - m.mean(j)).square().mean();
        const double sd = std::sqrt(var);
        m.scale(j) = sd > 0.0 ? sd : 1.0;  // constant columns pass through
    }
    Eigen::MatrixXd z = x;
    for (Eigen::Index j = 0; j < d; ++j) {
        z.col(j) = (z.col(j).array() - m.mean(j)) / m.scale(j);
    }
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = ys[static_cast<std::size_t>(i)] ? 1.0 : -1.0;

    m.w = Eigen::VectorXd::Zero(d);
    m.b = 0.0;
    for (int t = 1; t <= cfg.steps; ++t) {
        const double eta = 1.0 / (cfg.lambda * static_cast<double>(t));
        Eigen::VectorXd gw = cfg.lambda * m.w;
        double gb = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double margin = y(i) * (m.w.dot(z.row(i)) + m.b);
            if (margin < 1.0) {
                gw -= (y(i) / static_cast<double>(n)) * z.row(i).transpose();
                gb -= y(i) / static_cast<double>(n);
            }
        }
        m.w -= eta * gw;
        m.b -= eta * gb;
    }
    return m;
}

inline json svm_to_json(const LinearModel& m) {
    json j;
    j["kind"] = "linear_svm";
    j["mean"] = std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size());
    j["scale"] = std::vector<double>(m.scale.data(), m.scale.data() + m.scale.size());
    j["w"] = std::vector<double>(m.w.data(), m.w.data() + m.w.size());
    j["b"] = m.b;
    return j;
}

inline LinearModel svm_from_json(const json& j) {
    if (j.value("kind", "") != std::string("linear_svm")) {
        throw SchemaError("svm checkpoint: wrong kind");
    }
    LinearModel m;
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto scale = j.at("scale").get<std::vector<double>>();
    const auto w = j.at("w").get<std::vector<double>>();
    if (mean.size() != scale.size() || mean.size() != w.size()) {
        throw SchemaError("svm checkpoint: inconsistent vector lengths");
    }
    const auto d = static_cast<Eigen::Index>(w.size());
    m.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
    m.scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), d);
    m.w = Eigen::Map<const Eigen::VectorXd>(w.data(), d);
    m.b = j.at("b").get<double>();
    return m;
}

}  // namespace iqtk::svm
