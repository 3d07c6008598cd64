#pragma once

// Central finite differences over every learned tensor of the captioner.

#include <cmath>
#include <map>
#include <string>

#include "spass/captioner/model.hpp"

namespace oracle {

struct TensorCheck {
    double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double analytic_norm = 0.0;
};

inline std::map<std::string, TensorCheck> gradient_check(std::span<const spass::captioner::TrainingSample> batch,
                                                         const spass::captioner::ModelWeights& weights,
                                                         double step = 1e-5) {
    using spass::Matrix;
    using spass::captioner::ModelWeights;
    const auto analytic = spass::captioner::loss_and_gradients(batch, weights, 0.0, 0).gradients;

    std::map<std::string, const Matrix*> analytic_by_name;
    analytic.for_each([&](const std::string& name, const Matrix& m) { analytic_by_name[name] = &m; });

    ModelWeights probe = weights;
    std::map<std::string, TensorCheck> out;
    probe.for_each([&](const std::string& name, Matrix& m) {
        const Matrix& ga = *analytic_by_name.at(name);
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t k = 0; k < m.data.size(); ++k) {
            const double orig = m.data[k];
            m.data[k] = orig + step;
            const double up = spass::captioner::loss_and_gradients(batch, probe, 0.0, 0).loss;
            m.data[k] = orig - step;
            const double down = spass::captioner::loss_and_gradients(batch, probe, 0.0, 0).loss;
            m.data[k] = orig;
            const double numeric = (up - down) / (2.0 * step);
            diff2 += (ga.data[k] - numeric) * (ga.data[k] - numeric);
            a2 += ga.data[k] * ga.data[k];
            n2 += numeric * numeric;
        }
        const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
        out[name] = {denom == 0.0 ? 0.0 : std::sqrt(diff2) / denom, std::sqrt(a2)};
    });
    return out;
}

}  // namespace oracle
