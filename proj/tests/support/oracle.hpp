#pragma once

// Test-side oracles: central finite differences and small random helpers.

#include <cmath>
#include <functional>
#include <vector>

#include "maskmotion/rng.hpp"
#include "maskmotion/tensor.hpp"

namespace oracle {

using maskmotion::Tensor;

template <class T>
Tensor<T> random_tensor(maskmotion::Shape shape, std::uint64_t seed, bool requires_grad = true, double scale = 1.0) {
    maskmotion::CounterRng rng(seed, 77);
    auto v = rng.normal<T>(maskmotion::numel(shape));
    for (auto& x : v) x = static_cast<T>(x * scale);
    return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

/// Gradcheck relative error over the sampled coordinates:
///   ||analytic - numeric||_2 / max(||analytic||_2 + ||numeric||_2, tiny)
struct GradCheck {
    std::vector<double> analytic;
    std::vector<double> numeric;

    double rel_error() const {
        double d = 0, a = 0, n = 0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            d += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            a += analytic[i] * analytic[i];
            n += numeric[i] * numeric[i];
        }
        const double denom = std::sqrt(a) + std::sqrt(n);
        return denom < 1e-30 ? 0.0 : std::sqrt(d) / denom;
    }
};

/// Central differences of `loss` (a scalar-valued closure rebuilding the
/// graph) with respect to `inputs`. `stride` > 1 samples every stride-th
/// coordinate of each input.
template <class T>
GradCheck check_gradients(const std::function<Tensor<T>()>& loss, std::vector<Tensor<T>*> inputs, double h, std::size_t stride = 1) {
    for (auto* in : inputs) in->zero_grad();
    {
        maskmotion::Tape<T> tape;
        auto l = loss();
        tape.backward(l);
    }
    GradCheck out;
    for (auto* in : inputs) {
        auto g = std::vector<T>(in->grad().begin(), in->grad().end());
        if (g.empty()) g.assign(in->size(), T(0));
        auto data = in->mutable_data();
        for (std::size_t i = 0; i < data.size(); i += stride) {
            const T orig = data[i];
            data[i] = static_cast<T>(orig + h);
            const double up = loss().item();
            data[i] = static_cast<T>(orig - h);
            const double down = loss().item();
            data[i] = orig;
            out.analytic.push_back(g[i]);
            out.numeric.push_back((up - down) / (2 * h));
        }
        in->zero_grad();
    }
    return out;
}

/// Weighted sum with fixed pseudo-random weights: a scalar probe whose
/// gradient exercises every output element differently.
template <class T>
Tensor<T> probe(const Tensor<T>& y, std::uint64_t seed = 5) {
    auto w = random_tensor<T>(y.shape(), seed, false);
    return maskmotion::sum(maskmotion::mul(y, w));
}

}  // namespace oracle
