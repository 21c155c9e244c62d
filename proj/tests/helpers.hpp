#pragma once

#include <vector>

#include "nfce/rng.hpp"
#include "nfce/tensor.hpp"

namespace nfce::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

// Random values bounded away from zero, for kinked ops like relu.
inline Tensor random_tensor_away_from_zero(Rng& rng, Shape shape, double margin = 0.2) {
    Tensor t = random_tensor(rng, std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] += (t[i] >= 0.0 ? margin : -margin);
    return t;
}

inline Tensor random_positive_tensor(Rng& rng, Shape shape, double floor = 0.5) {
    Tensor t = random_tensor(rng, std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = t[i] * t[i] + floor;
    return t;
}

}  // namespace nfce::testing
