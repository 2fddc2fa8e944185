// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "hass/tensor.hpp"

#include <vector>

namespace hass {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// adam with decoupled weight decay. params without a populated grad are
// skipped for the step (frozen or off-graph this iteration).
template <typename T>
struct AdamWT {
    AdamWConfig cfg;
    std::vector<TensorT<T> *> params;

    AdamWT(std::vector<TensorT<T> *> params_, AdamWConfig cfg_);

    void step();
    void zero_grad();
    // global-norm gradient clip; no-op when max_norm <= 0
    void clip_grad_norm(double max_norm);

  private:
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

using AdamW = AdamWT<float>;

} // namespace hass
