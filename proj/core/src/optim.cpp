// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/optim.hpp"
#include "hass/error.hpp"

#include <cmath>

namespace hass {

template <typename T>
AdamWT<T>::AdamWT(std::vector<TensorT<T> *> params_, AdamWConfig cfg_)
    : cfg(cfg_), params(std::move(params_)) {
    if (!(cfg.lr > 0.0)) throw ParamError("optimizer lr must be > 0");
    if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
        throw ParamError("optimizer betas must be in [0, 1)");
    if (!(cfg.eps > 0.0)) throw ParamError("optimizer eps must be > 0");
    if (cfg.weight_decay < 0.0) throw ParamError("optimizer weight_decay must be >= 0");
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); i++) {
        if (!params[i] || !params[i]->defined()) throw ParamError("optimizer got an undefined parameter");
        size_t n = params[i]->numel();
        m_[i].assign(n, 0.0);
        v_[i].assign(n, 0.0);
    }
}

template <typename T>
void AdamWT<T>::step() {
    t_++;
    const double bc1 = 1.0 - std::pow(cfg.beta1, (double) t_);
    const double bc2 = 1.0 - std::pow(cfg.beta2, (double) t_);
    for (size_t i = 0; i < params.size(); i++) {
        auto & node = *params[i]->node();
        if (node.grad.empty()) continue;
        auto & w = node.values;
        auto & g = node.grad;
        auto & m = m_[i];
        auto & v = v_[i];
        for (size_t k = 0; k < w.size(); k++) {
            double gk = (double) g[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            double mh = m[k] / bc1;
            double vh = v[k] / bc2;
            double upd = mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * (double) w[k];
            w[k] = (T) ((double) w[k] - cfg.lr * upd);
        }
    }
}

template <typename T>
void AdamWT<T>::zero_grad() {
    for (auto * p : params) p->node()->grad.clear();
}

template <typename T>
void AdamWT<T>::clip_grad_norm(double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (auto * p : params) {
        auto & g = p->node()->grad;
        for (T gv : g) sq += (double) gv * (double) gv;
    }
    double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
    if (norm <= max_norm) return;
    double scale = max_norm / norm;
    for (auto * p : params) {
        for (T & gv : p->node()->grad) gv = (T) ((double) gv * scale);
    }
}

template struct AdamWT<float>;
template struct AdamWT<double>;

} // namespace hass
