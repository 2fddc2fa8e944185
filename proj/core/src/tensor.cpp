// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/tensor.hpp"

#include "hass/gemm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_set>

namespace hass {

std::string shape_str(const Shape & s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) {
            out += "x";
        }
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace autodiff {

bool & grad_mode() {
    thread_local bool mode = true;
    return mode;
}

} // namespace autodiff

using autodiff::Node;

// ---- tensor methods ----

template <typename T>
TensorT<T> TensorT<T>::from_values(Shape shape, std::vector<T> values, bool requires_grad) {
    const int64_t n = shape_numel(shape);
    if (n < 0 || (size_t) n != values.size()) {
        throw ShapeError(strfmt("tensor: %zu values for shape %s", values.size(), shape_str(shape).c_str()));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return TensorT(std::move(node));
}

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape shape, bool requires_grad) {
    std::vector<T> v((size_t) shape_numel(shape), T(0));
    return from_values(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape shape, T value, bool requires_grad) {
    std::vector<T> v((size_t) shape_numel(shape), value);
    return from_values(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

template <typename T>
TensorT<T> TensorT<T>::randn(Shape shape, Rng & rng, T stddev, bool requires_grad) {
    std::vector<T> v((size_t) shape_numel(shape));
    for (auto & x : v) {
        x = (T) (stddev * (T) rng.normal());
    }
    return from_values(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
int TensorT<T>::rows() const {
    const auto & s = check_()->shape;
    if (s.size() != 2) {
        throw ShapeError(strfmt("tensor: rows() on shape %s", shape_str(s).c_str()));
    }
    return s[0];
}

template <typename T>
int TensorT<T>::cols() const {
    const auto & s = check_()->shape;
    if (s.size() != 2) {
        throw ShapeError(strfmt("tensor: cols() on shape %s", shape_str(s).c_str()));
    }
    return s[1];
}

template <typename T>
T TensorT<T>::item() const {
    if (numel() != 1) {
        throw ShapeError(strfmt("tensor: item() on shape %s", shape_str(shape()).c_str()));
    }
    return check_()->values[0];
}

template <typename T>
std::span<const T> TensorT<T>::row_values(int r) const {
    const int c = cols();
    if (r < 0 || r >= rows()) {
        throw ShapeError(strfmt("tensor: row %d out of range for shape %s", r, shape_str(shape()).c_str()));
    }
    return {check_()->values.data() + (size_t) r * c, (size_t) c};
}

template <typename T>
std::span<T> TensorT<T>::values_mut() {
    auto * n = check_();
    if (n->backward_fn) {
        throw StateError("tensor: in-place mutation of a graph interior node");
    }
    return {n->values.data(), n->values.size()};
}

template <typename T>
void TensorT<T>::set_requires_grad(bool v) {
    auto * n = check_();
    if (n->backward_fn) {
        throw StateError("tensor: set_requires_grad on a graph interior node");
    }
    n->requires_grad = v;
}

template <typename T>
std::span<const T> TensorT<T>::grad() const {
    auto * n = check_();
    if (n->grad.size() != n->values.size()) {
        throw StateError("tensor: grad not populated");
    }
    return {n->grad.data(), n->grad.size()};
}

template <typename T>
std::span<T> TensorT<T>::grad_mut() {
    auto * n = check_();
    n->ensure_grad();
    return {n->grad.data(), n->grad.size()};
}

template <typename T>
TensorT<T> TensorT<T>::detach() const {
    auto * n = check_();
    return from_values(n->shape, n->values, false);
}

// ---- op helpers ----

namespace {

template <typename T>
std::shared_ptr<Node<T>> node_of(const TensorT<T> & t) {
    auto n = t.node();
    if (!n) {
        throw StateError("tensor: use of undefined tensor");
    }
    return n;
}

template <typename T>
TensorT<T> make_result(Shape shape, std::vector<T> values,
                       std::vector<std::shared_ptr<Node<T>>> parents,
                       std::function<void(Node<T> &)> fn) {
    if ((size_t) shape_numel(shape) != values.size()) {
        throw ShapeError(strfmt("internal: %zu values for result shape %s", values.size(),
                                shape_str(shape).c_str()));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    bool track = autodiff::grad_mode();
    if (track) {
        bool any = false;
        for (const auto & p : parents) {
            any = any || p->requires_grad;
        }
        track = any;
    }
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(fn);
    }
    return TensorT<T>(std::move(node));
}

template <typename T>
void check_same_shape(const char * op, const Node<T> & a, const Node<T> & b) {
    if (a.shape != b.shape) {
        throw ShapeError(strfmt("%s: shape mismatch %s vs %s", op,
                                shape_str(a.shape).c_str(), shape_str(b.shape).c_str()));
    }
}

template <typename T>
void check_2d(const char * op, const Node<T> & a) {
    if (a.shape.size() != 2) {
        throw ShapeError(strfmt("%s: expected 2-d tensor, got %s", op, shape_str(a.shape).c_str()));
    }
}

int last_dim(const Shape & s) {
    return s.empty() ? 1 : s.back();
}

} // namespace

// ---- elementwise ops ----

template <typename T>
TensorT<T> add(const TensorT<T> & a, const TensorT<T> & b) {
    auto na = node_of(a), nb = node_of(b);
    check_same_shape("add", *na, *nb);
    std::vector<T> out(na->values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = na->values[i] + nb->values[i];
    }
    return make_result<T>(na->shape, std::move(out), {na, nb}, [](Node<T> & self) {
        const auto & g = self.grad;
        for (int side = 0; side < 2; ++side) {
            auto & p = *self.parents[side];
            if (!p.requires_grad) {
                continue;
            }
            auto & pg = p.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                pg[i] += g[i];
            }
        }
    });
}

template <typename T>
TensorT<T> sub(const TensorT<T> & a, const TensorT<T> & b) {
    auto na = node_of(a), nb = node_of(b);
    check_same_shape("sub", *na, *nb);
    std::vector<T> out(na->values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = na->values[i] - nb->values[i];
    }
    return make_result<T>(na->shape, std::move(out), {na, nb}, [](Node<T> & self) {
        const auto & g = self.grad;
        if (self.parents[0]->requires_grad) {
            auto & pg = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                pg[i] += g[i];
            }
        }
        if (self.parents[1]->requires_grad) {
            auto & pg = self.parents[1]->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                pg[i] -= g[i];
            }
        }
    });
}

template <typename T>
TensorT<T> mul(const TensorT<T> & a, const TensorT<T> & b) {
    auto na = node_of(a), nb = node_of(b);
    check_same_shape("mul", *na, *nb);
    std::vector<T> out(na->values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = na->values[i] * nb->values[i];
    }
    return make_result<T>(na->shape, std::move(out), {na, nb}, [](Node<T> & self) {
        const auto & g = self.grad;
        const auto & av = self.parents[0]->values;
        const auto & bv = self.parents[1]->values;
        if (self.parents[0]->requires_grad) {
            auto & pg = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                pg[i] += g[i] * bv[i];
            }
        }
        if (self.parents[1]->requires_grad) {
            auto & pg = self.parents[1]->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                pg[i] += g[i] * av[i];
            }
        }
    });
}

template <typename T>
TensorT<T> scale(const TensorT<T> & a, std::type_identity_t<T> s) {
    auto na = node_of(a);
    std::vector<T> out(na->values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = na->values[i] * s;
    }
    return make_result<T>(na->shape, std::move(out), {na}, [s](Node<T> & self) {
        if (!self.parents[0]->requires_grad) {
            return;
        }
        auto & pg = self.parents[0]->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            pg[i] += self.grad[i] * s;
        }
    });
}

// ---- matmul ----

template <typename T>
TensorT<T> matmul(const TensorT<T> & a, const TensorT<T> & b) {
    auto na = node_of(a), nb = node_of(b);
    check_2d("matmul", *na);
    check_2d("matmul", *nb);
    const int m = na->shape[0], k = na->shape[1];
    const int k2 = nb->shape[0], n = nb->shape[1];
    if (k != k2) {
        throw ShapeError(strfmt("matmul: inner dims disagree, %s vs %s",
                                shape_str(na->shape).c_str(), shape_str(nb->shape).c_str()));
    }
    std::vector<T> out((size_t) m * n, T(0));
    detail::gemm_nn(m, k, n, na->values.data(), nb->values.data(), out.data());
    return make_result<T>({m, n}, std::move(out), {na, nb}, [m, k, n](Node<T> & self) {
        const T * g = self.grad.data();
        auto & pa = *self.parents[0];
        auto & pb = *self.parents[1];
        if (pa.requires_grad) {
            detail::gemm_nt(m, n, k, g, pb.values.data(), pa.ensure_grad().data());
        }
        if (pb.requires_grad) {
            detail::gemm_tn(m, k, n, pa.values.data(), g, pb.ensure_grad().data());
        }
    });
}

// ---- softmax ----

template <typename T>
TensorT<T> softmax(const TensorT<T> & x, std::type_identity_t<T> temperature) {
    auto nx = node_of(x);
    if (!(temperature > T(0))) {
        throw ParamError(strfmt("softmax: temperature must be positive, got %g", (double) temperature));
    }
    const int v = last_dim(nx->shape);
    const size_t n_rows = nx->values.size() / (size_t) v;
    std::vector<T> out(nx->values.size());
    for (size_t r = 0; r < n_rows; ++r) {
        const T * in = nx->values.data() + r * v;
        T * o = out.data() + r * v;
        T mx = in[0];
        for (int i = 1; i < v; ++i) {
            mx = std::max(mx, in[i]);
        }
        T sum = T(0);
        for (int i = 0; i < v; ++i) {
            o[i] = std::exp((in[i] - mx) / temperature);
            sum += o[i];
        }
        const T inv = T(1) / sum;
        for (int i = 0; i < v; ++i) {
            o[i] *= inv;
        }
    }
    const T invt = T(1) / temperature;
    return make_result<T>(nx->shape, std::move(out), {nx}, [v, invt](Node<T> & self) {
        auto & p = *self.parents[0];
        if (!p.requires_grad) {
            return;
        }
        auto & pg = p.ensure_grad();
        const size_t n_rows = self.values.size() / (size_t) v;
        for (size_t r = 0; r < n_rows; ++r) {
            const T * yv = self.values.data() + r * v;
            const T * gy = self.grad.data() + r * v;
            T dot = T(0);
            for (int i = 0; i < v; ++i) {
                dot += gy[i] * yv[i];
            }
            T * gx = pg.data() + r * v;
            for (int i = 0; i < v; ++i) {
                gx[i] += (gy[i] - dot) * yv[i] * invt;
            }
        }
    });
}

// ---- silu ----

template <typename T>
TensorT<T> silu(const TensorT<T> & x) {
    auto nx = node_of(x);
    std::vector<T> out(nx->values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const T xv = nx->values[i];
        out[i] = xv / (T(1) + std::exp(-xv));
    }
    return make_result<T>(nx->shape, std::move(out), {nx}, [](Node<T> & self) {
        auto & p = *self.parents[0];
        if (!p.requires_grad) {
            return;
        }
        auto & pg = p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const T xv = p.values[i];
            const T sig = T(1) / (T(1) + std::exp(-xv));
            pg[i] += self.grad[i] * sig * (T(1) + xv * (T(1) - sig));
        }
    });
}

// ---- rms_norm ----

template <typename T>
TensorT<T> rms_norm(const TensorT<T> & x, const TensorT<T> & weight, std::type_identity_t<T> eps) {
    auto nx = node_of(x), nw = node_of(weight);
    const int d = last_dim(nx->shape);
    if (nw->shape.size() != 1 || nw->shape[0] != d) {
        throw ShapeError(strfmt("rms_norm: weight shape %s does not match feature dim %d",
                                shape_str(nw->shape).c_str(), d));
    }
    const size_t n_rows = nx->values.size() / (size_t) d;
    std::vector<T> out(nx->values.size());
    std::vector<T> inv_rms(n_rows);
    for (size_t r = 0; r < n_rows; ++r) {
        const T * in = nx->values.data() + r * d;
        T ss = T(0);
        for (int i = 0; i < d; ++i) {
            ss += in[i] * in[i];
        }
        const T inv = T(1) / std::sqrt(ss / (T) d + eps);
        inv_rms[r] = inv;
        T * o = out.data() + r * d;
        for (int i = 0; i < d; ++i) {
            o[i] = in[i] * inv * nw->values[i];
        }
    }
    return make_result<T>(nx->shape, std::move(out), {nx, nw},
                          [d, inv_rms = std::move(inv_rms)](Node<T> & self) {
        auto & px = *self.parents[0];
        auto & pw = *self.parents[1];
        const size_t n_rows = self.values.size() / (size_t) d;
        if (pw.requires_grad) {
            auto & gw = pw.ensure_grad();
            for (size_t r = 0; r < n_rows; ++r) {
                const T * xv = px.values.data() + r * d;
                const T * gy = self.grad.data() + r * d;
                const T inv = inv_rms[r];
                for (int i = 0; i < d; ++i) {
                    gw[i] += gy[i] * xv[i] * inv;
                }
            }
        }
        if (px.requires_grad) {
            auto & gx = px.ensure_grad();
            for (size_t r = 0; r < n_rows; ++r) {
                const T * xv = px.values.data() + r * d;
                const T * gy = self.grad.data() + r * d;
                const T inv = inv_rms[r];
                T dot = T(0);
                for (int i = 0; i < d; ++i) {
                    dot += gy[i] * pw.values[i] * xv[i];
                }
                const T c = dot * inv * inv * inv / (T) d;
                T * g = gx.data() + r * d;
                for (int i = 0; i < d; ++i) {
                    g[i] += gy[i] * pw.values[i] * inv - xv[i] * c;
                }
            }
        }
    });
}

// ---- rope ----

template <typename T>
TensorT<T> rope(const TensorT<T> & x, std::span<const int> positions, int n_heads, std::type_identity_t<T> base) {
    auto nx = node_of(x);
    check_2d("rope", *nx);
    const int s = nx->shape[0], d = nx->shape[1];
    if ((int) positions.size() != s) {
        throw ShapeError(strfmt("rope: %zu positions for %d rows", positions.size(), s));
    }
    if (n_heads <= 0 || d % n_heads != 0) {
        throw ParamError(strfmt("rope: %d heads do not divide dim %d", n_heads, d));
    }
    const int hd = d / n_heads;
    if (hd % 2 != 0) {
        throw ParamError(strfmt("rope: head dim %d must be even", hd));
    }
    std::vector<int> pos(positions.begin(), positions.end());
    std::vector<T> out(nx->values.size());
    auto rotate = [&](const T * in, T * o, int row, T sign) {
        const T p = (T) pos[row];
        for (int h = 0; h < n_heads; ++h) {
            const int off = h * hd;
            for (int t = 0; t < hd / 2; ++t) {
                const T freq = std::pow(base, (T) (-2 * t) / (T) hd);
                const T a = sign * p * freq;
                const T c = std::cos(a), sn = std::sin(a);
                const T x0 = in[off + 2 * t], x1 = in[off + 2 * t + 1];
                o[off + 2 * t]     += x0 * c - x1 * sn;
                o[off + 2 * t + 1] += x0 * sn + x1 * c;
            }
        }
    };
    for (int r = 0; r < s; ++r) {
        rotate(nx->values.data() + (size_t) r * d, out.data() + (size_t) r * d, r, T(1));
    }
    return make_result<T>(nx->shape, std::move(out), {nx},
                          [pos = std::move(pos), n_heads, hd, d, base](Node<T> & self) {
        auto & p = *self.parents[0];
        if (!p.requires_grad) {
            return;
        }
        auto & pg = p.ensure_grad();
        const int s = self.shape[0];
        for (int r = 0; r < s; ++r) {
            const T * gy = self.grad.data() + (size_t) r * d;
            T * gx = pg.data() + (size_t) r * d;
            const T pp = (T) pos[r];
            for (int h = 0; h < n_heads; ++h) {
                const int off = h * hd;
                for (int t = 0; t < hd / 2; ++t) {
                    const T freq = std::pow(base, (T) (-2 * t) / (T) hd);
                    const T a = -pp * freq; // inverse rotation
                    const T c = std::cos(a), sn = std::sin(a);
                    const T g0 = gy[off + 2 * t], g1 = gy[off + 2 * t + 1];
                    gx[off + 2 * t]     += g0 * c - g1 * sn;
                    gx[off + 2 * t + 1] += g0 * sn + g1 * c;
                }
            }
        }
    });
}

// ---- embedding ----

template <typename T>
TensorT<T> embedding(const TensorT<T> & table, std::span<const int> ids) {
    auto nt = node_of(table);
    check_2d("embedding", *nt);
    const int v = nt->shape[0], d = nt->shape[1];
    std::vector<int> idx(ids.begin(), ids.end());
    for (int id : idx) {
        if (id < 0 || id >= v) {
            throw ShapeError(strfmt("embedding: id %d out of range [0,%d)", id, v));
        }
    }
    const int s = (int) idx.size();
    std::vector<T> out((size_t) s * d);
    for (int r = 0; r < s; ++r) {
        std::memcpy(out.data() + (size_t) r * d, nt->values.data() + (size_t) idx[r] * d, sizeof(T) * d);
    }
    return make_result<T>({s, d}, std::move(out), {nt}, [idx = std::move(idx), d](Node<T> & self) {
        auto & p = *self.parents[0];
        if (!p.requires_grad) {
            return;
        }
        auto & pg = p.ensure_grad();
        for (size_t r = 0; r < idx.size(); ++r) {
            const T * gy = self.grad.data() + r * d;
            T * gt = pg.data() + (size_t) idx[r] * d;
            for (int i = 0; i < d; ++i) {
                gt[i] += gy[i];
            }
        }
    });
}

// ---- masked multi-head attention ----

template <typename T>
TensorT<T> masked_attention(const TensorT<T> & q, const TensorT<T> & k, const TensorT<T> & v,
                            const Mask & mask, int n_heads) {
    auto nq = node_of(q), nk = node_of(k), nv = node_of(v);
    check_2d("masked_attention", *nq);
    check_2d("masked_attention", *nk);
    check_2d("masked_attention", *nv);
    const int sq = nq->shape[0], d = nq->shape[1];
    const int sk = nk->shape[0];
    if (nk->shape[1] != d || nv->shape[1] != d || nv->shape[0] != sk) {
        throw ShapeError(strfmt("masked_attention: q %s, k %s, v %s disagree",
                                shape_str(nq->shape).c_str(), shape_str(nk->shape).c_str(),
                                shape_str(nv->shape).c_str()));
    }
    if (mask.n_query != sq || mask.n_key != sk) {
        throw ShapeError(strfmt("masked_attention: mask %dx%d for q rows %d, k rows %d",
                                mask.n_query, mask.n_key, sq, sk));
    }
    if (n_heads <= 0 || d % n_heads != 0) {
        throw ParamError(strfmt("masked_attention: %d heads do not divide dim %d", n_heads, d));
    }
    for (int i = 0; i < sq; ++i) {
        if (!mask.row_any(i)) {
            throw ParamError(strfmt("masked_attention: query row %d permits no keys", i));
        }
    }
    const int hd = d / n_heads;
    const T att_scale = T(1) / std::sqrt((T) hd);

    auto pack = [hd, d](const std::vector<T> & src, int rows, int head, std::vector<T> & dst) {
        dst.resize((size_t) rows * hd);
        for (int r = 0; r < rows; ++r) {
            std::memcpy(dst.data() + (size_t) r * hd, src.data() + (size_t) r * d + (size_t) head * hd,
                        sizeof(T) * hd);
        }
    };

    std::vector<T> out((size_t) sq * d, T(0));
    // per-head attention weights are kept for the backward sweep
    auto probs_heads = std::make_shared<std::vector<std::vector<T>>>((size_t) n_heads);
    std::vector<T> qh, kh, vh, oh;
    for (int h = 0; h < n_heads; ++h) {
        pack(nq->values, sq, h, qh);
        pack(nk->values, sk, h, kh);
        pack(nv->values, sk, h, vh);
        auto & probs = (*probs_heads)[h];
        probs.assign((size_t) sq * sk, T(0));
        detail::gemm_nt(sq, hd, sk, qh.data(), kh.data(), probs.data());
        for (int i = 0; i < sq; ++i) {
            T * row = probs.data() + (size_t) i * sk;
            const uint8_t * mrow = mask.allow.data() + (size_t) i * sk;
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < sk; ++j) {
                if (mrow[j]) {
                    mx = std::max(mx, row[j] * att_scale);
                }
            }
            T sum = T(0);
            for (int j = 0; j < sk; ++j) {
                if (mrow[j]) {
                    row[j] = std::exp(row[j] * att_scale - mx);
                    sum += row[j];
                } else {
                    row[j] = T(0);
                }
            }
            const T inv = T(1) / sum;
            for (int j = 0; j < sk; ++j) {
                row[j] *= inv;
            }
        }
        oh.assign((size_t) sq * hd, T(0));
        detail::gemm_nn(sq, sk, hd, probs.data(), vh.data(), oh.data());
        for (int r = 0; r < sq; ++r) {
            std::memcpy(out.data() + (size_t) r * d + (size_t) h * hd, oh.data() + (size_t) r * hd,
                        sizeof(T) * hd);
        }
    }

    return make_result<T>({sq, d}, std::move(out), {nq, nk, nv},
                          [probs_heads, n_heads, hd, d, sq, sk, att_scale, pack](Node<T> & self) {
        auto & pq = *self.parents[0];
        auto & pk = *self.parents[1];
        auto & pv = *self.parents[2];
        std::vector<T> qh, kh, vh, goh, gqh, gkh, gvh, gprobs, gscores;
        auto unpack_add = [hd, d](std::vector<T> & dstgrad, int rows, int head, const std::vector<T> & src) {
            for (int r = 0; r < rows; ++r) {
                T * g = dstgrad.data() + (size_t) r * d + (size_t) head * hd;
                const T * s = src.data() + (size_t) r * hd;
                for (int i = 0; i < hd; ++i) {
                    g[i] += s[i];
                }
            }
        };
        for (int h = 0; h < n_heads; ++h) {
            const auto & probs = (*probs_heads)[h];
            pack(pq.values, sq, h, qh);
            pack(pk.values, sk, h, kh);
            pack(pv.values, sk, h, vh);
            goh.assign((size_t) sq * hd, T(0));
            for (int r = 0; r < sq; ++r) {
                std::memcpy(goh.data() + (size_t) r * hd,
                            self.grad.data() + (size_t) r * d + (size_t) h * hd, sizeof(T) * hd);
            }
            // d probs = g_out · v^T
            gprobs.assign((size_t) sq * sk, T(0));
            detail::gemm_nt(sq, hd, sk, goh.data(), vh.data(), gprobs.data());
            // softmax backward, then scale
            gscores.assign((size_t) sq * sk, T(0));
            for (int i = 0; i < sq; ++i) {
                const T * pr = probs.data() + (size_t) i * sk;
                const T * gp = gprobs.data() + (size_t) i * sk;
                T dot = T(0);
                for (int j = 0; j < sk; ++j) {
                    dot += gp[j] * pr[j];
                }
                T * gs = gscores.data() + (size_t) i * sk;
                for (int j = 0; j < sk; ++j) {
                    gs[j] = (gp[j] - dot) * pr[j] * att_scale;
                }
            }
            if (pv.requires_grad) {
                gvh.assign((size_t) sk * hd, T(0));
                detail::gemm_tn(sq, sk, hd, probs.data(), goh.data(), gvh.data());
                pv.ensure_grad();
                unpack_add(pv.grad, sk, h, gvh);
            }
            if (pq.requires_grad) {
                gqh.assign((size_t) sq * hd, T(0));
                detail::gemm_nn(sq, sk, hd, gscores.data(), kh.data(), gqh.data());
                pq.ensure_grad();
                unpack_add(pq.grad, sq, h, gqh);
            }
            if (pk.requires_grad) {
                gkh.assign((size_t) sk * hd, T(0));
                detail::gemm_tn(sq, sk, hd, gscores.data(), qh.data(), gkh.data());
                pk.ensure_grad();
                unpack_add(pk.grad, sk, h, gkh);
            }
        }
    });
}

// ---- shape ops ----

template <typename T>
TensorT<T> reshape(const TensorT<T> & x, Shape shape) {
    auto nx = node_of(x);
    if (shape_numel(shape) != (int64_t) nx->values.size()) {
        throw ShapeError(strfmt("reshape: %s has %zu elements, target %s wants %lld",
                                shape_str(nx->shape).c_str(), nx->values.size(),
                                shape_str(shape).c_str(), (long long) shape_numel(shape)));
    }
    std::vector<T> out = nx->values;
    return make_result<T>(std::move(shape), std::move(out), {nx}, [](Node<T> & self) {
        auto & g = self.parents[0]->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

template <typename T>
TensorT<T> concat_rows(const TensorT<T> & a, const TensorT<T> & b) {
    auto na = node_of(a), nb = node_of(b);
    check_2d("concat_rows", *na);
    check_2d("concat_rows", *nb);
    if (na->shape[1] != nb->shape[1]) {
        throw ShapeError(strfmt("concat_rows: col mismatch %s vs %s",
                                shape_str(na->shape).c_str(), shape_str(nb->shape).c_str()));
    }
    const int ra = na->shape[0], rb = nb->shape[0], c = na->shape[1];
    std::vector<T> out((size_t) (ra + rb) * c);
    std::memcpy(out.data(), na->values.data(), sizeof(T) * na->values.size());
    std::memcpy(out.data() + na->values.size(), nb->values.data(), sizeof(T) * nb->values.size());
    return make_result<T>({ra + rb, c}, std::move(out), {na, nb}, [](Node<T> & self) {
        auto & pa = *self.parents[0];
        auto & pb = *self.parents[1];
        if (pa.requires_grad) {
            auto & g = pa.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (pb.requires_grad) {
            auto & g = pb.ensure_grad();
            const size_t off = pa.values.size();
            for (size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[off + i];
            }
        }
    });
}

template <typename T>
TensorT<T> concat_cols(const TensorT<T> & a, const TensorT<T> & b) {
    auto na = node_of(a), nb = node_of(b);
    check_2d("concat_cols", *na);
    check_2d("concat_cols", *nb);
    if (na->shape[0] != nb->shape[0]) {
        throw ShapeError(strfmt("concat_cols: row mismatch %s vs %s",
                                shape_str(na->shape).c_str(), shape_str(nb->shape).c_str()));
    }
    const int r = na->shape[0], ca = na->shape[1], cb = nb->shape[1];
    std::vector<T> out((size_t) r * (ca + cb));
    for (int i = 0; i < r; ++i) {
        std::memcpy(out.data() + (size_t) i * (ca + cb), na->values.data() + (size_t) i * ca, sizeof(T) * ca);
        std::memcpy(out.data() + (size_t) i * (ca + cb) + ca, nb->values.data() + (size_t) i * cb, sizeof(T) * cb);
    }
    return make_result<T>({r, ca + cb}, std::move(out), {na, nb}, [r, ca, cb](Node<T> & self) {
        auto & pa = *self.parents[0];
        auto & pb = *self.parents[1];
        if (pa.requires_grad) {
            auto & g = pa.ensure_grad();
            for (int i = 0; i < r; ++i) {
                const T * gy = self.grad.data() + (size_t) i * (ca + cb);
                T * gp = g.data() + (size_t) i * ca;
                for (int j = 0; j < ca; ++j) {
                    gp[j] += gy[j];
                }
            }
        }
        if (pb.requires_grad) {
            auto & g = pb.ensure_grad();
            for (int i = 0; i < r; ++i) {
                const T * gy = self.grad.data() + (size_t) i * (ca + cb) + ca;
                T * gp = g.data() + (size_t) i * cb;
                for (int j = 0; j < cb; ++j) {
                    gp[j] += gy[j];
                }
            }
        }
    });
}

template <typename T>
TensorT<T> slice_rows(const TensorT<T> & x, int start, int len) {
    auto nx = node_of(x);
    check_2d("slice_rows", *nx);
    const int r = nx->shape[0], c = nx->shape[1];
    if (start < 0 || len < 0 || start + len > r) {
        throw ShapeError(strfmt("slice_rows: [%d,%d) out of %d rows", start, start + len, r));
    }
    std::vector<T> out((size_t) len * c);
    std::memcpy(out.data(), nx->values.data() + (size_t) start * c, sizeof(T) * out.size());
    return make_result<T>({len, c}, std::move(out), {nx}, [start, c](Node<T> & self) {
        auto & p = *self.parents[0];
        if (!p.requires_grad) {
            return;
        }
        auto & g = p.ensure_grad();
        T * gp = g.data() + (size_t) start * c;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            gp[i] += self.grad[i];
        }
    });
}

template <typename T>
TensorT<T> gather_rows(const TensorT<T> & x, std::span<const int> idx) {
    auto nx = node_of(x);
    check_2d("gather_rows", *nx);
    const int r = nx->shape[0], c = nx->shape[1];
    std::vector<int> rows(idx.begin(), idx.end());
    for (int i : rows) {
        if (i < 0 || i >= r) {
            throw ShapeError(strfmt("gather_rows: row %d out of %d", i, r));
        }
    }
    const int n_out = (int) rows.size();
    std::vector<T> out((size_t) n_out * c);
    for (int i = 0; i < n_out; ++i) {
        std::memcpy(out.data() + (size_t) i * c, nx->values.data() + (size_t) rows[i] * c, sizeof(T) * c);
    }
    return make_result<T>({n_out, c}, std::move(out), {nx},
                          [rows = std::move(rows), c](Node<T> & self) {
        auto & p = *self.parents[0];
        if (!p.requires_grad) {
            return;
        }
        auto & g = p.ensure_grad();
        for (size_t i = 0; i < rows.size(); ++i) {
            const T * gy = self.grad.data() + i * c;
            T * gp = g.data() + (size_t) rows[i] * c;
            for (int j = 0; j < c; ++j) {
                gp[j] += gy[j];
            }
        }
    });
}

// ---- reductions and losses ----

template <typename T>
TensorT<T> sum(const TensorT<T> & x) {
    auto nx = node_of(x);
    T s = T(0);
    for (T v : nx->values) {
        s += v;
    }
    return make_result<T>({1}, {s}, {nx}, [](Node<T> & self) {
        auto & p = *self.parents[0];
        if (!p.requires_grad) {
            return;
        }
        auto & g = p.ensure_grad();
        const T gy = self.grad[0];
        for (auto & gv : g) {
            gv += gy;
        }
    });
}

template <typename T>
TensorT<T> mean_select(const TensorT<T> & x, std::span<const int> idx) {
    auto nx = node_of(x);
    if (nx->shape.size() != 1) {
        throw ShapeError(strfmt("mean_select: expected 1-d tensor, got %s", shape_str(nx->shape).c_str()));
    }
    if (idx.empty()) {
        throw ParamError("mean_select: empty index set");
    }
    const int n = nx->shape[0];
    std::vector<int> sel(idx.begin(), idx.end());
    T s = T(0);
    for (int i : sel) {
        if (i < 0 || i >= n) {
            throw ShapeError(strfmt("mean_select: index %d out of %d", i, n));
        }
        s += nx->values[i];
    }
    s /= (T) sel.size();
    return make_result<T>({1}, {s}, {nx}, [sel = std::move(sel)](Node<T> & self) {
        auto & p = *self.parents[0];
        if (!p.requires_grad) {
            return;
        }
        auto & g = p.ensure_grad();
        const T gy = self.grad[0] / (T) sel.size();
        for (int i : sel) {
            g[i] += gy;
        }
    });
}

template <typename T>
TensorT<T> smooth_l1_rows(const TensorT<T> & pred, const TensorT<T> & target, std::type_identity_t<T> beta) {
    auto np = node_of(pred), nt = node_of(target);
    check_same_shape("smooth_l1_rows", *np, *nt);
    check_2d("smooth_l1_rows", *np);
    if (!(beta > T(0))) {
        throw ParamError(strfmt("smooth_l1_rows: beta must be positive, got %g", (double) beta));
    }
    const int s = np->shape[0], d = np->shape[1];
    std::vector<T> out(s, T(0));
    for (int r = 0; r < s; ++r) {
        const T * a = np->values.data() + (size_t) r * d;
        const T * b = nt->values.data() + (size_t) r * d;
        T acc = T(0);
        for (int i = 0; i < d; ++i) {
            const T u = a[i] - b[i];
            const T au = std::abs(u);
            acc += au < beta ? u * u / (T(2) * beta) : au - beta / T(2);
        }
        out[r] = acc / (T) d;
    }
    return make_result<T>({s}, std::move(out), {np, nt}, [d, beta](Node<T> & self) {
        auto & pp = *self.parents[0];
        auto & pt = *self.parents[1];
        T * gp = pp.requires_grad ? pp.ensure_grad().data() : nullptr;
        T * gt = pt.requires_grad ? pt.ensure_grad().data() : nullptr;
        const int s = self.shape[0];
        for (int r = 0; r < s; ++r) {
            const T gy = self.grad[r] / (T) d;
            const T * a = pp.values.data() + (size_t) r * d;
            const T * b = pt.values.data() + (size_t) r * d;
            for (int i = 0; i < d; ++i) {
                const T u = a[i] - b[i];
                const T du = std::abs(u) < beta ? u / beta : (u > T(0) ? T(1) : T(-1));
                if (gp) {
                    gp[(size_t) r * d + i] += gy * du;
                }
                if (gt) {
                    gt[(size_t) r * d + i] -= gy * du;
                }
            }
        }
    });
}

template <typename T>
TensorT<T> soft_ce_rows(const TensorT<T> & probs, std::span<const int> idx,
                        std::span<const std::type_identity_t<T>> w, int k, std::type_identity_t<T> floor) {
    auto np = node_of(probs);
    check_2d("soft_ce_rows", *np);
    const int s = np->shape[0], v = np->shape[1];
    if (k <= 0 || k > v) {
        throw ParamError(strfmt("soft_ce_rows: support size %d out of range for vocab %d", k, v));
    }
    if ((int) idx.size() != s * k || (int) w.size() != s * k) {
        throw ShapeError(strfmt("soft_ce_rows: got %zu indices, %zu weights, want %d", idx.size(), w.size(), (size_t) s * k));
    }
    std::vector<int> ix(idx.begin(), idx.end());
    std::vector<T> wx(w.begin(), w.end());
    std::vector<T> out(s, T(0));
    for (int r = 0; r < s; ++r) {
        T acc = T(0);
        for (int t = 0; t < k; ++t) {
            const int id = ix[(size_t) r * k + t];
            if (id < 0 || id >= v) {
                throw ShapeError(strfmt("soft_ce_rows: token id %d out of vocab %d", id, v));
            }
            const T p = std::max(np->values[(size_t) r * v + id], floor);
            acc -= wx[(size_t) r * k + t] * std::log(p);
        }
        out[r] = acc;
    }
    return make_result<T>({s}, std::move(out), {np},
                          [ix = std::move(ix), wx = std::move(wx), k, v, floor](Node<T> & self) {
        auto & p = *self.parents[0];
        if (!p.requires_grad) {
            return;
        }
        auto & g = p.ensure_grad();
        const int s = self.shape[0];
        for (int r = 0; r < s; ++r) {
            const T gy = self.grad[r];
            for (int t = 0; t < k; ++t) {
                const int id = ix[(size_t) r * k + t];
                const T pv = p.values[(size_t) r * v + id];
                if (pv > floor) {
                    g[(size_t) r * v + id] -= gy * wx[(size_t) r * k + t] / pv;
                }
            }
        }
    });
}

// ---- backward ----

template <typename T>
void backward(const TensorT<T> & loss) {
    auto root = loss.node();
    if (!root) {
        throw StateError("backward: undefined tensor");
    }
    if (root->values.size() != 1) {
        throw ShapeError(strfmt("backward: loss must be scalar, got shape %s", shape_str(root->shape).c_str()));
    }
    if (!root->requires_grad) {
        throw StateError("backward: loss is not on a live graph");
    }
    if (root->consumed) {
        throw StateError("backward: graph already consumed");
    }

    // iterative post-order topo sort over parent edges. topo holds shared
    // ownership: releasing parent links below must not free nodes still queued.
    std::vector<std::shared_ptr<Node<T>>> topo;
    std::unordered_set<Node<T> *> visited;
    std::vector<std::pair<std::shared_ptr<Node<T>>, size_t>> stack;
    stack.push_back({root, 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        auto node = stack.back().first;
        const size_t i = stack.back().second;
        if (i < node->parents.size()) {
            ++stack.back().second;
            const auto & next = node->parents[i];
            if (visited.insert(next.get()).second) {
                if (next->consumed && next->backward_fn) {
                    throw StateError("backward: graph already consumed");
                }
                stack.push_back({next, 0});
            }
        } else {
            topo.push_back(std::move(node));
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<T> & node = **it;
        if (!node.backward_fn) {
            continue;
        }
        node.ensure_grad();
        node.backward_fn(node);
        node.consumed = true;
        node.backward_fn = nullptr;
        node.parents.clear();
    }
    root->consumed = true;
}

// ---- explicit instantiations ----

template class TensorT<float>;
template class TensorT<double>;

#define HASS_INSTANTIATE_OPS(T)                                                                            \
    template TensorT<T> matmul<T>(const TensorT<T> &, const TensorT<T> &);                                 \
    template TensorT<T> add<T>(const TensorT<T> &, const TensorT<T> &);                                    \
    template TensorT<T> sub<T>(const TensorT<T> &, const TensorT<T> &);                                    \
    template TensorT<T> mul<T>(const TensorT<T> &, const TensorT<T> &);                                    \
    template TensorT<T> scale<T>(const TensorT<T> &, T);                                                   \
    template TensorT<T> softmax<T>(const TensorT<T> &, T);                                                 \
    template TensorT<T> silu<T>(const TensorT<T> &);                                                       \
    template TensorT<T> rms_norm<T>(const TensorT<T> &, const TensorT<T> &, T);                            \
    template TensorT<T> rope<T>(const TensorT<T> &, std::span<const int>, int, T);                         \
    template TensorT<T> embedding<T>(const TensorT<T> &, std::span<const int>);                            \
    template TensorT<T> masked_attention<T>(const TensorT<T> &, const TensorT<T> &, const TensorT<T> &,    \
                                            const Mask &, int);                                            \
    template TensorT<T> reshape<T>(const TensorT<T> &, Shape);                                             \
    template TensorT<T> concat_rows<T>(const TensorT<T> &, const TensorT<T> &);                            \
    template TensorT<T> concat_cols<T>(const TensorT<T> &, const TensorT<T> &);                            \
    template TensorT<T> slice_rows<T>(const TensorT<T> &, int, int);                                       \
    template TensorT<T> gather_rows<T>(const TensorT<T> &, std::span<const int>);                          \
    template TensorT<T> sum<T>(const TensorT<T> &);                                                        \
    template TensorT<T> mean_select<T>(const TensorT<T> &, std::span<const int>);                          \
    template TensorT<T> smooth_l1_rows<T>(const TensorT<T> &, const TensorT<T> &, T);                      \
    template TensorT<T> soft_ce_rows<T>(const TensorT<T> &, std::span<const int>,                        \
                                        std::span<const std::type_identity_t<T>>, int,                     \
                                        std::type_identity_t<T>);                                                                \
    template void backward<T>(const TensorT<T> &);

HASS_INSTANTIATE_OPS(float)
HASS_INSTANTIATE_OPS(double)

} // namespace hass
