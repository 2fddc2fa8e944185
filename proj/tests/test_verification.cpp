// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/verification.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

using namespace hass;

namespace {

// exact rational arithmetic for the enumeration oracle. tables below keep
// denominators tiny, so int64 with __int128 intermediates is plenty.
struct Frac {
    long long n = 0;
    long long d = 1;

    Frac() = default;
    Frac(long long num, long long den = 1) : n(num), d(den) { reduce(); }

    void reduce() {
        REQUIRE(d != 0);
        if (d < 0) {
            n = -n;
            d = -d;
        }
        const long long g = std::gcd(n < 0 ? -n : n, d);
        if (g > 1) {
            n /= g;
            d /= g;
        }
        if (n == 0) {
            d = 1;
        }
    }

    static Frac make(__int128 num, __int128 den) {
        REQUIRE(den != 0);
        if (den < 0) {
            num = -num;
            den = -den;
        }
        __int128 a = num < 0 ? -num : num;
        __int128 b = den;
        while (b) {
            const __int128 t = a % b;
            a = b;
            b = t;
        }
        if (a > 1) {
            num /= a;
            den /= a;
        }
        REQUIRE(num <= INT64_MAX);
        REQUIRE(num >= INT64_MIN);
        REQUIRE(den <= INT64_MAX);
        Frac f;
        f.n = (long long) num;
        f.d = (long long) den;
        if (f.n == 0) {
            f.d = 1;
        }
        return f;
    }

    double value() const { return (double) n / (double) d; }
};

Frac operator+(Frac a, Frac b) { return Frac::make((__int128) a.n * b.d + (__int128) b.n * a.d, (__int128) a.d * b.d); }
Frac operator-(Frac a, Frac b) { return Frac::make((__int128) a.n * b.d - (__int128) b.n * a.d, (__int128) a.d * b.d); }
Frac operator*(Frac a, Frac b) { return Frac::make((__int128) a.n * b.n, (__int128) a.d * b.d); }
Frac operator/(Frac a, Frac b) {
    REQUIRE(b.n != 0);
    return Frac::make((__int128) a.n * b.d, (__int128) a.d * b.n);
}
bool operator==(Frac a, Frac b) { return a.n == b.n && a.d == b.d; }
bool operator<(Frac a, Frac b) { return (__int128) a.n * b.d < (__int128) b.n * a.d; }

Frac frac_min1(Frac a) { return a < Frac(1) ? a : Frac(1); }

using FTable = std::vector<std::vector<Frac>>;

// enumerates every (draft sequence, accept/reject, bonus) outcome of the
// chain-verification rule and accumulates exact marginals of the emitted
// stream. mirrors the documented accept rule: draft x_i ~ p_i, accept with
// min(1, q_i(x)/p_i(x)), first rejection emits from norm(max(q_i - p_i, 0)),
// full acceptance emits the bonus from the last target row.
struct ChainEnum {
    std::vector<Frac> first;       // marginal of the first emitted token
    std::vector<Frac> second;      // joint: first draft accepted, second emitted = t
    Frac reach2;                   // probability the first draft token is accepted
    Frac accept1;                  // same thing, tallied on the accept branch
    Frac total;                    // sanity: all outcome probabilities

    ChainEnum(const FTable & p, const FTable & q) {
        const int len = (int) p.size();
        const size_t v = q[0].size();
        REQUIRE((int) q.size() == len + 1);
        first.assign(v, Frac(0));
        second.assign(v, Frac(0));
        walk(p, q, 0, Frac(1), {});
    }

    void tally(const std::vector<int> & seq, Frac pr) {
        total = total + pr;
        first[seq[0]] = first[seq[0]] + pr;
        if (seq.size() >= 2) {
            second[seq[1]] = second[seq[1]] + pr;
        }
    }

    void walk(const FTable & p, const FTable & q, int step, Frac pr, std::vector<int> seq) {
        const size_t v = q[0].size();
        if (step == (int) p.size()) {
            for (size_t t = 0; t < v; ++t) {
                if (q[step][t].n != 0) {
                    auto s = seq;
                    s.push_back((int) t);
                    tally(s, pr * q[step][t]);
                }
            }
            return;
        }
        for (size_t x = 0; x < v; ++x) {
            if (p[step][x].n == 0) {
                continue;
            }
            const Frac base = pr * p[step][x];
            const Frac a = frac_min1(q[step][x] / p[step][x]);
            if (a.n != 0) {
                auto s = seq;
                s.push_back((int) x);
                if (step == 0) {
                    accept1 = accept1 + base * a;
                }
                walk(p, q, step + 1, base * a, s);
            }
            const Frac rej = base * (Frac(1) - a);
            if (rej.n == 0) {
                continue;
            }
            // residual distribution norm(max(q - p, 0))
            std::vector<Frac> r(v);
            Frac z(0);
            for (size_t t = 0; t < v; ++t) {
                const Frac diff = q[step][t] - p[step][t];
                r[t] = Frac(0) < diff ? diff : Frac(0);
                z = z + r[t];
            }
            REQUIRE(z.n != 0);
            for (size_t t = 0; t < v; ++t) {
                if (r[t].n == 0) {
                    continue;
                }
                auto s = seq;
                s.push_back((int) t);
                tally(s, rej * (r[t] / z));
            }
        }
        if (step == 0) {
            reach2 = accept1;
        }
    }
};

SamplingParams plain_params() {
    SamplingParams sp;
    sp.temperature = 1.0;
    sp.top_p = 1.0;
    sp.top_k_filter = 0;
    return sp;
}

double tv_dist(const std::vector<double> & a, const std::vector<double> & b) {
    double tv = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        tv += std::abs(a[i] - b[i]);
    }
    return 0.5 * tv;
}

std::vector<double> counts_to_dist(const std::vector<long> & c, long n) {
    std::vector<double> d(c.size());
    for (size_t i = 0; i < c.size(); ++i) {
        d[i] = (double) c[i] / (double) n;
    }
    return d;
}

DraftTree star_tree(const std::vector<float> & root_dist, const std::vector<int> & child_tokens) {
    std::vector<DraftNode> nodes;
    nodes.push_back({0, -1, 0, 1.0f, 1.0f});
    std::vector<std::vector<float>> dists;
    dists.push_back(root_dist);
    for (int t : child_tokens) {
        DraftNode c;
        c.token = t;
        c.parent = 0;
        c.depth = 1;
        c.prob = root_dist[t];
        c.score = root_dist[t];
        nodes.push_back(c);
        dists.push_back({});
    }
    return DraftTree::from_nodes(std::move(nodes), std::move(dists));
}

} // namespace

TEST_CASE("sampling filter: pinned examples and edge cases") {
    SamplingParams sp = plain_params();

    // identity when every knob is off
    const std::vector<double> q = {0.5, 0.3, 0.2};
    auto out = apply_sampling_filter(q, sp);
    for (int i = 0; i < 3; ++i) {
        CHECK(out[i] == doctest::Approx(q[i]).epsilon(1e-12));
    }

    // nucleus: smallest prefix reaching 0.8 keeps {0.5, 0.3}
    sp.top_p = 0.8;
    out = apply_sampling_filter(q, sp);
    CHECK(out[0] == doctest::Approx(0.625).epsilon(1e-9));
    CHECK(out[1] == doctest::Approx(0.375).epsilon(1e-9));
    CHECK(out[2] == 0.0);

    // a barely-larger budget keeps the third token
    sp.top_p = 0.81;
    out = apply_sampling_filter(q, sp);
    CHECK(out[2] > 0.0);

    // top-k to a single token = point mass at the argmax
    sp = plain_params();
    sp.top_k_filter = 1;
    out = apply_sampling_filter(std::vector<double>{0.1, 0.6, 0.2, 0.1}, sp);
    CHECK(out == std::vector<double>{0.0, 1.0, 0.0, 0.0});

    // argmax ties resolve to the lower id
    out = apply_sampling_filter(std::vector<double>{0.4, 0.4, 0.2}, sp);
    CHECK(out == std::vector<double>{1.0, 0.0, 0.0});

    // top-k larger than the vocab is a no-op
    sp.top_k_filter = 10;
    out = apply_sampling_filter(q, sp);
    CHECK(out[2] == doctest::Approx(0.2).epsilon(1e-12));

    // temperature reshapes before truncation: q^(1/2) renormalized
    sp = plain_params();
    sp.temperature = 2.0;
    out = apply_sampling_filter(q, sp);
    const double z = std::sqrt(0.5) + std::sqrt(0.3) + std::sqrt(0.2);
    CHECK(out[0] == doctest::Approx(std::sqrt(0.5) / z).epsilon(1e-12));
    CHECK(out[2] == doctest::Approx(std::sqrt(0.2) / z).epsilon(1e-12));

    // sharp temperature concentrates mass; q^(1/T) with T=0.5 squares q
    sp.temperature = 0.5;
    out = apply_sampling_filter(q, sp);
    const double z2 = 0.25 + 0.09 + 0.04;
    CHECK(out[0] == doctest::Approx(0.25 / z2).epsilon(1e-12));

    // T = 0 is a point mass at the argmax, ties to the lower id
    sp = plain_params();
    sp.temperature = 0.0;
    out = apply_sampling_filter(std::vector<double>{0.4, 0.4, 0.2}, sp);
    CHECK(out == std::vector<double>{1.0, 0.0, 0.0});

    // extreme temperature underflow falls back to the T -> 0 limit
    sp.temperature = 1e-5;
    out = apply_sampling_filter(std::vector<double>{0.5, 0.5}, sp);
    CHECK(out == std::vector<double>{1.0, 0.0});

    // float instantiation agrees with double on the nucleus example
    SamplingParams spf = plain_params();
    spf.top_p = 0.8;
    const auto outf = apply_sampling_filter(std::vector<float>{0.5f, 0.3f, 0.2f}, spf);
    CHECK(outf[0] == doctest::Approx(0.625f).epsilon(1e-6));
    CHECK(outf[2] == 0.0f);

    // parameter validation
    sp = plain_params();
    sp.top_p = 0.0;
    CHECK_THROWS_AS((void) apply_sampling_filter(q, sp), ParamError);
    sp = plain_params();
    sp.temperature = -1.0;
    CHECK_THROWS_AS((void) apply_sampling_filter(q, sp), ParamError);
    sp = plain_params();
    sp.top_k_filter = -2;
    CHECK_THROWS_AS((void) apply_sampling_filter(q, sp), ParamError);
    CHECK_THROWS_AS((void) apply_sampling_filter(std::vector<double>{}, plain_params()), ShapeError);
}

TEST_CASE("chain verification is lossless: exact rational enumeration") {
    // V=2, L=1: p=[1/2,1/2], q=[4/5,1/5]
    {
        const FTable p = {{Frac(1, 2), Frac(1, 2)}};
        const FTable q = {{Frac(4, 5), Frac(1, 5)}, {Frac(1, 3), Frac(2, 3)}};
        ChainEnum e(p, q);
        CHECK(e.total == Frac(1));
        CHECK(e.accept1 == Frac(7, 10)); // 1 - TV(p, q)
        CHECK(e.first[0] == Frac(4, 5));
        CHECK(e.first[1] == Frac(1, 5));
        // conditional on acceptance the next emitted token follows the next target row
        for (int t = 0; t < 2; ++t) {
            CHECK(e.second[t] == e.reach2 * q[1][t]);
        }
    }

    // V=4, L=2 with asymmetric tables
    {
        const FTable p = {
            {Frac(1, 4), Frac(1, 4), Frac(1, 4), Frac(1, 4)},
            {Frac(1, 10), Frac(2, 5), Frac(2, 5), Frac(1, 10)},
        };
        const FTable q = {
            {Frac(1, 2), Frac(1, 10), Frac(1, 5), Frac(1, 5)},
            {Frac(1, 4), Frac(1, 4), Frac(1, 4), Frac(1, 4)},
            {Frac(1, 10), Frac(1, 10), Frac(2, 5), Frac(2, 5)},
        };
        ChainEnum e(p, q);
        CHECK(e.total == Frac(1));
        for (int t = 0; t < 4; ++t) {
            CHECK(e.first[t] == q[0][t]);
            CHECK(e.second[t] == e.reach2 * q[1][t]);
        }
    }

    // identical tables accept everything
    {
        const FTable p = {{Frac(3, 10), Frac(7, 10)}, {Frac(1, 2), Frac(1, 2)}};
        const FTable q = {p[0], p[1], {Frac(1, 5), Frac(4, 5)}};
        ChainEnum e(p, q);
        CHECK(e.accept1 == Frac(1));
        CHECK(e.first[0] == q[0][0]);
        CHECK(e.second[1] == q[1][1]);
    }

    // drafter mass entirely where the target has none: always rejected,
    // and the residual alone reproduces the target row
    {
        const FTable p = {{Frac(1, 2), Frac(1, 2), Frac(0), Frac(0)}};
        const FTable q = {{Frac(0), Frac(0), Frac(1, 2), Frac(1, 2)},
                          {Frac(1, 4), Frac(1, 4), Frac(1, 4), Frac(1, 4)}};
        ChainEnum e(p, q);
        CHECK(e.accept1 == Frac(0));
        for (int t = 0; t < 4; ++t) {
            CHECK(e.first[t] == q[0][t]);
        }
    }
}

TEST_CASE("chain verification: monte-carlo agrees with the enumeration") {
    const long trials = 200000;
    Rng rng(42);

    // pinned example: acceptance 0.7, output marginal exactly q
    {
        const std::vector<float> p = {0.5f, 0.5f};
        const std::vector<std::vector<float>> q = {{0.8f, 0.2f}, {1.0f / 3.0f, 2.0f / 3.0f}};
        std::vector<long> first(2, 0);
        long accepts = 0;
        for (long it = 0; it < trials; ++it) {
            ChainDraft d;
            d.tokens = {rng.categorical(std::span<const float>(p))};
            d.dists = {p};
            const VerifyResult r = verify_chain(d, q, plain_params(), rng);
            if (r.accepted_count == 1) {
                accepts++;
                first[r.accepted[0]]++;
            } else {
                first[r.bonus]++;
            }
        }
        CHECK(std::abs((double) accepts / trials - 0.7) < 0.01);
        CHECK(tv_dist(counts_to_dist(first, trials), {0.8, 0.2}) < 0.01);
    }

    // V=4, L=2 table from the enumeration case; checks both emitted positions
    {
        const std::vector<std::vector<float>> p = {
            {0.25f, 0.25f, 0.25f, 0.25f},
            {0.1f, 0.4f, 0.4f, 0.1f},
        };
        const std::vector<std::vector<float>> q = {
            {0.5f, 0.1f, 0.2f, 0.2f},
            {0.25f, 0.25f, 0.25f, 0.25f},
            {0.1f, 0.1f, 0.4f, 0.4f},
        };
        std::vector<long> first(4, 0), second(4, 0);
        long reach2 = 0;
        for (long it = 0; it < trials; ++it) {
            ChainDraft d;
            d.tokens = {rng.categorical(std::span<const float>(p[0])),
                        rng.categorical(std::span<const float>(p[1]))};
            d.dists = p;
            const VerifyResult r = verify_chain(d, q, plain_params(), rng);
            CHECK(r.bonus >= 0);
            CHECK(r.accepted_count == (int) r.accepted.size());
            const int first_tok = r.accepted_count >= 1 ? r.accepted[0] : r.bonus;
            first[first_tok]++;
            if (r.accepted_count >= 1) {
                reach2++;
                second[r.accepted_count >= 2 ? r.accepted[1] : r.bonus]++;
            }
        }
        CHECK(tv_dist(counts_to_dist(first, trials), {0.5, 0.1, 0.2, 0.2}) < 0.01);
        // conditional second-token marginal, ~150k effective samples
        CHECK(tv_dist(counts_to_dist(second, reach2), {0.25, 0.25, 0.25, 0.25}) < 0.015);
    }
}

TEST_CASE("a single-chain tree verifies identically to the chain, same rng stream") {
    std::vector<float> p1 = {0.30f, 0.25f, 0.15f, 0.10f, 0.10f, 0.10f};
    std::vector<float> p2 = {0.05f, 0.05f, 0.40f, 0.30f, 0.10f, 0.10f};
    std::vector<std::vector<float>> q = {
        {0.10f, 0.40f, 0.10f, 0.20f, 0.10f, 0.10f},
        {0.20f, 0.20f, 0.10f, 0.10f, 0.20f, 0.20f},
        {0.50f, 0.10f, 0.10f, 0.10f, 0.10f, 0.10f},
    };

    std::vector<SamplingParams> variants(3, plain_params());
    variants[1].top_p = 0.7;
    variants[2].temperature = 0.0;

    Rng draft_rng(9);
    for (int trial = 0; trial < 2000; ++trial) {
        const int x1 = draft_rng.categorical(std::span<const float>(p1));
        const int x2 = draft_rng.categorical(std::span<const float>(p2));

        ChainDraft chain;
        chain.tokens = {x1, x2};
        chain.dists = {p1, p2};

        std::vector<DraftNode> nodes;
        nodes.push_back({0, -1, 0, 1.0f, 1.0f});
        nodes.push_back({x1, 0, 1, p1[x1], p1[x1]});
        nodes.push_back({x2, 1, 2, p2[x2], p1[x1] * p2[x2]});
        DraftTree tree = DraftTree::from_nodes(std::move(nodes), {p1, p2, {}});

        for (const auto & sp : variants) {
            Rng ra(1000 + trial), rb(1000 + trial);
            const VerifyResult rc = verify_chain(chain, q, sp, ra);
            const VerifyResult rt = verify_tree(tree, q, sp, rb);
            REQUIRE(rc.accepted == rt.accepted);
            REQUIRE(rc.bonus == rt.bonus);
            REQUIRE(rc.accepted_count == rt.accepted_count);
            REQUIRE(rc.step_reached == rt.step_reached);
            REQUIRE(rc.step_accepted == rt.step_accepted);
            // tree results also name the accepted node ids along the chain
            REQUIRE((int) rt.accepted_nodes.size() == rt.accepted_count);
            for (int i = 0; i < rt.accepted_count; ++i) {
                REQUIRE(rt.accepted_nodes[i] == i + 1);
            }
            // identical rng consumption
            REQUIRE(ra.state == rb.state);
        }
    }
}

TEST_CASE("tree verification is lossless for i.i.d.-sampled children") {
    const long trials = 200000;

    // star tree, V=3, two i.i.d. children drawn from the draft distribution
    {
        const std::vector<float> p = {0.5f, 0.3f, 0.2f};
        const std::vector<double> target = {0.2, 0.3, 0.5};
        const std::vector<float> qf(target.begin(), target.end());
        Rng rng(7);
        std::vector<long> first(3, 0);
        for (long it = 0; it < trials; ++it) {
            const int c1 = rng.categorical(std::span<const float>(p));
            const int c2 = rng.categorical(std::span<const float>(p));
            DraftTree tree = star_tree(p, {c1, c2});
            const std::vector<std::vector<float>> q_rows = {qf, qf, qf};
            const VerifyResult r = verify_tree(tree, q_rows, plain_params(), rng);
            first[r.accepted_count >= 1 ? r.accepted[0] : r.bonus]++;
        }
        CHECK(tv_dist(counts_to_dist(first, trials), target) < 0.02);
    }

    // V=16, three children, and a nucleus filter on the target: the preserved
    // distribution is the filtered one
    {
        const int v = 16;
        std::vector<float> p(v), qraw(v);
        for (int i = 0; i < v; ++i) {
            p[i] = std::exp(-0.25f * (float) ((i * 5 + 3) % v));
            qraw[i] = std::exp(-0.20f * (float) ((i * 11 + 1) % v));
        }
        float zp = 0, zq = 0;
        for (int i = 0; i < v; ++i) {
            zp += p[i];
            zq += qraw[i];
        }
        for (int i = 0; i < v; ++i) {
            p[i] /= zp;
            qraw[i] /= zq;
        }
        SamplingParams sp = plain_params();
        sp.top_p = 0.8;
        const std::vector<float> qf = apply_sampling_filter(qraw, sp);
        std::vector<double> target(qf.begin(), qf.end());

        Rng rng(11);
        std::vector<long> first(v, 0);
        for (long it = 0; it < trials; ++it) {
            const int c1 = rng.categorical(std::span<const float>(p));
            const int c2 = rng.categorical(std::span<const float>(p));
            const int c3 = rng.categorical(std::span<const float>(p));
            DraftTree tree = star_tree(p, {c1, c2, c3});
            const std::vector<std::vector<float>> q_rows = {qraw, qraw, qraw, qraw};
            const VerifyResult r = verify_tree(tree, q_rows, sp, rng);
            first[r.accepted_count >= 1 ? r.accepted[0] : r.bonus]++;
        }
        CHECK(tv_dist(counts_to_dist(first, trials), target) < 0.02);
    }
}

TEST_CASE("greedy verification compares argmaxes and consumes no randomness") {
    SamplingParams sp = plain_params();
    sp.temperature = 0.0;

    // drafter argmax differs from the target argmax at step 1
    {
        ChainDraft d;
        d.tokens = {2};
        d.dists = {{0.1f, 0.2f, 0.7f}};
        const std::vector<std::vector<float>> q = {{0.6f, 0.3f, 0.1f}, {0.1f, 0.8f, 0.1f}};
        Rng rng(3);
        const uint64_t before = rng.state;
        const VerifyResult r = verify_chain(d, q, sp, rng);
        CHECK(r.accepted_count == 0);
        CHECK(r.bonus == 0);
        CHECK(rng.state == before);
    }

    // matching prefix: accept both, bonus = argmax of the last row
    {
        ChainDraft d;
        d.tokens = {0, 1};
        d.dists = {{0.9f, 0.05f, 0.05f}, {0.1f, 0.8f, 0.1f}};
        const std::vector<std::vector<float>> q = {
            {0.6f, 0.3f, 0.1f}, {0.2f, 0.7f, 0.1f}, {0.1f, 0.1f, 0.8f}};
        Rng rng(3);
        const VerifyResult r = verify_chain(d, q, sp, rng);
        CHECK(r.accepted == std::vector<int>{0, 1});
        CHECK(r.bonus == 2);
        CHECK(r.step_accepted == std::vector<int>{1, 1});
    }

    // tree: descends the matching child, stops when none matches
    {
        std::vector<DraftNode> nodes;
        nodes.push_back({0, -1, 0, 1.0f, 1.0f});
        nodes.push_back({1, 0, 1, 0.5f, 0.5f});  // matches argmax of root row
        nodes.push_back({2, 0, 1, 0.3f, 0.3f});
        nodes.push_back({0, 1, 2, 0.6f, 0.3f});  // does not match row 1's argmax
        DraftTree tree = DraftTree::from_nodes(std::move(nodes), {});
        const std::vector<std::vector<float>> q = {
            {0.1f, 0.8f, 0.1f},   // argmax 1 -> accept node 1
            {0.1f, 0.2f, 0.7f},   // argmax 2 -> no matching child, bonus 2
            {0.3f, 0.3f, 0.4f},
            {1.0f, 0.0f, 0.0f},
        };
        Rng rng(5);
        const uint64_t before = rng.state;
        const VerifyResult r = verify_tree(tree, q, sp, rng);
        CHECK(r.accepted == std::vector<int>{1});
        CHECK(r.accepted_nodes == std::vector<int>{1});
        CHECK(r.bonus == 2);
        CHECK(r.step_reached == std::vector<int>{1, 1});
        CHECK(r.step_accepted == std::vector<int>{1, 0});
        CHECK(rng.state == before);
    }
}

TEST_CASE("verification rng call order is replayable") {
    // all-accept chain: one uniform per draft token plus one for the bonus
    const std::vector<float> row = {0.25f, 0.25f, 0.25f, 0.25f};
    ChainDraft d;
    d.tokens = {0, 1, 2};
    d.dists = {row, row, row};
    const std::vector<std::vector<float>> q = {row, row, row, row}; // q == p accepts everything
    Rng used(17), ref(17);
    const VerifyResult r = verify_chain(d, q, plain_params(), used);
    CHECK(r.accepted_count == 3);
    for (int i = 0; i < 4; ++i) {
        (void) ref.uniform();
    }
    CHECK(used.state == ref.state);

    // first-step rejection: one uniform for the test, one for the residual draw
    ChainDraft d2;
    d2.tokens = {3};
    d2.dists = {{0.0f, 0.0f, 0.0f, 1.0f}};
    const std::vector<std::vector<float>> q2 = {{0.5f, 0.5f, 0.0f, 0.0f}, row};
    Rng used2(23), ref2(23);
    const VerifyResult r2 = verify_chain(d2, q2, plain_params(), used2);
    CHECK(r2.accepted_count == 0);
    CHECK((r2.bonus == 0 || r2.bonus == 1));
    (void) ref2.uniform();
    (void) ref2.uniform();
    CHECK(used2.state == ref2.state);
}

TEST_CASE("rejected drafts fall back to the residual; zero-probability drafts reject") {
    // every child misses the target support: bonus-only result
    {
        const std::vector<float> p = {0.2f, 0.4f, 0.4f};
        DraftTree tree = star_tree(p, {1, 2});
        const std::vector<std::vector<float>> q = {{1.0f, 0.0f, 0.0f}, p, p};
        Rng rng(29);
        const VerifyResult r = verify_tree(tree, q, plain_params(), rng);
        CHECK(r.accepted_count == 0);
        CHECK(r.accepted.empty());
        CHECK(r.bonus == 0);
        CHECK(r.step_reached == std::vector<int>{1});
        CHECK(r.step_accepted == std::vector<int>{0});
    }

    // a top-1 filter turns stochastic verification into argmax matching:
    // non-argmax drafts always reject and the bonus is the argmax itself
    {
        SamplingParams sp = plain_params();
        sp.top_k_filter = 1;
        ChainDraft d;
        d.tokens = {2};
        d.dists = {{0.1f, 0.2f, 0.7f}};
        const std::vector<std::vector<float>> q = {{0.5f, 0.3f, 0.2f}, {0.3f, 0.3f, 0.4f}};
        for (uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(seed);
            const VerifyResult r = verify_chain(d, q, sp, rng);
            CHECK(r.accepted_count == 0);
            CHECK(r.bonus == 0);
        }
        // the argmax draft is always accepted under the same filter
        ChainDraft ok;
        ok.tokens = {0};
        ok.dists = {{0.6f, 0.2f, 0.2f}};
        for (uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(seed);
            const VerifyResult r = verify_chain(ok, q, sp, rng);
            CHECK(r.accepted == std::vector<int>{0});
        }
    }
}

TEST_CASE("verification input validation") {
    const std::vector<float> row = {0.5f, 0.5f};
    ChainDraft d;
    d.tokens = {0};
    d.dists = {row};

    Rng rng(0);
    CHECK_THROWS_AS((void) verify_chain(ChainDraft{}, {row, row}, plain_params(), rng), ParamError);
    // wrong target row count
    CHECK_THROWS_AS((void) verify_chain(d, {row}, plain_params(), rng), ShapeError);
    // ragged draft dist
    ChainDraft bad = d;
    bad.dists = {{0.5f, 0.25f, 0.25f}};
    CHECK_THROWS_AS((void) verify_chain(bad, {row, row}, plain_params(), rng), ShapeError);
    // token out of range
    ChainDraft oob = d;
    oob.tokens = {5};
    CHECK_THROWS_AS((void) verify_chain(oob, {row, row}, plain_params(), rng), ParamError);
    // drafted token with zero draft probability is an internal invariant breach
    ChainDraft zerop = d;
    zerop.dists = {{0.0f, 1.0f}};
    CHECK_THROWS_AS((void) verify_chain(zerop, {row, row}, plain_params(), rng), StateError);

    // tree: one target row per node
    DraftTree tree = star_tree({0.5f, 0.5f}, {1});
    CHECK_THROWS_AS((void) verify_tree(tree, {row}, plain_params(), rng), ShapeError);
    // node with children missing its draft distribution
    DraftTree naked = DraftTree::from_nodes({{0, -1, 0, 1.0f, 1.0f}, {1, 0, 1, 0.5f, 0.5f}}, {});
    CHECK_THROWS_AS((void) verify_tree(naked, {row, row}, plain_params(), rng), ShapeError);
}
