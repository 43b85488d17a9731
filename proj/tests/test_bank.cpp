#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "clare/adam.hpp"
#include "clare/bank.hpp"

using namespace clare;

namespace {

// Discriminator that reconstructs k*x for unit vectors along `dir`; its
// error on such x is |1-k| * ||x||.
Discriminator scaled_disc(int dim, const std::vector<double>& dir, double k, int stage) {
    Discriminator d;
    d.layer = 0;
    d.stage = stage;
    d.W_enc = tensor({1, dim}, dir);
    std::vector<double> dec(dim);
    for (int i = 0; i < dim; ++i) dec[i] = k * dir[i];
    d.W_dec = tensor({dim, 1}, dec);
    d.mu = 0.0;
    d.sigma = 1.0;
    d.finalized = true;
    return d;
}

FeatureMatrix cluster(Rng& rng, const std::vector<double>& center, double std_dev, int count) {
    FeatureMatrix f;
    f.dim = static_cast<int>(center.size());
    for (int i = 0; i < count; ++i) {
        std::vector<double> x(center);
        for (auto& v : x) v += std_dev * rng.gaussian();
        f.append(x.data());
    }
    return f;
}

void train_disc(Discriminator& d, const FeatureMatrix& feats, int steps, std::uint64_t seed) {
    std::vector<Tensor> params = {d.W_enc, d.W_dec};
    for (auto& p : params) p->requires_grad = true;
    Adam adam(params, {1e-2});
    Rng rng(seed);
    Tape tape;
    const int batch = 16;
    for (int s = 0; s < steps; ++s) {
        tape.reset();
        Tensor x = tensor({batch, feats.dim});
        for (int i = 0; i < batch; ++i) {
            const int r = static_cast<int>(rng.below(feats.count));
            std::copy(feats.row(r), feats.row(r) + feats.dim,
                      x->value.begin() + static_cast<std::size_t>(i) * feats.dim);
        }
        Tensor loss = mean_all(tape, recon_error_rows(tape, d, x));
        adam.zero_grad();
        tape.backward(loss);
        adam.step();
    }
    for (const auto& p : params) p->requires_grad = false;
}

}  // namespace

TEST_CASE("adapter: zero-initialized adapter is a no-op") {
    Rng rng(1);
    Adapter a = make_adapter(0, 0, 1, 6, 3, 0.02, rng);
    const std::vector<double> x = {1.0, -2.0, 0.5, 3.0, -0.1, 0.7};
    const auto y = adapter_forward(a, x.data(), 6);
    for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("adapter: relu kills an all-negative input under identity weights") {
    Rng rng(1);
    Adapter a = make_adapter(0, 0, 1, 4, 2, 0.0, rng);
    // truncated identities
    a.W_down->value = {1, 0, 0, 0, 0, 1, 0, 0};          // [2,4]
    a.W_up->value = {1, 0, 0, 1, 0, 0, 0, 0};            // [4,2]
    const std::vector<double> x = {-1.0, -2.0, -3.0, -4.0};
    const auto y = adapter_forward(a, x.data(), 4);
    for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("adapter: hand-set 3x2 case matches manual matrix arithmetic") {
    Rng rng(1);
    Adapter a = make_adapter(0, 0, 1, 3, 2, 0.0, rng);
    a.W_down->value = {1.0, 2.0, -1.0, 0.5, -0.5, 1.0};  // [2,3]
    a.W_up->value = {1.0, -1.0, 0.0, 2.0, 3.0, 1.0};     // [3,2]
    const std::vector<double> x = {1.0, 0.5, 2.0};
    // h = relu([1*1+2*0.5-1*2, 0.5*1-0.5*0.5+1*2]) = relu([0, 2.25]) = [0, 2.25]
    // y = W_up h = [-2.25, 4.5, 2.25]
    const auto y = adapter_forward(a, x.data(), 3);
    CHECK(y[0] == doctest::Approx(-2.25).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(4.5).epsilon(1e-15));
    CHECK(y[2] == doctest::Approx(2.25).epsilon(1e-15));
}

TEST_CASE("adapter: batched tape forward equals the per-row raw forward") {
    Rng rng(2);
    Adapter a = make_adapter(1, 0, 1, 8, 4, 0.3, rng);
    a.W_up = gaussian_tensor({8, 4}, rng, 0.3);
    Tensor x = gaussian_tensor({5, 8}, rng, 1.0);
    Tape tape;
    tape.recording = false;
    Tensor y = adapter_apply(tape, a, x);
    for (int i = 0; i < 5; ++i) {
        const auto row = adapter_forward(a, x->value.data() + i * 8, 8);
        for (int j = 0; j < 8; ++j) CHECK(y->value[i * 8 + j] == doctest::Approx(row[j]).epsilon(1e-14));
    }
}

TEST_CASE("recon_error: perfect reconstruction gives zero") {
    Discriminator d;
    d.W_enc = tensor({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
    d.W_dec = tensor({4, 2}, {1, 0, 0, 1, 0, 0, 0, 0});
    const std::vector<double> x = {0.7, 1.3, 0.0, 0.0};  // positive span of the bottleneck
    CHECK(recon_error(d, x.data(), 4) == 0.0);
}

TEST_CASE("recon_error: zero-weight discriminator returns the input norm") {
    Discriminator d;
    d.W_enc = tensor({2, 3}, 0.0);
    d.W_dec = tensor({3, 2}, 0.0);
    const std::vector<double> x = {3.0, 0.0, 4.0};
    CHECK(recon_error(d, x.data(), 3) == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("recon_error: hand-set 3-dim case matches manual arithmetic") {
    Discriminator d;
    d.W_enc = tensor({1, 3}, {1.0, -1.0, 0.5});
    d.W_dec = tensor({3, 1}, {0.5, 1.0, -1.0});
    const std::vector<double> x = {2.0, 1.0, 2.0};
    // h = relu(2 - 1 + 1) = 2; rec = [1, 2, -2]; diff = [1, -1, 4]
    CHECK(recon_error(d, x.data(), 3) == doctest::Approx(std::sqrt(18.0)).epsilon(1e-15));
}

TEST_CASE("route: argmin over reconstruction errors, oldest wins ties") {
    const int dim = 4;
    std::vector<double> dir = {1, 0, 0, 0};
    LayerBank bank;
    bank.layer = 0;
    Rng rng(3);
    bank.adapters.push_back(make_adapter(0, 0, 1, dim, 2, 0.02, rng));
    bank.adapters.push_back(make_adapter(0, 1, 2, dim, 2, 0.02, rng));
    bank.adapters.push_back(make_adapter(0, 2, 3, dim, 2, 0.02, rng));
    // errors on unit x along dir: |1-k|: [0.9, 0.1, 0.5]
    bank.discriminators.push_back(scaled_disc(dim, dir, 0.1, 1));
    bank.discriminators.push_back(scaled_disc(dim, dir, 0.9, 2));
    bank.discriminators.push_back(scaled_disc(dim, dir, 1.5, 3));
    bank.link = {0, 1, 2};
    const std::vector<double> x = {1.0, 0.0, 0.0, 0.0};

    const RouteResult r = route(bank, x.data(), dim);
    CHECK(r.discriminator == 1);
    CHECK(r.adapter == 1);

    SUBCASE("exact tie breaks toward the smallest index") {
        bank.discriminators[2] = scaled_disc(dim, dir, 1.1, 3);  // e = 0.1 == disc 1's
        const RouteResult t = route(bank, x.data(), dim);
        CHECK(t.discriminator == 1);
    }

    SUBCASE("selection is invariant to adding a constant to every error") {
        std::vector<double> errs;
        for (const auto& d : bank.discriminators) errs.push_back(recon_error(d, x.data(), dim));
        auto argmin = [](const std::vector<double>& v) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < v.size(); ++i)
                if (v[i] < v[best]) best = i;
            return best;
        };
        const std::size_t base = argmin(errs);
        for (double c : {0.1, 1.0, 42.0}) {
            std::vector<double> shifted = errs;
            for (auto& e : shifted) e += c;
            CHECK(argmin(shifted) == base);
        }
        CHECK(static_cast<int>(base) == route(bank, x.data(), dim).discriminator);
    }

    SUBCASE("unfinalized discriminators never route") {
        bank.discriminators[1].finalized = false;  // the previous winner
        const RouteResult t = route(bank, x.data(), dim);
        CHECK(t.discriminator == 2);
    }
}

TEST_CASE("route: empty bank and no finalized stats are errors") {
    LayerBank bank;
    const std::vector<double> x = {1.0};
    CHECK_THROWS(route(bank, x.data(), 1));
    Rng rng(4);
    bank.adapters.push_back(make_adapter(0, 0, 1, 4, 2, 0.02, rng));
    bank.discriminators.push_back(make_discriminator(0, 1, 4, 2, 0.1, rng));
    bank.link = {0};
    const std::vector<double> x4 = {1, 2, 3, 4};
    CHECK_THROWS(route(bank, x4.data(), 4));
}

TEST_CASE("token_route: single element equals route; mean aggregation matches brute force") {
    const int dim = 4;
    std::vector<double> dir = {0, 1, 0, 0};
    LayerBank bank;
    Rng rng(5);
    bank.adapters.push_back(make_adapter(0, 0, 1, dim, 2, 0.02, rng));
    bank.adapters.push_back(make_adapter(0, 1, 2, dim, 2, 0.02, rng));
    bank.discriminators.push_back(scaled_disc(dim, dir, 0.9, 1));  // e = 0.1 ||x||
    bank.discriminators.push_back(scaled_disc(dim, dir, 1.4, 2));  // e = 0.4 ||x||
    bank.link = {0, 1};

    const std::vector<double> x = {0.0, 1.0, 0.0, 0.0};
    CHECK(token_route(bank, {x.data()}, dim).discriminator == route(bank, x.data(), dim).discriminator);

    // Mixed list: brute-force mean-then-argmin oracle.
    Rng gen(6);
    std::vector<std::vector<double>> xs;
    for (int i = 0; i < 9; ++i) {
        std::vector<double> v(dim);
        for (auto& e : v) e = gen.gaussian();
        xs.push_back(v);
    }
    std::vector<const double*> ptrs;
    for (const auto& v : xs) ptrs.push_back(v.data());
    std::vector<double> means(bank.discriminators.size(), 0.0);
    for (std::size_t j = 0; j < bank.discriminators.size(); ++j) {
        for (const auto& v : xs) means[j] += recon_error(bank.discriminators[j], v.data(), dim);
        means[j] /= xs.size();
    }
    const int expect = means[0] <= means[1] ? 0 : 1;
    CHECK(token_route(bank, ptrs, dim).discriminator == expect);

    // A list where every element favors discriminator 0.
    std::vector<const double*> favor;
    std::vector<std::vector<double>> keep;
    for (int i = 0; i < 5; ++i) {
        keep.push_back({0.0, 1.0 + 0.01 * i, 0.0, 0.0});
    }
    for (const auto& v : keep) favor.push_back(v.data());
    CHECK(token_route(bank, favor, dim).discriminator == 0);
}

TEST_CASE("zscore: defining sample gives zero; mu+sigma errors give one") {
    Rng rng(7);
    Discriminator d = make_discriminator(0, 1, 6, 3, 0.2, rng);
    FeatureMatrix feats = cluster(rng, {0.5, -0.2, 0.8, 0.0, 1.0, -1.0}, 0.4, 64);
    finalize_stats(d, feats);
    CHECK(std::abs(zscore(d, feats)) < 1e-10);

    // Synthetic scaled discs give controllable errors: e(x) = |1-k| ||x||.
    Discriminator s = scaled_disc(4, {1, 0, 0, 0}, 0.0, 1);  // e = ||x||
    FeatureMatrix unit;
    unit.dim = 4;
    const std::vector<double> x1 = {1, 0, 0, 0};
    unit.append(x1.data());
    s.mu = 0.0;
    s.sigma = 1.0;
    CHECK(zscore(s, unit) == doctest::Approx(1.0).epsilon(1e-12));  // e = mu + sigma
}

TEST_CASE("zscore and finalize_stats match a scalar brute-force oracle (100 cases)") {
    for (int c = 0; c < 100; ++c) {
        Rng rng(2000 + c);
        const int dim = 5;
        Discriminator d = make_discriminator(0, 1, dim, 2, 0.3, rng);
        FeatureMatrix train = cluster(rng, {0.2, -0.1, 0.4, 0.9, -0.5}, 0.6, 24);
        finalize_stats(d, train);

        // oracle: recompute errors, mean, population std from scratch
        std::vector<double> errs;
        for (int i = 0; i < train.count; ++i) errs.push_back(recon_error(d, train.row(i), dim));
        double mu = 0;
        for (double e : errs) mu += e;
        mu /= errs.size();
        double var = 0;
        for (double e : errs) var += (e - mu) * (e - mu);
        var /= errs.size();
        const double sigma = std::max(std::sqrt(var), 1e-8);
        CHECK(std::abs(d.mu - mu) < 1e-10);
        CHECK(std::abs(d.sigma - sigma) < 1e-10);

        FeatureMatrix query = cluster(rng, {-0.3, 0.5, 0.1, -0.2, 0.7}, 0.5, 16);
        double z = 0;
        for (int i = 0; i < query.count; ++i)
            z += (recon_error(d, query.row(i), dim) - mu) / sigma;
        z /= query.count;
        CHECK(std::abs(zscore(d, query) - z) < 1e-10);
    }
}

TEST_CASE("finalize_stats: constant errors floor sigma; {0,2} errors give mu=1 sigma=1") {
    // Zero-weight discriminator: e(x) = ||x||, so the sample {x: ||x||=c} has
    // constant errors.
    Discriminator d;
    d.W_enc = tensor({2, 3}, 0.0);
    d.W_dec = tensor({3, 2}, 0.0);
    FeatureMatrix consts;
    consts.dim = 3;
    for (int i = 0; i < 10; ++i) {
        const std::vector<double> x = {2.0, 0.0, 0.0};
        consts.append(x.data());
    }
    finalize_stats(d, consts);
    CHECK(d.mu == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(d.sigma == 1e-8);

    Discriminator d2;
    d2.W_enc = tensor({1, 1}, 0.0);
    d2.W_dec = tensor({1, 1}, 0.0);
    FeatureMatrix two;
    two.dim = 1;
    const std::vector<double> a = {0.0}, b = {2.0};  // errors {0, 2}
    two.append(a.data());
    two.append(b.data());
    finalize_stats(d2, two);
    CHECK(d2.mu == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(d2.sigma == doctest::Approx(1.0).epsilon(1e-15));  // population convention

    FeatureMatrix empty;
    empty.dim = 1;
    Discriminator d3 = d2;
    CHECK_THROWS(finalize_stats(d3, empty));
}

TEST_CASE("decide_expansion: first stage always expands; all scores must clear gamma") {
    CHECK(decide_expansion({}, 0.0, 1) == ExpandDecision::Expand);
    CHECK(decide_expansion({}, 1e9, 1) == ExpandDecision::Expand);
    CHECK(decide_expansion({3.0, 2.7}, 2.5, 2) == ExpandDecision::Expand);
    CHECK(decide_expansion({3.0, 1.0}, 2.5, 2) == ExpandDecision::Link);
    CHECK(decide_expansion({2.5}, 2.5, 2) == ExpandDecision::Link);  // strict inequality
}

TEST_CASE("link_auxiliary: smallest mean error wins; single discriminator links to itself") {
    const int dim = 4;
    std::vector<double> dir = {1, 0, 0, 0};
    LayerBank bank;
    Rng rng(8);
    bank.adapters.push_back(make_adapter(0, 0, 1, dim, 2, 0.02, rng));
    bank.discriminators.push_back(scaled_disc(dim, dir, 0.6, 1));  // e = 0.4
    bank.link = {0};
    FeatureMatrix xs;
    xs.dim = dim;
    const std::vector<double> x = {1, 0, 0, 0};
    xs.append(x.data());
    CHECK(link_auxiliary(bank, xs) == 0);

    bank.adapters.push_back(make_adapter(0, 1, 2, dim, 2, 0.02, rng));
    bank.discriminators.push_back(scaled_disc(dim, dir, 0.8, 2));  // e = 0.2
    bank.link = {0, 1};
    CHECK(link_auxiliary(bank, xs) == 1);
}

TEST_CASE("separable clusters: trained discriminators route and link correctly") {
    const int dim = 8;
    Rng rng(99);
    const std::vector<double> center_a = {1.0, -0.5, 0.8, 0.0, -1.0, 0.4, 0.9, -0.3};
    const std::vector<double> center_b = {-1.0, 0.9, -0.7, 0.6, 1.0, -0.8, -0.2, 0.5};
    FeatureMatrix train_a = cluster(rng, center_a, 0.15, 200);
    FeatureMatrix train_b = cluster(rng, center_b, 0.15, 200);

    LayerBank bank;
    bank.adapters.push_back(make_adapter(0, 0, 1, dim, 4, 0.02, rng));
    bank.adapters.push_back(make_adapter(0, 1, 2, dim, 4, 0.02, rng));
    bank.discriminators.push_back(make_discriminator(0, 1, dim, 4, 0.1, rng));
    bank.discriminators.push_back(make_discriminator(0, 2, dim, 4, 0.1, rng));
    bank.link = {0, 1};
    train_disc(bank.discriminators[0], train_a, 400, 1);
    train_disc(bank.discriminators[1], train_b, 400, 2);
    finalize_stats(bank.discriminators[0], train_a);
    finalize_stats(bank.discriminators[1], train_b);

    // Held-out task-A features prefer the task-A discriminator.
    FeatureMatrix held_a = cluster(rng, center_a, 0.15, 200);
    int hits = 0;
    for (int i = 0; i < held_a.count; ++i)
        hits += route(bank, held_a.row(i), dim).discriminator == 0;
    CHECK(hits >= 190);  // >= 95%

    // Auxiliary linking of a near-A dataset picks A's adapter.
    CHECK(link_auxiliary(bank, held_a) == 0);

    // And the z-score of the A discriminator is small on held-out A data,
    // large on B data.
    const double z_self = zscore(bank.discriminators[0], held_a);
    FeatureMatrix held_b = cluster(rng, center_b, 0.15, 200);
    const double z_cross = zscore(bank.discriminators[0], held_b);
    CHECK(z_self < 3.0);
    CHECK(z_cross > 10.0);
}
