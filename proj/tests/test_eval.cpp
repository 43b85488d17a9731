#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "clare/evalsuite.hpp"
#include "clare/stage.hpp"

using namespace clare;

namespace {

// Independent transcription of the three metric formulas, written as direct
// sums so any bookkeeping slip in the implementation shows up.
struct OracleMetrics {
    double auc, fwt, nbt;
};

OracleMetrics metrics_oracle(const SuccessMatrix& M) {
    const int N = M.n_tasks;
    double auc = 0.0;
    for (int n = 1; n <= N; ++n) {
        double inner = 0.0;
        for (int m = n; m <= N; ++m) inner += M.get(n, m);
        auc += inner / (N - n + 1);
    }
    auc /= N;
    double fwt = 0.0;
    for (int n = 1; n <= N; ++n) fwt += M.get(n, n);
    fwt /= N;
    double nbt = 0.0;
    if (N > 1) {
        for (int n = 1; n <= N - 1; ++n) {
            double inner = 0.0;
            for (int m = n + 1; m <= N; ++m) inner += M.get(n, n) - M.get(n, m);
            nbt += inner / (N - n);
        }
        nbt /= (N - 1);
    }
    return {100.0 * auc, 100.0 * fwt, 100.0 * nbt};
}

BackboneConfig tiny_config() {
    BackboneConfig c;
    c.enc_width = 16;
    c.enc_hidden = 24;
    c.enc_blocks = 2;
    c.dec_width = 16;
    c.dec_hidden = 24;
    c.dec_blocks = 1;
    c.horizon = 6;
    c.applied_actions = 3;
    c.action_dim = 2;
    c.time_embed_dim = 8;
    c.euler_steps = 4;
    c.expandable = {0, 1};
    return c;
}

}  // namespace

TEST_CASE("metrics: all-ones matrix gives AUC=100 FWT=100 NBT=0") {
    SuccessMatrix M(4);
    for (int n = 1; n <= 4; ++n)
        for (int m = n; m <= 4; ++m) M.set(n, m, 1.0, 10);
    const Metrics r = compute_metrics(M);
    CHECK(r.auc == 100.0);
    CHECK(r.fwt == 100.0);
    CHECK(r.nbt == 0.0);
}

TEST_CASE("metrics: the N=2 hand-computed case") {
    SuccessMatrix M(2);
    M.set(1, 1, 1.0, 10);
    M.set(1, 2, 0.0, 10);
    M.set(2, 2, 1.0, 10);
    const Metrics r = compute_metrics(M);
    CHECK(r.fwt == 100.0);
    CHECK(r.nbt == 100.0);
    CHECK(r.auc == 75.0);
}

TEST_CASE("metrics: perfect retention means NBT is exactly zero") {
    Rng rng(31);
    SuccessMatrix M(5);
    for (int n = 1; n <= 5; ++n) {
        const double r = rng.uniform();
        for (int m = n; m <= 5; ++m) M.set(n, m, r, 10);
    }
    CHECK(compute_metrics(M).nbt == 0.0);
}

TEST_CASE("metrics: match the brute-force oracle exactly on 100 random matrices") {
    for (int c = 0; c < 100; ++c) {
        Rng rng(5000 + c);
        const int N = 2 + static_cast<int>(rng.below(6));
        SuccessMatrix M(N);
        for (int n = 1; n <= N; ++n)
            for (int m = n; m <= N; ++m) M.set(n, m, rng.uniform(), 10);
        const Metrics r = compute_metrics(M);
        const OracleMetrics o = metrics_oracle(M);
        CHECK(r.auc == o.auc);
        CHECK(r.fwt == o.fwt);
        CHECK(r.nbt == o.nbt);
    }
}

TEST_CASE("metrics: incomplete matrices are rejected; cells outside the triangle too") {
    SuccessMatrix M(3);
    M.set(1, 1, 0.5, 10);
    CHECK_THROWS(compute_metrics(M));
    CHECK_THROWS(M.set(2, 1, 0.5, 10));
    CHECK_THROWS(M.set(0, 1, 0.5, 10));
    CHECK_THROWS(M.set(1, 4, 0.5, 10));
}

TEST_CASE("matrix csv: full-precision round trip") {
    Rng rng(41);
    SuccessMatrix M(4);
    for (int n = 1; n <= 4; ++n)
        for (int m = n; m <= 4; ++m) M.set(n, m, rng.uniform(), 10);
    const SuccessMatrix back = matrix_from_csv(matrix_to_csv(M));
    REQUIRE(back.n_tasks == 4);
    for (int n = 1; n <= 4; ++n) {
        for (int m = n; m <= 4; ++m) CHECK(back.get(n, m) == M.get(n, m));
        for (int m = 1; m < n; ++m) CHECK_FALSE(back.has(n, m));
    }
    const Metrics a = compute_metrics(M);
    const Metrics b = compute_metrics(back);
    CHECK(a.auc == b.auc);
    CHECK(a.fwt == b.fwt);
    CHECK(a.nbt == b.nbt);
}

TEST_CASE("evaluate: the scripted expert wrapped as a policy succeeds everywhere") {
    // Success of the harness itself: if the chunks come from the expert, the
    // rate must be 1.0 (oracle policy).
    const TaskSuite suite = generate_suite(7, 2, 2);
    const TaskSpec& task = suite.stream[0];
    const int episodes = 8;
    int succ = 0;
    for (int ep = 0; ep < episodes; ++ep) {
        const std::uint64_t env_seed =
            derive_seed(1234, {seed_tag("init_config"), static_cast<std::uint64_t>(ep / 2)});
        EnvState st = env_reset(task, env_seed);
        ExpertPlan plan = make_expert_plan(task, st, env_seed);
        while (!st.reached && st.step < task.horizon) {
            advance_plan(plan, st);
            env_step(task, st, expert_action(plan, st));
        }
        succ += st.reached;
    }
    CHECK(succ == episodes);
}

TEST_CASE("evaluate: a zero-action policy never reaches a distinct goal") {
    PolicyModel m = PolicyModel::init(tiny_config(), 2);
    // Zero the decoder output so every chunk is the normalizer midpoint; make
    // that midpoint exactly zero action.
    std::fill(m.net.out_W->value.begin(), m.net.out_W->value.end(), 0.0);
    std::fill(m.net.out_b->value.begin(), m.net.out_b->value.end(), 0.0);
    std::fill(m.net.dec_in_W->value.begin(), m.net.dec_in_W->value.end(), 0.0);
    std::fill(m.net.dec_in_b->value.begin(), m.net.dec_in_b->value.end(), 0.0);
    for (auto& blk : m.net.dec) {
        std::fill(blk.W1->value.begin(), blk.W1->value.end(), 0.0);
        std::fill(blk.W2->value.begin(), blk.W2->value.end(), 0.0);
    }
    m.norm.lo = {-0.1, -0.1};
    m.norm.hi = {0.1, 0.1};  // denormalize(0) == 0
    const TaskSuite suite = generate_suite(7, 2, 2);
    const double rate = evaluate(m, suite.stream[0], 4, 99);
    CHECK(rate == 0.0);
}

TEST_CASE("evaluate: deterministic given model and seed, episode count validated") {
    PolicyModel m = PolicyModel::init(tiny_config(), 4);
    const TaskSuite suite = generate_suite(7, 2, 2);
    const double a = evaluate(m, suite.stream[1], 6, 555);
    const double b = evaluate(m, suite.stream[1], 6, 555);
    CHECK(a == b);
    CHECK_THROWS(evaluate(m, suite.stream[1], 5, 555));
    CHECK_THROWS(evaluate(m, suite.stream[1], 0, 555));
}

TEST_CASE("routing audit: single-stage model agrees everywhere; histograms are point masses") {
    const TaskSuite suite = generate_suite(7, 2, 2);
    std::vector<Dataset> pre;
    for (const auto& t : suite.pretrain) pre.push_back(collect_demos(t, 4, 300 + t.id));
    PretrainOptions opt;
    opt.cfg = tiny_config();
    opt.steps = 100;
    opt.batch = 16;
    opt.lr = 1e-3;
    opt.seed = 6;
    PolicyModel m = pretrain(pre, opt);
    const Dataset d1 = collect_demos(suite.stream[0], 4, 400);
    StageConfig sc;
    sc.gamma = 2.5;
    sc.adapter_rank = 4;
    sc.disc_bottleneck = 4;
    sc.adapter_steps = 30;
    sc.disc_steps = 25;
    sc.batch = 16;
    sc.seed = 7;
    learn_stage(m, d1, sc);

    const RoutingAudit audit = routing_audit(m, 1, d1);
    CHECK(audit.mean_agreement == 1.0);  // only one adapter exists
    for (std::size_t slot = 0; slot < audit.histogram.size(); ++slot) {
        CHECK(audit.histogram[slot].size() == 1);
        CHECK(audit.histogram[slot].count(audit.expected[slot]) == 1);
    }
    CHECK_THROWS(routing_audit(m, 2, d1));  // stage out of range
}
