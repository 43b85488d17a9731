#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "clare/adam.hpp"
#include "clare/blob.hpp"
#include "clare/rng.hpp"
#include "clare/tensor.hpp"

using namespace clare;

namespace {

double rel_err(double a, double b) {
    const double denom = std::max({1e-12, std::abs(a), std::abs(b)});
    return std::abs(a - b) / denom;
}

// Central finite differences against every requires_grad entry of `params`.
// loss_fn must rebuild the graph from current parameter values.
void gradcheck(const std::function<Tensor(Tape&)>& loss_fn, const std::vector<Tensor>& params,
               double h = 1e-6, double tol = 1e-5) {
    Tape tape;
    Tensor loss = loss_fn(tape);
    tape.backward(loss);
    auto eval = [&]() {
        Tape t;
        t.recording = false;
        return loss_fn(t)->value[0];
    };
    for (const auto& p : params) {
        REQUIRE(p->grad.size() == p->value.size());
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double up = eval();
            p->value[i] = keep - h;
            const double down = eval();
            p->value[i] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double an = p->grad[i];
            if (std::abs(fd) < 1e-9 && std::abs(an) < 1e-9) continue;
            INFO("param ", p->name, " entry ", i, " fd=", fd, " autodiff=", an);
            CHECK(rel_err(fd, an) < tol);
        }
    }
}

}  // namespace

TEST_CASE("rng: identical seeds give identical streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng g1(42), g2(42);
    for (int i = 0; i < 1000; ++i) CHECK(g1.gaussian() == g2.gaussian());
}

TEST_CASE("rng: different seeds diverge immediately") {
    Rng a(1), b(2);
    int differ = 0;
    for (int i = 0; i < 10; ++i) differ += a.next_u64() != b.next_u64();
    CHECK(differ == 10);
}

TEST_CASE("rng: gaussian sample mean is near zero") {
    Rng rng(7);
    double acc = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) acc += rng.gaussian();
    CHECK(std::abs(acc / n) < 0.02);
}

TEST_CASE("rng: uniform stays in [0,1) and below() respects its bound") {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < 1000; ++i) CHECK(rng.below(17) < 17);
}

TEST_CASE("ops: relu definition") {
    Tape tape;
    Tensor x = tensor({3}, {-1.0, 0.0, 2.0});
    Tensor y = relu(tape, x);
    CHECK(y->value == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("ops: identity matmul returns its input") {
    Tape tape;
    Tensor eye = tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor x = tensor({3}, {0.5, -2.0, 3.25});
    Tensor y = matmul(tape, eye, x);
    CHECK(y->shape == Shape{3});
    CHECK(y->value == x->value);
}

TEST_CASE("ops: layer norm of a constant vector is zero before affine") {
    Tape tape;
    Tensor x = tensor({4}, {3.0, 3.0, 3.0, 3.0});
    Tensor g = tensor({4}, 1.0);
    Tensor b = tensor({4}, 0.0);
    Tensor y = layer_norm(tape, x, g, b);
    for (double v : y->value) CHECK(v == 0.0);
}

TEST_CASE("ops: shape mismatches raise structured errors") {
    Tape tape;
    Tensor a = tensor({2, 3});
    Tensor b = tensor({2, 3});
    CHECK_THROWS_AS(matmul(tape, a, b), ShapeError);
    CHECK_THROWS_WITH_AS(add(tape, a, tensor({3, 2})), doctest::Contains("add"), ShapeError);
}

TEST_CASE("ops: forward passes are pure") {
    Rng rng(11);
    Tensor a = gaussian_tensor({4, 6}, rng, 1.0);
    Tensor b = gaussian_tensor({6, 3}, rng, 1.0);
    Tape tape;
    Tensor y1 = matmul(tape, a, b);
    Tensor y2 = matmul(tape, a, b);
    CHECK(y1->value == y2->value);
}

TEST_CASE("backward: sum gives all-ones gradient") {
    Tape tape;
    Tensor x = tensor({2, 3}, 1.5, true);
    Tensor loss = sum_all(tape, x);
    tape.backward(loss);
    for (double g : x->grad) CHECK(g == 1.0);
}

TEST_CASE("backward: grad of squared norm of Wx is 2(Wx)x^T") {
    Rng rng(5);
    Tensor W = gaussian_tensor({3, 4}, rng, 1.0, true, "W");
    Tensor x = gaussian_tensor({4}, rng, 1.0);
    Tape tape;
    Tensor y = matmul(tape, W, x);
    Tensor loss = sum_all(tape, mul(tape, y, y));
    tape.backward(loss);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
            const double expected = 2.0 * y->value[i] * x->value[j];
            CHECK(rel_err(W->grad[i * 4 + j], expected) < 1e-12);
        }
}

TEST_CASE("backward: tape is consumed exactly once") {
    Tape tape;
    Tensor x = tensor({2}, {1.0, 2.0}, true);
    Tensor y = scale(tape, x, 2.0);
    Tensor z = add(tape, y, y);  // two uses of y: gradients must add once each
    Tensor loss = sum_all(tape, z);
    const std::size_t records = tape.size();
    CHECK(records == 3);
    tape.backward(loss);
    CHECK(tape.consumed());
    CHECK(tape.size() == 0);
    // d/dx sum(2x + 2x) = 4; a double replay would give 8
    CHECK(x->grad[0] == 4.0);
    CHECK(x->grad[1] == 4.0);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("backward: rejects non-scalar loss and empty tape") {
    Tape tape;
    Tensor x = tensor({2}, {1.0, 2.0}, true);
    Tensor y = scale(tape, x, 1.0);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
    Tape empty;
    Tensor s = tensor({1}, 0.0, true);
    CHECK_THROWS_AS(empty.backward(s), std::logic_error);
}

TEST_CASE("backward: two-layer MLP matches central finite differences") {
    Rng rng(17);
    Tensor W1 = gaussian_tensor({8, 5}, rng, 0.6, true, "W1");
    Tensor b1 = gaussian_tensor({8}, rng, 0.1, true, "b1");
    Tensor W2 = gaussian_tensor({3, 8}, rng, 0.6, true, "W2");
    Tensor b2 = gaussian_tensor({3}, rng, 0.1, true, "b2");
    Tensor x = gaussian_tensor({4, 5}, rng, 1.0);
    auto loss_fn = [&](Tape& t) {
        Tensor h = relu(t, linear(t, x, W1, b1));
        Tensor y = linear(t, h, W2, b2);
        return mean_all(t, mul(t, y, y));
    };
    gradcheck(loss_fn, {W1, b1, W2, b2}, 1e-6, 1e-5);
}

TEST_CASE("backward: every composite op matches finite differences (100 random cases)") {
    // Cycles through all op kinds; each case is a fresh random graph.
    for (int c = 0; c < 100; ++c) {
        Rng rng(1000 + c);
        const int kind = c % 7;
        switch (kind) {
            case 0: {  // matmul + mean
                Tensor A = gaussian_tensor({3, 4}, rng, 0.8, true);
                Tensor B = gaussian_tensor({4, 2}, rng, 0.8, true);
                gradcheck([&](Tape& t) { return mean_all(t, matmul(t, A, B)); }, {A, B});
                break;
            }
            case 1: {  // linear + relu
                Tensor W = gaussian_tensor({5, 3}, rng, 0.8, true);
                Tensor b = gaussian_tensor({5}, rng, 0.3, true);
                Tensor x = gaussian_tensor({2, 3}, rng, 1.0, true);
                gradcheck([&](Tape& t) { return sum_all(t, relu(t, linear(t, x, W, b))); },
                          {W, b, x});
                break;
            }
            case 2: {  // add/sub/mul/scale chain
                Tensor a = gaussian_tensor({6}, rng, 1.0, true);
                Tensor b = gaussian_tensor({6}, rng, 1.0, true);
                gradcheck(
                    [&](Tape& t) {
                        return mean_all(t, mul(t, sub(t, scale(t, a, 1.7), b), add(t, a, b)));
                    },
                    {a, b});
                break;
            }
            case 3: {  // layer_norm
                Tensor x = gaussian_tensor({3, 5}, rng, 1.2, true);
                Tensor g = gaussian_tensor({5}, rng, 0.5, true);
                Tensor bb = gaussian_tensor({5}, rng, 0.5, true);
                gradcheck([&](Tape& t) {
                    Tensor y = layer_norm(t, x, g, bb);
                    return mean_all(t, mul(t, y, y));
                }, {x, g, bb}, 1e-6, 2e-5);
                break;
            }
            case 4: {  // concat
                Tensor a = gaussian_tensor({2, 3}, rng, 1.0, true);
                Tensor b = gaussian_tensor({2, 2}, rng, 1.0, true);
                gradcheck(
                    [&](Tape& t) {
                        Tensor y = concat(t, {a, b});
                        return mean_all(t, mul(t, y, y));
                    },
                    {a, b});
                break;
            }
            case 5: {  // l2_norm (inputs away from the origin)
                Tensor x = gaussian_tensor({7}, rng, 1.0, true);
                for (auto& v : x->value) v += (v >= 0 ? 0.5 : -0.5);
                gradcheck([&](Tape& t) { return l2_norm(t, x); }, {x});
                break;
            }
            case 6: {  // rows_l2_norm + mean
                Tensor x = gaussian_tensor({3, 4}, rng, 1.0, true);
                for (auto& v : x->value) v += (v >= 0 ? 0.5 : -0.5);
                gradcheck([&](Tape& t) { return mean_all(t, rows_l2_norm(t, x)); }, {x});
                break;
            }
        }
    }
}

TEST_CASE("adam: zero gradient leaves parameters exactly unchanged") {
    Tensor p = tensor({4}, {1.0, -2.0, 3.0, 0.5}, true);
    p->ensure_grad();
    const auto before = p->value;
    Adam adam({p}, {1e-2});
    adam.step();
    CHECK(p->value == before);
}

TEST_CASE("adam: first step moves by about lr against the gradient sign") {
    Tensor p = tensor({2}, {1.0, -1.0}, true);
    p->ensure_grad();
    p->grad = {0.5, -0.25};
    const double lr = 1e-3;
    Adam adam({p}, {lr});
    adam.step();
    // step-1 update is lr * g / (|g| + eps)
    CHECK(rel_err(1.0 - p->value[0], lr) < 1e-6);
    CHECK(rel_err(p->value[1] - (-1.0), lr) < 1e-6);
}

TEST_CASE("adam: missing gradient is an error") {
    Tensor p = tensor({2}, {1.0, 2.0}, true);
    Adam adam({p}, {1e-3});
    CHECK_THROWS_AS(adam.step(), NumericsError);
}

TEST_CASE("adam: 100 steps on a quadratic matches a scalar oracle and converges") {
    const std::vector<double> c = {0.3, -0.7, 0.9};
    Tensor x = tensor({3}, {0.0, 0.0, 0.0}, true);
    Adam adam({x}, {1e-2});

    // Independent scalar implementation of the same update rule.
    std::vector<double> ox(3, 0.0), om(3, 0.0), ov(3, 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 1e-2;

    Tape tape;
    for (int step = 1; step <= 100; ++step) {
        tape.reset();
        Tensor cc = tensor({3}, c);
        Tensor diff = sub(tape, x, cc);
        Tensor loss = sum_all(tape, mul(tape, diff, diff));
        adam.zero_grad();
        tape.backward(loss);
        adam.step();

        for (int i = 0; i < 3; ++i) {
            const double g = 2.0 * (ox[i] - c[i]);
            om[i] = b1 * om[i] + (1 - b1) * g;
            ov[i] = b2 * ov[i] + (1 - b2) * g * g;
            const double mhat = om[i] / (1 - std::pow(b1, step));
            const double vhat = ov[i] / (1 - std::pow(b2, step));
            ox[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(x->value[i] - ox[i]) < 1e-12);
        CHECK(std::abs(x->value[i] - c[i]) < 0.2);
    }
}

TEST_CASE("cosine schedule: starts at base, decays toward zero") {
    CHECK(cosine_lr(1e-3, 0, 100) == doctest::Approx(1e-3));
    CHECK(cosine_lr(1e-3, 50, 100) == doctest::Approx(5e-4));
    CHECK(cosine_lr(1e-3, 99, 100) < 1e-5);
}

TEST_CASE("blob: f64 round-trip is exact, f32 is the documented narrowing") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "clare_blob_test.blob").string();
    std::vector<BlobEntry> entries = {
        {"a.W", BlobDType::f64, {2, 3}, {1.0, -2.5, 3.25, 0.1, 1e-9, 7.0}},
        {"b.v", BlobDType::f32, {4}, {0.1, 0.2, 0.3, 0.4}},
    };
    write_blob(path, entries);
    const auto back = read_blob(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "a.W");
    CHECK(back[0].shape == Shape{2, 3});
    CHECK(back[0].values == entries[0].values);
    for (int i = 0; i < 4; ++i)
        CHECK(back[1].values[i] == static_cast<double>(static_cast<float>(entries[1].values[i])));
    fs::remove(path);
}

TEST_CASE("blob: truncation and bad magic are structured errors") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "clare_blob_bad.blob").string();
    write_blob(path, {{"x", BlobDType::f32, {8}, std::vector<double>(8, 1.0)}});
    // Truncate mid-payload.
    const auto full = fs::file_size(path);
    fs::resize_file(path, full - 9);
    CHECK_THROWS_AS(read_blob(path), CheckpointError);
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "NOTABLOBfile";
    }
    CHECK_THROWS_AS(read_blob(path), CheckpointError);
    fs::remove(path);
}
