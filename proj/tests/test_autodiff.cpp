#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "simta/grad_check.hpp"
#include "simta/optim.hpp"
#include "simta/rng.hpp"
#include "simta/tape.hpp"

using namespace simta;

namespace {

Tensor random_tensor(std::vector<size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(shape, true);
    for (double& v : t.data) v = rng.normal() * scale;
    return t;
}

}  // namespace

TEST_CASE("masked softmax forward values") {
    Tape tape;
    Value s = tape.constant_vec({0.0, -1.0});
    Value w = tape.softmax_masked(s, {1, 1});
    const auto& out = tape.data(w);
    CHECK(out[0] == doctest::Approx(0.731059).epsilon(1e-5));
    CHECK(out[1] == doctest::Approx(0.268941).epsilon(1e-5));
    CHECK(out[0] + out[1] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("masked softmax: masked positions are exactly zero, rows sum to one") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const size_t rows = 1 + rng.uniform_int(5);
        const size_t cols = 1 + rng.uniform_int(6);
        Tensor scores = random_tensor({rows, cols}, rng, 3.0);
        std::vector<uint8_t> mask(rows * cols, 0);
        for (size_t r = 0; r < rows; ++r) {
            mask[r * cols + rng.uniform_int(cols)] = 1;  // at least one valid
            for (size_t c = 0; c < cols; ++c)
                if (rng.bernoulli(0.5)) mask[r * cols + c] = 1;
        }
        Tape tape;
        Value w = tape.softmax_masked(tape.leaf(scores), mask);
        const auto& out = tape.data(w);
        for (size_t r = 0; r < rows; ++r) {
            double sum = 0.0;
            for (size_t c = 0; c < cols; ++c) {
                if (!mask[r * cols + c]) CHECK(out[r * cols + c] == 0.0);
                sum += out[r * cols + c];
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("masked softmax rejects a row with no valid position") {
    Tape tape;
    Value s = tape.constant_matrix(2, 2, {0.0, 1.0, 2.0, 3.0});
    CHECK_THROWS_WITH_AS(tape.softmax_masked(s, {1, 1, 0, 0}),
                         doctest::Contains("degenerate mask"),
                         std::invalid_argument);
}

TEST_CASE("layer norm of a constant vector is zero under identity affine") {
    Tape tape;
    Tensor gamma = Tensor({3}, {1.0, 1.0, 1.0});
    Tensor beta = Tensor::zeros({3});
    Value y = tape.layer_norm(tape.constant_vec({5.0, 5.0, 5.0}), tape.leaf(gamma),
                              tape.leaf(beta));
    for (double v : tape.data(y)) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softplus(0) = ln 2") {
    Tape tape;
    Value y = tape.softplus(tape.constant_scalar(0.0));
    CHECK(tape.scalar(y) == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("masked bce matches -ln(0.5) and stays finite at clamped endpoints") {
    {
        Tape tape;
        Value loss = tape.bce_masked(tape.constant_vec({0.5}), tape.constant_vec({1.0}), {1});
        CHECK(tape.scalar(loss) == doctest::Approx(0.693147).epsilon(1e-6));
    }
    {
        Tape tape;
        Value loss = tape.bce_masked(tape.constant_vec({0.0, 1.0}),
                                     tape.constant_vec({1.0, 0.0}), {1, 1});
        CHECK(std::isfinite(tape.scalar(loss)));
    }
}

TEST_CASE("bce masks drop entries from the average") {
    Tape tape;
    // Only the first entry is live; second would contribute a huge loss.
    Value loss = tape.bce_masked(tape.constant_vec({0.5, 0.001}),
                                 tape.constant_vec({1.0, 1.0}), {1, 0});
    CHECK(tape.scalar(loss) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("shape mismatch errors name the op and both shapes") {
    Tape tape;
    Value a = tape.constant_matrix(2, 3, std::vector<double>(6, 1.0));
    Value b = tape.constant_matrix(2, 3, std::vector<double>(6, 1.0));
    CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("matmul"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("(2x3)"),
                         std::invalid_argument);
}

TEST_CASE("non-finite inputs are rejected") {
    Tape tape;
    CHECK_THROWS_WITH_AS(tape.constant_vec({1.0, std::nan("")}),
                         doctest::Contains("non-finite"), std::invalid_argument);
}

TEST_CASE("values from another tape are rejected") {
    Tape a, b;
    Value x = a.constant_scalar(1.0);
    Value y = b.constant_scalar(2.0);
    CHECK_THROWS_WITH_AS(a.add(x, y), doctest::Contains("absent from this tape"),
                         std::invalid_argument);
}

TEST_CASE("backward of a sum gives unit gradients") {
    Tensor x = Tensor::vec({1.0, 2.0, 3.0}, true);
    Tape tape;
    // sum = n * mean
    Value loss = tape.affine(tape.mean_axis(tape.leaf(x), 0), 3.0, 0.0);
    tape.backward(loss);
    CHECK(x.grad[0] == doctest::Approx(1.0));
    CHECK(x.grad[1] == doctest::Approx(1.0));
    CHECK(x.grad[2] == doctest::Approx(1.0));
}

TEST_CASE("sigmoid gradient at zero is 0.25") {
    Tensor z = Tensor::scalar(0.0, true);
    Tape tape;
    Value loss = tape.sigmoid(tape.leaf(z));
    tape.backward(loss);
    CHECK(z.grad[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("bce through sigmoid at z=0, y=1 has gradient -0.5") {
    Tensor z = Tensor::scalar(0.0, true);
    Tape tape;
    Value p = tape.sigmoid(tape.leaf(z));
    Value loss = tape.bce_masked(p, tape.constant_vec({1.0}), {1});
    tape.backward(loss);
    CHECK(z.grad[0] == doctest::Approx(-0.5).epsilon(1e-9));
}

TEST_CASE("gradients accumulate across multiple uses of a tensor") {
    Tensor x = Tensor::scalar(3.0, true);
    Tape tape;
    Value v = tape.leaf(x);
    Value loss = tape.mul(v, v);  // x^2, d/dx = 2x
    tape.backward(loss);
    CHECK(x.grad[0] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects a non-scalar loss") {
    Tape tape;
    Value v = tape.constant_vec({1.0, 2.0});
    CHECK_THROWS_WITH_AS(tape.backward(v), doctest::Contains("scalar"),
                         std::invalid_argument);
}

TEST_CASE("adam: zero gradient is a fixed point, moments decay toward zero") {
    Tensor w = Tensor::vec({1.0, -2.0}, true);
    w.ensure_grad();
    AdamState st;
    st.init({&w});
    adam_step({&w}, st, {});
    CHECK(w.data[0] == 1.0);
    CHECK(w.data[1] == -2.0);
    // With preloaded moments and zero gradient the moments shrink every step.
    st.m[0] = {0.5, 0.5};
    st.v[0] = {0.5, 0.5};
    adam_step({&w}, st, {});
    CHECK(st.m[0][0] == doctest::Approx(0.45));
    CHECK(st.v[0][0] < 0.5);
}

TEST_CASE("adam: first step with unit gradient moves by ~lr") {
    Tensor w = Tensor::scalar(1.0, true);
    w.ensure_grad();
    w.grad[0] = 1.0;
    AdamState st;
    st.init({&w});
    AdamConfig cfg;
    cfg.lr = 0.1;
    adam_step({&w}, st, cfg);
    CHECK(w.data[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(st.step == 1);
}

TEST_CASE("adam: constant gradient keeps descending") {
    Tensor w = Tensor::scalar(1.0, true);
    w.ensure_grad();
    AdamState st;
    st.init({&w});
    AdamConfig cfg;
    cfg.lr = 0.05;
    w.grad[0] = 1.0;
    adam_step({&w}, st, cfg);
    const double after_one = w.data[0];
    w.grad[0] = 1.0;
    adam_step({&w}, st, cfg);
    CHECK(after_one < 1.0);
    CHECK(w.data[0] < after_one);
}

TEST_CASE("adam: missing gradient is an error naming the parameter") {
    Tensor w = Tensor::scalar(1.0, true);
    w.grad.clear();
    AdamState st;
    st.init({&w});
    CHECK_THROWS_WITH_AS(adam_step({&w}, st, {}), doctest::Contains("parameter 0"),
                         std::invalid_argument);
}

TEST_CASE("grad_check: quadratic") {
    Tensor x = Tensor::vec({1.0, 2.0}, true);
    auto program = [&x](Tape& t) {
        Value v = t.leaf(x);
        Value sq = t.mul(v, v);
        return t.affine(t.mean_axis(sq, 0), 1.0, 0.0);  // mean(x^2) = ||x||^2/n
    };
    auto res = grad_check(program, {&x}, 1e-6, 1e-8);
    CHECK(res.pass);
    CHECK(res.coords_checked == 2);
}

TEST_CASE("grad_check: dead relu region has zero gradient on both routes") {
    Tensor x = Tensor::vec({-2.0, 1.0}, true);
    auto program = [&x](Tape& t) {
        return t.mean_axis(t.relu(t.leaf(x)), 0);
    };
    auto res = grad_check(program, {&x}, 1e-6, 1e-8);
    CHECK(res.pass);
    // Analytic gradient on the dead coordinate is exactly zero.
    Tensor y = Tensor::vec({-2.0, 1.0}, true);
    Tape tape;
    Value loss = tape.mean_axis(tape.relu(tape.leaf(y)), 0);
    tape.backward(loss);
    CHECK(y.grad[0] == 0.0);
}

// Every primitive against central differences on randomized shapes, seeds 0..9.
TEST_CASE("grad_check: all primitives on randomized shapes") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const size_t n = 2 + rng.uniform_int(3);
        const size_t m = 2 + rng.uniform_int(3);
        const size_t k = 2 + rng.uniform_int(3);

        std::vector<Tensor> params;
        params.push_back(random_tensor({n, k}, rng));       // 0: A
        params.push_back(random_tensor({k, m}, rng));       // 1: B
        params.push_back(random_tensor({n, m}, rng));       // 2: C
        params.push_back(random_tensor({m}, rng));          // 3: bias
        params.push_back(random_tensor({m}, rng, 0.5));     // 4: gamma
        params.push_back(random_tensor({m}, rng, 0.5));     // 5: beta
        params.push_back(random_tensor({4, m}, rng));       // 6: embedding table
        params.push_back(random_tensor({1}, rng));          // 7: scalar

        // Shift gamma away from zero so layer norm has a healthy affine.
        for (double& v : params[4].data) v += 1.5;

        std::vector<uint8_t> mask(n * m, 1);
        mask[0] = 0;  // one masked position, first row still valid via others
        std::vector<double> targets(n * m);
        Rng trng(seed + 100);
        for (double& t : targets) t = trng.bernoulli(0.5) ? 1.0 : 0.0;
        std::vector<uint8_t> loss_mask(n * m, 1);
        loss_mask[1] = 0;

        auto program = [&, n, m](Tape& t) {
            auto& ps = params;
            Value a = t.leaf(ps[0]);
            Value b = t.leaf(ps[1]);
            Value c = t.leaf(ps[2]);
            Value mm = t.matmul(a, b);
            Value mm_t = t.matmul(c, b, false, true);  // (n,k) via trans_b
            Value s1 = t.add(mm, c);
            Value s2 = t.add(s1, t.leaf(ps[3]));             // row bias
            Value s3 = t.add(s2, t.leaf(ps[7]));             // scalar add
            Value h = t.mul(s3, t.leaf(ps[7]));              // scalar mul
            Value e = t.mul(h, c);                           // hadamard
            Value cat = t.concat_last({e, c});               // (n, 2m)
            Value act = t.relu(cat);
            Value sp = t.softplus(act);
            Value narrowed = t.matmul(sp, t.constant_matrix(2 * m, m,
                std::vector<double>(2 * m * m, 0.11)));
            Value sm = t.softmax_masked(narrowed, mask);
            Value ln = t.layer_norm(t.add(sm, e), t.leaf(ps[4]), t.leaf(ps[5]));
            Value emb = t.embedding(t.leaf(ps[6]), {0, 3, 1});
            Value pooled = t.mean_axis(emb, 0);              // (m)
            Value with_pool = t.add(ln, pooled);             // row bias form
            Value aff = t.affine(with_pool, 0.7, 0.1);
            Value probs = t.sigmoid(aff);
            Value tgt = t.constant({n, m}, targets);
            Value bce = t.bce_masked(probs, tgt, loss_mask);
            // keep the transposed matmul route alive in the loss
            Value extra = t.mean_axis(t.mean_axis(t.mul(mm_t, mm_t), 0), 0);
            return t.add(bce, t.affine(extra, 0.01, 0.0));
        };

        std::vector<Tensor*> ptrs;
        for (auto& p : params) ptrs.push_back(&p);
        auto res = grad_check(program, ptrs, 1e-6, 1e-5);
        INFO("seed ", seed, ": ", res.note);
        CHECK(res.pass);
    }
}

TEST_CASE("forward replay determinism: identical seeds give bit-identical losses") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({3, 3}, rng);
        Tensor b = random_tensor({3, 3}, rng);
        Tape tape;
        Value y = tape.sigmoid(tape.matmul(tape.leaf(a), tape.leaf(b)));
        Value tgt = tape.constant({3, 3}, std::vector<double>(9, 1.0));
        Value loss = tape.bce_masked(y, tgt, std::vector<uint8_t>(9, 1));
        return tape.scalar(loss);
    };
    const double l1 = run(42);
    const double l2 = run(42);
    CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
}

TEST_CASE("grad_check detects a non-deterministic program") {
    Tensor x = Tensor::scalar(1.0, true);
    int calls = 0;
    auto program = [&calls, &x](Tape& t) {
        ++calls;
        return t.affine(t.leaf(x), 1.0, calls * 0.001);
    };
    CHECK_THROWS_WITH_AS(grad_check(program, {&x}, 1e-6, 1e-5),
                         doctest::Contains("not deterministic"), std::runtime_error);
}
