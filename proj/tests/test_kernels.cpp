#include <doctest.h>

#include <cmath>
#include <vector>

#include "vtm/kernels.hpp"
#include "vtm/rng.hpp"
#include "vtm/tensor.hpp"

using namespace vtm;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng) {
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    return t;
}

void naive_matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                  bool ta, bool tb) {
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t l = 0; l < k; ++l) {
                double av = ta ? a[l * m + i] : a[i * k + l];
                double bv = tb ? b[j * k + l] : b[l * n + j];
                acc += av * bv;
            }
            c[i * n + j] = acc;
        }
}

Tensor shift_oracle(const Tensor& x, int64_t clips, int64_t frames, int64_t fold) {
    int64_t tokens = x.dim(1), width = x.dim(2);
    Tensor out(x.shape());
    auto idx = [&](int64_t s, int64_t t, int64_t c) { return (s * tokens + t) * width + c; };
    for (int64_t clip = 0; clip < clips; ++clip)
        for (int64_t f = 0; f < frames; ++f)
            for (int64_t t = 0; t < tokens; ++t)
                for (int64_t c = 0; c < width; ++c) {
                    int64_t s = clip * frames + f;
                    double v;
                    if (c < fold)
                        v = (f > 0) ? x[idx(s - 1, t, c)] : 0.0;
                    else if (c < 2 * fold)
                        v = (f + 1 < frames) ? x[idx(s + 1, t, c)] : 0.0;
                    else
                        v = x[idx(s, t, c)];
                    out[idx(s, t, c)] = v;
                }
    return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("matmul variants match the naive oracle") {
    Rng rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        int64_t m = rng.uniform_int(1, 17), k = rng.uniform_int(1, 17), n = rng.uniform_int(1, 17);
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        Tensor at = random_tensor({k, m}, rng);
        Tensor bt = random_tensor({n, k}, rng);
        Tensor c({m, n}), ref({m, n});

        kernels::matmul_nn(a.data(), b.data(), c.data(), m, k, n);
        naive_matmul(a.data(), b.data(), ref.data(), m, k, n, false, false);
        for (int64_t i = 0; i < c.numel(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));

        kernels::matmul_nt(a.data(), bt.data(), c.data(), m, k, n);
        naive_matmul(a.data(), bt.data(), ref.data(), m, k, n, false, true);
        for (int64_t i = 0; i < c.numel(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));

        kernels::matmul_tn(at.data(), b.data(), c.data(), m, k, n);
        naive_matmul(at.data(), b.data(), ref.data(), m, k, n, true, false);
        for (int64_t i = 0; i < c.numel(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("bmm variants match per-batch matmul") {
    Rng rng(12);
    int64_t B = 3, m = 5, k = 7, n = 4;
    Tensor a = random_tensor({B, m, k}, rng);
    Tensor b = random_tensor({B, k, n}, rng);
    Tensor at = random_tensor({B, k, m}, rng);
    Tensor bt = random_tensor({B, n, k}, rng);
    Tensor c({B, m, n}), ref_slice({m, n});

    kernels::bmm_nn(a.data(), b.data(), c.data(), B, m, k, n);
    for (int64_t i = 0; i < B; ++i) {
        naive_matmul(a.data() + i * m * k, b.data() + i * k * n, ref_slice.data(), m, k, n, false, false);
        for (int64_t j = 0; j < m * n; ++j)
            CHECK(c[i * m * n + j] == doctest::Approx(ref_slice[j]).epsilon(1e-12));
    }

    kernels::bmm_nt(a.data(), bt.data(), c.data(), B, m, k, n);
    for (int64_t i = 0; i < B; ++i) {
        naive_matmul(a.data() + i * m * k, bt.data() + i * n * k, ref_slice.data(), m, k, n, false, true);
        for (int64_t j = 0; j < m * n; ++j)
            CHECK(c[i * m * n + j] == doctest::Approx(ref_slice[j]).epsilon(1e-12));
    }

    kernels::bmm_tn(at.data(), b.data(), c.data(), B, m, k, n);
    for (int64_t i = 0; i < B; ++i) {
        naive_matmul(at.data() + i * k * m, b.data() + i * k * n, ref_slice.data(), m, k, n, true, false);
        for (int64_t j = 0; j < m * n; ++j)
            CHECK(c[i * m * n + j] == doctest::Approx(ref_slice[j]).epsilon(1e-12));
    }
}

TEST_CASE("softmax rows sum to one and match a hand-computed case") {
    Tensor x = Tensor::from({1, 2}, {4.0, 0.0});
    Tensor y({1, 2});
    kernels::softmax_rows(x.data(), y.data(), 1, 2);
    CHECK(y[0] == doctest::Approx(0.9820137900).epsilon(1e-8));
    CHECK(y[1] == doctest::Approx(0.0179862100).epsilon(1e-8));

    Rng rng(13);
    Tensor big = random_tensor({40, 9}, rng);
    for (int64_t i = 0; i < big.numel(); ++i) big[i] *= 50.0;  // stress the max-subtraction path
    Tensor out({40, 9});
    kernels::softmax_rows(big.data(), out.data(), 40, 9);
    for (int64_t r = 0; r < 40; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < 9; ++c) {
            CHECK(out[r * 9 + c] >= 0.0);
            s += out[r * 9 + c];
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("temporal shift matches the index oracle bitwise") {
    Rng rng(14);
    for (int rep = 0; rep < 20; ++rep) {
        int64_t clips = rng.uniform_int(1, 3);
        int64_t frames = rng.uniform_int(1, 6);
        int64_t tokens = rng.uniform_int(1, 5);
        int64_t width = rng.uniform_int(4, 12);
        int64_t fold = width / 4;
        Tensor x = random_tensor({clips * frames, tokens, width}, rng);
        Tensor out(x.shape());
        kernels::temporal_shift(x.data(), out.data(), clips, frames, tokens, width, fold);
        CHECK(bitwise_equal(out, shift_oracle(x, clips, frames, fold)));
    }
}

TEST_CASE("temporal shift on frames A,B,C with width 4") {
    // middle frame keeps channels 2-3, takes channel 0 from the previous frame
    // and channel 1 from the next
    int64_t frames = 3, tokens = 1, width = 4;
    Tensor x({frames, tokens, width});
    for (int64_t f = 0; f < frames; ++f)
        for (int64_t c = 0; c < width; ++c) x[f * width + c] = 10.0 * static_cast<double>(f + 1) + static_cast<double>(c);
    Tensor out(x.shape());
    kernels::temporal_shift(x.data(), out.data(), 1, frames, tokens, width, width / 4);
    CHECK(out[1 * width + 0] == 10.0);  // from A
    CHECK(out[1 * width + 1] == 31.0);  // from C
    CHECK(out[1 * width + 2] == 22.0);  // B unchanged
    CHECK(out[1 * width + 3] == 23.0);
    CHECK(out[0 * width + 0] == 0.0);   // boundary zeros
    CHECK(out[2 * width + 1] == 0.0);
}

TEST_CASE("temporal shift with one frame zeroes both shifted folds") {
    Rng rng(15);
    Tensor x = random_tensor({2, 3, 8}, rng);  // 2 clips x 1 frame
    Tensor out(x.shape());
    kernels::temporal_shift(x.data(), out.data(), 2, 1, 3, 8, 2);
    for (int64_t s = 0; s < 2; ++s)
        for (int64_t t = 0; t < 3; ++t)
            for (int64_t c = 0; c < 8; ++c) {
                double v = out[(s * 3 + t) * 8 + c];
                if (c < 4)
                    CHECK(v == 0.0);
                else
                    CHECK(v == x[(s * 3 + t) * 8 + c]);
            }
}

TEST_CASE("serial and parallel kernels agree bitwise") {
    Rng rng(16);
    int64_t m = 23, k = 31, n = 17;
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor c1({m, n}), c2({m, n});

    bool prev = kernels::parallel_enabled();
    kernels::set_parallel(true);
    kernels::matmul_nn(a.data(), b.data(), c1.data(), m, k, n);
    kernels::set_parallel(false);
    kernels::matmul_nn(a.data(), b.data(), c2.data(), m, k, n);
    kernels::set_parallel(prev);
    CHECK(bitwise_equal(c1, c2));

    Tensor c3({m, n});
    kernels::matmul_nn_serial(a.data(), b.data(), c3.data(), m, k, n);
    CHECK(bitwise_equal(c1, c3));

    Tensor sm1({m, k}), sm2({m, k});
    kernels::softmax_rows(a.data(), sm1.data(), m, k);
    kernels::softmax_rows_serial(a.data(), sm2.data(), m, k);
    CHECK(bitwise_equal(sm1, sm2));

    Tensor x = random_tensor({6, 4, 16}, rng);
    Tensor s1(x.shape()), s2(x.shape());
    kernels::temporal_shift(x.data(), s1.data(), 2, 3, 4, 16, 4);
    kernels::temporal_shift_serial(x.data(), s2.data(), 2, 3, 4, 16, 4);
    CHECK(bitwise_equal(s1, s2));
}
