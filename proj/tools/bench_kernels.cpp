#include <chrono>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "vtm/kernels.hpp"
#include "vtm/rng.hpp"
#include "vtm/tensor.hpp"

using namespace vtm;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed) {
    Tensor t(shape);
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

double time_of(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

int64_t max_abs_ulp_diff(const Tensor& a, const Tensor& b) {
    int64_t worst = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) worst = 1;  // any mismatch matters, magnitude does not
    return worst;
}

struct Case {
    std::string name;
    std::function<void()> serial;
    std::function<void()> parallel;
    const Tensor* out_serial;
    const Tensor* out_parallel;
    double flops;
};

}  // namespace

int main(int argc, char** argv) {
    int reps = argc > 1 ? std::atoi(argv[1]) : 5;
    std::printf("OpenMP compiled in: %s\n", kernels::parallel_available() ? "yes" : "no");

    const int64_t m = 256, k = 256, n = 256;
    Tensor a = random_tensor({m, k}, 1), b = random_tensor({k, n}, 2);
    Tensor c1({m, n}), c2({m, n});

    const int64_t B = 16, bm = 64, bk = 64, bn = 64;
    Tensor ba = random_tensor({B, bm, bk}, 3), bb = random_tensor({B, bk, bn}, 4);
    Tensor bc1({B, bm, bn}), bc2({B, bm, bn});

    const int64_t rows = 4096, cols = 256;
    Tensor sx = random_tensor({rows, cols}, 5);
    Tensor sy1({rows, cols}), sy2({rows, cols});

    const int64_t clips = 8, frames = 8, tokens = 65, width = 64;
    Tensor tx = random_tensor({clips * frames, tokens, width}, 6);
    Tensor ty1(tx.shape()), ty2(tx.shape());

    std::vector<Case> cases;
    cases.push_back({"matmul_nn 256^3",
                     [&] { kernels::matmul_nn_serial(a.data(), b.data(), c1.data(), m, k, n); },
                     [&] { kernels::matmul_nn(a.data(), b.data(), c2.data(), m, k, n); }, &c1, &c2,
                     2.0 * m * k * n});
    cases.push_back(
        {"bmm_nn 16x64^3",
         [&] { kernels::bmm_nn_serial(ba.data(), bb.data(), bc1.data(), B, bm, bk, bn); },
         [&] { kernels::bmm_nn(ba.data(), bb.data(), bc2.data(), B, bm, bk, bn); }, &bc1, &bc2,
         2.0 * B * bm * bk * bn});
    cases.push_back({"softmax 4096x256",
                     [&] { kernels::softmax_rows_serial(sx.data(), sy1.data(), rows, cols); },
                     [&] { kernels::softmax_rows(sx.data(), sy2.data(), rows, cols); }, &sy1, &sy2,
                     5.0 * rows * cols});
    cases.push_back({"shift 8x8x65x64",
                     [&] {
                         kernels::temporal_shift_serial(tx.data(), ty1.data(), clips, frames,
                                                        tokens, width, width / 4);
                     },
                     [&] {
                         kernels::temporal_shift(tx.data(), ty2.data(), clips, frames, tokens,
                                                 width, width / 4);
                     },
                     &ty1, &ty2, 1.0 * clips * frames * tokens * width});

    std::printf("%-18s %12s %12s %8s %10s %s\n", "kernel", "serial s", "parallel s", "speedup",
                "GFLOP/s", "match");
    for (Case& c : cases) {
        kernels::set_parallel(false);
        const double ts = time_of(c.serial, reps);
        kernels::set_parallel(true);
        const double tp = time_of(c.parallel, reps);
        const bool same = max_abs_ulp_diff(*c.out_serial, *c.out_parallel) == 0;
        std::printf("%-18s %12.5f %12.5f %7.2fx %10.2f %s\n", c.name.c_str(), ts, tp, ts / tp,
                    c.flops / tp / 1e9, same ? "bitwise" : "DIFFERS");
        if (!same) return 1;
    }
    kernels::set_parallel(true);
    return 0;
}
