#include "vtm/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace vtm::kernels {

namespace {
bool g_parallel = true;

// Per-row routines shared by the serial and OpenMP variants. Keeping the
// summation order per output element fixed makes the two bitwise equal;
// NOINLINE pins both variants to the same machine code so instruction
// selection (e.g. FMA contraction) cannot differ between them.
#if defined(__GNUC__)
#define VTM_NOINLINE __attribute__((noinline))
#else
#define VTM_NOINLINE
#endif

VTM_NOINLINE void row_nn(const double* a_row, const double* b, double* c_row, int64_t k, int64_t n) {
    std::fill(c_row, c_row + n, 0.0);
    for (int64_t l = 0; l < k; ++l) {
        const double av = a_row[l];
        const double* b_row = b + l * n;
        for (int64_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
}

VTM_NOINLINE void row_nt(const double* a_row, const double* b, double* c_row, int64_t k, int64_t n) {
    for (int64_t j = 0; j < n; ++j) {
        const double* b_row = b + j * k;
        double s = 0.0;
        for (int64_t l = 0; l < k; ++l) s += a_row[l] * b_row[l];
        c_row[j] = s;
    }
}

// c[i,:] = sum_l a[l,i] * b[l,:]
VTM_NOINLINE void row_tn(const double* a, int64_t i, const double* b, double* c_row,
                   int64_t m, int64_t k, int64_t n) {
    std::fill(c_row, c_row + n, 0.0);
    for (int64_t l = 0; l < k; ++l) {
        const double av = a[l * m + i];
        const double* b_row = b + l * n;
        for (int64_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
}

VTM_NOINLINE void softmax_row(const double* x_row, double* y_row, int64_t cols) {
    double mx = x_row[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x_row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
        double e = std::exp(x_row[j] - mx);
        y_row[j] = e;
        sum += e;
    }
    for (int64_t j = 0; j < cols; ++j) y_row[j] /= sum;
}

VTM_NOINLINE void shift_row(const double* x, double* y, int64_t clip, int64_t f, int64_t t,
                      int64_t frames, int64_t tokens, int64_t width, int64_t fold) {
    const double* prev = (f > 0) ? x + ((clip * frames + f - 1) * tokens + t) * width : nullptr;
    const double* next = (f + 1 < frames) ? x + ((clip * frames + f + 1) * tokens + t) * width : nullptr;
    const double* cur = x + ((clip * frames + f) * tokens + t) * width;
    double* out = y + ((clip * frames + f) * tokens + t) * width;
    for (int64_t c = 0; c < fold; ++c) out[c] = prev ? prev[c] : 0.0;
    for (int64_t c = fold; c < 2 * fold; ++c) out[c] = next ? next[c] : 0.0;
    for (int64_t c = 2 * fold; c < width; ++c) out[c] = cur[c];
}

}  // namespace

bool parallel_available() {
#ifdef VTM_OPENMP
    return true;
#else
    return false;
#endif
}

bool parallel_enabled() { return g_parallel && parallel_available(); }
void set_parallel(bool on) { g_parallel = on; }

void matmul_nn_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) row_nn(a + i * k, b, c + i * n, k, n);
}

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
#ifdef VTM_OPENMP
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < m; ++i) row_nn(a + i * k, b, c + i * n, k, n);
        return;
    }
#endif
    matmul_nn_serial(a, b, c, m, k, n);
}

void matmul_nt_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) row_nt(a + i * k, b, c + i * n, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
#ifdef VTM_OPENMP
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < m; ++i) row_nt(a + i * k, b, c + i * n, k, n);
        return;
    }
#endif
    matmul_nt_serial(a, b, c, m, k, n);
}

void matmul_tn_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) row_tn(a, i, b, c + i * n, m, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
#ifdef VTM_OPENMP
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < m; ++i) row_tn(a, i, b, c + i * n, m, k, n);
        return;
    }
#endif
    matmul_tn_serial(a, b, c, m, k, n);
}

void bmm_nn_serial(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n) {
    for (int64_t idx = 0; idx < B * m; ++idx) {
        const int64_t batch = idx / m, i = idx % m;
        row_nn(a + (batch * m + i) * k, b + batch * k * n, c + (batch * m + i) * n, k, n);
    }
}

void bmm_nn(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n) {
#ifdef VTM_OPENMP
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int64_t idx = 0; idx < B * m; ++idx) {
            const int64_t batch = idx / m, i = idx % m;
            row_nn(a + (batch * m + i) * k, b + batch * k * n, c + (batch * m + i) * n, k, n);
        }
        return;
    }
#endif
    bmm_nn_serial(a, b, c, B, m, k, n);
}

void bmm_nt_serial(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n) {
    for (int64_t idx = 0; idx < B * m; ++idx) {
        const int64_t batch = idx / m, i = idx % m;
        row_nt(a + (batch * m + i) * k, b + batch * n * k, c + (batch * m + i) * n, k, n);
    }
}

void bmm_nt(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n) {
#ifdef VTM_OPENMP
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int64_t idx = 0; idx < B * m; ++idx) {
            const int64_t batch = idx / m, i = idx % m;
            row_nt(a + (batch * m + i) * k, b + batch * n * k, c + (batch * m + i) * n, k, n);
        }
        return;
    }
#endif
    bmm_nt_serial(a, b, c, B, m, k, n);
}

void bmm_tn_serial(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n) {
    for (int64_t idx = 0; idx < B * m; ++idx) {
        const int64_t batch = idx / m, i = idx % m;
        row_tn(a + batch * k * m, i, b + batch * k * n, c + (batch * m + i) * n, m, k, n);
    }
}

void bmm_tn(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n) {
#ifdef VTM_OPENMP
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int64_t idx = 0; idx < B * m; ++idx) {
            const int64_t batch = idx / m, i = idx % m;
            row_tn(a + batch * k * m, i, b + batch * k * n, c + (batch * m + i) * n, m, k, n);
        }
        return;
    }
#endif
    bmm_tn_serial(a, b, c, B, m, k, n);
}

void softmax_rows_serial(const double* x, double* y, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
#ifdef VTM_OPENMP
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
        return;
    }
#endif
    softmax_rows_serial(x, y, rows, cols);
}

void temporal_shift_serial(const double* x, double* y, int64_t clips, int64_t frames,
                           int64_t tokens, int64_t width, int64_t fold) {
    for (int64_t idx = 0; idx < clips * frames * tokens; ++idx) {
        const int64_t t = idx % tokens;
        const int64_t f = (idx / tokens) % frames;
        const int64_t clip = idx / (tokens * frames);
        shift_row(x, y, clip, f, t, frames, tokens, width, fold);
    }
}

void temporal_shift(const double* x, double* y, int64_t clips, int64_t frames,
                    int64_t tokens, int64_t width, int64_t fold) {
#ifdef VTM_OPENMP
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int64_t idx = 0; idx < clips * frames * tokens; ++idx) {
            const int64_t t = idx % tokens;
            const int64_t f = (idx / tokens) % frames;
            const int64_t clip = idx / (tokens * frames);
            shift_row(x, y, clip, f, t, frames, tokens, width, fold);
        }
        return;
    }
#endif
    temporal_shift_serial(x, y, clips, frames, tokens, width, fold);
}

}  // namespace vtm::kernels
