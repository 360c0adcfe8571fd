#pragma once

#include <cstdint>

// Hot inner loops, each in two variants: a serial reference and an OpenMP
// version parallelized over output elements only. Every output element is
// accumulated in the same order in both, so results are bitwise identical
// for any thread count. set_parallel(false) forces the reference path.
namespace vtm::kernels {

bool parallel_available();
bool parallel_enabled();
void set_parallel(bool on);

// c[m,n] = a[m,k] * b[k,n]
void matmul_nn_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

// c[m,n] = a[m,k] * b[n,k]^T
void matmul_nt_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

// c[m,n] = a[k,m]^T * b[k,n]
void matmul_tn_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

// batched: a[B,m,k], b[B,k,n] -> c[B,m,n] (nt: b[B,n,k]; tn: a[B,k,m])
void bmm_nn_serial(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n);
void bmm_nn(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n);
void bmm_nt_serial(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n);
void bmm_nt(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n);
void bmm_tn_serial(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n);
void bmm_tn(const double* a, const double* b, double* c, int64_t B, int64_t m, int64_t k, int64_t n);

// row-wise softmax with max subtraction, x[rows,cols] -> y[rows,cols]
void softmax_rows_serial(const double* x, double* y, int64_t rows, int64_t cols);
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);

// temporal channel shift over [clips*frames, tokens, width]: the first
// `fold` channels take frame t-1, the next `fold` take frame t+1, the rest
// pass through; out-of-range frames contribute zeros.
void temporal_shift_serial(const double* x, double* y, int64_t clips, int64_t frames,
                           int64_t tokens, int64_t width, int64_t fold);
void temporal_shift(const double* x, double* y, int64_t clips, int64_t frames,
                    int64_t tokens, int64_t width, int64_t fold);

}  // namespace vtm::kernels
