#pragma once

#include <cstdint>

namespace sevad::kernels {

// Global switch between the OpenMP path and the serial reference path.
// Both paths compute every output cell with the same accumulation order,
// so results are bit-identical; the serial path exists as the reference
// the parallel one is tested and benchmarked against.
void set_parallel(bool on);
bool parallel_enabled();

// Thread count for the parallel path (0 = OpenMP default).
void set_threads(int n);
int threads();

// C[m x n] = A[m x k] * B[k x n]; accumulates into C when `accumulate`.
// Reductions run in 64-bit regardless of T.
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false);

// C[m x n] = A[m x k] * B^T where bt is stored [n x k].
template <typename T>
void matmul_nt(const T* a, const T* bt, T* c, int m, int k, int n, bool accumulate = false);

// C[m x n] = A^T * B where at is stored [k x m].
template <typename T>
void matmul_tn(const T* at, const T* b, T* c, int m, int k, int n, bool accumulate = false);

template <typename T>
void add_bias_rows(T* x, const T* bias, int rows, int cols);

template <typename T>
void relu(T* x, int64_t n);

// grad *= 1[pre > 0]
template <typename T>
void relu_backward(const T* pre, T* grad, int64_t n);

// Row-wise softmax in place, numerically stabilized by the row max.
template <typename T>
void softmax_rows(T* x, int rows, int cols);

// Causal strided 1-D convolution over a [len x c_in] sequence.
// out[t] covers input samples (stride*(t+1)-kernel, stride*(t+1)], with
// zero padding on the left, so output length is floor(len / stride) and
// output row t depends only on input rows < stride*(t+1).
template <typename T>
void conv1d_causal(const T* in, int len, int c_in,
                   const T* w,          // [c_out x c_in x kernel]
                   const T* bias,       // [c_out]
                   int c_out, int kernel, int stride,
                   T* out);             // [floor(len/stride) x c_out]

// Gradients for conv1d_causal. d_in may be null when the input gradient is
// not needed (first layer). d_w/d_bias are accumulated into.
template <typename T>
void conv1d_causal_backward(const T* in, int len, int c_in,
                            const T* w, int c_out, int kernel, int stride,
                            const T* d_out,
                            T* d_in, T* d_w, T* d_bias);

}  // namespace sevad::kernels
