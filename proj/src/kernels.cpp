#include "sevad/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <omp.h>

namespace sevad::kernels {

namespace {
bool g_parallel = true;
int g_threads = 0;

inline int effective_threads() {
    return g_threads > 0 ? g_threads : omp_get_max_threads();
}
}  // namespace

void set_parallel(bool on) { g_parallel = on; }
bool parallel_enabled() { return g_parallel; }
void set_threads(int n) { g_threads = n; }
int threads() { return effective_threads(); }

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    const bool par = g_parallel && m >= 2;
#pragma omp parallel for schedule(static) num_threads(effective_threads()) if (par)
    for (int i = 0; i < m; ++i) {
        // Row accumulator in double keeps the inner loop contiguous over B.
        std::vector<double> acc(n, 0.0);
        const T* arow = a + static_cast<size_t>(i) * k;
        for (int q = 0; q < k; ++q) {
            const double av = static_cast<double>(arow[q]);
            if (av == 0.0) continue;
            const T* brow = b + static_cast<size_t>(q) * n;
            for (int j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
        }
        T* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double base = accumulate ? static_cast<double>(crow[j]) : 0.0;
            crow[j] = static_cast<T>(base + acc[j]);
        }
    }
}

template <typename T>
void matmul_nt(const T* a, const T* bt, T* c, int m, int k, int n, bool accumulate) {
    const bool par = g_parallel && m >= 2;
#pragma omp parallel for schedule(static) num_threads(effective_threads()) if (par)
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * k;
        T* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = bt + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int q = 0; q < k; ++q)
                acc += static_cast<double>(arow[q]) * static_cast<double>(brow[q]);
            const double base = accumulate ? static_cast<double>(crow[j]) : 0.0;
            crow[j] = static_cast<T>(base + acc);
        }
    }
}

template <typename T>
void matmul_tn(const T* at, const T* b, T* c, int m, int k, int n, bool accumulate) {
    const bool par = g_parallel && m >= 2;
#pragma omp parallel for schedule(static) num_threads(effective_threads()) if (par)
    for (int i = 0; i < m; ++i) {
        std::vector<double> acc(n, 0.0);
        for (int q = 0; q < k; ++q) {
            const double av = static_cast<double>(at[static_cast<size_t>(q) * m + i]);
            if (av == 0.0) continue;
            const T* brow = b + static_cast<size_t>(q) * n;
            for (int j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
        }
        T* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double base = accumulate ? static_cast<double>(crow[j]) : 0.0;
            crow[j] = static_cast<T>(base + acc[j]);
        }
    }
}

template <typename T>
void add_bias_rows(T* x, const T* bias, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        T* row = x + static_cast<size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) row[j] += bias[j];
    }
}

template <typename T>
void relu(T* x, int64_t n) {
    for (int64_t i = 0; i < n; ++i) x[i] = std::max(x[i], T(0));
}

template <typename T>
void relu_backward(const T* pre, T* grad, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        if (pre[i] <= T(0)) grad[i] = T(0);
    }
}

template <typename T>
void softmax_rows(T* x, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        T* row = x + static_cast<size_t>(i) * cols;
        double mx = static_cast<double>(row[0]);
        for (int j = 1; j < cols; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double e = std::exp(static_cast<double>(row[j]) - mx);
            row[j] = static_cast<T>(e);
            sum += e;
        }
        for (int j = 0; j < cols; ++j) row[j] = static_cast<T>(static_cast<double>(row[j]) / sum);
    }
}

template <typename T>
void conv1d_causal(const T* in, int len, int c_in,
                   const T* w, const T* bias,
                   int c_out, int kernel, int stride, T* out) {
    const int out_len = len / stride;
    const bool par = g_parallel && out_len >= 4;
#pragma omp parallel for schedule(static) num_threads(effective_threads()) if (par)
    for (int t = 0; t < out_len; ++t) {
        T* orow = out + static_cast<size_t>(t) * c_out;
        const int base = stride * (t + 1) - kernel;
        for (int co = 0; co < c_out; ++co) {
            double acc = static_cast<double>(bias[co]);
            const T* wrow = w + static_cast<size_t>(co) * c_in * kernel;
            for (int kk = 0; kk < kernel; ++kk) {
                const int idx = base + kk;
                if (idx < 0) continue;
                const T* irow = in + static_cast<size_t>(idx) * c_in;
                const T* wk = wrow + kk;  // w layout is [co][ci][kk]
                for (int ci = 0; ci < c_in; ++ci)
                    acc += static_cast<double>(irow[ci]) *
                           static_cast<double>(wk[static_cast<size_t>(ci) * kernel]);
            }
            orow[co] = static_cast<T>(acc);
        }
    }
}

template <typename T>
void conv1d_causal_backward(const T* in, int len, int c_in,
                            const T* w, int c_out, int kernel, int stride,
                            const T* d_out,
                            T* d_in, T* d_w, T* d_bias) {
    const int out_len = len / stride;
    for (int t = 0; t < out_len; ++t) {
        const T* grow = d_out + static_cast<size_t>(t) * c_out;
        const int base = stride * (t + 1) - kernel;
        for (int co = 0; co < c_out; ++co) {
            const double g = static_cast<double>(grow[co]);
            if (g == 0.0) continue;
            d_bias[co] = static_cast<T>(static_cast<double>(d_bias[co]) + g);
            T* wrow = d_w + static_cast<size_t>(co) * c_in * kernel;
            const T* wsrc = w + static_cast<size_t>(co) * c_in * kernel;
            for (int kk = 0; kk < kernel; ++kk) {
                const int idx = base + kk;
                if (idx < 0) continue;
                const T* irow = in + static_cast<size_t>(idx) * c_in;
                T* din_row = d_in ? d_in + static_cast<size_t>(idx) * c_in : nullptr;
                for (int ci = 0; ci < c_in; ++ci) {
                    const size_t wi = static_cast<size_t>(ci) * kernel + kk;
                    wrow[wi] = static_cast<T>(static_cast<double>(wrow[wi]) +
                                              g * static_cast<double>(irow[ci]));
                    if (din_row)
                        din_row[ci] = static_cast<T>(static_cast<double>(din_row[ci]) +
                                                     g * static_cast<double>(wsrc[wi]));
                }
            }
        }
    }
}

#define SEVAD_INSTANTIATE(T)                                                              \
    template void matmul_nn<T>(const T*, const T*, T*, int, int, int, bool);              \
    template void matmul_nt<T>(const T*, const T*, T*, int, int, int, bool);              \
    template void matmul_tn<T>(const T*, const T*, T*, int, int, int, bool);              \
    template void add_bias_rows<T>(T*, const T*, int, int);                               \
    template void relu<T>(T*, int64_t);                                                   \
    template void relu_backward<T>(const T*, T*, int64_t);                                \
    template void softmax_rows<T>(T*, int, int);                                          \
    template void conv1d_causal<T>(const T*, int, int, const T*, const T*, int, int, int, \
                                   T*);                                                   \
    template void conv1d_causal_backward<T>(const T*, int, int, const T*, int, int, int,  \
                                            const T*, T*, T*, T*);

SEVAD_INSTANTIATE(float)
SEVAD_INSTANTIATE(double)

#undef SEVAD_INSTANTIATE

}  // namespace sevad::kernels
