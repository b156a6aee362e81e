#include "fia/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

#if defined(__x86_64__) || defined(_M_X64)
#define FIA_X86 1
#include <immintrin.h>
#else
#define FIA_X86 0
#endif

#if defined(__aarch64__)
#define FIA_NEON 1
#include <arm_neon.h>
#else
#define FIA_NEON 0
#endif

namespace fia::kernels {

// ---------------------------------------------------------------------------
// Scalar reference kernels
// ---------------------------------------------------------------------------

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add(const double* x, double* acc, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += x[i];
}

void add_sq(const double* x, double* acc, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += x[i] * x[i];
}

void add_sq_diff(const double* x, const double* mu, double* acc, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x[i] - mu[i];
        acc[i] += d * d;
    }
}

}  // namespace scalar

// ---------------------------------------------------------------------------
// AVX2 kernels (compiled with target attributes, gated at runtime)
// ---------------------------------------------------------------------------

#if FIA_X86

namespace avx2 {

__attribute__((target("avx2,fma")))
double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    acc0 = _mm256_add_pd(acc0, acc1);
    __m128d lo = _mm256_castpd256_pd128(acc0);
    __m128d hi = _mm256_extractf128_pd(acc0, 1);
    lo = _mm_add_pd(lo, hi);
    double acc = _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

__attribute__((target("avx2,fma")))
void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

__attribute__((target("avx2,fma")))
void add(const double* x, double* acc, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) acc[i] += x[i];
}

__attribute__((target("avx2,fma")))
void add_sq(const double* x, double* acc, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vx = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(acc + i, _mm256_fmadd_pd(vx, vx, _mm256_loadu_pd(acc + i)));
    }
    for (; i < n; ++i) acc[i] += x[i] * x[i];
}

__attribute__((target("avx2,fma")))
void add_sq_diff(const double* x, const double* mu, double* acc, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(mu + i));
        _mm256_storeu_pd(acc + i, _mm256_fmadd_pd(d, d, _mm256_loadu_pd(acc + i)));
    }
    for (; i < n; ++i) {
        const double d = x[i] - mu[i];
        acc[i] += d * d;
    }
}

}  // namespace avx2

#endif  // FIA_X86

// ---------------------------------------------------------------------------
// NEON kernels
// ---------------------------------------------------------------------------

#if FIA_NEON

namespace neon {

double dot(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    for (; i + 2 <= n; i += 2) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    }
    double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add(const double* x, double* acc, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(acc + i, vaddq_f64(vld1q_f64(acc + i), vld1q_f64(x + i)));
    }
    for (; i < n; ++i) acc[i] += x[i];
}

void add_sq(const double* x, double* acc, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t vx = vld1q_f64(x + i);
        vst1q_f64(acc + i, vfmaq_f64(vld1q_f64(acc + i), vx, vx));
    }
    for (; i < n; ++i) acc[i] += x[i] * x[i];
}

void add_sq_diff(const double* x, const double* mu, double* acc, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t d = vsubq_f64(vld1q_f64(x + i), vld1q_f64(mu + i));
        vst1q_f64(acc + i, vfmaq_f64(vld1q_f64(acc + i), d, d));
    }
    for (; i < n; ++i) {
        const double d = x[i] - mu[i];
        acc[i] += d * d;
    }
}

}  // namespace neon

#endif  // FIA_NEON

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

namespace {

struct KernelTable {
    double (*dot)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*add)(const double*, double*, std::size_t);
    void (*add_sq)(const double*, double*, std::size_t);
    void (*add_sq_diff)(const double*, const double*, double*, std::size_t);
};

constexpr KernelTable kScalarTable = {scalar::dot, scalar::axpy, scalar::add,
                                      scalar::add_sq, scalar::add_sq_diff};

#if FIA_X86
constexpr KernelTable kAvx2Table = {avx2::dot, avx2::axpy, avx2::add,
                                    avx2::add_sq, avx2::add_sq_diff};
#endif
#if FIA_NEON
constexpr KernelTable kNeonTable = {neon::dot, neon::axpy, neon::add,
                                    neon::add_sq, neon::add_sq_diff};
#endif

bool cpu_has_avx2() {
#if FIA_X86
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend pick_auto() {
#if FIA_NEON
    return Backend::Neon;
#else
    if (cpu_has_avx2()) return Backend::Avx2;
    return Backend::Scalar;
#endif
}

Backend parse_env_backend() {
    const char* env = std::getenv("FIA_BACKEND");
    if (env == nullptr) return Backend::Auto;
    const std::string v(env);
    if (v == "scalar") return Backend::Scalar;
    if (v == "avx2") return Backend::Avx2;
    if (v == "neon") return Backend::Neon;
    return Backend::Auto;
}

struct Dispatch {
    Backend backend;
    const KernelTable* table;
};

Dispatch make_dispatch(Backend backend) {
    if (backend == Backend::Auto) backend = pick_auto();
    switch (backend) {
        case Backend::Scalar:
            return {Backend::Scalar, &kScalarTable};
        case Backend::Avx2:
#if FIA_X86
            if (cpu_has_avx2()) return {Backend::Avx2, &kAvx2Table};
#endif
            throw std::invalid_argument("kernels: AVX2 backend not supported on this CPU");
        case Backend::Neon:
#if FIA_NEON
            return {Backend::Neon, &kNeonTable};
#else
            throw std::invalid_argument("kernels: NEON backend not supported on this CPU");
#endif
        default:
            return {Backend::Scalar, &kScalarTable};
    }
}

Dispatch& dispatch() {
    static Dispatch d = make_dispatch(parse_env_backend());
    return d;
}

}  // namespace

void set_backend(Backend backend) { dispatch() = make_dispatch(backend); }

Backend active_backend() { return dispatch().backend; }

std::string_view backend_name() {
    switch (dispatch().backend) {
        case Backend::Avx2: return "avx2";
        case Backend::Neon: return "neon";
        default: return "scalar";
    }
}

bool backend_supported(Backend backend) {
    switch (backend) {
        case Backend::Auto:
        case Backend::Scalar: return true;
        case Backend::Avx2: return cpu_has_avx2();
        case Backend::Neon: return FIA_NEON != 0;
    }
    return false;
}

double dot(const double* a, const double* b, std::size_t n) {
    return dispatch().table->dot(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    dispatch().table->axpy(alpha, x, y, n);
}

void add(const double* x, double* acc, std::size_t n) {
    dispatch().table->add(x, acc, n);
}

void add_sq(const double* x, double* acc, std::size_t n) {
    dispatch().table->add_sq(x, acc, n);
}

void add_sq_diff(const double* x, const double* mu, double* acc, std::size_t n) {
    dispatch().table->add_sq_diff(x, mu, acc, n);
}

}  // namespace fia::kernels
