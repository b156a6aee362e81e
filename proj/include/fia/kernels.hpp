#pragma once

#include <cstddef>
#include <string_view>

// Data-parallel primitives behind the saliency and training inner loops.
// Every kernel has a scalar reference implementation plus SIMD variants
// (AVX2 on x86-64, NEON on aarch64) selected once at runtime. The scalar
// versions stay exported so equivalence tests can pin the SIMD paths
// against them.

namespace fia::kernels {

enum class Backend { Auto, Scalar, Avx2, Neon };

/// Select the dispatch backend. Auto picks the best supported one.
/// Throws std::invalid_argument if the requested backend is unavailable
/// on this machine.
void set_backend(Backend backend);

/// Backend currently in effect (never Auto).
Backend active_backend();

std::string_view backend_name();

/// True if the given backend can run on this CPU.
bool backend_supported(Backend backend);

// ---------------------------------------------------------------------------
// Dispatched kernels
// ---------------------------------------------------------------------------

/// Σ a[i]·b[i]
double dot(const double* a, const double* b, std::size_t n);

/// y[i] += alpha·x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);

/// acc[i] += x[i]
void add(const double* x, double* acc, std::size_t n);

/// acc[i] += x[i]²
void add_sq(const double* x, double* acc, std::size_t n);

/// acc[i] += (x[i] − mu[i])²
void add_sq_diff(const double* x, const double* mu, double* acc, std::size_t n);

// ---------------------------------------------------------------------------
// Scalar reference implementations (always available)
// ---------------------------------------------------------------------------

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void add(const double* x, double* acc, std::size_t n);
void add_sq(const double* x, double* acc, std::size_t n);
void add_sq_diff(const double* x, const double* mu, double* acc, std::size_t n);
}  // namespace scalar

}  // namespace fia::kernels
