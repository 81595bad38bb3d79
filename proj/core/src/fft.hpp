#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace dbsfm::detail {

// Thin FFTW wrappers. Plans are cached per thread and size; plan creation is
// serialized because the FFTW planner is not thread-safe.

/// Real-to-complex forward transform, unnormalized. Output has n/2+1 bins.
void rfft(std::span<const double> input, std::vector<std::complex<double>>& out);

/// Complex-to-real inverse transform of n/2+1 Hermitian bins, unnormalized
/// (result is n times the mathematical inverse).
void irfft(std::span<const std::complex<double>> bins, std::size_t n, std::vector<double>& out);

}  // namespace dbsfm::detail
