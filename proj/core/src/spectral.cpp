#include "dbsfm/spectral.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include "dbsfm/error.hpp"
#include "fft.hpp"

namespace dbsfm {

void WelchConfig::validate() const {
  if (!(fs_hz > 0.0) || !std::isfinite(fs_hz)) throw ValidationError("welch: fs_hz must be positive");
  if (segment_len < 2) throw ValidationError("welch: segment_len must be at least 2");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ValidationError("welch: overlap must lie in [0, 1)");
  if (!(log_floor > 0.0) || !std::isfinite(log_floor))
    throw ValidationError("welch: log_floor must be positive");
  if (step() == 0) throw ValidationError("welch: overlap leaves a zero segment step");
}

std::size_t WelchConfig::step() const {
  const auto overlap_samples = static_cast<std::size_t>(std::floor(overlap * static_cast<double>(segment_len)));
  return segment_len - overlap_samples;
}

std::vector<double> taper_window(Taper taper, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (taper == Taper::kHann) {
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

PsdEstimate welch_psd(std::span<const double> signal, const WelchConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.segment_len;
  if (signal.size() < n) {
    throw LengthError("welch: signal has " + std::to_string(signal.size()) +
                      " samples, fewer than one segment of " + std::to_string(n));
  }
  for (double x : signal) {
    if (!std::isfinite(x)) throw ValidationError("welch: signal contains non-finite samples");
  }

  const std::vector<double> window = taper_window(cfg.taper, n);
  double window_power = 0.0;
  for (double w : window) window_power += w * w;

  const std::size_t step = cfg.step();
  const std::size_t n_segments = (signal.size() - n) / step + 1;
  const std::size_t n_bins = cfg.n_bins();

  PsdEstimate out;
  out.freqs.resize(n_bins);
  out.power.assign(n_bins, 0.0);
  for (std::size_t k = 0; k < n_bins; ++k) out.freqs[k] = static_cast<double>(k) * cfg.fs_hz / static_cast<double>(n);

  std::vector<double> segment(n);
  std::vector<std::complex<double>> spectrum;
  for (std::size_t s = 0; s < n_segments; ++s) {
    const auto chunk = signal.subspan(s * step, n);
    double mean = 0.0;
    for (double x : chunk) mean += x;
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) segment[i] = (chunk[i] - mean) * window[i];
    detail::rfft(segment, spectrum);
    for (std::size_t k = 0; k < n_bins; ++k) out.power[k] += std::norm(spectrum[k]);
  }

  const double scale = 1.0 / (cfg.fs_hz * window_power * static_cast<double>(n_segments));
  for (std::size_t k = 0; k < n_bins; ++k) {
    const bool unpaired = (k == 0) || (n % 2 == 0 && k == n / 2);
    out.power[k] *= unpaired ? scale : 2.0 * scale;
  }
  return out;
}

PsdEstimate welch_psd(std::span<const float> signal, const WelchConfig& cfg) {
  std::vector<double> widened(signal.begin(), signal.end());
  return welch_psd(std::span<const double>(widened), cfg);
}

std::vector<double> log_power(const PsdEstimate& psd, double log_floor) {
  if (std::isnan(log_floor) || log_floor < 0.0 || std::isinf(log_floor))
    throw ValidationError("log_power: floor must be a finite non-negative value");
  const double floor = std::max(log_floor, kMinLogFloor);
  std::vector<double> out(psd.power.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (psd.power[i] < 0.0 || !std::isfinite(psd.power[i]))
      throw ValidationError("log_power: power must be finite and non-negative");
    out[i] = std::log10(psd.power[i] + floor);
  }
  return out;
}

}  // namespace dbsfm
