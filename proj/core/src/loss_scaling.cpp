#include "dbsfm/loss_scaling.hpp"

#include <cmath>
#include <string>

#include "dbsfm/error.hpp"

namespace dbsfm {

void AperiodicModel::validate(double nyquist_hz) const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ValidationError("aperiodic model: beta must be >= 0");
  if (!std::isfinite(offset)) throw ValidationError("aperiodic model: offset must be finite");
  for (const auto& peak : peaks) {
    if (!(peak.width_hz > 0.0)) throw ValidationError("aperiodic model: peak width must be positive");
    if (!(peak.center_hz > 0.0 && peak.center_hz < nyquist_hz))
      throw ValidationError("aperiodic model: peak center " + std::to_string(peak.center_hz) +
                            " Hz outside (0, nyquist)");
    if (!std::isfinite(peak.height_log10)) throw ValidationError("aperiodic model: peak height must be finite");
  }
}

std::vector<double> ScalingVector::extended() const {
  std::vector<double> out = k;
  out.push_back(hour_weight);
  return out;
}

std::vector<double> synth_log_psd(const AperiodicModel& model, std::span<const double> freqs) {
  std::vector<double> out(freqs.size());
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    const double f = freqs[i];
    double value = model.offset - model.beta * std::log10(f);
    for (const auto& peak : model.peaks) {
      const double d = f - peak.center_hz;
      value += peak.height_log10 * std::exp(-(d * d) / (2.0 * peak.width_hz * peak.width_hz));
    }
    out[i] = value;
  }
  return out;
}

MeanLogProfile mean_log_profile(const Matrix& spectra) {
  if (spectra.rows() == 0 || spectra.cols() == 0) throw ValidationError("mean_log_profile: empty spectra matrix");
  if (!spectra.allFinite()) throw ValidationError("mean_log_profile: non-finite spectra");
  MeanLogProfile out;
  const Vector mean = spectra.colwise().mean().transpose();
  out.p.assign(mean.data(), mean.data() + mean.size());
  return out;
}

namespace {

void require_unit_or_above(std::span<const double> freqs) {
  for (double f : freqs) {
    if (!(f >= 1.0)) throw DomainError("frequency " + std::to_string(f) + " Hz is below 1 Hz; log10 weight undefined");
  }
}

}  // namespace

ScalingVector scaling_vector(const MeanLogProfile& p, std::span<const double> freqs, double hour_weight) {
  require_unit_or_above(freqs);
  if (p.p.empty()) throw ValidationError("scaling_vector: empty mean profile");
  double mean_p = 0.0;
  for (double v : p.p) mean_p += v;
  mean_p /= static_cast<double>(p.p.size());

  ScalingVector out;
  out.freqs.assign(freqs.begin(), freqs.end());
  out.k.resize(freqs.size());
  for (std::size_t i = 0; i < freqs.size(); ++i) out.k[i] = std::log10(freqs[i]) + mean_p;
  out.hour_weight = hour_weight;
  return out;
}

double alignment_residual(const MeanLogProfile& p, std::span<const double> freqs) {
  require_unit_or_above(freqs);
  if (p.p.size() != freqs.size()) throw ValidationError("alignment_residual: profile and frequency grid differ in length");
  const std::size_t n = freqs.size();
  if (n == 0) return 0.0;
  std::vector<double> sum(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum[i] = std::log10(freqs[i]) + p.p[i];
    mean += sum[i];
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : sum) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(n));
}

double scaled_masked_mae(const Matrix& target, const Matrix& prediction, std::span<const double> weights,
                         std::span<const std::size_t> masked_rows) {
  if (masked_rows.empty()) throw ValidationError("scaled_masked_mae: mask is empty");
  if (target.rows() != prediction.rows() || target.cols() != prediction.cols())
    throw ValidationError("scaled_masked_mae: target and prediction shapes differ");
  if (static_cast<Eigen::Index>(weights.size()) != target.cols())
    throw ValidationError("scaled_masked_mae: weight vector length " + std::to_string(weights.size()) +
                          " does not match feature count " + std::to_string(target.cols()));
  double total = 0.0;
  for (std::size_t row : masked_rows) {
    if (static_cast<Eigen::Index>(row) >= target.rows()) throw ValidationError("scaled_masked_mae: mask index out of range");
    for (Eigen::Index j = 0; j < target.cols(); ++j)
      total += std::abs(weights[static_cast<std::size_t>(j)] * (target(row, j) - prediction(row, j)));
  }
  return total / static_cast<double>(masked_rows.size() * static_cast<std::size_t>(target.cols()));
}

double scaled_masked_mae(const Matrix& target, const Matrix& prediction, const ScalingVector& k,
                         std::span<const std::size_t> masked_rows) {
  const std::vector<double> weights = k.extended();
  return scaled_masked_mae(target, prediction, weights, masked_rows);
}

std::vector<double> frequency_grid(double lo_hz, double hi_hz, double step_hz) {
  std::vector<double> out;
  for (std::size_t i = 0;; ++i) {
    const double f = lo_hz + static_cast<double>(i) * step_hz;
    if (f > hi_hz + 1e-9 * step_hz) break;
    out.push_back(f);
  }
  return out;
}

}  // namespace dbsfm
