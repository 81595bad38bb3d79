#include "dbsfm/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <random>

#include "dbsfm/error.hpp"
#include "fft.hpp"

namespace dbsfm {

namespace {

void check_band(double lo, double hi, double nyquist, const char* what) {
  if (!(lo > 0.0 && hi > lo && hi < nyquist))
    throw ValidationError(std::string("subject spec: ") + what + " band must satisfy 0 < lo < hi < nyquist");
}

bool in_band(double f, double lo, double hi) { return f >= lo && f <= hi; }

const std::vector<double>& default_grid() {
  static const std::vector<double> grid = frequency_grid(1.0, 124.0);
  return grid;
}

}  // namespace

void SubjectSpec::validate() const {
  if (!(fs_hz > 0.0)) throw ValidationError("subject spec: fs_hz must be positive");
  const double nyquist = fs_hz / 2.0;
  spectrum.validate(nyquist);
  check_band(circadian.band_lo_hz, circadian.band_hi_hz, nyquist, "circadian");
  if (!(circadian.depth >= 0.0 && circadian.depth < 1.0)) throw ValidationError("subject spec: depth must lie in [0, 1)");
  if (!std::isfinite(circadian.acrophase_hour)) throw ValidationError("subject spec: acrophase must be finite");
  for (const auto& lm : labels) {
    check_band(lm.band_lo_hz, lm.band_hi_hz, nyquist, "label");
    if (!(lm.noise_sd >= 0.0) || !(lm.driver_sd >= 0.0)) throw ValidationError("subject spec: noise and driver sd must be >= 0");
    if (!std::isfinite(lm.gain)) throw ValidationError("subject spec: gain must be finite");
  }
  if (window_s <= 0) throw ValidationError("subject spec: window_s must be positive");
  if (n_windows() == 0) throw ValidationError("subject spec: recording shorter than one window");
  if (window_samples() % 2 != 0) throw ValidationError("subject spec: window sample count must be even");
}

std::size_t SubjectSpec::n_windows() const {
  if (!(days > 0.0)) return 0;
  return static_cast<std::size_t>(std::floor(days * 86400.0 / static_cast<double>(window_s) + 1e-9));
}

std::size_t SubjectSpec::window_samples() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(window_s) * fs_hz));
}

std::vector<double> synth_segment(std::span<const double> target_log_psd, std::span<const double> freqs,
                                  std::size_t n_samples, double fs_hz, Rng& rng) {
  if (target_log_psd.size() != freqs.size() || freqs.empty())
    throw ValidationError("synth_segment: target and frequency grid differ in length");
  if (n_samples == 0 || n_samples % 2 != 0) throw ValidationError("synth_segment: n_samples must be even and positive");
  for (double v : target_log_psd) {
    if (!std::isfinite(v)) throw ValidationError("synth_segment: non-finite target");
  }

  const std::size_t n_bins = n_samples / 2 + 1;
  const double df = fs_hz / static_cast<double>(n_samples);
  const double scale = static_cast<double>(n_samples) * fs_hz / 2.0;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  std::vector<std::complex<double>> bins(n_bins);
  std::size_t j = 0;
  for (std::size_t b = 1; b < n_bins; ++b) {
    const double f = static_cast<double>(b) * df;
    double logp;
    if (f <= freqs.front()) {
      logp = target_log_psd.front();
    } else if (f >= freqs.back()) {
      logp = target_log_psd.back();
    } else {
      while (freqs[j + 1] < f) ++j;
      const double t = (f - freqs[j]) / (freqs[j + 1] - freqs[j]);
      logp = target_log_psd[j] + t * (target_log_psd[j + 1] - target_log_psd[j]);
    }
    // One-sided density S maps to |X|^2 = S * N * fs / 2; the Nyquist bin is
    // its own mirror and carries twice that.
    double power = std::pow(10.0, logp) * scale;
    if (b == n_bins - 1) power *= 2.0;
    const double theta = phase(rng);
    const double amp = std::sqrt(power);
    bins[b] = (b == n_bins - 1) ? std::complex<double>(amp * std::cos(theta), 0.0) : std::polar(amp, theta);
  }

  std::vector<double> out;
  detail::irfft(bins, n_samples, out);
  const double inv_n = 1.0 / static_cast<double>(n_samples);
  for (double& x : out) x *= inv_n;
  return out;
}

std::vector<double> synth_segment(std::span<const double> target_log_psd, std::size_t n_samples, Rng& rng) {
  return synth_segment(target_log_psd, default_grid(), n_samples, 250.0, rng);
}

double local_hour(std::int64_t t_unix_s, std::int64_t timezone_offset_s) {
  constexpr std::int64_t kDay = 86400;
  std::int64_t local = (t_unix_s + timezone_offset_s) % kDay;
  if (local < 0) local += kDay;
  return static_cast<double>(local) / 3600.0;
}

namespace {

struct WindowPlan {
  std::vector<AperiodicModel> models;  // per window
  std::vector<SymptomScores> band_power;
  LabelStream labels;
};

double band_mean(std::span<const double> logpsd, std::span<const double> freqs, double lo, double hi) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    if (in_band(freqs[i], lo, hi)) {
      sum += logpsd[i];
      ++n;
    }
  }
  if (n == 0) throw ValidationError("subject spec: band contains no frequency bin");
  return sum / static_cast<double>(n);
}

WindowPlan plan_windows(const SubjectSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_windows();
  const auto& grid = default_grid();

  Rng driver_rng(derive_seed(spec.seed, "driver"));
  Rng noise_rng(derive_seed(spec.seed, "label-noise"));
  std::normal_distribution<double> normal(0.0, 1.0);

  WindowPlan plan;
  plan.models.reserve(n);
  plan.band_power.reserve(n);
  for (std::size_t w = 0; w < n; ++w) {
    const std::int64_t t = spec.start_unix_s + static_cast<std::int64_t>(w) * spec.window_s;
    const double h = local_hour(t, spec.timezone_offset_s);
    const double circ = 1.0 + spec.circadian.depth * std::cos(2.0 * std::numbers::pi * (h - spec.circadian.acrophase_hour) / 24.0);

    std::array<double, kNumSymptoms> z{};
    for (auto& v : z) v = normal(driver_rng);

    AperiodicModel model = spec.spectrum;
    for (auto& peak : model.peaks) {
      if (in_band(peak.center_hz, spec.circadian.band_lo_hz, spec.circadian.band_hi_hz)) peak.height_log10 *= circ;
      for (std::size_t s = 0; s < kNumSymptoms; ++s) {
        const auto& lm = spec.labels[s];
        if (in_band(peak.center_hz, lm.band_lo_hz, lm.band_hi_hz)) peak.height_log10 += lm.driver_sd * z[s];
      }
    }
    const std::vector<double> logpsd = synth_log_psd(model, grid);
    SymptomScores bp{};
    for (std::size_t s = 0; s < kNumSymptoms; ++s)
      bp[s] = band_mean(logpsd, grid, spec.labels[s].band_lo_hz, spec.labels[s].band_hi_hz);
    plan.models.push_back(std::move(model));
    plan.band_power.push_back(bp);
  }

  // Standardize per subject, then add label noise.
  std::array<double, kNumSymptoms> mean{}, sd{};
  for (std::size_t s = 0; s < kNumSymptoms; ++s) {
    double m = 0.0;
    for (const auto& bp : plan.band_power) m += bp[s];
    m /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& bp : plan.band_power) var += (bp[s] - m) * (bp[s] - m);
    mean[s] = m;
    sd[s] = std::sqrt(var / static_cast<double>(n));
  }
  plan.labels.reserve(n);
  for (std::size_t w = 0; w < n; ++w) {
    LabelSample label;
    label.t_unix_s = static_cast<double>(spec.start_unix_s + static_cast<std::int64_t>(w) * spec.window_s);
    for (std::size_t s = 0; s < kNumSymptoms; ++s) {
      const double zscore = sd[s] > 1e-12 * std::max(1.0, std::abs(mean[s])) ? (plan.band_power[w][s] - mean[s]) / sd[s] : 0.0;
      label.scores[s] = spec.labels[s].gain * zscore + spec.labels[s].noise_sd * normal(noise_rng);
    }
    plan.labels.push_back(label);
  }
  return plan;
}

}  // namespace

SynthSubject synth_subject_labels(const SubjectSpec& spec) {
  WindowPlan plan = plan_windows(spec);
  SynthSubject out;
  out.recording.subject_id = spec.subject_id;
  out.recording.fs_hz = spec.fs_hz;
  out.recording.start_unix_s = spec.start_unix_s;
  out.recording.timezone_offset_s = spec.timezone_offset_s;
  out.labels = std::move(plan.labels);
  out.band_power = std::move(plan.band_power);
  return out;
}

SynthSubject synth_subject(const SubjectSpec& spec) {
  WindowPlan plan = plan_windows(spec);
  const auto& grid = default_grid();
  const std::size_t win = spec.window_samples();

  SynthSubject out;
  out.recording.subject_id = spec.subject_id;
  out.recording.fs_hz = spec.fs_hz;
  out.recording.start_unix_s = spec.start_unix_s;
  out.recording.timezone_offset_s = spec.timezone_offset_s;
  out.recording.samples.resize(plan.models.size() * win);

  const std::uint64_t phase_seed = derive_seed(spec.seed, "phase");
  for (std::size_t w = 0; w < plan.models.size(); ++w) {
    Rng rng(derive_seed(phase_seed, w));
    const std::vector<double> target = synth_log_psd(plan.models[w], grid);
    const std::vector<double> seg = synth_segment(target, grid, win, spec.fs_hz, rng);
    std::transform(seg.begin(), seg.end(), out.recording.samples.begin() + static_cast<std::ptrdiff_t>(w * win),
                   [](double x) { return static_cast<float>(x); });
  }
  out.labels = std::move(plan.labels);
  out.band_power = std::move(plan.band_power);
  return out;
}

std::vector<SubjectSpec> default_cohort_specs(std::size_t n_subjects, double days, std::uint64_t master_seed) {
  if (n_subjects < 2) throw ValidationError("default cohort needs at least 2 subjects");
  std::vector<SubjectSpec> specs;
  specs.reserve(n_subjects);
  for (std::size_t i = 0; i < n_subjects; ++i) {
    Rng rng(derive_seed(derive_seed(master_seed, "subject"), i));
    auto u = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    SubjectSpec s;
    char id[24];
    std::snprintf(id, sizeof(id), "S%02zu", i + 1);
    s.subject_id = id;
    s.spectrum.beta = u(1.0, 2.0);
    s.spectrum.offset = u(3.5, 4.5);
    s.spectrum.peaks.push_back({u(18.0, 22.0), u(0.4, 0.6), u(2.0, 3.0)});
    s.spectrum.peaks.push_back({u(62.0, 68.0), u(0.3, 0.5), u(3.0, 4.0)});
    s.circadian = {13.0, 30.0, u(0.2, 0.4), u(10.0, 18.0)};
    s.labels[0] = {13.0, 30.0, 1.0, 0.75, 0.3};
    s.labels[1] = {60.0, 90.0, 1.0, 0.75, 0.3};
    s.days = days;
    s.seed = derive_seed(derive_seed(master_seed, "subject-seed"), i);
    specs.push_back(std::move(s));
  }
  return specs;
}

SynthDataset default_cohort(std::size_t n_subjects, double days, std::uint64_t master_seed) {
  SynthDataset out;
  out.specs = default_cohort_specs(n_subjects, days, master_seed);
  out.subjects.reserve(out.specs.size());
  for (const auto& spec : out.specs) out.subjects.push_back(synth_subject(spec));
  return out;
}

double label_r_ceiling(const LabelModel& model) {
  const double total = std::sqrt(model.gain * model.gain + model.noise_sd * model.noise_sd);
  return total > 0.0 ? model.gain / total : 0.0;
}

}  // namespace dbsfm
