#include "jescore/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>

#include "json.hpp"

#include "jescore/errors.hpp"

namespace jescore::gmm {

using ordered_json = nlohmann::ordered_json;

void GmmSpec::validate() const {
  if (priors.empty() || priors.size() != means.size() || priors.size() != taus.size())
    throw ConfigError("gmm: priors, means and taus must have equal nonzero length");
  double sum = 0;
  for (double p : priors) {
    if (p < 0) throw ConfigError("gmm: priors must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("gmm: priors must sum to 1");
  for (double t : taus)
    if (!(t > 0)) throw ConfigError("gmm: taus must be positive");
  if (image_shape.size() != 3) throw ConfigError("gmm: image_shape must be {C,H,W}");
  for (const Tensor& m : means)
    if (m.shape() != image_shape) throw ConfigError("gmm: mean shape mismatch");
}

GmmSpec make_cosine_spec(int classes, Shape image_shape, double amplitude, double offset,
                         double tau) {
  if (classes < 1) throw ConfigError("gmm: at least one class required");
  GmmSpec g;
  g.image_shape = image_shape;
  const int64_t c = image_shape.at(0), h = image_shape.at(1), w = image_shape.at(2);
  for (int cls = 0; cls < classes; ++cls) {
    Tensor mean = Tensor::zeros(image_shape, DType::f64);
    const double phase = std::numbers::pi * static_cast<double>(cls);
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          double arg = 2.0 * std::numbers::pi *
                           (static_cast<double>(x) + static_cast<double>(y)) /
                           static_cast<double>(w + h) +
                       phase;
          mean.set((ci * h + y) * w + x, offset + amplitude * std::cos(arg));
        }
    g.means.push_back(std::move(mean));
    g.priors.push_back(1.0 / classes);
    g.taus.push_back(tau);
  }
  // Exact unit sum regardless of the division above.
  double sum = 0;
  for (double p : g.priors) sum += p;
  for (double& p : g.priors) p /= sum;
  g.validate();
  return g;
}

data::Dataset gmm_sample(const GmmSpec& g, int64_t n, Rng& rng) {
  g.validate();
  if (n < 1) throw UsageError("gmm_sample: n must be positive");
  const int64_t d = g.dim();
  Tensor images = Tensor::zeros({n, g.image_shape[0], g.image_shape[1], g.image_shape[2]},
                                DType::f32);
  std::vector<uint16_t> labels(static_cast<size_t>(n));
  auto px = images.data<float>();
  for (int64_t i = 0; i < n; ++i) {
    double u = rng.uniform01();
    int cls = 0;
    double acc = 0;
    for (int c = 0; c < g.classes(); ++c) {
      acc += g.priors[static_cast<size_t>(c)];
      if (u < acc) {
        cls = c;
        break;
      }
      cls = c;
    }
    labels[static_cast<size_t>(i)] = static_cast<uint16_t>(cls + 1);
    const auto mu = g.means[static_cast<size_t>(cls)].data<double>();
    const double tau = g.taus[static_cast<size_t>(cls)];
    for (int64_t j = 0; j < d; ++j)
      px[static_cast<size_t>(i * d + j)] =
          static_cast<float>(mu[static_cast<size_t>(j)] + tau * rng.normal());
  }
  return data::Dataset{data::ImageBatch{std::move(images), std::move(labels)}, g.classes()};
}

namespace {

Tensor as_f64_flat(const GmmSpec& g, const Tensor& y) {
  if (y.numel() != g.dim()) throw UsageError("gmm: input has wrong element count");
  Tensor out = y.dtype() == DType::f64 ? y.clone() : y.astype(DType::f64);
  return out.reshaped({g.dim()});
}

/// Per-class log pi_c + log N(y; mu_c, (tau_c^2 + sigma^2) I).
std::vector<double> component_logs(const GmmSpec& g, std::span<const double> y, double sigma) {
  const int64_t d = g.dim();
  std::vector<double> out(static_cast<size_t>(g.classes()));
  for (int c = 0; c < g.classes(); ++c) {
    const double var = g.taus[static_cast<size_t>(c)] * g.taus[static_cast<size_t>(c)] +
                       sigma * sigma;
    const auto mu = g.means[static_cast<size_t>(c)].data<double>();
    double sq = 0;
    for (int64_t j = 0; j < d; ++j) {
      const double dlt = y[static_cast<size_t>(j)] - mu[static_cast<size_t>(j)];
      sq += dlt * dlt;
    }
    const double prior = g.priors[static_cast<size_t>(c)];
    out[static_cast<size_t>(c)] =
        (prior > 0 ? std::log(prior) : -std::numeric_limits<double>::infinity()) -
        0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * var) -
        0.5 * sq / var;
  }
  return out;
}

double logsumexp(std::span<const double> v) {
  double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> responsibilities(const GmmSpec& g, std::span<const double> y, double sigma) {
  std::vector<double> logs = component_logs(g, y, sigma);
  const double lse = logsumexp(logs);
  std::vector<double> r(logs.size());
  for (size_t c = 0; c < logs.size(); ++c) r[c] = std::exp(logs[c] - lse);
  return r;
}

}  // namespace

double log_density_noisy(const GmmSpec& g, const Tensor& y, double sigma) {
  g.validate();
  if (sigma < 0) throw UsageError("gmm: sigma must be >= 0");
  Tensor yf = as_f64_flat(g, y);
  std::vector<double> logs = component_logs(g, yf.data<double>(), sigma);
  return logsumexp(logs);
}

std::vector<double> log_class_posterior(const GmmSpec& g, const Tensor& y, double sigma) {
  g.validate();
  if (sigma < 0) throw UsageError("gmm: sigma must be >= 0");
  Tensor yf = as_f64_flat(g, y);
  std::vector<double> logs = component_logs(g, yf.data<double>(), sigma);
  const double lse = logsumexp(logs);
  for (double& v : logs) v -= lse;
  return logs;
}

Tensor score_noisy(const GmmSpec& g, const Tensor& y, double sigma) {
  g.validate();
  if (!(sigma > 0)) throw UsageError("gmm score: sigma must be positive");
  Tensor yf = as_f64_flat(g, y);
  auto yv = yf.data<double>();
  std::vector<double> r = responsibilities(g, yv, sigma);
  Tensor out = Tensor::zeros(y.shape(), DType::f64);
  const int64_t d = g.dim();
  for (int c = 0; c < g.classes(); ++c) {
    const double var = g.taus[static_cast<size_t>(c)] * g.taus[static_cast<size_t>(c)] +
                       sigma * sigma;
    const auto mu = g.means[static_cast<size_t>(c)].data<double>();
    const double w = r[static_cast<size_t>(c)] / var;
    for (int64_t j = 0; j < d; ++j)
      out.set(j, out.at(j) + w * (mu[static_cast<size_t>(j)] - yv[static_cast<size_t>(j)]));
  }
  return out;
}

Tensor posterior_mean(const GmmSpec& g, const Tensor& y, double sigma) {
  g.validate();
  if (!(sigma > 0)) throw UsageError("gmm posterior mean: sigma must be positive");
  Tensor yf = as_f64_flat(g, y);
  auto yv = yf.data<double>();
  std::vector<double> r = responsibilities(g, yv, sigma);
  Tensor out = Tensor::zeros(y.shape(), DType::f64);
  const int64_t d = g.dim();
  for (int c = 0; c < g.classes(); ++c) {
    const double tau2 = g.taus[static_cast<size_t>(c)] * g.taus[static_cast<size_t>(c)];
    const double shrink = tau2 / (tau2 + sigma * sigma);
    const auto mu = g.means[static_cast<size_t>(c)].data<double>();
    const double w = r[static_cast<size_t>(c)];
    for (int64_t j = 0; j < d; ++j) {
      const double m = mu[static_cast<size_t>(j)];
      out.set(j, out.at(j) + w * (m + shrink * (yv[static_cast<size_t>(j)] - m)));
    }
  }
  return out;
}

Tensor posterior_mean_cond(const GmmSpec& g, const Tensor& y, int class1, double sigma) {
  g.validate();
  if (!(sigma > 0)) throw UsageError("gmm posterior mean: sigma must be positive");
  if (class1 < 1 || class1 > g.classes()) throw UsageError("gmm: class out of range");
  Tensor yf = as_f64_flat(g, y);
  auto yv = yf.data<double>();
  const size_t c = static_cast<size_t>(class1 - 1);
  const double tau2 = g.taus[c] * g.taus[c];
  const double shrink = tau2 / (tau2 + sigma * sigma);
  const auto mu = g.means[c].data<double>();
  Tensor out = Tensor::zeros(y.shape(), DType::f64);
  for (int64_t j = 0; j < g.dim(); ++j) {
    const double m = mu[static_cast<size_t>(j)];
    out.set(j, m + shrink * (yv[static_cast<size_t>(j)] - m));
  }
  return out;
}

int bayes_class(const GmmSpec& g, const Tensor& x) {
  std::vector<double> lp = log_class_posterior(g, x, 0.0);
  return static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin()) + 1;
}

double bayes_accuracy(const GmmSpec& g, int64_t mc_n, Rng& rng) {
  data::Dataset ds = gmm_sample(g, mc_n, rng);
  const int64_t d = g.dim();
  int64_t correct = 0;
  for (int64_t i = 0; i < mc_n; ++i) {
    Tensor x = Tensor::zeros({d}, DType::f64);
    for (int64_t j = 0; j < d; ++j)
      x.set(j, static_cast<double>(ds.batch.images.data<float>()[static_cast<size_t>(i * d + j)]));
    if (bayes_class(g, x) == ds.batch.labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(mc_n);
}

Tensor posterior_mean_batch(const GmmSpec& g, const Tensor& noisy, double sigma) {
  if (noisy.rank() != 4) throw UsageError("posterior_mean_batch: NCHW input required");
  const int64_t n = noisy.dim(0);
  const int64_t d = g.dim();
  if (noisy.numel() / n != d) throw UsageError("posterior_mean_batch: sample size mismatch");
  Tensor out = Tensor::zeros(noisy.shape(), DType::f64);
  for (int64_t i = 0; i < n; ++i) {
    Tensor y = Tensor::zeros({d}, DType::f64);
    for (int64_t j = 0; j < d; ++j) y.set(j, noisy.at(i * d + j));
    Tensor pm = posterior_mean(g, y, sigma);
    for (int64_t j = 0; j < d; ++j) out.set(i * d + j, pm.at(j));
  }
  return out;
}

void save_spec(const GmmSpec& g, const std::filesystem::path& path) {
  g.validate();
  ordered_json j;
  j["format"] = "jescore-gmm";
  j["version"] = 1;
  j["image_shape"] = g.image_shape;
  j["priors"] = g.priors;
  j["taus"] = g.taus;
  ordered_json means = ordered_json::array();
  for (const Tensor& m : g.means) {
    auto v = m.data<double>();
    means.push_back(std::vector<double>(v.begin(), v.end()));
  }
  j["means"] = std::move(means);
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f << j.dump(2) << "\n";
}

GmmSpec load_spec(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open: " + path.string());
  ordered_json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw DataError(std::string("gmm spec parse error: ") + e.what());
  }
  if (j.value("format", "") != "jescore-gmm") throw DataError("gmm spec: unknown format");
  GmmSpec g;
  g.image_shape = j.at("image_shape").get<Shape>();
  g.priors = j.at("priors").get<std::vector<double>>();
  g.taus = j.at("taus").get<std::vector<double>>();
  for (const auto& m : j.at("means")) {
    auto vals = m.get<std::vector<double>>();
    g.means.push_back(Tensor::from_f64(g.image_shape, vals));
  }
  g.validate();
  return g;
}

}  // namespace jescore::gmm
