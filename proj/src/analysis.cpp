#include "jescore/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "jescore/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace jescore::analysis {

using ordered_json = nlohmann::ordered_json;

namespace {

double frob(const Tensor& m) {
  double s = 0;
  for (int64_t i = 0; i < m.numel(); ++i) s += m.at(i) * m.at(i);
  return std::sqrt(s);
}

Tensor flat_f64(const Tensor& y) {
  Tensor out = y.dtype() == DType::f64 ? y.clone() : y.astype(DType::f64);
  return out.reshaped({y.numel()});
}

}  // namespace

Tensor denoiser_jacobian(const nn::JointModel& m, const Tensor& y, double sigma,
                         double* asymmetry_out) {
  if (m.dtype() != DType::f64 || y.dtype() != DType::f64)
    throw UsageError("denoiser_jacobian: double-precision model and input required");
  if (!(sigma > 0)) throw UsageError("denoiser_jacobian: sigma must be positive");
  const int64_t d = y.numel();
  if (d > kMaxDenseDim)
    throw UsageError("denoiser_jacobian: input dimension " + std::to_string(d) +
                     " exceeds the dense limit " + std::to_string(kMaxDenseDim) +
                     "; use an iterative top-k eigensolver for larger inputs");

  // The model consumes batched NCHW images; wrap the flat point.
  Shape img_shape = y.shape();
  if (img_shape.size() == 3) img_shape.insert(img_shape.begin(), 1);
  if (img_shape.size() != 4 || img_shape[0] != 1)
    throw UsageError("denoiser_jacobian: single image required");

  Tensor hess = Tensor::zeros({d, d}, DType::f64);
  Tensor base = y.clone().reshaped(img_shape);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int64_t col = 0; col < d; ++col) {
    Tensor dir = Tensor::zeros(img_shape, DType::f64);
    dir.set(col, 1.0);
    Tensor column = nn::hvp(
        [&](ad::Tape& t, ad::Var x) {
          nn::JointGraph g = nn::joint_graph_on(t, m, nn::bind_joint(t, m, false), x);
          return ad::sum_all(t, g.log_marginal);
        },
        base, dir);
    for (int64_t r = 0; r < d; ++r) hess.set(r * d + col, column.at(r));
  }

  const double s2 = sigma * sigma;
  Tensor jac = Tensor::zeros({d, d}, DType::f64);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j)
      jac.set(i * d + j, (i == j ? 1.0 : 0.0) + s2 * hess.at(i * d + j));

  double asym_num = 0;
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j) {
      double delta = jac.at(i * d + j) - jac.at(j * d + i);
      asym_num += delta * delta;
    }
  const double asym = std::sqrt(asym_num) / std::max(frob(jac), 1e-300);
  if (asymmetry_out) *asymmetry_out = asym;

  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = i + 1; j < d; ++j) {
      double v = 0.5 * (jac.at(i * d + j) + jac.at(j * d + i));
      jac.set(i * d + j, v);
      jac.set(j * d + i, v);
    }
  return jac;
}

void eig_symmetric(const Tensor& j, std::vector<double>& eigenvalues, Tensor& eigenvectors) {
  if (j.dtype() != DType::f64 || j.rank() != 2 || j.dim(0) != j.dim(1))
    throw UsageError("eig_symmetric: square f64 matrix required");
  const int64_t d = j.dim(0);
  double asym = 0, scale = 0;
  for (int64_t r = 0; r < d; ++r)
    for (int64_t c = 0; c < d; ++c) {
      double delta = j.at(r * d + c) - j.at(c * d + r);
      asym += delta * delta;
      scale += j.at(r * d + c) * j.at(r * d + c);
    }
  if (std::sqrt(asym) > 1e-6 * std::max(std::sqrt(scale), 1e-300))
    throw UsageError("eig_symmetric: matrix is not symmetric");

  Tensor a = j.clone();
  Tensor v = Tensor::zeros({d, d}, DType::f64);
  for (int64_t i = 0; i < d; ++i) v.set(i * d + i, 1.0);

  auto off_norm = [&]() {
    double s = 0;
    for (int64_t r = 0; r < d; ++r)
      for (int64_t c = 0; c < d; ++c)
        if (r != c) s += a.at(r * d + c) * a.at(r * d + c);
    return std::sqrt(s);
  };

  const double stop = 1e-14 * std::max(std::sqrt(scale), 1e-300);
  for (int sweep = 0; sweep < 100 && off_norm() > stop; ++sweep) {
    for (int64_t p = 0; p < d - 1; ++p) {
      for (int64_t q = p + 1; q < d; ++q) {
        const double apq = a.at(p * d + q);
        if (apq == 0.0) continue;
        const double app = a.at(p * d + p), aqq = a.at(q * d + q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int64_t k = 0; k < d; ++k) {
          const double akp = a.at(k * d + p), akq = a.at(k * d + q);
          a.set(k * d + p, c * akp - s * akq);
          a.set(k * d + q, s * akp + c * akq);
        }
        for (int64_t k = 0; k < d; ++k) {
          const double apk = a.at(p * d + k), aqk = a.at(q * d + k);
          a.set(p * d + k, c * apk - s * aqk);
          a.set(q * d + k, s * apk + c * aqk);
        }
        for (int64_t k = 0; k < d; ++k) {
          const double vkp = v.at(k * d + p), vkq = v.at(k * d + q);
          v.set(k * d + p, c * vkp - s * vkq);
          v.set(k * d + q, s * vkp + c * vkq);
        }
      }
    }
  }

  std::vector<int64_t> order(static_cast<size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
    return std::abs(a.at(x * d + x)) > std::abs(a.at(y * d + y));
  });
  eigenvalues.resize(static_cast<size_t>(d));
  eigenvectors = Tensor::zeros({d, d}, DType::f64);
  for (int64_t i = 0; i < d; ++i) {
    eigenvalues[static_cast<size_t>(i)] = a.at(order[static_cast<size_t>(i)] * d +
                                               order[static_cast<size_t>(i)]);
    for (int64_t r = 0; r < d; ++r)
      eigenvectors.set(i * d + r, v.at(r * d + order[static_cast<size_t>(i)]));
  }
}

double local_linearity_residual(const nn::JointModel& m, const Tensor& y, double sigma,
                                const Tensor* jacobian) {
  Tensor flat = flat_f64(y);
  const int64_t d = flat.numel();
  Tensor jac = jacobian ? jacobian->clone() : denoiser_jacobian(m, y, sigma);
  Shape img_shape = y.shape();
  if (img_shape.size() == 3) img_shape.insert(img_shape.begin(), 1);
  Tensor denoised = nn::denoise_uncond(m, y.clone().reshaped(img_shape), sigma);

  double num = 0, den = 0;
  for (int64_t i = 0; i < d; ++i) {
    double jy = 0;
    for (int64_t k = 0; k < d; ++k) jy += jac.at(i * d + k) * flat.at(k);
    const double di = denoised.at(i);
    num += (di - jy) * (di - jy);
    den += di * di;
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

double psnr(const Tensor& clean, const Tensor& estimate) {
  if (clean.shape() != estimate.shape()) throw UsageError("psnr: shape mismatch");
  if (clean.rank() != 4) throw UsageError("psnr: NCHW batch required");
  const int64_t n = clean.dim(0);
  const int64_t per = clean.numel() / n;
  double db_sum = 0;
  for (int64_t i = 0; i < n; ++i) {
    double mse = 0;
    for (int64_t j = 0; j < per; ++j) {
      double delta = clean.at(i * per + j) - estimate.at(i * per + j);
      mse += delta * delta;
    }
    mse /= static_cast<double>(per);
    if (mse == 0) return std::numeric_limits<double>::infinity();
    db_sum += 10.0 * std::log10(255.0 * 255.0 / mse);
  }
  return db_sum / static_cast<double>(n);
}

JacobianReport make_jacobian_report(const nn::JointModel& m, const Tensor& y, double sigma,
                                    int64_t k, const std::string& input_id) {
  JacobianReport r;
  r.input_id = input_id;
  r.sigma = sigma;
  r.dim = y.numel();
  r.matrix = denoiser_jacobian(m, y, sigma, &r.asymmetry);
  Tensor vectors;
  eig_symmetric(r.matrix, r.eigenvalues, vectors);
  const int64_t d = r.dim;
  k = std::min<int64_t>(k, d);
  r.top_vectors = Tensor::zeros({k, d}, DType::f64);
  r.bottom_vectors = Tensor::zeros({k, d}, DType::f64);
  for (int64_t i = 0; i < k; ++i)
    for (int64_t c = 0; c < d; ++c) {
      r.top_vectors.set(i * d + c, vectors.at(i * d + c));
      r.bottom_vectors.set(i * d + c, vectors.at((d - 1 - i) * d + c));
    }
  r.local_linearity = local_linearity_residual(m, y, sigma, &r.matrix);
  r.local_linearity_asserted = m.net.config.homogeneity_eligible();
  return r;
}

namespace {
void write_blob(const std::filesystem::path& p, const Tensor& t) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + p.string());
  f.write(static_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.nbytes()));
}
}  // namespace

void save_report(const JacobianReport& r, const std::filesystem::path& dir,
                 const std::string& stem) {
  std::filesystem::create_directories(dir);
  ordered_json j;
  j["format"] = "jescore-jacobian-report";
  j["version"] = 1;
  j["input_id"] = r.input_id;
  j["sigma"] = r.sigma;
  j["dim"] = r.dim;
  j["asymmetry"] = r.asymmetry;
  j["local_linearity_residual"] = r.local_linearity;
  j["local_linearity_asserted"] = r.local_linearity_asserted;
  j["k"] = r.top_vectors.defined() ? r.top_vectors.dim(0) : 0;
  j["matrix_file"] = stem + ".matrix.f64.bin";
  j["eigenvalues_file"] = stem + ".eigenvalues.f64.bin";
  j["top_vectors_file"] = stem + ".top.f64.bin";
  j["bottom_vectors_file"] = stem + ".bottom.f64.bin";
  j["eigenvalues_preview"] = std::vector<double>(
      r.eigenvalues.begin(),
      r.eigenvalues.begin() + std::min<size_t>(r.eigenvalues.size(), 8));
  std::ofstream f(dir / (stem + ".json"));
  if (!f) throw DataError("cannot open for writing: " + (dir / (stem + ".json")).string());
  f << j.dump(2) << "\n";

  write_blob(dir / (stem + ".matrix.f64.bin"), r.matrix);
  Tensor evals = Tensor::zeros({static_cast<int64_t>(r.eigenvalues.size())}, DType::f64);
  for (size_t i = 0; i < r.eigenvalues.size(); ++i)
    evals.set(static_cast<int64_t>(i), r.eigenvalues[i]);
  write_blob(dir / (stem + ".eigenvalues.f64.bin"), evals);
  write_blob(dir / (stem + ".top.f64.bin"), r.top_vectors);
  write_blob(dir / (stem + ".bottom.f64.bin"), r.bottom_vectors);
}

}  // namespace jescore::analysis
