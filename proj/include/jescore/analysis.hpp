#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jescore/data.hpp"
#include "jescore/joint_head.hpp"
#include "jescore/tensor.hpp"

namespace jescore::analysis {

/// Dense symmetric denoiser-Jacobian analysis for inputs of up to 4096
/// pixels; larger inputs are rejected in favor of an iterative top-k path.
constexpr int64_t kMaxDenseDim = 4096;

struct JacobianReport {
  std::string input_id;
  double sigma = 0;
  int64_t dim = 0;
  Tensor matrix;                     // [d, d] f64, symmetrized
  double asymmetry = 0;              // |J - J^T|_F / |J|_F before symmetrization
  std::vector<double> eigenvalues;   // sorted by |value|, descending
  Tensor top_vectors;                // [k, d] rows, unit norm
  Tensor bottom_vectors;             // [k, d] rows, unit norm
  double local_linearity = -1;       // residual, -1 when not computed
  bool local_linearity_asserted = false;
};

/// Jacobian of the unconditional denoiser, I + sigma^2 H, with H assembled
/// column by column from central-difference Hessian-vector products of the
/// marginal log-density. Model and input must be double precision.
/// `asymmetry_out` (optional) receives the pre-symmetrization residual.
Tensor denoiser_jacobian(const nn::JointModel& m, const Tensor& y, double sigma,
                         double* asymmetry_out = nullptr);

/// Full eigensystem of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvectors are returned as rows of a [d, d] tensor, paired with the
/// eigenvalues, sorted by magnitude descending. Inputs asymmetric beyond
/// 1e-6 relative Frobenius are rejected.
void eig_symmetric(const Tensor& j, std::vector<double>& eigenvalues, Tensor& eigenvectors);

/// |D(y) - J(y) y| / |D(y)| with J the FD denoiser Jacobian. Exact (up to FD
/// error) for positively homogeneous bias-free models; reported unasserted
/// otherwise.
double local_linearity_residual(const nn::JointModel& m, const Tensor& y, double sigma,
                                const Tensor* jacobian = nullptr);

/// Peak signal-to-noise ratio in dB, peak 255. MSE is averaged per image,
/// each image converted to dB, then averaged over the batch. Zero MSE maps
/// to +infinity.
double psnr(const Tensor& clean, const Tensor& estimate);

JacobianReport make_jacobian_report(const nn::JointModel& m, const Tensor& y, double sigma,
                                    int64_t k, const std::string& input_id);

/// Writes <stem>.json plus raw little-endian f64 blobs for the matrix,
/// spectrum, and top/bottom eigenvector rows.
void save_report(const JacobianReport& r, const std::filesystem::path& dir,
                 const std::string& stem);

}  // namespace jescore::analysis
