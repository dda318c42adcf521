#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Dense>

#include "maskdm/compute/tensor.hpp"

namespace maskdm {

// Gaussian summary of a feature set.
struct FeatureStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    std::size_t n = 0;
};

// Sample mean and unbiased covariance of the rows of `features` ([n, d], n >= 2).
FeatureStats gaussian_stats(const Eigen::MatrixXd& features);

struct SymmetricEigen {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;  // columns
};

// Cyclic Jacobi rotations until the off-diagonal Frobenius norm is below `tol`.
SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& s, double tol = 1e-10, int max_sweeps = 100);

// Principal square root of a symmetric PSD matrix; negative eigenvalues are
// clamped to zero. Throws ContractError when |S - S^T| exceeds 1e-8 relative.
Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& s);

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), clamped at 0.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// Flattened images [n, ...] projected to out_dim coordinates. Seed 0 keeps the
// first out_dim pixels; any other seed uses the orthonormal columns of the QR
// factor of a seeded Gaussian matrix, so (seed, shape) fixes the projection.
Eigen::MatrixXd pixel_features(const compute::Tensor<float>& images, std::size_t out_dim, std::uint64_t seed);

// Precomputed features stored as an [n, d] raw tensor file.
Eigen::MatrixXd load_external_features(const std::filesystem::path& path);

// 2 E|a - b| - E|a - a'| - E|b - b'| over all ordered pairs of rows.
double energy_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace maskdm
