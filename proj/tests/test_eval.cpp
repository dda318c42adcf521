#include <gtest/gtest.h>

#include <cmath>

#include "maskdm/data.hpp"
#include "maskdm/errors.hpp"
#include "maskdm/eval.hpp"
#include "maskdm/rng.hpp"

using namespace maskdm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng rng(seed);
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = rng.normal();
        }
    }
    return m;
}

MatrixXd random_psd(Eigen::Index d, std::uint64_t seed) {
    const MatrixXd a = gaussian_matrix(d, d, seed);
    return a * a.transpose() / static_cast<double>(d);
}

FeatureStats stats(VectorXd mu, MatrixXd sigma) { return FeatureStats{std::move(mu), std::move(sigma), 100}; }

}  // namespace

TEST(GaussianStats, MeanAndUnbiasedCovariance) {
    MatrixXd f(3, 2);
    f << 1, 2, 3, 4, 5, 0;
    const FeatureStats s = gaussian_stats(f);
    EXPECT_EQ(s.n, 3u);
    EXPECT_DOUBLE_EQ(s.mu(0), 3.0);
    EXPECT_DOUBLE_EQ(s.mu(1), 2.0);
    EXPECT_DOUBLE_EQ(s.sigma(0, 0), 4.0);
    EXPECT_DOUBLE_EQ(s.sigma(1, 1), 4.0);
    EXPECT_DOUBLE_EQ(s.sigma(0, 1), -2.0);
    EXPECT_DOUBLE_EQ(s.sigma(1, 0), -2.0);
    EXPECT_THROW(gaussian_stats(MatrixXd::Zero(1, 2)), ContractError);
}

TEST(JacobiEigen, AgreesWithEigenSolver) {
    for (Eigen::Index d : {1, 2, 5, 16}) {
        const MatrixXd s = random_psd(d, 10 + d) - 0.5 * MatrixXd::Identity(d, d);
        const SymmetricEigen e = jacobi_eigen(s);
        EXPECT_LT((e.vectors * e.values.asDiagonal() * e.vectors.transpose() - s).norm(), 1e-9);
        EXPECT_LT((e.vectors.transpose() * e.vectors - MatrixXd::Identity(d, d)).norm(), 1e-9);
        VectorXd mine = e.values;
        std::sort(mine.data(), mine.data() + d);
        const VectorXd ref = Eigen::SelfAdjointEigenSolver<MatrixXd>(s).eigenvalues();
        EXPECT_LT((mine - ref).norm(), 1e-9) << d;
    }
}

TEST(MatrixSqrt, DiagonalExample) {
    MatrixXd s = MatrixXd::Zero(2, 2);
    s(0, 0) = 4, s(1, 1) = 9;
    const MatrixXd r = matrix_sqrt_psd(s);
    EXPECT_NEAR(r(0, 0), 2.0, 1e-12);
    EXPECT_NEAR(r(1, 1), 3.0, 1e-12);
    EXPECT_NEAR(r(0, 1), 0.0, 1e-12);
}

TEST(MatrixSqrt, SquaresBackAndStaysSymmetric) {
    const MatrixXd s = random_psd(12, 3);
    const MatrixXd r = matrix_sqrt_psd(s);
    EXPECT_LT((r * r - s).norm(), 1e-9 * s.norm());
    EXPECT_LT((r - r.transpose()).norm(), 1e-12);
}

TEST(MatrixSqrt, ClampsNegativeEigenvaluesAndRejectsAsymmetry) {
    MatrixXd s = MatrixXd::Zero(2, 2);
    s(0, 0) = 1, s(1, 1) = -1e-12;
    EXPECT_NEAR(matrix_sqrt_psd(s)(1, 1), 0.0, 1e-15);
    MatrixXd skew = random_psd(3, 4);
    skew(0, 1) += 1e-3;
    EXPECT_THROW(matrix_sqrt_psd(skew), ContractError);
}

TEST(FrechetDistance, IdenticalStatsGiveZero) {
    const FeatureStats a = stats(VectorXd::Constant(6, 0.3), random_psd(6, 5));
    EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-9);
    EXPECT_GE(frechet_distance(a, a), 0.0);
}

TEST(FrechetDistance, OneDimensionalClosedForm) {
    const FeatureStats a = stats(VectorXd::Constant(1, 1.0), MatrixXd::Constant(1, 1, 4.0));
    const FeatureStats b = stats(VectorXd::Constant(1, -0.5), MatrixXd::Constant(1, 1, 1.0));
    // (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2
    EXPECT_NEAR(frechet_distance(a, b), 2.25 + 1.0, 1e-12);
}

TEST(FrechetDistance, DiagonalClosedForm) {
    VectorXd da(3), db(3);
    da << 1, 4, 9;
    db << 4, 4, 1;
    const FeatureStats a = stats(VectorXd::Zero(3), da.asDiagonal());
    const FeatureStats b = stats(VectorXd::Ones(3), db.asDiagonal());
    EXPECT_NEAR(frechet_distance(a, b), 3.0 + 1.0 + 0.0 + 4.0, 1e-10);
}

TEST(FrechetDistance, SymmetricAndOrthogonallyInvariant) {
    const Eigen::Index d = 8;
    const FeatureStats a = stats(gaussian_matrix(d, 1, 1).col(0), random_psd(d, 2));
    const FeatureStats b = stats(gaussian_matrix(d, 1, 3).col(0), random_psd(d, 4));
    const double fd = frechet_distance(a, b);
    EXPECT_NEAR(frechet_distance(b, a), fd, 1e-9 * fd);
    const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(gaussian_matrix(d, d, 5)).householderQ();
    const FeatureStats ra = stats(q * a.mu, q * a.sigma * q.transpose());
    const FeatureStats rb = stats(q * b.mu, q * b.sigma * q.transpose());
    EXPECT_NEAR(frechet_distance(ra, rb), fd, 1e-8 * fd);
}

TEST(EnergyDistance, HandExampleAndZeroOnSelf) {
    MatrixXd a(2, 1), b(2, 1);
    a << 0, 2;
    b << 1, 1;
    // 2 * 1 - (0 + 2 + 2 + 0) / 4 - 0
    EXPECT_NEAR(energy_distance(a, b), 1.0, 1e-15);
    const MatrixXd x = gaussian_matrix(20, 3, 6);
    EXPECT_NEAR(energy_distance(x, x), 0.0, 1e-12);
    EXPECT_GT(energy_distance(x, gaussian_matrix(20, 3, 7)), 0.0);
    EXPECT_THROW(energy_distance(a, MatrixXd::Zero(2, 2)), ContractError);
}

TEST(PixelFeatures, SeedZeroKeepsLeadingPixels) {
    compute::Tensor<float> images({2, 1, 2, 2}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
    const MatrixXd f = pixel_features(images, 3, 0);
    ASSERT_EQ(f.rows(), 2);
    ASSERT_EQ(f.cols(), 3);
    EXPECT_EQ(f(1, 0), 5.0);
    EXPECT_EQ(f(1, 2), 7.0);
    EXPECT_THROW(pixel_features(images, 5, 0), ContractError);
    EXPECT_THROW(pixel_features(images, 0, 1), ContractError);
}

// A full-rank seeded projection is orthogonal, so it preserves row norms.
TEST(PixelFeatures, SeededProjectionIsOrthonormal) {
    Rng rng(8);
    compute::Tensor<float> images({6, 1, 4, 4});
    for (float& v : images.data()) {
        v = static_cast<float>(rng.uniform() * 2 - 1);
    }
    const MatrixXd raw = pixel_features(images, 16, 0);
    const MatrixXd rotated = pixel_features(images, 16, 42);
    EXPECT_EQ(rotated, pixel_features(images, 16, 42));
    EXPECT_NE(rotated, pixel_features(images, 16, 43));
    for (Eigen::Index i = 0; i < 6; ++i) {
        EXPECT_NEAR(rotated.row(i).norm(), raw.row(i).norm(), 1e-5);
    }
    const MatrixXd thin = pixel_features(images, 5, 42);
    for (Eigen::Index i = 0; i < 6; ++i) {
        EXPECT_LE(thin.row(i).norm(), raw.row(i).norm() + 1e-6);
    }
}

TEST(ExternalFeatures, LoadsAnNByDTensor) {
    const auto path = std::filesystem::temp_directory_path() / "maskdm_test_eval" / "f.mdtn";
    write_raw_tensor(path, compute::Tensor<float>({3, 2}, std::vector<float>{1, 2, 3, 4, 5, 6}));
    const MatrixXd f = load_external_features(path);
    EXPECT_EQ(f.rows(), 3);
    EXPECT_EQ(f(2, 1), 6.0);
    write_raw_tensor(path, compute::Tensor<float>({3, 1, 2}));
    EXPECT_THROW(load_external_features(path), FormatError);
    std::filesystem::remove_all(path.parent_path());
}

// Two draws from one texture class are much closer than draws from different classes.
TEST(FrechetDistance, SeparatesTextureClasses) {
    Rng rng(9);
    std::vector<int> labels;
    const compute::Tensor<float> tex = textures(800, 8, 2, rng, &labels);
    std::vector<std::size_t> first, second;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        (labels[i] == 0 ? first : second).push_back(i);
    }
    const Dataset data = make_dataset(tex, DatasetKind::textures);
    const std::size_t half = first.size() / 2;
    const std::vector<std::size_t> a(first.begin(), first.begin() + static_cast<std::ptrdiff_t>(half));
    const std::vector<std::size_t> b(first.begin() + static_cast<std::ptrdiff_t>(half), first.end());
    const auto fd = [&](const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
        return frechet_distance(gaussian_stats(pixel_features(data.gather(x), 16, 3)),
                                gaussian_stats(pixel_features(data.gather(y), 16, 3)));
    };
    const double same = fd(a, b);
    const double different = fd(a, second);
    EXPECT_GT(different, 3 * same);
}
