#include "maskdm/eval.hpp"

#include <algorithm>
#include <cmath>

#include "maskdm/data.hpp"
#include "maskdm/errors.hpp"
#include "maskdm/rng.hpp"

namespace maskdm {

FeatureStats gaussian_stats(const Eigen::MatrixXd& features) {
    const auto n = features.rows();
    if (n < 2) {
        throw ContractError("gaussian_stats needs at least two rows");
    }
    FeatureStats out;
    out.n = static_cast<std::size_t>(n);
    out.mu = features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = features.rowwise() - out.mu.transpose();
    out.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
    return out;
}

SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& s, double tol, int max_sweeps) {
    if (s.rows() != s.cols()) {
        throw ContractError("jacobi_eigen needs a square matrix");
    }
    const Eigen::Index n = s.rows();
    Eigen::MatrixXd a = s;
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
    auto off_norm = [&] {
        double sum = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i != j) {
                    sum += a(i, j) * a(i, j);
                }
            }
        }
        return std::sqrt(sum);
    };
    for (int sweep = 0; sweep < max_sweeps && off_norm() >= tol; ++sweep) {
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }
    return SymmetricEigen{a.diagonal(), v};
}

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& s) {
    if (s.rows() != s.cols()) {
        throw ContractError("matrix_sqrt_psd needs a square matrix");
    }
    const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
        throw ContractError("matrix_sqrt_psd: matrix is not symmetric");
    }
    const Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
    const SymmetricEigen eig = jacobi_eigen(sym, 1e-10 * scale);
    const Eigen::VectorXd roots = eig.values.cwiseMax(0.0).cwiseSqrt();
    return eig.vectors * roots.asDiagonal() * eig.vectors.transpose();
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    if (a.mu.size() != b.mu.size() || a.sigma.rows() != b.sigma.rows() || a.sigma.rows() != a.mu.size()) {
        throw ContractError("frechet_distance: feature dimensions differ");
    }
    const Eigen::MatrixXd root_a = matrix_sqrt_psd(a.sigma);
    Eigen::MatrixXd inner = root_a * b.sigma * root_a;
    inner = 0.5 * (inner + inner.transpose());
    const double cross = matrix_sqrt_psd(inner).trace();
    const double value = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * cross;
    return std::max(0.0, value);
}

Eigen::MatrixXd pixel_features(const compute::Tensor<float>& images, std::size_t out_dim, std::uint64_t seed) {
    if (images.rank() < 2) {
        throw ShapeError("pixel_features expects [n, ...] images");
    }
    const auto n = static_cast<Eigen::Index>(images.dim(0));
    const auto pixels = static_cast<Eigen::Index>(n == 0 ? 0 : images.size() / images.dim(0));
    if (out_dim == 0 || static_cast<Eigen::Index>(out_dim) > pixels) {
        throw ContractError("pixel_features: out_dim must lie in [1, " + std::to_string(pixels) + "]");
    }
    const auto d = static_cast<Eigen::Index>(out_dim);
    using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::MatrixXd flat = Eigen::Map<const RowMajor>(images.data().data(), n, pixels).cast<double>();
    if (seed == 0) {
        return flat.leftCols(d);
    }
    Rng rng(seed, static_cast<std::uint64_t>(pixels));
    Eigen::MatrixXd gauss(pixels, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index i = 0; i < pixels; ++i) {
            gauss(i, j) = rng.normal();
        }
    }
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(pixels, d);
    return flat * q;
}

Eigen::MatrixXd load_external_features(const std::filesystem::path& path) {
    const compute::Tensor<float> t = load_raw_tensor(path);
    if (t.rank() != 2) {
        throw FormatError("feature file must hold an [n, d] tensor, got " + compute::shape_string(t.shape()));
    }
    using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajor>(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                                      static_cast<Eigen::Index>(t.dim(1)))
        .cast<double>();
}

namespace {

double mean_pair_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        double row_sum = 0.0;
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            row_sum += (a.row(i) - b.row(j)).norm();
        }
        total += row_sum;
    }
    return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

}  // namespace

double energy_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() < 2 || b.rows() < 2) {
        throw ContractError("energy_distance needs at least two points per set");
    }
    if (a.cols() != b.cols()) {
        throw ContractError("energy_distance: point dimensions differ");
    }
    return 2.0 * mean_pair_distance(a, b) - mean_pair_distance(a, a) - mean_pair_distance(b, b);
}

}  // namespace maskdm
