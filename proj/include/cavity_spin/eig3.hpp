#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "cavity_spin/errors.hpp"
#include "cavity_spin/linalg.hpp"

namespace cavity_spin {

/// Eigen-decomposition of a symmetric 3x3 matrix.
/// `values` ascending; column i of `vectors` is the unit eigenvector for values[i].
struct SymmetricEigen {
  Vec3 values;
  Mat3 vectors;

  Vec3 vector(int i) const { return vectors.column(static_cast<std::size_t>(i)); }
};

/// Cyclic Jacobi rotations. Throws DomainError when ||A - A^T||_F > tol
/// (default tol = 1e-12 ||A||_F).
inline SymmetricEigen eig3_sym(const Mat3& input, double tol = -1.0) {
  const double scale = frobenius_norm(input);
  if (tol < 0.0) tol = 1e-12 * scale;
  if (!std::isfinite(scale)) throw DomainError("eig3_sym: non-finite matrix");
  if (asymmetry(input) > tol) throw DomainError("eig3_sym: matrix is not symmetric");

  Mat3 a = 0.5 * (input + transpose(input));
  Mat3 v = Mat3::identity();
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
    if (off <= 1e-36 * scale * scale || off == 0.0) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // A <- J^T A J with J the (p, q) plane rotation
        for (int k = 0; k < 3; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int x, int y) { return a(x, x) < a(y, y); });
  SymmetricEigen out;
  for (int i = 0; i < 3; ++i) {
    out.values[i] = a(order[i], order[i]);
    for (int k = 0; k < 3; ++k) out.vectors(k, i) = v(k, order[i]);
  }
  return out;
}

/// Principal-moment triangle inequality l_i <= l_j + l_k, within a relative slack.
inline bool satisfies_triangle_inequality(const Vec3& moments, double slack = 1e-12) {
  const double s = std::abs(moments[0]) + std::abs(moments[1]) + std::abs(moments[2]);
  for (int i = 0; i < 3; ++i)
    if (moments[i] > moments[(i + 1) % 3] + moments[(i + 2) % 3] + slack * s) return false;
  return true;
}

}  // namespace cavity_spin
