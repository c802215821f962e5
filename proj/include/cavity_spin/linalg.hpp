#pragma once

#include <cmath>
#include <cstddef>

namespace cavity_spin {

/// Fixed-size 3-vector in body-frame coordinates.
struct Vec3 {
  double v[3]{};

  constexpr double& operator[](std::size_t i) { return v[i]; }
  constexpr const double& operator[](std::size_t i) const { return v[i]; }

  constexpr Vec3& operator+=(const Vec3& o) {
    v[0] += o.v[0]; v[1] += o.v[1]; v[2] += o.v[2];
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    v[0] -= o.v[0]; v[1] -= o.v[1]; v[2] -= o.v[2];
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    v[0] *= s; v[1] *= s; v[2] *= s;
    return *this;
  }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
constexpr Vec3 operator-(const Vec3& a) { return {-a[0], -a[1], -a[2]}; }
constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
constexpr Vec3 operator/(Vec3 a, double s) { return a *= (1.0 / s); }

constexpr double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline bool is_finite(const Vec3& a) {
  return std::isfinite(a[0]) && std::isfinite(a[1]) && std::isfinite(a[2]);
}

/// Row-major 3x3 matrix.
struct Mat3 {
  double m[3][3]{};

  constexpr double& operator()(std::size_t i, std::size_t j) { return m[i][j]; }
  constexpr const double& operator()(std::size_t i, std::size_t j) const { return m[i][j]; }

  static constexpr Mat3 identity() {
    Mat3 r;
    r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
    return r;
  }
  static constexpr Mat3 diagonal(const Vec3& d) {
    Mat3 r;
    r.m[0][0] = d[0]; r.m[1][1] = d[1]; r.m[2][2] = d[2];
    return r;
  }

  constexpr Vec3 column(std::size_t j) const { return {m[0][j], m[1][j], m[2][j]}; }
  constexpr Vec3 row(std::size_t i) const { return {m[i][0], m[i][1], m[i][2]}; }

  constexpr Mat3& operator+=(const Mat3& o) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] += o.m[i][j];
    return *this;
  }
  constexpr Mat3& operator-=(const Mat3& o) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] -= o.m[i][j];
    return *this;
  }
  constexpr Mat3& operator*=(double s) {
    for (auto& r : m)
      for (double& x : r) x *= s;
    return *this;
  }
  friend constexpr bool operator==(const Mat3&, const Mat3&) = default;
};

constexpr Mat3 operator+(Mat3 a, const Mat3& b) { return a += b; }
constexpr Mat3 operator-(Mat3 a, const Mat3& b) { return a -= b; }
constexpr Mat3 operator*(double s, Mat3 a) { return a *= s; }
constexpr Mat3 operator*(Mat3 a, double s) { return a *= s; }

constexpr Vec3 operator*(const Mat3& a, const Vec3& x) {
  return {a(0, 0) * x[0] + a(0, 1) * x[1] + a(0, 2) * x[2],
          a(1, 0) * x[0] + a(1, 1) * x[1] + a(1, 2) * x[2],
          a(2, 0) * x[0] + a(2, 1) * x[1] + a(2, 2) * x[2]};
}

constexpr Mat3 operator*(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j);
  return r;
}

constexpr Mat3 transpose(const Mat3& a) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = a(j, i);
  return r;
}

constexpr double trace(const Mat3& a) { return a(0, 0) + a(1, 1) + a(2, 2); }

constexpr double determinant(const Mat3& a) {
  return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
         a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
         a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

/// Inverse via the adjugate. Caller guarantees det != 0.
constexpr Mat3 inverse(const Mat3& a) {
  Mat3 r;
  r(0, 0) = a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1);
  r(0, 1) = a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2);
  r(0, 2) = a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1);
  r(1, 0) = a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2);
  r(1, 1) = a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0);
  r(1, 2) = a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2);
  r(2, 0) = a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0);
  r(2, 1) = a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1);
  r(2, 2) = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  const double det = a(0, 0) * r(0, 0) + a(0, 1) * r(1, 0) + a(0, 2) * r(2, 0);
  return r * (1.0 / det);
}

constexpr Mat3 outer(const Vec3& a, const Vec3& b) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = a[i] * b[j];
  return r;
}

/// Frobenius inner product A:B.
constexpr double contract(const Mat3& a, const Mat3& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s += a(i, j) * b(i, j);
  return s;
}

inline double frobenius_norm(const Mat3& a) { return std::sqrt(contract(a, a)); }

/// Skew map: skew(a) * x == cross(a, x).
constexpr Mat3 skew(const Vec3& a) {
  Mat3 k;
  k(0, 1) = -a[2]; k(0, 2) = a[1];
  k(1, 0) = a[2];  k(1, 2) = -a[0];
  k(2, 0) = -a[1]; k(2, 1) = a[0];
  return k;
}

inline double asymmetry(const Mat3& a) { return frobenius_norm(a - transpose(a)); }

/// Positive definiteness of a symmetric matrix via leading principal minors.
constexpr bool is_positive_definite(const Mat3& a) {
  const double m1 = a(0, 0);
  const double m2 = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  return m1 > 0.0 && m2 > 0.0 && determinant(a) > 0.0;
}

}  // namespace cavity_spin
