#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cavity_spin/errors.hpp"
#include "cavity_spin/linalg.hpp"

namespace cavity_spin {

/// Axis-aligned box cavity discretized into N1 x N2 x N3 cells.
///
/// Coordinates are body-frame positions relative to the body's mass center C.
/// The box center sits at `offset`. Cells are stored x-fastest:
/// index(i, j, k) = i + N1 * (j + N2 * k).
class CavityGrid {
 public:
  CavityGrid() = default;

  CavityGrid(const Vec3& extents, std::array<int, 3> cells, const Vec3& offset = {})
      : extents_(extents), cells_(cells), offset_(offset) {
    for (int a = 0; a < 3; ++a) {
      if (!(extents[a] > 0.0) || !std::isfinite(extents[a]))
        throw DomainError("grid extent along axis " + std::to_string(a) + " must be positive");
      if (cells[a] < 2)
        throw DomainError("grid needs at least 2 cells along axis " + std::to_string(a));
      if (!std::isfinite(offset[a])) throw DomainError("grid offset must be finite");
      spacing_[a] = extents[a] / cells[a];
      centers_[a].resize(static_cast<std::size_t>(cells[a]));
      for (int i = 0; i < cells[a]; ++i)
        centers_[a][i] = offset[a] + ((i + 0.5) * spacing_[a] - 0.5 * extents[a]);
    }
  }

  const Vec3& extents() const { return extents_; }
  const std::array<int, 3>& cells() const { return cells_; }
  const Vec3& offset() const { return offset_; }

  int n(int axis) const { return cells_[axis]; }
  double h(int axis) const { return spacing_[axis]; }
  double min_spacing() const { return std::min({spacing_[0], spacing_[1], spacing_[2]}); }
  double cell_volume() const { return spacing_[0] * spacing_[1] * spacing_[2]; }
  double volume() const { return extents_[0] * extents_[1] * extents_[2]; }
  double face_area(int axis) const {
    return spacing_[(axis + 1) % 3] * spacing_[(axis + 2) % 3];
  }

  std::size_t cell_count() const {
    return static_cast<std::size_t>(cells_[0]) * cells_[1] * cells_[2];
  }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(cells_[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(cells_[1]) * k);
  }

  std::array<int, 3> unravel(std::size_t c) const {
    const int i = static_cast<int>(c % cells_[0]);
    const std::size_t rest = c / cells_[0];
    return {i, static_cast<int>(rest % cells_[1]), static_cast<int>(rest / cells_[1])};
  }

  /// Coordinate of cell centers along one axis.
  double coord(int axis, int i) const { return centers_[axis][i]; }

  Vec3 center(int i, int j, int k) const {
    return {centers_[0][i], centers_[1][j], centers_[2][k]};
  }
  Vec3 center(std::size_t c) const {
    const auto ijk = unravel(c);
    return center(ijk[0], ijk[1], ijk[2]);
  }

  /// Lower and upper wall positions along an axis.
  double lower(int axis) const { return offset_[axis] - 0.5 * extents_[axis]; }
  double upper(int axis) const { return offset_[axis] + 0.5 * extents_[axis]; }

  bool same_shape(const CavityGrid& o) const {
    return cells_ == o.cells_ && extents_ == o.extents_ && offset_ == o.offset_;
  }

 private:
  Vec3 extents_{1.0, 1.0, 1.0};
  std::array<int, 3> cells_{2, 2, 2};
  Vec3 offset_{};
  Vec3 spacing_{0.5, 0.5, 0.5};
  std::array<std::vector<double>, 3> centers_{std::vector<double>{-0.25, 0.25},
                                              std::vector<double>{-0.25, 0.25},
                                              std::vector<double>{-0.25, 0.25}};
};

}  // namespace cavity_spin
