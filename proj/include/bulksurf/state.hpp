#pragma once

#include <vector>

#include "bulksurf/geometry.hpp"

namespace bulksurf {

/// The four unknowns of the bulk-surface system at one time.
struct SystemState {
  Field y;
  Field z;
  Field y_gamma;
  Field z_gamma;
  double t = 0.0;

  static SystemState zeros(const Mesh& mesh, double t = 0.0);

  bool is_finite() const;
  bool matches(const Mesh& mesh) const;
  double min_value() const;
  double max_abs() const;

  SystemState& operator+=(const SystemState& o);
  SystemState& operator-=(const SystemState& o);
  SystemState& operator*=(double s);
};

/// Time-ordered states at uniform spacing dt, starting at states.front().t.
struct Trajectory {
  std::vector<SystemState> states;
  double dt = 0.0;

  std::size_t size() const { return states.size(); }
  double t_begin() const { return states.front().t; }
  double t_end() const { return states.back().t; }
  double time(std::size_t n) const { return states[n].t; }

  /// Linear interpolation in time; throws ValidationError outside the range.
  SystemState at(double t) const;
};

}  // namespace bulksurf
