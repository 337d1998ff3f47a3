#pragma once

// Minimal static SVG figures: B_loc scatter projections, cell heatmaps and a
// projected sketch of the sphere-intersection picture.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nvmag/geometry.hpp"

namespace nvmag {

/// Three panels (x-y, x-z, y-z) of the points in uT, with an optional
/// reference point drawn as a cross.
std::string scatter_svg(const std::vector<FieldVector>& points_mt, const std::string& title,
                        const FieldVector* reference_mt = nullptr);

/// values(r, c) colored on a linear ramp; NaN cells are drawn gray.
std::string heatmap_svg(const Eigen::MatrixXd& values, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels, const std::string& row_title,
                        const std::string& col_title, const std::string& title);

/// Sphere constraints, the intersection manifold and the candidate points
/// projected onto the x-y plane (mT).
std::string degeneracy_svg(const std::vector<SphereConstraint>& spheres, const DegeneracyResult& result,
                           const FieldVector& truth_mt, const std::string& title);

}  // namespace nvmag
