#ifndef SAGAN_GEOMETRY_HPP
#define SAGAN_GEOMETRY_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sagan/tensor.hpp"

namespace sagan::geometry {

// All coordinates live in the normalized frame [-1, 1]^2 so that transform
// parameters are resolution independent. Pixel (i, j) of an H x W image sits
// at u = -1 + 2j/(W-1), v = -1 + 2i/(H-1) (align-corners convention).

enum class TransformKind { Affine, Homography, Tps };

constexpr double kSingularTol = 1e-8;
constexpr int kTpsGridSide = 4;                         // fixed 4x4 control grid
constexpr int kTpsPoints = kTpsGridSide * kTpsGridSide;

int param_count(TransformKind kind);
const char* kind_name(TransformKind kind);
TransformKind kind_from_name(const std::string& name);

// A parameterized 2-D mapping of normalized coordinates.
//   affine:     6 params, row-major 2x3 matrix [a b c; d e f]
//   homography: 8 params, row-major 3x3 with the (3,3) entry pinned to 1
//   tps:        2K params, (du_k, dv_k) offsets of the K = 16 control points
struct Transform {
    TransformKind kind = TransformKind::Affine;
    std::vector<double> params;
};

// Validates parameter length and non-singularity (tolerance 1e-8).
Transform make_transform(TransformKind kind, std::vector<double> params);

Transform identity(TransformKind kind);
std::vector<double> identity_params(TransformKind kind);

// Closed-form inverse; affine/homography only. Homography inverses are
// re-normalized to the h33 = 1 gauge.
Transform invert(const Transform& t);

// compose(a, b): applying the result equals applying b then a.
Transform compose(const Transform& a, const Transform& b);

// 3x3 matrix view (affine rows padded with [0 0 1]); affine/homography only.
std::array<double, 9> as_matrix3(const Transform& t);
Transform from_matrix3(TransformKind kind, const std::array<double, 9>& m);

// Maps one normalized point.
void apply_point(const Transform& t, double u, double v, double* uo, double* vo);

// Convenience constructors used by data synthesis and tests.
Transform translation(TransformKind kind, double du, double dv);
Transform rotation(TransformKind kind, double radians);

// Backward-warping grid: coords[i][j] is the source location of output pixel
// (i, j); the identity transform yields the canonical [-1,1] meshgrid.
struct SamplingGrid {
    int64_t height = 0, width = 0;
    std::vector<double> u, v;       // H*W, row-major
    std::vector<uint8_t> valid;     // false exactly where |u|>1 or |v|>1
};

SamplingGrid generate_grid(const Transform& t, int64_t out_h, int64_t out_w);

// Bilinear warp of an NCHW batch; out-of-frame samples read `fill`.
Tensor warp(const Tensor& img, const SamplingGrid& grid, double fill = 0.0);

// Mean pixel displacement of the four image corners under est vs gt.
double corner_error(const Transform& est, const Transform& gt, int64_t h, int64_t w);

// ----------------------------------------------------------------------------
// TPS machinery. The warp is linear in the control-point offsets:
//   f(p) = p + sum_k psi_k(p) * delta_k        (per output dimension)
// psi depends only on p and the fixed control grid.
// ----------------------------------------------------------------------------

// Control point k of the fixed grid (row-major over the 4x4 lattice).
void tps_control_point(int k, double* u, double* v);

// psi_k(p) for k = 0..15.
std::array<double, kTpsPoints> tps_basis(double u, double v);

namespace detail {

// Factored bilinear sample of one H x W plane at pixel coords (px, py).
// Coordinates within 1e-9 of a lattice point are snapped so that identity
// warps reproduce the input bit-for-bit.
double bilinear_sample(const double* plane, int64_t h, int64_t w,
                       double px, double py, double fill);

// Same sample plus partials w.r.t. px / py and the four corner weights
// (weights only for in-bounds corners; used to scatter image gradients).
struct SampleGrad {
    double value;
    double d_px, d_py;
    int64_t x0, y0;
    double w00, w10, w01, w11;
};
SampleGrad bilinear_sample_grad(const double* plane, int64_t h, int64_t w,
                                double px, double py, double fill);

void snap_to_lattice(double* p);

}  // namespace detail

}  // namespace sagan::geometry

#endif  // SAGAN_GEOMETRY_HPP
