#include "sagan/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sagan/common.hpp"

namespace sagan::geometry {

namespace {

double det3(const std::array<double, 9>& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) -
           m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

std::array<double, 9> adjugate3(const std::array<double, 9>& m) {
    return {m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
            m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
            m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
}

std::array<double, 9> matmul3(const std::array<double, 9>& a, const std::array<double, 9>& b) {
    std::array<double, 9> c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
            c[i * 3 + j] = s;
        }
    return c;
}

void check_finite_params(const std::vector<double>& p) {
    for (double v : p)
        if (!std::isfinite(v)) throw ValueError("transform params must be finite");
}

// Thin-plate kernel phi(r) = r^2 log r, written on r^2 to avoid the sqrt.
double tps_kernel_sq(double r2) {
    return r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0;
}

constexpr int kTpsSystem = kTpsPoints + 3;

// Solves the 19x19 TPS interpolation system once; returns L^-1.
const std::array<double, kTpsSystem * kTpsSystem>& tps_system_inverse() {
    static const auto inv = [] {
        constexpr int n = kTpsSystem;
        std::array<double, n * n> a{};
        for (int i = 0; i < kTpsPoints; ++i) {
            double ui, vi;
            tps_control_point(i, &ui, &vi);
            for (int j = 0; j < kTpsPoints; ++j) {
                double uj, vj;
                tps_control_point(j, &uj, &vj);
                double du = ui - uj, dv = vi - vj;
                a[i * n + j] = tps_kernel_sq(du * du + dv * dv);
            }
            a[i * n + kTpsPoints + 0] = 1.0;
            a[i * n + kTpsPoints + 1] = ui;
            a[i * n + kTpsPoints + 2] = vi;
            a[(kTpsPoints + 0) * n + i] = 1.0;
            a[(kTpsPoints + 1) * n + i] = ui;
            a[(kTpsPoints + 2) * n + i] = vi;
        }
        // Gauss-Jordan with partial pivoting.
        std::array<double, n * n> inv{};
        for (int i = 0; i < n; ++i) inv[i * n + i] = 1.0;
        for (int col = 0; col < n; ++col) {
            int piv = col;
            for (int r = col + 1; r < n; ++r)
                if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
            if (piv != col) {
                for (int c = 0; c < n; ++c) {
                    std::swap(a[piv * n + c], a[col * n + c]);
                    std::swap(inv[piv * n + c], inv[col * n + c]);
                }
            }
            double d = a[col * n + col];
            for (int c = 0; c < n; ++c) {
                a[col * n + c] /= d;
                inv[col * n + c] /= d;
            }
            for (int r = 0; r < n; ++r) {
                if (r == col) continue;
                double f = a[r * n + col];
                if (f == 0.0) continue;
                for (int c = 0; c < n; ++c) {
                    a[r * n + c] -= f * a[col * n + c];
                    inv[r * n + c] -= f * inv[col * n + c];
                }
            }
        }
        return inv;
    }();
    return inv;
}

}  // namespace

int param_count(TransformKind kind) {
    switch (kind) {
        case TransformKind::Affine: return 6;
        case TransformKind::Homography: return 8;
        case TransformKind::Tps: return 2 * kTpsPoints;
    }
    throw ValueError("unknown transform kind");
}

const char* kind_name(TransformKind kind) {
    switch (kind) {
        case TransformKind::Affine: return "affine";
        case TransformKind::Homography: return "homography";
        case TransformKind::Tps: return "tps";
    }
    return "?";
}

TransformKind kind_from_name(const std::string& name) {
    if (name == "affine") return TransformKind::Affine;
    if (name == "homography") return TransformKind::Homography;
    if (name == "tps") return TransformKind::Tps;
    throw ValueError("unknown transform kind: " + name);
}

Transform make_transform(TransformKind kind, std::vector<double> params) {
    const int expected = param_count(kind);
    if (static_cast<int>(params.size()) != expected)
        throw ValueError("transform params: expected " + std::to_string(expected) +
                         " values, got " + std::to_string(params.size()));
    check_finite_params(params);
    if (kind == TransformKind::Affine) {
        double det = params[0] * params[4] - params[1] * params[3];
        if (std::abs(det) < kSingularTol)
            throw SingularMatrixError("affine linear part is singular");
    } else if (kind == TransformKind::Homography) {
        std::array<double, 9> m = {params[0], params[1], params[2], params[3],
                                   params[4], params[5], params[6], params[7], 1.0};
        if (std::abs(det3(m)) < kSingularTol)
            throw SingularMatrixError("homography matrix is singular");
    }
    return Transform{kind, std::move(params)};
}

std::vector<double> identity_params(TransformKind kind) {
    switch (kind) {
        case TransformKind::Affine: return {1, 0, 0, 0, 1, 0};
        case TransformKind::Homography: return {1, 0, 0, 0, 1, 0, 0, 0};
        case TransformKind::Tps: return std::vector<double>(2 * kTpsPoints, 0.0);
    }
    throw ValueError("unknown transform kind");
}

Transform identity(TransformKind kind) {
    return Transform{kind, identity_params(kind)};
}

std::array<double, 9> as_matrix3(const Transform& t) {
    const auto& p = t.params;
    switch (t.kind) {
        case TransformKind::Affine:
            return {p[0], p[1], p[2], p[3], p[4], p[5], 0.0, 0.0, 1.0};
        case TransformKind::Homography:
            return {p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0};
        case TransformKind::Tps:
            throw UnsupportedKindError("tps has no matrix form");
    }
    throw ValueError("unknown transform kind");
}

Transform from_matrix3(TransformKind kind, const std::array<double, 9>& m) {
    if (kind == TransformKind::Affine)
        return make_transform(kind, {m[0], m[1], m[2], m[3], m[4], m[5]});
    if (kind == TransformKind::Homography) {
        if (std::abs(m[8]) < kSingularTol)
            throw SingularMatrixError("homography gauge entry is near zero");
        std::vector<double> p(8);
        for (int i = 0; i < 8; ++i) p[static_cast<size_t>(i)] = m[static_cast<size_t>(i)] / m[8];
        return make_transform(kind, std::move(p));
    }
    throw UnsupportedKindError("tps has no matrix form");
}

Transform invert(const Transform& t) {
    if (t.kind == TransformKind::Tps)
        throw UnsupportedKindError("tps transforms have no closed-form inverse");
    auto m = as_matrix3(t);
    double det = det3(m);
    if (std::abs(det) < kSingularTol)
        throw SingularMatrixError("transform is singular; cannot invert");
    auto adj = adjugate3(m);
    if (t.kind == TransformKind::Affine) {
        std::array<double, 9> inv{};
        for (int i = 0; i < 9; ++i) inv[static_cast<size_t>(i)] = adj[static_cast<size_t>(i)] / det;
        return make_transform(t.kind, {inv[0], inv[1], inv[2], inv[3], inv[4], inv[5]});
    }
    // Homography: the inverse is scale-free, so normalize the adjugate
    // directly into the h33 = 1 gauge.
    return from_matrix3(t.kind, adj);
}

Transform compose(const Transform& a, const Transform& b) {
    if (a.kind != b.kind) throw ValueError("compose: transform kinds differ");
    if (a.kind == TransformKind::Tps)
        throw UnsupportedKindError("compose is not defined for tps");
    return from_matrix3(a.kind, matmul3(as_matrix3(a), as_matrix3(b)));
}

void apply_point(const Transform& t, double u, double v, double* uo, double* vo) {
    const auto& p = t.params;
    switch (t.kind) {
        case TransformKind::Affine:
            *uo = p[0] * u + p[1] * v + p[2];
            *vo = p[3] * u + p[4] * v + p[5];
            return;
        case TransformKind::Homography: {
            double w = p[6] * u + p[7] * v + 1.0;
            *uo = (p[0] * u + p[1] * v + p[2]) / w;
            *vo = (p[3] * u + p[4] * v + p[5]) / w;
            return;
        }
        case TransformKind::Tps: {
            auto psi = tps_basis(u, v);
            double du = 0.0, dv = 0.0;
            for (int k = 0; k < kTpsPoints; ++k) {
                du += psi[static_cast<size_t>(k)] * p[static_cast<size_t>(2 * k)];
                dv += psi[static_cast<size_t>(k)] * p[static_cast<size_t>(2 * k + 1)];
            }
            *uo = u + du;
            *vo = v + dv;
            return;
        }
    }
    throw ValueError("unknown transform kind");
}

Transform translation(TransformKind kind, double du, double dv) {
    if (kind == TransformKind::Affine)
        return make_transform(kind, {1, 0, du, 0, 1, dv});
    if (kind == TransformKind::Homography)
        return make_transform(kind, {1, 0, du, 0, 1, dv, 0, 0});
    throw UnsupportedKindError("translation helper covers affine/homography only");
}

Transform rotation(TransformKind kind, double radians) {
    double c = std::cos(radians), s = std::sin(radians);
    if (kind == TransformKind::Affine)
        return make_transform(kind, {c, -s, 0, s, c, 0});
    if (kind == TransformKind::Homography)
        return make_transform(kind, {c, -s, 0, s, c, 0, 0, 0});
    throw UnsupportedKindError("rotation helper covers affine/homography only");
}

void tps_control_point(int k, double* u, double* v) {
    int row = k / kTpsGridSide, col = k % kTpsGridSide;
    *u = -1.0 + 2.0 * col / (kTpsGridSide - 1);
    *v = -1.0 + 2.0 * row / (kTpsGridSide - 1);
}

std::array<double, kTpsPoints> tps_basis(double u, double v) {
    const auto& linv = tps_system_inverse();
    constexpr int n = kTpsSystem;
    std::array<double, n> r{};
    for (int k = 0; k < kTpsPoints; ++k) {
        double cu, cv;
        tps_control_point(k, &cu, &cv);
        double du = u - cu, dv = v - cv;
        r[static_cast<size_t>(k)] = tps_kernel_sq(du * du + dv * dv);
    }
    r[kTpsPoints + 0] = 1.0;
    r[kTpsPoints + 1] = u;
    r[kTpsPoints + 2] = v;
    std::array<double, kTpsPoints> psi{};
    for (int k = 0; k < kTpsPoints; ++k) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += r[static_cast<size_t>(j)] * linv[static_cast<size_t>(j * n + k)];
        psi[static_cast<size_t>(k)] = s;
    }
    return psi;
}

SamplingGrid generate_grid(const Transform& t, int64_t out_h, int64_t out_w) {
    if (out_h < 2 || out_w < 2) throw ValueError("grid size must be at least 2x2");
    SamplingGrid g;
    g.height = out_h;
    g.width = out_w;
    g.u.resize(static_cast<size_t>(out_h * out_w));
    g.v.resize(static_cast<size_t>(out_h * out_w));
    g.valid.resize(static_cast<size_t>(out_h * out_w));
    for (int64_t i = 0; i < out_h; ++i) {
        double v0 = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(out_h - 1);
        for (int64_t j = 0; j < out_w; ++j) {
            double u0 = -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(out_w - 1);
            double us, vs;
            apply_point(t, u0, v0, &us, &vs);
            size_t idx = static_cast<size_t>(i * out_w + j);
            g.u[idx] = us;
            g.v[idx] = vs;
            g.valid[idx] = (std::abs(us) > 1.0 || std::abs(vs) > 1.0) ? 0 : 1;
        }
    }
    return g;
}

namespace detail {

void snap_to_lattice(double* p) {
    double r = std::nearbyint(*p);
    if (std::abs(*p - r) < 1e-9) *p = r;
}

double bilinear_sample(const double* plane, int64_t h, int64_t w,
                       double px, double py, double fill) {
    // Also rejects NaN and coordinates that would overflow the int cast.
    if (!(px > -1e9 && px < 1e9 && py > -1e9 && py < 1e9)) return fill;
    snap_to_lattice(&px);
    snap_to_lattice(&py);
    int64_t x0 = static_cast<int64_t>(std::floor(px));
    int64_t y0 = static_cast<int64_t>(std::floor(py));
    double fx = px - static_cast<double>(x0);
    double fy = py - static_cast<double>(y0);
    auto fetch = [&](int64_t x, int64_t y) {
        return (x >= 0 && x < w && y >= 0 && y < h) ? plane[y * w + x] : fill;
    };
    double v00 = fetch(x0, y0), v10 = fetch(x0 + 1, y0);
    double v01 = fetch(x0, y0 + 1), v11 = fetch(x0 + 1, y0 + 1);
    double top = v00 + fx * (v10 - v00);
    double bot = v01 + fx * (v11 - v01);
    return top + fy * (bot - top);
}

SampleGrad bilinear_sample_grad(const double* plane, int64_t h, int64_t w,
                                double px, double py, double fill) {
    if (!(px > -1e9 && px < 1e9 && py > -1e9 && py < 1e9)) {
        SampleGrad g{};
        g.value = fill;
        g.x0 = -2;
        g.y0 = -2;
        return g;
    }
    snap_to_lattice(&px);
    snap_to_lattice(&py);
    int64_t x0 = static_cast<int64_t>(std::floor(px));
    int64_t y0 = static_cast<int64_t>(std::floor(py));
    double fx = px - static_cast<double>(x0);
    double fy = py - static_cast<double>(y0);
    auto fetch = [&](int64_t x, int64_t y) {
        return (x >= 0 && x < w && y >= 0 && y < h) ? plane[y * w + x] : fill;
    };
    double v00 = fetch(x0, y0), v10 = fetch(x0 + 1, y0);
    double v01 = fetch(x0, y0 + 1), v11 = fetch(x0 + 1, y0 + 1);
    double top = v00 + fx * (v10 - v00);
    double bot = v01 + fx * (v11 - v01);
    SampleGrad g;
    g.value = top + fy * (bot - top);
    g.d_px = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
    g.d_py = bot - top;
    g.x0 = x0;
    g.y0 = y0;
    g.w00 = (1.0 - fx) * (1.0 - fy);
    g.w10 = fx * (1.0 - fy);
    g.w01 = (1.0 - fx) * fy;
    g.w11 = fx * fy;
    return g;
}

}  // namespace detail

Tensor warp(const Tensor& img, const SamplingGrid& grid, double fill) {
    if (img.rank() != 4) throw ShapeError("warp expects an NCHW tensor");
    const int64_t n = img.dim(0), c = img.dim(1), h = img.dim(2), w = img.dim(3);
    Tensor out({n, c, grid.height, grid.width});
    const double sx = static_cast<double>(w - 1) / 2.0;
    const double sy = static_cast<double>(h - 1) / 2.0;
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* plane = img.data.data() + ((b * c + ch) * h * w);
            double* oplane = out.data.data() + ((b * c + ch) * grid.height * grid.width);
            for (int64_t i = 0; i < grid.height; ++i) {
                for (int64_t j = 0; j < grid.width; ++j) {
                    size_t gi = static_cast<size_t>(i * grid.width + j);
                    double px = (grid.u[gi] + 1.0) * sx;
                    double py = (grid.v[gi] + 1.0) * sy;
                    oplane[i * grid.width + j] =
                        detail::bilinear_sample(plane, h, w, px, py, fill);
                }
            }
        }
    }
    return out;
}

double corner_error(const Transform& est, const Transform& gt, int64_t h, int64_t w) {
    if (est.kind == TransformKind::Tps || gt.kind == TransformKind::Tps)
        throw UnsupportedKindError("corner_error covers affine/homography only");
    const double corners[4][2] = {{-1, -1}, {1, -1}, {-1, 1}, {1, 1}};
    const double sx = static_cast<double>(w - 1) / 2.0;
    const double sy = static_cast<double>(h - 1) / 2.0;
    double total = 0.0;
    for (const auto& corner : corners) {
        double ue, ve, ug, vg;
        apply_point(est, corner[0], corner[1], &ue, &ve);
        apply_point(gt, corner[0], corner[1], &ug, &vg);
        double dx = (ue - ug) * sx;
        double dy = (ve - vg) * sy;
        total += std::sqrt(dx * dx + dy * dy);
    }
    return total / 4.0;
}

}  // namespace sagan::geometry
