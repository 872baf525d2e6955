#pragma once

// Steady conduction through the channel (cell-centred finite volumes with
// harmonic-mean face conductivities) and Biot-Savart integration of the
// resulting current density at a planar sensor array.

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "bubbletomo/errors.hpp"
#include "bubbletomo/scene.hpp"

namespace bubbletomo {

inline constexpr double kMu0 = 4.0e-7 * std::numbers::pi;

enum class Component { X = 0, Y = 1, Z = 2 };

inline Component parse_component(const std::string& s) {
    if (s == "x" || s == "X") return Component::X;
    if (s == "y" || s == "Y") return Component::Y;
    if (s == "z" || s == "Z") return Component::Z;
    throw ConfigError("unknown field component '" + s + "' (expected x, y or z)");
}

inline std::string to_string(Component c) {
    switch (c) {
        case Component::X: return "x";
        case Component::Y: return "y";
        case Component::Z: return "z";
    }
    return "?";
}

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double operator[](Component c) const {
        return c == Component::X ? x : (c == Component::Y ? y : z);
    }
};

/// rows x cols lattice over the channel footprint at z = -d_sensor. `selection`
/// optionally keeps a subset of the lattice (row-major indices), e.g. the
/// checkerboard half used for the 50-sensor ablation.
struct SensorArray {
    std::size_t rows = 10;
    std::size_t cols = 10;
    double d_sensor = 0.005;
    Component component = Component::Z;
    std::vector<std::size_t> selection;

    std::size_t size() const { return selection.empty() ? rows * cols : selection.size(); }

    std::vector<Vec3> positions(const ChannelSpec& spec) const {
        std::vector<std::size_t> idx = selection;
        if (idx.empty()) {
            idx.resize(rows * cols);
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        }
        std::vector<Vec3> out;
        out.reserve(idx.size());
        for (std::size_t k : idx) {
            require(k < rows * cols, "sensor selection index out of range");
            const std::size_t r = k / cols;
            const std::size_t c = k % cols;
            out.push_back({(static_cast<double>(c) + 0.5) * spec.length_x / static_cast<double>(cols),
                           (static_cast<double>(r) + 0.5) * spec.length_y / static_cast<double>(rows),
                           -d_sensor});
        }
        return out;
    }

    void validate() const {
        require(rows >= 1 && cols >= 1, "sensor rows and cols must be positive");
        require(d_sensor > 0.0, "d_sensor must be positive");
        for (std::size_t k : selection) {
            require(k < rows * cols, "sensor selection index out of range");
        }
    }
};

/// Indices (r * cols + c) with (r + c) even: half of the lattice in a
/// checkerboard pattern.
inline std::vector<std::size_t> checkerboard_selection(std::size_t rows, std::size_t cols) {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if ((r + c) % 2 == 0) out.push_back(r * cols + c);
        }
    }
    return out;
}

struct SolverOptions {
    double sigma_floor = 1e-6;
    double tol = 1e-12;           // relative residual after refinement
    std::size_t max_iter = 10;    // refinement sweeps
};

/// Face and cell-centre current densities (A/m^2) for an nx x ny channel.
/// jx_face has (nx + 1) x ny entries (index iy * (nx + 1) + i), jy_face has
/// nx x (ny + 1) (index j * nx + ix); side-wall faces carry zero.
struct CurrentField {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::vector<double> phi;
    std::vector<double> jx_face;
    std::vector<double> jy_face;
    std::vector<double> jx;  // cell centre
    std::vector<double> jy;  // cell centre
    double total_current = 0.0;

    /// Rebuilds cell-centre values as the mean of the two bounding faces.
    void update_cell_centres() {
        jx.assign(nx * ny, 0.0);
        jy.assign(nx * ny, 0.0);
        for (std::size_t iy = 0; iy < ny; ++iy) {
            for (std::size_t ix = 0; ix < nx; ++ix) {
                jx[iy * nx + ix] = 0.5 * (jx_face[iy * (nx + 1) + ix] + jx_face[iy * (nx + 1) + ix + 1]);
                jy[iy * nx + ix] = 0.5 * (jy_face[iy * nx + ix] + jy_face[(iy + 1) * nx + ix]);
            }
        }
    }

    /// Net outflow (A) of each cell from face fluxes.
    std::vector<double> divergence(const ChannelSpec& spec) const {
        const double ax = spec.dy() * spec.thickness;
        const double ay = spec.dx() * spec.thickness;
        std::vector<double> div(nx * ny, 0.0);
        for (std::size_t iy = 0; iy < ny; ++iy) {
            for (std::size_t ix = 0; ix < nx; ++ix) {
                div[iy * nx + ix] = (jx_face[iy * (nx + 1) + ix + 1] - jx_face[iy * (nx + 1) + ix]) * ax +
                                    (jy_face[(iy + 1) * nx + ix] - jy_face[iy * nx + ix]) * ay;
            }
        }
        return div;
    }

    /// Current (A) through the x-face plane i (0..nx).
    double cross_section_current(const ChannelSpec& spec, std::size_t i) const {
        double sum = 0.0;
        for (std::size_t iy = 0; iy < ny; ++iy) sum += jx_face[iy * (nx + 1) + i];
        return sum * spec.dy() * spec.thickness;
    }
};

/// Solves div(sigma grad phi) = 0 with phi = 1 on the x = 0 electrode, phi = 0
/// on x = length_x and insulating side walls, then rescales so exactly
/// `applied_current` amperes flow through the channel.
inline CurrentField solve_current(const ConductivityMap& map, const ChannelSpec& spec, double applied_current,
                                  const SolverOptions& opts = {}) {
    spec.validate();
    if (map.nx != spec.grid_nx || map.ny != spec.grid_ny) {
        throw ShapeMismatch("conductivity map is " + std::to_string(map.nx) + "x" + std::to_string(map.ny) +
                            " but channel grid is " + std::to_string(spec.grid_nx) + "x" +
                            std::to_string(spec.grid_ny));
    }
    require(applied_current > 0.0, "applied current must be positive");
    require(opts.sigma_floor > 0.0, "sigma_floor must be positive");

    const std::size_t nx = map.nx;
    const std::size_t ny = map.ny;
    const std::size_t n = nx * ny;
    const double dx = spec.dx();
    const double dy = spec.dy();
    const double t = spec.thickness;

    std::vector<double> sigma(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double rel = map.values[k];
        require(rel >= 0.0 && rel <= 1.0 && std::isfinite(rel), "conductivity values must lie in [0, 1]");
        sigma[k] = std::max(rel, opts.sigma_floor) * spec.sigma_ref;
    }
    auto harmonic = [](double a, double b) { return 2.0 * a * b / (a + b); };

    // Face transmissibilities (S).
    std::vector<double> tx((nx + 1) * ny, 0.0);
    std::vector<double> ty(nx * (ny + 1), 0.0);
    for (std::size_t iy = 0; iy < ny; ++iy) {
        tx[iy * (nx + 1)] = sigma[iy * nx] * dy * t / (0.5 * dx);
        tx[iy * (nx + 1) + nx] = sigma[iy * nx + nx - 1] * dy * t / (0.5 * dx);
        for (std::size_t i = 1; i < nx; ++i) {
            tx[iy * (nx + 1) + i] = harmonic(sigma[iy * nx + i - 1], sigma[iy * nx + i]) * dy * t / dx;
        }
    }
    for (std::size_t j = 1; j < ny; ++j) {
        for (std::size_t ix = 0; ix < nx; ++ix) {
            ty[j * nx + ix] = harmonic(sigma[(j - 1) * nx + ix], sigma[j * nx + ix]) * dx * t / dy;
        }
    }

    // Assemble in units of sigma_ref to keep the matrix O(1).
    const double scale = 1.0 / spec.sigma_ref;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(5 * n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    auto id = [nx](std::size_t ix, std::size_t iy) { return static_cast<Eigen::Index>(iy * nx + ix); };
    for (std::size_t iy = 0; iy < ny; ++iy) {
        for (std::size_t ix = 0; ix < nx; ++ix) {
            const Eigen::Index c = id(ix, iy);
            double diag = 0.0;
            const double tw = tx[iy * (nx + 1) + ix] * scale;
            const double te = tx[iy * (nx + 1) + ix + 1] * scale;
            const double ts = ty[iy * nx + ix] * scale;
            const double tn = ty[(iy + 1) * nx + ix] * scale;
            diag += tw + te + ts + tn;
            if (ix == 0) {
                rhs[c] += tw * 1.0;
            } else {
                trips.emplace_back(c, id(ix - 1, iy), -tw);
            }
            if (ix + 1 < nx) trips.emplace_back(c, id(ix + 1, iy), -te);
            if (iy > 0) trips.emplace_back(c, id(ix, iy - 1), -ts);
            if (iy + 1 < ny) trips.emplace_back(c, id(ix, iy + 1), -tn);
            trips.emplace_back(c, c, diag);
        }
    }
    Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    a.setFromTriplets(trips.begin(), trips.end());

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
    if (ldlt.info() != Eigen::Success) {
        throw NumericalFailure("conduction matrix factorization failed");
    }
    Eigen::VectorXd phi = ldlt.solve(rhs);
    const double rhs_norm = std::max(rhs.norm(), 1e-300);
    double rel_res = (rhs - a * phi).norm() / rhs_norm;
    std::size_t sweeps = 0;
    while (rel_res > opts.tol && sweeps < opts.max_iter) {
        phi += ldlt.solve(rhs - a * phi);
        rel_res = (rhs - a * phi).norm() / rhs_norm;
        ++sweeps;
    }
    if (!(rel_res <= opts.tol)) {
        std::ostringstream msg;
        msg << "conduction solve did not converge: relative residual " << rel_res << " after " << sweeps
            << " refinement sweeps (tol " << opts.tol << ")";
        throw NumericalFailure(msg.str());
    }

    CurrentField f;
    f.nx = nx;
    f.ny = ny;
    f.jx_face.assign((nx + 1) * ny, 0.0);
    f.jy_face.assign(nx * (ny + 1), 0.0);
    auto phi_at = [&](std::size_t ix, std::size_t iy) { return phi[id(ix, iy)]; };
    for (std::size_t iy = 0; iy < ny; ++iy) {
        for (std::size_t i = 0; i <= nx; ++i) {
            const double left = i == 0 ? 1.0 : phi_at(i - 1, iy);
            const double right = i == nx ? 0.0 : phi_at(i, iy);
            f.jx_face[iy * (nx + 1) + i] = tx[iy * (nx + 1) + i] * (left - right) / (dy * t);
        }
    }
    for (std::size_t j = 1; j < ny; ++j) {
        for (std::size_t ix = 0; ix < nx; ++ix) {
            f.jy_face[j * nx + ix] = ty[j * nx + ix] * (phi_at(ix, j - 1) - phi_at(ix, j)) / (dx * t);
        }
    }

    // Unit potential difference drives current I0; conductance relative to the
    // homogeneous channel exposes blocked scenes.
    const double i0 = f.cross_section_current(spec, 0);
    const double g_homogeneous = spec.sigma_ref * spec.length_y * t / spec.length_x;
    const double blocked_below = 10.0 * static_cast<double>(nx) * opts.sigma_floor;
    if (!(i0 / g_homogeneous > blocked_below)) {
        std::ostringstream msg;
        msg << "channel is blocked: relative conductance " << i0 / g_homogeneous << " below " << blocked_below;
        throw InfeasibleScene(msg.str());
    }

    const double k = applied_current / i0;
    f.phi.resize(n);
    for (std::size_t c = 0; c < n; ++c) f.phi[c] = phi[static_cast<Eigen::Index>(c)] * k;
    for (double& v : f.jx_face) v *= k;
    for (double& v : f.jy_face) v *= k;
    f.total_current = applied_current;
    f.update_cell_centres();
    return f;
}

/// Full field vector at `r` from cell-centre currents, midpoint quadrature in
/// each cell (channel midplane at z = 0).
inline Vec3 biot_savart_field(const CurrentField& field, const ChannelSpec& spec, const Vec3& r) {
    const double dx = spec.dx();
    const double dy = spec.dy();
    const double dv = dx * dy * spec.thickness;
    const double min_dist = 0.5 * std::sqrt(dx * dx + dy * dy + spec.thickness * spec.thickness);
    Vec3 b;
    for (std::size_t iy = 0; iy < field.ny; ++iy) {
        const double cy = (static_cast<double>(iy) + 0.5) * dy;
        for (std::size_t ix = 0; ix < field.nx; ++ix) {
            const std::size_t c = iy * field.nx + ix;
            const double jx = field.jx[c];
            const double jy = field.jy[c];
            const double cx = (static_cast<double>(ix) + 0.5) * dx;
            const double rx = r.x - cx;
            const double ry = r.y - cy;
            const double rz = r.z;
            const double d2 = rx * rx + ry * ry + rz * rz;
            const double d = std::sqrt(d2);
            if (d < min_dist) {
                std::ostringstream msg;
                msg << "sensor at (" << r.x << ", " << r.y << ", " << r.z << ") is " << d
                    << " m from cell (" << ix << ", " << iy << "), closer than half the cell diagonal";
                throw NumericalFailure(msg.str());
            }
            if (jx == 0.0 && jy == 0.0) continue;
            const double w = dv / (d2 * d);
            // j x R with j = (jx, jy, 0)
            b.x += jy * rz * w;
            b.y += -jx * rz * w;
            b.z += (jx * ry - jy * rx) * w;
        }
    }
    const double k = kMu0 / (4.0 * std::numbers::pi);
    return {b.x * k, b.y * k, b.z * k};
}

inline std::vector<double> biot_savart(const CurrentField& field, const ChannelSpec& spec, const SensorArray& array) {
    array.validate();
    if (field.nx != spec.grid_nx || field.ny != spec.grid_ny || field.jx.size() != field.nx * field.ny) {
        throw ShapeMismatch("current field does not match the channel grid");
    }
    std::vector<double> out;
    const auto positions = array.positions(spec);
    out.reserve(positions.size());
    for (const Vec3& p : positions) {
        if (std::abs(p.z) <= 0.5 * spec.thickness) {
            throw NumericalFailure("sensor lies inside the conductor volume");
        }
        out.push_back(biot_savart_field(field, spec, p)[array.component]);
    }
    return out;
}

inline std::vector<double> forward(const ConductivityMap& map, const ChannelSpec& spec, const SensorArray& array,
                                   double applied_current, const SolverOptions& opts = {}) {
    return biot_savart(solve_current(map, spec, applied_current, opts), spec, array);
}

}  // namespace bubbletomo
