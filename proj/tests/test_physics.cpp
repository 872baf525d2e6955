#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "bubbletomo/physics.hpp"
#include "bubbletomo/scene.hpp"

using namespace bubbletomo;

namespace {

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

ConductivityMap random_binary(const ChannelSpec& spec, std::uint64_t seed) {
    return binarize(rasterize(spec, sample_scene(spec, DiskConfig{}, seed)));
}

// Analytic field of a straight finite segment along x from x0 to x1 at
// perpendicular distance d, evaluated at axial position xs.
double finite_wire(double current, double d, double x0, double x1, double xs) {
    const double a = (x1 - xs) / std::hypot(x1 - xs, d);
    const double b = (x0 - xs) / std::hypot(x0 - xs, d);
    return kMu0 * current / (4.0 * std::numbers::pi * d) * (a - b);
}

}  // namespace

TEST(Conduction, UniformMapGivesUniformCurrent) {
    ChannelSpec spec;
    const ConductivityMap map(spec.grid_nx, spec.grid_ny, 1.0);
    const auto f = solve_current(map, spec, 1.0);
    const double expected = 1.0 / (spec.length_y * spec.thickness);
    for (std::size_t c = 0; c < map.size(); ++c) {
        EXPECT_NEAR(f.jx[c], expected, 1e-8 * expected);
        EXPECT_NEAR(f.jy[c], 0.0, 1e-8 * expected);
    }
    for (std::size_t i = 0; i <= spec.grid_nx; ++i) EXPECT_NEAR(f.cross_section_current(spec, i), 1.0, 1e-8);
}

TEST(Conduction, ChargeIsConserved) {
    ChannelSpec spec;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto f = solve_current(random_binary(spec, seed), spec, 1.0);
        const double jmax = std::max(max_abs(f.jx_face), max_abs(f.jy_face));
        const double face_area = std::max(spec.dy(), spec.dx()) * spec.thickness;
        for (double d : f.divergence(spec)) EXPECT_LT(std::abs(d), 1e-8 * jmax * face_area);
        for (std::size_t i = 0; i <= spec.grid_nx; ++i) EXPECT_NEAR(f.cross_section_current(spec, i), 1.0, 1e-8);
    }
}

TEST(Conduction, MirrorSymmetricMapGivesMirroredCurrent) {
    ChannelSpec spec;
    ConductivityMap map(spec.grid_nx, spec.grid_ny, 1.0);
    // symmetric about the channel centreline y = length_y / 2
    for (std::size_t ix = 10; ix < 14; ++ix) {
        map.at(ix, 3) = map.at(ix, spec.grid_ny - 1 - 3) = 0.0;
        map.at(ix, 4) = map.at(ix, spec.grid_ny - 1 - 4) = 0.0;
    }
    const auto f = solve_current(map, spec, 1.0);
    const double scale = max_abs(f.jx);
    for (std::size_t iy = 0; iy < spec.grid_ny; ++iy) {
        const std::size_t my = spec.grid_ny - 1 - iy;
        for (std::size_t ix = 0; ix < spec.grid_nx; ++ix) {
            EXPECT_NEAR(f.jx[iy * spec.grid_nx + ix], f.jx[my * spec.grid_nx + ix], 1e-9 * scale);
            EXPECT_NEAR(f.jy[iy * spec.grid_nx + ix], -f.jy[my * spec.grid_nx + ix], 1e-9 * scale);
        }
    }
}

TEST(Conduction, CurrentAvoidsVoids) {
    ChannelSpec spec;
    ConductivityMap map(spec.grid_nx, spec.grid_ny, 1.0);
    map.at(15, 8) = 0.0;
    const auto f = solve_current(map, spec, 1.0);
    const double uniform = 1.0 / (spec.length_y * spec.thickness);
    EXPECT_LT(std::abs(f.jx[8 * spec.grid_nx + 15]), 1e-3 * uniform);
    EXPECT_GT(f.jx[7 * spec.grid_nx + 15], uniform);
}

TEST(Conduction, BlockedChannelIsInfeasible) {
    ChannelSpec spec;
    ConductivityMap map(spec.grid_nx, spec.grid_ny, 1.0);
    for (std::size_t iy = 0; iy < spec.grid_ny; ++iy) map.at(12, iy) = 0.0;
    EXPECT_THROW(solve_current(map, spec, 1.0), InfeasibleScene);
}

TEST(Conduction, RejectsWrongShape) {
    ChannelSpec spec;
    EXPECT_THROW(solve_current(ConductivityMap(10, 10), spec, 1.0), ShapeMismatch);
}

TEST(BiotSavart, CrossProductGeometry) {
    // +x current below the sensor plane: B_z changes sign across the line, B_y
    // is positive under it.
    ChannelSpec spec;
    const ConductivityMap map(spec.grid_nx, spec.grid_ny, 1.0);
    const auto f = solve_current(map, spec, 1.0);
    const double mid_x = 0.5 * spec.length_x;
    const Vec3 below_low_y = biot_savart_field(f, spec, {mid_x, 0.01, -0.005});
    const Vec3 below_high_y = biot_savart_field(f, spec, {mid_x, spec.length_y - 0.01, -0.005});
    const Vec3 centre = biot_savart_field(f, spec, {mid_x, 0.5 * spec.length_y, -0.005});
    EXPECT_GT(centre.y, 0.0);
    EXPECT_NEAR(centre.z, 0.0, 1e-9 * std::abs(centre.y));
    EXPECT_NEAR(centre.x, 0.0, 1e-12);
    EXPECT_NEAR(below_low_y.z, -below_high_y.z, 1e-9 * std::abs(below_low_y.z));
    EXPECT_LT(below_low_y.z, 0.0);
}

TEST(BiotSavart, FiniteWireWithinOnePercent) {
    ChannelSpec spec;
    spec.length_x = 0.06;
    spec.length_y = 0.003;
    spec.thickness = 0.001;
    spec.grid_nx = 60;
    spec.grid_ny = 3;
    CurrentField f;
    f.nx = spec.grid_nx;
    f.ny = spec.grid_ny;
    f.jx.assign(f.nx * f.ny, 0.0);
    f.jy.assign(f.nx * f.ny, 0.0);
    const double current = 1.5;
    for (std::size_t ix = 0; ix < f.nx; ++ix) f.jx[f.nx + ix] = current / (spec.dy() * spec.thickness);
    for (double cells : {3.0, 5.0, 10.0, 20.0}) {
        const double d = cells * spec.dx();
        for (double xs : {0.03, 0.012, 0.05}) {
            const Vec3 b = biot_savart_field(f, spec, {xs, 0.0015, -d});
            const double exact = finite_wire(current, d, 0.0, spec.length_x, xs);
            EXPECT_NEAR(b.y, exact, 0.01 * exact) << "d=" << cells << " cells, x=" << xs;
        }
    }
}

TEST(BiotSavart, ExactlyLinearInCurrent) {
    ChannelSpec spec;
    SensorArray arr;
    const auto map = random_binary(spec, 4);
    const auto a = forward(map, spec, arr, 1.0);
    const auto b = forward(map, spec, arr, 2.5);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 2.5 * a[i], 1e-12 * std::abs(b[i]) + 1e-300);
}

TEST(BiotSavart, FieldDecaysWithDistance) {
    ChannelSpec spec;
    const auto f = solve_current(random_binary(spec, 6), spec, 1.0);
    double prev = std::numeric_limits<double>::infinity();
    for (double d : {0.005, 0.01, 0.025, 0.05, 0.1}) {
        const Vec3 b = biot_savart_field(f, spec, {0.08, 0.035, -d});
        const double mag = std::sqrt(b.x * b.x + b.y * b.y + b.z * b.z);
        EXPECT_LT(mag, prev);
        prev = mag;
    }
}

TEST(BiotSavart, SensorTooCloseIsRejected) {
    ChannelSpec spec;
    const auto f = solve_current(ConductivityMap(spec.grid_nx, spec.grid_ny, 1.0), spec, 1.0);
    SensorArray arr;
    arr.d_sensor = 0.001;
    EXPECT_THROW(biot_savart(f, spec, arr), NumericalFailure);
}

TEST(BiotSavart, MeshRefinementConverges) {
    // Uniform channel: quadrature at 30x17 and 60x34 agrees within 2 %.
    // Disk scene: the voids themselves are re-rasterized, so only require
    // that the error against 120x68 shrinks with refinement.
    auto refine = [](ChannelSpec s, std::size_t f) {
        s.grid_nx *= f;
        s.grid_ny *= f;
        return s;
    };
    auto rel = [](const std::vector<double>& a, const std::vector<double>& b) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            num += (a[i] - b[i]) * (a[i] - b[i]);
            den += b[i] * b[i];
        }
        return std::sqrt(num / den);
    };
    const ChannelSpec c1, c2 = refine(c1, 2), c4 = refine(c1, 4);
    SensorArray arr;
    auto uniform = [&](const ChannelSpec& s) {
        return forward(ConductivityMap(s.grid_nx, s.grid_ny, 1.0), s, arr, 1.0);
    };
    EXPECT_LT(rel(uniform(c1), uniform(c2)), 0.02);
    const DiskSet d = sample_scene(c1, DiskConfig{}, 21);
    const auto r4 = forward(rasterize(c4, d), c4, arr, 1.0);
    const double e1 = rel(forward(rasterize(c1, d), c1, arr, 1.0), r4);
    const double e2 = rel(forward(rasterize(c2, d), c2, arr, 1.0), r4);
    EXPECT_LT(e2, e1);
}

TEST(Sensors, LatticeAndCheckerboard) {
    ChannelSpec spec;
    SensorArray arr;
    const auto p = arr.positions(spec);
    ASSERT_EQ(p.size(), 100u);
    EXPECT_NEAR(p[0].x, 0.008, 1e-15);
    EXPECT_NEAR(p[0].y, 0.0035, 1e-15);
    EXPECT_EQ(p[0].z, -0.005);
    const auto sel = checkerboard_selection(10, 10);
    ASSERT_EQ(sel.size(), 50u);
    for (std::size_t k : sel) EXPECT_EQ((k / 10 + k % 10) % 2, 0u);
    arr.selection = sel;
    EXPECT_EQ(arr.size(), 50u);
    EXPECT_EQ(forward(ConductivityMap(30, 17, 1.0), spec, arr, 1.0).size(), 50u);
}
