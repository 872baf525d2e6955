#pragma once

// Random POC-cell geometries: non-conducting disks placed in a thin conducting
// channel, rasterized to a relative-conductivity grid and binarized.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "bubbletomo/errors.hpp"
#include "bubbletomo/rng.hpp"

namespace bubbletomo {

struct ChannelSpec {
    double length_x = 0.16;   // m
    double length_y = 0.07;   // m
    double thickness = 0.005; // m
    std::size_t grid_nx = 30;
    std::size_t grid_ny = 17;
    double sigma_ref = 3.3e6; // S/m, GaInSn

    std::size_t cells() const { return grid_nx * grid_ny; }
    double dx() const { return length_x / static_cast<double>(grid_nx); }
    double dy() const { return length_y / static_cast<double>(grid_ny); }

    void validate() const {
        require(length_x > 0.0 && length_y > 0.0 && thickness > 0.0,
                "channel dimensions must be positive");
        require(grid_nx >= 2 && grid_ny >= 2, "grid_nx and grid_ny must be at least 2");
        require(sigma_ref > 0.0, "sigma_ref must be positive");
    }
};

struct DiskConfig {
    std::size_t min_disks = 30;
    std::size_t max_disks = 120;
    double r_min = 0.002;  // m
    double r_max = 0.0025; // m
    std::size_t max_attempts = 1000;  // per disk

    void validate() const {
        require(min_disks <= max_disks, "min_disks must not exceed max_disks");
        require(r_min > 0.0 && r_max >= r_min, "disk radii must satisfy 0 < r_min <= r_max");
        require(max_attempts >= 1, "max_attempts must be at least 1");
    }
};

struct Disk {
    double x = 0.0;
    double y = 0.0;
    double r = 0.0;

    bool contains(double px, double py) const {
        const double ddx = px - x;
        const double ddy = py - y;
        return ddx * ddx + ddy * ddy <= r * r;
    }
    friend bool operator==(const Disk&, const Disk&) = default;
};

struct DiskSet {
    std::vector<Disk> disks;

    std::size_t count() const { return disks.size(); }
    friend bool operator==(const DiskSet&, const DiskSet&) = default;
};

/// Relative conductivity on a grid_nx x grid_ny lattice, stored row-major with
/// rows along y: index = iy * nx + ix.
struct ConductivityMap {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::vector<double> values;
    bool binary = false;

    ConductivityMap() = default;
    ConductivityMap(std::size_t nx_, std::size_t ny_, double fill = 1.0)
        : nx(nx_), ny(ny_), values(nx_ * ny_, fill) {}

    std::size_t size() const { return values.size(); }
    double& at(std::size_t ix, std::size_t iy) { return values[iy * nx + ix]; }
    double at(std::size_t ix, std::size_t iy) const { return values[iy * nx + ix]; }
    friend bool operator==(const ConductivityMap&, const ConductivityMap&) = default;
};

/// Draws a disk count uniformly from [min_disks, max_disks], then each disk by
/// rejection: radius ~ U[r_min, r_max], centre ~ U(channel), accepted when the
/// whole disk lies inside the channel. Overlaps are allowed.
inline DiskSet sample_scene(const ChannelSpec& spec, const DiskConfig& cfg, std::uint64_t seed) {
    spec.validate();
    cfg.validate();
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> count_dist(cfg.min_disks, cfg.max_disks);
    std::uniform_real_distribution<double> radius_dist(cfg.r_min, cfg.r_max);
    std::uniform_real_distribution<double> x_dist(0.0, spec.length_x);
    std::uniform_real_distribution<double> y_dist(0.0, spec.length_y);

    DiskSet out;
    const std::size_t count = count_dist(rng);
    out.disks.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
            const double r = radius_dist(rng);
            const double cx = x_dist(rng);
            const double cy = y_dist(rng);
            if (cx - r >= 0.0 && cx + r <= spec.length_x && cy - r >= 0.0 &&
                cy + r <= spec.length_y) {
                out.disks.push_back({cx, cy, r});
                placed = true;
            }
        }
        if (!placed) {
            throw InfeasibleScene("could not place disk " + std::to_string(i) + " inside the channel after " +
                                  std::to_string(cfg.max_attempts) + " attempts");
        }
    }
    return out;
}

/// Area-fraction rasterization: each cell's value is the fraction of its
/// subsample x subsample midpoints not covered by any disk.
inline ConductivityMap rasterize(const ChannelSpec& spec, const DiskSet& disks, std::size_t subsample = 8) {
    spec.validate();
    require(subsample >= 1, "subsample must be at least 1");
    const std::size_t fine_nx = spec.grid_nx * subsample;
    const std::size_t fine_ny = spec.grid_ny * subsample;
    const double hx = spec.length_x / static_cast<double>(fine_nx);
    const double hy = spec.length_y / static_cast<double>(fine_ny);

    std::vector<std::uint8_t> covered(fine_nx * fine_ny, 0);
    auto clamp_index = [](double v, std::size_t n) {
        if (v < 0.0) {
            return std::size_t{0};
        }
        return std::min(static_cast<std::size_t>(v), n);
    };
    for (const Disk& d : disks.disks) {
        const std::size_t i0 = clamp_index(std::floor((d.x - d.r) / hx), fine_nx);
        const std::size_t i1 = clamp_index(std::ceil((d.x + d.r) / hx) + 1.0, fine_nx);
        const std::size_t j0 = clamp_index(std::floor((d.y - d.r) / hy), fine_ny);
        const std::size_t j1 = clamp_index(std::ceil((d.y + d.r) / hy) + 1.0, fine_ny);
        for (std::size_t j = j0; j < j1; ++j) {
            const double py = (static_cast<double>(j) + 0.5) * hy;
            for (std::size_t i = i0; i < i1; ++i) {
                const double px = (static_cast<double>(i) + 0.5) * hx;
                if (d.contains(px, py)) {
                    covered[j * fine_nx + i] = 1;
                }
            }
        }
    }

    ConductivityMap map(spec.grid_nx, spec.grid_ny, 1.0);
    const double per_cell = static_cast<double>(subsample * subsample);
    for (std::size_t iy = 0; iy < spec.grid_ny; ++iy) {
        for (std::size_t ix = 0; ix < spec.grid_nx; ++ix) {
            std::size_t hits = 0;
            for (std::size_t b = 0; b < subsample; ++b) {
                const std::size_t row = (iy * subsample + b) * fine_nx + ix * subsample;
                for (std::size_t a = 0; a < subsample; ++a) {
                    hits += covered[row + a];
                }
            }
            map.at(ix, iy) = 1.0 - static_cast<double>(hits) / per_cell;
        }
    }
    return map;
}

/// value < threshold -> 0, otherwise 1.
inline ConductivityMap binarize(const ConductivityMap& map, double threshold = 0.25) {
    ConductivityMap out = map;
    for (double& v : out.values) {
        v = v < threshold ? 0.0 : 1.0;
    }
    out.binary = true;
    return out;
}

}  // namespace bubbletomo
