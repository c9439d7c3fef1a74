#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tijepa/encoders.hpp"
#include "tijepa/errors.hpp"
#include "tijepa/rng.hpp"

namespace tijepa {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    bool operator==(const Range&) const = default;
};

// Axis-aligned rectangle of patches on a grid.
struct BlockMask {
    GridSize grid;
    std::size_t row = 0, col = 0;       // origin in patches
    std::size_t height = 0, width = 0;  // extent in patches
    std::size_t requested_area = 0;     // round(scale·N) before clamping to the grid

    std::size_t area() const { return height * width; }

    bool contains(std::size_t index) const {
        const std::size_t r = index / grid.cols, c = index % grid.cols;
        return r >= row && r < row + height && c >= col && c < col + width;
    }

    // Patch indices of the rectangle, ascending (row-major).
    std::vector<std::size_t> indices() const {
        std::vector<std::size_t> out;
        out.reserve(area());
        for (std::size_t r = row; r < row + height; ++r)
            for (std::size_t c = col; c < col + width; ++c) out.push_back(r * grid.cols + c);
        return out;
    }

    bool operator==(const BlockMask&) const = default;
};

struct MaskSet {
    BlockMask context_block;              // sampled rectangle before overlap removal
    std::vector<std::size_t> context;     // context_block minus every target index, ascending
    std::vector<BlockMask> targets;

    bool operator==(const MaskSet&) const = default;
};

struct MaskingConfig {
    std::size_t num_targets = 4;
    Range context_scale{0.85, 1.0};
    Range target_scale{0.15, 0.2};
    Range context_aspect{1.0, 1.0};
    Range target_aspect{0.75, 1.5};
    std::size_t max_retries = 20;
};

// Draws scale s ~ U[lo, hi] and aspect a ~ U[alo, ahi], requests
// n = round(s·N) patches, sets h = clamp(round(sqrt(n·a)), 1, rows) and
// w = clamp(round(n/h), 1, cols), then places the block uniformly.
inline BlockMask sample_block(GridSize grid, Range scale, Range aspect, Rng& rng) {
    if (grid.count() == 0) throw ShapeError("sample_block: degenerate grid");
    if (!(scale.lo > 0.0 && scale.lo <= scale.hi && scale.hi <= 1.0)) {
        throw ConfigError("sample_block: scale range must satisfy 0 < lo <= hi <= 1");
    }
    if (!(aspect.lo > 0.0 && aspect.lo <= aspect.hi)) {
        throw ConfigError("sample_block: aspect range must satisfy 0 < lo <= hi");
    }
    const double s = rng.uniform(scale.lo, scale.hi);
    const double a = rng.uniform(aspect.lo, aspect.hi);
    const auto n = static_cast<std::size_t>(std::llround(s * static_cast<double>(grid.count())));
    const auto h_raw = static_cast<long long>(std::llround(std::sqrt(static_cast<double>(n) * a)));
    const std::size_t h = static_cast<std::size_t>(std::clamp<long long>(h_raw, 1, static_cast<long long>(grid.rows)));
    const auto w_raw = static_cast<long long>(std::llround(static_cast<double>(n) / static_cast<double>(h)));
    const std::size_t w = static_cast<std::size_t>(std::clamp<long long>(w_raw, 1, static_cast<long long>(grid.cols)));

    BlockMask b;
    b.grid = grid;
    b.height = h;
    b.width = w;
    b.requested_area = n;
    b.row = static_cast<std::size_t>(rng.below(grid.rows - h + 1));
    b.col = static_cast<std::size_t>(rng.below(grid.cols - w + 1));
    return b;
}

// Samples M target blocks (which may overlap one another) and one context
// block, then removes every target patch from the context. An empty context
// triggers a full resample, up to max_retries extra attempts.
inline MaskSet sample_masks(GridSize grid, const MaskingConfig& cfg, Rng& rng) {
    if (cfg.num_targets == 0) throw ConfigError("sample_masks: at least one target block is required");
    for (std::size_t attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        MaskSet ms;
        std::vector<char> is_target(grid.count(), 0);
        for (std::size_t i = 0; i < cfg.num_targets; ++i) {
            ms.targets.push_back(sample_block(grid, cfg.target_scale, cfg.target_aspect, rng));
            for (auto idx : ms.targets.back().indices()) is_target[idx] = 1;
        }
        ms.context_block = sample_block(grid, cfg.context_scale, cfg.context_aspect, rng);
        for (auto idx : ms.context_block.indices()) {
            if (!is_target[idx]) ms.context.push_back(idx);
        }
        if (!ms.context.empty()) return ms;
    }
    throw SamplingError("sample_masks: context block empty after " + std::to_string(cfg.max_retries) + " retries");
}

// One line per grid row: 'T' for target patches, 'C' for context, '.' otherwise.
inline std::string render_masks(const MaskSet& ms) {
    const GridSize grid = ms.context_block.grid;
    std::string cells(grid.count(), '.');
    for (auto idx : ms.context) cells[idx] = 'C';
    for (const auto& t : ms.targets)
        for (auto idx : t.indices()) cells[idx] = 'T';
    std::string out;
    for (std::size_t r = 0; r < grid.rows; ++r) {
        out.append(cells, r * grid.cols, grid.cols);
        out.push_back('\n');
    }
    return out;
}

} // namespace tijepa
