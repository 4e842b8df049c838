#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace mhla {

enum class LayoutKind { Linear1D, Grid2D };

/// Non-overlapping assignment of tokens to blocks over a 1D sequence or a
/// 2D token grid. Grid blocks are contiguous rectangular tiles, never a flat
/// 1D chop of the grid. Immutable after construction.
class BlockPartition {
public:
    LayoutKind layout() const noexcept { return layout_; }
    std::size_t seq_len() const noexcept { return seq_len_; }
    std::size_t num_blocks() const noexcept { return num_blocks_; }

    std::size_t block_of(std::size_t token) const { return block_of_[token]; }
    std::size_t block_size(std::size_t block) const { return tokens_[block].size(); }
    const std::vector<std::size_t>& tokens_of(std::size_t block) const { return tokens_[block]; }

    /// Arithmetic mean of the block's token-grid coordinates:
    /// {index, 0} for linear-1d, {row, col} for grid-2d.
    std::array<double, 2> centroid(std::size_t block) const { return centroids_[block]; }

    /// Block position in block-grid units: {b, 0} for linear-1d,
    /// {block_row, block_col} for grid-2d. Locality distances use these.
    std::array<double, 2> block_coord(std::size_t block) const { return block_coords_[block]; }

    std::size_t grid_height() const noexcept { return grid_h_; }
    std::size_t grid_width() const noexcept { return grid_w_; }
    std::size_t block_grid_height() const noexcept { return block_grid_h_; }
    std::size_t block_grid_width() const noexcept { return block_grid_w_; }

    friend BlockPartition make_partition(std::size_t seq_len, std::size_t num_blocks);
    friend BlockPartition make_grid_partition(std::size_t grid_h, std::size_t grid_w,
                                              std::size_t block_grid_h, std::size_t block_grid_w);

private:
    BlockPartition() = default;

    LayoutKind layout_ = LayoutKind::Linear1D;
    std::size_t seq_len_ = 0;
    std::size_t num_blocks_ = 0;
    std::size_t grid_h_ = 0, grid_w_ = 0;
    std::size_t block_grid_h_ = 0, block_grid_w_ = 0;
    std::vector<std::size_t> block_of_;
    std::vector<std::vector<std::size_t>> tokens_;
    std::vector<std::array<double, 2>> centroids_;
    std::vector<std::array<double, 2>> block_coords_;
};

/// Linear-1d partition into num_blocks equal contiguous spans.
/// seq_len must be divisible by num_blocks.
BlockPartition make_partition(std::size_t seq_len, std::size_t num_blocks);

/// Grid-2d partition of an (grid_h x grid_w) token grid into a
/// (block_grid_h x block_grid_w) grid of equal rectangular tiles.
/// Token index is row-major over the grid.
BlockPartition make_grid_partition(std::size_t grid_h, std::size_t grid_w,
                                   std::size_t block_grid_h, std::size_t block_grid_w);

}  // namespace mhla
