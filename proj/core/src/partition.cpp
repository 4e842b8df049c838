#include "mhla/partition.hpp"

#include <stdexcept>
#include <string>

namespace mhla {

BlockPartition make_partition(std::size_t seq_len, std::size_t num_blocks) {
    if (seq_len == 0 || num_blocks == 0) {
        throw std::invalid_argument("make_partition: seq_len and num_blocks must be positive");
    }
    if (seq_len % num_blocks != 0) {
        throw std::invalid_argument(
            "make_partition: sequence length " + std::to_string(seq_len) +
            " is not divisible by " + std::to_string(num_blocks) +
            " blocks; zero-pad the sequence to the next multiple (" +
            std::to_string((seq_len / num_blocks + 1) * num_blocks) +
            ") or choose a block count that divides it");
    }
    BlockPartition p;
    p.layout_ = LayoutKind::Linear1D;
    p.seq_len_ = seq_len;
    p.num_blocks_ = num_blocks;
    const std::size_t span = seq_len / num_blocks;
    p.block_of_.resize(seq_len);
    p.tokens_.resize(num_blocks);
    p.centroids_.resize(num_blocks);
    p.block_coords_.resize(num_blocks);
    for (std::size_t b = 0; b < num_blocks; ++b) {
        p.tokens_[b].reserve(span);
        double sum = 0.0;
        for (std::size_t t = b * span; t < (b + 1) * span; ++t) {
            p.block_of_[t] = b;
            p.tokens_[b].push_back(t);
            sum += static_cast<double>(t);
        }
        p.centroids_[b] = {sum / static_cast<double>(span), 0.0};
        p.block_coords_[b] = {static_cast<double>(b), 0.0};
    }
    return p;
}

BlockPartition make_grid_partition(std::size_t grid_h, std::size_t grid_w,
                                   std::size_t block_grid_h, std::size_t block_grid_w) {
    if (grid_h == 0 || grid_w == 0 || block_grid_h == 0 || block_grid_w == 0) {
        throw std::invalid_argument("make_grid_partition: all dimensions must be positive");
    }
    if (grid_h % block_grid_h != 0 || grid_w % block_grid_w != 0) {
        throw std::invalid_argument(
            "make_grid_partition: token grid " + std::to_string(grid_h) + "x" +
            std::to_string(grid_w) + " is not divisible by block grid " +
            std::to_string(block_grid_h) + "x" + std::to_string(block_grid_w) +
            "; zero-pad the grid so each dimension is a multiple of the block grid");
    }
    BlockPartition p;
    p.layout_ = LayoutKind::Grid2D;
    p.grid_h_ = grid_h;
    p.grid_w_ = grid_w;
    p.block_grid_h_ = block_grid_h;
    p.block_grid_w_ = block_grid_w;
    p.seq_len_ = grid_h * grid_w;
    p.num_blocks_ = block_grid_h * block_grid_w;
    const std::size_t tile_h = grid_h / block_grid_h;
    const std::size_t tile_w = grid_w / block_grid_w;
    p.block_of_.resize(p.seq_len_);
    p.tokens_.resize(p.num_blocks_);
    p.centroids_.resize(p.num_blocks_);
    p.block_coords_.resize(p.num_blocks_);
    for (std::size_t br = 0; br < block_grid_h; ++br) {
        for (std::size_t bc = 0; bc < block_grid_w; ++bc) {
            const std::size_t b = br * block_grid_w + bc;
            p.tokens_[b].reserve(tile_h * tile_w);
            for (std::size_t y = br * tile_h; y < (br + 1) * tile_h; ++y) {
                for (std::size_t x = bc * tile_w; x < (bc + 1) * tile_w; ++x) {
                    const std::size_t t = y * grid_w + x;
                    p.block_of_[t] = b;
                    p.tokens_[b].push_back(t);
                }
            }
            p.centroids_[b] = {
                static_cast<double>(br * tile_h) + (static_cast<double>(tile_h) - 1.0) / 2.0,
                static_cast<double>(bc * tile_w) + (static_cast<double>(tile_w) - 1.0) / 2.0};
            p.block_coords_[b] = {static_cast<double>(br), static_cast<double>(bc)};
        }
    }
    return p;
}

}  // namespace mhla
