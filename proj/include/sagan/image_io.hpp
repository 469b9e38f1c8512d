#ifndef SAGAN_IMAGE_IO_HPP
#define SAGAN_IMAGE_IO_HPP

#include <string>
#include <vector>

#include "sagan/tensor.hpp"

namespace sagan::imgio {

// Loads an image as (C,H,W) RGB in [-1,1], resized to h x w.
Tensor load_image(const std::string& path, int64_t h, int64_t w);

// Loads a grayscale mask as (1,H,W) with values in {0,1} (threshold 0.5),
// resized with nearest-neighbor.
Tensor load_mask(const std::string& path, int64_t h, int64_t w);

// Saves a (C,H,W) tensor in [-1,1] as PNG (C must be 1 or 3).
void save_image(const Tensor& chw, const std::string& path);

// Tiles cells[row][col] (all same (C,H,W)) into one PNG with 2px separators.
void save_grid(const std::vector<std::vector<Tensor>>& cells, const std::string& path);

// Minimal line plot (single series) for sweep outputs.
void save_line_plot(const std::vector<double>& xs, const std::vector<double>& ys,
                    const std::string& title, const std::string& path);

}  // namespace sagan::imgio

#endif  // SAGAN_IMAGE_IO_HPP
