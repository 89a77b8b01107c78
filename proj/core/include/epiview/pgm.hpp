// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "epiview/geometry.hpp"

namespace epiview {

/// Binary 8-bit greymap (P5, maxval 255), row-major pixels.
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels);
std::vector<std::uint8_t> encode_pgm(std::size_t width, std::size_t height,
                                     const std::vector<std::uint8_t>& pixels);

/// Mask as an image: rows are reference tokens, columns support tokens,
/// set entries white.
std::vector<std::uint8_t> mask_to_pgm(const BinaryMatrix& mask);

}  // namespace epiview
