// SPDX-License-Identifier: Apache-2.0

#include "epiview/pgm.hpp"

#include <fstream>
#include <string>

#include "epiview/error.hpp"

namespace epiview {

std::vector<std::uint8_t> encode_pgm(std::size_t width, std::size_t height,
                                     const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != width * height) {
    fail(ErrorCode::ShapeMismatch, "pixel count does not match the image size");
  }
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels) {
  const auto bytes = encode_pgm(width, height, pixels);
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(ErrorCode::IoError, "write failed: " + path.string());
}

std::vector<std::uint8_t> mask_to_pgm(const BinaryMatrix& mask) {
  std::vector<std::uint8_t> px(mask.bits().size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask.bits()[i] ? 255 : 0;
  return encode_pgm(mask.cols(), mask.rows(), px);
}

}  // namespace epiview
