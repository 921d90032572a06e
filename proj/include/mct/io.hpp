#pragma once

#include <cstdint>
#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mct/grid.hpp"

namespace mct::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Container layout: "MCTGRID1", u32 little-endian header length, UTF-8 JSON
// header {"dtype","shape","kind","meta"}, raw row-major payload.
struct Container {
  std::string dtype;  // "f32le" | "u8"
  std::vector<std::int64_t> shape;
  std::string kind;   // "image" | "sinogram" | "dwf" | "weights"
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::uint8_t> payload;

  std::size_t element_count() const;
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_f32(std::span<const double> values);
std::vector<double> decode_f32(const std::vector<std::uint8_t>& bytes);

void write_image(const std::filesystem::path& path, const GridImage& image);
GridImage read_image(const std::filesystem::path& path);

void write_sinogram(const std::filesystem::path& path, const Sinogram& sino);
Sinogram read_sinogram(const std::filesystem::path& path);

void write_dwf(const std::filesystem::path& path, const DigitalWavefrontSet& dwf);
DigitalWavefrontSet read_dwf(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

// 8-bit binary PGM with min/max windowing.
void write_pgm(const std::filesystem::path& path, const GridImage& image);

// Orientation-hue overlay as three PGMs <stem>_r.pgm, <stem>_g.pgm, <stem>_b.pgm.
// Hue follows the mean orientation of the active bins, brightness their
// strongest value; the optional background shows through at half intensity.
std::array<std::filesystem::path, 3> write_dwf_overlay(const std::filesystem::path& stem,
                                                       const DigitalWavefrontSet& dwf,
                                                       const GridImage* background = nullptr);

}  // namespace mct::io
