#include "mct/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace mct::io {

namespace {

constexpr char kMagic[8] = {'M', 'C', 'T', 'G', 'R', 'I', 'D', '1'};

static_assert(std::endian::native == std::endian::little, "payload codec assumes little endian");

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32le") return 4;
  if (dtype == "u8") return 1;
  throw FormatError("unknown dtype '" + dtype + "'");
}

void expect_kind(const Container& c, const std::string& kind) {
  if (c.kind != kind) throw FormatError("expected kind '" + kind + "', found '" + c.kind + "'");
}

int dim(const Container& c, std::size_t i) {
  if (c.shape[i] < 1 || c.shape[i] > (1 << 24)) throw FormatError("shape/header mismatch");
  return static_cast<int>(c.shape[i]);
}

}  // namespace

std::size_t Container::element_count() const {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  nlohmann::json header = {{"dtype", c.dtype}, {"shape", c.shape}, {"kind", c.kind}, {"meta", c.meta}};
  const std::string text = header.dump();
  if (c.payload.size() != c.element_count() * dtype_size(c.dtype))
    throw FormatError("payload size does not match shape");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  const auto len = static_cast<std::uint32_t>(text.size());
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(c.payload.data()),
            static_cast<std::streamsize>(c.payload.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw FormatError("bad magic");
  std::uint32_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) throw FormatError("truncated header");
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw FormatError("truncated header");

  Container c;
  try {
    auto header = nlohmann::json::parse(text);
    c.dtype = header.at("dtype").get<std::string>();
    c.shape = header.at("shape").get<std::vector<std::int64_t>>();
    c.kind = header.at("kind").get<std::string>();
    c.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad header: ") + e.what());
  }
  for (auto d : c.shape)
    if (d < 0) throw FormatError("shape/header mismatch");
  const std::size_t expected = c.element_count() * dtype_size(c.dtype);
  c.payload.resize(expected);
  if (!in.read(reinterpret_cast<char*>(c.payload.data()), static_cast<std::streamsize>(expected)))
    throw FormatError("payload shorter than header shape");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after payload");
  return c;
}

std::vector<std::uint8_t> encode_f32(std::span<const double> values) {
  std::vector<std::uint8_t> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(bytes.data() + 4 * i, &f, 4);
  }
  return bytes;
}

std::vector<double> decode_f32(const std::vector<std::uint8_t>& bytes) {
  std::vector<double> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + 4 * i, 4);
    values[i] = f;
  }
  return values;
}

void write_image(const std::filesystem::path& path, const GridImage& image) {
  Container c{"f32le", {image.n2(), image.n1()}, "image", nlohmann::json::object(),
              encode_f32(image.values())};
  write_container(path, c);
}

GridImage read_image(const std::filesystem::path& path) {
  auto c = read_container(path);
  expect_kind(c, "image");
  if (c.dtype != "f32le" || c.shape.size() != 2) throw FormatError("shape/header mismatch");
  return GridImage(dim(c, 1), dim(c, 0), decode_f32(c.payload));
}

void write_sinogram(const std::filesystem::path& path, const Sinogram& sino) {
  std::vector<double> detectors(sino.m1());
  for (int k = 0; k < sino.m1(); ++k) detectors[k] = sino.detector(k);
  std::vector<int> mask(sino.mask().begin(), sino.mask().end());
  nlohmann::json meta = {{"detectors", detectors}, {"angles", sino.angles()}, {"mask", mask}};
  write_container(path, Container{"f32le", {sino.m2(), sino.m1()}, "sinogram", meta,
                                  encode_f32(sino.values())});
}

Sinogram read_sinogram(const std::filesystem::path& path) {
  auto c = read_container(path);
  expect_kind(c, "sinogram");
  if (c.dtype != "f32le" || c.shape.size() != 2) throw FormatError("shape/header mismatch");
  std::vector<double> angles;
  std::vector<int> mask_int;
  try {
    angles = c.meta.at("angles").get<std::vector<double>>();
    mask_int = c.meta.at("mask").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad sinogram meta: ") + e.what());
  }
  const int m1 = dim(c, 1);
  const int m2 = dim(c, 0);
  if (static_cast<int>(angles.size()) != m2 || static_cast<int>(mask_int.size()) != m2)
    throw FormatError("shape/header mismatch");
  std::vector<bool> mask(mask_int.begin(), mask_int.end());
  Sinogram s(m1, std::move(angles), std::move(mask));
  auto values = decode_f32(c.payload);
  std::copy(values.begin(), values.end(), s.values().begin());
  return s;
}

void write_dwf(const std::filesystem::path& path, const DigitalWavefrontSet& dwf) {
  Container c;
  c.kind = "dwf";
  c.shape = {dwf.n2(), dwf.n1(), dwf.bins()};
  if (dwf.mode() == DwfMode::hard) {
    c.dtype = "u8";
    c.meta = {{"mode", "hard"}};
    c.payload.resize(dwf.size());
    for (std::size_t i = 0; i < dwf.size(); ++i) c.payload[i] = dwf.data()[i] > 0.5 ? 1 : 0;
  } else {
    c.dtype = "f32le";
    c.meta = {{"mode", "soft"}};
    c.payload = encode_f32(dwf.data());
  }
  write_container(path, c);
}

DigitalWavefrontSet read_dwf(const std::filesystem::path& path) {
  auto c = read_container(path);
  expect_kind(c, "dwf");
  if (c.shape.size() != 3) throw FormatError("shape/header mismatch");
  const std::string mode = c.meta.value("mode", c.dtype == "u8" ? "hard" : "soft");
  const bool hard = mode == "hard";
  if (hard != (c.dtype == "u8")) throw FormatError("dwf mode does not match dtype");
  DigitalWavefrontSet dwf(dim(c, 1), dim(c, 0), dim(c, 2), hard ? DwfMode::hard : DwfMode::soft);
  if (hard) {
    for (std::size_t i = 0; i < dwf.size(); ++i) {
      if (c.payload[i] > 1) throw FormatError("hard dwf byte outside {0,1}");
      dwf.data()[i] = c.payload[i];
    }
  } else {
    auto values = decode_f32(c.payload);
    std::copy(values.begin(), values.end(), dwf.data().begin());
  }
  dwf.validate();
  return dwf;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
}

void write_pgm(const std::filesystem::path& path, const GridImage& image) {
  auto v = image.values();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << image.n1() << " " << image.n2() << "\n255\n";
  // PGM rows run top to bottom; world x2 grows upward.
  for (int i2 = image.n2() - 1; i2 >= 0; --i2) {
    for (int i1 = 0; i1 < image.n1(); ++i1) {
      const double t = range > 0 ? (image(i1, i2) - *lo) / range : 0.0;
      out.put(static_cast<char>(std::clamp(static_cast<int>(std::lround(255.0 * t)), 0, 255)));
    }
  }
}

std::array<std::filesystem::path, 3> write_dwf_overlay(const std::filesystem::path& stem,
                                                       const DigitalWavefrontSet& dwf, const GridImage* background) {
  const int n1 = dwf.n1(), n2 = dwf.n2(), M = dwf.bins();
  if (background && (background->n1() != n1 || background->n2() != n2))
    throw ShapeError("overlay background does not match the DWF grid");
  double lo = 0, hi = 0;
  if (background) {
    const auto [a, b] = std::minmax_element(background->values().begin(), background->values().end());
    lo = *a, hi = *b;
  }
  std::array<std::vector<std::uint8_t>, 3> rgb;
  for (auto& c : rgb) c.resize(static_cast<std::size_t>(n1) * n2);
  for (int i2 = 0; i2 < n2; ++i2)
    for (int i1 = 0; i1 < n1; ++i1) {
      const std::size_t out = static_cast<std::size_t>(n2 - 1 - i2) * n1 + i1;
      double c = 0, s = 0, peak = 0;
      for (int k = 0; k < M; ++k) {
        const double w = dwf(i1, i2, k);
        c += w * std::cos(2 * dwf.bin_angle(k));
        s += w * std::sin(2 * dwf.bin_angle(k));
        peak = std::max(peak, w);
      }
      std::array<double, 3> col{0, 0, 0};
      if (background && hi > lo) col.fill(0.5 * (background->operator()(i1, i2) - lo) / (hi - lo));
      if (peak > 0) {
        // hue in [0, 6) from the doubled angle, full saturation
        double h = std::atan2(s, c) / std::numbers::pi * 3.0;
        if (h < 0) h += 6.0;
        const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
        const int sector = std::min(static_cast<int>(h), 5);
        static constexpr int order[6][3] = {{0, 1, 2}, {1, 0, 2}, {2, 0, 1}, {2, 1, 0}, {1, 2, 0}, {0, 2, 1}};
        std::array<double, 3> hue{};
        hue[order[sector][0]] = 1.0;
        hue[order[sector][1]] = x;
        hue[order[sector][2]] = 0.0;
        for (int ch = 0; ch < 3; ++ch) col[ch] = (1.0 - peak) * col[ch] + peak * hue[ch];
      }
      for (int ch = 0; ch < 3; ++ch)
        rgb[ch][out] = static_cast<std::uint8_t>(std::clamp(static_cast<int>(std::lround(255.0 * col[ch])), 0, 255));
    }
  std::array<std::filesystem::path, 3> paths;
  const char* suffix[3] = {"_r.pgm", "_g.pgm", "_b.pgm"};
  for (int ch = 0; ch < 3; ++ch) {
    paths[ch] = stem;
    paths[ch] += suffix[ch];
    std::ofstream out(paths[ch], std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + paths[ch].string() + "' for writing");
    out << "P5\n" << n1 << " " << n2 << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb[ch].data()), static_cast<std::streamsize>(rgb[ch].size()));
  }
  return paths;
}

}  // namespace mct::io
