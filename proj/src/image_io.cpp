#include "podo/image_io.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

#include "podo/error.hpp"

namespace podo {

namespace {

constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
constexpr double kMetersPerInch = 0.0254;

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
         (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

void put_be32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

Bytes phys_chunk(double dpi) {
  const auto ppm = static_cast<std::uint32_t>(std::lround(dpi / kMetersPerInch));
  Bytes chunk;
  put_be32(chunk, 9);
  const std::size_t type_at = chunk.size();
  for (char c : std::string_view("pHYs")) chunk.push_back(static_cast<std::uint8_t>(c));
  put_be32(chunk, ppm);
  put_be32(chunk, ppm);
  chunk.push_back(1);  // unit: metre
  const auto crc = crc32(0L, chunk.data() + type_at, static_cast<uInt>(chunk.size() - type_at));
  put_be32(chunk, static_cast<std::uint32_t>(crc));
  return chunk;
}

Bytes encode_png_raw(int width, int height, double dpi, const std::uint8_t* data,
                     png_uint_32 format) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, data, 0, nullptr)) {
    fail(Errc::Io, std::string("png encode failed: ") + image.message);
  }
  Bytes buf(size);
  if (!png_image_write_to_memory(&image, buf.data(), &size, 0, data, 0, nullptr)) {
    fail(Errc::Io, std::string("png encode failed: ") + image.message);
  }
  buf.resize(size);

  // Splice pHYs after IHDR (signature 8 + IHDR 25 bytes).
  const std::size_t after_ihdr = 8 + 25;
  const Bytes chunk = phys_chunk(dpi);
  buf.insert(buf.begin() + static_cast<std::ptrdiff_t>(after_ihdr), chunk.begin(), chunk.end());
  return buf;
}

double snap_dpi(double dpi) {
  const double r = std::round(dpi);
  return std::abs(dpi - r) < 0.05 ? r : dpi;
}

// Netpbm plain-format tokenizer: whitespace separated, '#' to end of line.
class PnmTokens {
 public:
  explicit PnmTokens(std::string_view text) : text_(text) {}

  std::string_view next() {
    for (;;) {
      while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      if (pos_ < text_.size() && text_[pos_] == '#') {
        const std::size_t eol = text_.find('\n', pos_);
        const std::string_view comment =
            text_.substr(pos_, eol == std::string_view::npos ? std::string_view::npos : eol - pos_);
        parse_dpi_comment(comment);
        pos_ = eol == std::string_view::npos ? text_.size() : eol;
        continue;
      }
      break;
    }
    if (pos_ >= text_.size()) fail(Errc::DecodeError, "truncated netpbm data");
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
           text_[pos_] != '#') {
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  int next_int() {
    const auto tok = next();
    int v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      fail(Errc::DecodeError, "bad netpbm integer");
    }
    return v;
  }

  std::optional<double> dpi() const { return dpi_; }

 private:
  void parse_dpi_comment(std::string_view c) {
    constexpr std::string_view key = "dpi";
    const auto at = c.find(key);
    if (at == std::string_view::npos) return;
    std::size_t p = at + key.size();
    while (p < c.size() && (c[p] == ' ' || c[p] == '=' || c[p] == ':')) ++p;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(c.data() + p, c.data() + c.size(), v);
    if (ec == std::errc() && v > 0.0) dpi_ = v;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::optional<double> dpi_;
};

}  // namespace

Bytes encode_png(const RasterImage& img) {
  return encode_png_raw(img.width(), img.height(), img.dpi(), img.data().data(), PNG_FORMAT_RGB);
}

Bytes encode_png(const GrayImage& img) {
  return encode_png_raw(img.width(), img.height(), img.dpi(), img.data().data(), PNG_FORMAT_GRAY);
}

std::optional<double> png_dpi(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0) return std::nullopt;
  std::size_t pos = 8;
  while (pos + 12 <= bytes.size()) {
    const std::uint32_t len = read_be32(bytes.data() + pos);
    const auto* type = bytes.data() + pos + 4;
    if (pos + 12 + len > bytes.size()) break;
    if (std::memcmp(type, "pHYs", 4) == 0 && len == 9) {
      const auto* d = type + 4;
      const std::uint32_t ppx = read_be32(d);
      if (d[8] == 1 && ppx > 0) return snap_dpi(ppx * kMetersPerInch);
      return std::nullopt;
    }
    if (std::memcmp(type, "IDAT", 4) == 0) break;
    pos += 12 + len;
  }
  return std::nullopt;
}

RasterImage decode_png(std::span<const std::uint8_t> bytes, double fallback_dpi) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    fail(Errc::DecodeError, std::string("png decode failed: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  if (image.width == 0 || image.height == 0) {
    png_image_free(&image);
    fail(Errc::DecodeError, "png has zero dimension");
  }
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
  // Composite any alpha onto white, the colour of an open scanner lid.
  png_color background{255, 255, 255};
  if (!png_image_finish_read(&image, &background, rgb.data(), 0, nullptr)) {
    fail(Errc::DecodeError, std::string("png decode failed: ") + image.message);
  }
  const double dpi = png_dpi(bytes).value_or(fallback_dpi);
  return RasterImage(static_cast<int>(image.width), static_cast<int>(image.height), dpi,
                     std::move(rgb));
}

std::string encode_ppm(const RasterImage& img) {
  std::string out = "P3\n# dpi " + std::to_string(static_cast<int>(std::lround(img.dpi()))) +
                    "\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                    "\n255\n";
  const auto px = img.data();
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const std::size_t i = 3 * (static_cast<std::size_t>(y) * img.width() + x);
      if (x) out += ' ';
      out += std::to_string(px[i]) + ' ' + std::to_string(px[i + 1]) + ' ' +
             std::to_string(px[i + 2]);
    }
    out += '\n';
  }
  return out;
}

std::string encode_pgm(const GrayImage& img) {
  std::string out = "P2\n# dpi " + std::to_string(static_cast<int>(std::lround(img.dpi()))) +
                    "\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                    "\n255\n";
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (x) out += ' ';
      out += std::to_string(img.at(x, y));
    }
    out += '\n';
  }
  return out;
}

namespace {

struct NetpbmData {
  bool color = false;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> samples;
  std::optional<double> dpi;
};

NetpbmData parse_netpbm(std::string_view text) {
  PnmTokens tok(text);
  const auto magic = tok.next();
  NetpbmData d;
  if (magic == "P3") {
    d.color = true;
  } else if (magic != "P2") {
    fail(Errc::DecodeError, "unsupported netpbm magic");
  }
  d.width = tok.next_int();
  d.height = tok.next_int();
  const int maxval = tok.next_int();
  if (d.width < 1 || d.height < 1 || maxval < 1 || maxval > 65535) {
    fail(Errc::DecodeError, "bad netpbm header");
  }
  const std::size_t n = static_cast<std::size_t>(d.width) * d.height * (d.color ? 3 : 1);
  d.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int v = tok.next_int();
    if (v < 0 || v > maxval) fail(Errc::DecodeError, "netpbm sample out of range");
    d.samples[i] = static_cast<std::uint8_t>(maxval == 255 ? v : (v * 255 + maxval / 2) / maxval);
  }
  d.dpi = tok.dpi();
  return d;
}

}  // namespace

RasterImage decode_netpbm(std::string_view text, double dpi) {
  NetpbmData d = parse_netpbm(text);
  if (!d.color) {
    std::vector<std::uint8_t> rgb(d.samples.size() * 3);
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = d.samples[i];
    }
    d.samples = std::move(rgb);
  }
  return RasterImage(d.width, d.height, d.dpi.value_or(dpi), std::move(d.samples));
}

GrayImage decode_pgm(std::string_view text, double dpi) {
  NetpbmData d = parse_netpbm(text);
  if (d.color) fail(Errc::DecodeError, "expected a P2 gray image");
  return GrayImage(d.width, d.height, d.dpi.value_or(dpi), std::move(d.samples));
}

RasterImage decode_image(std::span<const std::uint8_t> bytes, double fallback_dpi) {
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) {
    return decode_png(bytes, fallback_dpi);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '2' || bytes[1] == '3')) {
    return decode_netpbm(
        std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
        fallback_dpi);
  }
  fail(Errc::DecodeError, "unrecognized image format");
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::NotFound, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::Io, "short write to " + path.string());
}

RasterImage read_image(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  double fallback = kDefaultDpi;
  auto sidecar = path;
  sidecar += ".dpi";
  if (std::filesystem::exists(sidecar)) {
    std::ifstream in(sidecar);
    double v = 0.0;
    if (in >> v && v > 0.0) fallback = v;
  }
  return decode_image(bytes, fallback);
}

void write_image(const std::filesystem::path& path, const RasterImage& img) {
  const auto ext = path.extension().string();
  if (ext == ".ppm") {
    const std::string text = encode_ppm(img);
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    return;
  }
  write_file(path, encode_png(img));
}

RasterImage resize_area(const RasterImage& img, int width, int height) {
  if (width < 1 || height < 1) fail(Errc::InvalidArgument, "resize target must be positive");
  const double sx = static_cast<double>(img.width()) / width;
  const double sy = static_cast<double>(img.height()) / height;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(width) * height * 3);
  for (int oy = 0; oy < height; ++oy) {
    const double y0 = oy * sy;
    const double y1 = y0 + sy;
    for (int ox = 0; ox < width; ++ox) {
      const double x0 = ox * sx;
      const double x1 = x0 + sx;
      double acc[3] = {0, 0, 0};
      double wsum = 0.0;
      for (int y = static_cast<int>(y0); y < std::min<int>(img.height(), static_cast<int>(std::ceil(y1))); ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        if (wy <= 0) continue;
        for (int x = static_cast<int>(x0); x < std::min<int>(img.width(), static_cast<int>(std::ceil(x1))); ++x) {
          const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          if (wx <= 0) continue;
          const Rgb p = img.at(x, y);
          const double wgt = wx * wy;
          for (int c = 0; c < 3; ++c) acc[c] += wgt * p[c];
          wsum += wgt;
        }
      }
      const std::size_t o = 3 * (static_cast<std::size_t>(oy) * width + ox);
      for (int c = 0; c < 3; ++c) {
        out[o + c] = static_cast<std::uint8_t>(std::clamp(std::round(acc[c] / wsum), 0.0, 255.0));
      }
    }
  }
  const double dpi = img.dpi() * static_cast<double>(width) / img.width();
  return RasterImage(width, height, dpi, std::move(out));
}

RasterImage thumbnail(const RasterImage& img, int longest_side) {
  const int longest = std::max(img.width(), img.height());
  if (longest <= longest_side) return img;
  const double f = static_cast<double>(longest_side) / longest;
  const int w = std::max(1, static_cast<int>(std::lround(img.width() * f)));
  const int h = std::max(1, static_cast<int>(std::lround(img.height() * f)));
  return resize_area(img, w, h);
}

}  // namespace podo
