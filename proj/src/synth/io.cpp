#include "plarseg/synth/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace plarseg::synth {

namespace {

struct Header {
  int width = 0;
  int height = 0;
};

int read_header_int(std::istream& is, const char* what) {
  // Skip whitespace and '#' comments between header tokens.
  for (;;) {
    const int ch = is.peek();
    if (ch == EOF) throw FormatError(std::string("truncated header before ") + what);
    if (ch == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
  }
  long value = 0;
  int digits = 0;
  while (std::isdigit(is.peek())) {
    value = value * 10 + (is.get() - '0');
    if (++digits > 9) throw FormatError(std::string("header value too large: ") + what);
  }
  if (digits == 0) throw FormatError(std::string("malformed header field: ") + what);
  return static_cast<int>(value);
}

Header read_header(std::istream& is, const char* magic) {
  char m[2] = {0, 0};
  if (!is.read(m, 2) || m[0] != magic[0] || m[1] != magic[1])
    throw FormatError(std::string("expected magic ") + magic);
  Header h;
  h.width = read_header_int(is, "width");
  h.height = read_header_int(is, "height");
  const int maxval = read_header_int(is, "maxval");
  if (h.width <= 0 || h.height <= 0) throw FormatError("non-positive image dimensions");
  if (maxval != 255) throw FormatError("only maxval 255 is supported, got " + std::to_string(maxval));
  const int sep = is.get();
  if (!std::isspace(sep)) throw FormatError("missing whitespace after header");
  return h;
}

std::vector<unsigned char> read_payload(std::istream& is, std::size_t n) {
  std::vector<unsigned char> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw FormatError("truncated payload: expected " + std::to_string(n) + " bytes, got " +
                      std::to_string(is.gcount()));
  return buf;
}

template <typename Fn>
auto with_input(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    return fn(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename Fn>
void with_output(const std::filesystem::path& path, Fn&& fn) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  fn(os);
  if (!os) throw FormatError("write failed for " + path.string());
}

}  // namespace

void write_ppm(std::ostream& os, const numkit::Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw numkit::DimensionError("PPM needs a 3 x H x W tensor");
  const int h = image.dim(1), w = image.dim(2);
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w * 3);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(image.at(ch, r, c), 0.0f, 1.0f);
        buf[(static_cast<std::size_t>(r) * w + c) * 3 + ch] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

numkit::Tensor read_ppm(std::istream& is) {
  const Header h = read_header(is, "P6");
  const auto buf = read_payload(is, static_cast<std::size_t>(h.width) * h.height * 3);
  numkit::Tensor image({3, h.height, h.width});
  for (int r = 0; r < h.height; ++r)
    for (int c = 0; c < h.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        image.at(ch, r, c) = static_cast<float>(buf[(static_cast<std::size_t>(r) * h.width + c) * 3 + ch] / 255.0);
  return image;
}

void write_pgm(std::ostream& os, const LabelMap& labels) {
  if (labels.ids.size() != static_cast<std::size_t>(labels.height) * labels.width)
    throw numkit::DimensionError("label map size does not match its dimensions");
  os << "P5\n" << labels.width << ' ' << labels.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(labels.ids.data()), static_cast<std::streamsize>(labels.ids.size()));
}

LabelMap read_pgm(std::istream& is) {
  const Header h = read_header(is, "P5");
  const auto buf = read_payload(is, static_cast<std::size_t>(h.width) * h.height);
  LabelMap labels(h.height, h.width);
  labels.ids.assign(buf.begin(), buf.end());
  return labels;
}

void write_ppm(const std::filesystem::path& path, const numkit::Tensor& image) {
  with_output(path, [&](std::ostream& os) { write_ppm(os, image); });
}

numkit::Tensor read_ppm(const std::filesystem::path& path) {
  return with_input(path, [](std::istream& is) { return read_ppm(is); });
}

void write_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  with_output(path, [&](std::ostream& os) { write_pgm(os, labels); });
}

LabelMap read_pgm(const std::filesystem::path& path) {
  return with_input(path, [](std::istream& is) { return read_pgm(is); });
}

}  // namespace plarseg::synth
