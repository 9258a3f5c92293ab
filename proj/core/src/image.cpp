#include "tabrec/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace tabrec {

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

namespace {

int read_header_int(std::istream& in) {
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int v = 0;
  if (!(in >> v)) throw std::runtime_error("malformed PPM header");
  return v;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw std::runtime_error(path.string() + ": not a binary PPM");
  const int w = read_header_int(in);
  const int h = read_header_int(in);
  const int maxval = read_header_int(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error(path.string() + ": unsupported PPM");
  in.get();
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated PPM");
  return img;
}

Image pad_to_square(const Image& img) {
  const int side = std::max(img.width, img.height);
  Image out(side, side, 0);
  for (int y = 0; y < img.height; ++y)
    std::copy_n(img.at(0, y), static_cast<std::size_t>(img.width) * 3, out.at(0, y));
  return out;
}

Image resize(const Image& img, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("resize: empty target");
  if (width == img.width && height == img.height) return img;
  Image out(width, height);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * img.at(x0, y0)[c] + wx * img.at(x1, y0)[c]) +
                         wy * ((1 - wx) * img.at(x0, y1)[c] + wx * img.at(x1, y1)[c]);
        out.at(x, y)[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

Image prepare_image(const Image& img, int side) { return resize(pad_to_square(img), side, side); }

}  // namespace tabrec
