#include "cardioquant/pgm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "cardioquant/errors.hpp"

namespace cq {

namespace {

int next_header_int(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comment lines between header tokens.
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(in >> v)) throw ParseError(path + ": malformed PGM header");
  return v;
}

}  // namespace

void write_pgm(const std::string& path, int w, int h, const std::vector<unsigned char>& bytes) {
  if (bytes.size() != static_cast<std::size_t>(w) * static_cast<std::size_t>(h)) {
    throw ShapeError(path + ": pixel buffer does not match " + std::to_string(w) + "x" +
                     std::to_string(h));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path + ": write failed");
}

std::vector<unsigned char> read_pgm(const std::string& path, int& w, int& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  std::string magic;
  in >> magic;
  if (magic != "P5") throw ParseError(path + ": not a binary PGM (magic '" + magic + "')");
  w = next_header_int(in, path);
  h = next_header_int(in, path);
  const int maxval = next_header_int(in, path);
  if (w <= 0 || h <= 0) throw ParseError(path + ": non-positive dimensions");
  if (maxval <= 0 || maxval > 255) {
    throw ParseError(path + ": unsupported maxval " + std::to_string(maxval));
  }
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw ParseError(path + ": truncated pixel data");
  }
  return bytes;
}

void write_image_pgm(const std::string& path, const Tensor& img) {
  const int H = img.dim(img.rank() - 2), W = img.dim(img.rank() - 1);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(H) * W);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const float v = img.data()[i];
    const long b = std::lround(static_cast<double>(v) * 255.0);
    bytes[i] = static_cast<unsigned char>(b < 0 ? 0 : (b > 255 ? 255 : b));
  }
  write_pgm(path, W, H, bytes);
}

Tensor read_image_pgm(const std::string& path) {
  int w = 0, h = 0;
  const auto bytes = read_pgm(path, w, h);
  Tensor t({h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    t.data()[i] = static_cast<float>(bytes[i]) / 255.0f;
  }
  return t;
}

void write_label_pgm(const std::string& path, const Tensor& labels) {
  const int H = labels.dim(0), W = labels.dim(1);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(H) * W);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(labels.data()[i]));
  }
  write_pgm(path, W, H, bytes);
}

Tensor read_label_pgm(const std::string& path) {
  int w = 0, h = 0;
  const auto bytes = read_pgm(path, w, h);
  Tensor t({h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] > 2) {
      throw ParseError(path + ": label value " + std::to_string(bytes[i]) + " out of range 0..2");
    }
    t.data()[i] = static_cast<float>(bytes[i]);
  }
  return t;
}

void quantize_to_bytes(Tensor& img) {
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const long b = std::lround(static_cast<double>(img.data()[i]) * 255.0);
    img.data()[i] = static_cast<float>(b < 0 ? 0 : (b > 255 ? 255 : b)) / 255.0f;
  }
}

}  // namespace cq
