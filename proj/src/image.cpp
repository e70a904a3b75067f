#include "boxguide/image.hpp"

#include <png.h>

#include <csetjmp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace boxguide {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

void png_warn(png_structp, png_const_charp) {}

}  // namespace

Image Image::filled(int height, int width, float r, float g, float b) {
  Image img;
  img.height = height;
  img.width = width;
  img.pixels.resize(static_cast<Eigen::Index>(height) * width, 3);
  img.pixels.col(0).setConstant(r);
  img.pixels.col(1).setConstant(g);
  img.pixels.col(2).setConstant(b);
  return img;
}

void write_png(const std::string& path, const Image& image, const std::map<std::string, std::string>& text) {
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write " + path);
  std::vector<png_text> chunks;
  std::vector<std::string> storage;
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 3);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: failed writing " + path);
  }
  {
    png_init_io(png, f.get());
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    storage.reserve(text.size() * 2);
    for (const auto& [k, v] : text) {
      storage.push_back(k);
      storage.push_back(v);
      png_text t{};
      t.compression = PNG_TEXT_COMPRESSION_NONE;
      t.key = storage[storage.size() - 2].data();
      t.text = storage.back().data();
      t.text_length = storage.back().size();
      chunks.push_back(t);
    }
    if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x)
        for (int c = 0; c < 3; ++c) {
          const float v = std::clamp(image(y, x, c), 0.0f, 1.0f);
          row[static_cast<std::size_t>(x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
        }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
}

namespace {

// `body` must not throw; libpng errors unwind through longjmp.
template <typename Body>
void with_png_reader(const std::string& path, Body body) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw std::runtime_error(path + " is not a PNG");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: failed reading " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  body(png, info);
  png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

Image read_png(const std::string& path) {
  Image img;
  std::vector<png_byte> row;
  with_png_reader(path, [&](png_structp png, png_infop info) {
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.pixels.resize(static_cast<Eigen::Index>(img.height) * img.width, 3);
    row.resize(png_get_rowbytes(png, info));
    for (int y = 0; y < img.height; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) img(y, x, c) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0f;
    }
  });
  return img;
}

std::map<std::string, std::string> read_png_text(const std::string& path) {
  std::map<std::string, std::string> out;
  with_png_reader(path, [&](png_structp png, png_infop info) {
    png_textp chunks = nullptr;
    int count = 0;
    png_get_text(png, info, &chunks, &count);
    for (int i = 0; i < count; ++i) out[chunks[i].key] = std::string(chunks[i].text, chunks[i].text_length);
  });
  return out;
}

void write_pgm(const std::string& path, const BinaryMask& mask, const std::string& comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n";
  std::istringstream lines(comment);
  std::string line;
  while (std::getline(lines, line)) out << "# " << line << "\n";
  out << mask.cols() << " " << mask.rows() << "\n255\n";
  for (Eigen::Index i = 0; i < mask.size(); ++i) out.put(mask.data()[i] ? static_cast<char>(255) : 0);
  if (!out) throw std::runtime_error("error writing " + path);
}

BinaryMask read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error(path + " is not a binary PGM");
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    int v = 0;
    if (!(in >> v)) throw std::runtime_error(path + ": bad PGM header");
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error(path + ": unsupported PGM");
  in.get();
  BinaryMask m(h, w);
  std::vector<char> buf(static_cast<std::size_t>(w) * h);
  if (!in.read(buf.data(), static_cast<std::streamsize>(buf.size()))) throw std::runtime_error(path + ": truncated PGM");
  for (std::size_t i = 0; i < buf.size(); ++i) m.data()[i] = static_cast<unsigned char>(buf[i]) >= 128 ? 1 : 0;
  return m;
}

}  // namespace boxguide
