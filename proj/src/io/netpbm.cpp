#include "vqamask/io/netpbm.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "vqamask/error.hpp"

namespace vqamask::io {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::string& where) {
  std::string token;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      if (!token.empty()) break;
    } else {
      token.push_back(static_cast<char>(c));
    }
    c = in.get();
  }
  if (token.empty()) fail(ErrorCode::Unreadable, where + ": truncated header");
  return token;
}

int header_int(std::istream& in, const std::string& where) {
  const std::string token = header_token(in, where);
  std::size_t used = 0;
  int value = 0;
  try {
    value = std::stoi(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != token.size() || value < 0) fail(ErrorCode::Unreadable, where + ": bad header field '" + token + "'");
  return value;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Unreadable, where + ": cannot open");
  const std::string magic = header_token(in, where);
  int channels = 0;
  bool ascii = false;
  if (magic == "P5" || magic == "P2") channels = 1;
  else if (magic == "P6" || magic == "P3") channels = 3;
  else fail(ErrorCode::Unreadable, where + ": unsupported format '" + magic + "'");
  ascii = magic == "P2" || magic == "P3";
  const int width = header_int(in, where);
  const int height = header_int(in, where);
  const int maxval = header_int(in, where);
  if (width < 1 || height < 1) fail(ErrorCode::Unreadable, where + ": empty image");
  if (maxval < 1 || maxval > 255) fail(ErrorCode::Unreadable, where + ": only 8-bit images are supported");

  Image image(height, width, channels);
  auto pixels = image.pixels();
  if (ascii) {
    for (auto& p : pixels) {
      const int v = header_int(in, where);
      if (v > maxval) fail(ErrorCode::Unreadable, where + ": sample exceeds maxval");
      p = static_cast<std::uint8_t>(v * 255 / maxval);
    }
  } else {
    in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(pixels.size())) fail(ErrorCode::Unreadable, where + ": truncated data");
    if (maxval != 255)
      for (auto& p : pixels) p = static_cast<std::uint8_t>(std::min(255, p * 255 / maxval));
  }
  return image;
}

void write_image(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::WriteFailure, path.string() + ": cannot open for writing");
  out << (image.channels() == 1 ? "P5" : "P6") << '\n' << image.width() << ' ' << image.height() << "\n255\n";
  const auto pixels = image.pixels();
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  out.flush();
  if (!out) fail(ErrorCode::WriteFailure, path.string() + ": write failed");
}

BinaryMask read_mask(const std::filesystem::path& path) {
  const Image gray = to_grayscale(read_image(path));
  BinaryMask mask(gray.height(), gray.width(), 0);
  for (int y = 0; y < gray.height(); ++y)
    for (int x = 0; x < gray.width(); ++x) mask(y, x) = gray.at(y, x) != 0;
  return mask;
}

Image mask_to_image(const BinaryMask& mask) {
  Image image(mask.rows(), mask.cols(), 1);
  for (int y = 0; y < mask.rows(); ++y)
    for (int x = 0; x < mask.cols(); ++x) image.at(y, x) = mask(y, x) ? 255 : 0;
  return image;
}

void write_mask(const std::filesystem::path& path, const BinaryMask& mask) { write_image(path, mask_to_image(mask)); }

}  // namespace vqamask::io
