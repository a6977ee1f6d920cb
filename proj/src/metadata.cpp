#include "deepdisaster/metadata.hpp"

#include <fstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <zlib.h>

namespace deepdisaster {

RunMetadata make_metadata(const std::vector<std::string>& argv, const ExperimentConfig& config) {
  RunMetadata m;
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (i) m.command_line += ' ';
    const bool quote = argv[i].empty() || argv[i].find_first_of(" \t\"'") != std::string::npos;
    m.command_line += quote ? "'" + argv[i] + "'" : argv[i];
  }
  m.config_hash = config_hash(config);
  return m;
}

std::string metadata_header(const RunMetadata& meta, const std::string& prefix) {
  return prefix + "tool: deepdisaster " + kToolVersion + "\n" + prefix + "command: " + meta.command_line + "\n" +
         prefix + "config_hash: " + meta.config_hash + "\n";
}

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

}  // namespace

std::vector<unsigned char> encode_png(const cv::Mat& image, const std::string& keyword, const std::string& text) {
  std::vector<unsigned char> png;
  // compression level pinned so bytes do not depend on library defaults
  if (!cv::imencode(".png", image, png, {cv::IMWRITE_PNG_COMPRESSION, 6}))
    throw std::runtime_error("PNG encoding failed");
  if (keyword.empty() || text.empty()) return png;

  // tEXt chunk right after IHDR (8-byte signature + 25-byte IHDR chunk)
  std::vector<unsigned char> chunk;
  const std::string body = keyword + '\0' + text;
  put_u32(chunk, static_cast<std::uint32_t>(body.size()));
  const std::size_t type_at = chunk.size();
  for (char c : std::string("tEXt")) chunk.push_back(static_cast<unsigned char>(c));
  chunk.insert(chunk.end(), body.begin(), body.end());
  const uLong crc = crc32(0L, chunk.data() + type_at, static_cast<uInt>(chunk.size() - type_at));
  put_u32(chunk, static_cast<std::uint32_t>(crc));
  png.insert(png.begin() + 33, chunk.begin(), chunk.end());
  return png;
}

void write_png(const cv::Mat& image, const std::filesystem::path& path, const std::string& text) {
  const auto bytes = encode_png(image, "Comment", text);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write image '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failure on '" + path.string() + "'");
}

}  // namespace deepdisaster
