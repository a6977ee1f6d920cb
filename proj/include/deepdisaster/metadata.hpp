#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "deepdisaster/config.hpp"

namespace deepdisaster {

inline constexpr const char* kToolVersion = "0.1.0";

/// What produced an output file. Recorded verbatim at the top of every artifact.
struct RunMetadata {
  std::string command_line;
  std::string config_hash;
};

RunMetadata make_metadata(const std::vector<std::string>& argv, const ExperimentConfig& config);

/// "# tool: ...\n# command: ...\n# config_hash: ...\n" (the prefix replaces "# ").
std::string metadata_header(const RunMetadata& meta, const std::string& prefix = "# ");

/// PNG bytes of `image` with `text` stored in a tEXt chunk under `keyword`.
std::vector<unsigned char> encode_png(const cv::Mat& image, const std::string& keyword = {},
                                      const std::string& text = {});
void write_png(const cv::Mat& image, const std::filesystem::path& path, const std::string& text = {});

}  // namespace deepdisaster
