#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "deepdisaster/config.hpp"
#include "deepdisaster/tensor.hpp"

namespace deepdisaster {

class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Label { no_damage, damage };
enum class Split { train, test };

std::string_view to_string(Label label);
std::string_view to_string(Split split);

struct DatasetRecord {
  std::string sample_id;  // "<class>/<label>/<file stem>"
  std::filesystem::path path;
  std::string disaster_class;
  Label label = Label::no_damage;
  Split split = Split::test;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

/// Records sorted by (class, label, filename). Train records are always no_damage.
struct DatasetIndex {
  std::vector<DatasetRecord> records;
  std::size_t skipped = 0;  // unreadable files ignored while indexing

  std::vector<std::string> classes() const;
  /// Sample ids with the given split, optionally restricted to one class.
  std::vector<std::string> ids(Split split, const std::optional<std::string>& disaster_class = std::nullopt) const;
  const DatasetRecord& find(const std::string& sample_id) const;
  std::size_t count(Split split, Label label, const std::optional<std::string>& disaster_class = std::nullopt) const;
  /// Copy restricted to one class.
  DatasetIndex for_class(const std::string& disaster_class) const;

  friend bool operator==(const DatasetIndex&, const DatasetIndex&) = default;
};

/// Throws DataError when a train record is labelled damage.
void require_train_purity(const DatasetIndex& index);

/// Number of no_damage images assigned to train: round-half-up of fraction * count.
std::size_t train_count(std::size_t no_damage_count, double train_fraction);

/// Index `root/<class>/{no_damage,damage}/*.{png,jpg,jpeg}`. Per class, a seeded shuffle of the
/// sorted no_damage files assigns train_count() of them to train; everything else is test.
DatasetIndex index_dataset(const std::filesystem::path& root, double train_fraction, std::int64_t seed);

/// Every image below `root` (recursively) as a train record of class "corpus".
DatasetIndex index_image_folder(const std::filesystem::path& root);

/// Pixels (batch, channels, image_size, image_size) in [-1, 1] plus the matching ids.
struct ImageBatch {
  Tensor pixels;
  std::vector<std::string> sample_ids;
};

ImageBatch load_batch(const DatasetIndex& index, std::span<const std::string> ids, const ExperimentConfig& config);

/// 8-bit image (gray or BGR) -> (1, channels, size, size) tensor via bilinear resize and 2p/255 - 1.
Tensor image_to_tensor(const cv::Mat& image, int image_size, int channels);
/// Inverse of the normalization for one sample (1, C, H, W): 8-bit gray or BGR image.
cv::Mat tensor_to_image(const Tensor& sample);

// ---------------------------------------------------------------------------
// Synthetic defect data

enum class TextureKind { smooth_noise };

struct SyntheticSpec {
  int count_normal = 200;
  int count_anomalous = 50;
  int image_size = 64;
  int channels = 3;
  TextureKind texture = TextureKind::smooth_noise;
  int defect_min = 10;  // side length range of the rectangular defect, pixels
  int defect_max = 20;
  std::int64_t seed = 1;
  std::string class_name = "synthetic";
};

struct DefectBox {
  std::string sample_id;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open pixel box [x0, x1) x [y0, y1)

  friend bool operator==(const DefectBox&, const DefectBox&) = default;
};

void validate_synthetic_spec(const SyntheticSpec& spec);

/// Renders image `index` of the normal (anomalous = false) or anomalous population.
/// With `with_defect` false an anomalous image is rendered without its defect (same texture).
cv::Mat synthesize_image(const SyntheticSpec& spec, int index, bool anomalous, bool with_defect = true,
                         DefectBox* box = nullptr);

/// Writes `out_root/<class>/{no_damage,damage}/*.png` and `out_root/manifest.csv`, then indexes it.
/// `header` ('#'-prefixed lines) opens the manifest and is stored as a PNG text comment.
DatasetIndex make_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_root,
                                    double train_fraction = 0.8, const std::string& header = {});

std::filesystem::path manifest_path(const std::filesystem::path& dataset_root);
void write_manifest(const std::vector<DefectBox>& boxes, const std::filesystem::path& path,
                    const std::string& header = {});
std::vector<DefectBox> read_manifest(const std::filesystem::path& path);

}  // namespace deepdisaster
