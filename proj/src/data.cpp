#include "deepdisaster/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "deepdisaster/log.hpp"
#include "deepdisaster/metadata.hpp"

namespace fs = std::filesystem;

namespace deepdisaster {

std::string_view to_string(Label label) { return label == Label::damage ? "damage" : "no_damage"; }
std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::vector<std::string> DatasetIndex::classes() const {
  std::set<std::string> names;
  for (const auto& r : records) names.insert(r.disaster_class);
  return {names.begin(), names.end()};
}

std::vector<std::string> DatasetIndex::ids(Split split, const std::optional<std::string>& disaster_class) const {
  std::vector<std::string> out;
  for (const auto& r : records)
    if (r.split == split && (!disaster_class || r.disaster_class == *disaster_class)) out.push_back(r.sample_id);
  return out;
}

const DatasetRecord& DatasetIndex::find(const std::string& sample_id) const {
  for (const auto& r : records)
    if (r.sample_id == sample_id) return r;
  throw DataError("unknown sample id '" + sample_id + "'");
}

std::size_t DatasetIndex::count(Split split, Label label, const std::optional<std::string>& disaster_class) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const DatasetRecord& r) {
    return r.split == split && r.label == label && (!disaster_class || r.disaster_class == *disaster_class);
  }));
}

DatasetIndex DatasetIndex::for_class(const std::string& disaster_class) const {
  DatasetIndex out;
  for (const auto& r : records)
    if (r.disaster_class == disaster_class) out.records.push_back(r);
  if (out.records.empty()) throw DataError("no records for class '" + disaster_class + "'");
  return out;
}

void require_train_purity(const DatasetIndex& index) {
  for (const auto& r : index.records)
    if (r.split == Split::train && r.label == Label::damage)
      throw DataError("damage sample '" + r.sample_id + "' found in the train split");
}

std::size_t train_count(std::size_t no_damage_count, double train_fraction) {
  return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(no_damage_count) + 0.5));
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir, std::size_t& skipped) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    if (entry.file_size() == 0 || !cv::haveImageReader(entry.path().string())) {
      ++skipped;
      continue;
    }
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

std::uint64_t string_seed(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

DatasetRecord make_record(const std::string& cls, Label label, const fs::path& file, Split split) {
  return {cls + "/" + std::string(to_string(label)) + "/" + file.stem().string(), file, cls, label, split};
}

}  // namespace

DatasetIndex index_dataset(const fs::path& root, double train_fraction, std::int64_t seed) {
  if (!fs::is_directory(root)) throw DataError("dataset root '" + root.string() + "' is not a directory");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DataError("train_fraction must lie in (0, 1)");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("dataset root '" + root.string() + "' contains no class folders");

  DatasetIndex index;
  for (const auto& dir : class_dirs) {
    const std::string cls = dir.filename().string();
    auto normal = list_images(dir / "no_damage", index.skipped);
    const auto damaged = list_images(dir / "damage", index.skipped);
    if (normal.empty() && damaged.empty()) throw DataError("class folder '" + dir.string() + "' contains no images");

    std::vector<std::size_t> order(normal.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) ^ string_seed(cls));
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = train_count(normal.size(), train_fraction);
    std::vector<bool> is_train(normal.size(), false);
    for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;

    for (std::size_t i = 0; i < normal.size(); ++i)
      index.records.push_back(make_record(cls, Label::no_damage, normal[i], is_train[i] ? Split::train : Split::test));
    for (const auto& f : damaged) index.records.push_back(make_record(cls, Label::damage, f, Split::test));
  }
  if (index.skipped) warn("skipped " + std::to_string(index.skipped) + " unreadable image file(s) under " + root.string());

  std::set<std::string> seen;
  for (const auto& r : index.records)
    if (!seen.insert(r.sample_id).second) throw DataError("duplicate sample id '" + r.sample_id + "'");
  return index;
}

DatasetIndex index_image_folder(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("image folder '" + root.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  DatasetIndex index;
  for (const auto& f : files) {
    if (!cv::haveImageReader(f.string())) {
      ++index.skipped;
      continue;
    }
    const std::string id = "corpus/" + fs::relative(f, root).replace_extension().generic_string();
    index.records.push_back({id, f, "corpus", Label::no_damage, Split::train});
  }
  if (index.records.empty()) throw DataError("image folder '" + root.string() + "' contains no images");
  return index;
}

Tensor image_to_tensor(const cv::Mat& image, int image_size, int channels) {
  cv::Mat img = image;
  if (channels == 1 && img.channels() == 3) cv::cvtColor(img, img, cv::COLOR_BGR2GRAY);
  if (channels == 3 && img.channels() == 1) cv::cvtColor(img, img, cv::COLOR_GRAY2BGR);
  if (img.depth() != CV_8U) throw DataError("only 8-bit images are supported");
  if (img.rows != image_size || img.cols != image_size)
    cv::resize(img, img, cv::Size(image_size, image_size), 0, 0, cv::INTER_LINEAR);
  if (channels == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  Tensor t({1, channels, image_size, image_size});
  for (int y = 0; y < image_size; ++y) {
    const unsigned char* row = img.ptr<unsigned char>(y);
    for (int x = 0; x < image_size; ++x)
      for (int c = 0; c < channels; ++c) t.at(0, c, y, x) = 2.0 * row[x * channels + c] / 255.0 - 1.0;
  }
  return t;
}

cv::Mat tensor_to_image(const Tensor& sample) {
  const int channels = sample.dim(1), h = sample.dim(2), w = sample.dim(3);
  cv::Mat img(h, w, channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < h; ++y) {
    unsigned char* row = img.ptr<unsigned char>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        const double v = std::clamp(sample.at(0, c, y, x), -1.0, 1.0);
        row[x * channels + c] = static_cast<unsigned char>(std::lround((v + 1.0) * 127.5));
      }
  }
  if (channels == 3) cv::cvtColor(img, img, cv::COLOR_RGB2BGR);
  return img;
}

ImageBatch load_batch(const DatasetIndex& index, std::span<const std::string> ids, const ExperimentConfig& config) {
  ImageBatch batch;
  batch.pixels = Tensor({static_cast<int>(ids.size()), config.channels, config.image_size, config.image_size});
  const std::size_t per = batch.pixels.sample_size();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const DatasetRecord& r = index.find(ids[i]);
    const cv::Mat img = cv::imread(r.path.string(), config.channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
    if (img.empty()) throw DataError("cannot decode image for sample '" + r.sample_id + "' (" + r.path.string() + ")");
    const Tensor t = image_to_tensor(img, config.image_size, config.channels);
    std::copy(t.values().begin(), t.values().end(), batch.pixels.data() + i * per);
    batch.sample_ids.push_back(r.sample_id);
  }
  return batch;
}

// ---------------------------------------------------------------------------

void validate_synthetic_spec(const SyntheticSpec& spec) {
  if (spec.count_normal <= 0 || spec.count_anomalous <= 0) throw DataError("synthetic counts must be positive");
  if (spec.image_size < 8) throw DataError("synthetic image_size too small");
  if (spec.channels != 1 && spec.channels != 3) throw DataError("synthetic channels must be 1 or 3");
  if (spec.defect_min < 1 || spec.defect_max < spec.defect_min || spec.defect_max >= spec.image_size)
    throw DataError("synthetic defect size range must satisfy 1 <= min <= max < image_size");
}

namespace {

std::string synthetic_stem(bool anomalous, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d", anomalous ? "anomalous" : "normal", index);
  return buf;
}

}  // namespace

cv::Mat synthesize_image(const SyntheticSpec& spec, int index, bool anomalous, bool with_defect, DefectBox* box) {
  validate_synthetic_spec(spec);
  std::seed_seq seq{static_cast<std::uint64_t>(spec.seed), static_cast<std::uint64_t>(index),
                    static_cast<std::uint64_t>(anomalous ? 1 : 0)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = spec.image_size;

  // Smoothed noise per channel, rescaled to unit spread, around a random base level.
  // Values stay within [74, 182] so that a saturated defect always differs by > 64 levels.
  std::vector<cv::Mat> planes;
  for (int c = 0; c < spec.channels; ++c) {
    cv::Mat noise(n, n, CV_64F);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) noise.at<double>(y, x) = gauss(rng);
    cv::GaussianBlur(noise, noise, cv::Size(0, 0), 3.0, 3.0, cv::BORDER_REFLECT);
    cv::Scalar mean, stddev;
    cv::meanStdDev(noise, mean, stddev);
    const double base = 110.0 + 36.0 * unit(rng);
    cv::Mat plane(n, n, CV_8U);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double v = (noise.at<double>(y, x) - mean[0]) / (stddev[0] + 1e-12) * 14.0;
        plane.at<unsigned char>(y, x) = static_cast<unsigned char>(std::lround(base + std::clamp(v, -36.0, 36.0)));
      }
    planes.push_back(plane);
  }

  if (anomalous) {
    std::uniform_int_distribution<int> size(spec.defect_min, spec.defect_max);
    const int w = size(rng), h = size(rng);
    std::uniform_int_distribution<int> px(0, n - w), py(0, n - h);
    DefectBox b{spec.class_name + "/damage/" + synthetic_stem(true, index), px(rng), py(rng), 0, 0};
    b.x1 = b.x0 + w;
    b.y1 = b.y0 + h;
    if (with_defect) {
      const cv::Rect rect(b.x0, b.y0, w, h);
      for (auto& plane : planes) {
        const double box_mean = cv::mean(plane(rect))[0];
        plane(rect).setTo(box_mean < 128.0 ? 255 : 0);
      }
    }
    if (box) *box = b;
  }

  cv::Mat out;
  if (spec.channels == 1) {
    out = planes[0];
  } else {
    std::vector<cv::Mat> bgr{planes[2], planes[1], planes[0]};
    cv::merge(bgr, out);
  }
  return out;
}

fs::path manifest_path(const fs::path& dataset_root) { return dataset_root / "manifest.csv"; }

void write_manifest(const std::vector<DefectBox>& boxes, const fs::path& path, const std::string& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
  out << header << "sample_id,x0,y0,x1,y1\n";
  for (const auto& b : boxes) out << b.sample_id << ',' << b.x0 << ',' << b.y0 << ',' << b.x1 << ',' << b.y1 << '\n';
  if (!out) throw DataError("write failure on manifest '" + path.string() + "'");
}

std::vector<DefectBox> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  std::vector<DefectBox> boxes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#' || line.rfind("sample_id,", 0) == 0) continue;
    std::istringstream fields(line);
    DefectBox b;
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(fields, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    try {
      b.sample_id = cells[0];
      b.x0 = std::stoi(cells[1]);
      b.y0 = std::stoi(cells[2]);
      b.x1 = std::stoi(cells[3]);
      b.y1 = std::stoi(cells[4]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed box");
    }
    boxes.push_back(b);
  }
  return boxes;
}

DatasetIndex make_synthetic_dataset(const SyntheticSpec& spec, const fs::path& out_root, double train_fraction,
                                    const std::string& header) {
  validate_synthetic_spec(spec);
  const fs::path class_dir = out_root / spec.class_name;
  std::error_code ec;
  fs::create_directories(class_dir / "no_damage", ec);
  fs::create_directories(class_dir / "damage", ec);
  if (ec) throw DataError("cannot create '" + class_dir.string() + "': " + ec.message());

  auto write = [&](const fs::path& p, const cv::Mat& img) {
    try {
      write_png(img, p, header);
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
  };
  for (int i = 0; i < spec.count_normal; ++i)
    write(class_dir / "no_damage" / (synthetic_stem(false, i) + ".png"), synthesize_image(spec, i, false));
  std::vector<DefectBox> boxes;
  for (int i = 0; i < spec.count_anomalous; ++i) {
    DefectBox box;
    const cv::Mat img = synthesize_image(spec, i, true, true, &box);
    write(class_dir / "damage" / (synthetic_stem(true, i) + ".png"), img);
    boxes.push_back(box);
  }
  write_manifest(boxes, manifest_path(out_root), header);
  return index_dataset(out_root, train_fraction, spec.seed);
}

}  // namespace deepdisaster
