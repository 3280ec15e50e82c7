#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "sharpnoise/batch.hpp"

namespace sharpnoise {

enum class DataSource { kMnist, kCifar10, kSynthetic };
enum class Split { kTrain, kTest, kCalibration };

std::string_view data_source_name(DataSource source);
DataSource parse_data_source(std::string_view name);

struct Dataset {
  std::size_t channels = 0, height = 0, width = 0, num_classes = 0;
  std::vector<float> images;  // [n, c, h, w]
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t sample_size() const noexcept { return channels * height * width; }
};

// Synthetic Gaussian classes. Vector-shaped data (height = width = 1) uses
// class means margin * e_k; image-shaped data uses per-class oriented
// gratings with per-channel offsets, scaled by margin. Unit-variance noise is
// added to every value, so margin = 0 leaves the classes indistinguishable.
struct SyntheticSpec {
  std::size_t n = 1000;
  std::size_t test_n = 500;
  std::size_t classes = 2;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 8;
  double margin = 4.0;
};

Dataset synth_classification(const SyntheticSpec& spec, std::uint64_t seed);

// Raw readers; pixel values scaled to [0, 1].
Dataset read_mnist(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset read_cifar10(std::span<const std::filesystem::path> files);

struct DatasetHandle {
  DataSource source = DataSource::kSynthetic;
  std::filesystem::path root;
  // Fraction of the training split kept (seeded, stable).
  double fraction = 1.0;
  std::uint64_t seed = 0;
  // Calibration samples drawn (seeded) from the training split.
  std::size_t calibration_size = 1280;
  SyntheticSpec synthetic;
  // Per-channel normalization, computed from the training split on load.
  std::vector<float> mean;
  std::vector<float> stddev;
};

struct DataBundle {
  Dataset train, test, calibration;
};

// Loads all splits, fills handle.mean/stddev from the (subset) training
// split and normalizes every split with them.
DataBundle load_data(DatasetHandle& handle);

// Keeps round(fraction * n) samples chosen by a seeded permutation, in their
// original order.
Dataset subset(const Dataset& data, double fraction, std::uint64_t seed);
Dataset sample(const Dataset& data, std::size_t count, std::uint64_t seed);

void compute_normalization(const Dataset& data, std::vector<float>& mean, std::vector<float>& stddev);
void normalize(Dataset& data, std::span<const float> mean, std::span<const float> stddev);

struct LoaderOptions {
  std::size_t batch_size = 128;
  bool shuffle = false;
  // Random 4-pixel-padded crop and horizontal flip.
  bool augment = false;
  bool drop_last = false;
  std::uint64_t seed = 0;
};

class BatchLoader {
 public:
  BatchLoader(const Dataset& data, LoaderOptions options);

  std::size_t num_batches() const;
  // Sample order for an epoch; a seeded permutation when shuffling.
  std::vector<std::size_t> order(std::size_t epoch) const;
  Batch batch(std::span<const std::size_t> order, std::size_t index, std::size_t epoch) const;
  std::vector<Batch> all(std::size_t epoch = 0) const;

 private:
  const Dataset& data_;
  LoaderOptions options_;
};

// Random crop (zero padding of `pad` pixels) plus horizontal flip of one
// [c, h, w] sample, deterministic in (seed, epoch, sample).
void augment_sample(std::span<const float> src, std::span<float> dst, std::size_t channels, std::size_t height,
                    std::size_t width, std::uint64_t seed, std::size_t epoch, std::size_t sample,
                    std::size_t pad = 4);

}  // namespace sharpnoise
