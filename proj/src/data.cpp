#include "sharpnoise/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <string>

#include "sharpnoise/error.hpp"
#include "sharpnoise/rng.hpp"

namespace sharpnoise {

namespace fs = std::filesystem;

std::string_view data_source_name(DataSource source) {
  switch (source) {
    case DataSource::kMnist: return "mnist";
    case DataSource::kCifar10: return "cifar10";
    case DataSource::kSynthetic: return "synthetic";
  }
  return "unknown";
}

DataSource parse_data_source(std::string_view name) {
  if (name == "mnist") return DataSource::kMnist;
  if (name == "cifar10") return DataSource::kCifar10;
  if (name == "synthetic") return DataSource::kSynthetic;
  throw ConfigError("unknown data source '" + std::string(name) + "'");
}

namespace {

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::kMissingFile, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace

Dataset read_mnist(const fs::path& images, const fs::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (img.size() < 16) throw DataError(DataError::Kind::kTruncated, images.string() + ": header truncated");
  if (lab.size() < 8) throw DataError(DataError::Kind::kTruncated, labels.string() + ": header truncated");
  if (be32(img, 0) != 0x00000803) throw DataError(DataError::Kind::kBadMagic, images.string() + ": bad IDX image magic");
  if (be32(lab, 0) != 0x00000801) throw DataError(DataError::Kind::kBadMagic, labels.string() + ": bad IDX label magic");

  const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  if (be32(lab, 4) != n) {
    throw DataError(DataError::Kind::kBadFormat, "image/label count mismatch: " + std::to_string(n) + " vs " +
                                               std::to_string(be32(lab, 4)));
  }
  if (img.size() < 16 + n * rows * cols) throw DataError(DataError::Kind::kTruncated, images.string() + ": truncated");
  if (lab.size() < 8 + n) throw DataError(DataError::Kind::kTruncated, labels.string() + ": truncated");

  Dataset d;
  d.channels = 1;
  d.height = rows;
  d.width = cols;
  d.num_classes = 10;
  d.images.resize(n * rows * cols);
  for (std::size_t i = 0; i < d.images.size(); ++i) d.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = lab[8 + i];
    if (y > 9) throw DataError(DataError::Kind::kLabelOutOfRange, labels.string() + ": label " + std::to_string(y));
    d.labels[i] = y;
  }
  return d;
}

Dataset read_cifar10(std::span<const fs::path> files) {
  constexpr std::size_t kPixels = 3 * 32 * 32, kRecord = kPixels + 1;
  Dataset d;
  d.channels = 3;
  d.height = 32;
  d.width = 32;
  d.num_classes = 10;
  for (const auto& path : files) {
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kRecord != 0) {
      throw DataError(DataError::Kind::kTruncated, path.string() + ": size " + std::to_string(bytes.size()) +
                                                 " is not a whole number of records");
    }
    const std::size_t n = bytes.size() / kRecord;
    const std::size_t base = d.images.size();
    d.images.resize(base + n * kPixels);
    for (std::size_t r = 0; r < n; ++r) {
      const unsigned char* rec = bytes.data() + r * kRecord;
      if (rec[0] > 9) {
        throw DataError(DataError::Kind::kLabelOutOfRange,
                        path.string() + ": record " + std::to_string(r) + " has label " + std::to_string(rec[0]));
      }
      d.labels.push_back(rec[0]);
      float* out = d.images.data() + base + r * kPixels;
      for (std::size_t i = 0; i < kPixels; ++i) out[i] = static_cast<float>(rec[1 + i]) / 255.0f;
    }
  }
  return d;
}

Dataset synth_classification(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw ConfigError("synthetic data: need at least 2 classes");
  if (spec.channels == 0 || spec.height == 0 || spec.width == 0) throw ConfigError("synthetic data: empty shape");
  Dataset d;
  d.channels = spec.channels;
  d.height = spec.height;
  d.width = spec.width;
  d.num_classes = spec.classes;
  const std::size_t dim = d.sample_size();

  std::vector<double> means(spec.classes * dim, 0.0);
  if (spec.height == 1 || spec.width == 1) {
    if (dim < spec.classes) throw ConfigError("synthetic data: vector dim must be >= number of classes");
    for (std::size_t k = 0; k < spec.classes; ++k) means[k * dim + k] = spec.margin;
  } else {
    RngStream rng(seed, stream_id("synth-means"));
    const std::size_t hw = spec.height * spec.width;
    for (std::size_t k = 0; k < spec.classes; ++k) {
      const double theta = std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.classes);
      const double freq = 2.0 + static_cast<double>(k % 3);
      const double phase = 2.0 * std::numbers::pi * rng.uniform();
      for (std::size_t c = 0; c < spec.channels; ++c) {
        const double offset = 0.5 * rng.normal();
        for (std::size_t y = 0; y < spec.height; ++y) {
          for (std::size_t x = 0; x < spec.width; ++x) {
            const double u = (std::cos(theta) * static_cast<double>(x) + std::sin(theta) * static_cast<double>(y)) /
                             static_cast<double>(spec.width);
            means[k * dim + c * hw + y * spec.width + x] =
                spec.margin * (offset + std::sin(2.0 * std::numbers::pi * freq * u + phase));
          }
        }
      }
    }
  }

  d.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) d.labels[i] = static_cast<int>(i % spec.classes);
  RngStream order(seed, stream_id("synth-labels"));
  order.shuffle(std::span<int>(d.labels));

  const CounterRng noise(seed, stream_id("synth-noise"));
  d.images.resize(spec.n * dim);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double* mu = means.data() + static_cast<std::size_t>(d.labels[i]) * dim;
    for (std::size_t j = 0; j < dim; ++j)
      d.images[i * dim + j] = static_cast<float>(mu[j] + noise.normal_at(i * dim + j));
  }
  return d;
}

Dataset sample(const Dataset& data, std::size_t count, std::uint64_t seed) {
  if (count > data.size()) {
    throw ConfigError("sample: requested " + std::to_string(count) + " of " + std::to_string(data.size()));
  }
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RngStream rng(seed, stream_id("subset"));
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(count);
  std::sort(idx.begin(), idx.end());

  Dataset out;
  out.channels = data.channels;
  out.height = data.height;
  out.width = data.width;
  out.num_classes = data.num_classes;
  const std::size_t s = data.sample_size();
  out.images.resize(count * s);
  out.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(data.images.begin() + static_cast<std::ptrdiff_t>(idx[i] * s), s,
                out.images.begin() + static_cast<std::ptrdiff_t>(i * s));
    out.labels[i] = data.labels[idx[i]];
  }
  return out;
}

Dataset subset(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subset fraction must be in (0, 1]");
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  if (count == data.size()) return data;
  return sample(data, count, seed);
}

void compute_normalization(const Dataset& data, std::vector<float>& mean, std::vector<float>& stddev) {
  const std::size_t hw = data.height * data.width;
  mean.assign(data.channels, 0.0f);
  stddev.assign(data.channels, 1.0f);
  if (data.size() == 0) return;
  for (std::size_t c = 0; c < data.channels; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float* p = data.images.data() + i * data.sample_size() + c * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        sum += p[j];
        sq += static_cast<double>(p[j]) * p[j];
      }
    }
    const double n = static_cast<double>(data.size() * hw);
    const double m = sum / n;
    const double var = std::max(0.0, sq / n - m * m);
    mean[c] = static_cast<float>(m);
    stddev[c] = var > 0.0 ? static_cast<float>(std::sqrt(var)) : 1.0f;
  }
}

void normalize(Dataset& data, std::span<const float> mean, std::span<const float> stddev) {
  if (mean.size() != data.channels || stddev.size() != data.channels) {
    throw ConfigError("normalize: expected " + std::to_string(data.channels) + " channel constants");
  }
  const std::size_t hw = data.height * data.width;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t c = 0; c < data.channels; ++c) {
      float* p = data.images.data() + i * data.sample_size() + c * hw;
      for (std::size_t j = 0; j < hw; ++j) p[j] = (p[j] - mean[c]) / stddev[c];
    }
  }
}

namespace {

fs::path cifar_dir(const fs::path& root) {
  if (fs::exists(root / "data_batch_1.bin")) return root;
  if (fs::exists(root / "cifar-10-batches-bin" / "data_batch_1.bin")) return root / "cifar-10-batches-bin";
  throw DataError(DataError::Kind::kMissingFile, "no CIFAR-10 binary batches under " + root.string());
}

}  // namespace

DataBundle load_data(DatasetHandle& handle) {
  DataBundle b;
  switch (handle.source) {
    case DataSource::kMnist: {
      const fs::path r = handle.root;
      b.train = read_mnist(r / "train-images-idx3-ubyte", r / "train-labels-idx1-ubyte");
      b.test = read_mnist(r / "t10k-images-idx3-ubyte", r / "t10k-labels-idx1-ubyte");
      break;
    }
    case DataSource::kCifar10: {
      const fs::path dir = cifar_dir(handle.root);
      std::vector<fs::path> train_files;
      for (int i = 1; i <= 5; ++i) train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
      const fs::path test_file = dir / "test_batch.bin";
      b.train = read_cifar10(train_files);
      b.test = read_cifar10(std::span<const fs::path>(&test_file, 1));
      break;
    }
    case DataSource::kSynthetic: {
      SyntheticSpec spec = handle.synthetic;
      const std::size_t train_n = spec.n;
      spec.n = train_n + spec.test_n;
      Dataset all = synth_classification(spec, handle.seed);
      const std::size_t s = all.sample_size();
      b.train = all;
      b.train.images.resize(train_n * s);
      b.train.labels.resize(train_n);
      b.test = std::move(all);
      b.test.images.erase(b.test.images.begin(), b.test.images.begin() + static_cast<std::ptrdiff_t>(train_n * s));
      b.test.labels.erase(b.test.labels.begin(), b.test.labels.begin() + static_cast<std::ptrdiff_t>(train_n));
      break;
    }
  }
  b.train = subset(b.train, handle.fraction, handle.seed);
  compute_normalization(b.train, handle.mean, handle.stddev);
  normalize(b.train, handle.mean, handle.stddev);
  normalize(b.test, handle.mean, handle.stddev);
  b.calibration = sample(b.train, std::min(handle.calibration_size, b.train.size()),
                         handle.seed ^ stream_id("calibration"));
  return b;
}

void augment_sample(std::span<const float> src, std::span<float> dst, std::size_t channels, std::size_t height,
                    std::size_t width, std::uint64_t seed, std::size_t epoch, std::size_t sample, std::size_t pad) {
  RngStream rng(seed, stream_id("augment", epoch, sample));
  const auto dy = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
  const auto dx = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
  const bool flip = rng.below(2) == 1;
  const auto h = static_cast<std::ptrdiff_t>(height), w = static_cast<std::ptrdiff_t>(width);
  for (std::size_t c = 0; c < channels; ++c) {
    const float* in = src.data() + c * height * width;
    float* out = dst.data() + c * height * width;
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        const std::ptrdiff_t sy = y + dy;
        std::ptrdiff_t sx = x + dx;
        if (flip) sx = w - 1 - sx;
        out[y * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? in[sy * w + sx] : 0.0f;
      }
    }
  }
}

BatchLoader::BatchLoader(const Dataset& data, LoaderOptions options) : data_(data), options_(options) {
  if (options_.batch_size == 0) throw ConfigError("batch size must be >= 1");
}

std::size_t BatchLoader::num_batches() const {
  const std::size_t n = data_.size(), b = options_.batch_size;
  return options_.drop_last ? n / b : (n + b - 1) / b;
}

std::vector<std::size_t> BatchLoader::order(std::size_t epoch) const {
  std::vector<std::size_t> idx(data_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (options_.shuffle) {
    RngStream rng(options_.seed, stream_id("shuffle", epoch));
    rng.shuffle(std::span<std::size_t>(idx));
  }
  return idx;
}

Batch BatchLoader::batch(std::span<const std::size_t> order, std::size_t index, std::size_t epoch) const {
  const std::size_t begin = index * options_.batch_size;
  if (begin >= order.size()) throw ConfigError("batch index out of range");
  const std::size_t end = std::min(order.size(), begin + options_.batch_size);
  const std::size_t n = end - begin, s = data_.sample_size();
  std::vector<float> values(n * s);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = order[begin + i];
    const std::span<const float> in(data_.images.data() + src * s, s);
    const std::span<float> out(values.data() + i * s, s);
    if (options_.augment) {
      augment_sample(in, out, data_.channels, data_.height, data_.width, options_.seed, epoch, src);
    } else {
      std::copy(in.begin(), in.end(), out.begin());
    }
    labels[i] = data_.labels[src];
  }
  return {Tensor({n, data_.channels, data_.height, data_.width}, std::move(values)), std::move(labels)};
}

std::vector<Batch> BatchLoader::all(std::size_t epoch) const {
  const auto idx = order(epoch);
  std::vector<Batch> out;
  out.reserve(num_batches());
  for (std::size_t b = 0; b < num_batches(); ++b) out.push_back(batch(idx, b, epoch));
  return out;
}

}  // namespace sharpnoise
