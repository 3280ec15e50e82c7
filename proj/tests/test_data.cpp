#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "sharpnoise/data.hpp"
#include "sharpnoise/error.hpp"
#include "sharpnoise/experiment.hpp"
#include "sharpnoise/hwnoise.hpp"

using namespace sharpnoise;
namespace fs = std::filesystem;

namespace {

using Bytes = std::vector<unsigned char>;

void put32(Bytes& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

void write(const fs::path& p, const Bytes& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

Bytes idx_images(std::uint32_t n, std::uint32_t magic = 0x803) {
  Bytes b;
  put32(b, magic);
  put32(b, n);
  put32(b, 28);
  put32(b, 28);
  for (std::uint32_t i = 0; i < n * 784; ++i) b.push_back(static_cast<unsigned char>(i % 256));
  return b;
}

Bytes idx_labels(std::vector<unsigned char> labels) {
  Bytes b;
  put32(b, 0x801);
  put32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

Bytes cifar_records(std::size_t n, unsigned char first_label = 3) {
  Bytes b;
  for (std::size_t r = 0; r < n; ++r) {
    b.push_back(r == 0 ? first_label : static_cast<unsigned char>(r % 10));
    for (std::size_t i = 0; i < 3072; ++i) b.push_back(static_cast<unsigned char>((r + i) % 256));
  }
  return b;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sharpnoise_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

DataError::Kind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.kind();
  }
  FAIL("no DataError");
  return DataError::Kind::kBadFormat;
}

Dataset indexed(std::size_t n) {
  Dataset d;
  d.channels = d.height = d.width = 1;
  d.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    d.images.push_back(static_cast<float>(i));
    d.labels.push_back(static_cast<int>(i % 2));
  }
  return d;
}

double fit_accuracy(double margin, std::vector<std::size_t> hidden, std::size_t epochs, double* train_acc) {
  ExperimentConfig c;
  c.model.arch = Architecture::kMlp;
  c.model.num_classes = 2;
  c.model.in_channels = c.model.in_height = 1;
  c.model.in_width = 8;
  c.model.mlp_hidden = std::move(hidden);
  c.data.synthetic = {1000, 500, 2, 1, 1, 8, margin};
  c.data.seed = 4;
  c.epochs = epochs;
  c.batch_size = 50;
  c.optimizer.milestones.clear();
  const DataBundle data = load_data(c.data);
  Model m = train_model(c, data).model;
  if (train_acc) {
    const auto all = BatchLoader(data.train, {500}).all();
    *train_acc = evaluate_accuracy(m, all);
  }
  return evaluate_accuracy(m, test_batches(c, data));
}

}  // namespace

TEST_CASE("mnist idx files") {
  const fs::path d = scratch("mnist");
  write(d / "img", idx_images(3));
  write(d / "lab", idx_labels({0, 9, 4}));
  const Dataset ds = read_mnist(d / "img", d / "lab");
  CHECK(ds.size() == 3);
  CHECK(ds.channels == 1);
  CHECK(ds.height == 28);
  CHECK(ds.width == 28);
  CHECK(ds.labels == std::vector<int>{0, 9, 4});
  CHECK(ds.images[255] == 1.0f);

  write(d / "bad_magic", idx_images(3, 0x801));
  CHECK(kind_of([&] { read_mnist(d / "bad_magic", d / "lab"); }) == DataError::Kind::kBadMagic);
  Bytes cut = idx_images(3);
  cut.resize(cut.size() - 10);
  write(d / "cut", cut);
  CHECK(kind_of([&] { read_mnist(d / "cut", d / "lab"); }) == DataError::Kind::kTruncated);
  write(d / "lab10", idx_labels({0, 10, 4}));
  CHECK(kind_of([&] { read_mnist(d / "img", d / "lab10"); }) == DataError::Kind::kLabelOutOfRange);
  write(d / "lab2", idx_labels({0, 1}));
  CHECK(kind_of([&] { read_mnist(d / "img", d / "lab2"); }) == DataError::Kind::kBadFormat);
  CHECK(kind_of([&] { read_mnist(d / "nope", d / "lab"); }) == DataError::Kind::kMissingFile);
}

TEST_CASE("cifar-10 binary files") {
  const fs::path d = scratch("cifar");
  write(d / "a.bin", cifar_records(2));
  write(d / "b.bin", cifar_records(3));
  const std::vector<fs::path> files = {d / "a.bin", d / "b.bin"};
  const Dataset ds = read_cifar10(files);
  CHECK(ds.size() == 5);
  CHECK(ds.sample_size() == 3072);
  CHECK(ds.labels[0] == 3);
  CHECK(ds.labels[3] == 1);
  CHECK(ds.images[3072 + 1] == 2.0f / 255.0f);

  Bytes cut = cifar_records(2);
  cut.pop_back();
  write(d / "cut.bin", cut);
  const fs::path c = d / "cut.bin";
  CHECK(kind_of([&] { read_cifar10(std::span<const fs::path>(&c, 1)); }) == DataError::Kind::kTruncated);
  write(d / "lab.bin", cifar_records(2, 11));
  const fs::path l = d / "lab.bin";
  CHECK(kind_of([&] { read_cifar10(std::span<const fs::path>(&l, 1)); }) == DataError::Kind::kLabelOutOfRange);
}

TEST_CASE("cifar directory layout through load_data") {
  const fs::path root = scratch("cifar_root");
  const fs::path dir = root / "cifar-10-batches-bin";
  fs::create_directories(dir);
  for (int i = 1; i <= 5; ++i) write(dir / ("data_batch_" + std::to_string(i) + ".bin"), cifar_records(4));
  write(dir / "test_batch.bin", cifar_records(3));
  DatasetHandle h;
  h.source = DataSource::kCifar10;
  h.root = root;
  h.calibration_size = 5;
  const DataBundle b = load_data(h);
  CHECK(b.train.size() == 20);
  CHECK(b.test.size() == 3);
  CHECK(b.calibration.size() == 5);
  CHECK(h.mean.size() == 3);

  DatasetHandle missing;
  missing.source = DataSource::kCifar10;
  missing.root = root / "elsewhere";
  CHECK(kind_of([&] { load_data(missing); }) == DataError::Kind::kMissingFile);
}

TEST_CASE("subsets are exact and stable") {
  const Dataset big = indexed(50000);
  const Dataset a = subset(big, 0.1, 7), b = subset(big, 0.1, 7), c = subset(big, 0.1, 8);
  CHECK(a.size() == 5000);
  CHECK(a.images == b.images);
  CHECK(a.images != c.images);
  CHECK(std::is_sorted(a.images.begin(), a.images.end()));
  CHECK(subset(big, 1.0, 7).images == big.images);
  CHECK_THROWS_AS(subset(big, 0.0, 7), ConfigError);
  CHECK_THROWS_AS(subset(big, 1.5, 7), ConfigError);
}

TEST_CASE("synthetic data is byte-stable") {
  for (const SyntheticSpec spec : {SyntheticSpec{}, SyntheticSpec{64, 10, 3, 3, 8, 8, 1.0}}) {
    const Dataset a = synth_classification(spec, 3), b = synth_classification(spec, 3);
    const Dataset c = synth_classification(spec, 4);
    REQUIRE(a.images.size() == b.images.size());
    CHECK(std::memcmp(a.images.data(), b.images.data(), a.images.size() * sizeof(float)) == 0);
    CHECK(a.labels == b.labels);
    CHECK(a.images != c.images);
    std::set<int> seen(a.labels.begin(), a.labels.end());
    CHECK(seen.size() == spec.classes);
  }
  CHECK_THROWS_AS(synth_classification({10, 5, 1}, 0), ConfigError);
}

TEST_CASE("separable blobs are learned, zero margin is chance") {
  double train_acc = 0.0;
  // means 8*sqrt(2) apart under unit noise: overlap ~1e-8
  fit_accuracy(8.0, {16}, 20, &train_acc);
  CHECK(train_acc == 1.0);
  const double chance = fit_accuracy(0.0, {}, 10, nullptr);
  MESSAGE("zero-margin test accuracy " << chance);
  CHECK(std::fabs(chance - 0.5) < 0.08);
}

TEST_CASE("normalization uses train statistics") {
  DatasetHandle h;
  h.synthetic = {200, 100, 2, 3, 4, 4, 2.0};
  h.calibration_size = 16;
  const DataBundle b = load_data(h);
  std::vector<float> mean, sd;
  compute_normalization(b.train, mean, sd);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(mean[c] == doctest::Approx(0.0).scale(1.0).epsilon(1e-5));
    CHECK(sd[c] == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("loader order and augmentation") {
  const Dataset d = synth_classification({40, 0, 2, 3, 8, 8, 1.0}, 1);
  const BatchLoader plain(d, {16});
  CHECK(plain.num_batches() == 3);
  const auto order = plain.order(0);
  CHECK(std::is_sorted(order.begin(), order.end()));
  CHECK(BatchLoader(d, {16, false, false, true}).num_batches() == 2);

  const BatchLoader shuf(d, {16, true, true, false, 5});
  CHECK(shuf.order(1) == shuf.order(1));
  CHECK(shuf.order(1) != shuf.order(2));
  const auto a = shuf.all(1), b = shuf.all(1);
  REQUIRE(a.size() == 3);
  CHECK(std::equal(a[0].images.data().begin(), a[0].images.data().end(), b[0].images.data().begin()));
  CHECK(a.back().size() == 8);

  // the augmented sample is a shifted/flipped copy of its source: the
  // in-bounds values all come from the original
  const std::size_t s = d.sample_size();
  std::vector<float> out(s);
  augment_sample(std::span<const float>(d.images.data(), s), out, 3, 8, 8, 5, 1, 0);
  std::multiset<float> src(d.images.begin(), d.images.begin() + static_cast<std::ptrdiff_t>(s));
  for (const float v : out)
    if (v != 0.0f) CHECK(src.count(v) > 0);
}

TEST_CASE("test batches are never augmented and calibration is disjoint from test") {
  ExperimentConfig c;
  c.model.num_classes = 2;
  c.model.in_height = c.model.in_width = 8;
  c.data.synthetic = {120, 60, 2, 3, 8, 8, 1.0};
  c.data.calibration_size = 32;
  c.batch_size = 16;
  c.calibration_batches = 2;
  const DataBundle data = load_data(c.data);
  const auto test = test_batches(c, data);
  std::size_t at = 0;
  for (const auto& b : test)
    for (const float v : b.images.data()) CHECK(v == data.test.images[at++]);
  CHECK(at == data.test.images.size());

  const std::size_t s = data.test.sample_size();
  std::set<std::vector<float>> test_samples;
  for (std::size_t i = 0; i < data.test.size(); ++i)
    test_samples.emplace(data.test.images.begin() + static_cast<std::ptrdiff_t>(i * s),
                         data.test.images.begin() + static_cast<std::ptrdiff_t>((i + 1) * s));
  for (std::size_t i = 0; i < data.calibration.size(); ++i) {
    const std::vector<float> x(data.calibration.images.begin() + static_cast<std::ptrdiff_t>(i * s),
                               data.calibration.images.begin() + static_cast<std::ptrdiff_t>((i + 1) * s));
    CHECK(test_samples.count(x) == 0);
  }
  CHECK(calibration_batches(c, data).size() == 2);
}
