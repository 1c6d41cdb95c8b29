#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "errors.hpp"
#include "rng.hpp"

namespace dormant {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  const std::size_t per = sample_numel();
  Shape shape = images.shape;
  shape[0] = static_cast<int>(indices.size());
  Dataset out;
  out.num_classes = num_classes;
  out.images.shape = shape;
  out.images.data.resize(indices.size() * per);
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) fail(ErrorKind::Index, "subset index " + std::to_string(src) + " out of range");
    std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(src * per), per,
                out.images.data.begin() + static_cast<std::ptrdiff_t>(i * per));
    out.labels.push_back(labels[src]);
  }
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(idx);
}

void check_dataset(const Dataset& ds) {
  if (ds.size() == 0) fail(ErrorKind::Parameter, "dataset is empty");
  if (ds.images.rank() != 4 || static_cast<std::size_t>(ds.images.dim(0)) != ds.size()) {
    fail(ErrorKind::Consistency, "dataset images " + shape_string(ds.images.shape) + " vs " +
                                     std::to_string(ds.size()) + " labels");
  }
  for (int l : ds.labels) {
    if (l < 0 || l >= ds.num_classes) fail(ErrorKind::Index, "label " + std::to_string(l) + " out of range");
  }
  for (float v : ds.images.data) {
    if (!(v >= 0.0f && v <= 1.0f)) fail(ErrorKind::Consistency, "pixel value outside [0,1]");
  }
}

void check_trigger(const TriggerSpec& t, const Shape& s, int num_classes) {
  if (s.size() != 3) fail(ErrorKind::Bounds, "trigger needs a C×H×W image, got " + shape_string(s));
  if (t.height < 1 || t.width < 1 || t.row < 0 || t.col < 0 || t.row + t.height > s[1] ||
      t.col + t.width > s[2]) {
    fail(ErrorKind::Bounds, "trigger patch " + std::to_string(t.height) + "x" + std::to_string(t.width) +
                                " at (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                                ") does not fit image " + shape_string(s));
  }
  if (!(t.value >= 0.0f && t.value <= 1.0f)) fail(ErrorKind::Parameter, "trigger value outside [0,1]");
  if (t.target_class < 0 || t.target_class >= num_classes) {
    fail(ErrorKind::Parameter, "target class " + std::to_string(t.target_class) + " out of range");
  }
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (img.size() < 16) fail(ErrorKind::Format, images_path.string() + ": truncated header");
  if (be32(img, 0) != 0x00000803) fail(ErrorKind::Format, images_path.string() + ": bad magic (want 0x00000803)");
  if (lab.size() < 8) fail(ErrorKind::Format, labels_path.string() + ": truncated header");
  if (be32(lab, 0) != 0x00000801) fail(ErrorKind::Format, labels_path.string() + ": bad magic (want 0x00000801)");

  const std::uint32_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  const std::uint32_t nl = be32(lab, 4);
  if (n == 0 || rows == 0 || cols == 0) fail(ErrorKind::Format, images_path.string() + ": empty image set");
  const std::size_t payload = static_cast<std::size_t>(n) * rows * cols;
  if (img.size() != 16 + payload) {
    fail(ErrorKind::Format, images_path.string() + ": expected " + std::to_string(16 + payload) +
                                " bytes, found " + std::to_string(img.size()));
  }
  if (lab.size() != 8 + static_cast<std::size_t>(nl)) {
    fail(ErrorKind::Format, labels_path.string() + ": expected " + std::to_string(8 + nl) +
                                " bytes, found " + std::to_string(lab.size()));
  }
  if (n != nl) {
    fail(ErrorKind::Consistency, std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  }

  Dataset ds;
  ds.num_classes = 10;
  ds.images = Tensor({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
  for (std::size_t i = 0; i < payload; ++i) ds.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    if (ds.labels[i] >= ds.num_classes) {
      fail(ErrorKind::Format, labels_path.string() + ": label " + std::to_string(ds.labels[i]) +
                                  " at index " + std::to_string(i) + " exceeds 9");
    }
  }
  return ds;
}

Dataset make_synthetic(int num_classes, int samples_per_class, int image_size, std::uint64_t seed) {
  if (image_size < 8) fail(ErrorKind::Spec, "synthetic image size must be at least 8");
  if (num_classes < 2) fail(ErrorKind::Spec, "synthetic data needs at least 2 classes");
  if (samples_per_class < 1) fail(ErrorKind::Spec, "samples_per_class must be positive");
  // Class c lights bar c: rows 4.. for the first (S−4) classes, then columns 4...
  const int bars = image_size - 4;
  if (num_classes > 2 * bars) {
    fail(ErrorKind::Spec, "image size " + std::to_string(image_size) + " supports at most " +
                              std::to_string(2 * bars) + " classes");
  }
  const int s = image_size;
  const int n = num_classes * samples_per_class;
  Dataset ds;
  ds.num_classes = num_classes;
  ds.images = Tensor({n, 1, s, s});
  ds.labels.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int label = i % num_classes;
    ds.labels[static_cast<std::size_t>(i)] = label;
    float* img = ds.images.data.data() + static_cast<std::size_t>(i) * s * s;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        float v = rng.uniform(0.0f, 0.3f);
        const bool on_bar = label < bars ? (y == 4 + label && x >= 4) : (x == 4 + label - bars && y >= 4);
        if (on_bar) v += 0.6f;
        if (y < 4 && x < 4) v = 0.0f;
        img[y * s + x] = std::min(1.0f, v);
      }
  }
  return ds;
}

void paste_trigger_inplace(std::span<float> sample, const Shape& s, const TriggerSpec& t) {
  const int c = s[0], h = s[1], w = s[2];
  for (int ci = 0; ci < c; ++ci)
    for (int y = t.row; y < t.row + t.height; ++y)
      for (int x = t.col; x < t.col + t.width; ++x)
        sample[(static_cast<std::size_t>(ci) * h + y) * w + x] = t.value;
}

Tensor paste_trigger(const Tensor& image, const TriggerSpec& trig) {
  if (image.rank() != 3) fail(ErrorKind::Bounds, "paste_trigger expects C×H×W, got " + shape_string(image.shape));
  if (trig.height < 1 || trig.width < 1 || trig.row < 0 || trig.col < 0 ||
      trig.row + trig.height > image.dim(1) || trig.col + trig.width > image.dim(2)) {
    fail(ErrorKind::Bounds, "trigger patch does not fit image " + shape_string(image.shape));
  }
  Tensor out = image;
  paste_trigger_inplace(out.data, out.shape, trig);
  return out;
}

TrojanDataset make_trojan_set(const Dataset& clean, const TriggerSpec& trig, double ratio,
                              std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) fail(ErrorKind::Parameter, "trojan ratio must lie in (0, 1]");
  check_trigger(trig, clean.sample_shape(), clean.num_classes);
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(clean.size())));
  if (count == 0) fail(ErrorKind::Parameter, "trojan ratio selects no samples");
  Rng rng(seed);
  auto perm = rng.permutation(clean.size());
  perm.resize(count);
  std::sort(perm.begin(), perm.end());
  TrojanDataset out;
  out.images = clean.subset(perm);
  out.source_indices = std::move(perm);
  const Shape s = clean.sample_shape();
  const std::size_t per = clean.sample_numel();
  for (std::size_t i = 0; i < out.size(); ++i) {
    paste_trigger_inplace(std::span<float>(out.images.images.data).subspan(i * per, per), s, trig);
  }
  return out;
}

TrojanDataset make_triggered_test_set(const Dataset& test, const TriggerSpec& trig) {
  check_trigger(trig, test.sample_shape(), test.num_classes);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] != trig.target_class) keep.push_back(i);
  }
  if (keep.empty()) fail(ErrorKind::Parameter, "no test samples outside the target class");
  TrojanDataset out;
  out.images = test.subset(keep);
  out.source_indices = std::move(keep);
  const Shape s = test.sample_shape();
  const std::size_t per = test.sample_numel();
  for (std::size_t i = 0; i < out.size(); ++i) {
    paste_trigger_inplace(std::span<float>(out.images.images.data).subspan(i * per, per), s, trig);
  }
  return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t shuffle_seed) {
  if (batch_size == 0) fail(ErrorKind::Parameter, "batch size must be positive");
  Rng rng(shuffle_seed);
  const auto perm = rng.permutation(n);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                     perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset sub = ds.subset(indices);
  return Batch{std::move(sub.images), std::move(sub.labels),
               std::vector<std::size_t>(indices.begin(), indices.end())};
}

std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(ds.size(), batch_size, shuffle_seed)) out.push_back(gather(ds, idx));
  return out;
}

}  // namespace dormant
