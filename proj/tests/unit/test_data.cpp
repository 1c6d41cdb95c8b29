#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <doctest.h>

#include "data.hpp"
#include "errors.hpp"
#include "oracles.hpp"

using namespace dormant;
namespace fs = std::filesystem;

namespace {

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

struct IdxFiles {
  fs::path images, labels;
};

IdxFiles write_idx(const std::string& stem, std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                   std::uint32_t label_count, std::uint32_t image_magic = 0x803, std::size_t drop = 0) {
  const fs::path dir = fs::temp_directory_path() / "dormant_data_tests";
  fs::create_directories(dir);
  IdxFiles f{dir / (stem + "-images"), dir / (stem + "-labels")};
  {
    std::ofstream out(f.images, std::ios::binary);
    put_be32(out, image_magic);
    put_be32(out, n);
    put_be32(out, rows);
    put_be32(out, cols);
    std::vector<unsigned char> px(n * rows * cols - drop);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<unsigned char>(i % 2 == 0 ? 255 : 0);
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  }
  {
    std::ofstream out(f.labels, std::ios::binary);
    put_be32(out, 0x801);
    put_be32(out, label_count);
    for (std::uint32_t i = 0; i < label_count; ++i) out.put(static_cast<char>(i % 10));
  }
  return f;
}

Dataset random_dataset(int n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Dataset ds;
  ds.images = oracle::random_tensor({n, 1, 10, 10}, gen, 0, 1);
  for (int i = 0; i < n; ++i) ds.labels.push_back(i % 10);
  return ds;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("load_idx scales bytes and checks headers") {
    const auto ok = write_idx("ok", 3, 4, 5, 3);
    const Dataset ds = load_idx(ok.images, ok.labels);
    CHECK(ds.size() == 3);
    CHECK(ds.images.shape == Shape{3, 1, 4, 5});
    CHECK(ds.images[0] == 1.0f);
    CHECK(ds.images[1] == 0.0f);
    CHECK(ds.labels == std::vector<int>{0, 1, 2});

    const auto magic = write_idx("magic", 3, 4, 5, 3, 0x802);
    try {
      load_idx(magic.images, magic.labels);
      FAIL("expected format error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Format);
    }
    const auto truncated = write_idx("trunc", 3, 4, 5, 3, 0x803, 7);
    try {
      load_idx(truncated.images, truncated.labels);
      FAIL("expected format error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Format);
    }
    const auto mismatch = write_idx("count", 3, 4, 5, 4);
    try {
      load_idx(mismatch.images, mismatch.labels);
      FAIL("expected consistency error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Consistency);
    }
  }

  TEST_CASE("synthetic data is deterministic and sized") {
    const auto a = make_synthetic(4, 50, 12, 3);
    CHECK(a.size() == 200);
    CHECK(a.num_classes == 4);
    const auto b = make_synthetic(4, 50, 12, 3);
    CHECK(bitwise_equal(a.images, b.images));
    CHECK(a.labels == b.labels);
    for (float v : a.images.data) CHECK((v >= 0.0f && v <= 1.0f));
    CHECK_THROWS_AS(make_synthetic(4, 10, 7, 1), Error);
  }

  TEST_CASE("paste_trigger counts and idempotence") {
    const Tensor blank({1, 28, 28});
    const TriggerSpec trig;
    const Tensor out = paste_trigger(blank, trig);
    CHECK(std::count(out.data.begin(), out.data.end(), 1.0f) == 9);
    CHECK(std::count(out.data.begin(), out.data.end(), 0.0f) == 775);
    CHECK(bitwise_equal(paste_trigger(out, trig), out));
    for (float v : blank.data) CHECK(v == 0.0f);

    TriggerSpec off = trig;
    off.col = 26;
    CHECK_THROWS_AS(paste_trigger(blank, off), Error);
  }

  TEST_CASE("paste_trigger pixel accounting") {
    std::mt19937_64 gen(4);
    TriggerSpec trig{2, 3, 3, 4, 0.75f, 5};
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor img = oracle::random_tensor({3, 9, 9}, gen, 0, 1);
      const Tensor out = paste_trigger(img, trig);
      double expected = 0.0, diff = 0.0;
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 9; ++i)
          for (int j = 0; j < 9; ++j) {
            const std::size_t k = static_cast<std::size_t>((c * 9 + i) * 9 + j);
            const bool inside = i >= 2 && i < 5 && j >= 3 && j < 7;
            if (inside) expected += trig.value - static_cast<double>(img[k]);
            else CHECK(out[k] == img[k]);
            diff += static_cast<double>(out[k]) - img[k];
          }
      CHECK(std::fabs(diff - expected) < 1e-5);
    }
  }

  TEST_CASE("trojan sets select floor(ratio N), keep labels and are seeded") {
    const Dataset ds = random_dataset(95, 1);
    const TriggerSpec trig;
    const auto t = make_trojan_set(ds, trig, 0.1, 7);
    CHECK(t.size() == 9);
    CHECK(std::is_sorted(t.source_indices.begin(), t.source_indices.end()));
    const Shape sample = ds.sample_shape();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::size_t src = t.source_indices[i];
      CHECK(t.original_labels()[i] == ds.labels[src]);
      for (std::size_t p = 0; p < 100; ++p) {
        const bool inside = (p / 10) < 3 && (p % 10) < 3;
        const float v = t.images.images[i * 100 + p];
        if (inside) CHECK(v == 1.0f);
        else CHECK(v == ds.images[src * 100 + p]);
      }
    }
    CHECK(make_trojan_set(ds, trig, 0.1, 7).source_indices == t.source_indices);
    CHECK(make_trojan_set(ds, trig, 0.1, 8).source_indices != t.source_indices);
    CHECK(make_trojan_set(ds, trig, 1.0, 7).size() == 95);
    CHECK_THROWS_AS(make_trojan_set(ds, trig, 0.001, 7), Error);
    CHECK_THROWS_AS(make_trojan_set(ds, trig, 0.0, 7), Error);
    (void)sample;
  }

  TEST_CASE("triggered test set excludes the target class") {
    const Dataset ds = random_dataset(40, 2);
    const auto t = make_triggered_test_set(ds, TriggerSpec{});
    CHECK(t.size() == 36);
    for (int l : t.original_labels()) CHECK(l != 5);
  }

  TEST_CASE("batches cover the dataset in seeded order") {
    const Dataset ds = random_dataset(10, 3);
    const auto b = batches(ds, 4, 11);
    REQUIRE(b.size() == 3);
    CHECK(b[0].labels.size() == 4);
    CHECK(b[1].labels.size() == 4);
    CHECK(b[2].labels.size() == 2);
    CHECK(batch_indices(10, 4, 11) == batch_indices(10, 4, 11));
    CHECK(batch_indices(10, 4, 11) != batch_indices(10, 4, 12));
    std::vector<int> seen;
    for (const auto& x : b) seen.insert(seen.end(), x.labels.begin(), x.labels.end());
    std::vector<int> all = ds.labels;
    std::sort(seen.begin(), seen.end());
    std::sort(all.begin(), all.end());
    CHECK(seen == all);
  }
}
