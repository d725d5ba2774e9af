#include <doctest.h>

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "tabor/dataset.hpp"
#include "tabor/png_io.hpp"
#include "support.hpp"

using tabor::IoCode;
using tabor::IoError;
using tabor::LabeledDataset;
using tabor::SampleRole;
using testutil::TempDir;

namespace {

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v));
  b.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void append_crc(std::vector<uint8_t>& b) {
  put_u32(b, static_cast<uint32_t>(::crc32(0L, b.data(), static_cast<uInt>(b.size()))));
}

void refresh_crc(std::vector<uint8_t>& b) {
  uint32_t crc = static_cast<uint32_t>(::crc32(0L, b.data(), static_cast<uInt>(b.size() - 4)));
  for (int i = 0; i < 4; ++i) b[b.size() - 4 + static_cast<size_t>(i)] =
      static_cast<uint8_t>(crc >> (8 * i));
}

IoCode read_code(const std::string& path) {
  try {
    tabor::read_dataset(path);
  } catch (const IoError& e) {
    return e.code();
  }
  FAIL("expected the read to throw");
  return IoCode::Malformed;
}

// Two-sample 2x2 single-channel pack used by the corruption tests; all pixel
// values sit exactly on the 8-bit grid so the float round-trip is lossless.
LabeledDataset tiny_pack() {
  LabeledDataset data;
  data.height = 2;
  data.width = 2;
  data.channels = 1;
  data.num_classes = 2;
  data.push({0.0f, 128.0f / 255.0f, 1.0f, 64.0f / 255.0f}, 0, SampleRole::TrainClean);
  data.push({10.0f / 255.0f, 20.0f / 255.0f, 30.0f / 255.0f, 40.0f / 255.0f}, 1,
            SampleRole::TrainPoisoned, 0);
  return data;
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("the synthetic corpus has the documented shape") {
    LabeledDataset data = tabor::generate_synthetic(5, 200, 16, 7);
    CHECK(data.size() == 1000);
    CHECK(data.height == 16);
    CHECK(data.width == 16);
    CHECK(data.channels == 3);
    CHECK(data.num_classes == 5);
    CHECK(data.train_indices().size() == 800);
    CHECK(data.test_indices().size() == 200);
    for (int cls = 0; cls < 5; ++cls) {
      for (int s = 0; s < 200; ++s) {
        size_t i = static_cast<size_t>(cls * 200 + s);
        CHECK(data.labels[i] == cls);
        CHECK(data.roles[i] == (s < 160 ? SampleRole::TrainClean : SampleRole::Test));
        CHECK(data.spec_ids[i] == tabor::kNoTriggerSpec);
      }
    }
    // Pixels are quantized onto the 8-bit grid.
    for (float v : data.images[123]) {
      float scaled = v * 255.0f;
      CHECK(std::abs(scaled - std::round(scaled)) < 1e-3f);
    }
    // Classes are visually distinct: mean images of two classes differ.
    auto mean_of = [&](int cls) {
      std::vector<double> m(data.images[0].size(), 0.0);
      for (int s = 0; s < 160; ++s)
        for (size_t j = 0; j < m.size(); ++j)
          m[j] += data.images[static_cast<size_t>(cls * 200 + s)][j];
      for (double& x : m) x /= 160.0;
      return m;
    };
    auto m0 = mean_of(0), m1 = mean_of(1);
    double diff = 0;
    for (size_t j = 0; j < m0.size(); ++j) diff += std::abs(m0[j] - m1[j]);
    CHECK(diff / static_cast<double>(m0.size()) > 0.02);
  }

  TEST_CASE("the synthetic corpus is seed-determined") {
    LabeledDataset a = tabor::generate_synthetic(3, 20, 12, 5);
    LabeledDataset b = tabor::generate_synthetic(3, 20, 12, 5);
    LabeledDataset c = tabor::generate_synthetic(3, 20, 12, 6);
    REQUIRE(a.size() == b.size());
    bool same = true, differs = false;
    for (size_t i = 0; i < a.size(); ++i) {
      same = same && a.images[i] == b.images[i];
      differs = differs || a.images[i] != c.images[i];
    }
    CHECK(same);
    CHECK(differs);
    CHECK_THROWS_WITH_AS(tabor::generate_synthetic(9, 20, 12, 5), doctest::Contains("[2,8]"),
                         tabor::Error);
    CHECK_THROWS_WITH_AS(tabor::generate_synthetic(3, 20, 8, 5), doctest::Contains("at least 12"),
                         tabor::Error);
  }

  TEST_CASE("validation catches inconsistent samples") {
    LabeledDataset data = tiny_pack();
    CHECK_NOTHROW(data.validate());

    LabeledDataset bad = data;
    bad.labels[1] = 2;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("label 2 out of range"), tabor::Error);

    bad = data;
    bad.images[0][2] = 1.5f;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("outside [0,1]"), tabor::Error);

    bad = data;
    bad.images[0].pop_back();
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("wrong pixel count"), tabor::Error);

    bad = data;
    bad.spec_ids[1] = tabor::kNoTriggerSpec;  // poisoned sample without a trigger id
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("disagree"), tabor::Error);

    bad = data;
    bad.spec_ids[0] = 3;  // clean sample with a trigger id
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("disagree"), tabor::Error);

    bad = data;
    bad.roles.pop_back();
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("out of step"), tabor::Error);
  }

  TEST_CASE("packs round-trip exactly") {
    TempDir dir("pack");
    LabeledDataset data = tiny_pack();
    tabor::write_dataset(data, dir.file("a.tbrd"));
    tabor::write_dataset(data, dir.file("b.tbrd"));
    CHECK(testutil::slurp(dir.file("a.tbrd")) == testutil::slurp(dir.file("b.tbrd")));

    LabeledDataset back = tabor::read_dataset(dir.file("a.tbrd"));
    CHECK(back.height == 2);
    CHECK(back.width == 2);
    CHECK(back.channels == 1);
    CHECK(back.num_classes == 2);
    REQUIRE(back.size() == data.size());
    for (size_t i = 0; i < data.size(); ++i) {
      CHECK(back.images[i] == data.images[i]);
      CHECK(back.labels[i] == data.labels[i]);
      CHECK(back.roles[i] == data.roles[i]);
      CHECK(back.spec_ids[i] == data.spec_ids[i]);
    }
  }

  TEST_CASE("a hand-assembled pack parses") {
    TempDir dir("hand");
    std::vector<uint8_t> bytes;
    bytes.insert(bytes.end(), {'T', 'B', 'R', 'D'});
    put_u32(bytes, 1);  // version
    put_u32(bytes, 2);  // sample count
    put_u16(bytes, 2);  // height
    put_u16(bytes, 2);  // width
    bytes.push_back(1);  // channels
    put_u16(bytes, 2);  // classes
    bytes.insert(bytes.end(), {0, 128, 255, 64});  // sample 0 pixels
    put_u16(bytes, 0);                             // label
    bytes.push_back(0);                            // clean training role
    bytes.push_back(255);                          // no trigger spec
    bytes.insert(bytes.end(), {10, 20, 30, 40});   // sample 1 pixels
    put_u16(bytes, 1);
    bytes.push_back(1);  // poisoned training role
    bytes.push_back(0);  // trigger spec 0
    append_crc(bytes);
    testutil::spit(dir.file("hand.tbrd"), bytes);

    LabeledDataset data = tabor::read_dataset(dir.file("hand.tbrd"));
    REQUIRE(data.size() == 2);
    CHECK(data.images[0] ==
          std::vector<float>{0.0f, 128.0f / 255.0f, 1.0f, 64.0f / 255.0f});
    CHECK(data.labels == std::vector<int>{0, 1});
    CHECK(data.roles[0] == SampleRole::TrainClean);
    CHECK(data.roles[1] == SampleRole::TrainPoisoned);
    CHECK(data.spec_ids == std::vector<int>{tabor::kNoTriggerSpec, 0});
    // And it is byte-identical to what the writer produces.
    tabor::write_dataset(data, dir.file("rewrite.tbrd"));
    CHECK(testutil::slurp(dir.file("rewrite.tbrd")) == bytes);
  }

  TEST_CASE("every corruption maps to its error code") {
    TempDir dir("corrupt");
    tabor::write_dataset(tiny_pack(), dir.file("good.tbrd"));
    const std::vector<uint8_t> bytes = testutil::slurp(dir.file("good.tbrd"));

    auto variant = [&](const std::string& name, auto&& mutate) {
      std::vector<uint8_t> copy = bytes;
      mutate(copy);
      const std::string path = dir.file(name);
      testutil::spit(path, copy);
      return path;
    };

    CHECK(read_code(variant("magic", [](auto& b) { b[0] = 'Z'; })) == IoCode::BadMagic);
    CHECK(read_code(variant("version", [](auto& b) { b[4] = 7; })) == IoCode::VersionMismatch);
    CHECK(read_code(variant("short", [](auto& b) { b.resize(b.size() - 5); })) ==
          IoCode::Truncated);
    CHECK(read_code(variant("pixel", [](auto& b) { b[20] ^= 0xff; })) == IoCode::CrcMismatch);
    CHECK(read_code(variant("trailing", [](auto& b) { b.push_back(0); })) == IoCode::Malformed);
    // Bad role byte with a freshly correct checksum: sample 0's role lives at
    // offset 19 (header) + 4 (pixels) + 2 (label) = 25.
    CHECK(read_code(variant("role", [](auto& b) {
            b[25] = 3;
            refresh_crc(b);
          })) == IoCode::Malformed);
    CHECK(read_code(variant("label", [](auto& b) {
            b[23] = 9;
            refresh_crc(b);
          })) == IoCode::Malformed);
    // Clean sample annotated with a trigger id trips the consistency check.
    CHECK(read_code(variant("spec", [](auto& b) {
            b[26] = 5;
            refresh_crc(b);
          })) == IoCode::Malformed);
  }

  TEST_CASE("directory ingestion follows lexicographic class order") {
    TempDir dir("ingest");
    namespace fs = std::filesystem;
    auto save = [&](const std::string& rel, uint8_t base) {
      tabor::PngImage img;
      img.height = 2;
      img.width = 2;
      img.channels = 1;
      img.pixels = {base, 0, 255, static_cast<uint8_t>(base + 1)};
      fs::create_directories(fs::path(dir.file(rel)).parent_path());
      tabor::write_png(dir.file(rel), img);
    };
    save("corpus/a/0.png", 10);
    save("corpus/a/1.png", 20);
    save("corpus/a/2.png", 30);
    save("corpus/b/0.png", 40);
    save("corpus/b/1.png", 50);
    save("corpus/b/2.png", 60);
    testutil::spit(dir.file("corpus/a/notes.txt"), {'h', 'i'});

    LabeledDataset data = tabor::ingest_directory(dir.file("corpus"));
    CHECK(data.num_classes == 2);
    REQUIRE(data.size() == 6);
    CHECK(tabor::labels_of(data, {0, 1, 2, 3, 4, 5}) == std::vector<int>{0, 0, 0, 1, 1, 1});
    for (size_t i = 0; i < 6; ++i)
      CHECK(data.roles[i] == (i % 3 == 2 ? SampleRole::Test : SampleRole::TrainClean));
    CHECK(data.images[0][0] == doctest::Approx(10.0 / 255.0));
    CHECK(data.images[0][2] == 1.0f);
    CHECK(data.images[3][0] == doctest::Approx(40.0 / 255.0));

    CHECK_THROWS_WITH_AS(tabor::ingest_directory(dir.file("corpus/a")),
                         doctest::Contains("at least two class"), tabor::Error);

    // A geometry misfit is reported by file name.
    tabor::PngImage odd;
    odd.height = 3;
    odd.width = 3;
    odd.channels = 1;
    odd.pixels.assign(9, 5);
    tabor::write_png(dir.file("corpus/b/3.png"), odd);
    CHECK_THROWS_WITH_AS(tabor::ingest_directory(dir.file("corpus")),
                         doctest::Contains("3.png"), tabor::Error);
  }
}
