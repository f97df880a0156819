#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "remn/dataset.hpp"
#include "remn/errors.hpp"
#include "remn/image.hpp"
#include "test_util.hpp"

using namespace remn;
using namespace remn::testing;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

Image8 solid(std::size_t w, std::size_t h, std::size_t channels, std::uint8_t value) {
  return Image8{w, h, channels, std::vector<std::uint8_t>(w * h * channels, value)};
}

Sample labeled(EmotionClass c, float v = 0.0f) { return Sample{Tensor({3, 2, 2}, v), c, Origin::Real, ""}; }

}  // namespace

TEST(Emotion, CodesAndNamesAreABijection) {
  std::set<std::string> names;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    const auto c = class_from_code(long(i));
    ASSERT_TRUE(c);
    EXPECT_EQ(class_code(*c), int(i));
    EXPECT_EQ(class_from_name(class_name(*c)), c);
    names.insert(std::string(class_name(*c)));
  }
  EXPECT_EQ(names.size(), 7u);
  EXPECT_EQ(class_name(EmotionClass::Angry), "Angry");
  EXPECT_EQ(class_name(*class_from_code(4)), "Sad");
  EXPECT_EQ(class_name(*class_from_code(6)), "Neutral");
  EXPECT_EQ(class_from_name("surprise"), EmotionClass::Surprise);
  EXPECT_EQ(class_from_name("HAPPY"), EmotionClass::Happy);
  EXPECT_FALSE(class_from_name("contempt"));
  EXPECT_FALSE(class_from_code(7));
  EXPECT_FALSE(class_from_code(-1));
}

TEST(Pnm, EncodeDecodeRoundTrip) {
  Image8 rgb = solid(5, 3, 3, 0);
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = std::uint8_t(i * 7);
  EXPECT_EQ(decode_pnm(encode_pnm(rgb), "mem"), rgb);
  const Image8 gray = solid(4, 4, 1, 200);
  const std::string bytes = encode_pnm(gray);
  EXPECT_EQ(bytes.substr(0, 2), "P5");
  EXPECT_EQ(decode_pnm(bytes, "mem"), gray);
}

TEST(Pnm, HeaderCommentsAndMaxval) {
  const std::string bytes = std::string("P5\n# made by hand\n2 1\n# another\n15\n") + char(0) + char(15);
  const Image8 img = decode_pnm(bytes, "mem");
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{0, 255}));
}

TEST(Pnm, RejectsMalformedFiles) {
  EXPECT_NE(error_of([] { decode_pnm("P3\n1 1\n255\n0 0 0", "a.ppm"); }).find("a.ppm"), std::string::npos);
  EXPECT_NE(error_of([] { decode_pnm("P6\n2 2\n255\nabc", "b.ppm"); }).find("truncated"), std::string::npos);
  EXPECT_NE(error_of([] { decode_pnm("P5\n2 2\n65535\n", "c.pgm"); }).find("8-bit"), std::string::npos);
  EXPECT_NE(error_of([] { decode_pnm("P5\n0 2\n255\n", "d.pgm"); }).find("zero"), std::string::npos);
  EXPECT_NE(error_of([] { decode_pnm("P5\nx", "e.pgm"); }).find("width"), std::string::npos);
}

TEST(Resize, ConstantImageStaysConstant) {
  const Tensor img({2, 5, 3}, 0.37f);
  for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 1}, {7, 2}, {64, 64}, {5, 3}}) {
    const Tensor out = resize_bilinear(img, h, w);
    EXPECT_EQ(out.shape(), (Shape{2, h, w}));
    for (float v : out.data()) EXPECT_FLOAT_EQ(v, 0.37f);
  }
}

TEST(Resize, IdentityAtSameSize) {
  const Tensor img = random_tensor(3, {3, 6, 4});
  EXPECT_EQ(resize_bilinear(img, 6, 4), img);
}

TEST(Resize, UpscaleMatchesDirectFormula) {
  const Tensor img(Shape{1, 2, 2}, std::vector<float>{0, 1, 2, 3});
  const Tensor out = resize_bilinear(img, 4, 4);
  // Independent evaluation: source coordinate s = (i + 0.5) * 2/4 - 0.5,
  // clamped to [0, 1], then the bilinear blend of the four neighbours.
  auto coord = [](int i) { return std::clamp((i + 0.5) * 0.5 - 0.5, 0.0, 1.0); };
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double y = coord(i), x = coord(j);
      const double v = (1 - y) * ((1 - x) * 0 + x * 1) + y * ((1 - x) * 2 + x * 3);
      EXPECT_NEAR(out[i * 4 + j], v, 1e-6) << i << "," << j;
    }
  // spot values of the same grid
  EXPECT_NEAR(out[0], 0.0, 1e-6);
  EXPECT_NEAR(out[1], 0.25, 1e-6);
  EXPECT_NEAR(out[5], 0.75, 1e-6);
  EXPECT_NEAR(out[15], 3.0, 1e-6);
}

TEST(Resize, RejectsZeroTarget) { EXPECT_THROW(resize_bilinear(Tensor({1, 2, 2}), 0, 3), ShapeError); }

TEST(Normalization, InvertibleOnByteLattice) {
  const Normalization norm;
  for (int p = 0; p < 256; ++p) {
    const float v = norm.apply(std::uint8_t(p));
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
    EXPECT_NEAR(norm.invert(v), p / 255.0, 1e-6);
    EXPECT_EQ(std::lround(norm.invert(v) * 255.0), p);
  }
}

TEST(ImageToTensor, GrayIsReplicatedAndResized) {
  const Tensor t = image_to_tensor(solid(100, 100, 1, 128), ImageOptions{});
  ASSERT_EQ(t.shape(), (Shape{3, 64, 64}));
  const float expected = Normalization{}.apply(128);
  for (float v : t.data()) EXPECT_NEAR(v, expected, 1e-6);
}

TEST(Fer2013, HappyZeroRowBecomesConstantSample) {
  const auto dir = scratch_dir("fer_basic");
  write_text(dir / "a.csv", "emotion,pixels,Usage\r\n3," + fer_pixels(2304, 0) + ",Training\r\n");
  const auto splits = load_fer2013_csv(dir / "a.csv", SplitSpec::fer2013());
  ASSERT_EQ(splits.size(), 1u);
  const LabeledDataset& train = splits.at(Split::Train);
  ASSERT_EQ(train.size(), 1u);
  const Sample& s = train.samples[0];
  EXPECT_EQ(s.label, EmotionClass::Happy);
  EXPECT_EQ(s.origin, Origin::Real);
  EXPECT_EQ(s.image.shape(), (Shape{3, 64, 64}));
  for (float v : s.image.data()) EXPECT_EQ(v, -1.0f);
}

TEST(Fer2013, RowsMapToSplitsAndLoadDeterministically) {
  const auto dir = scratch_dir("fer_splits");
  std::string csv = "emotion,pixels,Usage\n";
  const std::vector<std::string> tags{"Training", "PublicTest", "PrivateTest"};
  for (int i = 0; i < 21; ++i) csv += std::to_string(i % 7) + "," + fer_ramp(2304, i + 1, i) + "," + tags[i % 3] + "\n";
  write_text(dir / "f.csv", csv);
  const auto a = load_fer2013_csv(dir / "f.csv", SplitSpec::fer2013());
  const auto b = load_fer2013_csv(dir / "f.csv", SplitSpec::fer2013());
  std::size_t total = 0;
  for (const auto& [split, ds] : a) {
    total += ds.size();
    EXPECT_EQ(ds.split, split);
    ASSERT_EQ(b.at(split).size(), ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      EXPECT_EQ(ds.samples[i].image, b.at(split).samples[i].image);
      EXPECT_EQ(ds.samples[i].label, b.at(split).samples[i].label);
    }
  }
  EXPECT_EQ(total, 21u);
  EXPECT_EQ(a.at(Split::Val).size(), 7u);

  const auto summary = summarize_fer2013_csv(dir / "f.csv", SplitSpec::fer2013());
  for (const auto& [split, ds] : a) EXPECT_EQ(summary.at(split), ds.histogram());
}

TEST(Fer2013, MalformedRowsCiteTheLine) {
  const auto dir = scratch_dir("fer_bad");
  const std::string header = "emotion,pixels,Usage\n";
  const std::string good = "0," + fer_pixels(2304, 1) + ",Training\n";
  struct Case {
    std::string row, needle;
  };
  const std::vector<Case> cases{
      {"2," + fer_pixels(2303, 1) + ",Training\n", "expected 2304 pixels, got 2303"},
      {"2," + fer_pixels(2305, 1) + ",Training\n", "more than 2304"},
      {"2," + fer_pixels(2303, 1) + " x,Training\n", "not an integer"},
      {"2," + fer_pixels(2303, 1) + " 256,Training\n", "outside 0-255"},
      {"9," + fer_pixels(2304, 1) + ",Training\n", "unknown emotion code 9"},
      {"a," + fer_pixels(2304, 1) + ",Training\n", "not an integer"},
      {"2," + fer_pixels(2304, 1) + ",Validation\n", "unknown Usage tag"},
      {"2," + fer_pixels(2304, 1) + "\n", "3 comma-separated"},
  };
  for (const auto& c : cases) {
    write_text(dir / "bad.csv", header + good + c.row);
    const std::string msg = error_of([&] { load_fer2013_csv(dir / "bad.csv", SplitSpec::fer2013()); });
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find(c.needle), std::string::npos) << msg;
    EXPECT_EQ(error_of([&] { summarize_fer2013_csv(dir / "bad.csv", SplitSpec::fer2013()); }), msg);
  }
  write_text(dir / "hdr.csv", "label,pixels,Usage\n" + good);
  EXPECT_NE(error_of([&] { load_fer2013_csv(dir / "hdr.csv", SplitSpec::fer2013()); }).find("header"),
            std::string::npos);
}

TEST(ImageFolder, LoadsClassesInPathOrder) {
  const auto root = scratch_dir("folder") / "rafdb";
  for (const auto& [dir, count] : std::vector<std::pair<std::string, int>>{{"happy", 3}, {"Fear", 2}, {"SAD", 0}}) {
    std::filesystem::create_directories(root / dir);
    for (int i = 0; i < count; ++i) {
      write_text(root / dir / ("img" + std::to_string(count - i) + ".pgm"), encode_pnm(solid(100, 100, 1, 10 * i)));
    }
  }
  write_text(root / "notes.txt", "ignored");
  const LabeledDataset ds = load_image_folder(root);
  EXPECT_EQ(ds.name, "rafdb");
  EXPECT_EQ(ds.histogram(), (Histogram{0, 0, 2, 3, 0, 0, 0}));
  EXPECT_EQ(count_image_folder(root), ds.histogram());
  ASSERT_EQ(ds.size(), 5u);
  EXPECT_EQ(ds.samples[0].label, EmotionClass::Fear);
  EXPECT_TRUE(ds.samples[0].source_id.ends_with("Fear/img1.pgm")) << ds.samples[0].source_id;
  // img1.pgm in happy/ was written last, with value 20
  EXPECT_NEAR(ds.samples[2].image[0], Normalization{}.apply(20), 1e-6);
}

TEST(ImageFolder, SolidGrayIsPreserved) {
  const auto root = scratch_dir("folder_gray");
  std::filesystem::create_directories(root / "Neutral");
  write_text(root / "Neutral" / "g.ppm", encode_pnm(solid(100, 100, 3, 77)));
  const LabeledDataset ds = load_image_folder(root);
  ASSERT_EQ(ds.size(), 1u);
  for (float v : ds.samples[0].image.data()) EXPECT_NEAR(v, Normalization{}.apply(77), 1e-6);
}

TEST(ImageFolder, ErrorsListThePath) {
  const auto root = scratch_dir("folder_bad");
  std::filesystem::create_directories(root / "Contempt");
  EXPECT_NE(error_of([&] { load_image_folder(root); }).find("Contempt"), std::string::npos);
  std::filesystem::remove_all(root / "Contempt");
  std::filesystem::create_directories(root / "Angry");
  write_text(root / "Angry" / "x.png", "\x89PNG");
  EXPECT_NE(error_of([&] { load_image_folder(root); }).find("x.png"), std::string::npos);
}

TEST(Dataset, HistogramAndMerge) {
  LabeledDataset empty;
  EXPECT_EQ(empty.histogram(), Histogram{});
  LabeledDataset a, b;
  for (int i = 0; i < 10; ++i) a.samples.push_back(labeled(*class_from_code(i % 7)));
  for (int i = 0; i < 4; ++i) b.samples.push_back(labeled(EmotionClass::Disgust));
  b.samples.push_back(labeled(EmotionClass::Fear));
  const Histogram ha = a.histogram(), hb = b.histogram();
  const Histogram merged = merge(a, b).histogram();
  for (std::size_t c = 0; c < kNumClasses; ++c) EXPECT_EQ(merged[c], ha[c] + hb[c]);
  EXPECT_EQ(merged[1], ha[1] + 4);
  EXPECT_EQ(histogram_total(merged), 15u);
}

TEST(Dataset, HoldoutIsSeededAndDisjoint) {
  LabeledDataset ds;
  for (int i = 0; i < 50; ++i) {
    ds.samples.push_back(labeled(*class_from_code(i % 7), float(i)));
    ds.samples.back().source_id = std::to_string(i);
  }
  const HoldoutSplit a = holdout_split(ds, 0.1, 4), b = holdout_split(ds, 0.1, 4), c = holdout_split(ds, 0.1, 5);
  EXPECT_EQ(a.val.size(), 5u);
  EXPECT_EQ(a.train.size(), 45u);
  EXPECT_EQ(a.val.split, Split::Val);
  std::vector<std::string> ids_a, ids_b, ids_c;
  for (const auto& s : a.val.samples) ids_a.push_back(s.source_id);
  for (const auto& s : b.val.samples) ids_b.push_back(s.source_id);
  for (const auto& s : c.val.samples) ids_c.push_back(s.source_id);
  EXPECT_EQ(ids_a, ids_b);
  EXPECT_NE(ids_a, ids_c);
  std::set<std::string> all(ids_a.begin(), ids_a.end());
  for (const auto& s : a.train.samples) EXPECT_TRUE(all.insert(s.source_id).second);
  EXPECT_EQ(all.size(), 50u);
}

TEST(BatchIterator, SizesCoverageAndDeterminism) {
  LabeledDataset ds;
  for (int i = 0; i < 35; ++i) ds.samples.push_back(labeled(*class_from_code((i * 3) % 7), float(i)));
  BatchIterator it(ds, 16, true, 42), again(ds, 16, true, 42);
  EXPECT_EQ(it.batches_per_epoch(), 3u);
  for (std::size_t epoch = 0; epoch < 3; ++epoch) {
    it.start_epoch(epoch);
    again.start_epoch(epoch);
    std::vector<std::size_t> sizes, seen;
    Histogram labels{};
    Batch batch, other;
    while (it.next(batch)) {
      ASSERT_TRUE(again.next(other));
      EXPECT_EQ(batch.indices, other.indices);
      EXPECT_EQ(batch.images, other.images);
      sizes.push_back(batch.labels.size());
      EXPECT_EQ(batch.images.shape(), (Shape{batch.labels.size(), 3, 2, 2}));
      for (std::size_t i = 0; i < batch.labels.size(); ++i) {
        ++labels[std::size_t(batch.labels[i])];
        EXPECT_EQ(batch.images[i * 12], float(batch.indices[i]));
      }
      seen.insert(seen.end(), batch.indices.begin(), batch.indices.end());
    }
    EXPECT_FALSE(again.next(other));
    EXPECT_EQ(sizes, (std::vector<std::size_t>{16, 16, 3}));
    EXPECT_EQ(labels, ds.histogram());
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < 35; ++i) EXPECT_EQ(seen[i], i);
  }
  BatchIterator e0(ds, 16, true, 42), e1(ds, 16, true, 42);
  e1.start_epoch(1);
  EXPECT_NE(e0.order(), e1.order());
  BatchIterator plain(ds, 10, false, 42);
  EXPECT_EQ(plain.order()[0], 0u);
  EXPECT_EQ(plain.order()[34], 34u);
}

TEST(BatchIterator, RejectsEmptyDatasetAndZeroBatch) {
  LabeledDataset empty;
  EXPECT_THROW(BatchIterator(empty, 4, true, 1), DataError);
  LabeledDataset one;
  one.samples.push_back(labeled(EmotionClass::Sad));
  EXPECT_THROW(BatchIterator(one, 0, true, 1), UsageError);
}
