#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "srfrn/data.hpp"

using namespace srfrn;

namespace {

Plane random_plane(std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 255.0);
  Plane p(w, h);
  for (double& v : p.samples) v = d(rng);
  return p;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "srfrn_test_data" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<PatchPair> numbered_pairs(std::size_t n) {
  std::vector<PatchPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    pairs.push_back({Plane(4, 4, static_cast<double>(i)), Plane(4, 4, static_cast<double>(i)), {"img", i, 0, 0}});
  }
  return pairs;
}

}  // namespace

TEST(Augment, EightVariantsPerImage) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < 291; ++i) total += augment_x8(Plane(3, 2)).size();
  EXPECT_EQ(total, 2328u);
}

TEST(Augment, SymmetricConstantGivesIdenticalPlanes) {
  const auto v = augment_x8(Plane(6, 6, 42.0));
  for (const auto& p : v) EXPECT_EQ(p, v[0]);
}

TEST(Augment, VariantsOfAsymmetricPlaneAreDistinct) {
  const auto v = augment_x8(random_plane(5, 5, 1));
  for (int a = 0; a < 8; ++a)
    for (int b = a + 1; b < 8; ++b) EXPECT_NE(v[a], v[b]) << a << " vs " << b;
}

TEST(Augment, InverseVariantRestores) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_plane(1 + rng() % 9, 1 + rng() % 9, 10 + trial);
    for (int v = 0; v < 8; ++v) EXPECT_EQ(dihedral(dihedral(p, v), inverse_variant(v)), p) << "variant " << v;
  }
}

TEST(Augment, QuarterTurnByHand) {
  // 2x3 plane, rows (0 1 2) (3 4 5); one CCW turn gives rows (2 5) (1 4) (0 3).
  Plane p(3, 2);
  for (std::size_t i = 0; i < 6; ++i) p.samples[i] = static_cast<double>(i);
  const auto r = dihedral(p, 1);
  ASSERT_EQ(r.width, 2u);
  ASSERT_EQ(r.height, 3u);
  EXPECT_EQ(r.samples, (std::vector<double>{2, 5, 1, 4, 0, 3}));
  const auto f = dihedral(p, 4);
  EXPECT_EQ(f.samples, (std::vector<double>{2, 1, 0, 5, 4, 3}));
}

TEST(Augment, BadVariant) { EXPECT_THROW(dihedral(Plane(2, 2), 8), Error); }

TEST(Patches, GridCount) {
  EXPECT_EQ(patch_count(320, 480, 48, 48), 60u);
  EXPECT_EQ(extract_patches(Plane(480, 320), 48, 48).size(), 60u);
}

TEST(Patches, WholeImageIsOnePatch) {
  EXPECT_EQ(extract_patches(Plane(48, 48), 48, 48).size(), 1u);
  EXPECT_EQ(extract_patches(Plane(5, 5), 5, 1).size(), 1u);
}

TEST(Patches, CountMatchesFormulaOverRandomSizes) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const std::size_t m = 1 + rng() % 10, w = m + rng() % 30, h = m + rng() % 30, s = 1 + rng() % 12;
    const auto patches = extract_patches(Plane(w, h), m, s);
    EXPECT_EQ(patches.size(), ((h - m) / s + 1) * ((w - m) / s + 1));
    for (const auto& p : patches) {
      EXPECT_EQ(p.x % s, 0u);
      EXPECT_EQ(p.y % s, 0u);
      EXPECT_LE(p.x + m, w);
      EXPECT_LE(p.y + m, h);
    }
  }
}

TEST(Patches, CoordinatesReproducePatch) {
  const auto img = random_plane(50, 40, 4);
  for (const auto& p : extract_patches(img, 16, 12)) EXPECT_EQ(p.plane, crop(img, p.x, p.y, 16, 16));
}

TEST(Patches, TooLarge) {
  EXPECT_THROW(extract_patches(Plane(10, 20), 11, 1), Error);
  EXPECT_THROW(extract_patches(Plane(10, 20), 4, 0), Error);
}

TEST(MakePair, ConstantPatchUnchanged) {
  const auto pair = make_pair(Plane(12, 12, 99.0), 3);
  for (std::size_t i = 0; i < pair.ilr.size(); ++i) EXPECT_NEAR(pair.ilr.samples[i], pair.hr.samples[i], 1e-9);
}

TEST(MakePair, ScaleOneIsIdentity) {
  const auto hr = random_plane(10, 10, 5);
  const auto pair = make_pair(hr, 1);
  for (std::size_t i = 0; i < hr.size(); ++i) EXPECT_NEAR(pair.ilr.samples[i], hr.samples[i], 1e-9);
}

TEST(MakePair, ShapesAtScaleFour) {
  const auto hr = random_plane(48, 48, 6);
  const auto pair = make_pair(hr, 4);
  EXPECT_EQ(pair.ilr.width, 48u);
  EXPECT_EQ(pair.ilr.height, 48u);
  EXPECT_EQ(pair.hr, hr);
  const auto lr = bicubic_resize(hr, 12, 12);
  EXPECT_EQ(pair.ilr, bicubic_resize(lr, 48, 48));
}

TEST(MakePair, IndivisibleRejected) { EXPECT_THROW(make_pair(Plane(10, 10), 3), Error); }

TEST(MakePair, Deterministic) {
  const auto hr = random_plane(24, 24, 7);
  EXPECT_EQ(make_pair(hr, 2).ilr, make_pair(hr, 2).ilr);
}

TEST(PairsFromPlane, StoredSourceReproducesPatch) {
  const auto img = random_plane(30, 20, 8);
  PairOptions opt;
  opt.patch = 12;
  opt.stride = 6;
  opt.scale = 3;
  const auto pairs = pairs_from_plane(img, "im", opt);
  std::size_t expected = 0;
  for (int v = 0; v < 8; ++v) {
    const auto aug = dihedral(img, v);
    expected += patch_count(aug.height, aug.width, 12, 6);
  }
  ASSERT_EQ(pairs.size(), expected);
  for (const auto& p : pairs) {
    EXPECT_EQ(p.source.image_id, "im");
    EXPECT_EQ(p.hr, crop(dihedral(img, p.source.variant), p.source.x, p.source.y, 12, 12));
    EXPECT_EQ(p.ilr.width, p.hr.width);
    EXPECT_EQ(p.ilr.height, p.hr.height);
  }
}

TEST(PairsFromPlane, NoAugmentation) {
  PairOptions opt;
  opt.augment = false;
  const auto pairs = pairs_from_plane(Plane(96, 48), "x", opt);
  EXPECT_EQ(pairs.size(), 2u);
  for (const auto& p : pairs) EXPECT_EQ(p.source.variant, 0);
}

TEST(Batches, SizesForHundredPairs) {
  const auto pairs = numbered_pairs(100);
  BatchIterator<float> it(pairs, 24, 1);
  ASSERT_EQ(it.batch_count(), 5u);
  const auto ord = it.order(0);
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < it.batch_count(); ++i) sizes.push_back(it.batch(ord, i).ilr.shape().batch);
  EXPECT_EQ(sizes, (std::vector<std::size_t>{24, 24, 24, 24, 4}));
}

TEST(Batches, OrderIsSeededPermutation) {
  const auto pairs = numbered_pairs(57);
  BatchIterator<float> a(pairs, 8, 9), b(pairs, 8, 9), c(pairs, 8, 10);
  EXPECT_EQ(a.order(3), b.order(3));
  EXPECT_NE(a.order(3), c.order(3));
  EXPECT_NE(a.order(0), a.order(1));
  for (std::size_t e = 0; e < 4; ++e) {
    auto ord = a.order(e);
    std::sort(ord.begin(), ord.end());
    for (std::size_t i = 0; i < ord.size(); ++i) EXPECT_EQ(ord[i], i);
  }
}

TEST(Batches, EveryPairOncePerEpoch) {
  const auto pairs = numbered_pairs(30);
  BatchIterator<double> it(pairs, 7, 11);
  const auto ord = it.order(2);
  std::vector<double> seen;
  for (std::size_t i = 0; i < it.batch_count(); ++i) {
    const auto b = it.batch(ord, i);
    for (std::size_t k = 0; k < b.hr.shape().batch; ++k) seen.push_back(b.hr(k, 0, 0, 0) * 255.0);
  }
  std::sort(seen.begin(), seen.end());
  ASSERT_EQ(seen.size(), 30u);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_NEAR(seen[i], static_cast<double>(i), 1e-9);
}

TEST(Batches, EmptyRejected) {
  const std::vector<PatchPair> none;
  EXPECT_THROW(BatchIterator<float>(none, 24, 1), Error);
  const auto pairs = numbered_pairs(2);
  EXPECT_THROW(BatchIterator<float>(pairs, 0, 1), Error);
}

TEST(Batches, NetworkRangeRoundTrip) {
  const auto p = random_plane(9, 7, 12);
  const auto back = unpack_plane(pack_planes<float>({&p}));
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(back.samples[i], p.samples[i], 1e-4);
  const auto back64 = unpack_plane(pack_planes<double>({&p}));
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(back64.samples[i], p.samples[i], 1e-6);
}

TEST(Batches, MixedSizesRejected) {
  const Plane a(4, 4), b(4, 5);
  EXPECT_THROW(pack_planes<float>({&a, &b}), Error);
}

TEST(PairCache, FileNameRoundTrip) {
  const PatchSource s{"my_image_01", 96, 144, 5};
  EXPECT_EQ(pair_filename(s), "my_image_01_5_96_144.pair");
  EXPECT_EQ(parse_pair_filename("my_image_01_5_96_144"), s);
  EXPECT_THROW(parse_pair_filename("nounderscores"), Error);
  EXPECT_THROW(parse_pair_filename("a_b_c_d"), Error);
}

TEST(PairCache, WriteReadRoundTrip) {
  const auto dir = fresh_dir("roundtrip");
  const auto pair = make_pair(random_plane(12, 12, 13), 2, {"cat", 24, 36, 3});
  write_pair(pair, dir);
  const auto back = read_pair(dir / "cat_3_24_36.pair");
  EXPECT_EQ(back.source, pair.source);
  for (std::size_t i = 0; i < pair.hr.size(); ++i) {
    EXPECT_EQ(back.hr.samples[i], static_cast<double>(static_cast<float>(pair.hr.samples[i])));
    EXPECT_EQ(back.ilr.samples[i], static_cast<double>(static_cast<float>(pair.ilr.samples[i])));
  }
  EXPECT_EQ(std::filesystem::file_size(dir / "cat_3_24_36.pair"), 4u + 2u * 144u * 4u);
}

TEST(PairCache, DirectoryIsSortedByName) {
  const auto dir = fresh_dir("sorted");
  for (std::size_t y : {48, 0, 96}) write_pair(make_pair(Plane(8, 8, y), 2, {"b", y, 0, 0}), dir);
  write_pair(make_pair(Plane(8, 8), 2, {"a", 0, 0, 0}), dir);
  const auto pairs = read_pair_dir(dir);
  ASSERT_EQ(pairs.size(), 4u);
  std::vector<std::string> names;
  for (const auto& p : pairs) names.push_back(pair_filename(p.source));
  EXPECT_TRUE(std::is_sorted(names.begin(), names.end()));
}

TEST(PairCache, TruncatedAndTrailingRejected) {
  const auto dir = fresh_dir("corrupt");
  write_pair(make_pair(Plane(8, 8, 1.0), 2, {"z", 0, 0, 0}), dir);
  const auto file = dir / "z_0_0_0.pair";
  const auto size = std::filesystem::file_size(file);
  std::filesystem::resize_file(file, size - 3);
  EXPECT_THROW(read_pair(file), Error);
  std::filesystem::resize_file(file, size + 4);
  EXPECT_THROW(read_pair(file), Error);
}

TEST(PairCache, MissingDirectory) {
  try {
    read_pair_dir(std::filesystem::temp_directory_path() / "srfrn_test_data" / "nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::io);
  }
}

TEST(Manifest, ParsesRecords) {
  std::istringstream is("# comment\na.png\ttrain\tbsd\n\n/abs/b.png\tval\tyang\r\nc.png\ttest\tset5\n");
  const auto m = parse_manifest(is, "/data", 3);
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.scale, 3u);
  EXPECT_EQ(m.entries[0].path, std::filesystem::path("/data/a.png"));
  EXPECT_EQ(m.entries[1].path, std::filesystem::path("/abs/b.png"));
  EXPECT_EQ(m.entries[1].dataset, "yang");
  EXPECT_EQ(m.select(Split::train).size(), 1u);
  EXPECT_EQ(m.select(Split::val).size(), 1u);
  EXPECT_EQ(m.select(Split::test).front().dataset, "set5");
}

TEST(Manifest, Errors) {
  const auto fails = [](const std::string& text) {
    std::istringstream is(text);
    try {
      parse_manifest(is, "/d", 2);
    } catch (const Error& e) {
      return e.code() == ErrorCode::format;
    }
    return false;
  };
  EXPECT_TRUE(fails("a.png\ttrain\n"));
  EXPECT_TRUE(fails("a.png\ttraining\tx\n"));
  EXPECT_TRUE(fails("a.png\ttrain\tx\na.png\tval\tx\n"));
  EXPECT_TRUE(fails("a.png\ttrain\tx\textra\n"));
}

TEST(Manifest, WriteLoadRoundTrip) {
  const auto dir = fresh_dir("manifest");
  std::istringstream is("a.png\ttrain\tbsd\nb.png\tval\tbsd\n");
  const auto m = parse_manifest(is, dir, 2);
  write_manifest(m, dir / "m.tsv");
  const auto back = load_manifest(dir / "m.tsv", 2);
  ASSERT_EQ(back.entries.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.entries[i].path, m.entries[i].path);
    EXPECT_EQ(back.entries[i].split, m.entries[i].split);
  }
  EXPECT_THROW(load_manifest(dir / "absent.tsv", 2), Error);
}

TEST(Manifest, DefaultValidationSplit) {
  Manifest m;
  for (int i = 0; i < 40; ++i) m.entries.push_back({"img" + std::to_string(i) + ".png", Split::train, "bsd"});
  const auto a = with_default_val_split(m, 0.05, 3);
  EXPECT_EQ(a.select(Split::val).size(), 2u);
  EXPECT_EQ(a.select(Split::train).size(), 38u);
  const auto b = with_default_val_split(m, 0.05, 3);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(a.entries[i].split, b.entries[i].split);
  EXPECT_EQ(with_default_val_split(a, 0.5, 4).select(Split::val).size(), 2u);
}
